//! Cohort data: canonical file formats, patient-wise splitting,
//! forward-fill imputation with a decay channel, and a seeded synthetic
//! generator with a planted outcome signal.

mod impute;
mod io;
mod split;
mod synth;

pub use impute::impute_forward_fill;
pub use io::{read_cohort, write_cohort};
pub use split::{split_indices, split_patients, Split, SplitSpec};
pub use synth::{generate_cohort, generate_cohort_with_latents, Latents, SynthSpec, PHENOTYPES};

use std::collections::BTreeMap;

use crate::{Error, Result};

/// Indices of one named feature group, used by the ablation harness.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FeatureGroup {
    pub ts_channels: Vec<usize>,
    pub static_cols: Vec<usize>,
}

/// One cohort: per-stay hourly time series with an observation mask, a
/// static feature vector, the length-of-stay label in days, plus the
/// diagnosis codes and text embeddings the graph builder consumes.
#[derive(Debug, Clone, PartialEq)]
pub struct CohortTensor {
    pub ids: Vec<u32>,
    pub t_bins: usize,
    pub d_ts: usize,
    pub d_flat: usize,
    pub d_codes: usize,
    pub emb_dim: usize,
    /// `n * t_bins * d_ts`, zero where unobserved.
    pub ts: Vec<f32>,
    /// `n * t_bins`, 1 = observed step.
    pub mask: Vec<u8>,
    /// `n * d_flat`.
    pub statics: Vec<f32>,
    /// Length of stay in days, strictly positive.
    pub labels: Vec<f32>,
    /// Sorted diagnosis code indices per stay.
    pub codes: Vec<Vec<u32>>,
    /// `n * emb_dim` embedding rows.
    pub emb: Vec<f32>,
    /// Named channel/column groups for feature ablations.
    pub groups: BTreeMap<String, FeatureGroup>,
}

impl CohortTensor {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.len();
        let checks = [
            (self.ts.len(), n * self.t_bins * self.d_ts, "ts"),
            (self.mask.len(), n * self.t_bins, "mask"),
            (self.statics.len(), n * self.d_flat, "static"),
            (self.labels.len(), n, "labels"),
            (self.emb.len(), n * self.emb_dim, "emb"),
        ];
        for (got, want, what) in checks {
            if got != want {
                return Err(Error::Data(format!("{what}: {got} values, expected {want}")));
            }
        }
        if self.codes.len() != n {
            return Err(Error::Data(format!("codes: {} rows, expected {n}", self.codes.len())));
        }
        for (i, &y) in self.labels.iter().enumerate() {
            if !y.is_finite() {
                return Err(Error::Data(format!("label {i} is not finite")));
            }
            if y <= 0.0 {
                return Err(Error::Data(format!("label {i} must be > 0 days, got {y}")));
            }
        }
        for (i, row) in self.mask.chunks(self.t_bins).enumerate() {
            if !row.iter().any(|&m| m == 1) {
                return Err(Error::Data(format!("stay {i} has no observed step")));
            }
        }
        for (i, v) in self.ts.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::Data(format!("ts value {i} is not finite")));
            }
        }
        Ok(())
    }

    pub fn diagnosis_matrix(&self) -> Result<crate::graph::DiagnosisMatrix> {
        crate::graph::DiagnosisMatrix::new(self.codes.clone(), self.d_codes)
    }

    pub fn embedding_matrix(&self) -> Result<crate::graph::DenseMatrix> {
        crate::graph::DenseMatrix::new(
            self.len(),
            self.emb_dim,
            self.emb.iter().map(|&v| v as f64).collect(),
        )
    }

    /// Restrict observations to the last `hours` bins: mask and values
    /// before the window start are zeroed, as if never recorded. Stays left
    /// with no observation keep their first in-window step observed (value
    /// zero), so downstream invariants hold.
    pub fn truncate_window(&mut self, hours: usize) {
        if hours >= self.t_bins {
            return;
        }
        let start = self.t_bins - hours;
        let n = self.len();
        for i in 0..n {
            for t in 0..start {
                self.mask[i * self.t_bins + t] = 0;
                let base = (i * self.t_bins + t) * self.d_ts;
                for c in 0..self.d_ts {
                    self.ts[base + c] = 0.0;
                }
            }
            let row = &mut self.mask[i * self.t_bins..(i + 1) * self.t_bins];
            if !row.iter().any(|&m| m == 1) {
                row[start] = 1;
            }
        }
    }

    /// Zero out the time-series channels and static columns of the named
    /// groups. Unknown names error, listing the valid ones.
    pub fn zero_feature_groups(&mut self, names: &[String]) -> Result<()> {
        for name in names {
            if !self.groups.contains_key(name) {
                let valid: Vec<&str> = self.groups.keys().map(String::as_str).collect();
                return Err(Error::Config(format!(
                    "unknown feature group '{name}'; valid groups: {}",
                    valid.join(", ")
                )));
            }
        }
        let n = self.len();
        for name in names {
            let group = self.groups[name].clone();
            for i in 0..n {
                for t in 0..self.t_bins {
                    let base = (i * self.t_bins + t) * self.d_ts;
                    for &c in &group.ts_channels {
                        self.ts[base + c] = 0.0;
                    }
                }
                for &c in &group.static_cols {
                    self.statics[i * self.d_flat + c] = 0.0;
                }
            }
        }
        Ok(())
    }
}
