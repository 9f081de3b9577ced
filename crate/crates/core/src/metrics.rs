//! Evaluation metrics: MSE, MSLE, MAD, log-MAPE, R², linear weighted kappa
//! over equal-frequency bins, reliability binning with a range-normalized
//! expected calibration error, and multi-seed mean ± std aggregation.

use crate::{Error, Result};

pub const LOG_MAPE_EPS: f64 = 1e-8;
pub const KAPPA_BINS: usize = 10;
pub const ECE_BINS: usize = 10;

/// Paired true/predicted length-of-stay values in days.
#[derive(Debug, Clone)]
pub struct PredictionSet {
    y_true: Vec<f64>,
    y_pred: Vec<f64>,
}

impl PredictionSet {
    pub fn new(y_true: Vec<f64>, y_pred: Vec<f64>) -> Result<Self> {
        if y_true.len() != y_pred.len() || y_true.is_empty() {
            return Err(Error::Data(format!(
                "prediction set needs equal non-empty lengths, got {} vs {}",
                y_true.len(),
                y_pred.len()
            )));
        }
        for v in y_true.iter().chain(&y_pred) {
            if !v.is_finite() || *v < 0.0 {
                return Err(Error::Data(format!("prediction-set value {v} invalid")));
            }
        }
        Ok(Self { y_true, y_pred })
    }

    pub fn len(&self) -> usize {
        self.y_true.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y_true.is_empty()
    }

    pub fn y_true(&self) -> &[f64] {
        &self.y_true
    }

    pub fn y_pred(&self) -> &[f64] {
        &self.y_pred
    }
}

pub const METRIC_NAMES: [&str; 7] =
    ["mse", "msle", "mad", "log_mape_pct", "r2", "kappa", "ece"];

/// The six headline metrics plus calibration error for one evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub n: usize,
    pub mse: f64,
    pub msle: f64,
    pub mad: f64,
    pub log_mape_pct: f64,
    pub r2: f64,
    pub kappa: f64,
    pub ece: f64,
    /// Internal equal-frequency kappa bin edges, emitted for reproducibility.
    pub kappa_bin_edges: Vec<f64>,
}

impl MetricReport {
    pub fn values(&self) -> [f64; 7] {
        [self.mse, self.msle, self.mad, self.log_mape_pct, self.r2, self.kappa, self.ece]
    }

    pub fn value(&self, name: &str) -> Result<f64> {
        METRIC_NAMES
            .iter()
            .position(|&m| m == name)
            .map(|i| self.values()[i])
            .ok_or_else(|| Error::Config(format!("unknown metric '{name}'")))
    }

    pub fn rmse(&self) -> f64 {
        self.mse.sqrt()
    }

    /// Flat `key=value` serialization; floats use the shortest
    /// round-trippable representation, so identical reports serialize
    /// byte-identically.
    pub fn to_kv(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("n={}\n", self.n));
        for (name, v) in METRIC_NAMES.iter().zip(self.values()) {
            out.push_str(&format!("{name}={v}\n"));
        }
        let edges: Vec<String> = self.kappa_bin_edges.iter().map(f64::to_string).collect();
        out.push_str(&format!("kappa_bin_edges={}\n", edges.join(",")));
        out
    }
}

/// Compute every metric for one prediction set.
pub fn full_report(p: &PredictionSet) -> MetricReport {
    let (mse, msle, mad, log_mape_pct, r2) = regression_metrics(p, LOG_MAPE_EPS);
    let (kappa, edges) = weighted_kappa(p, KAPPA_BINS);
    let rel = reliability_ece(p, ECE_BINS);
    MetricReport {
        n: p.len(),
        mse,
        msle,
        mad,
        log_mape_pct,
        r2,
        kappa,
        ece: rel.ece,
        kappa_bin_edges: edges,
    }
}

/// MSE, MSLE, MAD, log-MAPE (percent) and R².
/// A constant truth vector makes R² undefined: NaN sentinel plus a warning.
pub fn regression_metrics(p: &PredictionSet, eps: f64) -> (f64, f64, f64, f64, f64) {
    let n = p.len() as f64;
    let mut mse = 0.0;
    let mut msle = 0.0;
    let mut mad = 0.0;
    let mut log_mape = 0.0;
    for (&y, &yh) in p.y_true.iter().zip(&p.y_pred) {
        let r = y - yh;
        mse += r * r;
        let lr = y.ln_1p() - yh.ln_1p();
        msle += lr * lr;
        mad += r.abs();
        log_mape += lr.abs() / y.ln_1p().max(eps);
    }
    mse /= n;
    msle /= n;
    mad /= n;
    let log_mape_pct = 100.0 * log_mape / n;

    let mean = p.y_true.iter().sum::<f64>() / n;
    let ss_tot: f64 = p.y_true.iter().map(|y| (y - mean) * (y - mean)).sum();
    let r2 = if ss_tot == 0.0 {
        log::warn!("constant y_true: R^2 undefined, reporting NaN");
        f64::NAN
    } else {
        let ss_res: f64 =
            p.y_true.iter().zip(&p.y_pred).map(|(y, yh)| (y - yh) * (y - yh)).sum();
        1.0 - ss_res / ss_tot
    };
    (mse, msle, mad, log_mape_pct, r2)
}

/// Equal-frequency bin edges over `values`: internal cut points at the
/// `j/k` quantile elements, deduplicated.
pub fn equal_frequency_edges(values: &[f64], k: usize) -> Vec<f64> {
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = sorted.len();
    let mut edges = Vec::new();
    for j in 1..k {
        let idx = (n * j) / k;
        if idx < n {
            edges.push(sorted[idx]);
        }
    }
    edges.dedup();
    edges
}

fn bin_of(v: f64, edges: &[f64]) -> usize {
    edges.iter().take_while(|&&e| v >= e).count()
}

/// Linear weighted kappa over `k` equal-frequency bins of `y_true`.
/// `w_ij = 1 - |i-j|/(k-1)`. Returns NaN when binning degenerates to a
/// single bin. Also returns the bin edges used.
pub fn weighted_kappa(p: &PredictionSet, k: usize) -> (f64, Vec<f64>) {
    let edges = equal_frequency_edges(&p.y_true, k);
    if edges.is_empty() {
        log::warn!("kappa undefined: all samples fall in a single bin");
        return (f64::NAN, edges);
    }
    let bins = edges.len() + 1;
    let n = p.len() as f64;
    let mut confusion = vec![0.0; bins * bins];
    for (&y, &yh) in p.y_true.iter().zip(&p.y_pred) {
        confusion[bin_of(y, &edges) * bins + bin_of(yh, &edges)] += 1.0 / n;
    }
    let denom = (bins.max(2) - 1) as f64;
    let w = |i: usize, j: usize| 1.0 - (i as f64 - j as f64).abs() / denom;
    let mut row = vec![0.0; bins];
    let mut col = vec![0.0; bins];
    for i in 0..bins {
        for j in 0..bins {
            row[i] += confusion[i * bins + j];
            col[j] += confusion[i * bins + j];
        }
    }
    let mut po = 0.0;
    let mut pe = 0.0;
    for i in 0..bins {
        for j in 0..bins {
            po += w(i, j) * confusion[i * bins + j];
            pe += w(i, j) * row[i] * col[j];
        }
    }
    if (1.0 - pe).abs() < 1e-15 {
        log::warn!("kappa undefined: chance agreement is 1");
        return (f64::NAN, edges);
    }
    ((po - pe) / (1.0 - pe), edges)
}

/// Reliability diagram data over equal-frequency prediction bins.
#[derive(Debug, Clone)]
pub struct Reliability {
    pub mean_pred: Vec<f64>,
    pub mean_true: Vec<f64>,
    pub counts: Vec<usize>,
    /// Sum of per-bin |mean_pred - mean_true| gaps weighted by bin mass,
    /// normalized by the y_true range.
    pub ece: f64,
}

pub fn reliability_ece(p: &PredictionSet, n_bins: usize) -> Reliability {
    let n = p.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        p.y_pred[a].partial_cmp(&p.y_pred[b]).unwrap().then(a.cmp(&b))
    });
    let bins = n_bins.min(n).max(1);
    let mut mean_pred = Vec::with_capacity(bins);
    let mut mean_true = Vec::with_capacity(bins);
    let mut counts = Vec::with_capacity(bins);
    let mut weighted_gap = 0.0;
    for b in 0..bins {
        let lo = b * n / bins;
        let hi = (b + 1) * n / bins;
        if hi <= lo {
            mean_pred.push(f64::NAN);
            mean_true.push(f64::NAN);
            counts.push(0);
            continue;
        }
        let idx = &order[lo..hi];
        let mp = idx.iter().map(|&i| p.y_pred[i]).sum::<f64>() / idx.len() as f64;
        let mt = idx.iter().map(|&i| p.y_true[i]).sum::<f64>() / idx.len() as f64;
        weighted_gap += (idx.len() as f64 / n as f64) * (mp - mt).abs();
        mean_pred.push(mp);
        mean_true.push(mt);
        counts.push(idx.len());
    }
    let lo = p.y_true.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = p.y_true.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let range = hi - lo;
    let ece = if range > 0.0 {
        weighted_gap / range
    } else if weighted_gap == 0.0 {
        0.0
    } else {
        f64::NAN
    };
    Reliability { mean_pred, mean_true, counts, ece }
}

/// Per-metric sample mean and sample standard deviation (n-1 denominator;
/// a single report aggregates to std 0).
#[derive(Debug, Clone, PartialEq)]
pub struct MetricAggregate {
    pub n_seeds: usize,
    pub mean: [f64; 7],
    pub std: [f64; 7],
}

impl MetricAggregate {
    pub fn to_kv(&self) -> String {
        let mut out = format!("n_seeds={}\n", self.n_seeds);
        for (i, name) in METRIC_NAMES.iter().enumerate() {
            out.push_str(&format!("{name}.mean={}\n", self.mean[i]));
            out.push_str(&format!("{name}.std={}\n", self.std[i]));
        }
        out
    }
}

pub fn aggregate_seeds(reports: &[MetricReport]) -> Result<MetricAggregate> {
    if reports.is_empty() {
        return Err(Error::Data("aggregate_seeds: no reports".into()));
    }
    let n = reports.len();
    let mut mean = [0.0; 7];
    let mut std = [0.0; 7];
    for r in reports {
        for (acc, v) in mean.iter_mut().zip(r.values()) {
            *acc += v;
        }
    }
    for m in &mut mean {
        *m /= n as f64;
    }
    if n > 1 {
        for r in reports {
            for ((acc, v), m) in std.iter_mut().zip(r.values()).zip(mean) {
                *acc += (v - m) * (v - m);
            }
        }
        for s in &mut std {
            *s = (*s / (n as f64 - 1.0)).sqrt();
        }
    }
    Ok(MetricAggregate { n_seeds: n, mean, std })
}
