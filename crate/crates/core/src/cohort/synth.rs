use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::{Error, Result};

use super::{CohortTensor, FeatureGroup};

/// Number of latent phenotype clusters behind codes and embeddings.
pub const PHENOTYPES: usize = 8;

/// Shape parameters for a synthetic cohort.
#[derive(Debug, Clone)]
pub struct SynthSpec {
    pub n_stays: usize,
    pub t_bins: usize,
    pub d_ts: usize,
    pub d_flat: usize,
    pub d_codes: usize,
    pub emb_dim: usize,
    /// Per-step observation probability (step 0 is always observed).
    pub obs_prob: f64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            n_stays: 200,
            t_bins: 48,
            d_ts: 16,
            d_flat: 8,
            d_codes: 64,
            emb_dim: 16,
            obs_prob: 0.85,
        }
    }
}

/// Ground-truth latents, exposed for tests of the planted signal.
#[derive(Debug, Clone)]
pub struct Latents {
    pub severity: Vec<f64>,
    pub static_factor: Vec<f64>,
    pub phenotype: Vec<usize>,
}

// Outcome model: log(y) = B0 + A_SEV*s + A_STATIC*u + phe_eff[p] + NOISE*eps.
// Severity s is visible only in the time series, u only in the static
// vector, and the phenotype only through codes/embeddings (graph) plus a
// weak echo in the physiology channels.
const B0: f64 = 0.9;
const A_SEV: f64 = 0.55;
const A_STATIC: f64 = 0.4;
const LABEL_NOISE: f64 = 0.18;
const AR_RHO: f64 = 0.7;
const VITALS_SEV_LOADING: f64 = 0.8;
const PHYS_SEV_LOADING: f64 = 0.3;
const PHYS_PHE_LOADING: f64 = 0.1;

fn phenotype_effect(p: usize) -> f64 {
    // evenly spread effects in [-0.8, 0.8]
    -0.8 + 1.6 * p as f64 / (PHENOTYPES - 1) as f64
}

pub fn generate_cohort(spec: &SynthSpec, seed: u64) -> Result<CohortTensor> {
    Ok(generate_cohort_with_latents(spec, seed)?.0)
}

pub fn generate_cohort_with_latents(
    spec: &SynthSpec,
    seed: u64,
) -> Result<(CohortTensor, Latents)> {
    if spec.n_stays == 0
        || spec.t_bins == 0
        || spec.d_ts == 0
        || spec.d_flat == 0
        || spec.d_codes == 0
        || spec.emb_dim == 0
    {
        return Err(Error::Config("all synthetic cohort sizes must be >= 1".into()));
    }
    let n = spec.n_stays;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = StandardNormal;
    let draw = |rng: &mut ChaCha8Rng| -> f64 { normal.sample(rng) };

    // phenotype centroids in embedding space, fixed given the seed
    let mut centroid_rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    let centroids: Vec<Vec<f64>> = (0..PHENOTYPES)
        .map(|_| (0..spec.emb_dim).map(|_| 2.0 * draw(&mut centroid_rng)).collect())
        .collect();

    let mut severity = Vec::with_capacity(n);
    let mut static_factor = Vec::with_capacity(n);
    let mut phenotype = Vec::with_capacity(n);
    let mut ts = vec![0.0f32; n * spec.t_bins * spec.d_ts];
    let mut mask = vec![0u8; n * spec.t_bins];
    let mut statics = vec![0.0f32; n * spec.d_flat];
    let mut labels = vec![0.0f32; n];
    let mut codes: Vec<Vec<u32>> = Vec::with_capacity(n);
    let mut emb = vec![0.0f32; n * spec.emb_dim];

    let half = spec.d_ts / 2;
    let pool_size = (spec.d_codes / PHENOTYPES).max(1);
    let innov = (1.0 - AR_RHO * AR_RHO).sqrt();

    for i in 0..n {
        let s = draw(&mut rng);
        let u = draw(&mut rng);
        let p = rng.gen_range(0..PHENOTYPES);
        let phe = phenotype_effect(p);
        severity.push(s);
        static_factor.push(u);
        phenotype.push(p);

        // observation mask; step 0 always observed
        for t in 0..spec.t_bins {
            let obs = t == 0 || rng.gen::<f64>() < spec.obs_prob;
            mask[i * spec.t_bins + t] = obs as u8;
        }

        // AR(1) noise per channel around a per-channel signal level
        for c in 0..spec.d_ts {
            let level = if c < half {
                VITALS_SEV_LOADING * s
            } else {
                PHYS_SEV_LOADING * s + PHYS_PHE_LOADING * phe
            };
            let mut ar = draw(&mut rng);
            for t in 0..spec.t_bins {
                if t > 0 {
                    ar = AR_RHO * ar + innov * draw(&mut rng);
                }
                if mask[i * spec.t_bins + t] == 1 {
                    ts[(i * spec.t_bins + t) * spec.d_ts + c] = (level + ar) as f32;
                }
            }
        }

        // static columns by role; the u factor appears nowhere else
        for c in 0..spec.d_flat {
            let v = match c {
                0 => u + 0.3 * draw(&mut rng),
                1 => 0.5 * u + 0.5 * draw(&mut rng),
                2 => 0.3 * s + draw(&mut rng),
                3 => draw(&mut rng),
                4 => (rng.gen::<f64>() < 0.3) as usize as f64,
                _ => draw(&mut rng),
            };
            statics[i * spec.d_flat + c] = v as f32;
        }

        // codes: 2..=5 from the phenotype pool plus occasional global noise
        let pool_start = (p * pool_size).min(spec.d_codes - pool_size);
        let mut pool: Vec<u32> =
            (pool_start as u32..(pool_start + pool_size) as u32).collect();
        for k in (1..pool.len()).rev() {
            let j = rng.gen_range(0..=k);
            pool.swap(k, j);
        }
        let want = rng.gen_range(2..=5usize).min(pool.len());
        let mut row: Vec<u32> = pool.into_iter().take(want).collect();
        if rng.gen::<f64>() < 0.2 {
            row.push(rng.gen_range(0..spec.d_codes as u32));
        }
        row.sort_unstable();
        row.dedup();
        codes.push(row);

        // embedding: phenotype centroid plus isotropic noise
        for c in 0..spec.emb_dim {
            emb[i * spec.emb_dim + c] = (centroids[p][c] + 0.6 * draw(&mut rng)) as f32;
        }

        let log_y = B0 + A_SEV * s + A_STATIC * u + phe + LABEL_NOISE * draw(&mut rng);
        labels[i] = log_y.exp() as f32;
    }

    let mut groups: BTreeMap<String, FeatureGroup> = BTreeMap::new();
    let cols = |lo: usize, hi: usize| -> Vec<usize> { (lo..hi.min(spec.d_flat)).collect() };
    groups.insert(
        "vitals".into(),
        FeatureGroup { ts_channels: (0..half).collect(), static_cols: vec![] },
    );
    groups.insert(
        "physiology".into(),
        FeatureGroup { ts_channels: (half..spec.d_ts).collect(), static_cols: vec![] },
    );
    groups.insert(
        "admission".into(),
        FeatureGroup { ts_channels: vec![], static_cols: cols(0, 2) },
    );
    groups.insert(
        "demographics".into(),
        FeatureGroup { ts_channels: vec![], static_cols: cols(2, 4) },
    );
    groups.insert(
        "ethnicity".into(),
        FeatureGroup { ts_channels: vec![], static_cols: cols(4, 5) },
    );

    let cohort = CohortTensor {
        ids: (0..n as u32).collect(),
        t_bins: spec.t_bins,
        d_ts: spec.d_ts,
        d_flat: spec.d_flat,
        d_codes: spec.d_codes,
        emb_dim: spec.emb_dim,
        ts,
        mask,
        statics,
        labels,
        codes,
        emb,
        groups,
    };
    cohort.validate()?;
    Ok((cohort, Latents { severity, static_factor, phenotype }))
}
