//! Model hyperparameters, their tuned defaults, the random-search space,
//! and a flat `key=value` config-file codec.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Temporal pooling mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Pooling {
    Mean,
    Last,
}

impl std::str::FromStr for Pooling {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mean" => Ok(Self::Mean),
            "last" => Ok(Self::Last),
            other => Err(Error::Config(format!("unknown pooling '{other}'"))),
        }
    }
}

impl Pooling {
    pub fn name(self) -> &'static str {
        match self {
            Pooling::Mean => "mean",
            Pooling::Last => "last",
        }
    }
}

/// Objective constants: auxiliary-head weight, tail boost, tail threshold
/// (days) and the Huber transition point (log domain).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub alpha: f64,
    pub gamma: f64,
    pub tau: f64,
    pub huber_delta: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self { alpha: 0.3, gamma: 0.5, tau: 7.0, huber_delta: 1.0 }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::Config(format!("alpha must be in [0,1], got {}", self.alpha)));
        }
        if self.gamma < 0.0 {
            return Err(Error::Config(format!("gamma must be >= 0, got {}", self.gamma)));
        }
        if self.huber_delta <= 0.0 {
            return Err(Error::Config(format!(
                "huber_delta must be > 0, got {}",
                self.huber_delta
            )));
        }
        Ok(())
    }
}

/// All tunable hyperparameters of the model and trainer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub d_model: usize,
    pub mamba_layers: usize,
    pub d_state: usize,
    pub mamba_dropout: f64,
    pub pooling: Pooling,
    pub gps_layers: usize,
    pub gps_dropout: f64,
    /// Initial graph-branch fusion logit (TS/Flat logits start at 0).
    pub fusion_lambda: f64,
    pub lr: f64,
    pub batch_size: usize,
    /// Global gradient-norm clip; 0 disables.
    pub grad_clip: f64,
    pub weight_decay: f64,
    /// Neighborhood sampling fanouts (hop 1, hop 2).
    pub fanout1: usize,
    pub fanout2: usize,
    /// Edge-type embedding width in the graph encoder.
    pub edge_emb_dim: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub loss: LossConfig,
}

impl Default for ModelConfig {
    /// Tuned full-scale configuration.
    fn default() -> Self {
        Self {
            d_model: 128,
            mamba_layers: 2,
            d_state: 16,
            mamba_dropout: 0.1,
            pooling: Pooling::Last,
            gps_layers: 2,
            gps_dropout: 0.1,
            fusion_lambda: 0.5,
            lr: 1.7e-4,
            batch_size: 32,
            grad_clip: 2.0,
            weight_decay: 0.01,
            fanout1: 15,
            fanout2: 10,
            edge_emb_dim: 8,
            max_epochs: 50,
            patience: 5,
            loss: LossConfig::default(),
        }
    }
}

impl ModelConfig {
    /// The tuned configuration scaled down for CPU-sized cohorts: smaller
    /// widths, the top of the learning-rate search range, same depths,
    /// batch size, pooling and sampling fanouts.
    pub fn desk_default() -> Self {
        Self { d_model: 32, d_state: 8, lr: 1e-3, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_model == 0 || self.d_state == 0 || self.mamba_layers == 0 || self.gps_layers == 0
        {
            return Err(Error::Config("model dimensions must be >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if self.lr <= 0.0 {
            return Err(Error::Config(format!("lr must be > 0, got {}", self.lr)));
        }
        if !(0.0..1.0).contains(&self.mamba_dropout) || !(0.0..1.0).contains(&self.gps_dropout) {
            return Err(Error::Config("dropout rates must be in [0,1)".into()));
        }
        if self.fanout1 == 0 || self.fanout2 == 0 {
            return Err(Error::Config("sampling fanouts must be positive".into()));
        }
        self.loss.validate()
    }

    /// Flat `key=value` form (one pair per line, keys sorted by section).
    pub fn to_kv(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| s.push_str(&format!("{k}={v}\n"));
        kv("d_model", self.d_model.to_string());
        kv("mamba_layers", self.mamba_layers.to_string());
        kv("d_state", self.d_state.to_string());
        kv("mamba_dropout", self.mamba_dropout.to_string());
        kv("pooling", self.pooling.name().to_string());
        kv("gps_layers", self.gps_layers.to_string());
        kv("gps_dropout", self.gps_dropout.to_string());
        kv("fusion_lambda", self.fusion_lambda.to_string());
        kv("lr", self.lr.to_string());
        kv("batch_size", self.batch_size.to_string());
        kv("grad_clip", self.grad_clip.to_string());
        kv("weight_decay", self.weight_decay.to_string());
        kv("fanout1", self.fanout1.to_string());
        kv("fanout2", self.fanout2.to_string());
        kv("edge_emb_dim", self.edge_emb_dim.to_string());
        kv("max_epochs", self.max_epochs.to_string());
        kv("patience", self.patience.to_string());
        kv("loss.alpha", self.loss.alpha.to_string());
        kv("loss.gamma", self.loss.gamma.to_string());
        kv("loss.tau", self.loss.tau.to_string());
        kv("loss.huber_delta", self.loss.huber_delta.to_string());
        s
    }

    pub fn apply_kv(&mut self, key: &str, value: &str) -> Result<()> {
        macro_rules! parse {
            () => {
                value.parse().map_err(|_| {
                    Error::Config(format!("bad value '{value}' for key '{key}'"))
                })?
            };
        }
        match key {
            "d_model" => self.d_model = parse!(),
            "mamba_layers" => self.mamba_layers = parse!(),
            "d_state" => self.d_state = parse!(),
            "mamba_dropout" => self.mamba_dropout = parse!(),
            "pooling" => self.pooling = parse!(),
            "gps_layers" => self.gps_layers = parse!(),
            "gps_dropout" => self.gps_dropout = parse!(),
            "fusion_lambda" => self.fusion_lambda = parse!(),
            "lr" => self.lr = parse!(),
            "batch_size" => self.batch_size = parse!(),
            "grad_clip" => self.grad_clip = parse!(),
            "weight_decay" => self.weight_decay = parse!(),
            "fanout1" => self.fanout1 = parse!(),
            "fanout2" => self.fanout2 = parse!(),
            "edge_emb_dim" => self.edge_emb_dim = parse!(),
            "max_epochs" => self.max_epochs = parse!(),
            "patience" => self.patience = parse!(),
            "loss.alpha" => self.loss.alpha = parse!(),
            "loss.gamma" => self.loss.gamma = parse!(),
            "loss.tau" => self.loss.tau = parse!(),
            "loss.huber_delta" => self.loss.huber_delta = parse!(),
            other => return Err(Error::Config(format!("unknown config key '{other}'"))),
        }
        Ok(())
    }

    pub fn from_kv(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("malformed config line '{line}'")))?;
            cfg.apply_kv(k.trim(), v.trim())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Draw one configuration uniformly from the tuned search space
    /// (learning rate log-uniform in [1e-5, 1e-3]). Structural and loss
    /// parameters stay at `base`.
    pub fn sample_search_space<R: Rng>(base: &Self, rng: &mut R) -> Self {
        let pick = |rng: &mut R, v: &[usize]| v[rng.gen_range(0..v.len())];
        let pickf = |rng: &mut R, v: &[f64]| v[rng.gen_range(0..v.len())];
        let mut cfg = base.clone();
        cfg.d_model = pick(rng, &[64, 128, 256]);
        cfg.mamba_layers = pick(rng, &[2, 3, 4]);
        cfg.d_state = pick(rng, &[16, 32, 64]);
        cfg.mamba_dropout = pickf(rng, &[0.1, 0.2]);
        cfg.pooling = if rng.gen_range(0..2) == 0 { Pooling::Mean } else { Pooling::Last };
        cfg.gps_layers = pick(rng, &[2, 3, 4]);
        cfg.gps_dropout = pickf(rng, &[0.1, 0.2]);
        cfg.fusion_lambda = pickf(rng, &[0.3, 0.5, 0.7]);
        let (lo, hi) = (1e-5f64.ln(), 1e-3f64.ln());
        cfg.lr = (lo + rng.gen::<f64>() * (hi - lo)).exp();
        cfg.batch_size = pick(rng, &[32, 64, 128]);
        cfg.grad_clip = pickf(rng, &[0.0, 2.0, 5.0]);
        let fanouts = [(15, 10), (25, 15)];
        let (f1, f2) = fanouts[rng.gen_range(0..2)];
        cfg.fanout1 = f1;
        cfg.fanout2 = f2;
        cfg
    }

    /// Scaled-down variant of the same search space for desk-size runs:
    /// identical categorical axes except widths, which shrink by 4x.
    pub fn sample_desk_search_space<R: Rng>(base: &Self, rng: &mut R) -> Self {
        let mut cfg = Self::sample_search_space(base, rng);
        cfg.d_model /= 4;
        cfg.d_state /= 2;
        cfg
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn kv_round_trip() {
        let mut cfg = ModelConfig::desk_default();
        cfg.lr = 3.3e-4;
        cfg.pooling = Pooling::Mean;
        cfg.loss.gamma = 0.75;
        let text = cfg.to_kv();
        let back = ModelConfig::from_kv(&text).unwrap();
        assert_eq!(cfg, back);
    }

    #[test]
    fn unknown_key_is_rejected() {
        assert!(ModelConfig::from_kv("nonsense=1\n").is_err());
    }

    #[test]
    fn sampled_configs_stay_in_the_search_space(){
        let base = ModelConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..200 {
            let c = ModelConfig::sample_search_space(&base, &mut rng);
            assert!([64, 128, 256].contains(&c.d_model));
            assert!([2, 3, 4].contains(&c.mamba_layers));
            assert!([16, 32, 64].contains(&c.d_state));
            assert!((1e-5..=1e-3).contains(&c.lr), "lr {}", c.lr);
            assert!([32, 64, 128].contains(&c.batch_size));
            assert!([0.0, 2.0, 5.0].contains(&c.grad_clip));
            assert!([(15, 10), (25, 15)].contains(&(c.fanout1, c.fanout2)));
            c.validate().unwrap();
        }
    }

    #[test]
    fn default_is_the_tuned_configuration() {
        let cfg = ModelConfig::default();
        assert_eq!(cfg.d_model, 128);
        assert_eq!(cfg.mamba_layers, 2);
        assert_eq!(cfg.d_state, 16);
        assert_eq!(cfg.pooling, Pooling::Last);
        assert_eq!(cfg.gps_layers, 2);
        assert_eq!((cfg.fanout1, cfg.fanout2), (15, 10));
        assert_eq!(cfg.batch_size, 32);
        assert!((cfg.lr - 1.7e-4).abs() < 1e-12);
        assert_eq!(cfg.grad_clip, 2.0);
    }
}
