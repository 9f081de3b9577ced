//! Static-feature encoder, softmax-weighted modality fusion, log-domain
//! target transform, and the dual-head weighted Huber objective.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{NodeId, Tape, Tensor};
use crate::config::LossConfig;
use crate::{Error, Result};

#[derive(Debug, Clone)]
pub struct StaticEncoderParams {
    pub w: Tensor,
    pub b: Tensor,
    pub ln_g: Tensor,
    pub ln_b: Tensor,
}

impl StaticEncoderParams {
    pub fn init<R: Rng>(d_flat: usize, d_model: usize, rng: &mut R) -> Self {
        Self {
            w: Tensor::linear_init(d_flat, d_model, rng),
            b: Tensor::zeros(&[d_model]),
            ln_g: Tensor::from_vec(vec![1.0; d_model]),
            ln_b: Tensor::zeros(&[d_model]),
        }
    }

    pub fn push_params<'a>(&'a mut self, out: &mut Vec<(String, &'a mut Tensor)>) {
        out.push(("static.w".into(), &mut self.w));
        out.push(("static.b".into(), &mut self.b));
        out.push(("static.ln_g".into(), &mut self.ln_g));
        out.push(("static.ln_b".into(), &mut self.ln_b));
    }
}

pub struct StaticEncoderNodes {
    pub w: NodeId,
    pub b: NodeId,
    pub ln_g: NodeId,
    pub ln_b: NodeId,
}

impl StaticEncoderParams {
    pub fn leaf(&self, tape: &mut Tape) -> Result<StaticEncoderNodes> {
        Ok(StaticEncoderNodes {
            w: tape.leaf(self.w.clone())?,
            b: tape.leaf(self.b.clone())?,
            ln_g: tape.leaf(self.ln_g.clone())?,
            ln_b: tape.leaf(self.ln_b.clone())?,
        })
    }
}

impl StaticEncoderNodes {
    pub fn collect_ids(&self, out: &mut Vec<NodeId>) {
        out.extend([self.w, self.b, self.ln_g, self.ln_b]);
    }
}

/// Linear projection, LayerNorm, GELU, dropout — in that order.
pub fn encode_static(
    tape: &mut Tape,
    x_flat: NodeId,
    p: &StaticEncoderNodes,
    eps: f64,
    dropout: f64,
    train: bool,
    rng: &mut ChaCha8Rng,
) -> Result<NodeId> {
    let lin = tape.matmul(x_flat, p.w)?;
    let lin = tape.add_bias(lin, p.b)?;
    let ln = tape.layer_norm(lin, p.ln_g, p.ln_b, eps)?;
    let act = tape.gelu(ln)?;
    if train {
        tape.dropout(act, dropout, rng)
    } else {
        Ok(act)
    }
}

/// Concatenate the three branch embeddings, each scaled by its
/// softmax-normalized fusion weight.
pub fn fuse(
    tape: &mut Tape,
    z_graph: NodeId,
    z_ts: NodeId,
    z_flat: NodeId,
    fusion_logits: NodeId,
) -> Result<NodeId> {
    for (a, b) in [(z_graph, z_ts), (z_ts, z_flat)] {
        if tape.data(a).shape()[0] != tape.data(b).shape()[0] {
            return Err(Error::Shape("fuse: batch sizes differ".into()));
        }
    }
    let lam = tape.softmax(fusion_logits)?;
    let sg = tape.mul_scalar_elem(z_graph, lam, 0)?;
    let st = tape.mul_scalar_elem(z_ts, lam, 1)?;
    let sf = tape.mul_scalar_elem(z_flat, lam, 2)?;
    tape.concat(&[sg, st, sf])
}

/// `T(y) = log(1 + y)`; rejects negative days.
pub fn target_transform(y_days: f64) -> Result<f64> {
    if !y_days.is_finite() || y_days < 0.0 {
        return Err(Error::Data(format!("length of stay must be >= 0 days, got {y_days}")));
    }
    Ok(y_days.ln_1p())
}

/// `T^-1(z) = exp(z) - 1`, clamped at zero days.
pub fn inverse_transform(z: f64) -> f64 {
    (z.exp() - 1.0).max(0.0)
}

/// Convert a batch of log-domain head outputs to days.
pub fn predict_days(log_preds: &[f64]) -> Vec<f64> {
    log_preds.iter().map(|&z| inverse_transform(z)).collect()
}

/// Per-sample dual-head Huber loss in the log domain, scaled by the
/// tail weight `1 + gamma * I(y > tau)` and averaged over the batch.
/// `pred_main` / `pred_ts` are `[n]` log-domain outputs, `y_days` raw days.
pub fn compute_loss(
    tape: &mut Tape,
    pred_main: NodeId,
    pred_ts: NodeId,
    y_days: &[f64],
    cfg: &LossConfig,
) -> Result<NodeId> {
    cfg.validate()?;
    let n = tape.data(pred_main).numel();
    if n != y_days.len() || tape.data(pred_ts).numel() != n {
        return Err(Error::Shape("compute_loss: batch size mismatch".into()));
    }
    let targets: Vec<f64> = y_days
        .iter()
        .map(|&y| target_transform(y))
        .collect::<Result<_>>()?;
    let h_main = tape.huber(pred_main, &targets, cfg.huber_delta)?;
    let h_ts = tape.huber(pred_ts, &targets, cfg.huber_delta)?;
    let h_main = tape.scale(h_main, 1.0 - cfg.alpha)?;
    let h_ts = tape.scale(h_ts, cfg.alpha)?;
    let per_sample = tape.add(h_main, h_ts)?;
    let weights: Vec<f64> =
        y_days.iter().map(|&y| if y > cfg.tau { 1.0 + cfg.gamma } else { 1.0 }).collect();
    let w = tape.leaf(Tensor::from_vec(weights))?;
    let weighted = tape.mul(per_sample, w)?;
    tape.mean_all(weighted)
}
