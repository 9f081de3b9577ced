//! State-space temporal encoder: input embedding, stacked selective-SSM
//! blocks with SiLU gating and residuals, and mask-aware pooling.

use rand::Rng;

use crate::autodiff::{NodeId, Tape, Tensor};
use crate::config::Pooling;
use crate::{Error, Result};

/// One selective-SSM block. The diagonal state matrix is stored as
/// `a_log` with `A = -exp(a_log)`, so stability (`diag(A) < 0`) holds for
/// every parameter value the optimizer can reach.
#[derive(Debug, Clone)]
pub struct SsmBlockParams {
    pub w_delta: Tensor, // [C, C]
    pub b_delta: Tensor, // [C]
    pub a_log: Tensor,   // [C, S]
    pub w_b: Tensor,     // [C, S]
    pub w_c: Tensor,     // [C, S]
    pub w_gate: Tensor,  // [C, C]
    pub b_gate: Tensor,  // [C]
    pub w_out: Tensor,   // [C, C]
    pub b_out: Tensor,   // [C]
}

impl SsmBlockParams {
    pub fn init<R: Rng>(d_model: usize, d_state: usize, rng: &mut R) -> Self {
        // log-spaced state decay rates: A ranges from -0.5 to -d_state
        let lo = 0.5f64.ln();
        let hi = (d_state.max(2) as f64).ln();
        let mut a_log = vec![0.0; d_model * d_state];
        for c in 0..d_model {
            for s in 0..d_state {
                let frac = if d_state > 1 { s as f64 / (d_state - 1) as f64 } else { 0.5 };
                a_log[c * d_state + s] = lo + frac * (hi - lo);
            }
        }
        // softplus(b_delta) = 0.1 step size at init
        let delta_bias = (0.1f64.exp() - 1.0).ln();
        Self {
            w_delta: Tensor::linear_init(d_model, d_model, rng),
            b_delta: Tensor::full(&[d_model], delta_bias),
            a_log: Tensor::new(vec![d_model, d_state], a_log).expect("a_log shape"),
            w_b: Tensor::linear_init(d_model, d_state, rng),
            w_c: Tensor::linear_init(d_model, d_state, rng),
            w_gate: Tensor::linear_init(d_model, d_model, rng),
            b_gate: Tensor::zeros(&[d_model]),
            w_out: Tensor::linear_init(d_model, d_model, rng),
            b_out: Tensor::zeros(&[d_model]),
        }
    }

    pub fn push_params<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Tensor)>) {
        out.push((format!("{prefix}.w_delta"), &mut self.w_delta));
        out.push((format!("{prefix}.b_delta"), &mut self.b_delta));
        out.push((format!("{prefix}.a_log"), &mut self.a_log));
        out.push((format!("{prefix}.w_b"), &mut self.w_b));
        out.push((format!("{prefix}.w_c"), &mut self.w_c));
        out.push((format!("{prefix}.w_gate"), &mut self.w_gate));
        out.push((format!("{prefix}.w_out"), &mut self.w_out));
        out.push((format!("{prefix}.b_gate"), &mut self.b_gate));
        out.push((format!("{prefix}.b_out"), &mut self.b_out));
    }
}

/// Leafed node ids for one block on one tape.
pub struct SsmBlockNodes {
    pub w_delta: NodeId,
    pub b_delta: NodeId,
    pub a_log: NodeId,
    pub w_b: NodeId,
    pub w_c: NodeId,
    pub w_gate: NodeId,
    pub b_gate: NodeId,
    pub w_out: NodeId,
    pub b_out: NodeId,
}

impl SsmBlockParams {
    pub fn leaf(&self, tape: &mut Tape) -> Result<SsmBlockNodes> {
        Ok(SsmBlockNodes {
            w_delta: tape.leaf(self.w_delta.clone())?,
            b_delta: tape.leaf(self.b_delta.clone())?,
            a_log: tape.leaf(self.a_log.clone())?,
            w_b: tape.leaf(self.w_b.clone())?,
            w_c: tape.leaf(self.w_c.clone())?,
            w_gate: tape.leaf(self.w_gate.clone())?,
            b_gate: tape.leaf(self.b_gate.clone())?,
            w_out: tape.leaf(self.w_out.clone())?,
            b_out: tape.leaf(self.b_out.clone())?,
        })
    }
}

impl SsmBlockNodes {
    pub fn collect_ids(&self, out: &mut Vec<NodeId>) {
        out.extend([
            self.w_delta,
            self.b_delta,
            self.a_log,
            self.w_b,
            self.w_c,
            self.w_gate,
            self.w_out,
            self.b_gate,
            self.b_out,
        ]);
    }
}

/// `GELU(RMSNorm(X W0 + b0))` applied per time step.
/// `x` is `[B, T, d_in]`; returns `[B, T, d_model]`.
pub fn embed_input(
    tape: &mut Tape,
    x: NodeId,
    w0: NodeId,
    b0: NodeId,
    gain: NodeId,
    eps: f64,
) -> Result<NodeId> {
    let s = tape.data(x).shape().to_vec();
    if s.len() != 3 {
        return Err(Error::Shape(format!("embed_input: want [B,T,d], got {:?}", s)));
    }
    let (bsz, t_len, d_in) = (s[0], s[1], s[2]);
    let d_model = tape.data(w0).shape()[1];
    let flat = tape.reshape(x, &[bsz * t_len, d_in])?;
    let lin = tape.matmul(flat, w0)?;
    let lin = tape.add_bias(lin, b0)?;
    let normed = tape.rms_norm(lin, gain, eps)?;
    let act = tape.gelu(normed)?;
    tape.reshape(act, &[bsz, t_len, d_model])
}

/// One selective-SSM block: input-dependent step size, B and C projections,
/// diagonal scan, SiLU gating, output projection and residual connection.
pub fn ssm_block_forward(
    tape: &mut Tape,
    h: NodeId,
    p: &SsmBlockNodes,
) -> Result<NodeId> {
    let s = tape.data(h).shape().to_vec();
    if s.len() != 3 {
        return Err(Error::Shape(format!("ssm_block_forward: want [B,T,C], got {:?}", s)));
    }
    let (bsz, t_len, ch) = (s[0], s[1], s[2]);
    let st = tape.data(p.a_log).shape()[1];
    let flat = tape.reshape(h, &[bsz * t_len, ch])?;

    let delta_lin = tape.matmul(flat, p.w_delta)?;
    let delta_lin = tape.add_bias(delta_lin, p.b_delta)?;
    let delta = tape.softplus(delta_lin)?;
    let delta = tape.reshape(delta, &[bsz, t_len, ch])?;

    let b_lin = tape.matmul(flat, p.w_b)?;
    let b_mat = tape.reshape(b_lin, &[bsz, t_len, st])?;
    let c_lin = tape.matmul(flat, p.w_c)?;
    let c_mat = tape.reshape(c_lin, &[bsz, t_len, st])?;

    let a_pos = tape.exp(p.a_log)?;
    let a = tape.neg(a_pos)?;

    let y = tape.ssm_scan(delta, a, b_mat, c_mat, h)?;
    let y_flat = tape.reshape(y, &[bsz * t_len, ch])?;

    let gate_lin = tape.matmul(flat, p.w_gate)?;
    let gate_lin = tape.add_bias(gate_lin, p.b_gate)?;
    let gate = tape.silu(gate_lin)?;
    let gated = tape.mul(y_flat, gate)?;

    let out = tape.matmul(gated, p.w_out)?;
    let out = tape.add_bias(out, p.b_out)?;
    let res = tape.add(out, flat)?;
    tape.reshape(res, &[bsz, t_len, ch])
}

/// Mask-aware pooling over the time axis. `mean` averages observed steps;
/// `last` picks the hidden state at the final observed step. Rows with no
/// observation are an error.
pub fn mask_pool(tape: &mut Tape, h: NodeId, mask: &[f64], mode: Pooling) -> Result<NodeId> {
    let s = tape.data(h).shape().to_vec();
    if s.len() != 3 {
        return Err(Error::Shape(format!("mask_pool: want [B,T,D], got {:?}", s)));
    }
    let (bsz, t_len, d) = (s[0], s[1], s[2]);
    if mask.len() != bsz * t_len {
        return Err(Error::Shape("mask_pool: mask length mismatch".into()));
    }
    match mode {
        Pooling::Mean => tape.mask_pool_mean(h, mask),
        Pooling::Last => {
            let mut idx = Vec::with_capacity(bsz);
            for b in 0..bsz {
                let row = &mask[b * t_len..(b + 1) * t_len];
                let last = row
                    .iter()
                    .rposition(|&m| m != 0.0)
                    .ok_or_else(|| Error::Data(format!("mask_pool: row {b} has no observed step")))?;
                idx.push(b * t_len + last);
            }
            let flat = tape.reshape(h, &[bsz * t_len, d])?;
            tape.row_gather(flat, &idx)
        }
    }
}
