//! Graph encoder: node-initialization MLP, typed-edge local message
//! passing with softmax aggregation, degree-ordered global state-space
//! mixing, and the residual pre-norm block update.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{NodeId, Tape, Tensor};
use crate::graph::TypedEdgeList;
use crate::{Error, Result};

use super::temporal::{ssm_block_forward, SsmBlockNodes, SsmBlockParams};

/// Message floor added after ReLU so softmax aggregation never sees an
/// exactly-zero message block.
pub const MESSAGE_EPS: f64 = 1e-7;
/// Running-statistics momentum for the block batch norm.
pub const BN_MOMENTUM: f64 = 0.1;
/// Scale of the seeded tie-breaking noise in the degree ordering.
pub const DEGREE_NOISE: f64 = 0.01;

#[derive(Debug, Clone)]
pub struct NodeInitParams {
    pub w1: Tensor,
    pub b1: Tensor,
    pub ln_g: Tensor,
    pub ln_b: Tensor,
    pub w2: Tensor,
    pub b2: Tensor,
}

impl NodeInitParams {
    pub fn init<R: Rng>(d_model: usize, rng: &mut R) -> Self {
        Self {
            w1: Tensor::linear_init(d_model, d_model, rng),
            b1: Tensor::zeros(&[d_model]),
            ln_g: Tensor::from_vec(vec![1.0; d_model]),
            ln_b: Tensor::zeros(&[d_model]),
            w2: Tensor::linear_init(d_model, d_model, rng),
            b2: Tensor::zeros(&[d_model]),
        }
    }

    pub fn push_params<'a>(&'a mut self, out: &mut Vec<(String, &'a mut Tensor)>) {
        out.push(("node_init.w1".into(), &mut self.w1));
        out.push(("node_init.b1".into(), &mut self.b1));
        out.push(("node_init.ln_g".into(), &mut self.ln_g));
        out.push(("node_init.ln_b".into(), &mut self.ln_b));
        out.push(("node_init.w2".into(), &mut self.w2));
        out.push(("node_init.b2".into(), &mut self.b2));
    }
}

pub struct NodeInitNodes {
    pub w1: NodeId,
    pub b1: NodeId,
    pub ln_g: NodeId,
    pub ln_b: NodeId,
    pub w2: NodeId,
    pub b2: NodeId,
}

impl NodeInitParams {
    pub fn leaf(&self, tape: &mut Tape) -> Result<NodeInitNodes> {
        Ok(NodeInitNodes {
            w1: tape.leaf(self.w1.clone())?,
            b1: tape.leaf(self.b1.clone())?,
            ln_g: tape.leaf(self.ln_g.clone())?,
            ln_b: tape.leaf(self.ln_b.clone())?,
            w2: tape.leaf(self.w2.clone())?,
            b2: tape.leaf(self.b2.clone())?,
        })
    }
}

impl NodeInitNodes {
    pub fn collect_ids(&self, out: &mut Vec<NodeId>) {
        out.extend([self.w1, self.b1, self.ln_g, self.ln_b, self.w2, self.b2]);
    }
}

/// `x0 = W2 . LayerNorm(W1 . z + b1) + b2`
pub fn node_init(tape: &mut Tape, z_ts: NodeId, p: &NodeInitNodes, eps: f64) -> Result<NodeId> {
    let l1 = tape.matmul(z_ts, p.w1)?;
    let l1 = tape.add_bias(l1, p.b1)?;
    let ln = tape.layer_norm(l1, p.ln_g, p.ln_b, eps)?;
    let l2 = tape.matmul(ln, p.w2)?;
    tape.add_bias(l2, p.b2)
}

/// Parameters of one local+global block.
#[derive(Debug, Clone)]
pub struct GpsBlockParams {
    pub type_emb: Tensor,  // [4, d_e]
    pub edge_proj: Tensor, // [d_e, C]
    pub beta: Tensor,      // [1] softmax aggregation inverse temperature
    pub msg_w1: Tensor,
    pub msg_b1: Tensor,
    pub msg_w2: Tensor,
    pub msg_b2: Tensor,
    pub bn_gamma: Tensor,
    pub bn_beta: Tensor,
    pub ln_g: Tensor,
    pub ln_b: Tensor,
    pub ffn_w1: Tensor, // [C, 2C]
    pub ffn_b1: Tensor,
    pub ffn_w2: Tensor, // [2C, C]
    pub ffn_b2: Tensor,
    pub global: SsmBlockParams,
    // running batch-norm buffers (not optimized, saved with checkpoints)
    pub bn_run_mean: Vec<f64>,
    pub bn_run_var: Vec<f64>,
}

impl GpsBlockParams {
    pub fn init<R: Rng>(d_model: usize, d_state: usize, d_e: usize, rng: &mut R) -> Self {
        Self {
            type_emb: Tensor::uniform(&[4, d_e], -0.5, 0.5, rng),
            edge_proj: Tensor::linear_init(d_e, d_model, rng),
            beta: Tensor::from_vec(vec![1.0]),
            msg_w1: Tensor::linear_init(d_model, d_model, rng),
            msg_b1: Tensor::zeros(&[d_model]),
            msg_w2: Tensor::linear_init(d_model, d_model, rng),
            msg_b2: Tensor::zeros(&[d_model]),
            bn_gamma: Tensor::from_vec(vec![1.0; d_model]),
            bn_beta: Tensor::zeros(&[d_model]),
            ln_g: Tensor::from_vec(vec![1.0; d_model]),
            ln_b: Tensor::zeros(&[d_model]),
            ffn_w1: Tensor::linear_init(d_model, 2 * d_model, rng),
            ffn_b1: Tensor::zeros(&[2 * d_model]),
            ffn_w2: Tensor::linear_init(2 * d_model, d_model, rng),
            ffn_b2: Tensor::zeros(&[d_model]),
            global: SsmBlockParams::init(d_model, d_state, rng),
            bn_run_mean: vec![0.0; d_model],
            bn_run_var: vec![1.0; d_model],
        }
    }

    pub fn push_params<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Tensor)>) {
        out.push((format!("{prefix}.type_emb"), &mut self.type_emb));
        out.push((format!("{prefix}.edge_proj"), &mut self.edge_proj));
        out.push((format!("{prefix}.beta"), &mut self.beta));
        out.push((format!("{prefix}.msg_w1"), &mut self.msg_w1));
        out.push((format!("{prefix}.msg_b1"), &mut self.msg_b1));
        out.push((format!("{prefix}.msg_w2"), &mut self.msg_w2));
        out.push((format!("{prefix}.msg_b2"), &mut self.msg_b2));
        out.push((format!("{prefix}.bn_gamma"), &mut self.bn_gamma));
        out.push((format!("{prefix}.bn_beta"), &mut self.bn_beta));
        out.push((format!("{prefix}.ln_g"), &mut self.ln_g));
        out.push((format!("{prefix}.ln_b"), &mut self.ln_b));
        out.push((format!("{prefix}.ffn_w1"), &mut self.ffn_w1));
        out.push((format!("{prefix}.ffn_b1"), &mut self.ffn_b1));
        out.push((format!("{prefix}.ffn_w2"), &mut self.ffn_w2));
        out.push((format!("{prefix}.ffn_b2"), &mut self.ffn_b2));
        self.global.push_params(&format!("{prefix}.global"), out);
    }
}

pub struct GpsBlockNodes {
    pub type_emb: NodeId,
    pub edge_proj: NodeId,
    pub beta: NodeId,
    pub msg_w1: NodeId,
    pub msg_b1: NodeId,
    pub msg_w2: NodeId,
    pub msg_b2: NodeId,
    pub bn_gamma: NodeId,
    pub bn_beta: NodeId,
    pub ln_g: NodeId,
    pub ln_b: NodeId,
    pub ffn_w1: NodeId,
    pub ffn_b1: NodeId,
    pub ffn_w2: NodeId,
    pub ffn_b2: NodeId,
    pub global: SsmBlockNodes,
}

impl GpsBlockParams {
    pub fn leaf(&self, tape: &mut Tape) -> Result<GpsBlockNodes> {
        Ok(GpsBlockNodes {
            type_emb: tape.leaf(self.type_emb.clone())?,
            edge_proj: tape.leaf(self.edge_proj.clone())?,
            beta: tape.leaf(self.beta.clone())?,
            msg_w1: tape.leaf(self.msg_w1.clone())?,
            msg_b1: tape.leaf(self.msg_b1.clone())?,
            msg_w2: tape.leaf(self.msg_w2.clone())?,
            msg_b2: tape.leaf(self.msg_b2.clone())?,
            bn_gamma: tape.leaf(self.bn_gamma.clone())?,
            bn_beta: tape.leaf(self.bn_beta.clone())?,
            ln_g: tape.leaf(self.ln_g.clone())?,
            ln_b: tape.leaf(self.ln_b.clone())?,
            ffn_w1: tape.leaf(self.ffn_w1.clone())?,
            ffn_b1: tape.leaf(self.ffn_b1.clone())?,
            ffn_w2: tape.leaf(self.ffn_w2.clone())?,
            ffn_b2: tape.leaf(self.ffn_b2.clone())?,
            global: self.global.leaf(tape)?,
        })
    }
}

impl GpsBlockNodes {
    pub fn collect_ids(&self, out: &mut Vec<NodeId>) {
        out.extend([
            self.type_emb,
            self.edge_proj,
            self.beta,
            self.msg_w1,
            self.msg_b1,
            self.msg_w2,
            self.msg_b2,
            self.bn_gamma,
            self.bn_beta,
            self.ln_g,
            self.ln_b,
            self.ffn_w1,
            self.ffn_b1,
            self.ffn_w2,
            self.ffn_b2,
        ]);
        self.global.collect_ids(out);
    }
}

/// Typed-edge message passing. Per edge `j -> i`:
/// `m = ReLU(x_j + proj(type_emb[t]) + w * 1) + eps`; aggregation is a
/// per-channel softmax over in-neighbors with learnable inverse
/// temperature; `h_i = MLP(x_i + agg_i)`. Nodes with no in-edges keep a
/// zero aggregate, so they reduce to a pure self-update.
pub fn local_update(
    tape: &mut Tape,
    x: NodeId,
    edges: &TypedEdgeList,
    p: &GpsBlockNodes,
) -> Result<NodeId> {
    let n = tape.data(x).shape()[0];
    if edges.node_count() != n {
        return Err(Error::Shape(format!(
            "local_update: {} nodes vs edge list over {}",
            n,
            edges.node_count()
        )));
    }
    let summed = if edges.is_empty() {
        x
    } else {
        let mut src = Vec::with_capacity(edges.len());
        let mut dst = Vec::with_capacity(edges.len());
        let mut etype = Vec::with_capacity(edges.len());
        let mut weights = Vec::with_capacity(edges.len());
        for e in edges.edges() {
            src.push(e.src);
            dst.push(e.dst);
            etype.push(e.etype.as_u8() as usize);
            weights.push(e.weight);
        }
        let src_feat = tape.row_gather(x, &src)?;
        let temb = tape.row_gather(p.type_emb, &etype)?;
        let tproj = tape.matmul(temb, p.edge_proj)?;
        let msg = tape.add(src_feat, tproj)?;
        let msg = tape.add_row_scalars(msg, &weights)?;
        let msg = tape.relu(msg)?;
        let msg = tape.add_row_scalars(msg, &vec![MESSAGE_EPS; edges.len()])?;
        let agg = tape.segment_softmax(msg, p.beta, &dst, n)?;
        tape.add(x, agg)?
    };
    let h = tape.matmul(summed, p.msg_w1)?;
    let h = tape.add_bias(h, p.msg_b1)?;
    let h = tape.relu(h)?;
    let h = tape.matmul(h, p.msg_w2)?;
    tape.add_bias(h, p.msg_b2)
}

/// Node ordering for the global mixer: total degree plus seeded uniform
/// noise in `[0, 0.01)` (the noise can only reorder exact degree ties),
/// descending, index-ascending on exact key ties.
pub fn degree_order(edges: &TypedEdgeList, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let n = edges.node_count();
    let out = edges.out_degrees();
    let inn = edges.in_degrees();
    let mut keys: Vec<(f64, usize)> = (0..n)
        .map(|v| ((out[v] + inn[v]) as f64 + rng.gen::<f64>() * DEGREE_NOISE, v))
        .collect();
    keys.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
    keys.into_iter().map(|(_, v)| v).collect()
}

/// Global update: run one SSM block over the degree-ordered node sequence
/// and scatter the outputs back to original node positions.
pub fn global_mix(
    tape: &mut Tape,
    x: NodeId,
    order: &[usize],
    p: &SsmBlockNodes,
) -> Result<NodeId> {
    let s = tape.data(x).shape().to_vec();
    let (n, d) = (s[0], s[1]);
    if order.len() != n {
        return Err(Error::Shape("global_mix: order length mismatch".into()));
    }
    let seq = tape.row_gather(x, order)?;
    let seq3 = tape.reshape(seq, &[1, n, d])?;
    let mixed = ssm_block_forward(tape, seq3, p)?;
    let flat = tape.reshape(mixed, &[n, d])?;
    let mut inverse = vec![0usize; n];
    for (pos, &v) in order.iter().enumerate() {
        inverse[v] = pos;
    }
    tape.row_gather(flat, &inverse)
}

/// Outcome of one block: the new node state plus the batch statistics the
/// caller folds into the running buffers when training.
pub struct GpsBlockOutput {
    pub x_next: NodeId,
    pub batch_mean: Option<Vec<f64>>,
    pub batch_var: Option<Vec<f64>>,
}

/// Residual pre-norm block: `u = BN(h + g)`,
/// `x' = x + Dropout(MLP(LN(u)))`.
#[allow(clippy::too_many_arguments)]
pub fn gps_block(
    tape: &mut Tape,
    x: NodeId,
    edges: &TypedEdgeList,
    p: &GpsBlockNodes,
    run_stats: (&[f64], &[f64]),
    train: bool,
    dropout: f64,
    rng: &mut ChaCha8Rng,
    eps: f64,
) -> Result<GpsBlockOutput> {
    let order = degree_order(edges, rng);
    let h = local_update(tape, x, edges, p)?;
    let g = global_mix(tape, x, &order, &p.global)?;
    let hg = tape.add(h, g)?;
    let (u, batch_mean, batch_var) = if train {
        let (u, m, v) = tape.batch_norm_train(hg, p.bn_gamma, p.bn_beta, eps)?;
        (u, Some(m), Some(v))
    } else {
        let u = tape.batch_norm_eval(hg, p.bn_gamma, p.bn_beta, eps, run_stats.0, run_stats.1)?;
        (u, None, None)
    };
    let ln = tape.layer_norm(u, p.ln_g, p.ln_b, eps)?;
    let f = tape.matmul(ln, p.ffn_w1)?;
    let f = tape.add_bias(f, p.ffn_b1)?;
    let f = tape.gelu(f)?;
    let f = tape.matmul(f, p.ffn_w2)?;
    let f = tape.add_bias(f, p.ffn_b2)?;
    let f = if train { tape.dropout(f, dropout, rng)? } else { f };
    let x_next = tape.add(x, f)?;
    Ok(GpsBlockOutput { x_next, batch_mean, batch_var })
}
