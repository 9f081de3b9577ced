use crate::{Error, Result};

use super::tensor::Tensor;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

const INV_SQRT_2: f64 = std::f64::consts::FRAC_1_SQRT_2;
const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Exact-erf Gaussian error linear unit.
pub fn gelu_scalar(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x * INV_SQRT_2))
}

fn gelu_grad_scalar(x: f64) -> f64 {
    let phi_cdf = 0.5 * (1.0 + libm::erf(x * INV_SQRT_2));
    let phi_pdf = INV_SQRT_2PI * (-0.5 * x * x).exp();
    phi_cdf + x * phi_pdf
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softplus_scalar(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

/// Huber loss: quadratic inside `|r| <= delta`, linear outside.
pub fn huber_scalar(pred: f64, target: f64, delta: f64) -> f64 {
    let r = pred - target;
    if r.abs() <= delta {
        0.5 * r * r
    } else {
        delta * (r.abs() - 0.5 * delta)
    }
}

fn huber_grad_scalar(pred: f64, target: f64, delta: f64) -> f64 {
    let r = pred - target;
    if r.abs() <= delta {
        r
    } else {
        delta * r.signum()
    }
}

enum Op {
    Leaf,
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Neg(NodeId),
    Scale(NodeId, f64),
    /// `x + b` with `b` broadcast over the rows of the trailing axis.
    AddBias(NodeId, NodeId),
    MatMul {
        a: NodeId,
        b: NodeId,
        m: usize,
        k: usize,
        n: usize,
    },
    Gelu(NodeId),
    Silu(NodeId),
    Relu(NodeId),
    Softplus(NodeId),
    Exp(NodeId),
    RmsNorm {
        x: NodeId,
        gain: NodeId,
        eps: f64,
    },
    LayerNorm {
        x: NodeId,
        gain: NodeId,
        bias: NodeId,
        eps: f64,
    },
    /// Normalization over axis 0 of an `[n, d]` input. In train mode the
    /// stored stats are the batch stats; in eval mode they are constants.
    BatchNorm {
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        eps: f64,
        mean: Vec<f64>,
        var: Vec<f64>,
        train: bool,
    },
    Softmax(NodeId),
    SumAll(NodeId),
    Concat(Vec<NodeId>),
    /// Gather rows along axis 0.
    RowGather {
        x: NodeId,
        idx: Vec<usize>,
    },
    Reshape(NodeId),
    Huber {
        pred: NodeId,
        target: Vec<f64>,
        delta: f64,
    },
    /// Mean over observed time steps of a `[B, T, D]` tensor.
    MaskPoolMean {
        x: NodeId,
        mask: Vec<f64>,
        counts: Vec<f64>,
    },
    /// Diagonal selective-state-space scan (see `ssm_scan`).
    SsmScan {
        delta: NodeId,
        a: NodeId,
        b: NodeId,
        c: NodeId,
        x: NodeId,
        dims: [usize; 4], // B, T, C, S
        states: Vec<f64>,
        decays: Vec<f64>,
    },
    /// Per-channel softmax-weighted aggregation of edge messages into
    /// destination nodes, with learnable inverse temperature `beta`.
    SegmentSoftmax {
        msg: NodeId,
        beta: NodeId,
        offsets: Vec<usize>,
        order: Vec<usize>,
        alpha: Vec<f64>,
    },
    /// Add a constant per-row scalar to every channel of that row.
    AddRowScalars(NodeId),
    /// Multiply a tensor by one element of a vector node.
    MulScalarElem {
        x: NodeId,
        vec: NodeId,
        idx: usize,
    },
}

struct Node {
    data: Tensor,
    op: Op,
}

/// Computation graph for one forward/backward pass.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Tensor>>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn data(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].data
    }

    /// Gradient of a node; `None` until `backward` has touched it.
    pub fn grad(&self, id: NodeId) -> Option<&Tensor> {
        self.grads[id.0].as_ref()
    }

    fn push(&mut self, data: Tensor, op: Op, what: &str) -> Result<NodeId> {
        if !data.is_finite() {
            return Err(Error::NonFinite(format!("{what} produced a non-finite value")));
        }
        self.nodes.push(Node { data, op });
        self.grads.push(None);
        Ok(NodeId(self.nodes.len() - 1))
    }

    /// Insert a parameter or constant. Rejects non-finite input.
    pub fn leaf(&mut self, t: Tensor) -> Result<NodeId> {
        self.push(t, Op::Leaf, "leaf")
    }

    fn same_shape(&self, a: NodeId, b: NodeId, what: &str) -> Result<()> {
        if self.data(a).shape() != self.data(b).shape() {
            return Err(Error::Shape(format!(
                "{what}: {:?} vs {:?}",
                self.data(a).shape(),
                self.data(b).shape()
            )));
        }
        Ok(())
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape(a, b, "add")?;
        let data: Vec<f64> = self
            .data(a)
            .data()
            .iter()
            .zip(self.data(b).data())
            .map(|(x, y)| x + y)
            .collect();
        let t = Tensor::new(self.data(a).shape().to_vec(), data)?;
        self.push(t, Op::Add(a, b), "add")
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape(a, b, "sub")?;
        let data: Vec<f64> = self
            .data(a)
            .data()
            .iter()
            .zip(self.data(b).data())
            .map(|(x, y)| x - y)
            .collect();
        let t = Tensor::new(self.data(a).shape().to_vec(), data)?;
        self.push(t, Op::Sub(a, b), "sub")
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape(a, b, "mul")?;
        let data: Vec<f64> = self
            .data(a)
            .data()
            .iter()
            .zip(self.data(b).data())
            .map(|(x, y)| x * y)
            .collect();
        let t = Tensor::new(self.data(a).shape().to_vec(), data)?;
        self.push(t, Op::Mul(a, b), "mul")
    }

    pub fn neg(&mut self, a: NodeId) -> Result<NodeId> {
        let data: Vec<f64> = self.data(a).data().iter().map(|x| -x).collect();
        let t = Tensor::new(self.data(a).shape().to_vec(), data)?;
        self.push(t, Op::Neg(a), "neg")
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> Result<NodeId> {
        let data: Vec<f64> = self.data(a).data().iter().map(|x| x * c).collect();
        let t = Tensor::new(self.data(a).shape().to_vec(), data)?;
        self.push(t, Op::Scale(a, c), "scale")
    }

    /// `x + b` where `b` matches the trailing axis of `x`.
    pub fn add_bias(&mut self, x: NodeId, b: NodeId) -> Result<NodeId> {
        let d = self.data(x).last_dim();
        if self.data(b).shape() != [d] {
            return Err(Error::Shape(format!(
                "add_bias: bias {:?} does not match trailing axis {}",
                self.data(b).shape(),
                d
            )));
        }
        let bias = self.data(b).data().to_vec();
        let data: Vec<f64> = self
            .data(x)
            .data()
            .iter()
            .enumerate()
            .map(|(i, v)| v + bias[i % d])
            .collect();
        let t = Tensor::new(self.data(x).shape().to_vec(), data)?;
        self.push(t, Op::AddBias(x, b), "add_bias")
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (sa, sb) = (self.data(a).shape(), self.data(b).shape());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::Shape(format!("matmul: {:?} x {:?}", sa, sb)));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let out = matmul_raw(self.data(a).data(), self.data(b).data(), m, k, n);
        let t = Tensor::new(vec![m, n], out)?;
        self.push(t, Op::MatMul { a, b, m, k, n }, "matmul")
    }

    fn unary(
        &mut self,
        a: NodeId,
        f: impl Fn(f64) -> f64,
        op: impl Fn(NodeId) -> Op,
        what: &str,
    ) -> Result<NodeId> {
        let data: Vec<f64> = self.data(a).data().iter().map(|&x| f(x)).collect();
        let t = Tensor::new(self.data(a).shape().to_vec(), data)?;
        self.push(t, op(a), what)
    }

    pub fn gelu(&mut self, a: NodeId) -> Result<NodeId> {
        self.unary(a, gelu_scalar, Op::Gelu, "gelu")
    }

    pub fn silu(&mut self, a: NodeId) -> Result<NodeId> {
        self.unary(a, |x| x * sigmoid(x), Op::Silu, "silu")
    }

    pub fn relu(&mut self, a: NodeId) -> Result<NodeId> {
        self.unary(a, |x| x.max(0.0), Op::Relu, "relu")
    }

    pub fn softplus(&mut self, a: NodeId) -> Result<NodeId> {
        self.unary(a, softplus_scalar, Op::Softplus, "softplus")
    }

    pub fn exp(&mut self, a: NodeId) -> Result<NodeId> {
        self.unary(a, f64::exp, Op::Exp, "exp")
    }

    /// Root-mean-square normalization over the trailing axis:
    /// `y = x / sqrt(mean(x^2) + eps) * gain`.
    pub fn rms_norm(&mut self, x: NodeId, gain: NodeId, eps: f64) -> Result<NodeId> {
        let d = self.data(x).last_dim();
        if d == 0 || self.data(x).numel() == 0 {
            return Err(Error::Shape("rms_norm: zero-length trailing axis".into()));
        }
        if self.data(gain).shape() != [d] {
            return Err(Error::Shape(format!(
                "rms_norm: gain {:?} vs axis {}",
                self.data(gain).shape(),
                d
            )));
        }
        let g = self.data(gain).data().to_vec();
        let xv = self.data(x).data();
        let mut out = vec![0.0; xv.len()];
        for (row_out, row_in) in out.chunks_mut(d).zip(xv.chunks(d)) {
            let ms = row_in.iter().map(|v| v * v).sum::<f64>() / d as f64;
            let inv = 1.0 / (ms + eps).sqrt();
            for i in 0..d {
                row_out[i] = row_in[i] * inv * g[i];
            }
        }
        let t = Tensor::new(self.data(x).shape().to_vec(), out)?;
        self.push(t, Op::RmsNorm { x, gain, eps }, "rms_norm")
    }

    /// Layer normalization over the trailing axis.
    pub fn layer_norm(&mut self, x: NodeId, gain: NodeId, bias: NodeId, eps: f64) -> Result<NodeId> {
        let d = self.data(x).last_dim();
        if d == 0 || self.data(x).numel() == 0 {
            return Err(Error::Shape("layer_norm: zero-length trailing axis".into()));
        }
        if self.data(gain).shape() != [d] || self.data(bias).shape() != [d] {
            return Err(Error::Shape("layer_norm: gain/bias axis mismatch".into()));
        }
        let g = self.data(gain).data().to_vec();
        let bv = self.data(bias).data().to_vec();
        let xv = self.data(x).data();
        let mut out = vec![0.0; xv.len()];
        for (row_out, row_in) in out.chunks_mut(d).zip(xv.chunks(d)) {
            let mean = row_in.iter().sum::<f64>() / d as f64;
            let var = row_in.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let inv = 1.0 / (var + eps).sqrt();
            for i in 0..d {
                row_out[i] = (row_in[i] - mean) * inv * g[i] + bv[i];
            }
        }
        let t = Tensor::new(self.data(x).shape().to_vec(), out)?;
        self.push(t, Op::LayerNorm { x, gain, bias, eps }, "layer_norm")
    }

    /// Batch normalization over axis 0 of an `[n, d]` input using batch
    /// statistics. Returns the node plus the (biased) batch mean/var so the
    /// caller can maintain running buffers.
    pub fn batch_norm_train(
        &mut self,
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        eps: f64,
    ) -> Result<(NodeId, Vec<f64>, Vec<f64>)> {
        let (n, d) = self.rows_cols(x, "batch_norm")?;
        let xv = self.data(x).data();
        let mut mean = vec![0.0; d];
        let mut var = vec![0.0; d];
        for row in xv.chunks(d) {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v;
            }
        }
        for m in &mut mean {
            *m /= n as f64;
        }
        for row in xv.chunks(d) {
            for c in 0..d {
                let diff = row[c] - mean[c];
                var[c] += diff * diff;
            }
        }
        for v in &mut var {
            *v /= n as f64;
        }
        let id = self.batch_norm_with(x, gamma, beta, eps, mean.clone(), var.clone(), true)?;
        Ok((id, mean, var))
    }

    /// Batch normalization with frozen (running) statistics.
    pub fn batch_norm_eval(
        &mut self,
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        eps: f64,
        mean: &[f64],
        var: &[f64],
    ) -> Result<NodeId> {
        self.batch_norm_with(x, gamma, beta, eps, mean.to_vec(), var.to_vec(), false)
    }

    fn batch_norm_with(
        &mut self,
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        eps: f64,
        mean: Vec<f64>,
        var: Vec<f64>,
        train: bool,
    ) -> Result<NodeId> {
        let (_n, d) = self.rows_cols(x, "batch_norm")?;
        if self.data(gamma).shape() != [d] || self.data(beta).shape() != [d] || mean.len() != d {
            return Err(Error::Shape("batch_norm: channel mismatch".into()));
        }
        let g = self.data(gamma).data().to_vec();
        let bv = self.data(beta).data().to_vec();
        let xv = self.data(x).data();
        let mut out = vec![0.0; xv.len()];
        for (row_out, row_in) in out.chunks_mut(d).zip(xv.chunks(d)) {
            for c in 0..d {
                let inv = 1.0 / (var[c] + eps).sqrt();
                row_out[c] = (row_in[c] - mean[c]) * inv * g[c] + bv[c];
            }
        }
        let t = Tensor::new(self.data(x).shape().to_vec(), out)?;
        self.push(t, Op::BatchNorm { x, gamma, beta, eps, mean, var, train }, "batch_norm")
    }

    /// Softmax over the trailing axis.
    pub fn softmax(&mut self, x: NodeId) -> Result<NodeId> {
        let d = self.data(x).last_dim();
        if d == 0 {
            return Err(Error::Shape("softmax: zero-length trailing axis".into()));
        }
        let xv = self.data(x).data();
        let mut out = vec![0.0; xv.len()];
        for (row_out, row_in) in out.chunks_mut(d).zip(xv.chunks(d)) {
            let max = row_in.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for i in 0..d {
                row_out[i] = (row_in[i] - max).exp();
                z += row_out[i];
            }
            for v in row_out.iter_mut() {
                *v /= z;
            }
        }
        let t = Tensor::new(self.data(x).shape().to_vec(), out)?;
        self.push(t, Op::Softmax(x), "softmax")
    }

    pub fn sum_all(&mut self, x: NodeId) -> Result<NodeId> {
        let s: f64 = self.data(x).data().iter().sum();
        self.push(Tensor::scalar(s), Op::SumAll(x), "sum_all")
    }

    pub fn mean_all(&mut self, x: NodeId) -> Result<NodeId> {
        let n = self.data(x).numel();
        if n == 0 {
            return Err(Error::Shape("mean_all: empty tensor".into()));
        }
        let s = self.sum_all(x)?;
        self.scale(s, 1.0 / n as f64)
    }

    /// Concatenate along the trailing axis; leading shapes must match.
    pub fn concat(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        if parts.is_empty() {
            return Err(Error::Shape("concat: no inputs".into()));
        }
        let lead: Vec<usize> = {
            let s = self.data(parts[0]).shape();
            s[..s.len() - 1].to_vec()
        };
        let rows: usize = lead.iter().product::<usize>().max(1);
        let mut dims = Vec::with_capacity(parts.len());
        for &p in parts {
            let s = self.data(p).shape();
            if s.is_empty() || s[..s.len() - 1] != lead[..] {
                return Err(Error::Shape("concat: leading shape mismatch".into()));
            }
            dims.push(s[s.len() - 1]);
        }
        let total: usize = dims.iter().sum();
        let mut out = vec![0.0; rows * total];
        let mut off = 0;
        for (&p, &d) in parts.iter().zip(&dims) {
            let pv = self.data(p).data();
            for r in 0..rows {
                out[r * total + off..r * total + off + d].copy_from_slice(&pv[r * d..(r + 1) * d]);
            }
            off += d;
        }
        let mut shape = lead;
        shape.push(total);
        let t = Tensor::new(shape, out)?;
        self.push(t, Op::Concat(parts.to_vec()), "concat")
    }

    /// Gather rows along axis 0.
    pub fn row_gather(&mut self, x: NodeId, idx: &[usize]) -> Result<NodeId> {
        let s = self.data(x).shape();
        if s.is_empty() {
            return Err(Error::Shape("row_gather: scalar input".into()));
        }
        let rows = s[0];
        let rowlen = self.data(x).numel() / rows.max(1);
        for &i in idx {
            if i >= rows {
                return Err(Error::Shape(format!("row_gather: index {i} out of {rows}")));
            }
        }
        let xv = self.data(x).data();
        let mut out = vec![0.0; idx.len() * rowlen];
        for (r, &i) in idx.iter().enumerate() {
            out[r * rowlen..(r + 1) * rowlen].copy_from_slice(&xv[i * rowlen..(i + 1) * rowlen]);
        }
        let mut shape = vec![idx.len()];
        shape.extend_from_slice(&s[1..]);
        let t = Tensor::new(shape, out)?;
        self.push(t, Op::RowGather { x, idx: idx.to_vec() }, "row_gather")
    }

    pub fn reshape(&mut self, x: NodeId, shape: &[usize]) -> Result<NodeId> {
        let t = self.data(x).reshaped(shape)?;
        self.push(t, Op::Reshape(x), "reshape")
    }

    /// Elementwise Huber loss against a constant target.
    pub fn huber(&mut self, pred: NodeId, target: &[f64], delta: f64) -> Result<NodeId> {
        if delta <= 0.0 {
            return Err(Error::Config(format!("huber: delta must be > 0, got {delta}")));
        }
        if self.data(pred).numel() != target.len() {
            return Err(Error::Shape("huber: target length mismatch".into()));
        }
        if target.iter().any(|t| !t.is_finite()) {
            return Err(Error::NonFinite("huber: non-finite target".into()));
        }
        let pv = self.data(pred).data();
        let out: Vec<f64> = pv
            .iter()
            .zip(target)
            .map(|(&p, &t)| huber_scalar(p, t, delta))
            .collect();
        let t = Tensor::new(self.data(pred).shape().to_vec(), out)?;
        self.push(t, Op::Huber { pred, target: target.to_vec(), delta }, "huber")
    }

    /// Mean over observed steps of a `[B, T, D]` tensor; `mask` is `B*T`
    /// entries of 0/1. Errors if any row has no observed step.
    pub fn mask_pool_mean(&mut self, x: NodeId, mask: &[f64]) -> Result<NodeId> {
        let s = self.data(x).shape();
        if s.len() != 3 {
            return Err(Error::Shape(format!("mask_pool_mean: want [B,T,D], got {:?}", s)));
        }
        let (bsz, t_len, d) = (s[0], s[1], s[2]);
        if mask.len() != bsz * t_len {
            return Err(Error::Shape("mask_pool_mean: mask length mismatch".into()));
        }
        let mut counts = vec![0.0; bsz];
        for b in 0..bsz {
            counts[b] = mask[b * t_len..(b + 1) * t_len].iter().sum();
            if counts[b] == 0.0 {
                return Err(Error::Data(format!("mask_pool_mean: row {b} has no observed step")));
            }
        }
        let xv = self.data(x).data();
        let mut out = vec![0.0; bsz * d];
        for b in 0..bsz {
            for t in 0..t_len {
                let m = mask[b * t_len + t];
                if m != 0.0 {
                    let base = (b * t_len + t) * d;
                    for c in 0..d {
                        out[b * d + c] += m * xv[base + c];
                    }
                }
            }
            for c in 0..d {
                out[b * d + c] /= counts[b];
            }
        }
        let t = Tensor::new(vec![bsz, d], out)?;
        self.push(t, Op::MaskPoolMean { x, mask: mask.to_vec(), counts }, "mask_pool_mean")
    }

    /// Diagonal selective scan. Shapes: `delta,x: [B,T,C]`, `a: [C,S]`,
    /// `b,c: [B,T,S]`. Per channel and state:
    /// `s_t = exp(delta_t * a) * s_{t-1} + delta_t * b_t * x_t`,
    /// `y_t[c] = sum_s c_t[s] * s_t[c,s]`.
    pub fn ssm_scan(
        &mut self,
        delta: NodeId,
        a: NodeId,
        b: NodeId,
        c: NodeId,
        x: NodeId,
    ) -> Result<NodeId> {
        let sd = self.data(delta).shape().to_vec();
        if sd.len() != 3 {
            return Err(Error::Shape("ssm_scan: delta must be [B,T,C]".into()));
        }
        let (bsz, t_len, ch) = (sd[0], sd[1], sd[2]);
        let sa = self.data(a).shape();
        if sa.len() != 2 || sa[0] != ch {
            return Err(Error::Shape("ssm_scan: a must be [C,S]".into()));
        }
        let st = sa[1];
        if self.data(x).shape() != [bsz, t_len, ch]
            || self.data(b).shape() != [bsz, t_len, st]
            || self.data(c).shape() != [bsz, t_len, st]
        {
            return Err(Error::Shape("ssm_scan: operand shape mismatch".into()));
        }
        let dv = self.data(delta).data();
        let av = self.data(a).data();
        let bv = self.data(b).data();
        let cv = self.data(c).data();
        let xv = self.data(x).data();

        let mut states = vec![0.0; bsz * t_len * ch * st];
        let mut decays = vec![0.0; bsz * t_len * ch * st];
        let mut y = vec![0.0; bsz * t_len * ch];
        let mut prev = vec![0.0; st];
        for bi in 0..bsz {
            for t in 0..t_len {
                let bt = bi * t_len + t;
                let b_row = &bv[bt * st..(bt + 1) * st];
                let c_row = &cv[bt * st..(bt + 1) * st];
                for cc in 0..ch {
                    let d_btc = dv[bt * ch + cc];
                    let x_btc = xv[bt * ch + cc];
                    let base = (bt * ch + cc) * st;
                    if t > 0 {
                        let pb = ((bt - 1) * ch + cc) * st;
                        prev.copy_from_slice(&states[pb..pb + st]);
                    } else {
                        prev.iter_mut().for_each(|v| *v = 0.0);
                    }
                    let a_row = &av[cc * st..(cc + 1) * st];
                    let state_row = &mut states[base..base + st];
                    let decay_row = &mut decays[base..base + st];
                    let dx = d_btc * x_btc;
                    let mut acc = 0.0;
                    for ss in 0..st {
                        let abar = (d_btc * a_row[ss]).exp();
                        let s_new = abar * prev[ss] + dx * b_row[ss];
                        if !s_new.is_finite() {
                            return Err(Error::NonFinite("ssm_scan: state diverged".into()));
                        }
                        decay_row[ss] = abar;
                        state_row[ss] = s_new;
                        acc += c_row[ss] * s_new;
                    }
                    y[bt * ch + cc] = acc;
                }
            }
        }
        let t = Tensor::new(vec![bsz, t_len, ch], y)?;
        self.push(
            t,
            Op::SsmScan { delta, a, b, c, x, dims: [bsz, t_len, ch, st], states, decays },
            "ssm_scan",
        )
    }

    /// Softmax-weighted per-channel aggregation of `msg: [E, D]` into
    /// `n` destination rows, grouped by `dst`; `beta` is a scalar node.
    pub fn segment_softmax(
        &mut self,
        msg: NodeId,
        beta: NodeId,
        dst: &[usize],
        n: usize,
    ) -> Result<NodeId> {
        let (e, d) = self.rows_cols(msg, "segment_softmax")?;
        if dst.len() != e {
            return Err(Error::Shape("segment_softmax: dst length mismatch".into()));
        }
        if !self.data(beta).is_scalar() {
            return Err(Error::Shape("segment_softmax: beta must be scalar".into()));
        }
        for &i in dst {
            if i >= n {
                return Err(Error::Shape(format!("segment_softmax: dst {i} out of {n}")));
            }
        }
        // CSR grouping by destination, edge order preserved within a group.
        let mut counts = vec![0usize; n + 1];
        for &i in dst {
            counts[i + 1] += 1;
        }
        for i in 0..n {
            counts[i + 1] += counts[i];
        }
        let offsets = counts.clone();
        let mut cursor = offsets.clone();
        let mut order = vec![0usize; e];
        for (eid, &i) in dst.iter().enumerate() {
            order[cursor[i]] = eid;
            cursor[i] += 1;
        }

        let bval = self.data(beta).data()[0];
        let mv = self.data(msg).data();
        let mut alpha = vec![0.0; e * d];
        let mut out = vec![0.0; n * d];
        for i in 0..n {
            let grp = &order[offsets[i]..offsets[i + 1]];
            if grp.is_empty() {
                continue;
            }
            for cc in 0..d {
                let mut max = f64::NEG_INFINITY;
                for &eid in grp {
                    max = max.max(bval * mv[eid * d + cc]);
                }
                let mut z = 0.0;
                for &eid in grp {
                    let w = (bval * mv[eid * d + cc] - max).exp();
                    alpha[eid * d + cc] = w;
                    z += w;
                }
                let mut acc = 0.0;
                for &eid in grp {
                    alpha[eid * d + cc] /= z;
                    acc += alpha[eid * d + cc] * mv[eid * d + cc];
                }
                out[i * d + cc] = acc;
            }
        }
        let t = Tensor::new(vec![n, d], out)?;
        self.push(t, Op::SegmentSoftmax { msg, beta, offsets, order, alpha }, "segment_softmax")
    }

    /// Add constant scalars row-wise: `out[r, :] = x[r, :] + scalars[r]`.
    pub fn add_row_scalars(&mut self, x: NodeId, scalars: &[f64]) -> Result<NodeId> {
        let (rows, d) = self.rows_cols(x, "add_row_scalars")?;
        if scalars.len() != rows {
            return Err(Error::Shape("add_row_scalars: row count mismatch".into()));
        }
        if scalars.iter().any(|s| !s.is_finite()) {
            return Err(Error::NonFinite("add_row_scalars: non-finite scalar".into()));
        }
        let xv = self.data(x).data();
        let mut out = vec![0.0; xv.len()];
        for r in 0..rows {
            for c in 0..d {
                out[r * d + c] = xv[r * d + c] + scalars[r];
            }
        }
        let t = Tensor::new(self.data(x).shape().to_vec(), out)?;
        self.push(t, Op::AddRowScalars(x), "add_row_scalars")
    }

    /// Multiply `x` by element `idx` of vector node `vec`.
    pub fn mul_scalar_elem(&mut self, x: NodeId, vec: NodeId, idx: usize) -> Result<NodeId> {
        if idx >= self.data(vec).numel() {
            return Err(Error::Shape("mul_scalar_elem: index out of range".into()));
        }
        let s = self.data(vec).data()[idx];
        let out: Vec<f64> = self.data(x).data().iter().map(|v| v * s).collect();
        let t = Tensor::new(self.data(x).shape().to_vec(), out)?;
        self.push(t, Op::MulScalarElem { x, vec, idx }, "mul_scalar_elem")
    }

    /// Inverted-scaling dropout mask applied as a constant multiply.
    /// `p == 0` is a passthrough; eval paths should simply not call this.
    pub fn dropout<R: rand::Rng>(&mut self, x: NodeId, p: f64, rng: &mut R) -> Result<NodeId> {
        if p <= 0.0 {
            return Ok(x);
        }
        if p >= 1.0 {
            return Err(Error::Config(format!("dropout rate {p} out of [0,1)")));
        }
        let keep = 1.0 - p;
        let mask: Vec<f64> = (0..self.data(x).numel())
            .map(|_| if rng.gen::<f64>() < keep { 1.0 / keep } else { 0.0 })
            .collect();
        let m = self.leaf(Tensor::new(self.data(x).shape().to_vec(), mask)?)?;
        self.mul(x, m)
    }

    fn rows_cols(&self, x: NodeId, what: &str) -> Result<(usize, usize)> {
        let s = self.data(x).shape();
        if s.len() != 2 {
            return Err(Error::Shape(format!("{what}: want rank-2, got {:?}", s)));
        }
        Ok((s[0], s[1]))
    }

    /// Reverse pass from a scalar root. Populates gradients for every node
    /// that influences the root.
    pub fn backward(&mut self, root: NodeId) -> Result<()> {
        if !self.data(root).is_scalar() {
            return Err(Error::Shape(format!(
                "backward: root must be scalar, got {:?}",
                self.data(root).shape()
            )));
        }
        self.grads[root.0] = Some(Tensor::new(
            self.data(root).shape().to_vec(),
            vec![1.0],
        )?);

        for i in (0..=root.0).rev() {
            let Some(gout) = self.grads[i].take() else { continue };
            // Ops only reference earlier nodes, so reverse index order is a
            // valid topological order.
            self.backward_node(i, gout.data());
            self.grads[i] = Some(gout);
        }
        Ok(())
    }

    fn backward_node(&mut self, i: usize, g: &[f64]) {
        // Ops reference strictly earlier nodes; splitting the borrow into
        // immutable node data plus mutable gradients avoids cloning inputs.
        let op = std::mem::replace(&mut self.nodes[i].op, Op::Leaf);
        let nodes = &self.nodes;
        let grads = &mut self.grads;
        let data = |id: NodeId| &nodes[id.0].data;
        match &op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                acc(nodes, grads, *a, g);
                acc(nodes, grads, *b, g);
            }
            Op::Sub(a, b) => {
                acc(nodes, grads, *a, g);
                let neg: Vec<f64> = g.iter().map(|v| -v).collect();
                acc(nodes, grads, *b, &neg);
            }
            Op::Mul(a, b) => {
                let ga: Vec<f64> = g.iter().zip(data(*b).data()).map(|(g, b)| g * b).collect();
                let gb: Vec<f64> = g.iter().zip(data(*a).data()).map(|(g, a)| g * a).collect();
                acc(nodes, grads, *a, &ga);
                acc(nodes, grads, *b, &gb);
            }
            Op::Neg(a) => {
                let ga: Vec<f64> = g.iter().map(|v| -v).collect();
                acc(nodes, grads, *a, &ga);
            }
            Op::Scale(a, c) => {
                let ga: Vec<f64> = g.iter().map(|v| v * c).collect();
                acc(nodes, grads, *a, &ga);
            }
            Op::AddBias(x, b) => {
                acc(nodes, grads, *x, g);
                let d = data(*b).numel();
                let mut gb = vec![0.0; d];
                for (j, v) in g.iter().enumerate() {
                    gb[j % d] += v;
                }
                acc(nodes, grads, *b, &gb);
            }
            Op::MatMul { a, b, m, k, n } => {
                let (m, k, n) = (*m, *k, *n);
                let av = data(*a).data();
                let bv = data(*b).data();
                // ga = g . b^T
                let mut ga = vec![0.0; m * k];
                for i in 0..m {
                    let grow = &g[i * n..(i + 1) * n];
                    let ga_row = &mut ga[i * k..(i + 1) * k];
                    for (kk, out) in ga_row.iter_mut().enumerate() {
                        let brow = &bv[kk * n..(kk + 1) * n];
                        *out = grow.iter().zip(brow).map(|(x, y)| x * y).sum();
                    }
                }
                // gb = a^T . g
                let mut gb = vec![0.0; k * n];
                for i in 0..m {
                    let arow = &av[i * k..(i + 1) * k];
                    let grow = &g[i * n..(i + 1) * n];
                    for (kk, &aik) in arow.iter().enumerate() {
                        if aik == 0.0 {
                            continue;
                        }
                        let brow = &mut gb[kk * n..(kk + 1) * n];
                        for (out, gv) in brow.iter_mut().zip(grow) {
                            *out += aik * gv;
                        }
                    }
                }
                acc(nodes, grads, *a, &ga);
                acc(nodes, grads, *b, &gb);
            }
            Op::Gelu(a) => {
                let ga: Vec<f64> = g
                    .iter()
                    .zip(data(*a).data())
                    .map(|(g, &x)| g * gelu_grad_scalar(x))
                    .collect();
                acc(nodes, grads, *a, &ga);
            }
            Op::Silu(a) => {
                let ga: Vec<f64> = g
                    .iter()
                    .zip(data(*a).data())
                    .map(|(g, &x)| {
                        let s = sigmoid(x);
                        g * (s * (1.0 + x * (1.0 - s)))
                    })
                    .collect();
                acc(nodes, grads, *a, &ga);
            }
            Op::Relu(a) => {
                let ga: Vec<f64> = g
                    .iter()
                    .zip(data(*a).data())
                    .map(|(g, &x)| if x > 0.0 { *g } else { 0.0 })
                    .collect();
                acc(nodes, grads, *a, &ga);
            }
            Op::Softplus(a) => {
                let ga: Vec<f64> = g
                    .iter()
                    .zip(data(*a).data())
                    .map(|(g, &x)| g * sigmoid(x))
                    .collect();
                acc(nodes, grads, *a, &ga);
            }
            Op::Exp(a) => {
                let ga: Vec<f64> = g
                    .iter()
                    .zip(nodes[i].data.data())
                    .map(|(g, y)| g * y)
                    .collect();
                acc(nodes, grads, *a, &ga);
            }
            Op::RmsNorm { x, gain, eps } => {
                let d = data(*x).last_dim();
                let xv = data(*x).data();
                let gv = data(*gain).data();
                let mut gx = vec![0.0; xv.len()];
                let mut ggain = vec![0.0; d];
                for (row, (xrow, grow)) in xv.chunks(d).zip(g.chunks(d)).enumerate() {
                    let ms = xrow.iter().map(|v| v * v).sum::<f64>() / d as f64;
                    let r = (ms + eps).sqrt();
                    let mut s1 = 0.0;
                    for i2 in 0..d {
                        s1 += grow[i2] * gv[i2] * xrow[i2];
                        ggain[i2] += grow[i2] * xrow[i2] / r;
                    }
                    let base = row * d;
                    for j in 0..d {
                        gx[base + j] =
                            grow[j] * gv[j] / r - xrow[j] * s1 / (d as f64 * r * r * r);
                    }
                }
                acc(nodes, grads, *x, &gx);
                acc(nodes, grads, *gain, &ggain);
            }
            Op::LayerNorm { x, gain, bias, eps } => {
                let d = data(*x).last_dim();
                let xv = data(*x).data();
                let gv = data(*gain).data();
                let mut gx = vec![0.0; xv.len()];
                let mut ggain = vec![0.0; d];
                let mut gbias = vec![0.0; d];
                for (row, (xrow, grow)) in xv.chunks(d).zip(g.chunks(d)).enumerate() {
                    let mean = xrow.iter().sum::<f64>() / d as f64;
                    let var = xrow.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
                    let inv = 1.0 / (var + eps).sqrt();
                    let xhat: Vec<f64> = xrow.iter().map(|v| (v - mean) * inv).collect();
                    let a: Vec<f64> = grow.iter().zip(gv).map(|(g, gamma)| g * gamma).collect();
                    let m1 = a.iter().sum::<f64>() / d as f64;
                    let m2 = a.iter().zip(&xhat).map(|(a, h)| a * h).sum::<f64>() / d as f64;
                    let base = row * d;
                    for j in 0..d {
                        gx[base + j] = inv * (a[j] - m1 - xhat[j] * m2);
                        ggain[j] += grow[j] * xhat[j];
                        gbias[j] += grow[j];
                    }
                }
                acc(nodes, grads, *x, &gx);
                acc(nodes, grads, *gain, &ggain);
                acc(nodes, grads, *bias, &gbias);
            }
            Op::BatchNorm { x, gamma, beta, eps, mean, var, train } => {
                let (n, d) = {
                    let s = data(*x).shape();
                    (s[0], s[1])
                };
                let xv = data(*x).data();
                let gv = data(*gamma).data();
                let mut gx = vec![0.0; xv.len()];
                let mut ggamma = vec![0.0; d];
                let mut gbeta = vec![0.0; d];
                for c in 0..d {
                    let inv = 1.0 / (var[c] + eps).sqrt();
                    if *train {
                        let mut m1 = 0.0;
                        let mut m2 = 0.0;
                        for r in 0..n {
                            let xhat = (xv[r * d + c] - mean[c]) * inv;
                            let a = g[r * d + c] * gv[c];
                            m1 += a;
                            m2 += a * xhat;
                            ggamma[c] += g[r * d + c] * xhat;
                            gbeta[c] += g[r * d + c];
                        }
                        m1 /= n as f64;
                        m2 /= n as f64;
                        for r in 0..n {
                            let xhat = (xv[r * d + c] - mean[c]) * inv;
                            let a = g[r * d + c] * gv[c];
                            gx[r * d + c] = inv * (a - m1 - xhat * m2);
                        }
                    } else {
                        for r in 0..n {
                            let xhat = (xv[r * d + c] - mean[c]) * inv;
                            gx[r * d + c] = g[r * d + c] * gv[c] * inv;
                            ggamma[c] += g[r * d + c] * xhat;
                            gbeta[c] += g[r * d + c];
                        }
                    }
                }
                acc(nodes, grads, *x, &gx);
                acc(nodes, grads, *gamma, &ggamma);
                acc(nodes, grads, *beta, &gbeta);
            }
            Op::Softmax(x) => {
                let d = data(*x).last_dim();
                let yv = nodes[i].data.data();
                let mut gx = vec![0.0; yv.len()];
                for (row, (yrow, grow)) in yv.chunks(d).zip(g.chunks(d)).enumerate() {
                    let dot: f64 = yrow.iter().zip(grow).map(|(y, g)| y * g).sum();
                    let base = row * d;
                    for j in 0..d {
                        gx[base + j] = yrow[j] * (grow[j] - dot);
                    }
                }
                acc(nodes, grads, *x, &gx);
            }
            Op::SumAll(x) => {
                let ga = vec![g[0]; data(*x).numel()];
                acc(nodes, grads, *x, &ga);
            }
            Op::Concat(parts) => {
                let dims: Vec<usize> = parts.iter().map(|&p| data(p).last_dim()).collect();
                let total: usize = dims.iter().sum();
                let rows = nodes[i].data.numel() / total;
                let mut off = 0;
                for (&p, &d) in parts.iter().zip(&dims) {
                    let mut gp = vec![0.0; rows * d];
                    for r in 0..rows {
                        gp[r * d..(r + 1) * d]
                            .copy_from_slice(&g[r * total + off..r * total + off + d]);
                    }
                    acc(nodes, grads, p, &gp);
                    off += d;
                }
            }
            Op::RowGather { x, idx } => {
                let rows = data(*x).shape()[0];
                let rowlen = data(*x).numel() / rows.max(1);
                let mut gx = vec![0.0; data(*x).numel()];
                for (r, &isrc) in idx.iter().enumerate() {
                    for j in 0..rowlen {
                        gx[isrc * rowlen + j] += g[r * rowlen + j];
                    }
                }
                acc(nodes, grads, *x, &gx);
            }
            Op::Reshape(x) => {
                acc(nodes, grads, *x, g);
            }
            Op::Huber { pred, target, delta } => {
                let ga: Vec<f64> = data(*pred)
                    .data()
                    .iter()
                    .zip(target)
                    .zip(g)
                    .map(|((&p, &t), g)| g * huber_grad_scalar(p, t, *delta))
                    .collect();
                acc(nodes, grads, *pred, &ga);
            }
            Op::MaskPoolMean { x, mask, counts } => {
                let s = data(*x).shape();
                let (bsz, t_len, d) = (s[0], s[1], s[2]);
                let mut gx = vec![0.0; data(*x).numel()];
                for bq in 0..bsz {
                    for t in 0..t_len {
                        let m = mask[bq * t_len + t];
                        if m != 0.0 {
                            let base = (bq * t_len + t) * d;
                            for c in 0..d {
                                gx[base + c] = m * g[bq * d + c] / counts[bq];
                            }
                        }
                    }
                }
                acc(nodes, grads, *x, &gx);
            }
            Op::SsmScan { delta, a, b, c, x, dims, states, decays } => {
                let [bsz, t_len, ch, st] = *dims;
                let dv = data(*delta).data();
                let av = data(*a).data();
                let bv = data(*b).data();
                let cv = data(*c).data();
                let xv = data(*x).data();
                let mut gdelta = vec![0.0; dv.len()];
                let mut ga = vec![0.0; av.len()];
                let mut gb = vec![0.0; bv.len()];
                let mut gc = vec![0.0; cv.len()];
                let mut gx = vec![0.0; xv.len()];
                let mut carry = vec![0.0; ch * st];
                let zero_prev = vec![0.0; st];
                for bi in 0..bsz {
                    carry.iter_mut().for_each(|v| *v = 0.0);
                    for t in (0..t_len).rev() {
                        let bt = bi * t_len + t;
                        let b_row = &bv[bt * st..(bt + 1) * st];
                        let c_row = &cv[bt * st..(bt + 1) * st];
                        let gb_row = &mut gb[bt * st..(bt + 1) * st];
                        let gc_row = &mut gc[bt * st..(bt + 1) * st];
                        for cc in 0..ch {
                            let gy = g[bt * ch + cc];
                            let d_btc = dv[bt * ch + cc];
                            let x_btc = xv[bt * ch + cc];
                            let base = (bt * ch + cc) * st;
                            let state_row = &states[base..base + st];
                            let decay_row = &decays[base..base + st];
                            let a_row = &av[cc * st..(cc + 1) * st];
                            let carry_row = &mut carry[cc * st..(cc + 1) * st];
                            let ga_row = &mut ga[cc * st..(cc + 1) * st];
                            let prev_row: &[f64] = if t > 0 {
                                let pb = ((bt - 1) * ch + cc) * st;
                                &states[pb..pb + st]
                            } else {
                                &zero_prev
                            };
                            let mut gd_acc = 0.0;
                            let mut gx_acc = 0.0;
                            for ss in 0..st {
                                // y_t contribution
                                gc_row[ss] += gy * state_row[ss];
                                let gs = carry_row[ss] + gy * c_row[ss];
                                // s_t = abar * s_prev + delta * b * x
                                let abar = decay_row[ss];
                                let gabar = gs * prev_row[ss];
                                let gbbar = gs * x_btc;
                                gd_acc += gabar * a_row[ss] * abar + gbbar * b_row[ss];
                                ga_row[ss] += gabar * d_btc * abar;
                                gb_row[ss] += gbbar * d_btc;
                                gx_acc += gs * d_btc * b_row[ss];
                                carry_row[ss] = gs * abar;
                            }
                            gdelta[bt * ch + cc] += gd_acc;
                            gx[bt * ch + cc] += gx_acc;
                        }
                    }
                }
                acc(nodes, grads, *delta, &gdelta);
                acc(nodes, grads, *a, &ga);
                acc(nodes, grads, *b, &gb);
                acc(nodes, grads, *c, &gc);
                acc(nodes, grads, *x, &gx);
            }
            Op::SegmentSoftmax { msg, beta, offsets, order, alpha } => {
                let (_e, d) = {
                    let s = data(*msg).shape();
                    (s[0], s[1])
                };
                let n = offsets.len() - 1;
                let mv = data(*msg).data();
                let bval = data(*beta).data()[0];
                let out = nodes[i].data.data();
                let mut gmsg = vec![0.0; mv.len()];
                let mut gbeta = 0.0;
                for i2 in 0..n {
                    let grp = &order[offsets[i2]..offsets[i2 + 1]];
                    if grp.is_empty() {
                        continue;
                    }
                    for cc in 0..d {
                        let o = out[i2 * d + cc];
                        let go = g[i2 * d + cc];
                        if go == 0.0 {
                            continue;
                        }
                        let mut second_moment = 0.0;
                        for &eid in grp {
                            let m = mv[eid * d + cc];
                            let al = alpha[eid * d + cc];
                            gmsg[eid * d + cc] += go * al * (1.0 + bval * (m - o));
                            second_moment += al * m * m;
                        }
                        gbeta += go * (second_moment - o * o);
                    }
                }
                acc(nodes, grads, *msg, &gmsg);
                acc(nodes, grads, *beta, &[gbeta]);
            }
            Op::AddRowScalars(x) => {
                acc(nodes, grads, *x, g);
            }
            Op::MulScalarElem { x, vec, idx } => {
                let s = data(*vec).data()[*idx];
                let ga: Vec<f64> = g.iter().map(|v| v * s).collect();
                let dot: f64 = g.iter().zip(data(*x).data()).map(|(g, x)| g * x).sum();
                let mut gvec = vec![0.0; data(*vec).numel()];
                gvec[*idx] = dot;
                acc(nodes, grads, *x, &ga);
                acc(nodes, grads, *vec, &gvec);
            }
        }
        self.nodes[i].op = op;
    }
}

fn acc(nodes: &[Node], grads: &mut [Option<Tensor>], id: NodeId, delta: &[f64]) {
    let grad =
        grads[id.0].get_or_insert_with(|| Tensor::zeros(nodes[id.0].data.shape()));
    for (g, d) in grad.data_mut().iter_mut().zip(delta) {
        *g += d;
    }
}

fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    for i in 0..m {
        let crow = &mut c[i * n..(i + 1) * n];
        let arow = &a[i * k..(i + 1) * k];
        for (kk, &aik) in arow.iter().enumerate() {
            if aik == 0.0 {
                continue;
            }
            let brow = &b[kk * n..(kk + 1) * n];
            for (out, bv) in crow.iter_mut().zip(brow) {
                *out += aik * bv;
            }
        }
    }
    c
}
