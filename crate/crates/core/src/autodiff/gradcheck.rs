//! Central finite-difference verification of reverse-mode gradients.
//!
//! The checker re-evaluates the user's forward closure at perturbed leaf
//! values, so it exercises only the forward path and is independent of the
//! backward implementation it validates.

use crate::Result;

use super::tape::{NodeId, Tape};
use super::tensor::Tensor;

/// Relative error with a floor on the denominator so near-zero gradients
/// are compared in absolute terms.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-3)
}

pub fn max_rel_err(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| rel_err(x, y)).fold(0.0, f64::max)
}

/// Compare reverse-mode gradients of a scalar-valued forward pass against
/// central finite differences over every entry of every input tensor.
/// Returns the worst relative error seen.
///
/// `forward` receives a fresh tape and the leaf ids of `inputs` (in order)
/// and must return the scalar root.
pub fn check_gradients<F>(inputs: &[Tensor], h: f64, forward: F) -> Result<f64>
where
    F: Fn(&mut Tape, &[NodeId]) -> Result<NodeId>,
{
    let eval = |tensors: &[Tensor]| -> Result<(Tape, Vec<NodeId>, NodeId)> {
        let mut tape = Tape::new();
        let ids: Vec<NodeId> = tensors
            .iter()
            .map(|t| tape.leaf(t.clone()))
            .collect::<Result<_>>()?;
        let root = forward(&mut tape, &ids)?;
        Ok((tape, ids, root))
    };

    let (mut tape, ids, root) = eval(inputs)?;
    tape.backward(root)?;
    let analytic: Vec<Vec<f64>> = ids
        .iter()
        .zip(inputs)
        .map(|(&id, t)| {
            tape.grad(id)
                .map(|g| g.data().to_vec())
                .unwrap_or_else(|| vec![0.0; t.numel()])
        })
        .collect();

    let mut worst = 0.0f64;
    for (ti, t) in inputs.iter().enumerate() {
        for j in 0..t.numel() {
            let mut plus = inputs.to_vec();
            plus[ti].data_mut()[j] += h;
            let mut minus = inputs.to_vec();
            minus[ti].data_mut()[j] -= h;
            let (tp, _, rp) = eval(&plus)?;
            let (tm, _, rm) = eval(&minus)?;
            let fd = (tp.data(rp).item()? - tm.data(rm).item()?) / (2.0 * h);
            worst = worst.max(rel_err(analytic[ti][j], fd));
        }
    }
    Ok(worst)
}
