//! Dense f64 tensors with tape-based reverse-mode differentiation.
//!
//! A [`Tape`] records every operation of one forward pass as a node holding
//! its output tensor plus parent references; [`Tape::backward`] walks the
//! nodes in reverse creation order (which is a topological order by
//! construction) and accumulates gradients. Tensors are immutable values;
//! one tape is confined to a single thread and dropped after the step.

mod gradcheck;
#[cfg(test)]
mod tests;
mod optim;
mod tape;
mod tensor;

pub use gradcheck::{check_gradients, max_rel_err, rel_err};
pub use optim::{clip_global_norm, optimize_step, AdamState};
pub use tape::{gelu_scalar, huber_scalar, NodeId, Tape};
pub use tensor::Tensor;
