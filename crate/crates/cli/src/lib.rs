//! Command implementations behind the `staygraph` binary: cohort
//! synthesis, graph building, training, evaluation, the ablation suite,
//! seeded random hyperparameter search, and report/plot emission.

pub mod commands;
pub mod plot;

use staygraph_core::Error;

/// Process exit code for one error class: 2 bad arguments, 3 data errors,
/// 4 numerical divergence.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) => 2,
        Error::Divergence(_) => 4,
        _ => 3,
    }
}
