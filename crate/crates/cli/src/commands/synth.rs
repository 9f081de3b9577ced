use std::path::Path;

use staygraph_core::cohort::{generate_cohort, write_cohort, SynthSpec};
use staygraph_core::Result;

#[allow(clippy::too_many_arguments)]
pub fn run(
    out: &Path,
    seed: u64,
    n_stays: usize,
    d_ts: usize,
    d_flat: usize,
    d_codes: usize,
    emb_dim: usize,
    t_bins: usize,
) -> Result<()> {
    let spec = SynthSpec { n_stays, d_ts, d_flat, d_codes, emb_dim, t_bins, ..SynthSpec::default() };
    let cohort = generate_cohort(&spec, seed)?;
    write_cohort(out, &cohort)?;
    println!(
        "wrote cohort: {} stays, {}x{} time series, {} static, {} codes, emb {} -> {}",
        cohort.len(),
        cohort.t_bins,
        cohort.d_ts,
        cohort.d_flat,
        cohort.d_codes,
        cohort.emb_dim,
        out.display()
    );
    Ok(())
}
