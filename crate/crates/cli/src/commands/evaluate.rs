use std::path::Path;

use staygraph_core::cohort::{split_indices, split_patients, Split, SplitSpec};
use staygraph_core::metrics::MetricReport;
use staygraph_core::model::{load_model, ModalityMask};
use staygraph_core::train::{evaluate_split, prepare_cohort};
use staygraph_core::{Error, Result};

use super::load_inputs;

/// Full-graph inference with a stored checkpoint on one split.
pub fn run(
    checkpoint: &Path,
    cohort_dir: &Path,
    graph_path: &Path,
    split: Split,
    seed: u64,
    modality: ModalityMask,
    out: Option<&Path>,
) -> Result<MetricReport> {
    let (cohort, edges) = load_inputs(cohort_dir, graph_path)?;
    let mut model = load_model(checkpoint)?;
    let data = prepare_cohort(&cohort);
    if model.d_in != data.d_in || model.d_flat != data.d_flat {
        return Err(Error::Data(format!(
            "checkpoint dims (d_in {}, d_flat {}) do not match cohort (d_in {}, d_flat {})",
            model.d_in, model.d_flat, data.d_in, data.d_flat
        )));
    }
    let tags = split_patients(&cohort, &SplitSpec::new(seed))?;
    let idx = split_indices(&tags, split);
    let report = evaluate_split(&mut model, &data, &edges, &idx, modality)?;
    let kv = report.to_kv();
    if let Some(path) = out {
        std::fs::write(path, &kv)?;
    }
    print!("{kv}");
    Ok(report)
}
