use std::path::Path;

use staygraph_core::cohort::CohortTensor;
use staygraph_core::config::ModelConfig;
use staygraph_core::graph::TypedEdgeList;
use staygraph_core::metrics::{reliability_ece, MetricReport, PredictionSet, ECE_BINS};
use staygraph_core::model::{save_model, ModalityMask};
use staygraph_core::train::{
    evaluate_split, predict_split, prepare_cohort, train_model, TrainOptions, TrainedRun,
};
use staygraph_core::{Error, Result};

pub fn parse_modality(s: &str) -> Result<ModalityMask> {
    match s {
        "full" => Ok(ModalityMask::default()),
        "no-static" => Ok(ModalityMask::no_static()),
        "static-only" => Ok(ModalityMask::static_only()),
        other => Err(Error::Config(format!(
            "unknown modality '{other}' (full|no-static|static-only)"
        ))),
    }
}

/// One-row tabular form of a metric report (TSV, consumed by plots).
pub fn report_tsv(r: &MetricReport) -> String {
    let mut s = String::from("n\tmse\tmsle\tmad\tlog_mape_pct\tr2\tkappa\tece\n");
    s.push_str(&format!(
        "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\n",
        r.n, r.mse, r.msle, r.mad, r.log_mape_pct, r.r2, r.kappa, r.ece
    ));
    s
}

/// Train, checkpoint the best model, and write the run artifacts:
/// `run.json`, `config.txt`, `model.bin`, per-split metric reports and the
/// test-split reliability table.
pub fn run(
    cohort: &CohortTensor,
    edges: &TypedEdgeList,
    cfg: &ModelConfig,
    opts: &TrainOptions,
    out_dir: &Path,
) -> Result<TrainedRun> {
    std::fs::create_dir_all(out_dir)?;
    let mut trained = train_model(cohort, edges, cfg, opts)?;

    std::fs::write(out_dir.join("config.txt"), cfg.to_kv())?;
    let json = serde_json::to_string_pretty(&trained.record)
        .map_err(|e| Error::Data(format!("run record: {e}")))?;
    std::fs::write(out_dir.join("run.json"), json)?;
    save_model(&out_dir.join("model.bin"), &mut trained.model)?;
    std::fs::write(out_dir.join("metrics_val.txt"), trained.val_report.to_kv())?;
    std::fs::write(out_dir.join("metrics_test.txt"), trained.test_report.to_kv())?;
    std::fs::write(out_dir.join("metrics_test.tsv"), report_tsv(&trained.test_report))?;

    // reliability table on the test split
    let data = prepare_cohort(cohort);
    let tags = staygraph_core::cohort::split_patients(
        cohort,
        &staygraph_core::cohort::SplitSpec::new(opts.seed),
    )?;
    let test_idx = staygraph_core::cohort::split_indices(&tags, staygraph_core::cohort::Split::Test);
    let (truth, preds) =
        predict_split(&mut trained.model, &data, edges, &test_idx, opts.modality)?;
    let rel = reliability_ece(&PredictionSet::new(truth, preds)?, ECE_BINS);
    let mut table = String::from("bin\tmean_pred\tmean_true\tcount\n");
    for b in 0..rel.counts.len() {
        table.push_str(&format!(
            "{b}\t{}\t{}\t{}\n",
            rel.mean_pred[b], rel.mean_true[b], rel.counts[b]
        ));
    }
    std::fs::write(out_dir.join("reliability_test.tsv"), table)?;

    println!(
        "trained {} epochs (best epoch {}, val R2 {:.4}); test R2 {:.4}; params {}; {:.1}s",
        trained.record.epochs_run,
        trained.record.best_epoch,
        trained.record.best_val_r2,
        trained.test_report.r2,
        trained.record.param_count,
        trained.record.wall_clock_secs
    );
    Ok(trained)
}

/// Re-evaluate an existing trained model on one split (used by tests and
/// the evaluate command).
pub fn evaluate_trained(
    trained: &mut TrainedRun,
    cohort: &CohortTensor,
    edges: &TypedEdgeList,
    split: staygraph_core::cohort::Split,
    seed: u64,
    modality: ModalityMask,
) -> Result<MetricReport> {
    let data = prepare_cohort(cohort);
    let tags =
        staygraph_core::cohort::split_patients(cohort, &staygraph_core::cohort::SplitSpec::new(seed))?;
    let idx = staygraph_core::cohort::split_indices(&tags, split);
    evaluate_split(&mut trained.model, &data, edges, &idx, modality)
}
