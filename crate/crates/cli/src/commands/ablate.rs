use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use staygraph_core::cohort::CohortTensor;
use staygraph_core::config::ModelConfig;
use staygraph_core::graph::TypedEdgeList;
use staygraph_core::metrics::{aggregate_seeds, MetricAggregate, MetricReport, METRIC_NAMES};
use staygraph_core::model::ModalityMask;
use staygraph_core::train::{train_model, TrainOptions};
use staygraph_core::{Error, Result};

use super::train::parse_modality;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AblationKind {
    Window,
    Features,
    Modality,
    Edges,
}

impl std::str::FromStr for AblationKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "window" => Ok(Self::Window),
            "features" => Ok(Self::Features),
            "modality" => Ok(Self::Modality),
            "edges" => Ok(Self::Edges),
            other => Err(Error::Config(format!(
                "unknown ablation kind '{other}' (window|features|modality|edges)"
            ))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct AblateArgs {
    pub kind: AblationKind,
    pub seeds: Vec<u64>,
    pub windows: Vec<usize>,
    pub groups: Vec<String>,
    pub modes: Vec<String>,
    pub drop_fracs: Vec<f64>,
    /// Retrain per variant (the default protocol); `false` re-evaluates
    /// the baseline model under the perturbed graph (edges only).
    pub retrain: bool,
}

impl Default for AblateArgs {
    fn default() -> Self {
        Self {
            kind: AblationKind::Edges,
            seeds: vec![1, 2, 3],
            windows: vec![6, 24, 48],
            groups: vec!["physiology".into(), "vitals".into(), "ethnicity".into()],
            modes: vec!["full".into(), "static-only".into(), "no-static".into()],
            drop_fracs: vec![0.3, 0.5, 0.7],
            retrain: true,
        }
    }
}

/// Remove exactly `floor(frac * |E|)` edges chosen uniformly with the
/// given RNG; survivors keep their original order.
pub fn drop_edges(edges: &TypedEdgeList, frac: f64, rng: &mut ChaCha8Rng) -> Result<TypedEdgeList> {
    if !(0.0..=1.0).contains(&frac) {
        return Err(Error::Config(format!("drop fraction must be in [0,1], got {frac}")));
    }
    let e = edges.len();
    let drop = (frac * e as f64).floor() as usize;
    let mut idx: Vec<usize> = (0..e).collect();
    for k in 0..drop {
        let j = rng.gen_range(k..e);
        idx.swap(k, j);
    }
    let mut dropped = vec![false; e];
    for &i in &idx[..drop] {
        dropped[i] = true;
    }
    let mut out = TypedEdgeList::new(edges.node_count());
    for (i, edge) in edges.edges().iter().enumerate() {
        if !dropped[i] {
            out.push(edge.src, edge.dst, edge.weight, edge.etype)?;
        }
    }
    Ok(out)
}

pub struct VariantResult {
    pub variant: String,
    pub per_seed: Vec<MetricReport>,
    pub aggregate: MetricAggregate,
}

/// Run one ablation sweep; every variant is trained per seed and scored on
/// the test split.
pub fn run(
    cohort: &CohortTensor,
    edges: &TypedEdgeList,
    cfg: &ModelConfig,
    args: &AblateArgs,
    out_dir: &Path,
) -> Result<Vec<VariantResult>> {
    if args.seeds.is_empty() {
        return Err(Error::Config("ablate needs at least one seed".into()));
    }
    std::fs::create_dir_all(out_dir)?;
    let mut results: Vec<VariantResult> = Vec::new();

    let train_variant = |cohort: &CohortTensor,
                         edges: &TypedEdgeList,
                         modality: ModalityMask,
                         seed: u64|
     -> Result<MetricReport> {
        let mut opts = TrainOptions::new(seed);
        opts.modality = modality;
        Ok(train_model(cohort, edges, cfg, &opts)?.test_report)
    };

    match args.kind {
        AblationKind::Window => {
            for &w in &args.windows {
                if w == 0 || w > cohort.t_bins {
                    return Err(Error::Config(format!(
                        "window {w}h outside 1..={}",
                        cohort.t_bins
                    )));
                }
                let mut reports = Vec::new();
                for &seed in &args.seeds {
                    let mut c = cohort.clone();
                    c.truncate_window(w);
                    reports.push(train_variant(&c, edges, ModalityMask::default(), seed)?);
                }
                results.push(make_variant(format!("window_{w}h"), reports)?);
            }
        }
        AblationKind::Features => {
            for group in &args.groups {
                // validate the name before any training time is spent
                let mut probe = cohort.clone();
                probe.zero_feature_groups(std::slice::from_ref(&group.clone()))?;
                let mut reports = Vec::new();
                for &seed in &args.seeds {
                    let mut c = cohort.clone();
                    c.zero_feature_groups(std::slice::from_ref(&group.clone()))?;
                    reports.push(train_variant(&c, edges, ModalityMask::default(), seed)?);
                }
                results.push(make_variant(format!("no_{group}"), reports)?);
            }
        }
        AblationKind::Modality => {
            for mode in &args.modes {
                let modality = parse_modality(mode)?;
                let mut reports = Vec::new();
                for &seed in &args.seeds {
                    reports.push(train_variant(cohort, edges, modality, seed)?);
                }
                results.push(make_variant(mode.clone(), reports)?);
            }
        }
        AblationKind::Edges => {
            for &frac in &args.drop_fracs {
                let mut reports = Vec::new();
                for &seed in &args.seeds {
                    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_ed9e);
                    let pruned = drop_edges(edges, frac, &mut rng)?;
                    if args.retrain {
                        reports.push(train_variant(
                            cohort,
                            &pruned,
                            ModalityMask::default(),
                            seed,
                        )?);
                    } else {
                        // evaluate the full-graph baseline under the
                        // perturbed graph
                        let mut opts = TrainOptions::new(seed);
                        opts.modality = ModalityMask::default();
                        let mut trained = train_model(cohort, edges, cfg, &opts)?;
                        reports.push(super::train::evaluate_trained(
                            &mut trained,
                            cohort,
                            &pruned,
                            staygraph_core::cohort::Split::Test,
                            seed,
                            ModalityMask::default(),
                        )?);
                    }
                }
                results.push(make_variant(format!("drop_{:.0}pct", frac * 100.0), reports)?);
            }
        }
    }

    write_tables(out_dir, args.kind, &args.seeds, &results)?;
    Ok(results)
}

fn make_variant(variant: String, per_seed: Vec<MetricReport>) -> Result<VariantResult> {
    let aggregate = aggregate_seeds(&per_seed)?;
    Ok(VariantResult { variant, per_seed, aggregate })
}

fn kind_name(kind: AblationKind) -> &'static str {
    match kind {
        AblationKind::Window => "window",
        AblationKind::Features => "features",
        AblationKind::Modality => "modality",
        AblationKind::Edges => "edges",
    }
}

fn write_tables(
    out_dir: &Path,
    kind: AblationKind,
    seeds: &[u64],
    results: &[VariantResult],
) -> Result<()> {
    let mut rows = String::from("variant\tseed\tn\tmse\tmsle\tmad\tlog_mape_pct\tr2\tkappa\tece\n");
    for r in results {
        for (seed, rep) in seeds.iter().zip(&r.per_seed) {
            rows.push_str(&format!(
                "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\n",
                r.variant,
                seed,
                rep.n,
                rep.mse,
                rep.msle,
                rep.mad,
                rep.log_mape_pct,
                rep.r2,
                rep.kappa,
                rep.ece
            ));
        }
    }
    std::fs::write(out_dir.join(format!("ablation_{}.tsv", kind_name(kind))), rows)?;

    let mut summary = String::from("variant");
    for name in METRIC_NAMES {
        summary.push_str(&format!("\t{name}.mean\t{name}.std"));
    }
    summary.push('\n');
    for r in results {
        summary.push_str(&r.variant);
        for i in 0..METRIC_NAMES.len() {
            summary.push_str(&format!("\t{}\t{}", r.aggregate.mean[i], r.aggregate.std[i]));
        }
        summary.push('\n');
    }
    std::fs::write(
        out_dir.join(format!("ablation_{}_summary.tsv", kind_name(kind))),
        summary,
    )?;
    Ok(())
}
