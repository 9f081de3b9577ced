pub mod ablate;
pub mod build_graph;
pub mod evaluate;
pub mod report;
pub mod search;
pub mod synth;
pub mod train;

use std::path::Path;

use staygraph_core::cohort::{read_cohort, CohortTensor};
use staygraph_core::config::ModelConfig;
use staygraph_core::graph::{read_edge_list, TypedEdgeList};
use staygraph_core::{Error, Result};

/// Resolve the effective model config: preset, then optional file, then
/// `--set key=value` overrides.
pub fn resolve_config(
    preset: &str,
    file: Option<&Path>,
    overrides: &[String],
) -> Result<ModelConfig> {
    let mut cfg = match preset {
        "desk" => ModelConfig::desk_default(),
        "full" => ModelConfig::default(),
        other => return Err(Error::Config(format!("unknown preset '{other}' (desk|full)"))),
    };
    if let Some(path) = file {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        cfg = ModelConfig::from_kv(&text)?;
    }
    for kv in overrides {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("--set expects key=value, got '{kv}'")))?;
        cfg.apply_kv(k.trim(), v.trim())?;
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_inputs(cohort_dir: &Path, graph_path: &Path) -> Result<(CohortTensor, TypedEdgeList)> {
    let cohort = read_cohort(cohort_dir)?;
    let edges = read_edge_list(graph_path)?;
    if edges.node_count() != cohort.len() {
        return Err(Error::Data(format!(
            "graph covers {} nodes but the cohort has {} stays",
            edges.node_count(),
            cohort.len()
        )));
    }
    Ok((cohort, edges))
}

pub fn parse_list<T: std::str::FromStr>(s: &str, what: &str) -> Result<Vec<T>> {
    s.split(',')
        .filter(|t| !t.trim().is_empty())
        .map(|t| {
            t.trim()
                .parse()
                .map_err(|_| Error::Config(format!("bad {what} entry '{t}'")))
        })
        .collect()
}
