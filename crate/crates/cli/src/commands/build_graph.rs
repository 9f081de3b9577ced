use std::path::Path;

use staygraph_core::cohort::read_cohort;
use staygraph_core::graph::{
    build_graph, connected_components, graph_density, write_edge_list, GraphBuildConfig,
};
use staygraph_core::Result;

/// Build the fused multi-view graph from a cohort directory and write the
/// edge list. The pipeline is deterministic; `seed` is accepted for
/// interface uniformity and recorded nowhere.
pub fn run(cohort_dir: &Path, out: &Path, cfg: &GraphBuildConfig, _seed: u64) -> Result<()> {
    let cohort = read_cohort(cohort_dir)?;
    let edges = build_graph(&cohort.diagnosis_matrix()?, &cohort.embedding_matrix()?, cfg)?;
    write_edge_list(out, &edges)?;
    let density = graph_density(edges.len(), edges.node_count())?;
    let comps = connected_components(&edges).len();
    println!(
        "nodes={} edges={} density={} components={}",
        edges.node_count(),
        edges.len(),
        density,
        comps
    );
    Ok(())
}
