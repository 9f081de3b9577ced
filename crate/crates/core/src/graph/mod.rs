//! Multi-view patient similarity graph construction.
//!
//! Edges are directed and typed: diagnosis similarity (0), embedding
//! similarity (1), MST bridges (2) and PPR diffusion shortcuts (3).
//! "Top-k per node" always produces out-edges; connectivity, MST and PPR
//! work on the undirected view.

mod edges;
mod knn;
mod pipeline;
mod rewire;

pub use edges::{graph_density, read_edge_list, write_edge_list, Edge, EdgeType, TypedEdgeList};
pub use knn::{
    approx_ip_knn, embedding_kernel_knn, median_pairwise_sigma, penalized_cooccurrence_knn,
    tfidf_cosine_knn, DenseMatrix, DiagnosisMatrix,
};
pub use pipeline::{
    build_graph, degree_cap_stratified, fuse_views, normalize_prune, DiagMethod, GraphBuildConfig,
    NormScheme, Rewire,
};
pub use rewire::{connected_components, gdc_ppr, mst_bridge, ppr_scores, UnionFind};
