use serde::{Deserialize, Serialize};

use crate::{Error, Result};

use super::edges::{Edge, TypedEdgeList};
use super::knn::{
    approx_ip_knn, embedding_kernel_knn, penalized_cooccurrence_knn, tfidf_cosine_knn,
    DenseMatrix, DiagnosisMatrix,
};
use super::rewire::{gdc_ppr, mst_bridge};

/// Edge-weight normalization scheme.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NormScheme {
    Log1p,
    ZScore,
}

impl std::str::FromStr for NormScheme {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "log1p" => Ok(Self::Log1p),
            "zscore" => Ok(Self::ZScore),
            other => Err(Error::Config(format!("unknown norm scheme '{other}'"))),
        }
    }
}

/// Normalize edge weights, then drop the globally weakest
/// `floor(prune_frac * |E|)` edges by transformed weight.
pub fn normalize_prune(
    e: &TypedEdgeList,
    scheme: NormScheme,
    prune_frac: f64,
) -> Result<TypedEdgeList> {
    if !(0.0..1.0).contains(&prune_frac) {
        return Err(Error::Config(format!("prune_frac must be in [0,1), got {prune_frac}")));
    }
    let mut out = TypedEdgeList::new(e.node_count());
    if e.is_empty() {
        return Ok(out);
    }
    let mut weights: Vec<f64> = e.edges().iter().map(|edge| edge.weight).collect();
    match scheme {
        NormScheme::Log1p => {
            for w in &mut weights {
                if *w <= -1.0 {
                    return Err(Error::NonFinite(format!("log1p undefined for weight {w}")));
                }
                *w = w.ln_1p();
            }
        }
        NormScheme::ZScore => {
            let n = weights.len() as f64;
            let mean = weights.iter().sum::<f64>() / n;
            let var = weights.iter().map(|w| (w - mean) * (w - mean)).sum::<f64>() / n;
            let sd = var.sqrt();
            for w in &mut weights {
                *w = if sd > 0.0 { (*w - mean) / sd } else { 0.0 };
            }
        }
    }
    let drop = (prune_frac * e.len() as f64).floor() as usize;
    // rank edges by transformed weight; ties resolved by (src, dst, type)
    let mut order: Vec<usize> = (0..e.len()).collect();
    order.sort_by(|&a, &b| {
        weights[a]
            .partial_cmp(&weights[b])
            .unwrap()
            .then(e.edges()[a].src.cmp(&e.edges()[b].src))
            .then(e.edges()[a].dst.cmp(&e.edges()[b].dst))
            .then(e.edges()[a].etype.cmp(&e.edges()[b].etype))
    });
    let mut keep = vec![true; e.len()];
    for &i in order.iter().take(drop) {
        keep[i] = false;
    }
    for (i, edge) in e.edges().iter().enumerate() {
        if keep[i] {
            out.push(edge.src, edge.dst, weights[i], edge.etype)?;
        }
    }
    Ok(out)
}

/// Multiset union of two views; a pair present in both keeps two parallel
/// edges with their distinct types.
pub fn fuse_views(e_diag: &TypedEdgeList, e_bert: &TypedEdgeList) -> Result<TypedEdgeList> {
    if e_diag.node_count() != e_bert.node_count() {
        return Err(Error::Graph(format!(
            "fuse_views: node counts differ ({} vs {})",
            e_diag.node_count(),
            e_bert.node_count()
        )));
    }
    let mut out = e_diag.clone();
    for edge in e_bert.edges() {
        out.push(edge.src, edge.dst, edge.weight, edge.etype)?;
    }
    Ok(out)
}

/// Enforce a maximum out-degree with per-type quotas proportional to type
/// counts (largest-remainder rounding; remainder ties to the lower type
/// index), keeping the heaviest edges within each type. Fully ordered
/// tie-breaks make the result deterministic.
pub fn degree_cap_stratified(e: &TypedEdgeList, max_out: usize) -> Result<TypedEdgeList> {
    if max_out == 0 {
        return Err(Error::Config("degree cap must be >= 1".into()));
    }
    let mut per_src: Vec<Vec<&Edge>> = vec![Vec::new(); e.node_count()];
    for edge in e.edges() {
        per_src[edge.src].push(edge);
    }
    let mut out = TypedEdgeList::new(e.node_count());
    for (src, edges) in per_src.iter().enumerate() {
        if edges.is_empty() {
            continue;
        }
        if edges.len() <= max_out {
            let mut sorted: Vec<&&Edge> = edges.iter().collect();
            sorted.sort_by(|a, b| {
                a.etype
                    .cmp(&b.etype)
                    .then(b.weight.partial_cmp(&a.weight).unwrap())
                    .then(a.dst.cmp(&b.dst))
            });
            for edge in sorted {
                out.push(src, edge.dst, edge.weight, edge.etype)?;
            }
            continue;
        }
        let quotas = type_quotas(edges, max_out);
        for t in 0..4u8 {
            let quota = quotas[t as usize];
            if quota == 0 {
                continue;
            }
            let mut of_type: Vec<&&Edge> =
                edges.iter().filter(|e| e.etype.as_u8() == t).collect();
            of_type.sort_by(|a, b| {
                b.weight.partial_cmp(&a.weight).unwrap().then(a.dst.cmp(&b.dst))
            });
            for edge in of_type.into_iter().take(quota) {
                out.push(src, edge.dst, edge.weight, edge.etype)?;
            }
        }
    }
    Ok(out)
}

/// Largest-remainder quota per edge type for one node's out-edges.
fn type_quotas(edges: &[&Edge], max_out: usize) -> [usize; 4] {
    let mut counts = [0usize; 4];
    for e in edges {
        counts[e.etype.as_u8() as usize] += 1;
    }
    let total: usize = counts.iter().sum();
    let mut quotas = [0usize; 4];
    let mut remainders: Vec<(f64, usize)> = Vec::new();
    let mut assigned = 0;
    for t in 0..4 {
        if counts[t] == 0 {
            continue;
        }
        let share = max_out as f64 * counts[t] as f64 / total as f64;
        quotas[t] = share.floor() as usize;
        assigned += quotas[t];
        remainders.push((share - quotas[t] as f64, t));
    }
    // distribute leftovers by largest remainder, ties to lower type index
    remainders.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
    let mut left = max_out.saturating_sub(assigned);
    for (_, t) in remainders {
        if left == 0 {
            break;
        }
        if quotas[t] < counts[t] {
            quotas[t] += 1;
            left -= 1;
        }
    }
    quotas
}

/// Diagnosis-view similarity strategy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DiagMethod {
    TfIdf,
    InnerProduct,
    Cooccurrence,
}

impl std::str::FromStr for DiagMethod {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tfidf" => Ok(Self::TfIdf),
            "ip" => Ok(Self::InnerProduct),
            "cooc" => Ok(Self::Cooccurrence),
            other => Err(Error::Config(format!("unknown diag method '{other}'"))),
        }
    }
}

/// Optional connectivity rewiring.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Rewire {
    None,
    Mst,
    Gdc,
}

impl std::str::FromStr for Rewire {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Self::None),
            "mst" => Ok(Self::Mst),
            "gdc" => Ok(Self::Gdc),
            other => Err(Error::Config(format!("unknown rewiring '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GraphBuildConfig {
    pub diag_method: DiagMethod,
    pub k_diag: usize,
    pub k_bert: usize,
    pub rewire: Rewire,
    pub norm: NormScheme,
    pub prune_frac: f64,
    pub max_out_degree: usize,
    pub gdc_teleport: f64,
    pub gdc_top_k: usize,
}

impl Default for GraphBuildConfig {
    fn default() -> Self {
        Self {
            diag_method: DiagMethod::InnerProduct,
            k_diag: 3,
            k_bert: 1,
            rewire: Rewire::Mst,
            norm: NormScheme::Log1p,
            prune_frac: 0.30,
            max_out_degree: 15,
            gdc_teleport: 0.15,
            gdc_top_k: 2,
        }
    }
}

/// Full construction pipeline: per-view KNN, per-view normalize/prune,
/// fusion, optional rewiring, stratified degree capping.
pub fn build_graph(
    diag: &DiagnosisMatrix,
    emb: &DenseMatrix,
    cfg: &GraphBuildConfig,
) -> Result<TypedEdgeList> {
    if diag.len() != emb.len() {
        return Err(Error::Shape(format!(
            "cohort mismatch: {} diagnosis rows vs {} embeddings",
            diag.len(),
            emb.len()
        )));
    }
    let e_diag = match cfg.diag_method {
        DiagMethod::TfIdf => tfidf_cosine_knn(diag, cfg.k_diag)?,
        DiagMethod::InnerProduct => approx_ip_knn(&DenseMatrix::from_diagnosis(diag), cfg.k_diag)?,
        DiagMethod::Cooccurrence => penalized_cooccurrence_knn(diag, cfg.k_diag)?,
    };
    let e_bert = embedding_kernel_knn(emb, cfg.k_bert)?;
    let e_diag = normalize_prune(&e_diag, cfg.norm, cfg.prune_frac)?;
    let e_bert = normalize_prune(&e_bert, cfg.norm, cfg.prune_frac)?;
    let fused = fuse_views(&e_diag, &e_bert)?;
    let rewired = match cfg.rewire {
        Rewire::None => fused,
        Rewire::Mst => mst_bridge(&fused, emb)?,
        Rewire::Gdc => gdc_ppr(&fused, cfg.gdc_teleport, cfg.gdc_top_k)?,
    };
    degree_cap_stratified(&rewired, cfg.max_out_degree)
}
