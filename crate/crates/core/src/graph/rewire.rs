use crate::{Error, Result};

use super::edges::{EdgeType, TypedEdgeList};
use super::knn::DenseMatrix;

/// Union-find with path compression and union by rank.
pub struct UnionFind {
    parent: Vec<usize>,
    rank: Vec<u8>,
}

impl UnionFind {
    pub fn new(n: usize) -> Self {
        Self { parent: (0..n).collect(), rank: vec![0; n] }
    }

    pub fn find(&mut self, x: usize) -> usize {
        if self.parent[x] != x {
            let root = self.find(self.parent[x]);
            self.parent[x] = root;
        }
        self.parent[x]
    }

    pub fn union(&mut self, a: usize, b: usize) -> bool {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        match self.rank[ra].cmp(&self.rank[rb]) {
            std::cmp::Ordering::Less => self.parent[ra] = rb,
            std::cmp::Ordering::Greater => self.parent[rb] = ra,
            std::cmp::Ordering::Equal => {
                self.parent[rb] = ra;
                self.rank[ra] += 1;
            }
        }
        true
    }
}

/// Connected components of the undirected view, each a sorted node list;
/// components ordered by their smallest member.
pub fn connected_components(e: &TypedEdgeList) -> Vec<Vec<usize>> {
    let n = e.node_count();
    let mut uf = UnionFind::new(n);
    for edge in e.edges() {
        uf.union(edge.src, edge.dst);
    }
    let mut by_root: std::collections::BTreeMap<usize, Vec<usize>> = Default::default();
    for v in 0..n {
        let r = uf.find(v);
        by_root.entry(r).or_default().push(v);
    }
    let mut comps: Vec<Vec<usize>> = by_root.into_values().collect();
    comps.sort_by_key(|c| c[0]);
    comps
}

/// Connect components with minimum-spanning-tree bridges over component
/// centroids in embedding space. Each selected bridge joins the two
/// components' representative nodes (the member closest to its own
/// centroid) in both directions as type-2 edges with weight 1.
pub fn mst_bridge(e: &TypedEdgeList, emb: &DenseMatrix) -> Result<TypedEdgeList> {
    if emb.len() != e.node_count() {
        return Err(Error::Shape(format!(
            "mst_bridge: {} embeddings for {} nodes",
            emb.len(),
            e.node_count()
        )));
    }
    let comps = connected_components(e);
    if comps.len() <= 1 {
        return Ok(e.clone());
    }
    let dim = emb.dim();
    let centroids: Vec<Vec<f64>> = comps
        .iter()
        .map(|members| {
            let mut c = vec![0.0; dim];
            for &m in members {
                for (acc, v) in c.iter_mut().zip(emb.row(m)) {
                    *acc += v;
                }
            }
            for v in &mut c {
                *v /= members.len() as f64;
            }
            c
        })
        .collect();

    // representative: member closest to its component centroid, ties to the
    // lower node index (members are already sorted ascending)
    let reps: Vec<usize> = comps
        .iter()
        .zip(&centroids)
        .map(|(members, c)| {
            let mut best = (f64::INFINITY, members[0]);
            for &m in members {
                let d = sq_dist(emb.row(m), c);
                if d < best.0 {
                    best = (d, m);
                }
            }
            best.1
        })
        .collect();

    // Kruskal over the complete centroid graph
    let c = comps.len();
    let mut pairs: Vec<(f64, usize, usize)> = Vec::with_capacity(c * (c - 1) / 2);
    for i in 0..c {
        for j in (i + 1)..c {
            pairs.push((sq_dist(&centroids[i], &centroids[j]), i, j));
        }
    }
    pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut uf = UnionFind::new(c);
    let mut out = e.clone();
    let mut added = 0;
    for (_, i, j) in pairs {
        if uf.union(i, j) {
            out.push(reps[i], reps[j], 1.0, EdgeType::MstBridge)?;
            out.push(reps[j], reps[i], 1.0, EdgeType::MstBridge)?;
            added += 1;
            if added == c - 1 {
                break;
            }
        }
    }
    Ok(out)
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Personalized PageRank scores for one seed over the row-normalized
/// undirected adjacency, by power iteration to an L1 residual below `tol`.
/// Dangling (isolated) nodes return their mass to the seed, so the score
/// vector always sums to 1.
pub fn ppr_scores(
    nbrs: &[Vec<usize>],
    seed: usize,
    teleport: f64,
    tol: f64,
) -> Result<Vec<f64>> {
    let n = nbrs.len();
    if seed >= n {
        return Err(Error::Graph(format!("ppr seed {seed} out of {n}")));
    }
    if !(0.0..1.0).contains(&teleport) || teleport == 0.0 {
        return Err(Error::Config(format!("ppr teleport must be in (0,1), got {teleport}")));
    }
    let mut pi = vec![0.0; n];
    pi[seed] = 1.0;
    let mut next = vec![0.0; n];
    for _ in 0..100_000 {
        next.iter_mut().for_each(|v| *v = 0.0);
        let mut dangling = 0.0;
        for (u, list) in nbrs.iter().enumerate() {
            if pi[u] == 0.0 {
                continue;
            }
            if list.is_empty() {
                dangling += pi[u];
            } else {
                let share = (1.0 - teleport) * pi[u] / list.len() as f64;
                for &v in list {
                    next[v] += share;
                }
            }
        }
        next[seed] += teleport + (1.0 - teleport) * dangling;
        let residual: f64 = next.iter().zip(&pi).map(|(a, b)| (a - b).abs()).sum();
        std::mem::swap(&mut pi, &mut next);
        if residual < tol {
            return Ok(pi);
        }
    }
    Err(Error::Divergence("ppr power iteration did not converge".into()))
}

/// Graph-diffusion rewiring: for every node, add its `top_k`
/// highest-PPR non-neighbors as type-3 out-edges weighted by the score.
/// Zero-score (unreachable) candidates are never added, so an isolated node
/// contributes nothing.
pub fn gdc_ppr(e: &TypedEdgeList, teleport: f64, top_k: usize) -> Result<TypedEdgeList> {
    let nbrs = e.undirected_neighbors();
    let mut out = e.clone();
    if top_k == 0 {
        return Ok(out);
    }
    for s in 0..e.node_count() {
        let pi = ppr_scores(&nbrs, s, teleport, 1e-8)?;
        let mut cand: Vec<(usize, f64)> = pi
            .iter()
            .enumerate()
            .filter(|&(v, &p)| v != s && p > 0.0 && nbrs[s].binary_search(&v).is_err())
            .map(|(v, &p)| (v, p))
            .collect();
        cand.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
        cand.truncate(top_k);
        for (v, p) in cand {
            out.push(s, v, p, EdgeType::Diffusion)?;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn graph(n: usize, edges: &[(usize, usize)]) -> TypedEdgeList {
        let mut e = TypedEdgeList::new(n);
        for &(s, d) in edges {
            e.push(s, d, 1.0, EdgeType::Diagnosis).unwrap();
        }
        e
    }

    #[test]
    fn connected_graph_is_unchanged_by_mst() {
        let e = graph(3, &[(0, 1), (1, 2)]);
        let emb = DenseMatrix::new(3, 2, vec![0.0; 6]).unwrap();
        let out = mst_bridge(&e, &emb).unwrap();
        assert_eq!(out, e);
    }

    #[test]
    fn two_components_get_exactly_one_bridge_pair() {
        let e = graph(4, &[(0, 1), (2, 3)]);
        let emb = DenseMatrix::new(4, 1, vec![0.0, 1.0, 10.0, 11.0]).unwrap();
        let out = mst_bridge(&e, &emb).unwrap();
        let bridges: Vec<_> =
            out.edges().iter().filter(|e| e.etype == EdgeType::MstBridge).collect();
        assert_eq!(bridges.len(), 2); // one undirected bridge, both directions
        assert_eq!(connected_components(&out).len(), 1);
    }

    #[test]
    fn four_components_match_brute_force_centroid_mst() {
        // components {0},{1},{2},{3} with centroids on a line at 0, 1, 3, 7:
        // MST must pick (0-1), (1-2), (2-3) by distance
        let e = graph(4, &[]);
        let emb = DenseMatrix::new(4, 1, vec![0.0, 1.0, 3.0, 7.0]).unwrap();
        let out = mst_bridge(&e, &emb).unwrap();
        let mut bridges: Vec<(usize, usize)> = out
            .edges()
            .iter()
            .filter(|e| e.etype == EdgeType::MstBridge && e.src < e.dst)
            .map(|e| (e.src, e.dst))
            .collect();
        bridges.sort_unstable();
        assert_eq!(bridges, vec![(0, 1), (1, 2), (2, 3)]);
        assert_eq!(connected_components(&out).len(), 1);
    }

    #[test]
    fn single_node_ppr_concentrates_at_seed() {
        let pi = ppr_scores(&[vec![]], 0, 0.15, 1e-8).unwrap();
        assert!((pi[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn two_cycle_ppr_matches_closed_form() {
        // pi_0 = a / (1 - (1-a)^2), pi_1 = (1-a) pi_0 from the 2x2 system
        let nbrs = vec![vec![1], vec![0]];
        for &a in &[0.15, 0.3, 0.6] {
            let pi = ppr_scores(&nbrs, 0, a, 1e-12).unwrap();
            let expected0 = a / (1.0 - (1.0 - a) * (1.0 - a));
            let expected1 = (1.0 - a) * expected0;
            assert!((pi[0] - expected0).abs() < 1e-9, "alpha {a}: {} vs {expected0}", pi[0]);
            assert!((pi[1] - expected1).abs() < 1e-9);
        }
    }

    #[test]
    fn ppr_scores_sum_to_one() {
        let e = graph(5, &[(0, 1), (1, 2), (2, 3), (3, 0)]); // node 4 isolated
        let nbrs = e.undirected_neighbors();
        for s in 0..5 {
            let pi = ppr_scores(&nbrs, s, 0.15, 1e-10).unwrap();
            let total: f64 = pi.iter().sum();
            assert!((total - 1.0).abs() < 1e-8, "seed {s} sums to {total}");
        }
    }

    #[test]
    fn gdc_adds_typed_shortcuts_and_skips_isolated_nodes() {
        // path 0-1-2-3: node 0 and 3 are 3 hops apart, node 4 isolated
        let e = graph(5, &[(0, 1), (1, 2), (2, 3)]);
        let out = gdc_ppr(&e, 0.15, 1).unwrap();
        let added: Vec<_> =
            out.edges().iter().filter(|e| e.etype == EdgeType::Diffusion).collect();
        assert!(!added.is_empty());
        assert!(added.iter().all(|e| e.src != 4 && e.weight > 0.0));
        // node 0's best non-neighbor is the 2-hop node 2
        let from0 = added.iter().find(|e| e.src == 0).unwrap();
        assert_eq!(from0.dst, 2);
    }

    #[test]
    fn ppr_rejects_bad_teleport() {
        assert!(ppr_scores(&[vec![]], 0, 0.0, 1e-8).is_err());
        assert!(ppr_scores(&[vec![]], 0, 1.0, 1e-8).is_err());
    }
}
