//! Two-hop in-neighborhood sampling for mini-batch training.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::graph::{EdgeType, TypedEdgeList};
use crate::{Error, Result};

/// In-edge adjacency in CSR form, built once per graph. Entries are sorted
/// by (dst, src, type) so sampling is deterministic given the RNG stream.
pub struct InAdjacency {
    offsets: Vec<usize>,
    entries: Vec<(usize, f64, EdgeType)>, // (src, weight, type) per in-edge
}

impl InAdjacency {
    pub fn build(edges: &TypedEdgeList) -> Self {
        let n = edges.node_count();
        let mut rows: Vec<Vec<(usize, f64, EdgeType)>> = vec![Vec::new(); n];
        for e in edges.edges() {
            rows[e.dst].push((e.src, e.weight, e.etype));
        }
        let mut offsets = Vec::with_capacity(n + 1);
        let mut entries = Vec::new();
        offsets.push(0);
        for row in &mut rows {
            row.sort_by(|a, b| a.0.cmp(&b.0).then(a.2.cmp(&b.2)));
            entries.extend(row.iter().copied());
            offsets.push(entries.len());
        }
        Self { offsets, entries }
    }

    pub fn node_count(&self) -> usize {
        self.offsets.len() - 1
    }

    fn in_edges(&self, v: usize) -> &[(usize, f64, EdgeType)] {
        &self.entries[self.offsets[v]..self.offsets[v + 1]]
    }
}

/// A sampled subgraph: original node ids (seeds first, then hop-1 and
/// hop-2 nodes) plus the sampled edges remapped to local indices.
pub struct SampledSubgraph {
    pub nodes: Vec<usize>,
    pub edges: TypedEdgeList,
}

/// Sample up to `fanout1` in-edges per seed, then up to `fanout2` in-edges
/// per newly discovered hop-1 node. Deterministic given the RNG state.
pub fn sample_neighborhood(
    adj: &InAdjacency,
    seeds: &[usize],
    fanouts: (usize, usize),
    rng: &mut ChaCha8Rng,
) -> Result<SampledSubgraph> {
    let n = adj.node_count();
    for &s in seeds {
        if s >= n {
            return Err(Error::Graph(format!("seed node {s} out of range {n}")));
        }
    }
    if fanouts.0 == 0 || fanouts.1 == 0 {
        return Err(Error::Config("fanouts must be positive".into()));
    }
    let mut local: std::collections::BTreeMap<usize, usize> = Default::default();
    let mut nodes: Vec<usize> = Vec::new();
    for &s in seeds {
        if local.insert(s, nodes.len()).is_none() {
            nodes.push(s);
        }
    }
    let mut picked: Vec<(usize, usize, f64, EdgeType)> = Vec::new(); // (src, dst) original ids

    let expand = |frontier: &[usize],
                      fanout: usize,
                      rng: &mut ChaCha8Rng,
                      picked: &mut Vec<(usize, usize, f64, EdgeType)>|
     -> Vec<usize> {
        let mut new_nodes: Vec<usize> = Vec::new();
        for &v in frontier {
            let in_edges = adj.in_edges(v);
            let chosen: Vec<(usize, f64, EdgeType)> = if in_edges.len() <= fanout {
                in_edges.to_vec()
            } else {
                let mut idx: Vec<usize> = (0..in_edges.len()).collect();
                // partial Fisher-Yates: the first `fanout` slots are a
                // uniform sample without replacement
                for k in 0..fanout {
                    let j = rng.gen_range(k..idx.len());
                    idx.swap(k, j);
                }
                let mut take: Vec<usize> = idx[..fanout].to_vec();
                take.sort_unstable();
                take.into_iter().map(|i| in_edges[i]).collect()
            };
            for (src, w, t) in chosen {
                picked.push((src, v, w, t));
                new_nodes.push(src);
            }
        }
        new_nodes.sort_unstable();
        new_nodes.dedup();
        new_nodes
    };

    let hop1 = expand(seeds, fanouts.0, rng, &mut picked);
    let hop1_new: Vec<usize> = hop1.iter().copied().filter(|v| !local.contains_key(v)).collect();
    for &v in &hop1_new {
        local.insert(v, nodes.len());
        nodes.push(v);
    }
    let hop2 = expand(&hop1_new, fanouts.1, rng, &mut picked);
    for v in hop2 {
        if !local.contains_key(&v) {
            local.insert(v, nodes.len());
            nodes.push(v);
        }
    }

    let mut edges = TypedEdgeList::new(nodes.len());
    for (src, dst, w, t) in picked {
        edges.push(local[&src], local[&dst], w, t)?;
    }
    Ok(SampledSubgraph { nodes, edges })
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;

    use super::*;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn graph(n: usize, list: &[(usize, usize)]) -> TypedEdgeList {
        let mut e = TypedEdgeList::new(n);
        for &(s, d) in list {
            e.push(s, d, 1.0, EdgeType::Diagnosis).unwrap();
        }
        e
    }

    #[test]
    fn small_neighborhood_is_kept_whole() {
        let g = graph(5, &[(1, 0), (2, 0), (3, 0)]);
        let adj = InAdjacency::build(&g);
        let sub = sample_neighborhood(&adj, &[0], (15, 10), &mut rng(1)).unwrap();
        assert_eq!(sub.nodes, vec![0, 1, 2, 3]);
        assert_eq!(sub.edges.len(), 3);
    }

    #[test]
    fn star_center_caps_at_fanout() {
        let leaves: Vec<(usize, usize)> = (1..=40).map(|v| (v, 0)).collect();
        let g = graph(41, &leaves);
        let adj = InAdjacency::build(&g);
        let sub = sample_neighborhood(&adj, &[0], (15, 10), &mut rng(2)).unwrap();
        assert_eq!(sub.edges.len(), 15);
        assert_eq!(sub.nodes.len(), 16);
    }

    #[test]
    fn chain_reaches_two_hops() {
        // a(0) -> b(1) -> c(2); seed {c}
        let g = graph(3, &[(0, 1), (1, 2)]);
        let adj = InAdjacency::build(&g);
        let sub = sample_neighborhood(&adj, &[2], (15, 10), &mut rng(3)).unwrap();
        assert_eq!(sub.nodes, vec![2, 1, 0]);
        assert_eq!(sub.edges.len(), 2);
        // remapped edges: 1->2 becomes local 1->0, 0->1 becomes local 2->1
        let pairs: Vec<(usize, usize)> =
            sub.edges.edges().iter().map(|e| (e.src, e.dst)).collect();
        assert!(pairs.contains(&(1, 0)));
        assert!(pairs.contains(&(2, 1)));
    }

    #[test]
    fn sampling_is_deterministic_under_seed() {
        let leaves: Vec<(usize, usize)> = (1..=40).map(|v| (v, 0)).collect();
        let g = graph(41, &leaves);
        let adj = InAdjacency::build(&g);
        let a = sample_neighborhood(&adj, &[0], (5, 5), &mut rng(7)).unwrap();
        let b = sample_neighborhood(&adj, &[0], (5, 5), &mut rng(7)).unwrap();
        assert_eq!(a.nodes, b.nodes);
        assert_eq!(a.edges, b.edges);
    }

    #[test]
    fn out_of_range_seed_errors() {
        let g = graph(3, &[(0, 1)]);
        let adj = InAdjacency::build(&g);
        assert!(sample_neighborhood(&adj, &[5], (15, 10), &mut rng(1)).is_err());
    }
}
