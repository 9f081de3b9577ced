use std::fmt::Write as _;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::{Error, Result};

/// Edge provenance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum EdgeType {
    Diagnosis = 0,
    Semantic = 1,
    MstBridge = 2,
    Diffusion = 3,
}

impl EdgeType {
    pub fn from_u8(v: u8) -> Result<Self> {
        match v {
            0 => Ok(Self::Diagnosis),
            1 => Ok(Self::Semantic),
            2 => Ok(Self::MstBridge),
            3 => Ok(Self::Diffusion),
            _ => Err(Error::Graph(format!("unknown edge type {v}"))),
        }
    }

    pub fn as_u8(self) -> u8 {
        self as u8
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Edge {
    pub src: usize,
    pub dst: usize,
    pub weight: f64,
    pub etype: EdgeType,
}

/// Directed multigraph with typed, weighted edges over a fixed node set.
/// Self-loops are rejected; parallel edges (e.g. the same pair seen by two
/// views) are allowed and keep their distinct types.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TypedEdgeList {
    node_count: usize,
    edges: Vec<Edge>,
}

impl TypedEdgeList {
    pub fn new(node_count: usize) -> Self {
        Self { node_count, edges: Vec::new() }
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }

    pub fn len(&self) -> usize {
        self.edges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn push(&mut self, src: usize, dst: usize, weight: f64, etype: EdgeType) -> Result<()> {
        if src >= self.node_count || dst >= self.node_count {
            return Err(Error::Graph(format!(
                "edge ({src},{dst}) out of range for {} nodes",
                self.node_count
            )));
        }
        if src == dst {
            return Err(Error::Graph(format!("self-loop on node {src}")));
        }
        if !weight.is_finite() {
            return Err(Error::NonFinite(format!("edge ({src},{dst}) weight {weight}")));
        }
        self.edges.push(Edge { src, dst, weight, etype });
        Ok(())
    }

    pub fn out_degrees(&self) -> Vec<usize> {
        let mut d = vec![0; self.node_count];
        for e in &self.edges {
            d[e.src] += 1;
        }
        d
    }

    pub fn in_degrees(&self) -> Vec<usize> {
        let mut d = vec![0; self.node_count];
        for e in &self.edges {
            d[e.dst] += 1;
        }
        d
    }

    /// Unique undirected neighbor lists (sorted, deduplicated, no self).
    pub fn undirected_neighbors(&self) -> Vec<Vec<usize>> {
        let mut nbrs: Vec<Vec<usize>> = vec![Vec::new(); self.node_count];
        for e in &self.edges {
            nbrs[e.src].push(e.dst);
            nbrs[e.dst].push(e.src);
        }
        for list in &mut nbrs {
            list.sort_unstable();
            list.dedup();
        }
        nbrs
    }

    pub fn max_out_degree(&self) -> usize {
        self.out_degrees().into_iter().max().unwrap_or(0)
    }
}

/// Edge density against the undirected pair count `n(n-1)/2`.
pub fn graph_density(edge_count: usize, n: usize) -> Result<f64> {
    if n < 2 {
        return Err(Error::Graph(format!("density needs n >= 2, got {n}")));
    }
    let pairs = n as f64 * (n as f64 - 1.0) / 2.0;
    Ok(edge_count as f64 / pairs)
}

/// Write `src\tdst\tweight\ttype` lines plus a trailing summary line.
pub fn write_edge_list(path: &Path, e: &TypedEdgeList) -> Result<()> {
    let file = std::fs::File::create(path)?;
    let mut w = BufWriter::new(file);
    let mut buf = String::new();
    for edge in e.edges() {
        buf.clear();
        writeln!(buf, "{}\t{}\t{}\t{}", edge.src, edge.dst, edge.weight, edge.etype.as_u8())
            .expect("string write");
        w.write_all(buf.as_bytes())?;
    }
    let comps = super::connected_components(e).len();
    let density = if e.node_count() >= 2 { graph_density(e.len(), e.node_count())? } else { 0.0 };
    writeln!(
        w,
        "nodes={} edges={} density={} components={}",
        e.node_count(),
        e.len(),
        density,
        comps
    )?;
    Ok(())
}

/// Read an edge list written by [`write_edge_list`].
pub fn read_edge_list(path: &Path) -> Result<TypedEdgeList> {
    let file = std::fs::File::open(path)?;
    let reader = BufReader::new(file);
    let mut rows: Vec<(usize, usize, f64, u8)> = Vec::new();
    let mut node_count: Option<usize> = None;
    for (ln, line) in reader.lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if line.starts_with("nodes=") {
            for field in line.split_whitespace() {
                if let Some(v) = field.strip_prefix("nodes=") {
                    node_count = Some(v.parse().map_err(|_| {
                        Error::Data(format!("bad node count in summary line: {line}"))
                    })?);
                }
            }
            continue;
        }
        let mut it = line.split('\t');
        let parse = |tok: Option<&str>, what: &str| -> Result<String> {
            tok.map(str::to_owned)
                .ok_or_else(|| Error::Data(format!("line {}: missing {what}", ln + 1)))
        };
        let src: usize = parse(it.next(), "src")?
            .parse()
            .map_err(|_| Error::Data(format!("line {}: bad src", ln + 1)))?;
        let dst: usize = parse(it.next(), "dst")?
            .parse()
            .map_err(|_| Error::Data(format!("line {}: bad dst", ln + 1)))?;
        let weight: f64 = parse(it.next(), "weight")?
            .parse()
            .map_err(|_| Error::Data(format!("line {}: bad weight", ln + 1)))?;
        let etype: u8 = parse(it.next(), "type")?
            .parse()
            .map_err(|_| Error::Data(format!("line {}: bad type", ln + 1)))?;
        rows.push((src, dst, weight, etype));
    }
    let node_count =
        node_count.ok_or_else(|| Error::Data("edge list missing summary line".into()))?;
    let mut e = TypedEdgeList::new(node_count);
    for (src, dst, weight, etype) in rows {
        e.push(src, dst, weight, EdgeType::from_u8(etype)?)?;
    }
    Ok(e)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn density_matches_published_arithmetic() {
        // 4-significant-figure checks against the two quoted rows.
        let d1 = graph_density(206_847, 65_347).unwrap() * 1e6;
        assert!((d1 - 96.88).abs() < 0.005, "got {d1}");
        let d2 = graph_density(107_057, 65_347).unwrap() * 1e6;
        assert!((d2 - 50.14).abs() < 0.005, "got {d2}");
    }

    #[test]
    fn density_of_empty_graph_is_zero() {
        assert_eq!(graph_density(0, 10).unwrap(), 0.0);
    }

    #[test]
    fn density_rejects_tiny_node_count() {
        assert!(graph_density(1, 1).is_err());
    }

    #[test]
    fn push_validates_edges() {
        let mut e = TypedEdgeList::new(3);
        assert!(e.push(0, 0, 1.0, EdgeType::Diagnosis).is_err()); // self-loop
        assert!(e.push(0, 3, 1.0, EdgeType::Diagnosis).is_err()); // range
        assert!(e.push(0, 1, f64::NAN, EdgeType::Diagnosis).is_err());
        assert!(e.push(0, 1, 0.5, EdgeType::Diagnosis).is_ok());
    }

    #[test]
    fn edge_list_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.tsv");
        let mut e = TypedEdgeList::new(4);
        e.push(0, 1, 0.125, EdgeType::Diagnosis).unwrap();
        e.push(1, 0, 0.1 + 0.2, EdgeType::Semantic).unwrap();
        e.push(2, 3, 1.0, EdgeType::MstBridge).unwrap();
        write_edge_list(&path, &e).unwrap();
        let back = read_edge_list(&path).unwrap();
        assert_eq!(e, back);
    }

    #[test]
    fn read_rejects_truncated_lines() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.tsv");
        std::fs::write(&path, "0\t1\t0.5\n").unwrap();
        assert!(read_edge_list(&path).is_err());
    }
}
