use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::{Error, Result};

use super::edges::{EdgeType, TypedEdgeList};

/// Sparse binary diagnosis-code matrix: one sorted code-index set per patient.
#[derive(Debug, Clone, Default)]
pub struct DiagnosisMatrix {
    rows: Vec<Vec<u32>>,
    code_count: usize,
}

impl DiagnosisMatrix {
    pub fn new(rows: Vec<Vec<u32>>, code_count: usize) -> Result<Self> {
        let mut rows = rows;
        for row in &mut rows {
            row.sort_unstable();
            row.dedup();
            if let Some(&max) = row.last() {
                if max as usize >= code_count {
                    return Err(Error::Data(format!(
                        "code index {max} out of range for {code_count} codes"
                    )));
                }
            }
        }
        Ok(Self { rows, code_count })
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn code_count(&self) -> usize {
        self.code_count
    }

    pub fn row(&self, i: usize) -> &[u32] {
        &self.rows[i]
    }

    pub fn rows(&self) -> &[Vec<u32>] {
        &self.rows
    }
}

/// Dense row-major matrix of N feature vectors (embeddings or densified
/// diagnosis rows).
#[derive(Debug, Clone)]
pub struct DenseMatrix {
    n: usize,
    dim: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    pub fn new(n: usize, dim: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != n * dim {
            return Err(Error::Shape(format!("dense matrix {n}x{dim} vs {} values", data.len())));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("dense matrix entry".into()));
        }
        Ok(Self { n, dim, data })
    }

    pub fn from_diagnosis(d: &DiagnosisMatrix) -> Self {
        let mut data = vec![0.0; d.len() * d.code_count()];
        for (i, row) in d.rows().iter().enumerate() {
            for &c in row {
                data[i * d.code_count() + c as usize] = 1.0;
            }
        }
        Self { n: d.len(), dim: d.code_count(), data }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }
}

/// Keep the `k` highest-scoring candidates; ties resolve to the lower
/// neighbor index.
fn top_k_desc(mut scored: Vec<(usize, f64)>, k: usize) -> Vec<(usize, f64)> {
    scored.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    scored.truncate(k);
    scored
}

/// Diagnosis similarity via IDF-reweighted cosine.
/// `idf(c) = ln(N / (1 + df(c))) + 1`; zero-similarity pairs are excluded;
/// an all-zero row emits no edges (logged, not fatal).
pub fn tfidf_cosine_knn(d: &DiagnosisMatrix, k: usize) -> Result<TypedEdgeList> {
    let n = d.len();
    if n < 2 {
        return Err(Error::Graph(format!("tfidf_cosine_knn needs N >= 2, got {n}")));
    }
    let mut df = vec![0usize; d.code_count()];
    for row in d.rows() {
        for &c in row {
            df[c as usize] += 1;
        }
    }
    let idf_sq: Vec<f64> = df
        .iter()
        .map(|&f| {
            let idf = (n as f64 / (1.0 + f as f64)).ln() + 1.0;
            idf * idf
        })
        .collect();
    let norms: Vec<f64> = d
        .rows()
        .iter()
        .map(|row| row.iter().map(|&c| idf_sq[c as usize]).sum::<f64>().sqrt())
        .collect();

    let mut out = TypedEdgeList::new(n);
    if k == 0 {
        return Ok(out);
    }
    for i in 0..n {
        if d.row(i).is_empty() {
            log::warn!("patient {i} has no diagnosis codes; emitting no edges");
            continue;
        }
        let mut scored = Vec::new();
        for j in 0..n {
            if j == i || d.row(j).is_empty() {
                continue;
            }
            let dot = sparse_weighted_dot(d.row(i), d.row(j), &idf_sq);
            if dot > 0.0 {
                scored.push((j, dot / (norms[i] * norms[j])));
            }
        }
        for (j, w) in top_k_desc(scored, k) {
            out.push(i, j, w, EdgeType::Diagnosis)?;
        }
    }
    Ok(out)
}

fn sparse_weighted_dot(a: &[u32], b: &[u32], w: &[f64]) -> f64 {
    let (mut ai, mut bi) = (0, 0);
    let mut acc = 0.0;
    while ai < a.len() && bi < b.len() {
        match a[ai].cmp(&b[bi]) {
            std::cmp::Ordering::Less => ai += 1,
            std::cmp::Ordering::Greater => bi += 1,
            std::cmp::Ordering::Equal => {
                acc += w[a[ai] as usize];
                ai += 1;
                bi += 1;
            }
        }
    }
    acc
}

/// Cutoff beyond which inner-product KNN switches to random-projection
/// bucketing. At or below it the search is exact and equals brute force.
pub const EXACT_KNN_LIMIT: usize = 100_000;

/// Top-k neighbors by inner product. Exact (equal to brute force) up to
/// [`EXACT_KNN_LIMIT`] rows; beyond that, candidates are restricted to
/// sign-hash buckets from seeded random projections.
pub fn approx_ip_knn(v: &DenseMatrix, k: usize) -> Result<TypedEdgeList> {
    let n = v.len();
    if n < 2 {
        return Err(Error::Graph(format!("approx_ip_knn needs N >= 2, got {n}")));
    }
    let k = k.min(n - 1);
    let mut out = TypedEdgeList::new(n);
    if k == 0 {
        return Ok(out);
    }
    if n <= EXACT_KNN_LIMIT {
        for i in 0..n {
            let ri = v.row(i);
            let scored: Vec<(usize, f64)> = (0..n)
                .filter(|&j| j != i)
                .map(|j| (j, dot(ri, v.row(j))))
                .collect();
            for (j, w) in top_k_desc(scored, k) {
                out.push(i, j, w, EdgeType::Diagnosis)?;
            }
        }
        return Ok(out);
    }
    approx_ip_knn_bucketed(v, k, 16)
}

/// Random-projection bucketing path: rows are hashed by the sign pattern of
/// `n_planes` projections; each query scans its own bucket plus the buckets
/// at Hamming distance one.
pub fn approx_ip_knn_bucketed(v: &DenseMatrix, k: usize, n_planes: usize) -> Result<TypedEdgeList> {
    let n = v.len();
    let k = k.min(n.saturating_sub(1));
    let mut rng = ChaCha8Rng::seed_from_u64(0x5ee0_beef);
    let planes: Vec<Vec<f64>> = (0..n_planes)
        .map(|_| (0..v.dim()).map(|_| rng.gen_range(-1.0..1.0)).collect())
        .collect();
    let hash = |row: &[f64]| -> u64 {
        let mut h = 0u64;
        for (b, p) in planes.iter().enumerate() {
            if dot(row, p) >= 0.0 {
                h |= 1 << b;
            }
        }
        h
    };
    let mut buckets: std::collections::BTreeMap<u64, Vec<usize>> = Default::default();
    let codes: Vec<u64> = (0..n).map(|i| hash(v.row(i))).collect();
    for (i, &c) in codes.iter().enumerate() {
        buckets.entry(c).or_default().push(i);
    }
    let mut out = TypedEdgeList::new(n);
    for i in 0..n {
        let mut cand: Vec<usize> = Vec::new();
        let mut probe = |code: u64| {
            if let Some(b) = buckets.get(&code) {
                cand.extend(b.iter().copied());
            }
        };
        probe(codes[i]);
        for b in 0..n_planes {
            probe(codes[i] ^ (1 << b));
        }
        cand.sort_unstable();
        cand.dedup();
        let ri = v.row(i);
        let scored: Vec<(usize, f64)> =
            cand.into_iter().filter(|&j| j != i).map(|j| (j, dot(ri, v.row(j)))).collect();
        for (j, w) in top_k_desc(scored, k) {
            out.push(i, j, w, EdgeType::Diagnosis)?;
        }
    }
    Ok(out)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Overlap score `s_ij = c_ij^2 / (|D_i| * |D_j|)` where `c_ij` is the
/// shared-code count: rewards overlap, penalizes multi-morbid noise.
pub fn penalized_cooccurrence_knn(d: &DiagnosisMatrix, k: usize) -> Result<TypedEdgeList> {
    let n = d.len();
    if n < 2 {
        return Err(Error::Graph(format!("penalized_cooccurrence_knn needs N >= 2, got {n}")));
    }
    let ones = vec![1.0; d.code_count()];
    let mut out = TypedEdgeList::new(n);
    if k == 0 {
        return Ok(out);
    }
    for i in 0..n {
        if d.row(i).is_empty() {
            continue;
        }
        let mut scored = Vec::new();
        for j in 0..n {
            if j == i || d.row(j).is_empty() {
                continue;
            }
            let c = sparse_weighted_dot(d.row(i), d.row(j), &ones);
            if c > 0.0 {
                scored.push((j, c * c / (d.row(i).len() as f64 * d.row(j).len() as f64)));
            }
        }
        for (j, w) in top_k_desc(scored, k) {
            out.push(i, j, w, EdgeType::Diagnosis)?;
        }
    }
    Ok(out)
}

/// Kernel bandwidth: median pairwise Euclidean distance divided by sqrt(2).
/// Falls back to 1.0 (with a warning) when all rows coincide.
pub fn median_pairwise_sigma(b: &DenseMatrix) -> f64 {
    let n = b.len();
    let mut dists = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in (i + 1)..n {
            dists.push(sq_dist(b.row(i), b.row(j)).sqrt());
        }
    }
    let mid = (dists.len() - 1) / 2;
    dists.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let median = dists[mid];
    if median == 0.0 {
        log::warn!("all embeddings identical; falling back to sigma = 1");
        return 1.0;
    }
    median / std::f64::consts::SQRT_2
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Gaussian-kernel embedding graph: `w_ij = exp(-||b_i - b_j||^2 / (2 sigma^2))`
/// with the median-distance bandwidth, top-k per node.
pub fn embedding_kernel_knn(b: &DenseMatrix, k: usize) -> Result<TypedEdgeList> {
    let n = b.len();
    if n < 2 {
        return Err(Error::Graph(format!("embedding_kernel_knn needs N >= 2, got {n}")));
    }
    let sigma = median_pairwise_sigma(b);
    let denom = 2.0 * sigma * sigma;
    let mut out = TypedEdgeList::new(n);
    if k == 0 {
        return Ok(out);
    }
    for i in 0..n {
        let ri = b.row(i);
        let scored: Vec<(usize, f64)> = (0..n)
            .filter(|&j| j != i)
            .map(|j| (j, (-sq_dist(ri, b.row(j)) / denom).exp()))
            .collect();
        for (j, w) in top_k_desc(scored, k.min(n - 1)) {
            out.push(i, j, w, EdgeType::Semantic)?;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn diag(rows: Vec<Vec<u32>>, codes: usize) -> DiagnosisMatrix {
        DiagnosisMatrix::new(rows, codes).unwrap()
    }

    #[test]
    fn identical_rows_have_cosine_one_both_directions() {
        let d = diag(vec![vec![0, 2], vec![0, 2], vec![1]], 3);
        let e = tfidf_cosine_knn(&d, 2).unwrap();
        let found: Vec<_> = e
            .edges()
            .iter()
            .filter(|e| (e.src, e.dst) == (0, 1) || (e.src, e.dst) == (1, 0))
            .collect();
        assert_eq!(found.len(), 2);
        for edge in found {
            assert!((edge.weight - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn disjoint_code_sets_produce_no_edge() {
        let d = diag(vec![vec![0], vec![1]], 2);
        let e = tfidf_cosine_knn(&d, 3).unwrap();
        assert!(e.is_empty());
    }

    #[test]
    fn tfidf_matches_exhaustive_oracle_on_toy_matrix() {
        // 4 patients, k=2: oracle ranks all pairs by cosine of IDF rows.
        let rows = vec![vec![0, 1, 2], vec![0, 1], vec![2, 3], vec![0, 3]];
        let d = diag(rows.clone(), 4);
        let n = rows.len();
        let mut df = vec![0usize; 4];
        for r in &rows {
            for &c in r {
                df[c as usize] += 1;
            }
        }
        let idf: Vec<f64> =
            df.iter().map(|&f| (n as f64 / (1.0 + f as f64)).ln() + 1.0).collect();
        let dense: Vec<Vec<f64>> = rows
            .iter()
            .map(|r| {
                let mut v = vec![0.0; 4];
                for &c in r {
                    v[c as usize] = idf[c as usize];
                }
                v
            })
            .collect();
        let cos = |a: &[f64], b: &[f64]| {
            let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
            let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
            let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
            dot / (na * nb)
        };
        let mut expected = Vec::new();
        for i in 0..n {
            let mut scored: Vec<(usize, f64)> = (0..n)
                .filter(|&j| j != i)
                .map(|j| (j, cos(&dense[i], &dense[j])))
                .filter(|&(_, s)| s > 0.0)
                .collect();
            scored.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
            scored.truncate(2);
            for (j, s) in scored {
                expected.push((i, j, s));
            }
        }
        let got = tfidf_cosine_knn(&d, 2).unwrap();
        assert_eq!(got.len(), expected.len());
        for (edge, (i, j, s)) in got.edges().iter().zip(&expected) {
            assert_eq!((edge.src, edge.dst), (*i, *j));
            assert!((edge.weight - s).abs() < 1e-12);
        }
    }

    #[test]
    fn ip_knn_k_zero_is_empty() {
        let m = DenseMatrix::new(3, 2, vec![1.0, 0.0, 0.0, 1.0, 1.0, 1.0]).unwrap();
        assert!(approx_ip_knn(&m, 0).unwrap().is_empty());
    }

    #[test]
    fn ip_knn_orthonormal_rows_tie_break_by_index() {
        let m = DenseMatrix::new(
            3,
            3,
            vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0],
        )
        .unwrap();
        let e = approx_ip_knn(&m, 2).unwrap();
        // every off-diagonal inner product is 0; lower indices win
        let from0: Vec<usize> =
            e.edges().iter().filter(|e| e.src == 0).map(|e| e.dst).collect();
        assert_eq!(from0, vec![1, 2]);
        let from2: Vec<usize> =
            e.edges().iter().filter(|e| e.src == 2).map(|e| e.dst).collect();
        assert_eq!(from2, vec![0, 1]);
        for edge in e.edges() {
            assert_eq!(edge.weight, 0.0);
        }
    }

    #[test]
    fn ip_knn_matches_brute_force_on_random_vectors() {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let (n, dim, k) = (6, 4, 3);
        let data: Vec<f64> = (0..n * dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let m = DenseMatrix::new(n, dim, data.clone()).unwrap();
        let e = approx_ip_knn(&m, k).unwrap();
        for i in 0..n {
            let mut scored: Vec<(usize, f64)> = (0..n)
                .filter(|&j| j != i)
                .map(|j| {
                    let d: f64 = (0..dim).map(|c| data[i * dim + c] * data[j * dim + c]).sum();
                    (j, d)
                })
                .collect();
            scored.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
            scored.truncate(k);
            let got: Vec<(usize, f64)> = e
                .edges()
                .iter()
                .filter(|e| e.src == i)
                .map(|e| (e.dst, e.weight))
                .collect();
            assert_eq!(got.len(), scored.len());
            for ((gj, gw), (ej, ew)) in got.iter().zip(&scored) {
                assert_eq!(gj, ej);
                assert!((gw - ew).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn ip_knn_truncates_k_to_n_minus_one() {
        let m = DenseMatrix::new(3, 1, vec![1.0, 2.0, 3.0]).unwrap();
        let e = approx_ip_knn(&m, 10).unwrap();
        assert_eq!(e.len(), 3 * 2);
    }

    #[test]
    fn cooccurrence_identical_single_code_scores_one() {
        let d = diag(vec![vec![5], vec![5]], 6);
        let e = penalized_cooccurrence_knn(&d, 1).unwrap();
        assert_eq!(e.len(), 2);
        for edge in e.edges() {
            assert!((edge.weight - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn cooccurrence_penalizes_multimorbidity() {
        // one shared code with |D_j| = 4 scores 1/4, below an exact match
        let d = diag(vec![vec![0], vec![0, 1, 2, 3], vec![0]], 4);
        let e = penalized_cooccurrence_knn(&d, 2).unwrap();
        let w01 = e.edges().iter().find(|e| (e.src, e.dst) == (0, 1)).unwrap().weight;
        let w02 = e.edges().iter().find(|e| (e.src, e.dst) == (0, 2)).unwrap().weight;
        assert!((w01 - 0.25).abs() < 1e-12);
        assert!((w02 - 1.0).abs() < 1e-12);
        assert!(w01 < w02);
    }

    #[test]
    fn cooccurrence_matches_exhaustive_oracle() {
        let rows = vec![vec![0, 1], vec![1, 2, 3], vec![0], vec![1, 3], vec![2]];
        let d = diag(rows.clone(), 4);
        let e = penalized_cooccurrence_knn(&d, 2).unwrap();
        for i in 0..rows.len() {
            let mut scored: Vec<(usize, f64)> = (0..rows.len())
                .filter(|&j| j != i)
                .filter_map(|j| {
                    let c = rows[i].iter().filter(|c| rows[j].contains(c)).count() as f64;
                    if c > 0.0 {
                        Some((j, c * c / (rows[i].len() as f64 * rows[j].len() as f64)))
                    } else {
                        None
                    }
                })
                .collect();
            scored.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
            scored.truncate(2);
            let got: Vec<(usize, f64)> = e
                .edges()
                .iter()
                .filter(|e| e.src == i)
                .map(|e| (e.dst, e.weight))
                .collect();
            assert_eq!(got.len(), scored.len(), "node {i}");
            for ((gj, gw), (ej, ew)) in got.iter().zip(&scored) {
                assert_eq!(gj, ej);
                assert!((gw - ew).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn kernel_weight_is_one_for_equal_embeddings() {
        let m = DenseMatrix::new(3, 2, vec![1.0, 2.0, 1.0, 2.0, 0.0, 0.0]).unwrap();
        let e = embedding_kernel_knn(&m, 1).unwrap();
        let w01 = e.edges().iter().find(|e| (e.src, e.dst) == (0, 1)).unwrap().weight;
        assert_eq!(w01, 1.0);
    }

    #[test]
    fn kernel_median_pair_weight_is_inverse_e() {
        // distances {1, 2, 3}; median 2; the (1,2) pair sits at the median
        let m = DenseMatrix::new(3, 1, vec![0.0, 1.0, 3.0]).unwrap();
        let e = embedding_kernel_knn(&m, 2).unwrap();
        let w12 = e.edges().iter().find(|e| (e.src, e.dst) == (1, 2)).unwrap().weight;
        assert!((w12 - (-1.0f64).exp()).abs() < 1e-12, "got {w12}");
    }

    #[test]
    fn kernel_matches_hand_evaluation_on_collinear_points() {
        let m = DenseMatrix::new(3, 1, vec![0.0, 1.0, 3.0]).unwrap();
        let e = embedding_kernel_knn(&m, 2).unwrap();
        let sigma = 2.0 / std::f64::consts::SQRT_2;
        let expect = |d: f64| (-(d * d) / (2.0 * sigma * sigma)).exp();
        let get = |s: usize, t: usize| {
            e.edges().iter().find(|e| (e.src, e.dst) == (s, t)).unwrap().weight
        };
        assert!((get(0, 1) - expect(1.0)).abs() < 1e-12);
        assert!((get(0, 2) - expect(3.0)).abs() < 1e-12);
        assert!((get(1, 2) - expect(2.0)).abs() < 1e-12);
    }

    #[test]
    fn kernel_sigma_falls_back_when_rows_identical() {
        let m = DenseMatrix::new(3, 2, vec![1.0; 6]).unwrap();
        assert_eq!(median_pairwise_sigma(&m), 1.0);
        let e = embedding_kernel_knn(&m, 1).unwrap();
        assert!(!e.is_empty());
    }

    #[test]
    fn bucketed_path_finds_close_neighbors() {
        use rand::Rng;
        // two tight clusters; the bucketed path must recover within-cluster
        // neighbors even though it is allowed to be approximate
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 40;
        let mut data = Vec::new();
        for i in 0..n {
            let base = if i % 2 == 0 { 5.0 } else { -5.0 };
            data.extend([base + rng.gen_range(-0.1..0.1), base + rng.gen_range(-0.1..0.1)]);
        }
        let m = DenseMatrix::new(n, 2, data).unwrap();
        let e = approx_ip_knn_bucketed(&m, 3, 8).unwrap();
        for edge in e.edges() {
            assert_eq!(edge.src % 2, edge.dst % 2, "crossed clusters");
        }
    }
}
