//! Weighted undirected graphs and their shift operators.

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest vertex count `cartesian_product` will build by default.
pub const DEFAULT_MAX_PRODUCT_VERTICES: usize = 4096;

/// Weighted undirected graph on vertices `0..n`, stored as its adjacency matrix.
///
/// The matrix is symmetric to exact equality, has a zero diagonal and
/// nonnegative entries.
#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    weights: DMatrix<f64>,
}

/// Which matrix represents the graph as a shift operator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GsoKind {
    Adjacency,
    Laplacian,
    NormalizedLaplacian,
}

/// Edge weights for kNN graphs.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum KnnWeighting {
    #[default]
    Unit,
    /// `exp(-d² / (2σ²))`
    Gaussian { sigma: f64 },
}

impl Graph {
    /// Validates and wraps an adjacency matrix.
    pub fn from_weights(weights: DMatrix<f64>) -> Result<Self> {
        let n = weights.nrows();
        if n == 0 {
            return Err(Error::InvalidArgument("graph must have at least one vertex".into()));
        }
        if weights.ncols() != n {
            return Err(Error::DimensionMismatch { expected: n, got: weights.ncols() });
        }
        let mut asym: f64 = 0.0;
        for i in 0..n {
            if weights[(i, i)] != 0.0 {
                return Err(Error::Malformed(format!("self-loop at vertex {i}")));
            }
            for j in 0..n {
                let w = weights[(i, j)];
                if !w.is_finite() || w < 0.0 {
                    return Err(Error::Malformed(format!("invalid weight {w} at ({i}, {j})")));
                }
                asym = asym.max((w - weights[(j, i)]).abs());
            }
        }
        if asym != 0.0 {
            return Err(Error::NotSymmetric(asym));
        }
        Ok(Self { weights })
    }

    /// Graph with no edges.
    pub fn empty(n: usize) -> Result<Self> {
        Self::from_weights(DMatrix::zeros(n, n))
    }

    /// Builds a graph from `(i, j, w)` triples; repeated edges keep the last weight.
    pub fn from_edges(n: usize, edges: &[(usize, usize, f64)]) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidArgument("graph must have at least one vertex".into()));
        }
        let mut w = DMatrix::zeros(n, n);
        for &(i, j, weight) in edges {
            if i >= n {
                return Err(Error::IndexOutOfRange { index: i, size: n });
            }
            if j >= n {
                return Err(Error::IndexOutOfRange { index: j, size: n });
            }
            if i == j {
                return Err(Error::Malformed(format!("self-loop at vertex {i}")));
            }
            w[(i, j)] = weight;
            w[(j, i)] = weight;
        }
        Self::from_weights(w)
    }

    pub fn n(&self) -> usize {
        self.weights.nrows()
    }

    pub fn weights(&self) -> &DMatrix<f64> {
        &self.weights
    }

    /// Edges `(i, j, w)` with `i < j` in row-major order.
    pub fn edges(&self) -> Vec<(usize, usize, f64)> {
        let n = self.n();
        let mut out = Vec::new();
        for i in 0..n {
            for j in (i + 1)..n {
                let w = self.weights[(i, j)];
                if w != 0.0 {
                    out.push((i, j, w));
                }
            }
        }
        out
    }

    pub fn edge_count(&self) -> usize {
        self.edges().len()
    }

    pub fn neighbors(&self, v: usize) -> Vec<usize> {
        (0..self.n()).filter(|&u| self.weights[(v, u)] != 0.0).collect()
    }

    pub fn degrees(&self) -> DVector<f64> {
        DVector::from_iterator(self.n(), self.weights.row_iter().map(|r| r.sum()))
    }

    pub fn max_degree(&self) -> usize {
        (0..self.n()).map(|v| self.neighbors(v).len()).max().unwrap_or(0)
    }

    pub fn is_connected(&self) -> bool {
        let n = self.n();
        let mut seen = vec![false; n];
        let mut stack = vec![0];
        seen[0] = true;
        while let Some(v) = stack.pop() {
            for u in self.neighbors(v) {
                if !seen[u] {
                    seen[u] = true;
                    stack.push(u);
                }
            }
        }
        seen.into_iter().all(|s| s)
    }

    /// Hash of the exact weight bits; equal graphs have equal fingerprints.
    pub fn fingerprint(&self) -> u64 {
        let mut h = DefaultHasher::new();
        self.n().hash(&mut h);
        for w in self.weights.iter() {
            w.to_bits().hash(&mut h);
        }
        h.finish()
    }

    /// Graph shift operator of the requested kind.
    pub fn gso(&self, kind: GsoKind) -> Result<DMatrix<f64>> {
        let n = self.n();
        match kind {
            GsoKind::Adjacency => Ok(self.weights.clone()),
            GsoKind::Laplacian => {
                let mut l = -self.weights.clone();
                for i in 0..n {
                    // diagonal is the exact sum of the off-diagonal magnitudes
                    let d: f64 = (0..n).filter(|&j| j != i).map(|j| self.weights[(i, j)]).sum();
                    l[(i, i)] = d;
                }
                Ok(l)
            }
            GsoKind::NormalizedLaplacian => {
                let deg = self.degrees();
                if let Some(v) = deg.iter().position(|&d| d <= 0.0) {
                    return Err(Error::ZeroDegreeVertex(v));
                }
                let inv_sqrt: Vec<f64> = deg.iter().map(|d| 1.0 / d.sqrt()).collect();
                let mut l = DMatrix::identity(n, n);
                for i in 0..n {
                    for j in 0..n {
                        let w = self.weights[(i, j)];
                        if w != 0.0 {
                            l[(i, j)] = -w * inv_sqrt[i] * inv_sqrt[j];
                        }
                    }
                }
                // symmetric by construction up to rounding of the product order
                let lt = l.transpose();
                Ok((l + lt) * 0.5)
            }
        }
    }

    /// Writes the `{"n": .., "edges": [[i, j, w], ..]}` JSON form.
    pub fn to_file(&self) -> GraphFile {
        GraphFile { n: self.n(), edges: self.edges().into_iter().map(|(i, j, w)| (i, j, w)).collect() }
    }

    pub fn from_file(file: &GraphFile) -> Result<Self> {
        for &(i, j, _) in &file.edges {
            if i >= j {
                return Err(Error::Malformed(format!("edge [{i}, {j}] must satisfy i < j")));
            }
        }
        Self::from_edges(file.n, &file.edges)
    }

    pub fn load_json(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let file: GraphFile = serde_json::from_str(&text)?;
        Self::from_file(&file)
    }

    pub fn save_json(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(&self.to_file())?)?;
        Ok(())
    }

    /// Reads an `n × n` numeric adjacency grid (no header).
    pub fn load_csv_adjacency(path: impl AsRef<Path>) -> Result<Self> {
        let rows = crate::io::read_numeric_csv(path)?;
        let n = rows.len();
        for (r, row) in rows.iter().enumerate() {
            if row.len() != n {
                return Err(Error::Malformed(format!(
                    "adjacency row {} has {} entries, expected {n}",
                    r + 1,
                    row.len()
                )));
            }
        }
        Self::from_weights(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
    }
}

/// JSON form of a graph.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphFile {
    pub n: usize,
    pub edges: Vec<(usize, usize, f64)>,
}

/// Path graph on `n` vertices with unit weights.
pub fn build_path(n: usize) -> Result<Graph> {
    let edges: Vec<_> = (1..n).map(|i| (i - 1, i, 1.0)).collect();
    Graph::from_edges(n, &edges)
}

/// 4-neighbour grid with unit weights, vertices in row-major order.
pub fn build_lattice(rows: usize, cols: usize) -> Result<Graph> {
    if rows == 0 || cols == 0 {
        return Err(Error::InvalidArgument("lattice dimensions must be positive".into()));
    }
    let idx = |r: usize, c: usize| r * cols + c;
    let mut edges = Vec::with_capacity(2 * rows * cols);
    for r in 0..rows {
        for c in 0..cols {
            if c + 1 < cols {
                edges.push((idx(r, c), idx(r, c + 1), 1.0));
            }
            if r + 1 < rows {
                edges.push((idx(r, c), idx(r + 1, c), 1.0));
            }
        }
    }
    Graph::from_edges(rows * cols, &edges)
}

/// k-nearest-neighbour graph under Euclidean distance.
///
/// With `symmetrize` the edge set is the union of the directed kNN relations;
/// otherwise only mutual neighbours are joined. Distance ties go to the
/// smaller vertex index.
pub fn build_knn(points: &[Vec<f64>], k: usize, symmetrize: bool, weighting: KnnWeighting) -> Result<Graph> {
    let n = points.len();
    if n == 0 {
        return Err(Error::InvalidArgument("no points".into()));
    }
    if k == 0 || k >= n {
        return Err(Error::InvalidArgument(format!("k = {k} must satisfy 1 <= k < {n}")));
    }
    let d = points[0].len();
    for p in points {
        if p.len() != d {
            return Err(Error::DimensionMismatch { expected: d, got: p.len() });
        }
    }
    let dist2 = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>();
    let mut dists = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in (i + 1)..n {
            let d2 = dist2(&points[i], &points[j]);
            if d2 == 0.0 {
                return Err(Error::DuplicatePoints(i, j));
            }
            dists[(i, j)] = d2;
            dists[(j, i)] = d2;
        }
    }
    let mut directed = vec![vec![false; n]; n];
    for i in 0..n {
        let mut order: Vec<usize> = (0..n).filter(|&j| j != i).collect();
        order.sort_by(|&a, &b| dists[(i, a)].total_cmp(&dists[(i, b)]).then(a.cmp(&b)));
        for &j in order.iter().take(k) {
            directed[i][j] = true;
        }
    }
    let mut w = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in (i + 1)..n {
            let linked = if symmetrize {
                directed[i][j] || directed[j][i]
            } else {
                directed[i][j] && directed[j][i]
            };
            if linked {
                let weight = match weighting {
                    KnnWeighting::Unit => 1.0,
                    KnnWeighting::Gaussian { sigma } => (-dists[(i, j)] / (2.0 * sigma * sigma)).exp(),
                };
                w[(i, j)] = weight;
                w[(j, i)] = weight;
            }
        }
    }
    Graph::from_weights(w)
}

/// Cartesian product `g □ h`; vertex `(i, j)` has index `i * |h| + j`.
pub fn cartesian_product(g: &Graph, h: &Graph) -> Result<Graph> {
    cartesian_product_with_limit(g, h, DEFAULT_MAX_PRODUCT_VERTICES)
}

pub fn cartesian_product_with_limit(g: &Graph, h: &Graph, limit: usize) -> Result<Graph> {
    let (ng, nh) = (g.n(), h.n());
    let size = ng
        .checked_mul(nh)
        .ok_or(Error::SizeOverflow { size: usize::MAX, limit })?;
    if size > limit {
        return Err(Error::SizeOverflow { size, limit });
    }
    let mut w = DMatrix::zeros(size, size);
    for i in 0..ng {
        for j in 0..nh {
            let v = i * nh + j;
            for (j2, &wh) in h.weights.row(j).iter().enumerate() {
                if wh != 0.0 {
                    w[(v, i * nh + j2)] = wh;
                }
            }
            for (i2, &wg) in g.weights.row(i).iter().enumerate() {
                if wg != 0.0 {
                    w[(v, i2 * nh + j)] = wg;
                }
            }
        }
    }
    Graph::from_weights(w)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lattice_examples() {
        let g = build_lattice(2, 2).unwrap();
        assert_eq!((g.n(), g.edge_count()), (4, 4));
        let p = build_lattice(1, 3).unwrap();
        assert_eq!(p.edges(), vec![(0, 1, 1.0), (1, 2, 1.0)]);
    }

    #[test]
    fn lattice_28_edge_count_matches_enumeration() {
        // oracle: count horizontal and vertical neighbour pairs directly
        let (rows, cols) = (28usize, 28usize);
        let mut count = 0;
        for r in 0..rows {
            for c in 0..cols {
                for (dr, dc) in [(0i64, 1i64), (1, 0)] {
                    let (r2, c2) = (r as i64 + dr, c as i64 + dc);
                    if r2 < rows as i64 && c2 < cols as i64 {
                        count += 1;
                    }
                }
            }
        }
        assert_eq!(count, 1512);
        let g = build_lattice(rows, cols).unwrap();
        assert_eq!((g.n(), g.edge_count()), (784, count));
    }

    #[test]
    fn knn_collinear_points() {
        let pts = vec![vec![0.0], vec![1.0], vec![3.0]];
        let g = build_knn(&pts, 1, true, KnnWeighting::Unit).unwrap();
        assert_eq!(g.edges(), vec![(0, 1, 1.0), (1, 2, 1.0)]);
        // vertex 2 picks 1 but 1 prefers 0, so only {0,1} is mutual
        let m = build_knn(&pts, 1, false, KnnWeighting::Unit).unwrap();
        assert_eq!(m.edges(), vec![(0, 1, 1.0)]);
    }

    #[test]
    fn knn_full_is_complete() {
        let pts = vec![vec![0.0, 0.0], vec![1.0, 0.3], vec![-2.0, 1.0], vec![0.5, 4.0]];
        let g = build_knn(&pts, 3, true, KnnWeighting::Unit).unwrap();
        assert_eq!(g.edge_count(), 6);
    }

    #[test]
    fn knn_ties_prefer_lower_index() {
        // 1 and 2 are equidistant from 0
        let pts = vec![vec![0.0], vec![-1.0], vec![1.0], vec![5.0]];
        let g = build_knn(&pts, 1, true, KnnWeighting::Unit).unwrap();
        assert!(g.weights()[(0, 1)] > 0.0);
    }

    #[test]
    fn knn_duplicates_rejected() {
        let pts = vec![vec![0.0], vec![1.0], vec![0.0]];
        assert!(matches!(build_knn(&pts, 1, true, KnnWeighting::Unit), Err(Error::DuplicatePoints(0, 2))));
    }

    #[test]
    fn product_identities() {
        let p2 = build_path(2).unwrap();
        let c4 = cartesian_product(&p2, &p2).unwrap();
        assert_eq!(c4.edge_count(), 4);
        assert!((0..4).all(|v| c4.neighbors(v).len() == 2));

        let g = build_lattice(2, 3).unwrap();
        let single = Graph::empty(1).unwrap();
        assert_eq!(cartesian_product(&g, &single).unwrap(), g);

        let h = Graph::empty(76).unwrap();
        let p = build_path(10).unwrap();
        assert_eq!(cartesian_product(&h, &p).unwrap().n(), 760);
        assert!(matches!(
            cartesian_product_with_limit(&h, &p, 700),
            Err(Error::SizeOverflow { size: 760, limit: 700 })
        ));
    }

    #[test]
    fn gso_examples() {
        let p2 = build_path(2).unwrap();
        let want = DMatrix::from_row_slice(2, 2, &[1.0, -1.0, -1.0, 1.0]);
        assert_eq!(p2.gso(GsoKind::Laplacian).unwrap(), want);
        assert_eq!(p2.gso(GsoKind::NormalizedLaplacian).unwrap(), want);
        let e = Graph::empty(3).unwrap();
        assert_eq!(e.gso(GsoKind::Adjacency).unwrap(), DMatrix::zeros(3, 3));
        assert!(matches!(e.gso(GsoKind::NormalizedLaplacian), Err(Error::ZeroDegreeVertex(0))));
    }

    #[test]
    fn laplacian_rows_sum_to_zero_exactly() {
        let g = Graph::from_edges(4, &[(0, 1, 0.1), (1, 2, 0.7), (0, 3, 1.3), (2, 3, 0.2), (1, 3, 0.9)]).unwrap();
        let l = g.gso(GsoKind::Laplacian).unwrap();
        for i in 0..4 {
            let off: f64 = (0..4).filter(|&j| j != i).map(|j| l[(i, j)]).sum();
            assert_eq!(off + l[(i, i)], 0.0);
        }
    }

    #[test]
    fn rejects_invalid_weights() {
        let asym = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 2.0, 0.0]);
        assert!(matches!(Graph::from_weights(asym), Err(Error::NotSymmetric(_))));
        let neg = DMatrix::from_row_slice(2, 2, &[0.0, -1.0, -1.0, 0.0]);
        assert!(Graph::from_weights(neg).is_err());
        assert!(Graph::from_file(&GraphFile { n: 2, edges: vec![(1, 0, 1.0)] }).is_err());
    }

    #[test]
    fn json_form_roundtrips() {
        let g = build_lattice(2, 3).unwrap();
        let text = serde_json::to_string(&g.to_file()).unwrap();
        assert!(text.starts_with("{\"n\":6,\"edges\":[[0,1,1.0]"));
        let back: GraphFile = serde_json::from_str(&text).unwrap();
        assert_eq!(Graph::from_file(&back).unwrap(), g);
    }
}
