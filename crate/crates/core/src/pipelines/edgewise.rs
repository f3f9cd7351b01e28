//! Edgewise Gaussian signal model: a bivariate Gaussian per edge, sampled
//! along an acyclic orientation with a single root.

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector, Matrix2, Vector2};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::distrib::covariance_regularization;
use crate::error::{Error, Result};
use crate::graph::{Graph, GraphFile};
use crate::rng;

/// Joint Gaussian of `(x_tail, x_head)` for one directed edge.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeGaussian {
    pub tail: usize,
    pub head: usize,
    pub mean: Vector2<f64>,
    pub cov: Matrix2<f64>,
}

impl EdgeGaussian {
    /// Mean and variance of `x_head` given `x_tail = t`.
    pub fn conditional(&self, t: f64) -> (f64, f64) {
        let (c00, c01, c11) = (self.cov[(0, 0)], self.cov[(0, 1)], self.cov[(1, 1)]);
        let gain = c01 / c00;
        (self.mean[1] + gain * (t - self.mean[0]), (c11 - gain * c01).max(0.0))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgewiseModel {
    pub graph: GraphFile,
    pub root: usize,
    /// Vertices in sampling order, starting at the root.
    pub order: Vec<usize>,
    /// One entry per graph edge, oriented from earlier to later in `order`.
    pub edges: Vec<EdgeGaussian>,
    /// Per-vertex `(mean, variance)`.
    pub marginals: Vec<(f64, f64)>,
    /// Edge indices entering each vertex.
    pub incoming: Vec<Vec<usize>>,
}

/// Breadth-first order from `root`.
fn bfs_order(g: &Graph, root: usize) -> Vec<usize> {
    let mut seen = vec![false; g.n()];
    let mut order = Vec::with_capacity(g.n());
    let mut queue = VecDeque::from([root]);
    seen[root] = true;
    while let Some(v) = queue.pop_front() {
        order.push(v);
        for u in g.neighbors(v) {
            if !seen[u] {
                seen[u] = true;
                queue.push_back(u);
            }
        }
    }
    order
}

pub fn fit_edgewise(samples: &[DVector<f64>], g: &Graph) -> Result<EdgewiseModel> {
    fit_edgewise_rooted(samples, g, 0)
}

/// Maximum-likelihood edge Gaussians with the orientation given by
/// breadth-first order from `root`.
pub fn fit_edgewise_rooted(samples: &[DVector<f64>], g: &Graph, root: usize) -> Result<EdgewiseModel> {
    if samples.len() < 2 {
        return Err(Error::TooFewSamples { need: 2, got: samples.len() });
    }
    let n = g.n();
    if let Some(s) = samples.iter().find(|s| s.len() != n) {
        return Err(Error::DimensionMismatch { expected: n, got: s.len() });
    }
    if root >= n {
        return Err(Error::IndexOutOfRange { index: root, size: n });
    }
    if !g.is_connected() {
        return Err(Error::InvalidArgument("edgewise model needs a connected graph".into()));
    }
    let order = bfs_order(g, root);
    let mut rank = vec![0; n];
    for (k, &v) in order.iter().enumerate() {
        rank[v] = k;
    }

    let count = samples.len() as f64;
    let data = DMatrix::from_columns(samples);
    let means: Vec<f64> = (0..n).map(|v| data.row(v).sum() / count).collect();
    let centered = DMatrix::from_fn(n, samples.len(), |v, s| data[(v, s)] - means[v]);
    let moment = |a: usize, b: usize| centered.row(a).dot(&centered.row(b)) / count;
    let marginals = (0..n).map(|v| (means[v], moment(v, v))).collect();

    let mut edges = Vec::new();
    let mut incoming = vec![Vec::new(); n];
    for (a, b, _) in g.edges() {
        let (tail, head) = if rank[a] < rank[b] { (a, b) } else { (b, a) };
        let mut cov = Matrix2::new(moment(tail, tail), moment(tail, head), moment(tail, head), moment(head, head));
        let eps = covariance_regularization(&DMatrix::from_column_slice(2, 2, cov.as_slice()));
        cov[(0, 0)] += eps;
        cov[(1, 1)] += eps;
        incoming[head].push(edges.len());
        edges.push(EdgeGaussian { tail, head, mean: Vector2::new(means[tail], means[head]), cov });
    }
    Ok(EdgewiseModel { graph: g.to_file(), root, order, edges, marginals, incoming })
}

impl EdgewiseModel {
    pub fn n(&self) -> usize {
        self.marginals.len()
    }

    /// One signal: the root from its marginal, then every later vertex as the
    /// average of independent conditional draws, one per incoming edge.
    pub fn sample(&self, seed: u64, index: u64) -> DVector<f64> {
        let mut r = rng::stream(seed, index);
        let mut x = DVector::zeros(self.n());
        for &v in &self.order {
            if self.incoming[v].is_empty() {
                let (m, var) = self.marginals[v];
                x[v] = m + var.sqrt() * r.sample::<f64, _>(StandardNormal);
                continue;
            }
            let mut total = 0.0;
            for &e in &self.incoming[v] {
                let edge = &self.edges[e];
                let (m, var) = edge.conditional(x[edge.tail]);
                total += m + var.sqrt() * r.sample::<f64, _>(StandardNormal);
            }
            x[v] = total / self.incoming[v].len() as f64;
        }
        x
    }

    pub fn samples(&self, count: usize, seed: u64) -> Vec<DVector<f64>> {
        (0..count as u64).into_par_iter().map(|i| self.sample(seed, i)).collect()
    }
}

/// Indicator of `signal[i] ≥ level`.
pub fn threshold(signal: &DVector<f64>, level: f64) -> DVector<f64> {
    signal.map(|v| if v >= level { 1.0 } else { 0.0 })
}

/// Baseline augmentation: i.i.d. Gaussian noise of the given variance on every pixel.
pub fn add_pixel_noise(images: &[DVector<f64>], variance: f64, seed: u64) -> Result<Vec<DVector<f64>>> {
    if !(variance >= 0.0 && variance.is_finite()) {
        return Err(Error::InvalidArgument(format!("noise variance must be finite and nonnegative, got {variance}")));
    }
    let sd = variance.sqrt();
    Ok(images
        .par_iter()
        .enumerate()
        .map(|(i, x)| {
            let mut r = rng::stream(seed, i as u64);
            x.map(|v| v + sd * r.sample::<f64, _>(StandardNormal))
        })
        .collect())
}

/// Lattice images made of one to three Gaussian bumps plus a little noise.
pub fn synthetic_images(rows: usize, cols: usize, count: usize, seed: u64) -> Vec<DVector<f64>> {
    (0..count as u64)
        .into_par_iter()
        .map(|i| {
            let mut r = rng::stream(seed, i);
            let bumps = r.random_range(1..=3);
            let centers: Vec<(f64, f64, f64)> = (0..bumps)
                .map(|_| {
                    let width = 0.15 * rows.max(cols) as f64 * r.random_range(0.7..1.3);
                    (r.random_range(0.0..rows as f64), r.random_range(0.0..cols as f64), width)
                })
                .collect();
            DVector::from_fn(rows * cols, |k, _| {
                let (y, x) = ((k / cols) as f64, (k % cols) as f64);
                let v: f64 = centers.iter().map(|(cy, cx, w)| (-((y - cy).powi(2) + (x - cx).powi(2)) / (2.0 * w * w)).exp()).sum();
                v + 0.05 * r.sample::<f64, _>(StandardNormal)
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{build_lattice, build_path};

    #[test]
    fn pixel_noise_has_requested_variance() {
        let images = vec![DVector::zeros(400); 50];
        let noisy = add_pixel_noise(&images, 0.1, 3).unwrap();
        let values: Vec<f64> = noisy.iter().flat_map(|x| x.iter().copied()).collect();
        let var = values.iter().map(|v| v * v).sum::<f64>() / values.len() as f64;
        assert!((var - 0.1).abs() < 0.005, "{var}");
        assert_eq!(add_pixel_noise(&images, 0.0, 3).unwrap(), images);
        assert!(add_pixel_noise(&images, -1.0, 3).is_err());
    }

    fn correlated_pairs(count: usize, seed: u64) -> Vec<DVector<f64>> {
        // x0 ~ N(1, 1), x1 = 0.8 x0 + N(0, 0.36) - 1
        (0..count as u64)
            .map(|i| {
                let mut r = rng::stream(seed, i);
                let a: f64 = r.sample(StandardNormal);
                let b: f64 = r.sample(StandardNormal);
                DVector::from_vec(vec![1.0 + a, 0.8 * (1.0 + a) + 0.6 * b - 1.0])
            })
            .collect()
    }

    #[test]
    fn fits_known_edge_gaussian() {
        let model = fit_edgewise(&correlated_pairs(10_000, 1), &build_path(2).unwrap()).unwrap();
        let e = &model.edges[0];
        assert_eq!((e.tail, e.head), (0, 1));
        let truth = Matrix2::new(1.0, 0.8, 0.8, 1.0);
        assert!((e.cov - truth).norm() < 0.1);
        assert!((e.mean - Vector2::new(1.0, -0.2)).norm() < 0.1);
    }

    #[test]
    fn constant_samples_are_regularised() {
        let s = vec![DVector::from_vec(vec![2.0, 2.0, 2.0]); 5];
        let model = fit_edgewise(&s, &build_path(3).unwrap()).unwrap();
        for e in &model.edges {
            assert!(e.cov[(0, 0)] > 0.0 && e.cov[(1, 1)] > 0.0);
            assert_eq!(e.cov[(0, 1)], 0.0);
        }
        assert!(fit_edgewise(&s[..1], &build_path(3).unwrap()).is_err());
    }

    #[test]
    fn lattice_orientation() {
        let g = build_lattice(2, 2).unwrap();
        let s: Vec<_> = (0..10).map(|i| DVector::from_fn(4, |v, _| ((i * 7 + v * 3) % 5) as f64)).collect();
        let model = fit_edgewise(&s, &g).unwrap();
        assert_eq!(model.edges.len(), 4);
        assert_eq!(model.order[0], 0);
        assert!(model.incoming[0].is_empty());
        assert_eq!(model.incoming[3].len(), 2);
    }

    #[test]
    fn chain_sampling_reproduces_edge_moments() {
        let model = fit_edgewise(&correlated_pairs(5_000, 2), &build_path(2).unwrap()).unwrap();
        let draws = model.samples(100_000, 9);
        let n = draws.len() as f64;
        let m0 = draws.iter().map(|d| d[0]).sum::<f64>() / n;
        let m1 = draws.iter().map(|d| d[1]).sum::<f64>() / n;
        let c01 = draws.iter().map(|d| (d[0] - m0) * (d[1] - m1)).sum::<f64>() / n;
        let e = &model.edges[0];
        let se = |var: f64| 3.0 * (var / n).sqrt();
        assert!((m0 - e.mean[0]).abs() < se(e.cov[(0, 0)]));
        assert!((m1 - e.mean[1]).abs() < se(e.cov[(1, 1)]));
        // var of a sample covariance ≈ (c00 c11 + c01²) / n
        let c = e.cov;
        assert!((c01 - c[(0, 1)]).abs() < 3.0 * ((c[(0, 0)] * c[(1, 1)] + c[(0, 1)].powi(2)) / n).sqrt());
    }

    #[test]
    fn sampling_is_deterministic() {
        let model = fit_edgewise(&synthetic_images(3, 3, 20, 4), &build_lattice(3, 3).unwrap()).unwrap();
        assert_eq!(model.sample(5, 2), model.sample(5, 2));
        assert_ne!(model.sample(5, 2), model.sample(5, 3));
    }

    #[test]
    fn threshold_examples() {
        let x = DVector::from_vec(vec![0.1, 0.5, 0.9, 0.3]);
        assert_eq!(threshold(&x, 1.0).sum(), 0.0);
        assert_eq!(threshold(&x, 0.0).sum(), 4.0);
        assert_eq!(threshold(&x, 0.4).sum(), 2.0);
    }
}
