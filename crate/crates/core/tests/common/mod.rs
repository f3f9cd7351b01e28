#![allow(dead_code)]

use dgsp::graph::Graph;
use dgsp::rng::StreamRng;
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

pub fn normal_vec(r: &mut StreamRng, n: usize) -> DVector<f64> {
    DVector::from_fn(n, |_, _| r.sample(StandardNormal))
}

pub fn normal_mat(r: &mut StreamRng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| r.sample(StandardNormal))
}

/// Connected graph: a random spanning tree plus up to `extra` chords.
pub fn random_graph(r: &mut StreamRng, n: usize, extra: usize) -> Graph {
    let mut edges: Vec<(usize, usize, f64)> = (1..n).map(|v| (r.random_range(0..v), v, r.random_range(0.2..1.5))).collect();
    for _ in 0..extra {
        let (a, b) = (r.random_range(0..n), r.random_range(0..n));
        let (a, b) = (a.min(b), a.max(b));
        if a != b && !edges.iter().any(|&(u, v, _)| (u.min(v), u.max(v)) == (a, b)) {
            edges.push((a, b, r.random_range(0.2..1.5)));
        }
    }
    Graph::from_edges(n, &edges).unwrap()
}

pub fn permutations(k: usize) -> Vec<Vec<usize>> {
    if k == 0 {
        return vec![vec![]];
    }
    permutations(k - 1)
        .into_iter()
        .flat_map(|p| {
            (0..k).map(move |i| {
                let mut q = p.clone();
                q.insert(i, k - 1);
                q
            })
        })
        .collect()
}

/// Minimum mean squared matching cost over all permutations.
pub fn brute_force_matching(xs: &[DVector<f64>], ys: &[DVector<f64>]) -> f64 {
    permutations(xs.len())
        .iter()
        .map(|p| p.iter().enumerate().map(|(i, &j)| (&xs[i] - &ys[j]).norm_squared()).sum::<f64>())
        .fold(f64::INFINITY, f64::min)
        / xs.len() as f64
}
