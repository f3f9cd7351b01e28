//! Fast invariant checks on exact code paths, used by `dgsp selftest`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::distrib::{DistSignal, Empirical, Gaussian};
use crate::error::Result;
use crate::graph::{Graph, GsoKind};
use crate::operators::{self, Band, FilterMap, OperatorPair, PushOptions};
use crate::rng::{self, StreamRng};
use crate::sags::{GraphDistribution, Sags};
use crate::sampling::{self, ProjectionOperatorPair, SampleSet};
use crate::wasserstein::{self, W2Options};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SelftestRow {
    pub name: &'static str,
    pub passed: bool,
    /// Worst observed violation (0 when exact).
    pub worst: f64,
    pub tolerance: f64,
}

fn normal_vec(r: &mut StreamRng, n: usize) -> DVector<f64> {
    DVector::from_fn(n, |_, _| r.sample(StandardNormal))
}

fn random_graph(r: &mut StreamRng, n: usize) -> Result<Graph> {
    let mut edges: Vec<(usize, usize, f64)> = (1..n).map(|v| (r.random_range(0..v), v, r.random_range(0.5..2.0))).collect();
    for _ in 0..n {
        let (a, b) = (r.random_range(0..n), r.random_range(0..n));
        if a != b && !edges.iter().any(|&(u, v, _)| (u, v) == (a.min(b), a.max(b)) || (u, v) == (a.max(b), a.min(b))) {
            edges.push((a.min(b), a.max(b), r.random_range(0.5..2.0)));
        }
    }
    Graph::from_edges(n, &edges)
}

fn random_pair(r: &mut StreamRng, n: usize) -> Result<OperatorPair> {
    let graphs = vec![(random_graph(r, n)?, 0.3), (random_graph(r, n)?, 0.7)];
    let coeffs = (0..3).map(|_| r.random_range(-1.0..1.0)).collect();
    Ok(OperatorPair::new(Sags::Constant(GraphDistribution::new(graphs)?), FilterMap::Polynomial { coeffs, gso: GsoKind::Laplacian }))
}

fn permutations(k: usize) -> Vec<Vec<usize>> {
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

fn row(name: &'static str, worst: f64, tolerance: f64) -> SelftestRow {
    SelftestRow { name, passed: worst <= tolerance, worst, tolerance }
}

/// Runs every check; failures are reported as rows, errors abort.
pub fn run_selftest(seed: u64) -> Result<Vec<SelftestRow>> {
    let mut r = rng::stream(seed, 0);
    let mut rows = Vec::new();
    let w2_opts = W2Options::default();

    let mut worst: f64 = 0.0;
    for _ in 0..200 {
        let n = r.random_range(1..=20);
        let (x, y) = (normal_vec(&mut r, n), normal_vec(&mut r, n));
        let d = wasserstein::w2(&DistSignal::Delta(x.clone()), &DistSignal::Delta(y.clone()), &w2_opts)?.distance;
        worst = worst.max((d - (x - y).norm()).abs());
    }
    rows.push(row("point masses embed isometrically", worst, 1e-12));

    let g1 = Gaussian::new(DVector::zeros(1), DMatrix::identity(1, 1))?;
    let g2 = Gaussian::new(DVector::zeros(1), DMatrix::identity(1, 1) * 4.0)?;
    rows.push(row("Gaussian closed form N(0,1) to N(0,4)", (wasserstein::w2_gaussian(&g1, &g2)? - 1.0).abs(), 1e-9));

    let mut worst: f64 = 0.0;
    for _ in 0..30 {
        let k = r.random_range(1..=5);
        let xs: Vec<DVector<f64>> = (0..k).map(|_| normal_vec(&mut r, 2)).collect();
        let ys: Vec<DVector<f64>> = (0..k).map(|_| normal_vec(&mut r, 2)).collect();
        let cost = wasserstein::squared_cost_matrix(&xs, &ys);
        let brute = permutations(k).iter().map(|p| p.iter().enumerate().map(|(i, &j)| cost[(i, j)]).sum::<f64>()).fold(f64::INFINITY, f64::min)
            / k as f64;
        let (d, _) = wasserstein::w2_empirical_exact(&Empirical::uniform(xs)?, &Empirical::uniform(ys)?)?;
        worst = worst.max((d * d - brute).abs());
    }
    rows.push(row("exact transport matches permutation search", worst, 1e-10));

    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let n = r.random_range(2..=10);
        let g = random_graph(&mut r, n)?;
        let x = normal_vec(&mut r, n);
        for filter in [
            FilterMap::Fourier { gso: GsoKind::Laplacian },
            FilterMap::Polynomial { coeffs: vec![0.2, -0.5, 0.1], gso: GsoKind::Adjacency },
            FilterMap::Projection { band: Band::IndexRange { lo: 0, hi: n / 2 }, gso: GsoKind::NormalizedLaplacian },
        ] {
            let m = filter.evaluate(&g)?;
            let c = OperatorPair::new(Sags::classical(g.clone()), filter);
            let out = operators::pushforward(&c, &DistSignal::Delta(x.clone()), &PushOptions::default())?;
            let p = out.as_point().expect("one graph gives one point");
            worst = worst.max((p - &m * &x).amax());
        }
    }
    rows.push(row("single-graph pushforward is the matrix product", worst, 1e-12));

    let mut worst: f64 = 0.0;
    for &s in &[-2.0, 0.0, 1.0, 3.0] {
        let n = r.random_range(2..=8);
        let (c1, c2) = (random_pair(&mut r, n)?, random_pair(&mut r, n)?);
        let x = normal_vec(&mut r, n);
        let scaled = operators::scalar_mul(s, &c1);
        let atoms = operators::boxplus_atoms(&scaled, &c2, &DistSignal::Delta(x.clone()), &PushOptions::default())?;
        let lhs = atoms.iter().fold(DVector::zeros(n), |acc, a| acc + (&a.first + &a.second) * a.weight);
        let rhs = operators::cond_expectation(&c1, &x)? * s + operators::cond_expectation(&c2, &x)?;
        worst = worst.max((lhs - rhs).amax());
    }
    rows.push(row("expectation of a combined filter is linear", worst, 1e-10));

    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let n = r.random_range(2..=8);
        let graphs = vec![(random_graph(&mut r, n)?, 0.5), (random_graph(&mut r, n)?, 0.5)];
        let band = Band::IndexRange { lo: 0, hi: r.random_range(0..n) };
        let p = ProjectionOperatorPair::new(OperatorPair::new(
            Sags::Constant(GraphDistribution::new(graphs)?),
            FilterMap::Projection { band, gso: GsoKind::Laplacian },
        ))?;
        let x = normal_vec(&mut r, n);
        let deficit = sampling::invariance_deficit(&DistSignal::Delta(x.clone()), &p, &w2_opts)?;
        let gap = (&x - operators::cond_expectation(p.base(), &x)?).norm();
        worst = worst.max(gap - deficit);
    }
    rows.push(row("projection deficit bounds the expectation gap", worst, 1e-9));

    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let n = r.random_range(4..=12);
        let m = r.random_range(1..=3);
        let basis = DMatrix::from_fn(n, m, |_, _| r.sample(StandardNormal));
        let x = &basis * normal_vec(&mut r, m);
        let rows_v = sampling::choose_sample_set(&basis, 0)?;
        let rec = sampling::recover_bandlimited(&basis, &SampleSet::observe(&x, &rows_v)?)?;
        worst = worst.max((rec.signal - x).amax());
    }
    rows.push(row("bandlimited signals are recovered from m samples", worst, 1e-8));

    let c = random_pair(&mut r, 5)?;
    let mu = DistSignal::Gaussian(Gaussian::standard(5));
    let opts = PushOptions { budget: 64, seed: Some(seed), mode: operators::PushMode::ForceSampling };
    let a = operators::pushforward(&c, &mu, &opts)?;
    let b = operators::pushforward(&c, &mu, &opts)?;
    rows.push(row("sampled pushforward is reproducible", if a == b { 0.0 } else { f64::INFINITY }, 0.0));

    Ok(rows)
}
