//! Wasserstein-2 distances between distributional signals.

mod simplex;
mod sinkhorn;

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::distrib::{self, DistSignal, Empirical, Gaussian};
use crate::error::{Error, Result};
pub use crate::linalg::spd_sqrt;
pub use sinkhorn::SINKHORN_TOL;

/// Default combined support size accepted by the exact solver.
pub const DEFAULT_EXACT_CAP: usize = 512;
/// Default number of draws per side when a distribution must be sampled.
pub const DEFAULT_BUDGET: usize = 256;
/// Bures trace terms down to this value are treated as rounding and clipped to 0.
pub const BURES_CLIP: f64 = -1e-8;

/// Optimal coupling between two finite supports.
#[derive(Debug, Clone, PartialEq)]
pub struct CouplingPlan {
    /// `plan[(i, j)]` is the mass moved from atom `i` of the first measure to atom `j` of the second.
    pub plan: DMatrix<f64>,
    /// `Σ π_ij ‖x_i − y_j‖²`
    pub cost: f64,
}

impl CouplingPlan {
    pub fn row_sums(&self) -> Vec<f64> {
        self.plan.row_iter().map(|r| r.sum()).collect()
    }

    pub fn col_sums(&self) -> Vec<f64> {
        self.plan.column_iter().map(|c| c.sum()).collect()
    }

    /// Writes the nonzero entries as `i,j,mass` rows.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["i", "j", "mass"])?;
        for j in 0..self.plan.ncols() {
            for i in 0..self.plan.nrows() {
                let mass = self.plan[(i, j)];
                if mass > 0.0 {
                    w.write_record([i.to_string(), j.to_string(), crate::io::format_f64(mass)])?;
                }
            }
        }
        w.flush()?;
        Ok(())
    }
}

fn check_dims(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::DimensionMismatch { expected: a, got: b });
    }
    Ok(())
}

/// `W(μ, δ_y) = √(‖mean(μ) − y‖² + tr cov(μ))`; every coupling with a point mass is the product one.
pub fn w2_delta(mu: &DistSignal, y: &DVector<f64>) -> Result<f64> {
    check_dims(mu.dim(), y.len())?;
    if let DistSignal::Delta(x) = mu {
        return Ok((x - y).norm());
    }
    let (mean, cov) = distrib::moments(mu);
    Ok(((mean - y).norm_squared() + cov.trace().max(0.0)).sqrt())
}

/// Closed form between Gaussians:
/// `‖m₁ − m₂‖² + tr(Σ₁ + Σ₂ − 2(Σ₂^{1/2} Σ₁ Σ₂^{1/2})^{1/2})`.
pub fn w2_gaussian(g1: &Gaussian, g2: &Gaussian) -> Result<f64> {
    check_dims(g1.dim(), g2.dim())?;
    let r2 = spd_sqrt(g2.cov())?;
    let cross = spd_sqrt(&(&r2 * g1.cov() * &r2))?;
    let mut bures = g1.cov().trace() + g2.cov().trace() - 2.0 * cross.trace();
    if bures < 0.0 {
        let scale = g1.cov().trace().max(g2.cov().trace()).max(1.0);
        if bures < BURES_CLIP * scale {
            return Err(Error::NotPsd(bures));
        }
        bures = 0.0;
    }
    Ok(((g1.mean() - g2.mean()).norm_squared() + bures).sqrt())
}

/// Squared Euclidean ground costs between two point lists.
pub fn squared_cost_matrix(xs: &[DVector<f64>], ys: &[DVector<f64>]) -> DMatrix<f64> {
    DMatrix::from_fn(xs.len(), ys.len(), |i, j| (&xs[i] - &ys[j]).norm_squared())
}

/// Exact transport between finite measures under an arbitrary ground cost.
/// Returns the optimal plan and its total cost (not square-rooted).
pub fn exact_transport(a: &[f64], b: &[f64], cost: &DMatrix<f64>, cap: usize) -> Result<CouplingPlan> {
    let size = a.len() + b.len();
    if size > cap {
        return Err(Error::SupportTooLarge { size, cap });
    }
    if cost.shape() != (a.len(), b.len()) {
        return Err(Error::DimensionMismatch { expected: a.len() * b.len(), got: cost.len() });
    }
    let sol = simplex::solve(a, b, cost)?;
    Ok(CouplingPlan { plan: sol.flow, cost: sol.cost })
}

/// Exact W2 between empirical measures, with the default support cap.
pub fn w2_empirical_exact(e1: &Empirical, e2: &Empirical) -> Result<(f64, CouplingPlan)> {
    w2_empirical_exact_with_cap(e1, e2, DEFAULT_EXACT_CAP)
}

pub fn w2_empirical_exact_with_cap(e1: &Empirical, e2: &Empirical, cap: usize) -> Result<(f64, CouplingPlan)> {
    check_dims(e1.dim(), e2.dim())?;
    let cost = squared_cost_matrix(e1.points(), e2.points());
    let plan = exact_transport(e1.weights(), e2.weights(), &cost, cap)?;
    Ok((plan.cost.max(0.0).sqrt(), plan))
}

/// Entropic transport cost `⟨π_reg, C⟩` (a squared distance) for regularisation `reg`.
pub fn w2_sinkhorn(e1: &Empirical, e2: &Empirical, reg: f64, max_iter: usize) -> Result<f64> {
    check_dims(e1.dim(), e2.dim())?;
    // zero-weight atoms carry no mass and would put log(0) in the potentials
    let keep = |e: &Empirical| -> (Vec<DVector<f64>>, Vec<f64>) {
        e.atoms().filter(|(_, w)| *w > 0.0).map(|(p, w)| (p.clone(), w)).unzip()
    };
    let (xs, a) = keep(e1);
    let (ys, b) = keep(e2);
    let cost = squared_cost_matrix(&xs, &ys);
    Ok(sinkhorn::solve(&a, &b, &cost, reg, max_iter)?.cost)
}

/// How [`w2`] computed its answer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum W2Path {
    /// Moment expansion against a point mass.
    DeltaClosedForm,
    /// Bures formula between Gaussians.
    GaussianClosedForm,
    /// Exact transport on the (possibly sampled) finite supports.
    ExactTransport,
    /// Entropic transport above the exact-solver cap.
    Sinkhorn,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct W2Options {
    /// Draws per side for distributions without finite support.
    pub budget: usize,
    /// Required whenever a side has to be sampled.
    pub seed: Option<u64>,
    pub exact_cap: usize,
    /// Sinkhorn regularisation relative to the mean ground cost.
    pub sinkhorn_reg: f64,
    pub sinkhorn_max_iter: usize,
}

impl Default for W2Options {
    fn default() -> Self {
        Self { budget: DEFAULT_BUDGET, seed: None, exact_cap: DEFAULT_EXACT_CAP, sinkhorn_reg: 0.05, sinkhorn_max_iter: 100_000 }
    }
}

impl W2Options {
    pub fn seeded(seed: u64) -> Self {
        Self { seed: Some(seed), ..Self::default() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct W2Value {
    pub distance: f64,
    pub path: W2Path,
}

/// W2 between any two distributional signals.
///
/// Point masses and Gaussian pairs use closed forms. Otherwise finite
/// supports are used as they are and Gaussians/mixtures are replaced by
/// `budget` draws, then solved exactly or, above the cap, by Sinkhorn. Both
/// sides draw from the same seed, so `w2(μ, μ)` is zero and nearby inputs
/// are compared with common random numbers.
pub fn w2(mu1: &DistSignal, mu2: &DistSignal, opts: &W2Options) -> Result<W2Value> {
    check_dims(mu1.dim(), mu2.dim())?;
    if let Some(y) = mu2.as_point() {
        return Ok(W2Value { distance: w2_delta(mu1, y)?, path: W2Path::DeltaClosedForm });
    }
    if let Some(x) = mu1.as_point() {
        return Ok(W2Value { distance: w2_delta(mu2, x)?, path: W2Path::DeltaClosedForm });
    }
    if let (DistSignal::Gaussian(g1), DistSignal::Gaussian(g2)) = (mu1, mu2) {
        return Ok(W2Value { distance: w2_gaussian(g1, g2)?, path: W2Path::GaussianClosedForm });
    }
    let e1 = finite_support(mu1, opts)?;
    let e2 = finite_support(mu2, opts)?;
    if e1.len() + e2.len() <= opts.exact_cap {
        let (d, _) = w2_empirical_exact_with_cap(&e1, &e2, opts.exact_cap)?;
        return Ok(W2Value { distance: d, path: W2Path::ExactTransport });
    }
    let cost = squared_cost_matrix(e1.points(), e2.points());
    let mean_cost = cost.mean().max(1e-300);
    let c2 = w2_sinkhorn(&e1, &e2, opts.sinkhorn_reg * mean_cost, opts.sinkhorn_max_iter)?;
    Ok(W2Value { distance: c2.max(0.0).sqrt(), path: W2Path::Sinkhorn })
}

fn finite_support(mu: &DistSignal, opts: &W2Options) -> Result<Empirical> {
    match mu {
        DistSignal::Delta(x) => Ok(Empirical::dirac(x.clone())),
        DistSignal::Empirical(e) => Ok(e.clone()),
        DistSignal::Gaussian(_) | DistSignal::Mixture(_) => {
            let seed = opts.seed.ok_or(Error::MissingSeed("sampled Wasserstein distance"))?;
            let batch = distrib::sample(mu, opts.budget, crate::rng::derive_seed(seed, 1))?;
            Empirical::uniform(batch.points)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(x: &[f64]) -> DVector<f64> {
        DVector::from_row_slice(x)
    }

    fn uniform(xs: &[f64]) -> Empirical {
        Empirical::uniform(xs.iter().map(|&x| v(&[x])).collect()).unwrap()
    }

    fn gauss(mean: &[f64], cov: DMatrix<f64>) -> Gaussian {
        Gaussian::new(v(mean), cov).unwrap()
    }

    #[test]
    fn delta_examples() {
        let x = v(&[1.0, 2.0, 3.0]);
        let y = v(&[0.0, 2.0, -1.0]);
        assert_eq!(w2_delta(&DistSignal::Delta(x.clone()), &y).unwrap(), (&x - &y).norm());
        let g = DistSignal::Gaussian(gauss(&[1.0, 2.0, 3.0], DMatrix::identity(3, 3)));
        assert!((w2_delta(&g, &x).unwrap() - 3f64.sqrt()).abs() < 1e-15);
        let e = DistSignal::Empirical(uniform(&[0.0, 2.0]));
        assert!((w2_delta(&e, &v(&[1.0])).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn gaussian_examples() {
        let g = gauss(&[0.3, -1.0], DMatrix::from_row_slice(2, 2, &[2.0, 0.4, 0.4, 1.0]));
        assert!(w2_gaussian(&g, &g).unwrap() < 1e-7);
        let a = gauss(&[0.0], DMatrix::identity(1, 1));
        let b = gauss(&[0.0], DMatrix::identity(1, 1) * 4.0);
        assert!((w2_gaussian(&a, &b).unwrap() - 1.0).abs() < 1e-12);
        let cov = DMatrix::from_row_slice(2, 2, &[1.0, 0.2, 0.2, 0.5]);
        let c = gauss(&[1.0, 1.0], cov.clone());
        let d = gauss(&[4.0, 5.0], cov);
        assert!((w2_gaussian(&c, &d).unwrap() - 5.0).abs() < 1e-7);
    }

    #[test]
    fn exact_examples() {
        let (d, plan) = w2_empirical_exact(&uniform(&[0.0, 2.0]), &uniform(&[1.0, 3.0])).unwrap();
        assert!((d - 1.0).abs() < 1e-12);
        assert_eq!(plan.plan, DMatrix::from_row_slice(2, 2, &[0.5, 0.0, 0.0, 0.5]));
        let (d, _) = w2_empirical_exact(&uniform(&[0.0, 1.0, 5.0]), &uniform(&[0.0, 1.0, 5.0])).unwrap();
        assert_eq!(d, 0.0);
        let (d, plan) = w2_empirical_exact(&uniform(&[0.0, 1.0]), &uniform(&[0.5])).unwrap();
        assert!((d - 0.5).abs() < 1e-15);
        assert_eq!(plan.col_sums(), vec![1.0]);
    }

    #[test]
    fn exact_rejects_large_supports() {
        let big = uniform(&(0..300).map(f64::from).collect::<Vec<_>>());
        assert!(matches!(w2_empirical_exact(&big, &big), Err(Error::SupportTooLarge { size: 600, cap: 512 })));
    }

    #[test]
    fn sinkhorn_examples() {
        let e = uniform(&[0.0, 1.0, 2.5, 4.0]);
        for reg in [1e-1, 1e-2] {
            let c = w2_sinkhorn(&e, &e, reg, 100_000).unwrap();
            assert!(c >= 0.0 && c <= reg * 4f64.ln());
        }
        let c = w2_sinkhorn(&uniform(&[0.0, 2.0]), &uniform(&[1.0, 3.0]), 1e-3, 100_000).unwrap();
        assert!((c - 1.0).abs() < 1e-2);
        let c = w2_sinkhorn(&uniform(&[1.5]), &uniform(&[-0.5]), 7.0, 10).unwrap();
        assert!((c - 4.0).abs() < 1e-12);
    }

    #[test]
    fn sinkhorn_cost_shrinks_with_regularisation() {
        let a = uniform(&[0.0, 0.4, 1.7, 3.0, 3.2]);
        let b = uniform(&[0.1, 1.0, 1.1, 2.0, 4.5]);
        let exact = w2_empirical_exact(&a, &b).unwrap().1.cost;
        let costs: Vec<f64> = [2.0, 1.0, 0.3].iter().map(|&r| w2_sinkhorn(&a, &b, r, 100_000).unwrap()).collect();
        assert!(costs[0] >= costs[1] && costs[1] >= costs[2]);
        assert!(costs[2] >= exact - 1e-9 && costs[2] - exact < 0.5 * (costs[0] - exact));
    }

    #[test]
    fn dispatcher_paths() {
        let opts = W2Options::default();
        let a = DistSignal::Delta(v(&[0.0, 0.0]));
        let b = DistSignal::Delta(v(&[3.0, 4.0]));
        let r = w2(&a, &b, &opts).unwrap();
        assert_eq!((r.distance, r.path), (5.0, W2Path::DeltaClosedForm));

        let g1 = DistSignal::Gaussian(gauss(&[0.0], DMatrix::identity(1, 1)));
        let g2 = DistSignal::Gaussian(gauss(&[0.0], DMatrix::identity(1, 1) * 4.0));
        let r = w2(&g1, &g2, &opts).unwrap();
        assert_eq!(r.path, W2Path::GaussianClosedForm);

        let e = DistSignal::Empirical(uniform(&[0.0, 1.0]));
        assert!(matches!(w2(&g1, &e, &opts), Err(Error::MissingSeed(_))));
        let r = w2(&g1, &e, &W2Options::seeded(3)).unwrap();
        assert_eq!(r.path, W2Path::ExactTransport);
    }

    #[test]
    fn gaussian_against_its_own_sample() {
        let g = DistSignal::Gaussian(gauss(&[0.0], DMatrix::identity(1, 1)));
        let opts = |seed| W2Options { budget: 512, exact_cap: 1024, ..W2Options::seeded(seed) };
        let mut total = 0.0;
        for seed in 0..20 {
            let batch = distrib::sample(&g, 512, 1000 + seed).unwrap();
            let e = DistSignal::Empirical(Empirical::uniform(batch.points).unwrap());
            let r = w2(&g, &e, &opts(seed)).unwrap();
            assert_eq!(r.path, W2Path::ExactTransport);
            total += r.distance;
        }
        assert!(total / 20.0 <= 0.15, "mean {}", total / 20.0);
    }

    #[test]
    fn coupling_csv_lists_nonzero_cells() {
        let (_, plan) = w2_empirical_exact(&uniform(&[0.0, 2.0]), &uniform(&[1.0, 3.0])).unwrap();
        let path = std::env::temp_dir().join(format!("dgsp-plan-{}.csv", std::process::id()));
        plan.write_csv(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        std::fs::remove_file(&path).ok();
        assert_eq!(text, "i,j,mass\n0,0,0.5\n1,1,0.5\n");
    }
}
