//! Log-domain Sinkhorn iterations for entropic transport.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Marginal violation (ℓ1 on the row sums) accepted as converged.
pub const SINKHORN_TOL: f64 = 1e-9;

/// Iterations between marginal checks (a check costs as much as an update).
const CHECK_EVERY: usize = 10;

pub(crate) struct Solution {
    /// `⟨π, C⟩` for the regularised plan.
    pub cost: f64,
}

fn log_sum_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let mx = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if mx == f64::NEG_INFINITY {
        return mx;
    }
    mx + values.map(|v| (v - mx).exp()).sum::<f64>().ln()
}

/// Entropic plan for regularisation `reg`, warm-started through a decreasing
/// sequence of regularisations (ε-scaling) to keep the iteration count low.
/// `a` and `b` must be strictly positive.
pub(crate) fn solve(a: &[f64], b: &[f64], cost: &DMatrix<f64>, reg: f64, max_iter: usize) -> Result<Solution> {
    if !(reg > 0.0) {
        return Err(Error::InvalidArgument(format!("regularisation must be positive, got {reg}")));
    }
    let (m, n) = cost.shape();
    let log_a: Vec<f64> = a.iter().map(|x| x.ln()).collect();
    let log_b: Vec<f64> = b.iter().map(|x| x.ln()).collect();
    let mut f = vec![0.0; m];
    let mut g = vec![0.0; n];

    let mut schedule = Vec::new();
    let mut eps = cost.amax().max(reg);
    while eps > reg {
        schedule.push(eps);
        eps *= 0.5;
    }
    schedule.push(reg);

    let mut iters = 0;
    let mut violation = f64::INFINITY;
    for (stage, &eps) in schedule.iter().enumerate() {
        let last = stage + 1 == schedule.len();
        let tol = if last { SINKHORN_TOL } else { 1e-6 };
        loop {
            for i in 0..m {
                let row = (0..n).map(|j| (g[j] - cost[(i, j)]) / eps);
                f[i] = eps * (log_a[i] - log_sum_exp(row));
            }
            for j in 0..n {
                let col = (0..m).map(|i| (f[i] - cost[(i, j)]) / eps);
                g[j] = eps * (log_b[j] - log_sum_exp(col));
            }
            iters += 1;
            if iters % CHECK_EVERY != 0 && iters < max_iter {
                continue;
            }
            // columns are exact after the g update; measure the rows
            violation = (0..m)
                .map(|i| {
                    let r: f64 = (0..n).map(|j| ((f[i] + g[j] - cost[(i, j)]) / eps).exp()).sum();
                    (r - a[i]).abs()
                })
                .sum();
            if violation < tol {
                break;
            }
            if iters >= max_iter {
                return Err(Error::NotConverged { what: "Sinkhorn", residual: violation });
            }
        }
    }
    debug_assert!(violation < SINKHORN_TOL);
    let plan = DMatrix::from_fn(m, n, |i, j| ((f[i] + g[j] - cost[(i, j)]) / reg).exp());
    let cost = plan.iter().zip(cost.iter()).map(|(p, c)| p * c).sum();
    Ok(Solution { cost })
}
