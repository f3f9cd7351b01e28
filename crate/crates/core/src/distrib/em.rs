//! Gaussian mixture fitting: EM from k-means++ starts, order chosen by BIC.

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::Rng;

use super::{weighted_moments, Gaussian, Mixture};
use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EmConfig {
    /// Stop when the mean log-likelihood improves by less than this.
    pub tol: f64,
    pub max_iter: usize,
    /// Independent k-means++ starts per order; the best likelihood wins.
    pub n_init: usize,
    /// Covariance floor relative to the average per-coordinate variance of the data.
    pub reg_covar: f64,
}

impl Default for EmConfig {
    fn default() -> Self {
        Self { tol: 1e-7, max_iter: 500, n_init: 3, reg_covar: 1e-6 }
    }
}

/// Fits mixtures with `1..=k_max` components to an unweighted sample and
/// returns the one with the lowest BIC, components sorted by weight.
pub fn fit_mixture_em(points: &[DVector<f64>], k_max: usize, seed: u64) -> Result<Mixture> {
    let w = vec![1.0 / points.len().max(1) as f64; points.len()];
    fit_mixture_em_weighted(points, &w, k_max, seed, EmConfig::default())
}

/// Weighted variant; `weights` are normalised internally. The BIC sample
/// size is the number of points.
pub fn fit_mixture_em_weighted(
    points: &[DVector<f64>],
    weights: &[f64],
    k_max: usize,
    seed: u64,
    config: EmConfig,
) -> Result<Mixture> {
    if k_max == 0 {
        return Err(Error::InvalidArgument("k_max must be at least 1".into()));
    }
    if points.len() < k_max {
        return Err(Error::TooFewSamples { need: k_max, got: points.len() });
    }
    if weights.len() != points.len() {
        return Err(Error::DimensionMismatch { expected: points.len(), got: weights.len() });
    }
    let d = points[0].len();
    if let Some(p) = points.iter().find(|p| p.len() != d) {
        return Err(Error::DimensionMismatch { expected: d, got: p.len() });
    }
    let total: f64 = weights.iter().sum();
    if !(total > 0.0) || weights.iter().any(|w| *w < 0.0) {
        return Err(Error::InvalidArgument("weights must be nonnegative with positive sum".into()));
    }
    let w: Vec<f64> = weights.iter().map(|x| x / total).collect();

    let (_, global_cov) = weighted_moments(points, &w);
    let floor = (config.reg_covar * global_cov.trace() / d as f64).max(1e-12);
    let n = points.len() as f64;

    let mut best: Option<(f64, Fit)> = None;
    let mut last_err = None;
    for k in 1..=k_max {
        let fit = (0..config.n_init.max(1))
            .filter_map(|start| {
                let s = rng::derive_seed(seed, (k as u64) << 16 | start as u64);
                run_em(points, &w, k, s, floor, &config).ok()
            })
            .max_by(|a, b| a.mean_loglik.total_cmp(&b.mean_loglik));
        let Some(fit) = fit else { continue };
        if let Some(&wmin) = fit.weights.iter().min_by(|a, b| a.total_cmp(b)) {
            if wmin < 1.0 / (10.0 * n) {
                // degenerate order; the k-1 fit already stands in for it
                last_err = Some(Error::DegenerateComponent { weight: wmin });
                continue;
            }
        }
        let params = (k - 1) + k * d + k * d * (d + 1) / 2;
        let bic = -2.0 * n * fit.mean_loglik + params as f64 * n.ln();
        if best.as_ref().is_none_or(|(b, _)| bic < *b) {
            best = Some((bic, fit));
        }
    }
    let Some((_, fit)) = best else {
        return Err(last_err.unwrap_or(Error::NotConverged { what: "EM", residual: f64::NAN }));
    };
    let mut comps: Vec<(f64, Gaussian)> = fit
        .weights
        .into_iter()
        .zip(fit.means.into_iter().zip(fit.covs))
        .map(|(wk, (m, c))| (wk, Gaussian::from_parts(m, c)))
        .collect();
    comps.sort_by(|a, b| {
        b.0.total_cmp(&a.0)
            .then_with(|| a.1.mean().iter().zip(b.1.mean().iter()).fold(std::cmp::Ordering::Equal, |o, (x, y)| o.then(x.total_cmp(y))))
    });
    Mixture::new(comps)
}

struct Fit {
    weights: Vec<f64>,
    means: Vec<DVector<f64>>,
    covs: Vec<DMatrix<f64>>,
    mean_loglik: f64,
}

fn regularize(cov: &mut DMatrix<f64>, floor: f64) {
    let d = cov.nrows();
    let eps = (1e-8 * cov.trace() / d as f64).max(floor);
    for i in 0..d {
        cov[(i, i)] += eps;
    }
}

fn kmeans_pp(points: &[DVector<f64>], w: &[f64], k: usize, seed: u64) -> Option<Vec<DVector<f64>>> {
    let mut r = rng::stream(seed, 0);
    let pick = |r: &mut rng::StreamRng, scores: &[f64]| -> Option<usize> {
        let total: f64 = scores.iter().sum();
        if !(total > 0.0) {
            return None;
        }
        let u: f64 = r.random::<f64>() * total;
        let mut acc = 0.0;
        for (i, s) in scores.iter().enumerate() {
            acc += s;
            if u < acc {
                return Some(i);
            }
        }
        scores.iter().rposition(|&s| s > 0.0)
    };
    let mut centers = vec![points[pick(&mut r, w)?].clone()];
    let mut d2: Vec<f64> = points.iter().map(|p| (p - &centers[0]).norm_squared()).collect();
    while centers.len() < k {
        let scores: Vec<f64> = d2.iter().zip(w).map(|(d, wi)| d * wi).collect();
        let next = points[pick(&mut r, &scores)?].clone();
        for (dist, p) in d2.iter_mut().zip(points) {
            *dist = dist.min((p - &next).norm_squared());
        }
        centers.push(next);
    }
    Some(centers)
}

struct Component {
    log_norm: f64,
    chol: Cholesky<f64, nalgebra::Dyn>,
}

fn prepare(cov: &DMatrix<f64>) -> Option<Component> {
    let chol = Cholesky::new(cov.clone())?;
    let d = cov.nrows() as f64;
    let log_det: f64 = chol.l().diagonal().iter().map(|v| 2.0 * v.ln()).sum();
    Some(Component { log_norm: -0.5 * (log_det + d * (2.0 * std::f64::consts::PI).ln()), chol })
}

fn log_density(c: &Component, mean: &DVector<f64>, x: &DVector<f64>) -> f64 {
    let z = c.chol.l().solve_lower_triangular(&(x - mean)).expect("nonsingular factor");
    c.log_norm - 0.5 * z.norm_squared()
}

fn run_em(points: &[DVector<f64>], w: &[f64], k: usize, seed: u64, floor: f64, config: &EmConfig) -> Result<Fit> {
    let npts = points.len();
    let d = points[0].len();
    let mut means = kmeans_pp(points, w, k, seed).ok_or(Error::NotConverged { what: "k-means++", residual: 0.0 })?;

    // hard assignment to seed weights and covariances
    let mut resp = vec![vec![0.0; k]; npts];
    for (i, p) in points.iter().enumerate() {
        let j = (0..k)
            .min_by(|&a, &b| (p - &means[a]).norm_squared().total_cmp(&(p - &means[b]).norm_squared()))
            .unwrap();
        resp[i][j] = 1.0;
    }
    let mut weights = vec![0.0; k];
    let mut covs = vec![DMatrix::zeros(d, d); k];
    m_step(points, w, &resp, &mut weights, &mut means, &mut covs, floor);

    let mut prev = f64::NEG_INFINITY;
    let mut loglik = prev;
    for _ in 0..config.max_iter {
        let comps: Vec<Component> = covs
            .iter()
            .map(prepare)
            .collect::<Option<_>>()
            .ok_or(Error::NotConverged { what: "EM", residual: f64::NAN })?;
        loglik = 0.0;
        for (i, p) in points.iter().enumerate() {
            let logs: Vec<f64> = (0..k)
                .map(|j| if weights[j] > 0.0 { weights[j].ln() + log_density(&comps[j], &means[j], p) } else { f64::NEG_INFINITY })
                .collect();
            let mx = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let s: f64 = logs.iter().map(|l| (l - mx).exp()).sum();
            let lse = mx + s.ln();
            for j in 0..k {
                resp[i][j] = (logs[j] - lse).exp();
            }
            loglik += w[i] * lse;
        }
        if !loglik.is_finite() {
            return Err(Error::NotConverged { what: "EM", residual: loglik });
        }
        if loglik - prev < config.tol {
            break;
        }
        prev = loglik;
        m_step(points, w, &resp, &mut weights, &mut means, &mut covs, floor);
    }
    Ok(Fit { weights, means, covs, mean_loglik: loglik })
}

fn m_step(
    points: &[DVector<f64>],
    w: &[f64],
    resp: &[Vec<f64>],
    weights: &mut [f64],
    means: &mut [DVector<f64>],
    covs: &mut [DMatrix<f64>],
    floor: f64,
) {
    let d = points[0].len();
    for j in 0..weights.len() {
        let nk: f64 = resp.iter().zip(w).map(|(r, wi)| r[j] * wi).sum();
        weights[j] = nk;
        if nk <= 0.0 {
            covs[j] = DMatrix::identity(d, d) * floor;
            continue;
        }
        let mut mean = DVector::zeros(d);
        for (i, p) in points.iter().enumerate() {
            mean.axpy(resp[i][j] * w[i] / nk, p, 1.0);
        }
        let mut cov = DMatrix::zeros(d, d);
        for (i, p) in points.iter().enumerate() {
            let diff = p - &mean;
            cov.ger(resp[i][j] * w[i] / nk, &diff, &diff, 1.0);
        }
        let mut cov = crate::linalg::symmetrize(&cov);
        regularize(&mut cov, floor);
        means[j] = mean;
        covs[j] = cov;
    }
}
