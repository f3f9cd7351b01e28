//! Predictive graph filters whose coefficients are polynomials in the
//! station-average reading, learned pointwise (least squares) or
//! distributionally (Wasserstein loss between per-station Gaussians).

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{build_knn, Graph, GsoKind, KnnWeighting};
use crate::linalg;
use crate::operators::FilterMap;
use crate::rng;

/// Reported SNR magnitude for exact (or exactly wrong) predictions.
pub const SNR_CAP_DB: f64 = 300.0;

/// `F(a) = Σ_k c_k(a) S^k` with `c_k(a) = Σ_q β_kq (a / a_scale)^q`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterFamily {
    pub gso: GsoKind,
    /// Filter degree in the shift operator.
    pub degree: usize,
    /// Degree of each coefficient as a polynomial in `a`.
    pub coeff_degree: usize,
    pub a_scale: f64,
    /// `beta[k][q]`
    pub beta: Vec<Vec<f64>>,
}

impl FilterFamily {
    pub fn new(gso: GsoKind, beta: Vec<Vec<f64>>, a_scale: f64) -> Result<Self> {
        let degree = beta.len().checked_sub(1).ok_or_else(|| Error::InvalidArgument("no coefficients".into()))?;
        let coeff_degree = beta[0].len().checked_sub(1).ok_or_else(|| Error::InvalidArgument("empty coefficient".into()))?;
        if beta.iter().any(|b| b.len() != coeff_degree + 1) {
            return Err(Error::InvalidArgument("coefficient polynomials differ in degree".into()));
        }
        if !(a_scale > 0.0) {
            return Err(Error::InvalidArgument(format!("a_scale must be positive, got {a_scale}")));
        }
        Ok(Self { gso, degree, coeff_degree, a_scale, beta })
    }

    pub fn coeffs_at(&self, a: f64) -> Vec<f64> {
        let t = a / self.a_scale;
        self.beta.iter().map(|b| b.iter().rev().fold(0.0, |acc, c| acc * t + c)).collect()
    }

    pub fn filter_at(&self, a: f64) -> FilterMap {
        FilterMap::Polynomial { coeffs: self.coeffs_at(a), gso: self.gso }
    }

    fn flat(&self) -> Vec<f64> {
        self.beta.iter().flatten().copied().collect()
    }

    fn with_flat(&self, flat: &[f64]) -> Self {
        let beta = flat.chunks(self.coeff_degree + 1).map(|c| c.to_vec()).collect();
        Self { beta, ..self.clone() }
    }
}

/// Station-average reading `a_x`.
pub fn station_average(x: &DVector<f64>) -> f64 {
    x.mean()
}

/// Powers `S^0..S^degree` of the shift operator.
fn shift_powers(g: &Graph, gso: GsoKind, degree: usize) -> Result<Vec<DMatrix<f64>>> {
    let s = g.gso(gso)?;
    let mut powers = vec![DMatrix::identity(g.n(), g.n())];
    for k in 1..=degree {
        powers.push(&powers[k - 1] * &s);
    }
    Ok(powers)
}

fn matrix_at(family: &FilterFamily, powers: &[DMatrix<f64>], a: f64) -> DMatrix<f64> {
    let n = powers[0].nrows();
    family.coeffs_at(a).iter().zip(powers).fold(DMatrix::zeros(n, n), |acc, (c, p)| acc + p * *c)
}

/// A week of readings (`inputs`) with the readings to predict (`targets`), paired by day.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Group {
    pub inputs: Vec<DVector<f64>>,
    pub targets: Vec<DVector<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LearnMode {
    Pointwise,
    Distributional,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Init {
    #[default]
    Pointwise,
    Zero,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LearnConfig {
    pub gso: GsoKind,
    pub degree: usize,
    pub coeff_degree: usize,
    pub a_scale: f64,
    pub max_iter: usize,
    /// Stop once a step improves the loss by less than this fraction.
    pub rel_tol: f64,
    pub init: Init,
}

impl Default for LearnConfig {
    fn default() -> Self {
        Self {
            gso: GsoKind::NormalizedLaplacian,
            degree: 2,
            coeff_degree: 0,
            a_scale: 1.0,
            max_iter: 2000,
            rel_tol: 1e-8,
            init: Init::Pointwise,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Learned {
    pub family: FilterFamily,
    /// Training loss after each accepted step (one entry for pointwise mode).
    pub losses: Vec<f64>,
}

fn check_groups(g: &Graph, groups: &[Group]) -> Result<()> {
    if groups.is_empty() {
        return Err(Error::InvalidArgument("no training groups".into()));
    }
    for grp in groups {
        if grp.inputs.len() != grp.targets.len() || grp.inputs.is_empty() {
            return Err(Error::InvalidArgument("each group needs equally many inputs and targets".into()));
        }
        if let Some(x) = grp.inputs.iter().chain(&grp.targets).find(|x| x.len() != g.n()) {
            return Err(Error::DimensionMismatch { expected: g.n(), got: x.len() });
        }
    }
    Ok(())
}

pub fn learn_predictive_filter(g: &Graph, groups: &[Group], mode: LearnMode, config: &LearnConfig) -> Result<Learned> {
    check_groups(g, groups)?;
    let powers = shift_powers(g, config.gso, config.degree)?;
    let zero = FilterFamily::new(config.gso, vec![vec![0.0; config.coeff_degree + 1]; config.degree + 1], config.a_scale)?;
    match mode {
        LearnMode::Pointwise => {
            let family = learn_pointwise(&zero, &powers, groups)?;
            let loss = pointwise_loss(&family, &powers, groups);
            Ok(Learned { family, losses: vec![loss] })
        }
        LearnMode::Distributional => {
            let init = match config.init {
                Init::Pointwise => learn_pointwise(&zero, &powers, groups)?,
                Init::Zero => zero,
            };
            learn_distributional(init, &powers, groups, config)
        }
    }
}

/// Closed-form least squares over `Σ ‖F(a_x) x − y‖²`; the unknowns enter linearly.
fn learn_pointwise(shape: &FilterFamily, powers: &[DMatrix<f64>], groups: &[Group]) -> Result<FilterFamily> {
    let n = powers[0].nrows();
    let q = shape.coeff_degree + 1;
    let unknowns = powers.len() * q;
    let pairs: Vec<(&DVector<f64>, &DVector<f64>)> = groups.iter().flat_map(|g| g.inputs.iter().zip(&g.targets)).collect();
    let mut a = DMatrix::zeros(n * pairs.len(), unknowns);
    let mut b = DVector::zeros(n * pairs.len());
    for (p, (x, y)) in pairs.iter().enumerate() {
        let t = station_average(x) / shape.a_scale;
        for (k, s) in powers.iter().enumerate() {
            let sx = s * *x;
            for j in 0..q {
                a.view_mut((p * n, k * q + j), (n, 1)).copy_from(&(&sx * t.powi(j as i32)));
            }
        }
        b.rows_mut(p * n, n).copy_from(y);
    }
    let beta = linalg::least_squares(&a, &b, 1e-12).ok_or(Error::SingularNormalEquations)?;
    Ok(shape.with_flat(beta.as_slice()))
}

fn pointwise_loss(family: &FilterFamily, powers: &[DMatrix<f64>], groups: &[Group]) -> f64 {
    groups
        .iter()
        .flat_map(|g| g.inputs.iter().zip(&g.targets))
        .map(|(x, y)| (matrix_at(family, powers, station_average(x)) * x - y).norm_squared())
        .sum()
}

/// Per-group summary: source mean and covariance over the days, target
/// per-station mean and standard deviation, and the group's average reading.
struct GroupStats {
    a: f64,
    mean_x: DVector<f64>,
    cov_x: DMatrix<f64>,
    mean_y: DVector<f64>,
    std_y: DVector<f64>,
}

fn group_stats(grp: &Group) -> GroupStats {
    let days = grp.inputs.len() as f64;
    let mean = |v: &[DVector<f64>]| v.iter().fold(DVector::zeros(v[0].len()), |acc, x| acc + x) / days;
    let mean_x = mean(&grp.inputs);
    let mean_y = mean(&grp.targets);
    let mut cov_x = DMatrix::zeros(mean_x.len(), mean_x.len());
    for x in &grp.inputs {
        let d = x - &mean_x;
        cov_x.ger(1.0 / days, &d, &d, 1.0);
    }
    let std_y = grp.targets.iter().fold(DVector::zeros(mean_y.len()), |acc, y| acc + (y - &mean_y).map(|v| v * v) / days).map(f64::sqrt);
    GroupStats { a: station_average(&mean_x), mean_x, cov_x, mean_y, std_y }
}

/// Loss and gradient (in the flattened `β`) of
/// `Σ_g ‖F m_x − m_y‖² + Σ_i (√(F C_x Fᵀ)_ii − σ_y,i)²`,
/// the squared W2 between per-station marginals of the filtered source and the target.
fn distributional_loss(family: &FilterFamily, powers: &[DMatrix<f64>], stats: &[GroupStats], grad: Option<&mut Vec<f64>>) -> f64 {
    let q = family.coeff_degree + 1;
    let mut total = 0.0;
    let mut g_beta = vec![0.0; powers.len() * q];
    for s in stats {
        let f = matrix_at(family, powers, s.a);
        let r = &f * &s.mean_x - &s.mean_y;
        let fc = &f * &s.cov_x;
        let mut d = DVector::zeros(r.len());
        total += r.norm_squared();
        for i in 0..r.len() {
            let var = fc.row(i).dot(&f.row(i));
            let sd = var.max(0.0).sqrt();
            total += (sd - s.std_y[i]).powi(2);
            if sd > 0.0 {
                d[i] = 1.0 - s.std_y[i] / sd;
            }
        }
        if grad.is_some() {
            let g_f = (&r * s.mean_x.transpose() + DMatrix::from_diagonal(&d) * &fc) * 2.0;
            let t = s.a / family.a_scale;
            for (k, p) in powers.iter().enumerate() {
                let inner = g_f.dot(p);
                for j in 0..q {
                    g_beta[k * q + j] += t.powi(j as i32) * inner;
                }
            }
        }
    }
    if let Some(out) = grad {
        *out = g_beta;
    }
    total
}

/// Gradient descent with Armijo backtracking; the loss never increases.
fn learn_distributional(init: FilterFamily, powers: &[DMatrix<f64>], groups: &[Group], config: &LearnConfig) -> Result<Learned> {
    let stats: Vec<GroupStats> = groups.iter().map(group_stats).collect();
    let mut beta = init.flat();
    let mut grad = Vec::new();
    let mut loss = distributional_loss(&init, powers, &stats, Some(&mut grad));
    let mut losses = vec![loss];
    let mut step = 1.0;
    for _ in 0..config.max_iter {
        let gnorm2: f64 = grad.iter().map(|g| g * g).sum();
        if loss == 0.0 || gnorm2 == 0.0 {
            return Ok(Learned { family: init.with_flat(&beta), losses });
        }
        let mut accepted = None;
        while step > 1e-30 {
            let trial: Vec<f64> = beta.iter().zip(&grad).map(|(b, g)| b - step * g).collect();
            let trial_loss = distributional_loss(&init.with_flat(&trial), powers, &stats, None);
            if trial_loss <= loss - 1e-4 * step * gnorm2 {
                accepted = Some((trial, trial_loss));
                break;
            }
            step *= 0.5;
        }
        let Some((trial, trial_loss)) = accepted else {
            // no descent step is representable: stationary to machine precision
            return Ok(Learned { family: init.with_flat(&beta), losses });
        };
        let improvement = (loss - trial_loss) / loss;
        beta = trial;
        loss = distributional_loss(&init.with_flat(&beta), powers, &stats, Some(&mut grad));
        losses.push(loss);
        step *= 2.0;
        if improvement < config.rel_tol {
            return Ok(Learned { family: init.with_flat(&beta), losses });
        }
    }
    Err(Error::NotConverged { what: "distributional filter learning", residual: loss })
}

/// Final distributional training loss for a family.
pub fn distributional_training_loss(family: &FilterFamily, g: &Graph, groups: &[Group]) -> Result<f64> {
    check_groups(g, groups)?;
    let powers = shift_powers(g, family.gso, family.degree)?;
    let stats: Vec<GroupStats> = groups.iter().map(group_stats).collect();
    Ok(distributional_loss(family, &powers, &stats, None))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnrTable {
    pub snr_db: Vec<f64>,
    pub mean_db: f64,
}

/// `20 log₁₀(‖y‖ / ‖y − F(a_x) x‖)` per test pair, clamped to `±SNR_CAP_DB`.
pub fn snr_db(y: &DVector<f64>, prediction: &DVector<f64>) -> f64 {
    let err = (y - prediction).norm();
    let v = 20.0 * (y.norm() / err).log10();
    if v.is_nan() {
        SNR_CAP_DB
    } else {
        v.clamp(-SNR_CAP_DB, SNR_CAP_DB)
    }
}

pub fn evaluate_snr(family: &FilterFamily, g: &Graph, test: &[(DVector<f64>, DVector<f64>)]) -> Result<SnrTable> {
    let powers = shift_powers(g, family.gso, family.degree)?;
    let snr_db: Vec<f64> = test
        .iter()
        .map(|(x, y)| snr_db(y, &(matrix_at(family, &powers, station_average(x)) * x)))
        .collect();
    let mean_db = snr_db.iter().sum::<f64>() / snr_db.len().max(1) as f64;
    Ok(SnrTable { snr_db, mean_db })
}

/// Synthetic stations in the unit square joined by a symmetrised 4-NN graph
/// with Gaussian weights.
pub fn synthetic_stations(count: usize, seed: u64) -> Result<Graph> {
    let mut r = rng::stream(rng::derive_seed(seed, 0x73_7461), 0);
    let points: Vec<Vec<f64>> = (0..count).map(|_| vec![r.random::<f64>(), r.random::<f64>()]).collect();
    build_knn(&points, 4.min(count.saturating_sub(1)).max(1), true, KnnWeighting::Gaussian { sigma: 0.3 })
}

/// Groups of `days` readings whose targets are produced by `truth`. Daily
/// fluctuations have zero station average, so every day in a group shares
/// the group's average reading.
pub fn synthetic_groups(g: &Graph, truth: &FilterFamily, groups: usize, days: usize, seed: u64) -> Result<Vec<Group>> {
    let n = g.n();
    let powers = shift_powers(g, truth.gso, truth.degree)?;
    let smooth = DMatrix::identity(n, n) - g.gso(GsoKind::NormalizedLaplacian)? * 0.5;
    (0..groups as u64)
        .map(|gi| {
            let mut r = rng::stream(seed, gi);
            let level = r.random_range(-1.0..1.0) * truth.a_scale;
            let base = &smooth * DVector::from_fn(n, |_, _| r.sample::<f64, _>(StandardNormal)) * 0.5;
            let base = base.add_scalar(level - base.mean());
            let inputs: Vec<DVector<f64>> = (0..days)
                .map(|_| {
                    let wiggle = &smooth * DVector::from_fn(n, |_, _| r.sample::<f64, _>(StandardNormal)) * 0.3;
                    &base + wiggle.add_scalar(-wiggle.mean())
                })
                .collect();
            let targets = inputs.iter().map(|x| matrix_at(truth, &powers, station_average(x)) * x).collect();
            Ok(Group { inputs, targets })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn truth(coeff_degree: usize) -> FilterFamily {
        let beta = if coeff_degree == 0 {
            vec![vec![0.5], vec![-0.3], vec![0.1]]
        } else {
            vec![vec![0.5, 0.2, -0.1], vec![-0.3, 0.1, 0.05], vec![0.1, -0.05, 0.02]]
        };
        FilterFamily::new(GsoKind::NormalizedLaplacian, beta, 1.0).unwrap()
    }

    fn max_diff(a: &FilterFamily, b: &FilterFamily) -> f64 {
        a.flat().iter().zip(b.flat()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
    }

    #[test]
    fn coefficient_polynomials() {
        let f = truth(2);
        let c = f.coeffs_at(2.0);
        assert!((c[0] - (0.5 + 0.4 - 0.4)).abs() < 1e-15);
        assert_eq!(truth(0).coeffs_at(3.0), truth(0).coeffs_at(-1.0));
    }

    #[test]
    fn pointwise_recovers_constant_coefficients() {
        let g = synthetic_stations(12, 1).unwrap();
        let groups = synthetic_groups(&g, &truth(0), 6, 7, 2).unwrap();
        let learned = learn_predictive_filter(&g, &groups, LearnMode::Pointwise, &LearnConfig::default()).unwrap();
        assert!(max_diff(&learned.family, &truth(0)) < 1e-6);
        assert!(learned.losses[0] < 1e-8);
    }

    #[test]
    fn pointwise_recovers_signal_dependent_coefficients() {
        let g = synthetic_stations(12, 3).unwrap();
        let groups = synthetic_groups(&g, &truth(2), 10, 7, 4).unwrap();
        let config = LearnConfig { coeff_degree: 2, ..LearnConfig::default() };
        let learned = learn_predictive_filter(&g, &groups, LearnMode::Pointwise, &config).unwrap();
        assert!(max_diff(&learned.family, &truth(2)) < 1e-4);
        let flat = learn_predictive_filter(&g, &groups, LearnMode::Pointwise, &LearnConfig::default()).unwrap();
        assert!(learned.losses[0] <= flat.losses[0]);
    }

    #[test]
    fn distributional_recovers_diagonal_filter() {
        let g = synthetic_stations(8, 5).unwrap();
        let scale = FilterFamily::new(GsoKind::NormalizedLaplacian, vec![vec![1.7]], 1.0).unwrap();
        let groups = synthetic_groups(&g, &scale, 5, 7, 6).unwrap();
        let config = LearnConfig { degree: 0, init: Init::Zero, ..LearnConfig::default() };
        let learned = learn_predictive_filter(&g, &groups, LearnMode::Distributional, &config).unwrap();
        assert!((learned.family.beta[0][0] - 1.7).abs() < 1e-3);
        assert!(*learned.losses.last().unwrap() < 1e-8);
        assert!(learned.losses.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn distributional_gradient_matches_finite_differences() {
        let g = synthetic_stations(6, 7).unwrap();
        let groups = synthetic_groups(&g, &truth(2), 3, 5, 8).unwrap();
        let powers = shift_powers(&g, GsoKind::NormalizedLaplacian, 2).unwrap();
        let stats: Vec<_> = groups.iter().map(group_stats).collect();
        let f = FilterFamily::new(GsoKind::NormalizedLaplacian, vec![vec![0.3, 0.1, 0.0], vec![0.2, 0.0, 0.1], vec![-0.1, 0.05, 0.0]], 1.0)
            .unwrap();
        let mut grad = Vec::new();
        distributional_loss(&f, &powers, &stats, Some(&mut grad));
        let flat = f.flat();
        for k in 0..flat.len() {
            let h = 1e-6;
            let mut up = flat.clone();
            up[k] += h;
            let mut dn = flat.clone();
            dn[k] -= h;
            let fd = (distributional_loss(&f.with_flat(&up), &powers, &stats, None)
                - distributional_loss(&f.with_flat(&dn), &powers, &stats, None))
                / (2.0 * h);
            assert!((fd - grad[k]).abs() < 1e-5 * (1.0 + fd.abs()), "{k}: {fd} vs {}", grad[k]);
        }
    }

    #[test]
    fn snr_examples() {
        let y = DVector::from_vec(vec![3.0, 4.0]);
        assert_eq!(snr_db(&y, &y), SNR_CAP_DB);
        assert!(snr_db(&y, &DVector::zeros(2)).abs() < 1e-12);
        assert!((snr_db(&y, &(&y * 0.9)) - 20.0).abs() < 1e-9);
    }
}
