//! Distributional graph signals: probability distributions on `R^n` with
//! finite mean and variance.
//!
//! Four families are represented exactly: point masses, finitely supported
//! (weighted empirical) distributions, Gaussians and Gaussian mixtures. Any
//! other law enters the crate through an empirical approximation.

mod em;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::rng;

pub use em::{fit_mixture_em, fit_mixture_em_weighted, EmConfig};

/// Probability vectors may miss 1 by this much before renormalisation.
const WEIGHT_SUM_TOL: f64 = 1e-9;

/// Multivariate normal `N(mean, cov)`; `cov` is symmetric PSD.
#[derive(Debug, Clone, PartialEq)]
pub struct Gaussian {
    mean: DVector<f64>,
    cov: DMatrix<f64>,
}

impl Gaussian {
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        let n = mean.len();
        if n == 0 {
            return Err(Error::InvalidArgument("zero-dimensional Gaussian".into()));
        }
        if cov.nrows() != n || cov.ncols() != n {
            return Err(Error::DimensionMismatch { expected: n, got: cov.nrows() });
        }
        let asym = crate::spectral::asymmetry(&cov);
        if asym > crate::spectral::SYMMETRY_TOL * cov.amax().max(1.0) {
            return Err(Error::NotSymmetric(asym));
        }
        let cov = linalg::clip_psd(&cov)?;
        Ok(Self { mean, cov })
    }

    /// Standard normal in `n` dimensions.
    pub fn standard(n: usize) -> Self {
        Self { mean: DVector::zeros(n), cov: DMatrix::identity(n, n) }
    }

    /// Trusted constructor for covariances that are PSD by construction.
    pub(crate) fn from_parts(mean: DVector<f64>, cov: DMatrix<f64>) -> Self {
        Self { mean, cov: linalg::symmetrize(&cov) }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn cov(&self) -> &DMatrix<f64> {
        &self.cov
    }

    /// Log density; `None` when the covariance is singular.
    pub fn log_pdf(&self, x: &DVector<f64>) -> Option<f64> {
        let ch = nalgebra::Cholesky::new(self.cov.clone())?;
        let diff = x - &self.mean;
        let z = ch.l().solve_lower_triangular(&diff)?;
        let log_det: f64 = ch.l().diagonal().iter().map(|v| 2.0 * v.ln()).sum();
        let d = self.dim() as f64;
        Some(-0.5 * (z.norm_squared() + log_det + d * (2.0 * std::f64::consts::PI).ln()))
    }
}

/// Finitely supported distribution `Σ_i w_i δ_{x_i}`.
#[derive(Debug, Clone, PartialEq)]
pub struct Empirical {
    points: Vec<DVector<f64>>,
    weights: Vec<f64>,
}

impl Empirical {
    /// `weights` must be a probability vector (sum within 1e-9 of one).
    pub fn new(points: Vec<DVector<f64>>, weights: Vec<f64>) -> Result<Self> {
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > WEIGHT_SUM_TOL {
            return Err(Error::InvalidArgument(format!("weights sum to {sum}, not 1")));
        }
        Self::normalized(points, weights)
    }

    /// Accepts any nonnegative weights with positive total and rescales them.
    pub fn normalized(points: Vec<DVector<f64>>, weights: Vec<f64>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::InvalidArgument("empty support".into()));
        }
        if points.len() != weights.len() {
            return Err(Error::DimensionMismatch { expected: points.len(), got: weights.len() });
        }
        let n = points[0].len();
        if n == 0 {
            return Err(Error::InvalidArgument("zero-dimensional points".into()));
        }
        if let Some(p) = points.iter().find(|p| p.len() != n) {
            return Err(Error::DimensionMismatch { expected: n, got: p.len() });
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::InvalidArgument("weights must be finite and nonnegative".into()));
        }
        let sum: f64 = weights.iter().sum();
        if sum <= 0.0 {
            return Err(Error::InvalidArgument("weights sum to zero".into()));
        }
        let weights = weights.into_iter().map(|w| w / sum).collect();
        Ok(Self { points, weights })
    }

    pub fn uniform(points: Vec<DVector<f64>>) -> Result<Self> {
        let k = points.len();
        Self::normalized(points, vec![1.0; k])
    }

    pub fn dirac(x: DVector<f64>) -> Self {
        Self { points: vec![x], weights: vec![1.0] }
    }

    pub fn dim(&self) -> usize {
        self.points[0].len()
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[DVector<f64>] {
        &self.points
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn atoms(&self) -> impl Iterator<Item = (&DVector<f64>, f64)> {
        self.points.iter().zip(self.weights.iter().copied())
    }
}

/// Gaussian mixture with positive weights summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct Mixture {
    components: Vec<(f64, Gaussian)>,
}

impl Mixture {
    pub fn new(components: Vec<(f64, Gaussian)>) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::InvalidArgument("mixture needs at least one component".into()));
        }
        let n = components[0].1.dim();
        if let Some((_, g)) = components.iter().find(|(_, g)| g.dim() != n) {
            return Err(Error::DimensionMismatch { expected: n, got: g.dim() });
        }
        if components.iter().any(|(w, _)| !w.is_finite() || *w < 0.0) {
            return Err(Error::InvalidArgument("mixture weights must be nonnegative".into()));
        }
        let sum: f64 = components.iter().map(|(w, _)| w).sum();
        if (sum - 1.0).abs() > WEIGHT_SUM_TOL {
            return Err(Error::InvalidArgument(format!("mixture weights sum to {sum}, not 1")));
        }
        Ok(Self { components: components.into_iter().map(|(w, g)| (w / sum, g)).collect() })
    }

    pub fn dim(&self) -> usize {
        self.components[0].1.dim()
    }

    pub fn components(&self) -> &[(f64, Gaussian)] {
        &self.components
    }

    /// Component means in stored order (weight-descending for fitted mixtures).
    pub fn peaks(&self) -> Vec<DVector<f64>> {
        self.components.iter().map(|(_, g)| g.mean.clone()).collect()
    }
}

/// A distributional graph signal.
#[derive(Debug, Clone, PartialEq)]
pub enum DistSignal {
    Delta(DVector<f64>),
    Empirical(Empirical),
    Gaussian(Gaussian),
    Mixture(Mixture),
}

impl DistSignal {
    pub fn dim(&self) -> usize {
        match self {
            DistSignal::Delta(x) => x.len(),
            DistSignal::Empirical(e) => e.dim(),
            DistSignal::Gaussian(g) => g.dim(),
            DistSignal::Mixture(m) => m.dim(),
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            DistSignal::Delta(_) => "delta",
            DistSignal::Empirical(_) => "empirical",
            DistSignal::Gaussian(_) => "gaussian",
            DistSignal::Mixture(_) => "mixture",
        }
    }

    /// The point `x` if this is a point mass (including a one-atom empirical).
    pub fn as_point(&self) -> Option<&DVector<f64>> {
        match self {
            DistSignal::Delta(x) => Some(x),
            DistSignal::Empirical(e) if e.len() == 1 => Some(&e.points[0]),
            _ => None,
        }
    }

    /// Translates the distribution by `shift`.
    pub fn shifted(&self, shift: &DVector<f64>) -> DistSignal {
        match self {
            DistSignal::Delta(x) => DistSignal::Delta(x + shift),
            DistSignal::Empirical(e) => DistSignal::Empirical(Empirical {
                points: e.points.iter().map(|p| p + shift).collect(),
                weights: e.weights.clone(),
            }),
            DistSignal::Gaussian(g) => DistSignal::Gaussian(Gaussian { mean: &g.mean + shift, cov: g.cov.clone() }),
            DistSignal::Mixture(m) => DistSignal::Mixture(Mixture {
                components: m
                    .components
                    .iter()
                    .map(|(w, g)| (*w, Gaussian { mean: &g.mean + shift, cov: g.cov.clone() }))
                    .collect(),
            }),
        }
    }

    /// Draws point `index` of the request keyed by `seed`.
    pub fn draw(&self, seed: u64, index: u64) -> DVector<f64> {
        let mut r = rng::stream(seed, index);
        self.draw_with(&mut r, &Sampler::new(self))
    }

    fn draw_with(&self, r: &mut rng::StreamRng, sampler: &Sampler) -> DVector<f64> {
        match self {
            DistSignal::Delta(x) => x.clone(),
            DistSignal::Empirical(e) => e.points[categorical(r, &e.weights)].clone(),
            DistSignal::Gaussian(g) => gaussian_draw(r, &g.mean, &sampler.factors[0]),
            DistSignal::Mixture(m) => {
                let weights: Vec<f64> = m.components.iter().map(|(w, _)| *w).collect();
                let c = categorical(r, &weights);
                gaussian_draw(r, &m.components[c].1.mean, &sampler.factors[c])
            }
        }
    }
}

/// Covariance factors cached for repeated draws.
struct Sampler {
    factors: Vec<DMatrix<f64>>,
}

impl Sampler {
    fn new(d: &DistSignal) -> Self {
        let factor = |g: &Gaussian| linalg::covariance_factor(&g.cov).expect("covariance validated as PSD");
        let factors = match d {
            DistSignal::Gaussian(g) => vec![factor(g)],
            DistSignal::Mixture(m) => m.components.iter().map(|(_, g)| factor(g)).collect(),
            _ => Vec::new(),
        };
        Self { factors }
    }
}

fn categorical(r: &mut rng::StreamRng, weights: &[f64]) -> usize {
    let u: f64 = r.random();
    let mut acc = 0.0;
    for (i, w) in weights.iter().enumerate() {
        acc += w;
        if u < acc {
            return i;
        }
    }
    // rounding left a sliver above the cumulative sum
    weights.iter().rposition(|&w| w > 0.0).unwrap_or(0)
}

fn gaussian_draw(r: &mut rng::StreamRng, mean: &DVector<f64>, factor: &DMatrix<f64>) -> DVector<f64> {
    let z = DVector::from_fn(mean.len(), |_, _| r.sample::<f64, _>(StandardNormal));
    mean + factor * z
}

/// Reproducible batch of draws.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleBatch {
    pub points: Vec<DVector<f64>>,
    pub seed: u64,
    pub count: usize,
}

/// `count` i.i.d. draws; point `i` depends only on `(seed, i)`.
pub fn sample(d: &DistSignal, count: usize, seed: u64) -> Result<SampleBatch> {
    if count == 0 {
        return Err(Error::InvalidArgument("count must be at least 1".into()));
    }
    let sampler = Sampler::new(d);
    let points = (0..count as u64)
        .into_par_iter()
        .map(|i| {
            let mut r = rng::stream(seed, i);
            d.draw_with(&mut r, &sampler)
        })
        .collect();
    Ok(SampleBatch { points, seed, count })
}

/// Exact mean and covariance of the distribution.
pub fn moments(d: &DistSignal) -> (DVector<f64>, DMatrix<f64>) {
    match d {
        DistSignal::Delta(x) => (x.clone(), DMatrix::zeros(x.len(), x.len())),
        DistSignal::Empirical(e) => weighted_moments(&e.points, &e.weights),
        DistSignal::Gaussian(g) => (g.mean.clone(), g.cov.clone()),
        DistSignal::Mixture(m) => {
            let n = m.dim();
            let mut mean = DVector::zeros(n);
            for (w, g) in &m.components {
                mean.axpy(*w, &g.mean, 1.0);
            }
            let mut cov = DMatrix::zeros(n, n);
            for (w, g) in &m.components {
                let d = &g.mean - &mean;
                cov += (&g.cov + &d * d.transpose()) * *w;
            }
            (mean, linalg::symmetrize(&cov))
        }
    }
}

pub(crate) fn weighted_moments(points: &[DVector<f64>], weights: &[f64]) -> (DVector<f64>, DMatrix<f64>) {
    let n = points[0].len();
    let mut mean = DVector::zeros(n);
    for (p, w) in points.iter().zip(weights) {
        mean.axpy(*w, p, 1.0);
    }
    let mut cov = DMatrix::zeros(n, n);
    for (p, w) in points.iter().zip(weights) {
        let d = p - &mean;
        cov.ger(*w, &d, &d, 1.0);
    }
    (mean, linalg::symmetrize(&cov))
}

/// Regularisation `ε = 1e-8 · trace / n`, floored at `1e-12` so a zero-scatter
/// sample still has a nonsingular covariance.
pub fn covariance_regularization(cov: &DMatrix<f64>) -> f64 {
    (1e-8 * cov.trace() / cov.nrows() as f64).max(1e-12)
}

/// Maximum-likelihood Gaussian (denominator `N`) with `+εI` regularisation.
pub fn fit_gaussian(batch: &SampleBatch) -> Result<Gaussian> {
    fit_gaussian_points(&batch.points)
}

pub fn fit_gaussian_points(points: &[DVector<f64>]) -> Result<Gaussian> {
    if points.len() < 2 {
        return Err(Error::TooFewSamples { need: 2, got: points.len() });
    }
    let n = points[0].len();
    if let Some(p) = points.iter().find(|p| p.len() != n) {
        return Err(Error::DimensionMismatch { expected: n, got: p.len() });
    }
    let w = vec![1.0 / points.len() as f64; points.len()];
    let (mean, mut cov) = weighted_moments(points, &w);
    let eps = covariance_regularization(&cov);
    for i in 0..n {
        cov[(i, i)] += eps;
    }
    Ok(Gaussian::from_parts(mean, cov))
}

/// `N(m·mean, m·cov·mᵀ)`.
pub fn pushforward_affine(g: &Gaussian, m: &DMatrix<f64>) -> Result<Gaussian> {
    if m.ncols() != g.dim() {
        return Err(Error::DimensionMismatch { expected: g.dim(), got: m.ncols() });
    }
    Ok(Gaussian::from_parts(m * &g.mean, m * &g.cov * m.transpose()))
}

// ---- JSON form --------------------------------------------------------------

/// `{"kind": "delta|empirical|gaussian|mixture", ...}`; matrices are lists of rows.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DistSignalFile {
    Delta { x: Vec<f64> },
    Empirical { points: Vec<Vec<f64>>, weights: Vec<f64> },
    Gaussian { mean: Vec<f64>, cov: Vec<Vec<f64>> },
    Mixture { components: Vec<ComponentFile> },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ComponentFile {
    pub weight: f64,
    pub mean: Vec<f64>,
    pub cov: Vec<Vec<f64>>,
}

pub(crate) fn matrix_from_rows(rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let r = rows.len();
    let c = rows.first().map_or(0, |row| row.len());
    if let Some((i, row)) = rows.iter().enumerate().find(|(_, row)| row.len() != c) {
        return Err(Error::Malformed(format!("matrix row {i} has {} entries, expected {c}", row.len())));
    }
    Ok(DMatrix::from_fn(r, c, |i, j| rows[i][j]))
}

pub(crate) fn matrix_to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

impl DistSignalFile {
    pub fn into_signal(self) -> Result<DistSignal> {
        Ok(match self {
            DistSignalFile::Delta { x } => {
                if x.is_empty() {
                    return Err(Error::Malformed("delta with empty x".into()));
                }
                DistSignal::Delta(DVector::from_vec(x))
            }
            DistSignalFile::Empirical { points, weights } => DistSignal::Empirical(Empirical::new(
                points.into_iter().map(DVector::from_vec).collect(),
                weights,
            )?),
            DistSignalFile::Gaussian { mean, cov } => {
                DistSignal::Gaussian(Gaussian::new(DVector::from_vec(mean), matrix_from_rows(&cov)?)?)
            }
            DistSignalFile::Mixture { components } => DistSignal::Mixture(Mixture::new(
                components
                    .into_iter()
                    .map(|c| Ok((c.weight, Gaussian::new(DVector::from_vec(c.mean), matrix_from_rows(&c.cov)?)?)))
                    .collect::<Result<Vec<_>>>()?,
            )?),
        })
    }

    pub fn from_signal(d: &DistSignal) -> Self {
        let v = |x: &DVector<f64>| x.iter().copied().collect::<Vec<_>>();
        match d {
            DistSignal::Delta(x) => DistSignalFile::Delta { x: v(x) },
            DistSignal::Empirical(e) => DistSignalFile::Empirical {
                points: e.points.iter().map(v).collect(),
                weights: e.weights.clone(),
            },
            DistSignal::Gaussian(g) => DistSignalFile::Gaussian { mean: v(&g.mean), cov: matrix_to_rows(&g.cov) },
            DistSignal::Mixture(m) => DistSignalFile::Mixture {
                components: m
                    .components
                    .iter()
                    .map(|(w, g)| ComponentFile { weight: *w, mean: v(&g.mean), cov: matrix_to_rows(&g.cov) })
                    .collect(),
            },
        }
    }
}

impl DistSignal {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str::<DistSignalFile>(text)?.into_signal()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&DistSignalFile::from_signal(self))?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(x: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(x)
    }

    #[test]
    fn delta_sampling_repeats_the_point() {
        let b = sample(&DistSignal::Delta(v(&[1.0, -2.0])), 5, 3).unwrap();
        assert!(b.points.iter().all(|p| *p == v(&[1.0, -2.0])));
    }

    #[test]
    fn degenerate_empirical_weight() {
        let e = Empirical::new(vec![v(&[1.0]), v(&[5.0])], vec![1.0, 0.0]).unwrap();
        let b = sample(&DistSignal::Empirical(e), 200, 1).unwrap();
        assert!(b.points.iter().all(|p| p[0] == 1.0));
    }

    #[test]
    fn gaussian_sample_mean_within_clt_bound() {
        // 3σ/√N with σ = 1, N = 1e4 gives 0.03 < 0.05
        let b = sample(&DistSignal::Gaussian(Gaussian::standard(2)), 10_000, 11).unwrap();
        let g = fit_gaussian(&b).unwrap();
        assert!(g.mean().amax() < 0.05);
        assert!((g.cov() - DMatrix::<f64>::identity(2, 2)).norm() < 0.1);
    }

    #[test]
    fn sampling_is_reproducible() {
        let m = Mixture::new(vec![(0.3, Gaussian::standard(3)), (0.7, Gaussian::standard(3))]).unwrap();
        let d = DistSignal::Mixture(m);
        assert_eq!(sample(&d, 64, 5).unwrap(), sample(&d, 64, 5).unwrap());
        assert_ne!(sample(&d, 64, 5).unwrap().points, sample(&d, 64, 6).unwrap().points);
        // prefix property of index addressing
        assert_eq!(sample(&d, 10, 5).unwrap().points[..], sample(&d, 64, 5).unwrap().points[..10]);
    }

    #[test]
    fn moment_examples() {
        let (m, c) = moments(&DistSignal::Delta(v(&[2.0, 3.0])));
        assert_eq!(m, v(&[2.0, 3.0]));
        assert_eq!(c, DMatrix::zeros(2, 2));

        let zero = DMatrix::zeros(1, 1);
        let mix = Mixture::new(vec![
            (0.5, Gaussian::new(v(&[-1.0]), zero.clone()).unwrap()),
            (0.5, Gaussian::new(v(&[1.0]), zero).unwrap()),
        ])
        .unwrap();
        let (m, c) = moments(&DistSignal::Mixture(mix));
        assert!(m[0].abs() < 1e-15);
        assert!((c[(0, 0)] - 1.0).abs() < 1e-15);

        let e = Empirical::uniform(vec![v(&[0.0]), v(&[2.0])]).unwrap();
        let (m, c) = moments(&DistSignal::Empirical(e));
        assert_eq!((m[0], c[(0, 0)]), (1.0, 1.0));
    }

    #[test]
    fn fit_gaussian_examples() {
        let batch = SampleBatch { points: vec![v(&[0.0]), v(&[2.0])], seed: 0, count: 2 };
        let g = fit_gaussian(&batch).unwrap();
        assert_eq!(g.mean()[0], 1.0);
        assert!((g.cov()[(0, 0)] - (1.0 + 1e-8)).abs() < 1e-15);

        let same = SampleBatch { points: vec![v(&[4.0, 1.0]); 3], seed: 0, count: 3 };
        let g = fit_gaussian(&same).unwrap();
        assert_eq!(g.mean(), &v(&[4.0, 1.0]));
        assert!(g.cov()[(0, 0)] > 0.0 && g.cov()[(0, 1)] == 0.0);

        let one = SampleBatch { points: vec![v(&[1.0])], seed: 0, count: 1 };
        assert!(matches!(fit_gaussian(&one), Err(Error::TooFewSamples { need: 2, got: 1 })));
    }

    #[test]
    fn affine_pushforward_examples() {
        let g = Gaussian::standard(2);
        assert_eq!(pushforward_affine(&g, &DMatrix::identity(2, 2)).unwrap(), g);
        let z = pushforward_affine(&g, &DMatrix::zeros(2, 2)).unwrap();
        assert_eq!(z.cov(), &DMatrix::zeros(2, 2));
        let d = pushforward_affine(&g, &DMatrix::from_diagonal(&v(&[2.0, 1.0]))).unwrap();
        assert_eq!(d.cov(), &DMatrix::from_diagonal(&v(&[4.0, 1.0])));
    }

    #[test]
    fn invalid_constructions() {
        assert!(Empirical::new(vec![v(&[0.0])], vec![0.5]).is_err());
        assert!(Mixture::new(vec![]).is_err());
        let bad = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        assert!(matches!(Gaussian::new(v(&[0.0, 0.0]), bad), Err(Error::NotPsd(_))));
        let tiny_neg = DMatrix::from_row_slice(1, 1, &[-1e-12]);
        let g = Gaussian::new(v(&[0.0]), tiny_neg).unwrap();
        assert!(g.cov()[(0, 0)] >= 0.0);
    }

    #[test]
    fn json_form() {
        let d = DistSignal::from_json(r#"{"kind": "gaussian", "mean": [0, 1], "cov": [[1, 0.5], [0.5, 2]]}"#).unwrap();
        let back = DistSignal::from_json(&d.to_json().unwrap()).unwrap();
        assert_eq!(d, back);
        assert!(DistSignal::from_json(r#"{"kind": "gaussian", "mean": [0], "cov": [[1, 2]]}"#).is_err());
    }
}
