//! Filters with respect to a signal-adaptive graph structure: the pair
//! `c = (A, f)` of a structure `A` and a map `f` from graphs to matrices.

use std::collections::HashMap;
use std::fmt;
use std::path::Path;
use std::sync::{Arc, Mutex};

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::distrib::{self, DistSignal, Empirical, Mixture};
use crate::error::{Error, Result};
use crate::graph::{Graph, GsoKind};
use crate::rng;
use crate::sags::{self, GraphDistribution, Sags, SagsFile};
use crate::spectral;
use crate::wasserstein::{self, W2Options};

/// Matrices closer than this (max abs entry) are merged in a [`MatrixLaw`].
pub const MATRIX_MERGE_TOL: f64 = 1e-12;

/// Which eigenvectors a projection keeps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Band {
    Indices(Vec<usize>),
    /// Eigen-indices `lo..=hi` in nondecreasing eigenvalue order.
    IndexRange { lo: usize, hi: usize },
    /// Eigenvalues in `[lo, hi]`, endpoints included.
    EigenvalueRange { lo: f64, hi: f64 },
}

impl Band {
    pub fn indices(&self, d: &spectral::SpectralDecomposition) -> Result<Vec<usize>> {
        match self {
            Band::Indices(ix) => Ok(ix.clone()),
            Band::IndexRange { lo, hi } => {
                if *hi >= d.n() {
                    return Err(Error::IndexOutOfRange { index: *hi, size: d.n() });
                }
                Ok((*lo..=*hi).collect())
            }
            Band::EigenvalueRange { lo, hi } => Ok(d.indices_in_range(*lo, *hi)),
        }
    }
}

type MatrixFn = Arc<dyn Fn(&Graph) -> Result<DMatrix<f64>> + Send + Sync>;

/// A map from graphs to `n × n` matrices.
#[derive(Clone)]
pub enum FilterMap {
    /// Analysis-direction graph Fourier transform `Uᵀ` of the chosen shift operator.
    Fourier { gso: GsoKind },
    /// `Σ_k coeffs[k] S^k`.
    Polynomial { coeffs: Vec<f64>, gso: GsoKind },
    /// Orthogonal projection onto the eigenvectors selected by `band`.
    Projection { band: Band, gso: GsoKind },
    /// `factor · inner(G)`.
    Scaled { factor: f64, inner: Box<FilterMap> },
    /// Any deterministic rule; cannot be written to files.
    Custom(MatrixFn),
}

impl fmt::Debug for FilterMap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FilterMap::Fourier { gso } => f.debug_struct("Fourier").field("gso", gso).finish(),
            FilterMap::Polynomial { coeffs, gso } => {
                f.debug_struct("Polynomial").field("coeffs", coeffs).field("gso", gso).finish()
            }
            FilterMap::Projection { band, gso } => f.debug_struct("Projection").field("band", band).field("gso", gso).finish(),
            FilterMap::Scaled { factor, inner } => {
                f.debug_struct("Scaled").field("factor", factor).field("inner", inner).finish()
            }
            FilterMap::Custom(_) => f.write_str("Custom(..)"),
        }
    }
}

impl FilterMap {
    pub fn custom(rule: impl Fn(&Graph) -> Result<DMatrix<f64>> + Send + Sync + 'static) -> Self {
        FilterMap::Custom(Arc::new(rule))
    }

    /// The shift operator itself.
    pub fn shift(gso: GsoKind) -> Self {
        FilterMap::Polynomial { coeffs: vec![0.0, 1.0], gso }
    }

    pub fn zero() -> Self {
        FilterMap::Polynomial { coeffs: vec![0.0], gso: GsoKind::Adjacency }
    }

    pub fn evaluate(&self, g: &Graph) -> Result<DMatrix<f64>> {
        self.evaluate_inner(g).map_err(|e| match e {
            Error::FilterEvaluationFailed(_) => e,
            other => Error::FilterEvaluationFailed(Box::new(other)),
        })
    }

    fn evaluate_inner(&self, g: &Graph) -> Result<DMatrix<f64>> {
        match self {
            FilterMap::Fourier { gso } => Ok(spectral::fourier_matrix(&spectral::eigendecompose(&g.gso(*gso)?)?)),
            FilterMap::Polynomial { coeffs, gso } => {
                spectral::polynomial_filter(&spectral::eigendecompose(&g.gso(*gso)?)?, coeffs)
            }
            FilterMap::Projection { band, gso } => {
                let d = spectral::eigendecompose(&g.gso(*gso)?)?;
                spectral::spectral_projection(&d, &band.indices(&d)?)
            }
            FilterMap::Scaled { factor, inner } => Ok(inner.evaluate_inner(g)? * *factor),
            FilterMap::Custom(rule) => {
                let m = rule(g)?;
                if m.shape() != (g.n(), g.n()) {
                    return Err(Error::DimensionMismatch { expected: g.n(), got: m.nrows() });
                }
                Ok(m)
            }
        }
    }

    /// True when every matrix this map produces is an orthogonal projection.
    pub fn is_projection(&self) -> bool {
        matches!(self, FilterMap::Projection { .. })
    }
}

/// Memoised filter evaluations keyed by graph, shared across threads within one call.
pub struct FilterCache<'a> {
    filter: &'a FilterMap,
    entries: Mutex<HashMap<u64, Vec<(Arc<Graph>, Arc<DMatrix<f64>>)>>>,
}

impl<'a> FilterCache<'a> {
    pub fn new(filter: &'a FilterMap) -> Self {
        Self { filter, entries: Mutex::new(HashMap::new()) }
    }

    pub fn get(&self, g: &Arc<Graph>) -> Result<Arc<DMatrix<f64>>> {
        let key = g.fingerprint();
        {
            let entries = self.entries.lock().expect("cache lock");
            if let Some(list) = entries.get(&key) {
                if let Some((_, m)) = list.iter().find(|(h, _)| Arc::ptr_eq(h, g) || **h == **g) {
                    return Ok(m.clone());
                }
            }
        }
        // evaluation is pure, so a racing duplicate only costs time
        let m = Arc::new(self.filter.evaluate(g)?);
        self.entries.lock().expect("cache lock").entry(key).or_default().push((g.clone(), m.clone()));
        Ok(m)
    }
}

/// The pair `c = (A, f)`.
#[derive(Debug, Clone)]
pub struct OperatorPair {
    pub sags: Sags,
    pub filter: FilterMap,
}

impl OperatorPair {
    pub fn new(sags: Sags, filter: FilterMap) -> Self {
        Self { sags, filter }
    }

    pub fn n(&self) -> usize {
        self.sags.n()
    }

    pub fn load_json(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file: OperatorPairFile = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        file.into_pair(path.parent().unwrap_or(Path::new(".")))
    }
}

/// Finite law of the filter matrix at a fixed signal.
#[derive(Debug, Clone, PartialEq)]
pub struct MatrixLaw {
    pub support: Vec<(DMatrix<f64>, f64)>,
}

impl MatrixLaw {
    pub fn mean(&self) -> DMatrix<f64> {
        let n = self.support[0].0.nrows();
        self.support.iter().fold(DMatrix::zeros(n, n), |acc, (m, p)| acc + m * *p)
    }
}

fn check_dim(c: &OperatorPair, n: usize) -> Result<()> {
    if c.n() != n {
        return Err(Error::DimensionMismatch { expected: c.n(), got: n });
    }
    Ok(())
}

/// Filter matrices over the support of `ν_x`, with (near-)identical matrices merged.
pub fn matrix_law(c: &OperatorPair, x: &DVector<f64>) -> Result<MatrixLaw> {
    check_dim(c, x.len())?;
    let nu = c.sags.nu_at(x)?;
    let cache = FilterCache::new(&c.filter);
    law_of(&nu, &cache)
}

fn law_of(nu: &GraphDistribution, cache: &FilterCache) -> Result<MatrixLaw> {
    let mut support: Vec<(DMatrix<f64>, f64)> = Vec::new();
    for (g, p) in nu.support() {
        if *p == 0.0 {
            continue;
        }
        let m = cache.get(g)?;
        match support.iter_mut().find(|(k, _)| (k - &*m).amax() <= MATRIX_MERGE_TOL) {
            Some((_, q)) => *q += p,
            None => support.push(((*m).clone(), *p)),
        }
    }
    Ok(MatrixLaw { support })
}

/// W2 between matrix laws under the Frobenius ground cost.
pub fn matrix_law_distance(a: &MatrixLaw, b: &MatrixLaw) -> Result<f64> {
    let cost = DMatrix::from_fn(a.support.len(), b.support.len(), |i, j| (&a.support[i].0 - &b.support[j].0).norm_squared());
    let wa: Vec<f64> = a.support.iter().map(|(_, p)| *p).collect();
    let wb: Vec<f64> = b.support.iter().map(|(_, p)| *p).collect();
    let plan = wasserstein::exact_transport(&wa, &wb, &cost, usize::MAX)?;
    Ok(plan.cost.max(0.0).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PushMode {
    /// Exact whenever the input family and structure allow it.
    #[default]
    Auto,
    ForceSampling,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PushOptions {
    pub budget: usize,
    pub seed: Option<u64>,
    pub mode: PushMode,
}

impl Default for PushOptions {
    fn default() -> Self {
        Self { budget: wasserstein::DEFAULT_BUDGET, seed: None, mode: PushMode::Auto }
    }
}

impl PushOptions {
    pub fn seeded(seed: u64) -> Self {
        Self { seed: Some(seed), ..Self::default() }
    }
}

fn finite_atoms(mu: &DistSignal) -> Option<Vec<(DVector<f64>, f64)>> {
    match mu {
        DistSignal::Delta(x) => Some(vec![(x.clone(), 1.0)]),
        DistSignal::Empirical(e) => Some(e.atoms().map(|(p, w)| (p.clone(), w)).collect()),
        _ => None,
    }
}

/// Sums the weights of bitwise-identical points, keeping first-occurrence order.
fn merge_points(atoms: Vec<(DVector<f64>, f64)>) -> Result<Empirical> {
    let mut points: Vec<DVector<f64>> = Vec::new();
    let mut weights: Vec<f64> = Vec::new();
    let mut index: HashMap<Vec<u64>, usize> = HashMap::new();
    for (p, w) in atoms {
        if w == 0.0 {
            continue;
        }
        let key: Vec<u64> = p.iter().map(|v| v.to_bits()).collect();
        match index.get(&key) {
            Some(&k) => weights[k] += w,
            None => {
                index.insert(key, points.len());
                points.push(p);
                weights.push(w);
            }
        }
    }
    Empirical::normalized(points, weights)
}

/// The pushforward `c_*(μ)`.
///
/// Finite-support inputs give the exact empirical law of `f(G)x`. Gaussian
/// and mixture inputs under a constant structure give the exact mixture of
/// affine images. Everything else (or [`PushMode::ForceSampling`]) draws
/// `budget` pairs `(x_i, G_i)` and returns their uniform empirical law.
pub fn pushforward(c: &OperatorPair, mu: &DistSignal, opts: &PushOptions) -> Result<DistSignal> {
    check_dim(c, mu.dim())?;
    let cache = FilterCache::new(&c.filter);
    if opts.mode == PushMode::Auto {
        if let Some(atoms) = finite_atoms(mu) {
            let mut out = Vec::new();
            for (x, w) in atoms {
                let nu = c.sags.nu_at(&x)?;
                for (g, p) in nu.support() {
                    out.push((&*cache.get(g)? * &x, w * p));
                }
            }
            return Ok(DistSignal::Empirical(merge_points(out)?));
        }
        if let Sags::Constant(nu) = &c.sags {
            let comps: Vec<(f64, distrib::Gaussian)> = match mu {
                DistSignal::Gaussian(g) => vec![(1.0, g.clone())],
                DistSignal::Mixture(m) => m.components().to_vec(),
                _ => unreachable!("finite inputs handled above"),
            };
            let mut out = Vec::new();
            for (w, g) in &comps {
                for (graph, p) in nu.support() {
                    if *p == 0.0 {
                        continue;
                    }
                    out.push((w * p, distrib::pushforward_affine(g, &*cache.get(graph)?)?));
                }
            }
            return Ok(DistSignal::Mixture(Mixture::new(out)?));
        }
    }
    let seed = opts.seed.ok_or(Error::MissingSeed("sampled pushforward"))?;
    let sampler = sags::lift(&c.sags, mu, seed)?;
    let draws = sampler.draws(opts.budget)?;
    let points = draws
        .par_iter()
        .map(|(x, g)| Ok(&*cache.get(g)? * x))
        .collect::<Result<Vec<_>>>()?;
    Ok(DistSignal::Empirical(Empirical::uniform(points)?))
}

/// `e_c(x) = Σ_i p_i f(G_i) x` over the support of `ν_x`.
pub fn cond_expectation(c: &OperatorPair, x: &DVector<f64>) -> Result<DVector<f64>> {
    check_dim(c, x.len())?;
    let nu = c.sags.nu_at(x)?;
    let cache = FilterCache::new(&c.filter);
    let mut out = DVector::zeros(x.len());
    for (g, p) in nu.support() {
        if *p != 0.0 {
            out += &*cache.get(g)? * x * *p;
        }
    }
    Ok(out)
}

/// The matrix `Σ_i p_i f(G_i)` of `e_c` for a constant structure.
pub fn cond_expectation_operator(c: &OperatorPair) -> Result<DMatrix<f64>> {
    let Sags::Constant(nu) = &c.sags else {
        return Err(Error::NotConstantSags);
    };
    Ok(law_of(nu, &FilterCache::new(&c.filter))?.mean())
}

/// One atom of `c1 ⊞ c2` applied to `μ`, kept as its two branches.
#[derive(Debug, Clone, PartialEq)]
pub struct BoxplusAtom {
    pub first: DVector<f64>,
    pub second: DVector<f64>,
    pub weight: f64,
}

/// Branch pairs `(f₁(G₁)x, f₂(G₂)x)` with `G₁ ~ ν₁,x` and `G₂ ~ ν₂,x` independent.
///
/// Exact over the product support for finite-support `μ`, otherwise `budget`
/// sampled triples with uniform weights. Branch one uses the same graph
/// stream as [`pushforward`], so a zero second branch reproduces it draw for draw.
pub fn boxplus_atoms(c1: &OperatorPair, c2: &OperatorPair, mu: &DistSignal, opts: &PushOptions) -> Result<Vec<BoxplusAtom>> {
    check_dim(c1, mu.dim())?;
    check_dim(c2, mu.dim())?;
    let cache1 = FilterCache::new(&c1.filter);
    let cache2 = FilterCache::new(&c2.filter);
    if opts.mode == PushMode::Auto {
        if let Some(atoms) = finite_atoms(mu) {
            let mut out = Vec::new();
            for (x, w) in atoms {
                let nu1 = c1.sags.nu_at(&x)?;
                let nu2 = c2.sags.nu_at(&x)?;
                for (g1, p1) in nu1.support() {
                    let first = &*cache1.get(g1)? * &x;
                    for (g2, p2) in nu2.support() {
                        let weight = w * p1 * p2;
                        if weight > 0.0 {
                            out.push(BoxplusAtom { first: first.clone(), second: &*cache2.get(g2)? * &x, weight });
                        }
                    }
                }
            }
            return Ok(out);
        }
    }
    let seed = opts.seed.ok_or(Error::MissingSeed("sampled boxplus"))?;
    let first = sags::lift(&c1.sags, mu, seed)?;
    let second_seed = rng::derive_seed(seed, 2);
    let xs = first.draws(opts.budget)?;
    let w = 1.0 / opts.budget as f64;
    xs.into_par_iter()
        .enumerate()
        .map(|(i, (x, g1))| {
            let nu2 = c2.sags.nu_at(&x)?;
            let mut r = rng::stream(rng::derive_seed(second_seed, sags::GRAPH_STREAM), i as u64);
            let g2 = &nu2.support()[nu2.draw_index(&mut r)].0;
            Ok(BoxplusAtom { first: &*cache1.get(&g1)? * &x, second: &*cache2.get(g2)? * &x, weight: w })
        })
        .collect()
}

/// `c1,* ⊞ c2,*` applied to `μ`: the law of `f₁(G₁)x + f₂(G₂)x`.
pub fn boxplus(c1: &OperatorPair, c2: &OperatorPair, mu: &DistSignal, opts: &PushOptions) -> Result<DistSignal> {
    let atoms = boxplus_atoms(c1, c2, mu, opts)?;
    let exact = opts.mode == PushMode::Auto && finite_atoms(mu).is_some();
    let summed: Vec<(DVector<f64>, f64)> = atoms.into_iter().map(|a| (a.first + a.second, a.weight)).collect();
    if exact {
        Ok(DistSignal::Empirical(merge_points(summed)?))
    } else {
        Ok(DistSignal::Empirical(Empirical::uniform(summed.into_iter().map(|(p, _)| p).collect())?))
    }
}

/// `r·c = (A, r f)`.
pub fn scalar_mul(r: f64, c: &OperatorPair) -> OperatorPair {
    OperatorPair { sags: c.sags.clone(), filter: FilterMap::Scaled { factor: r, inner: Box::new(c.filter.clone()) } }
}

/// One row of [`continuity_probe`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbeRow {
    pub scale: f64,
    pub input_w2: f64,
    pub output_w2: f64,
}

/// Shifts `μ` by `s·u` for each scale `s` (with `u` a fixed unit direction
/// derived from the seed) and reports `W(μ, μ_s)` next to `W(c_*μ, c_*μ_s)`.
/// Both pushforwards and both distances use the same seed.
pub fn continuity_probe(c: &OperatorPair, mu: &DistSignal, scales: &[f64], budget: usize, seed: u64) -> Result<Vec<ProbeRow>> {
    check_dim(c, mu.dim())?;
    if scales.iter().any(|s| !s.is_finite() || *s < 0.0) {
        return Err(Error::InvalidArgument("scales must be finite and nonnegative".into()));
    }
    if scales.windows(2).any(|w| w[1] > w[0]) {
        return Err(Error::InvalidArgument("scales must be nonincreasing".into()));
    }
    let n = mu.dim();
    let dir = {
        use rand::Rng;
        let mut r = rng::stream(rng::derive_seed(seed, 0x7072_6f62_65), 0);
        let mut u = DVector::from_fn(n, |_, _| r.sample::<f64, _>(rand_distr::StandardNormal));
        if u.norm() == 0.0 {
            u[0] = 1.0;
        }
        u.normalize()
    };
    let push_opts = PushOptions { budget, seed: Some(seed), mode: PushMode::Auto };
    let w2_opts = W2Options { budget, seed: Some(seed), ..W2Options::default() };
    let base = pushforward(c, mu, &push_opts)?;
    scales
        .iter()
        .map(|&s| {
            let shifted = mu.shifted(&(&dir * s));
            let input_w2 = wasserstein::w2(mu, &shifted, &w2_opts)?.distance;
            let out = pushforward(c, &shifted, &push_opts)?;
            let output_w2 = wasserstein::w2(&base, &out, &w2_opts)?.distance;
            Ok(ProbeRow { scale: s, input_w2, output_w2 })
        })
        .collect()
}

/// One row of [`operator_sequence_limit`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LimitRow {
    /// 1-based position in the sequence.
    pub index: usize,
    /// `‖e_{c_i}(x) − e_c(x)‖`
    pub expectation_gap: f64,
    /// `W(f_{A_i}(x), f_A(x))` under the Frobenius ground cost.
    pub law_distance: f64,
}

pub fn operator_sequence_limit(cs: &[OperatorPair], c: &OperatorPair, x: &DVector<f64>) -> Result<Vec<LimitRow>> {
    let target_e = cond_expectation(c, x)?;
    let target_law = matrix_law(c, x)?;
    cs.iter()
        .enumerate()
        .map(|(k, ci)| {
            let e = cond_expectation(ci, x)?;
            let law = matrix_law(ci, x)?;
            Ok(LimitRow {
                index: k + 1,
                expectation_gap: (e - &target_e).norm(),
                law_distance: matrix_law_distance(&law, &target_law)?,
            })
        })
        .collect()
}

/// JSON form of a filter map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FilterMapFile {
    Fourier { gso: GsoKind },
    Polynomial { coeffs: Vec<f64>, gso: GsoKind },
    Projection { band: Band, gso: GsoKind },
    Scaled { factor: f64, inner: Box<FilterMapFile> },
}

impl FilterMapFile {
    pub fn into_filter(self) -> FilterMap {
        match self {
            FilterMapFile::Fourier { gso } => FilterMap::Fourier { gso },
            FilterMapFile::Polynomial { coeffs, gso } => FilterMap::Polynomial { coeffs, gso },
            FilterMapFile::Projection { band, gso } => FilterMap::Projection { band, gso },
            FilterMapFile::Scaled { factor, inner } => FilterMap::Scaled { factor, inner: Box::new(inner.into_filter()) },
        }
    }

    pub fn from_filter(f: &FilterMap) -> Result<Self> {
        Ok(match f {
            FilterMap::Fourier { gso } => FilterMapFile::Fourier { gso: *gso },
            FilterMap::Polynomial { coeffs, gso } => FilterMapFile::Polynomial { coeffs: coeffs.clone(), gso: *gso },
            FilterMap::Projection { band, gso } => FilterMapFile::Projection { band: band.clone(), gso: *gso },
            FilterMap::Scaled { factor, inner } => {
                FilterMapFile::Scaled { factor: *factor, inner: Box::new(Self::from_filter(inner)?) }
            }
            FilterMap::Custom(_) => return Err(Error::InvalidArgument("custom filters cannot be serialized".into())),
        })
    }
}

/// JSON form of an operator pair: `{"sags": {...}, "filter": {...}}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OperatorPairFile {
    pub sags: SagsFile,
    pub filter: FilterMapFile,
}

impl OperatorPairFile {
    pub fn into_pair(self, base: &Path) -> Result<OperatorPair> {
        Ok(OperatorPair { sags: self.sags.into_sags(base)?, filter: self.filter.into_filter() })
    }

    pub fn from_pair(c: &OperatorPair) -> Result<Self> {
        Ok(Self { sags: SagsFile::from_sags(&c.sags)?, filter: FilterMapFile::from_filter(&c.filter)? })
    }
}
