//! Invariance under projection pairs, bandlimited recovery from vertex
//! samples, and identification of the subspace a sampled signal lies in.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::distrib::DistSignal;
use crate::error::{Error, Result};
use crate::linalg;
use crate::operators::{self, OperatorPair, PushMode, PushOptions};
use crate::wasserstein::{self, W2Options};

/// Selected rows must have smallest singular value above this.
pub const RANK_TOL: f64 = 1e-8;

/// A candidate fits when its residual is at most this times `‖obs‖`.
pub const FIT_TOL: f64 = 1e-6;

/// An operator pair whose filter is a spectral projection.
#[derive(Debug, Clone)]
pub struct ProjectionOperatorPair {
    base: OperatorPair,
}

impl ProjectionOperatorPair {
    pub fn new(base: OperatorPair) -> Result<Self> {
        if !base.filter.is_projection() {
            return Err(Error::InvalidArgument("filter is not a projection".into()));
        }
        Ok(Self { base })
    }

    pub fn base(&self) -> &OperatorPair {
        &self.base
    }
}

/// `W(μ, 𝔭_*(μ))`; `μ` is `(ε, 𝔭)`-invariant for every `ε` above it.
pub fn invariance_deficit(mu: &DistSignal, p: &ProjectionOperatorPair, opts: &W2Options) -> Result<f64> {
    let push = PushOptions { budget: opts.budget, seed: opts.seed, mode: PushMode::Auto };
    let image = operators::pushforward(&p.base, mu, &push)?;
    Ok(wasserstein::w2(mu, &image, opts)?.distance)
}

/// Observed values at distinct vertices, kept sorted by vertex.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawSampleSet")]
pub struct SampleSet {
    indices: Vec<usize>,
    values: Vec<f64>,
}

#[derive(Deserialize)]
struct RawSampleSet {
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl TryFrom<RawSampleSet> for SampleSet {
    type Error = Error;

    fn try_from(raw: RawSampleSet) -> Result<Self> {
        SampleSet::new(raw.indices, raw.values)
    }
}

impl SampleSet {
    pub fn new(indices: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        if indices.len() != values.len() {
            return Err(Error::DimensionMismatch { expected: indices.len(), got: values.len() });
        }
        let mut pairs: Vec<(usize, f64)> = indices.into_iter().zip(values).collect();
        pairs.sort_by_key(|p| p.0);
        if let Some(w) = pairs.windows(2).find(|w| w[0].0 == w[1].0) {
            return Err(Error::InvalidArgument(format!("vertex {} sampled twice", w[0].0)));
        }
        let (indices, values) = pairs.into_iter().unzip();
        Ok(Self { indices, values })
    }

    /// Samples `x` at `indices`.
    pub fn observe(x: &DVector<f64>, indices: &[usize]) -> Result<Self> {
        if let Some(&i) = indices.iter().find(|&&i| i >= x.len()) {
            return Err(Error::IndexOutOfRange { index: i, size: x.len() });
        }
        Self::new(indices.to_vec(), indices.iter().map(|&i| x[i]).collect())
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

/// Smallest of the `min(k, m)` singular values of a `k × m` matrix.
fn partial_sigma_min(a: &DMatrix<f64>) -> f64 {
    a.singular_values().min()
}

/// Greedily picks `m + extra` rows of an `n × m` basis, each step adding the
/// row that maximises the smallest singular value of the selection (ties go
/// to the lower vertex). Returned sorted.
pub fn choose_sample_set(basis: &DMatrix<f64>, extra: usize) -> Result<Vec<usize>> {
    let (n, m) = basis.shape();
    if extra > 1 {
        return Err(Error::InvalidArgument(format!("extra must be 0 or 1, got {extra}")));
    }
    if m == 0 || m + extra > n {
        return Err(Error::InvalidArgument(format!("cannot choose {} of {n} rows", m + extra)));
    }
    let mut chosen: Vec<usize> = Vec::with_capacity(m + extra);
    for _ in 0..m + extra {
        let mut best: Option<(usize, f64)> = None;
        for r in (0..n).filter(|r| !chosen.contains(r)) {
            let mut rows = chosen.clone();
            rows.push(r);
            let s = partial_sigma_min(&basis.select_rows(&rows));
            if best.is_none_or(|(_, b)| s > b) {
                best = Some((r, s));
            }
        }
        let (r, s) = best.expect("rows remain");
        if chosen.len() + 1 == m && s <= RANK_TOL {
            return Err(Error::RankDeficient(s));
        }
        chosen.push(r);
    }
    chosen.sort_unstable();
    Ok(chosen)
}

/// A recovered signal with the least-squares residual on the sampled vertices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Recovery {
    pub signal: DVector<f64>,
    pub residual: f64,
}

/// Least-squares fit of the samples by the basis restricted to the sampled
/// rows, expanded to the whole graph.
pub fn recover_bandlimited(basis: &DMatrix<f64>, samples: &SampleSet) -> Result<Recovery> {
    let (n, m) = basis.shape();
    if let Some(&i) = samples.indices().iter().find(|&&i| i >= n) {
        return Err(Error::IndexOutOfRange { index: i, size: n });
    }
    if samples.len() < m {
        return Err(Error::InvalidArgument(format!("need at least {m} samples, got {}", samples.len())));
    }
    let sub = basis.select_rows(samples.indices());
    let s = linalg::sigma_min(&sub);
    if s <= RANK_TOL {
        return Err(Error::RankDeficient(s));
    }
    let obs = DVector::from_column_slice(samples.values());
    let coeffs = sub.clone().svd(true, true).solve(&obs, 0.0).map_err(|e| Error::InvalidArgument(e.into()))?;
    let residual = (&sub * &coeffs - &obs).norm();
    Ok(Recovery { signal: basis * coeffs, residual })
}

/// Per-candidate residuals and the indices within tolerance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateFit {
    pub residuals: Vec<f64>,
    pub consistent: Vec<usize>,
}

/// Which candidate subspaces can explain the samples (residual at most `FIT_TOL·‖obs‖`).
pub fn consistent_candidates(candidates: &[DMatrix<f64>], samples: &SampleSet) -> Result<CandidateFit> {
    let Some(first) = candidates.first() else {
        return Err(Error::InvalidArgument("no candidate subspaces".into()));
    };
    if let Some(c) = candidates.iter().find(|c| c.shape() != first.shape()) {
        return Err(Error::DimensionMismatch { expected: first.ncols(), got: c.ncols() });
    }
    let tau = FIT_TOL * samples.values().iter().map(|v| v * v).sum::<f64>().sqrt();
    let residuals = candidates
        .par_iter()
        .map(|b| recover_bandlimited(b, samples).map(|r| r.residual))
        .collect::<Result<Vec<_>>>()?;
    let consistent = residuals.iter().enumerate().filter(|(_, r)| **r <= tau).map(|(i, _)| i).collect();
    Ok(CandidateFit { residuals, consistent })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Identification {
    pub index: usize,
    pub signal: DVector<f64>,
    pub residuals: Vec<f64>,
}

/// Finds the single candidate subspace consistent with `m + 1` samples and
/// recovers the signal from it.
pub fn identify_subspace(candidates: &[DMatrix<f64>], samples: &SampleSet) -> Result<Identification> {
    let m = candidates.first().map_or(0, |c| c.ncols());
    if samples.len() != m + 1 {
        return Err(Error::InvalidArgument(format!("identification needs m + 1 = {} samples, got {}", m + 1, samples.len())));
    }
    let fit = consistent_candidates(candidates, samples)?;
    match fit.consistent.as_slice() {
        [] => Err(Error::NoMatch),
        &[index] => Ok(Identification {
            index,
            signal: recover_bandlimited(&candidates[index], samples)?.signal,
            residuals: fit.residuals,
        }),
        _ => Err(Error::Ambiguous(fit.consistent)),
    }
}
