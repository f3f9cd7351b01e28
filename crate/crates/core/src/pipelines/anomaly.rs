//! Anomaly detection on sensor recordings over `G = H × P`: two operator
//! pairs with signal-adaptive graphs, combined by `⊞`, reduce each recording
//! to a point in `R²`; classes are compared through the peaks of mixtures
//! fitted to those points.

use std::sync::Arc;

use nalgebra::DVector;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::distrib::{fit_mixture_em_weighted, DistSignal, EmConfig, Empirical, Mixture};
use crate::error::{Error, Result};
use crate::graph::{build_path, cartesian_product, Graph, GsoKind};
use crate::operators::{boxplus_atoms, Band, FilterMap, OperatorPair, PushOptions};
use crate::rng;
use crate::sags::{GraphDistribution, Predicate, Region, Sags};
use crate::spectral;

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ClassLabel {
    pub subject: String,
    pub condition: String,
}

impl std::fmt::Display for ClassLabel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}/{}", self.subject, self.condition)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledSignals {
    pub label: ClassLabel,
    pub signals: Vec<DVector<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnomalyConfig {
    pub gso: GsoKind,
    /// Length of the path factor `P`.
    pub path_len: usize,
    /// Band whose energy picks the graph for the first structure.
    pub band1: Band,
    /// Band whose energy picks the graph for the second structure.
    pub band2: Band,
    /// Pass band of both high-pass projections.
    pub hp_band: Band,
    pub max_components: usize,
    pub seed: u64,
}

impl Default for AnomalyConfig {
    fn default() -> Self {
        Self {
            gso: GsoKind::Laplacian,
            path_len: 10,
            band1: Band::IndexRange { lo: 0, hi: 4 },
            band2: Band::IndexRange { lo: 5, hi: 9 },
            hp_band: Band::IndexRange { lo: 40, hi: 79 },
            max_components: 3,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct AnomalyModel {
    pub c1: OperatorPair,
    pub c2: OperatorPair,
    pub classes: Vec<(ClassLabel, Mixture)>,
    pub config: AnomalyConfig,
}

/// Picks, per signal, the candidate graph carrying the most energy in `band`
/// (ties to the earlier candidate).
struct BandSelector {
    projections: Vec<nalgebra::DMatrix<f64>>,
}

impl BandSelector {
    fn new(graphs: &[Arc<Graph>], band: &Band, gso: GsoKind) -> Result<Self> {
        let projections = graphs
            .iter()
            .map(|g| {
                let d = spectral::eigendecompose(&g.gso(gso)?)?;
                spectral::spectral_projection(&d, &band.indices(&d)?)
            })
            .collect::<Result<_>>()?;
        Ok(Self { projections })
    }

    fn pick(&self, x: &DVector<f64>) -> usize {
        let mut best = (0, f64::NEG_INFINITY);
        for (k, p) in self.projections.iter().enumerate() {
            let e = (p * x).norm_squared();
            if e > best.1 {
                best = (k, e);
            }
        }
        best.0
    }

    /// Frequency of each pick over `signals`.
    fn distribution(&self, graphs: &[Arc<Graph>], signals: &[DVector<f64>]) -> Result<GraphDistribution> {
        let mut counts = vec![0usize; graphs.len()];
        for x in signals {
            counts[self.pick(x)] += 1;
        }
        let support = graphs
            .iter()
            .zip(&counts)
            .filter(|(_, c)| **c > 0)
            .map(|(g, c)| (g.clone(), *c as f64 / signals.len() as f64))
            .collect();
        GraphDistribution::from_shared(support)
    }
}

/// Locally constant structure with one nearest-centroid region per class,
/// each carrying that class's empirical graph frequencies.
fn class_sags(graphs: &[Arc<Graph>], train: &[LabeledSignals], band: &Band, gso: GsoKind) -> Result<Sags> {
    let selector = BandSelector::new(graphs, band, gso)?;
    let centroids: Arc<Vec<DVector<f64>>> = Arc::new(
        train
            .iter()
            .map(|c| c.signals.iter().fold(DVector::zeros(graphs[0].n()), |acc, x| acc + x) / c.signals.len() as f64)
            .collect(),
    );
    let regions = train
        .iter()
        .enumerate()
        .map(|(index, c)| {
            Ok(Region {
                predicate: Predicate::NearestCentroid { centroids: centroids.clone(), index },
                nu: selector.distribution(graphs, &c.signals)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let all: Vec<DVector<f64>> = train.iter().flat_map(|c| c.signals.iter().cloned()).collect();
    Sags::locally_constant(regions, selector.distribution(graphs, &all)?)
}

/// The feature points `(‖f₁(G₁)x‖, ‖f₂(G₂)x‖)` of `c1,* ⊞ c2,*` applied to the
/// uniform law on `signals`, in a canonical order.
pub fn features(c1: &OperatorPair, c2: &OperatorPair, signals: &[DVector<f64>]) -> Result<Vec<(DVector<f64>, f64)>> {
    let mu = DistSignal::Empirical(Empirical::uniform(signals.to_vec())?);
    let mut pts: Vec<(DVector<f64>, f64)> = boxplus_atoms(c1, c2, &mu, &PushOptions::default())?
        .into_iter()
        .map(|a| (DVector::from_vec(vec![a.first.norm(), a.second.norm()]), a.weight))
        .collect();
    pts.sort_by(|a, b| a.0[0].total_cmp(&b.0[0]).then(a.0[1].total_cmp(&b.0[1])).then(a.1.total_cmp(&b.1)));
    Ok(pts)
}

fn fit_features(pts: &[(DVector<f64>, f64)], max_components: usize, seed: u64) -> Result<Mixture> {
    let points: Vec<DVector<f64>> = pts.iter().map(|p| p.0.clone()).collect();
    let weights: Vec<f64> = pts.iter().map(|p| p.1).collect();
    fit_mixture_em_weighted(&points, &weights, max_components.min(points.len()), seed, EmConfig::default())
}

/// Builds `G_h = H_h × P` for every candidate sensor graph, estimates both
/// structures from training frequencies and fits one feature mixture per class.
pub fn build_anomaly_model(train: &[LabeledSignals], candidates: &[Graph], config: &AnomalyConfig) -> Result<AnomalyModel> {
    if candidates.is_empty() {
        return Err(Error::InvalidArgument("no candidate sensor graphs".into()));
    }
    if train.is_empty() {
        return Err(Error::InvalidArgument("no training classes".into()));
    }
    if let Some(c) = train.iter().find(|c| c.signals.is_empty()) {
        return Err(Error::EmptyClass(c.label.to_string()));
    }
    let p = build_path(config.path_len)?;
    let graphs: Vec<Arc<Graph>> = candidates.iter().map(|h| cartesian_product(h, &p).map(Arc::new)).collect::<Result<_>>()?;
    let n = graphs[0].n();
    if let Some(x) = train.iter().flat_map(|c| &c.signals).find(|x| x.len() != n) {
        return Err(Error::DimensionMismatch { expected: n, got: x.len() });
    }
    let high_pass = FilterMap::Projection { band: config.hp_band.clone(), gso: config.gso };
    let c1 = OperatorPair::new(class_sags(&graphs, train, &config.band1, config.gso)?, high_pass.clone());
    let c2 = OperatorPair::new(class_sags(&graphs, train, &config.band2, config.gso)?, high_pass);
    let classes = train
        .par_iter()
        .enumerate()
        .map(|(k, c)| {
            let pts = features(&c1, &c2, &c.signals)?;
            Ok((c.label.clone(), fit_features(&pts, config.max_components, rng::derive_seed(config.seed, k as u64))?))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(AnomalyModel { c1, c2, classes, config: config.clone() })
}

/// Minimum-assignment Euclidean distance between two peak lists, averaged
/// over the `min(|a|, |b|)` matched pairs.
pub fn peak_distance(a: &[DVector<f64>], b: &[DVector<f64>]) -> f64 {
    let (small, large) = if a.len() <= b.len() { (a, b) } else { (b, a) };
    fn best(small: &[DVector<f64>], large: &[DVector<f64>], used: &mut Vec<bool>) -> f64 {
        let Some((head, rest)) = small.split_first() else { return 0.0 };
        let mut min = f64::INFINITY;
        for j in 0..large.len() {
            if !used[j] {
                used[j] = true;
                min = min.min((head - &large[j]).norm() + best(rest, large, used));
                used[j] = false;
            }
        }
        min
    }
    if small.is_empty() {
        return 0.0;
    }
    best(small, large, &mut vec![false; large.len()]) / small.len() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Classification {
    pub class: usize,
    pub label: ClassLabel,
    pub distances: Vec<f64>,
    pub peaks: Vec<DVector<f64>>,
}

/// Labels an instance of `k` recordings by the class whose mixture peaks are
/// closest to the peaks fitted to the instance's features.
pub fn classify(model: &AnomalyModel, instance: &[DVector<f64>], seed: u64) -> Result<Classification> {
    if instance.is_empty() {
        return Err(Error::InvalidArgument("empty instance".into()));
    }
    let pts = features(&model.c1, &model.c2, instance)?;
    let peaks = fit_features(&pts, model.config.max_components, seed)?.peaks();
    let distances: Vec<f64> = model.classes.iter().map(|(_, m)| peak_distance(&peaks, &m.peaks())).collect();
    let class = distances.iter().enumerate().min_by(|a, b| a.1.total_cmp(b.1)).map(|(k, _)| k).expect("classes nonempty");
    Ok(Classification { class, label: model.classes[class].0.clone(), distances, peaks })
}

/// One row of the accuracy-versus-instance-size curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AccuracyRow {
    pub k: usize,
    pub condition_accuracy: f64,
    pub class_accuracy: f64,
}

/// For each `k`, classifies `trials` random `k`-subsets (with replacement)
/// of every test class and reports the fraction with the right condition
/// and with the right class.
pub fn accuracy_curve(model: &AnomalyModel, test: &[LabeledSignals], ks: &[usize], trials: usize, seed: u64) -> Result<Vec<AccuracyRow>> {
    ks.iter()
        .map(|&k| {
            let jobs: Vec<(usize, usize)> = (0..test.len()).flat_map(|c| (0..trials).map(move |t| (c, t))).collect();
            let hits = jobs
                .par_iter()
                .map(|&(c, t)| {
                    let job = (k as u64) << 40 | (c as u64) << 20 | t as u64;
                    let mut r = rng::stream(seed, job);
                    let pool = &test[c].signals;
                    let instance: Vec<DVector<f64>> = (0..k).map(|_| pool[r.random_range(0..pool.len())].clone()).collect();
                    let out = classify(model, &instance, rng::derive_seed(seed, job))?;
                    Ok((out.label.condition == test[c].label.condition, out.label == test[c].label))
                })
                .collect::<Result<Vec<_>>>()?;
            let total = hits.len().max(1) as f64;
            Ok(AccuracyRow {
                k,
                condition_accuracy: hits.iter().filter(|h| h.0).count() as f64 / total,
                class_accuracy: hits.iter().filter(|h| h.1).count() as f64 / total,
            })
        })
        .collect()
}

/// Synthetic recordings: candidate sensor graphs, plus labelled train and
/// test signals over `H × P`.
#[derive(Debug, Clone)]
pub struct SyntheticRecordings {
    pub candidates: Vec<Graph>,
    pub train: Vec<LabeledSignals>,
    pub test: Vec<LabeledSignals>,
}

/// Two subjects (amplitudes 1 and 2.5) under two conditions: `normal`
/// recordings live in the lowest eigen-band of `G`, `seizure` recordings in
/// the highest. Each class draws its graph from the two candidates with
/// class-specific odds, adds a fixed class template to random in-band
/// variation, then adds a little white noise.
pub fn synthetic_recordings(sensors: usize, path_len: usize, per_class: usize, seed: u64) -> Result<SyntheticRecordings> {
    let ring: Vec<(usize, usize, f64)> = (0..sensors).map(|i| (i, (i + 1) % sensors, 1.0)).collect();
    let mut chorded = ring.clone();
    chorded.push((0, sensors / 2, 0.5));
    let candidates = vec![Graph::from_edges(sensors, &ring)?, Graph::from_edges(sensors, &chorded)?];
    let p = build_path(path_len)?;
    let bases = candidates
        .iter()
        .map(|h| Ok(spectral::eigendecompose(&cartesian_product(h, &p)?.gso(GsoKind::Laplacian)?)?.eigenvectors))
        .collect::<Result<Vec<_>>>()?;
    let n = sensors * path_len;
    let width = n * 3 / 8;
    let classes = [("s1", "normal", 1.0, 0.8), ("s1", "seizure", 1.0, 0.3), ("s2", "normal", 2.5, 0.6), ("s2", "seizure", 2.5, 0.2)];

    let mut train = Vec::new();
    let mut test = Vec::new();
    for (c, &(subject, condition, amp, odds)) in classes.iter().enumerate() {
        let lo = if condition == "normal" { 0 } else { n - width };
        let mut r = rng::stream(rng::derive_seed(seed, 0x636c), c as u64);
        let coeffs: Vec<f64> = (0..width).map(|_| r.sample::<f64, _>(StandardNormal)).collect();
        let template = |basis: &nalgebra::DMatrix<f64>| {
            let t = (0..width).fold(DVector::zeros(n), |acc, k| acc + basis.column(lo + k) * coeffs[k]);
            t.normalize() * amp
        };
        let templates = [template(&bases[0]), template(&bases[1])];
        let draw = |i: u64| {
            let mut r = rng::stream(rng::derive_seed(seed, c as u64 + 1), i);
            let g = if r.random::<f64>() < odds { 0 } else { 1 };
            let var = (0..width).fold(DVector::zeros(n), |acc, k| acc + bases[g].column(lo + k) * r.sample::<f64, _>(StandardNormal));
            let noise = DVector::from_fn(n, |_, _| r.sample::<f64, _>(StandardNormal));
            &templates[g] + var.normalize() * (0.15 * amp) + noise * (0.01 * amp)
        };
        let label = ClassLabel { subject: subject.into(), condition: condition.into() };
        train.push(LabeledSignals { label: label.clone(), signals: (0..per_class as u64).map(draw).collect() });
        test.push(LabeledSignals { label, signals: (per_class as u64..2 * per_class as u64).map(draw).collect() });
    }
    Ok(SyntheticRecordings { candidates, train, test })
}

/// Default bands for `synthetic_recordings` sized to `n = sensors · path_len`:
/// selection bands at the bottom of the spectrum and the upper half as pass band.
pub fn synthetic_config(n: usize, path_len: usize, seed: u64) -> AnomalyConfig {
    let step = (n / 16).max(1);
    AnomalyConfig {
        path_len,
        band1: Band::IndexRange { lo: 0, hi: step - 1 },
        band2: Band::IndexRange { lo: step, hi: 2 * step - 1 },
        hp_band: Band::IndexRange { lo: n / 2, hi: n - 1 },
        seed,
        ..AnomalyConfig::default()
    }
}
