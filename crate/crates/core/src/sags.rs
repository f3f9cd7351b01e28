//! Signal-adaptive graph structures: a finite distribution over graphs
//! attached to every signal `x`, and the joint law they induce with a
//! distributional signal.

use std::fmt;
use std::path::Path;
use std::sync::Arc;

use nalgebra::DVector;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::distrib::{self, DistSignal};
use crate::error::{Error, Result};
use crate::graph::{Graph, GraphFile};
use crate::rng;

const PROB_SUM_TOL: f64 = 1e-9;
/// Stream tag separating graph draws from signal draws under one seed.
pub(crate) const GRAPH_STREAM: u64 = 0x6772_6170_68;

/// Finitely supported distribution over graphs on a common vertex set.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphDistribution {
    support: Vec<(Arc<Graph>, f64)>,
}

impl GraphDistribution {
    /// Probabilities must be nonnegative and sum to one within 1e-9; they are renormalised exactly.
    pub fn new(support: Vec<(Graph, f64)>) -> Result<Self> {
        Self::from_shared(support.into_iter().map(|(g, p)| (Arc::new(g), p)).collect())
    }

    pub fn from_shared(support: Vec<(Arc<Graph>, f64)>) -> Result<Self> {
        let Some((first, _)) = support.first() else {
            return Err(Error::InvalidArgument("graph distribution needs at least one graph".into()));
        };
        let n = first.n();
        if let Some((g, _)) = support.iter().find(|(g, _)| g.n() != n) {
            return Err(Error::DimensionMismatch { expected: n, got: g.n() });
        }
        if support.iter().any(|(_, p)| !p.is_finite() || *p < 0.0) {
            return Err(Error::InvalidArgument("graph probabilities must be finite and nonnegative".into()));
        }
        let total: f64 = support.iter().map(|(_, p)| p).sum();
        if (total - 1.0).abs() > PROB_SUM_TOL {
            return Err(Error::InvalidArgument(format!("graph probabilities sum to {total}, not 1")));
        }
        Ok(Self { support: support.into_iter().map(|(g, p)| (g, p / total)).collect() })
    }

    pub fn delta(g: Graph) -> Self {
        Self { support: vec![(Arc::new(g), 1.0)] }
    }

    pub fn uniform(graphs: Vec<Graph>) -> Result<Self> {
        let p = 1.0 / graphs.len().max(1) as f64;
        Self::new(graphs.into_iter().map(|g| (g, p)).collect())
    }

    pub fn n(&self) -> usize {
        self.support[0].0.n()
    }

    pub fn len(&self) -> usize {
        self.support.len()
    }

    pub fn is_empty(&self) -> bool {
        self.support.is_empty()
    }

    pub fn support(&self) -> &[(Arc<Graph>, f64)] {
        &self.support
    }

    /// Index of a support graph drawn with the given generator.
    pub fn draw_index<R: Rng>(&self, r: &mut R) -> usize {
        let u: f64 = r.random();
        let mut acc = 0.0;
        for (i, (_, p)) in self.support.iter().enumerate() {
            acc += p;
            if u < acc {
                return i;
            }
        }
        self.support.iter().rposition(|(_, p)| *p > 0.0).unwrap_or(0)
    }
}

type PredicateFn = Arc<dyn Fn(&DVector<f64>) -> bool + Send + Sync>;
type RuleFn = Arc<dyn Fn(&DVector<f64>) -> GraphDistribution + Send + Sync>;

/// Membership test for one region of a locally constant structure.
#[derive(Clone)]
pub enum Predicate {
    /// `normal · x ≥ offset`
    HalfSpace { normal: DVector<f64>, offset: f64 },
    /// `lo ≤ x ≤ hi` coordinatewise, bounds included.
    Box { lo: DVector<f64>, hi: DVector<f64> },
    /// `x` is strictly closer to `centroids[index]` than to any earlier centroid
    /// and no farther than any later one.
    NearestCentroid { centroids: Arc<Vec<DVector<f64>>>, index: usize },
    /// Arbitrary rule; cannot be written to files.
    Custom(PredicateFn),
}

impl fmt::Debug for Predicate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Predicate::HalfSpace { normal, offset } => {
                f.debug_struct("HalfSpace").field("normal", &normal.as_slice()).field("offset", offset).finish()
            }
            Predicate::Box { lo, hi } => f.debug_struct("Box").field("lo", &lo.as_slice()).field("hi", &hi.as_slice()).finish(),
            Predicate::NearestCentroid { centroids, index } => {
                f.debug_struct("NearestCentroid").field("centroids", &centroids.len()).field("index", index).finish()
            }
            Predicate::Custom(_) => f.write_str("Custom(..)"),
        }
    }
}

impl Predicate {
    pub fn contains(&self, x: &DVector<f64>) -> bool {
        match self {
            Predicate::HalfSpace { normal, offset } => normal.dot(x) >= *offset,
            Predicate::Box { lo, hi } => x.iter().zip(lo.iter().zip(hi.iter())).all(|(v, (l, h))| *l <= *v && *v <= *h),
            Predicate::NearestCentroid { centroids, index } => {
                let mine = (x - &centroids[*index]).norm_squared();
                centroids.iter().enumerate().all(|(k, c)| {
                    let d = (x - c).norm_squared();
                    if k < *index {
                        mine < d
                    } else {
                        mine <= d
                    }
                })
            }
            Predicate::Custom(rule) => rule(x),
        }
    }

    fn dim(&self) -> Option<usize> {
        match self {
            Predicate::HalfSpace { normal, .. } => Some(normal.len()),
            Predicate::Box { lo, .. } => Some(lo.len()),
            Predicate::NearestCentroid { centroids, .. } => centroids.first().map(|c| c.len()),
            Predicate::Custom(_) => None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Region {
    pub predicate: Predicate,
    pub nu: GraphDistribution,
}

/// The assignment `x ↦ ν_x`.
#[derive(Clone)]
pub enum Sags {
    Constant(GraphDistribution),
    /// Regions are tried in order; the first containing `x` wins, else `default`.
    LocallyConstant { regions: Vec<Region>, default: GraphDistribution },
    /// Deterministic rule; `n` is the signal dimension it accepts.
    Callback { n: usize, rule: RuleFn },
}

impl fmt::Debug for Sags {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Sags::Constant(nu) => f.debug_tuple("Constant").field(nu).finish(),
            Sags::LocallyConstant { regions, default } => {
                f.debug_struct("LocallyConstant").field("regions", regions).field("default", default).finish()
            }
            Sags::Callback { n, .. } => f.debug_struct("Callback").field("n", n).finish_non_exhaustive(),
        }
    }
}

impl Sags {
    /// The classical setting: one fixed graph.
    pub fn classical(g: Graph) -> Self {
        Sags::Constant(GraphDistribution::delta(g))
    }

    pub fn locally_constant(regions: Vec<Region>, default: GraphDistribution) -> Result<Self> {
        let n = default.n();
        for r in &regions {
            if r.nu.n() != n {
                return Err(Error::DimensionMismatch { expected: n, got: r.nu.n() });
            }
            if let Some(d) = r.predicate.dim() {
                if d != n {
                    return Err(Error::DimensionMismatch { expected: n, got: d });
                }
            }
        }
        Ok(Sags::LocallyConstant { regions, default })
    }

    pub fn callback(n: usize, rule: impl Fn(&DVector<f64>) -> GraphDistribution + Send + Sync + 'static) -> Self {
        Sags::Callback { n, rule: Arc::new(rule) }
    }

    pub fn n(&self) -> usize {
        match self {
            Sags::Constant(nu) => nu.n(),
            Sags::LocallyConstant { default, .. } => default.n(),
            Sags::Callback { n, .. } => *n,
        }
    }

    pub fn is_constant(&self) -> bool {
        matches!(self, Sags::Constant(_))
    }

    pub fn nu_at(&self, x: &DVector<f64>) -> Result<GraphDistribution> {
        let n = self.n();
        if x.len() != n {
            return Err(Error::DimensionMismatch { expected: n, got: x.len() });
        }
        match self {
            Sags::Constant(nu) => Ok(nu.clone()),
            Sags::LocallyConstant { regions, default } => Ok(regions
                .iter()
                .find(|r| r.predicate.contains(x))
                .map(|r| r.nu.clone())
                .unwrap_or_else(|| default.clone())),
            Sags::Callback { rule, .. } => {
                let nu = rule(x);
                if nu.n() != n {
                    return Err(Error::DimensionMismatch { expected: n, got: nu.n() });
                }
                Ok(nu)
            }
        }
    }

    /// Every graph this structure can produce, when that set is known without evaluating `x`.
    pub fn known_graphs(&self) -> Option<Vec<Arc<Graph>>> {
        let nus: Vec<&GraphDistribution> = match self {
            Sags::Constant(nu) => vec![nu],
            Sags::LocallyConstant { regions, default } => regions.iter().map(|r| &r.nu).chain([default]).collect(),
            Sags::Callback { .. } => return None,
        };
        let mut out: Vec<Arc<Graph>> = Vec::new();
        for nu in nus {
            for (g, _) in nu.support() {
                if !out.iter().any(|h| Arc::ptr_eq(h, g) || **h == **g) {
                    out.push(g.clone());
                }
            }
        }
        Some(out)
    }
}

/// Draws from the joint law of `(x, G)` with `x ~ μ` and `G ~ ν_x`.
#[derive(Debug, Clone)]
pub struct JointSampler {
    pub source: DistSignal,
    pub sags: Sags,
    pub seed: u64,
}

/// One atom of an exactly enumerated joint law.
#[derive(Debug, Clone)]
pub struct JointAtom {
    pub x: DVector<f64>,
    pub graph: Arc<Graph>,
    pub prob: f64,
}

pub fn lift(sags: &Sags, mu: &DistSignal, seed: u64) -> Result<JointSampler> {
    if mu.dim() != sags.n() {
        return Err(Error::DimensionMismatch { expected: sags.n(), got: mu.dim() });
    }
    Ok(JointSampler { source: mu.clone(), sags: sags.clone(), seed })
}

impl JointSampler {
    /// Draw `i`: the signal is `source.draw(seed, i)`, the graph comes from an
    /// independent stream with the same index.
    pub fn draw(&self, i: u64) -> Result<(DVector<f64>, Arc<Graph>)> {
        let x = self.source.draw(self.seed, i);
        let g = self.graph_for(&x, i)?;
        Ok((x, g))
    }

    fn graph_for(&self, x: &DVector<f64>, i: u64) -> Result<Arc<Graph>> {
        let nu = self.sags.nu_at(x)?;
        let mut r = rng::stream(rng::derive_seed(self.seed, GRAPH_STREAM), i);
        Ok(nu.support()[nu.draw_index(&mut r)].0.clone())
    }

    /// Draws `0..count`, computed in parallel; identical to calling [`Self::draw`] per index.
    pub fn draws(&self, count: usize) -> Result<Vec<(DVector<f64>, Arc<Graph>)>> {
        let batch = distrib::sample(&self.source, count, self.seed)?;
        batch
            .points
            .into_par_iter()
            .enumerate()
            .map(|(i, x)| {
                let g = self.graph_for(&x, i as u64)?;
                Ok((x, g))
            })
            .collect()
    }

    /// Exact joint law when the source has finite support.
    pub fn enumerate(&self) -> Result<Option<Vec<JointAtom>>> {
        let atoms: Vec<(DVector<f64>, f64)> = match &self.source {
            DistSignal::Delta(x) => vec![(x.clone(), 1.0)],
            DistSignal::Empirical(e) => e.atoms().map(|(p, w)| (p.clone(), w)).collect(),
            _ => return Ok(None),
        };
        let mut out = Vec::new();
        for (x, w) in atoms {
            let nu = self.sags.nu_at(&x)?;
            for (g, p) in nu.support() {
                out.push(JointAtom { x: x.clone(), graph: g.clone(), prob: w * p });
            }
        }
        Ok(Some(out))
    }
}

/// Graph inside a structure file: a path (relative to the file) or an inline graph.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GraphRef {
    Path(String),
    Inline(GraphFile),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PredicateFile {
    HalfSpace { normal: Vec<f64>, offset: f64 },
    Box { lo: Vec<f64>, hi: Vec<f64> },
    NearestCentroid { centroids: Vec<Vec<f64>>, index: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionFile {
    pub predicate: PredicateFile,
    pub graphs: Vec<GraphRef>,
    pub probs: Vec<f64>,
}

/// JSON form of a structure. For `locally_constant`, `graphs`/`probs` give the default distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SagsFile {
    pub kind: SagsKind,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub regions: Vec<RegionFile>,
    pub graphs: Vec<GraphRef>,
    pub probs: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SagsKind {
    Constant,
    LocallyConstant,
}

fn load_distribution(graphs: &[GraphRef], probs: &[f64], base: &Path, what: &str) -> Result<GraphDistribution> {
    if graphs.len() != probs.len() {
        return Err(Error::Malformed(format!("{what}: {} graphs but {} probs", graphs.len(), probs.len())));
    }
    let support = graphs
        .iter()
        .zip(probs)
        .enumerate()
        .map(|(k, (r, &p))| {
            let g = match r {
                GraphRef::Path(rel) => Graph::load_json(base.join(rel))
                    .map_err(|e| Error::Malformed(format!("{what}: graphs[{k}] ({rel}): {e}")))?,
                GraphRef::Inline(file) => {
                    Graph::from_file(file).map_err(|e| Error::Malformed(format!("{what}: graphs[{k}]: {e}")))?
                }
            };
            Ok((g, p))
        })
        .collect::<Result<Vec<_>>>()?;
    GraphDistribution::new(support).map_err(|e| Error::Malformed(format!("{what}: {e}")))
}

fn distribution_file(nu: &GraphDistribution) -> (Vec<GraphRef>, Vec<f64>) {
    nu.support().iter().map(|(g, p)| (GraphRef::Inline(g.to_file()), *p)).unzip()
}

impl SagsFile {
    /// Resolves graph paths against `base`.
    pub fn into_sags(self, base: &Path) -> Result<Sags> {
        let default = load_distribution(&self.graphs, &self.probs, base, "sags")?;
        match self.kind {
            SagsKind::Constant => {
                if !self.regions.is_empty() {
                    return Err(Error::Malformed("constant structure must not declare regions".into()));
                }
                Ok(Sags::Constant(default))
            }
            SagsKind::LocallyConstant => {
                let regions = self
                    .regions
                    .iter()
                    .enumerate()
                    .map(|(k, r)| {
                        let nu = load_distribution(&r.graphs, &r.probs, base, &format!("regions[{k}]"))?;
                        let predicate = match &r.predicate {
                            PredicateFile::HalfSpace { normal, offset } => {
                                Predicate::HalfSpace { normal: DVector::from_column_slice(normal), offset: *offset }
                            }
                            PredicateFile::Box { lo, hi } => {
                                if lo.len() != hi.len() {
                                    return Err(Error::Malformed(format!("regions[{k}]: box bounds differ in length")));
                                }
                                Predicate::Box { lo: DVector::from_column_slice(lo), hi: DVector::from_column_slice(hi) }
                            }
                            PredicateFile::NearestCentroid { centroids, index } => {
                                if *index >= centroids.len() {
                                    return Err(Error::Malformed(format!("regions[{k}]: centroid index {index} out of range")));
                                }
                                Predicate::NearestCentroid {
                                    centroids: Arc::new(centroids.iter().map(|c| DVector::from_column_slice(c)).collect()),
                                    index: *index,
                                }
                            }
                        };
                        Ok(Region { predicate, nu })
                    })
                    .collect::<Result<Vec<_>>>()?;
                Sags::locally_constant(regions, default)
            }
        }
    }

    /// Inline-graph form of `sags`; fails for callbacks and custom predicates.
    pub fn from_sags(sags: &Sags) -> Result<Self> {
        match sags {
            Sags::Constant(nu) => {
                let (graphs, probs) = distribution_file(nu);
                Ok(Self { kind: SagsKind::Constant, regions: Vec::new(), graphs, probs })
            }
            Sags::LocallyConstant { regions, default } => {
                let regions = regions
                    .iter()
                    .map(|r| {
                        let predicate = match &r.predicate {
                            Predicate::HalfSpace { normal, offset } => {
                                PredicateFile::HalfSpace { normal: normal.as_slice().to_vec(), offset: *offset }
                            }
                            Predicate::Box { lo, hi } => {
                                PredicateFile::Box { lo: lo.as_slice().to_vec(), hi: hi.as_slice().to_vec() }
                            }
                            Predicate::NearestCentroid { centroids, index } => PredicateFile::NearestCentroid {
                                centroids: centroids.iter().map(|c| c.as_slice().to_vec()).collect(),
                                index: *index,
                            },
                            Predicate::Custom(_) => {
                                return Err(Error::InvalidArgument("custom predicates cannot be serialized".into()))
                            }
                        };
                        let (graphs, probs) = distribution_file(&r.nu);
                        Ok(RegionFile { predicate, graphs, probs })
                    })
                    .collect::<Result<Vec<_>>>()?;
                let (graphs, probs) = distribution_file(default);
                Ok(Self { kind: SagsKind::LocallyConstant, regions, graphs, probs })
            }
            Sags::Callback { .. } => Err(Error::InvalidArgument("callback structures cannot be serialized".into())),
        }
    }
}

impl Sags {
    pub fn load_json(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file: SagsFile = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        file.into_sags(path.parent().unwrap_or(Path::new(".")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{build_lattice, build_path};

    fn two_graph_nu() -> GraphDistribution {
        GraphDistribution::new(vec![(build_path(2).unwrap(), 0.25), (Graph::empty(2).unwrap(), 0.75)]).unwrap()
    }

    #[test]
    fn constant_ignores_signal() {
        let s = Sags::Constant(two_graph_nu());
        let a = s.nu_at(&DVector::from_vec(vec![1.0, 2.0])).unwrap();
        let b = s.nu_at(&DVector::from_vec(vec![-7.0, 0.0])).unwrap();
        assert_eq!(a, b);
        assert_eq!(a, two_graph_nu());
    }

    #[test]
    fn first_matching_region_wins() {
        let plus = GraphDistribution::delta(build_path(2).unwrap());
        let minus = GraphDistribution::delta(Graph::empty(2).unwrap());
        let s = Sags::locally_constant(
            vec![Region {
                predicate: Predicate::HalfSpace { normal: DVector::from_vec(vec![1.0, 0.0]), offset: 0.0 },
                nu: plus.clone(),
            }],
            minus.clone(),
        )
        .unwrap();
        assert_eq!(s.nu_at(&DVector::from_vec(vec![1.0, 0.0])).unwrap(), plus);
        assert_eq!(s.nu_at(&DVector::from_vec(vec![-1.0, 0.0])).unwrap(), minus);
        // boundary belongs to the half-space
        assert_eq!(s.nu_at(&DVector::from_vec(vec![0.0, 5.0])).unwrap(), plus);
    }

    #[test]
    fn callback_recovers_fixed_graph() {
        let g0 = build_lattice(1, 3).unwrap();
        let g = g0.clone();
        let s = Sags::callback(3, move |_| GraphDistribution::delta(g.clone()));
        assert_eq!(s.nu_at(&DVector::zeros(3)).unwrap(), GraphDistribution::delta(g0));
        assert!(matches!(s.nu_at(&DVector::zeros(2)), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn nearest_centroid_partitions_space() {
        let centroids = Arc::new(vec![DVector::from_vec(vec![0.0]), DVector::from_vec(vec![2.0])]);
        let p0 = Predicate::NearestCentroid { centroids: centroids.clone(), index: 0 };
        let p1 = Predicate::NearestCentroid { centroids, index: 1 };
        for x in [-1.0, 0.5, 1.0, 1.5, 3.0] {
            let x = DVector::from_vec(vec![x]);
            assert!(p0.contains(&x) ^ p1.contains(&x));
        }
    }

    #[test]
    fn lift_of_delta_enumerates_graph_law() {
        let x = DVector::from_vec(vec![1.0, -1.0]);
        let j = lift(&Sags::Constant(two_graph_nu()), &DistSignal::Delta(x.clone()), 0).unwrap();
        let atoms = j.enumerate().unwrap().unwrap();
        assert_eq!(atoms.len(), 2);
        assert!(atoms.iter().all(|a| a.x == x));
        assert_eq!(atoms.iter().map(|a| a.prob).collect::<Vec<_>>(), vec![0.25, 0.75]);
    }

    #[test]
    fn parallel_draws_match_single_draws() {
        let mu = DistSignal::Gaussian(crate::distrib::Gaussian::standard(2));
        let j = lift(&Sags::Constant(two_graph_nu()), &mu, 17).unwrap();
        let all = j.draws(50).unwrap();
        for i in [0usize, 13, 49] {
            let (x, g) = j.draw(i as u64).unwrap();
            assert_eq!(x, all[i].0);
            assert_eq!(*g, *all[i].1);
        }
    }

    #[test]
    fn rejects_bad_distributions() {
        assert!(GraphDistribution::new(vec![]).is_err());
        assert!(GraphDistribution::new(vec![(build_path(2).unwrap(), 0.5)]).is_err());
        assert!(GraphDistribution::new(vec![(build_path(2).unwrap(), 0.5), (build_path(3).unwrap(), 0.5)]).is_err());
    }

    #[test]
    fn json_with_paths_and_inline_graphs() {
        let dir = std::env::temp_dir().join(format!("dgsp-sags-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        build_path(2).unwrap().save_json(dir.join("p2.json")).unwrap();
        let text = r#"{"kind": "locally_constant",
            "regions": [{"predicate": {"box": {"lo": [0, 0], "hi": [1, 1]}}, "graphs": ["p2.json"], "probs": [1.0]}],
            "graphs": [{"n": 2, "edges": []}], "probs": [1.0]}"#;
        std::fs::write(dir.join("s.json"), text).unwrap();
        let s = Sags::load_json(dir.join("s.json")).unwrap();
        let inside = s.nu_at(&DVector::from_vec(vec![0.5, 1.0])).unwrap();
        assert_eq!(*inside.support()[0].0, build_path(2).unwrap());
        let outside = s.nu_at(&DVector::from_vec(vec![2.0, 0.0])).unwrap();
        assert_eq!(outside.support()[0].0.edge_count(), 0);
        let back = SagsFile::from_sags(&s).unwrap().into_sags(&dir).unwrap();
        assert_eq!(back.nu_at(&DVector::from_vec(vec![0.5, 1.0])).unwrap(), inside);
        std::fs::remove_dir_all(dir).ok();
    }
}
