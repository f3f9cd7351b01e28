//! Distributional graph signal processing.
//!
//! Signals are probability distributions on `R^n` ([`DistSignal`]); graphs may
//! themselves be random and depend on the signal ([`sags::Sags`]); filters are
//! pairs of such a structure with a map from graphs to matrices
//! ([`operators::OperatorPair`]). Distances between distributional signals are
//! Wasserstein-2 ([`wasserstein`]).

pub mod distrib;
pub mod error;
pub mod graph;
pub mod io;
pub mod linalg;
pub mod operators;
pub mod pipelines;
pub mod rng;
pub mod sags;
pub mod sampling;
pub mod selftest;
pub mod spectral;
pub mod wasserstein;

pub use distrib::{DistSignal, Empirical, Gaussian, Mixture, SampleBatch};
pub use error::{Error, Result};
pub use graph::{Graph, GsoKind};
pub use operators::{FilterMap, OperatorPair};
pub use sags::{GraphDistribution, Sags};
pub use spectral::SpectralDecomposition;
