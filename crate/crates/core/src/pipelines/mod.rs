//! Desk-scale versions of three experiments: sampling lattice images from an
//! edgewise Gaussian model, learning predictive filters whose coefficients
//! depend on the signal, and anomaly detection with combined filters.

pub mod anomaly;
pub mod edgewise;
pub mod weather;
