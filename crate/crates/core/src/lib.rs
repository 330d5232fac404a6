//! Monte Carlo estimators for the mobile geometric graph: Poisson nodes in
//! `R^d` moving by independent Brownian motions, joined when within distance `r`.
//!
//! The crate measures detection, coverage, percolation and broadcast times and
//! checks the exact identities behind them (sausage volumes, couplings,
//! density events) at desk scale.

// `!(x > 0.0)` style checks are meant to reject NaN as well
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod broadcast;
pub mod config;
pub mod coverage;
pub mod detection;
pub mod error;
pub mod experiments;
pub mod graph;
pub mod percolation;
pub mod points;
pub mod rng;
pub mod sausage;
pub mod stats;

pub use config::{AxisBox, DeterministicPath, DomainSpec, SimConfig, Trajectory};
pub use error::{Error, Result};
pub use graph::{build_graph, CrossingReport, GeometricGraph};
pub use points::{sample_poisson_points, stationarity_check, NodeEnsemble};
pub use rng::TrialKey;
