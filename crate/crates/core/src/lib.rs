//! Stochastic modified equations for SGD: simulation, asymptotics, moment
//! control and adaptive optimizers built on them.

// `!(x > 0.0)` is used on purpose so NaN fails validation; index loops mirror the formulas.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod adaptive_optim;
pub mod asymptotics;
mod error;
pub mod io;
pub mod linalg;
pub mod moments_control;
pub mod objectives;
pub mod ode;
pub mod rng;
pub mod sgd_sim;
pub mod sme;
pub mod weak_error;

pub use error::{Error, Result};
pub use objectives::{FiniteSumObjective, SampleLoss};
pub use ode::OdePath;
pub use sgd_sim::{EnsembleMoments, SgdConfig, Trajectory};
pub use sme::{GaussianSummary, SdeSystem};

pub use nalgebra::{DMatrix, DVector};
