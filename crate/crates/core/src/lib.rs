//! Mirror natural evolution strategies (MiNES).
//!
//! A zeroth-order optimizer that searches with a Gaussian `N(μ, α²Σ)`:
//! the mean follows antithetic natural-gradient estimates and the inverse
//! covariance `Σ⁻¹` follows projected mirror descent under the log-det
//! potential, so that `Σ⁻¹` learns the Hessian of the objective.
//!
//! All numerics are generic over [`Scalar`] (`f32` or `f64`); the `*64`
//! aliases below fix the common double-precision instantiation.

pub mod analysis;
pub mod domain;
pub mod error;
pub mod estimators;
pub mod geometry;
pub mod matrix;
pub mod optimizer;
pub mod problems;
pub mod sampling;
pub mod scalar;

pub use domain::{
    EstimatorMode, Eta1Schedule, Eta2Schedule, LocalConstants, MinesConfig, SearchState,
    SmoothnessSpec, SpectralBand, Stage, SwitchMode,
};
pub use analysis::{RateFit, SuiteReport, TheoryConstants, TheoryFactors};
pub use error::{Error, Result};
pub use geometry::ProjectionReport;
pub use matrix::{Eigen, SymMatrix};
pub use optimizer::{run, AlgoChoice, RunOptions, RunOutcome, RunTrace, ScheduleState, TraceRow};
pub use problems::{Oracle, Problem, QuadraticSpec};
pub use sampling::{AntitheticBatch, Preconditioner, RngStream};
pub use scalar::Scalar;

pub type SymMatrix64 = SymMatrix<f64>;
pub type SymMatrix32 = SymMatrix<f32>;
pub type SpectralBand64 = SpectralBand<f64>;
pub type SearchState64 = SearchState<f64>;
pub type MinesConfig64 = MinesConfig<f64>;
pub type Problem64 = Problem<f64>;
pub type Problem32 = Problem<f32>;
pub type RunTrace64 = RunTrace<f64>;
