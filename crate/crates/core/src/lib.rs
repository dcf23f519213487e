//! Tensor-based forecasting for station x day x intra-day-slot flow data.
//!
//! The crate is organised around a third-order [`DenseTensor`] holding
//! counts indexed by (location, day, slot):
//!
//! * [`cp`] fits a CP (CANDECOMP/PARAFAC) model by alternating least squares.
//! * [`arma2d`] models one temporal factor column folded into a
//!   day-of-week x week grid as a two-dimensional ARMA random field.
//! * [`forecast`] chains the two for multi-day prediction and refreshes a
//!   day's prediction from a partial observation of that day.
//! * [`lrtc`] performs variational Bayesian low-rank completion, used for
//!   short-horizon prediction by treating the future as missing cells.
//! * [`cluster`] groups stations by their CP location loadings so that
//!   completion can run per homogeneous cluster.
//! * [`harness`] holds ingestion, synthetic data, baselines and experiments.

pub mod arma2d;
pub mod cluster;
pub mod cp;
pub mod error;
pub mod forecast;
pub mod harness;
pub mod linalg;
pub mod lrtc;
pub mod tensor;

pub use cp::{cp_fit, cp_rank_select, cp_reconstruct, cp_solve_mode, AlsConfig, CpFit, CpModel};
pub use error::{Error, Result};
pub use tensor::{fold, khatri_rao, relative_residual, unfold, DenseTensor, FactorMatrix, ObservationMask};
