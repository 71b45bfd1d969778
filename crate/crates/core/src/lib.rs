//! Doubly robust estimation of functional conditional average treatment
//! effects (F-CATE).
//!
//! The crate is organised bottom-up:
//!
//! - [`funcdata`]: grids, curves, L² norms, B-spline smoothing with GCV and
//!   the curve CSV format.
//! - [`gp`]: Matérn kernels and Gaussian-process sampling on a grid.
//! - [`learners`]: propensity, function-on-scalar and conditional covariance
//!   learners.
//! - [`metalearner`]: cross-fitting, pseudo-outcomes, the third-stage F-CATE
//!   regression, FATE aggregation, confidence bands and the bias diagnostic.
//! - [`simulate`]: the synthetic benchmark (data generating process,
//!   misspecification scenarios, ARMSE and the Monte Carlo driver).

pub mod error;
pub mod funcdata;
pub mod gp;
pub mod learners;
pub mod metalearner;
pub mod rng;
pub mod simulate;

pub use error::{Error, Result};
