//! Semiparametric varying-coefficient mixed-effects models for clustered data.
//!
//! The model for observation `j` of cluster `i` is
//!
//! ```text
//! y_ij = X_ij' a_i(U_ij) + Z_i' beta(U_ij) + eps_ij
//! a_i(u) = alpha_0(u) + A(u) Z_i + e_i
//! ```
//!
//! with functional coefficients estimated by local-linear kernel least
//! squares, variance components from per-cluster residual regressions, and
//! Gumbel-calibrated simultaneous bands and sup-norm tests.

pub mod config;
pub mod data;
pub mod error;
pub mod inference;
pub mod io;
pub mod kernel;
pub mod linalg;
pub mod local;
pub mod pipeline;
pub mod simulation;
pub mod varcomp;

pub use config::{CoefId, EvalMode, FitConfig, GridSpec, Layout};
pub use data::{validate_dataset, Cluster, ClusterDataset, Observation};
pub use error::{Error, Result};
pub use kernel::{Kernel, KernelMoments, TabulatedKernel};
pub use local::{fit_curves, local_fit, CoefficientCurves, Degree, LocalFit};
