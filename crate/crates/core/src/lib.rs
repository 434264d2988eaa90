//! Classic and adjusted canonical correlation analysis.
//!
//! The between-set correlation matrix `Rxy` is approximated by a rank-k
//! matrix that is optimal in the generalized least squares metric defined by
//! the inverse within-set correlation matrices. Adjusted variants subtract a
//! scalar, per-row or per-column offset before factoring, fitted with an
//! alternating algorithm ([`agls`]). Results can be drawn as calibrated
//! biplots ([`biplot`]).

pub mod agls;
pub mod biplot;
pub mod cca;
pub mod cli;
pub mod correlation;
pub mod diagnostics;
pub mod error;
pub mod io;
pub mod linalg;
mod serde_mat;

pub use agls::{fit, fit_all, AdjustmentModel, AglsConfig, FitResult, GlsWeights, Init};
pub use correlation::{correlations, standardize, CorrelationStructure, TwoBlockData};
pub use error::{Error, Result};
