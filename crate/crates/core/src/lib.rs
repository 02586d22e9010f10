//! Sparse tensor additive regression.
//!
//! A scalar response is modeled as a sum of univariate smooth functions of
//! every entry of an m-way covariate tensor. Each function is expanded in a
//! spline basis, the coefficient tensor of every basis function is held in
//! low-rank CP form, and entries are selected with a group-lasso penalty on
//! the CP factors. Fitting alternates over ways, solving one convex
//! group-lasso problem per block.

pub mod baselines;
pub mod error;
pub mod estimator;
pub mod eval;
pub mod features;
pub mod sim;
pub mod spline;
pub mod tensor;

pub use error::{Result, StarError};
