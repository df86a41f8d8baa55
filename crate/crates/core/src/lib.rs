//! Constrained canonical correlation (C3) dimension reduction.
//!
//! The pipeline expands the response in a B-spline basis, estimates
//! canonical directions between that basis and the predictors (CANCOR),
//! shrinks each direction along a decreasing L1 path until its correlation
//! leaves a Fisher lower confidence band, filters small coefficients with a
//! BIC-type criterion, and re-estimates the surviving coefficients.

pub mod c3solver;
pub mod cancor;
pub mod data;
pub mod error;
pub mod filter;
pub mod moments;
pub mod pipeline;
pub mod simharness;
pub mod splines;

pub use error::{C3Error, Result};
