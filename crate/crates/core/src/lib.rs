//! Geostatistical analysis of functional data: penalized smoothing of curves
//! observed over space, trace-variogram estimation and fitting, drift
//! estimation, functional kriging, penalized surface smoothing, and
//! autoregressive forecasting of surface time series, with a Gaussian
//! simulator for verification.

pub mod basis;
pub mod error;
pub mod far;
pub mod kriging;
pub mod moments;
pub mod quad;
pub mod sim;
pub mod spatial;
pub mod surface;
pub mod tracevar;

#[cfg(test)]
pub(crate) mod testutil;

pub use error::{Error, Result};
