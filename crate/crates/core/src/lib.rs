//! Sound-speed profile estimation for an underwater acoustic region.
//!
//! The field is a Gaussian basis-function expansion over a range–depth box.
//! An unscented Kalman filter fuses point sound-speed (CTD) samples with
//! transmission-loss (TL) observations from a fixed transmitter, and a
//! receding-horizon planner steers the vehicle to minimise the predicted,
//! region-integrated field variance.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod estimator;
pub mod field;
pub mod harness;
pub mod metrics;
pub mod motion;
pub mod planner;
pub mod propagation;
pub mod sensing;

pub use error::{Error, Result};
pub use field::{BasisGrid, Point, Region, SspField};
