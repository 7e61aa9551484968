//! Performance of vehicle-to-vehicle broadcast at a road intersection.
//!
//! Queued vehicles wait at the intersection on the x-street and transmit with
//! probability ρ per slot; running vehicles on both streets form Poisson
//! processes and transmit with probability ρ0. Links suffer Rayleigh fading
//! and r^−α path loss, and a reception succeeds when the SIR exceeds T.
//!
//! - [`exact`]: success probability and mean receiver count by products and
//!   quadrature.
//! - [`approx`]: closed forms for the three reference transmitter positions.
//! - [`montecarlo`]: seeded simulation with confidence intervals.
//! - [`optimizer`]: choice of ρ maximizing ρ·M̄(ρ), lookup tables.
//! - [`seriesmath`]: the partial sums and special functions underneath.

// NaN must fail the range checks, hence !(x > 0.0) style tests
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::excessive_precision)]

pub mod approx;
pub mod error;
pub mod exact;
pub mod model;
pub mod montecarlo;
pub mod optimizer;
pub mod quad;
pub mod seriesmath;

pub use error::{Error, Result};
