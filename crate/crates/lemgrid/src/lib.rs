//! Simulation engine for peer-to-peer energy trading on radial low-voltage
//! feeders.
//!
//! The pipeline, bottom to top:
//!
//! * [`net`] — feeder topology, admittance matrices, and a fixed-point AC
//!   power-flow solver.
//! * [`sensitivity`] — analytic first-order coefficients around an operating
//!   point: voltage-magnitude sensitivities, injection shift factors / power
//!   transfer distribution factors, and marginal-loss coefficients.
//! * [`market`] — a continuous double auction with adaptive (ZIP) traders
//!   activated by a Poisson arrival process.
//! * [`agents`] — household load/PV profiles, battery scheduling, and the
//!   mapping from per-slot energy positions to market orders.
//! * [`permission`] — the network operator: every provisional trade is
//!   screened against voltage and line-capacity limits using the sensitivity
//!   coefficients, and approved trades are charged their marginal network
//!   costs.
//! * [`scenario`] — day-long runs wiring everything together, plus benchmark
//!   export-limiting schemes (fixed cap, inverter tripping, droop curtailment)
//!   for comparison.
//! * [`io`] — config files, profile/tariff CSV, report and log writers.

// `!(x >= 0.0)` in the validators deliberately rejects NaN, which `x < 0.0`
// would wave through; indexed loops in the matrix kernels keep the code
// aligned with the subscripts of the quantities they compute.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod agents;
pub mod error;
pub mod io;
pub mod market;
pub mod net;
pub mod permission;
pub mod scenario;
pub mod sensitivity;

pub use error::{Error, Result};
