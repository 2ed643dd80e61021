//! Link-level simulation of single-carrier block transmission with
//! frequency-domain equalization over a two-hop decode-and-forward relay.
//!
//! A single-antenna source sends cyclic-prefixed QPSK blocks to a relay with
//! `N_R` antennas; the relay equalizes per tone, decides, and re-transmits
//! the decisions — weighted per antenna under a unit power budget — to a
//! destination with `N_D` antennas. There is no direct source-destination
//! path. The crate provides the pieces individually and an orchestrated
//! Monte-Carlo simulation on top:
//!
//! * [`spectral`] — block transforms and circular convolution,
//! * [`modem`] — QPSK mapping, hard decisions, bit recovery,
//! * [`channel`] — exponential-profile Rayleigh taps and cyclic-prefix
//!   transmission,
//! * [`mmse_fde`] — per-tone MMSE combining with optional decision feedback,
//! * [`power_alloc`] — equal and MSE-optimal relay power allocation,
//! * [`link_sim`] — deterministic, parallel bit-error-rate sweeps.

pub mod channel;
pub mod error;
pub mod link_sim;
pub mod mmse_fde;
pub mod modem;
pub mod power_alloc;
pub mod spectral;

pub use error::{Error, Result};
