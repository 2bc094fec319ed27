//! Receiver power-splitting design for training-based SWIPT links.
//!
//! A block of `lp` pilot symbols followed by `ld` data symbols is received
//! over a Rayleigh block-fading channel. The receiver splits each received
//! symbol between baseband processing (channel estimation during training,
//! detection during data) and an energy harvester. This crate computes the
//! splitting ratios that maximize the ergodic capacity lower bound subject to
//! an average harvested-power requirement:
//!
//! * [`nonadaptive`] solves for fixed ratios `(rho_p, rho_d)` in closed form.
//! * [`adaptive`] lets `rho_d` follow the channel estimate of each block,
//!   finding the Lagrange multiplier by bisection and `rho_p` by line search.
//! * [`montecarlo`] simulates the link to cross-check both.
//! * [`cli`] drives sweeps and verification runs and renders CSV/JSON.
//!
//! All powers are linear and logarithms are natural (nats per channel use).

// `!(x > 0.0)` is used on purpose throughout: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod adaptive;
pub mod cli;
pub mod error;
pub mod model;
pub mod montecarlo;
pub mod nonadaptive;
pub mod specfun;

pub use error::{Error, Result};
pub use model::{EstimationModel, SplitPair, SystemConfig};
