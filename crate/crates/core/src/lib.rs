//! Lévy processes conditioned to avoid an interval.
//!
//! The crate covers the centred jump-diffusion with Brownian part and
//! symmetric two-sided exponential jumps:
//!
//! * [`model`]: parameters, Laplace exponent, Wiener–Hopf factors, κ(q) and
//!   ladder potentials;
//! * [`closed_form`]: overshoot laws, crossing measures `ν_k`, and the
//!   harmonic functions `h₊`, `h₋`, `h` for the process killed on `[a, b]`;
//! * [`path`]: exact path simulation with Brownian-bridge killing and the raw
//!   Monte Carlo estimators;
//! * [`conditioned`]: weighted particle systems realizing the h-transformed
//!   laws;
//! * [`verify`]: the check suites behind the `verify` command.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod closed_form;
pub mod conditioned;
pub mod error;
pub mod format;
pub mod model;
pub mod path;
pub mod rng;
pub mod stats;
pub mod verify;

pub use error::{Error, Result};
pub use format::{fmt17, to_json};
