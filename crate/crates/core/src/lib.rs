//! Particle-in-cell solver for the two-species magnetized Vlasov-Poisson
//! system in one space and two velocity dimensions, with an adjoint-based
//! optimizer for an external magnetic control `B(t, x)`.

// NaN-rejecting `!(a > b)` checks and index loops over coupled arrays are
// deliberate in the numerics
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod adjoint;
pub mod analysis;
pub mod config;
pub mod control;
pub mod domain;
pub mod elliptic;
pub mod error;
pub mod export;
pub mod fields;
pub mod forward;
pub mod gradient;
pub mod optimizer;
pub mod pusher;
pub mod rng;
pub mod run;
pub mod sampling;
pub mod tracking;

pub use error::{Error, Result};
