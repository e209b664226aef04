//! Stochastic decoupled policy gradient on small analytic tasks.

// Index loops read closer to the math here, and `!(x < y)` is used on
// purpose so NaN fails range checks.
#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord)]

pub mod checkpoint;
pub mod config;
pub mod envs;
pub mod error;
pub mod eval;
pub mod nn;
pub mod oracle;
pub mod plot;
pub mod rng;
pub mod rollout;
pub mod sdpg;
pub mod train;

pub use error::{Error, Result};
