//! Hybrid-parameterized-action reinforcement learning with multi-objective
//! ensemble critics for highway driving.
//!
//! The crate bundles a small dense-network toolkit ([`nn`]), a multi-lane
//! highway simulator ([`env`]), hybrid action machinery ([`action`]), vector
//! rewards ([`reward`]), the ensemble-critic learner ([`agent`]),
//! uncertainty-guided exploration ([`explore`]), the training and evaluation
//! loop ([`trainer`]) and replay of HighD-format recordings ([`highd`]).

// Validation uses `!(x > 0.0)` so that NaN is rejected, and the numeric
// kernels index several parallel arrays in one loop.
#![allow(
    clippy::neg_cmp_op_on_partial_ord,
    clippy::needless_range_loop,
    clippy::too_many_arguments,
    clippy::type_complexity
)]

pub mod action;
pub mod agent;
pub mod config;
pub mod env;
pub mod error;
pub mod explore;
pub mod highd;
pub mod metrics;
pub mod nn;
pub mod reward;
pub mod trainer;

pub use error::{Error, Result};
