//! Heterogeneous recurrent spiking networks.
//!
//! The crate covers network construction ([`topology`]), heterogeneous LIF
//! dynamics ([`neuron`]), trace-based STDP ([`plasticity`]), spike encoding
//! and linear readouts ([`encode`], [`readout`]), efficiency metrics
//! ([`metrics`]), Lyapunov noise pruning ([`lnp`]), Bayesian optimisation over
//! parameter distributions ([`bayesopt`]), benchmark data ([`datagen`]) and
//! the experiment runner behind the `hrsnn` binary ([`runner`]).

// Validation uses `!(x > 0.0)`-style checks on purpose: they also reject NaN.
// Matrix kernels index several arrays with the same loop variables.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod bayesopt;
pub mod config;
pub mod datagen;
pub mod dist;
pub mod encode;
pub mod error;
pub mod lnp;
pub mod metrics;
pub mod model;
pub mod rng;
pub mod runner;
pub mod neuron;
pub mod plasticity;
pub mod readout;
pub mod topology;

pub use error::{Error, Result};
