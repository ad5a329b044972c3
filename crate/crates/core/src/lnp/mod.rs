//! Lyapunov noise pruning: node Lyapunov exponents, the harmonic-mean
//! Lyapunov matrix, covariance-weighted synapse sparsification, centrality
//! node pruning, degree-variance delocalization and timescale re-optimization.

pub mod activity;
pub mod covariance;
pub mod delocalize;
pub mod lyapunov;
pub mod nodes;
pub mod pipeline;
pub mod sparsify;
pub mod timescale;

pub use pipeline::{linearize, log_to_jsonl, run_lnp, Linearization, LnpIterationRecord, LnpRun, PruneConfig, PrunedModel};
