//! Bayesian optimization over parameter distributions.

pub mod bessel;
pub mod bo;
pub mod ei;
pub mod gp;
pub mod kernel;
pub mod quadrature;
pub mod set;
pub mod wasserstein;

pub use ei::expected_improvement;
pub use gp::{gp_fit, gp_predict, GpCore, GpState};
pub use kernel::{matern, matern_w_kernel, KernelHyper};
pub use set::{set_distance, ParamDistributionSet, SetDistanceMode, SetProfile};
pub use wasserstein::wasserstein_1d;
pub use bo::{bo_loop, BoConfig, BoOutcome, BoStage, BoTraceEntry, MarginalBounds, Range, SearchSpace};
