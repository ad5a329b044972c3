//! Re-optimization of the membrane-time-constant distributions of a pruned
//! network, driving the leading eigenvalue of its linearization toward zero.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::bayesopt::{bo_loop, BoConfig, BoOutcome, ParamDistributionSet, Range, SearchSpace};
use crate::error::{Error, Result};
use crate::neuron::{sample_params, HeterogeneityProfile, NeuronParams};
use crate::plasticity::StdpProfile;
use crate::rng::{derive, tags};
use crate::topology::{NetworkGraph, NeuronId};

use super::covariance::{max_real_eigenvalue, LinearizedSystem};
use super::lyapunov::LyapunovMatrix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimescaleConfig {
    pub budget: usize,
    /// Shape box of both membrane-time-constant laws.
    pub shape: Range,
    /// Scales range over `[theta / f, theta f]` around the current law.
    pub scale_factor: f64,
    pub n_candidates: usize,
}

impl Default for TimescaleConfig {
    fn default() -> Self {
        TimescaleConfig { budget: 10, shape: Range::new(1.0, 16.0), scale_factor: 4.0, n_candidates: 256 }
    }
}

impl TimescaleConfig {
    pub fn validate(&self) -> Result<()> {
        if self.budget < crate::bayesopt::bo::MIN_BUDGET {
            return Err(Error::config(format!("timescale budget must be >= 5 (got {})", self.budget)));
        }
        if self.n_candidates == 0 {
            return Err(Error::config("timescale n_candidates must be positive"));
        }
        Ok(())
    }

    fn bo(&self) -> BoConfig {
        BoConfig { budget: self.budget, n_candidates: self.n_candidates, ..BoConfig::default() }
    }
}

/// `J = -|lambda_max|`.
pub fn edge_of_chaos_objective(lambda_max: f64) -> f64 {
    -lambda_max.abs()
}

/// Run the distribution search with `lambda_of` giving the leading
/// eigenvalue of the system built from a candidate set.
pub fn search_timescales<F>(mut lambda_of: F, space: &SearchSpace, cfg: &TimescaleConfig, seed: u64) -> Result<BoOutcome>
where
    F: FnMut(&ParamDistributionSet) -> Result<f64>,
{
    cfg.validate()?;
    bo_loop(|x| Ok(edge_of_chaos_objective(lambda_of(x)?)), space, &cfg.bo(), seed)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TimescaleOutcome {
    pub params: BTreeMap<NeuronId, NeuronParams>,
    pub profile: HeterogeneityProfile,
    pub lambda_before: f64,
    pub lambda_after: f64,
    pub search: BoOutcome,
}

/// Membrane constants drawn from `profile` with a fixed stream; all other
/// per-neuron parameters are kept.
fn resample_tau(
    graph: &NetworkGraph,
    params: &BTreeMap<NeuronId, NeuronParams>,
    profile: &HeterogeneityProfile,
    seed: u64,
) -> Result<BTreeMap<NeuronId, NeuronParams>> {
    let fresh = sample_params(profile, graph, derive(seed, tags::TIMESCALE))?;
    params
        .iter()
        .map(|(id, p)| {
            let tau = fresh.get(id).ok_or_else(|| Error::input(format!("neuron {id} missing from the graph")))?.tau_m;
            Ok((*id, NeuronParams { tau_m: tau, ..*p }))
        })
        .collect()
}

fn leading(graph: &NetworkGraph, params: &BTreeMap<NeuronId, NeuronParams>, l: &LyapunovMatrix) -> Result<f64> {
    let sys = LinearizedSystem::from_lyapunov(&graph.node_ids(), params, l, 0.0)?;
    max_real_eigenvalue(&sys.a)
}

/// Search the excitatory and inhibitory `tau_m` laws with the coupling `l`
/// held fixed, then resample every neuron's `tau_m` from the best laws.
pub fn optimize_timescales(
    graph: &NetworkGraph,
    params: &BTreeMap<NeuronId, NeuronParams>,
    profile: &HeterogeneityProfile,
    l: &LyapunovMatrix,
    cfg: &TimescaleConfig,
    seed: u64,
) -> Result<TimescaleOutcome> {
    cfg.validate()?;
    let lambda_before = leading(graph, params, l)?;
    let stdp = StdpProfile::default();
    let base = ParamDistributionSet::from_profiles(profile, &stdp);
    let space = SearchSpace::around_subset(base, &[0, 1], cfg.shape, cfg.scale_factor)?;
    let search = search_timescales(
        |x| {
            let (het, _) = x.apply(profile, &stdp);
            leading(graph, &resample_tau(graph, params, &het, seed)?, l)
        },
        &space,
        cfg,
        seed,
    )?;
    let (best_profile, _) = search.best.apply(profile, &stdp);
    let new_params = resample_tau(graph, params, &best_profile, seed)?;
    let lambda_after = leading(graph, &new_params, l)?;
    Ok(TimescaleOutcome { params: new_params, profile: best_profile, lambda_before, lambda_after, search })
}
