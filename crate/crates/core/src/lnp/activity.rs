//! Activity-based pruning comparator: repeatedly remove the least active
//! neurons, recomputing firing rates after each removal.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::neuron::NeuronParams;
use crate::topology::{degree_variance, NetworkGraph, NeuronId};

use super::pipeline::PrunedModel;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActivityPruneConfig {
    /// Fraction of the current neurons removed per iteration.
    pub fraction_per_iter: f64,
    pub max_iterations: usize,
    /// Stop once the synapse count is at most this value.
    pub target_synapses: Option<usize>,
}

impl Default for ActivityPruneConfig {
    fn default() -> Self {
        ActivityPruneConfig { fraction_per_iter: 0.05, max_iterations: 10, target_synapses: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActivityRecord {
    pub iter: usize,
    pub n_neurons: usize,
    pub n_synapses: usize,
    pub density: f64,
    pub degree_var: f64,
}

/// The `k` lowest-rate neurons (missing rates count as 0; lower id first on
/// ties).
pub fn least_active(rates: &BTreeMap<NeuronId, f64>, ids: &[NeuronId], k: usize) -> BTreeSet<NeuronId> {
    let mut ranked: Vec<(NeuronId, f64)> = ids.iter().map(|&id| (id, rates.get(&id).copied().unwrap_or(0.0))).collect();
    ranked.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    ranked.into_iter().take(k).map(|r| r.0).collect()
}

/// Prune by activity. `rates_of` measures per-neuron firing rates of the
/// current model (and may retrain it first).
pub fn run_activity_pruning<F>(model: &PrunedModel, cfg: &ActivityPruneConfig, mut rates_of: F) -> Result<(PrunedModel, Vec<ActivityRecord>)>
where
    F: FnMut(&PrunedModel) -> Result<BTreeMap<NeuronId, f64>>,
{
    if !(cfg.fraction_per_iter > 0.0 && cfg.fraction_per_iter < 1.0) {
        return Err(Error::config("activity fraction_per_iter must lie in (0, 1)"));
    }
    let mut m = model.clone();
    let mut log = Vec::new();
    for iter in 1..=cfg.max_iterations {
        if cfg.target_synapses.is_some_and(|t| m.graph.n_edges() <= t) || m.graph.n_nodes() < 2 {
            break;
        }
        let rates = rates_of(&m)?;
        let ids = m.graph.node_ids();
        let k = ((cfg.fraction_per_iter * ids.len() as f64).ceil() as usize).clamp(1, ids.len() - 1);
        let mut removed = BTreeSet::new();
        // Remove one neuron at a time so a synapse target is not overshot
        // by more than one neuron's edges.
        for id in least_active(&rates, &ids, k) {
            if cfg.target_synapses.is_some_and(|t| m.graph.n_edges() <= t) {
                break;
            }
            let one = BTreeSet::from([id]);
            m.graph = m.graph.without_nodes(&one);
            removed.insert(id);
        }
        m.params.retain(|id, _| !removed.contains(id));
        log.push(ActivityRecord {
            iter,
            n_neurons: m.graph.n_nodes(),
            n_synapses: m.graph.n_edges(),
            density: m.graph.density(),
            degree_var: degree_variance(&m.graph)?,
        });
    }
    Ok((m, log))
}

/// Parameters restricted to the nodes of `graph`.
pub fn restrict_params(params: &BTreeMap<NeuronId, NeuronParams>, graph: &NetworkGraph) -> BTreeMap<NeuronId, NeuronParams> {
    params.iter().filter(|(id, _)| graph.contains(**id)).map(|(k, v)| (*k, *v)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn least_active_ties_by_id() {
        let rates = BTreeMap::from([(NeuronId(0), 1.0), (NeuronId(1), 0.5), (NeuronId(2), 0.5), (NeuronId(3), 2.0)]);
        let ids: Vec<NeuronId> = (0..4).map(NeuronId).collect();
        assert_eq!(least_active(&rates, &ids, 2), BTreeSet::from([NeuronId(1), NeuronId(2)]));
    }
}
