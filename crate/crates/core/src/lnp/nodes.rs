//! Removal of low-betweenness neurons.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::topology::{betweenness_centrality, NetworkGraph, NeuronId};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum CentralityThreshold {
    /// Remove nodes scoring strictly below this value.
    Absolute(f64),
    /// Remove the `floor(q N)` lowest-scoring nodes (lower id first on ties).
    Quantile(f64),
}

impl CentralityThreshold {
    pub fn validate(&self) -> Result<()> {
        match *self {
            CentralityThreshold::Absolute(t) if t.is_finite() => Ok(()),
            CentralityThreshold::Quantile(q) if (0.0..=1.0).contains(&q) => Ok(()),
            _ => Err(Error::config("centrality threshold must be finite (absolute) or in [0, 1] (quantile)")),
        }
    }
}

/// Nodes selected for removal, in ascending id order.
pub fn nodes_below_threshold(graph: &NetworkGraph, threshold: CentralityThreshold) -> Result<BTreeSet<NeuronId>> {
    threshold.validate()?;
    let scores = betweenness_centrality(graph);
    Ok(match threshold {
        CentralityThreshold::Absolute(t) => scores.iter().filter(|(_, &s)| s < t).map(|(&id, _)| id).collect(),
        CentralityThreshold::Quantile(q) => {
            let k = (q * scores.len() as f64).floor() as usize;
            let mut ranked: Vec<(NeuronId, f64)> = scores.into_iter().collect();
            ranked.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
            ranked[..k].iter().map(|r| r.0).collect()
        }
    })
}

/// Copy of `graph` without the below-threshold nodes and their edges.
pub fn prune_nodes(graph: &NetworkGraph, threshold: CentralityThreshold) -> Result<(NetworkGraph, BTreeSet<NeuronId>)> {
    if graph.is_empty() {
        return Err(Error::input("cannot prune an empty graph"));
    }
    let removed = nodes_below_threshold(graph, threshold)?;
    if removed.len() == graph.n_nodes() {
        return Err(Error::config("centrality threshold would remove every neuron"));
    }
    Ok((graph.without_nodes(&removed), removed))
}
