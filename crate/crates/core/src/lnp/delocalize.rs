//! Greedy edge addition that maximizes the degree variance.
//!
//! Candidates are ordered pairs `(u, v)` that are not edges, with `u != v`
//! and `u` within undirected distance 2 of `v`. Each round adds the
//! candidate with the largest increase of `H`, ties broken by the smallest
//! `(u, v)`. Adding `u -> v` raises both total degrees by one, so the gain is
//! `(2 (d_u + d_v) + 2) / n - 4 dbar / n - 4 / n^2`, increasing in `d_u + d_v`.

use std::collections::BTreeSet;

use crate::dist::uniform_open_closed;
use crate::error::{Error, Result};
use crate::rng::{stream, tags};
use crate::topology::{total_degrees, NetworkGraph, NeuronId};

use super::lyapunov::neighbour_sets;

#[derive(Debug, Clone, PartialEq)]
pub struct DelocalizeOutcome {
    pub graph: NetworkGraph,
    pub added: Vec<(NeuronId, NeuronId)>,
    /// Requested edges that could not be added (candidate set exhausted).
    pub shortfall: usize,
}

/// Variance gain of adding one edge between nodes of total degree `du`, `dv`.
pub fn variance_gain(du: usize, dv: usize, mean_degree: f64, n: usize) -> f64 {
    let n = n as f64;
    (2.0 * (du + dv) as f64 + 2.0) / n - 4.0 * mean_degree / n - 4.0 / (n * n)
}

/// Current candidate set, in lexicographic order.
pub fn candidate_pairs(graph: &NetworkGraph) -> Vec<(NeuronId, NeuronId)> {
    let nb = neighbour_sets(graph);
    let mut out = BTreeSet::new();
    for (&v, first) in &nb {
        let mut reach: BTreeSet<NeuronId> = first.clone();
        for u in first {
            reach.extend(nb[u].iter().copied());
        }
        reach.remove(&v);
        for u in reach {
            if !graph.has_edge(u, v) {
                out.insert((u, v));
            }
        }
    }
    out.into_iter().collect()
}

pub fn delocalize_edges(graph: &NetworkGraph, m: usize, w_scale: f64, seed: u64) -> Result<DelocalizeOutcome> {
    if !(w_scale > 0.0) {
        return Err(Error::config("w_scale must be positive"));
    }
    let mut g = graph.clone();
    let mut added = Vec::with_capacity(m);
    let mut rng = stream(seed, tags::DELOCALIZE);
    let n = g.n_nodes();
    for _ in 0..m {
        let candidates = candidate_pairs(&g);
        if candidates.is_empty() {
            break;
        }
        let deg = total_degrees(&g);
        let mean = deg.values().sum::<usize>() as f64 / n as f64;
        let mut best: Option<((NeuronId, NeuronId), f64)> = None;
        for &(u, v) in &candidates {
            let gain = variance_gain(deg[&u], deg[&v], mean, n);
            // Strict improvement keeps the lexicographically first maximizer.
            if best.is_none_or(|(_, b)| gain > b) {
                best = Some(((u, v), gain));
            }
        }
        let ((u, v), _) = best.expect("non-empty candidates");
        let sign = g.sign(u).expect("live").factor();
        g.set_edge(u, v, sign * uniform_open_closed(&mut rng, w_scale))?;
        added.push((u, v));
    }
    Ok(DelocalizeOutcome { shortfall: m - added.len(), graph: g, added })
}
