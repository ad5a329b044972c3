//! Recurrent network graph: lattice placement, distance-dependent random
//! connectivity, E/I labelling, and the graph measures used by pruning and
//! readout sampling (betweenness centrality, degree variance).
//!
//! Invariants kept by every constructor and mutator:
//! - excitatory neurons only have non-negative outgoing weights, inhibitory
//!   neurons only non-positive ones;
//! - no self-loops;
//! - every edge endpoint is a live node.
//!
//! Neuron ids are never reused: removing a node retires its id.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::dist::uniform_open_closed;
use crate::error::{Error, Result};
use crate::rng::{stream, tags};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NeuronId(pub u32);

impl std::fmt::Display for NeuronId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Sign {
    #[serde(rename = "exc")]
    Excitatory,
    #[serde(rename = "inh")]
    Inhibitory,
}

impl Sign {
    pub fn factor(self) -> f64 {
        match self {
            Sign::Excitatory => 1.0,
            Sign::Inhibitory => -1.0,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Sign::Excitatory => "exc",
            Sign::Inhibitory => "inh",
        }
    }

    /// True if `w` is allowed on an edge leaving a neuron with this sign.
    pub fn admits(self, w: f64) -> bool {
        match self {
            Sign::Excitatory => w >= 0.0,
            Sign::Inhibitory => w <= 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Node {
    pub pos: [f64; 3],
    pub sign: Sign,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopologyConfig {
    pub n_total: usize,
    /// Excitatory : inhibitory ratio.
    pub ei_ratio: (u32, u32),
    /// Connection amplitude `C` of the distance kernel.
    pub amplitude_c: f64,
    /// Length scale `lambda` of the distance kernel, in lattice units.
    pub lambda_scale: f64,
    pub input_fraction: f64,
    pub input_connect_prob: f64,
    pub lattice_shape: [usize; 3],
    pub n_encoders: usize,
    /// Upper bound of the initial recurrent weight magnitude.
    pub w_scale: f64,
    /// Upper bound of the initial input weight magnitude.
    pub w_in_scale: f64,
}

impl Default for TopologyConfig {
    fn default() -> Self {
        TopologyConfig {
            n_total: 200,
            ei_ratio: (4, 1),
            amplitude_c: 0.3,
            lambda_scale: 2.0,
            input_fraction: 0.30,
            input_connect_prob: 0.5,
            lattice_shape: [6, 6, 6],
            n_encoders: 20,
            w_scale: 3.0,
            w_in_scale: 12.0,
        }
    }
}

impl TopologyConfig {
    /// Smallest near-cubic lattice that holds `n` neurons.
    pub fn cubic_lattice_for(n: usize) -> [usize; 3] {
        let side = (n as f64).cbrt().ceil().max(1.0) as usize;
        let mut shape = [side, side, side];
        // Trim the last axis while the volume still fits.
        while shape[2] > 1 && shape[0] * shape[1] * (shape[2] - 1) >= n {
            shape[2] -= 1;
        }
        shape
    }

    pub fn validate(&self) -> Result<()> {
        let volume: usize = self.lattice_shape.iter().product();
        if self.n_total == 0 {
            return Err(Error::config("topology.n_total must be positive"));
        }
        if volume < self.n_total {
            return Err(Error::config(format!(
                "topology.lattice_shape {:?} holds {volume} sites, fewer than n_total = {}",
                self.lattice_shape, self.n_total
            )));
        }
        if !(0.0..=1.0).contains(&self.amplitude_c) {
            return Err(Error::config(format!("topology.amplitude_c = {} outside [0, 1]", self.amplitude_c)));
        }
        if !(self.lambda_scale > 0.0) {
            return Err(Error::config(format!("topology.lambda_scale = {} must be > 0", self.lambda_scale)));
        }
        if !(self.input_fraction > 0.0 && self.input_fraction <= 1.0) {
            return Err(Error::config(format!("topology.input_fraction = {} outside (0, 1]", self.input_fraction)));
        }
        if !(0.0..=1.0).contains(&self.input_connect_prob) {
            return Err(Error::config(format!(
                "topology.input_connect_prob = {} outside [0, 1]",
                self.input_connect_prob
            )));
        }
        if self.ei_ratio.0 + self.ei_ratio.1 == 0 {
            return Err(Error::config("topology.ei_ratio must have a positive part"));
        }
        if !(self.w_scale > 0.0 && self.w_in_scale > 0.0) {
            return Err(Error::config("topology weight scales must be positive"));
        }
        Ok(())
    }

    /// Excitatory count after rounding; the rest are inhibitory.
    pub fn n_excitatory(&self) -> usize {
        let (e, i) = self.ei_ratio;
        ((self.n_total as f64) * e as f64 / (e + i) as f64).round() as usize
    }
}

/// Connection probability `C * exp(-(d / lambda)^2)`.
pub fn connection_probability(amplitude_c: f64, lambda: f64, distance: f64) -> f64 {
    if lambda.is_infinite() {
        return amplitude_c;
    }
    let r = distance / lambda;
    amplitude_c * (-(r * r)).exp()
}

pub fn lattice_position(index: usize, shape: [usize; 3]) -> [f64; 3] {
    let [_, ny, nz] = shape;
    let x = index / (ny * nz);
    let y = (index / nz) % ny;
    let z = index % nz;
    [x as f64, y as f64, z as f64]
}

pub fn distance(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum::<f64>().sqrt()
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct NetworkGraph {
    nodes: BTreeMap<NeuronId, Node>,
    edges: BTreeMap<(NeuronId, NeuronId), f64>,
    input_edges: BTreeMap<(u32, NeuronId), f64>,
    n_encoders: u32,
}

impl NetworkGraph {
    pub fn new(n_encoders: u32) -> Self {
        NetworkGraph { n_encoders, ..Default::default() }
    }

    pub fn add_node(&mut self, id: NeuronId, node: Node) -> Result<()> {
        if self.nodes.insert(id, node).is_some() {
            return Err(Error::input(format!("duplicate neuron id {id}")));
        }
        Ok(())
    }

    /// Insert or overwrite a recurrent edge, enforcing the sign convention.
    pub fn set_edge(&mut self, src: NeuronId, dst: NeuronId, w: f64) -> Result<()> {
        if src == dst {
            return Err(Error::input(format!("self-loop on neuron {src}")));
        }
        let sign = self.sign(src).ok_or_else(|| Error::input(format!("unknown presynaptic neuron {src}")))?;
        if !self.nodes.contains_key(&dst) {
            return Err(Error::input(format!("unknown postsynaptic neuron {dst}")));
        }
        if !w.is_finite() || !sign.admits(w) {
            return Err(Error::input(format!("weight {w} on edge {src}->{dst} violates the {} sign", sign.as_str())));
        }
        self.edges.insert((src, dst), w);
        Ok(())
    }

    pub fn set_input_edge(&mut self, encoder: u32, dst: NeuronId, w: f64) -> Result<()> {
        if encoder >= self.n_encoders {
            return Err(Error::input(format!("encoder {encoder} out of range ({} encoders)", self.n_encoders)));
        }
        if !self.nodes.contains_key(&dst) {
            return Err(Error::input(format!("unknown input target {dst}")));
        }
        if !(w.is_finite() && w >= 0.0) {
            return Err(Error::input(format!("input weight {w} must be non-negative")));
        }
        self.input_edges.insert((encoder, dst), w);
        Ok(())
    }

    pub fn remove_edge(&mut self, src: NeuronId, dst: NeuronId) -> Option<f64> {
        self.edges.remove(&(src, dst))
    }

    /// Returns a copy with the given nodes and all their incident edges removed.
    pub fn without_nodes(&self, removed: &BTreeSet<NeuronId>) -> NetworkGraph {
        NetworkGraph {
            nodes: self.nodes.iter().filter(|(id, _)| !removed.contains(id)).map(|(k, v)| (*k, *v)).collect(),
            edges: self
                .edges
                .iter()
                .filter(|((s, d), _)| !removed.contains(s) && !removed.contains(d))
                .map(|(k, v)| (*k, *v))
                .collect(),
            input_edges: self
                .input_edges
                .iter()
                .filter(|((_, d), _)| !removed.contains(d))
                .map(|(k, v)| (*k, *v))
                .collect(),
            n_encoders: self.n_encoders,
        }
    }

    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn n_encoders(&self) -> u32 {
        self.n_encoders
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Recurrent edge density `|E| / (N (N - 1))`.
    pub fn density(&self) -> f64 {
        let n = self.nodes.len() as f64;
        if n < 2.0 {
            0.0
        } else {
            self.edges.len() as f64 / (n * (n - 1.0))
        }
    }

    pub fn node(&self, id: NeuronId) -> Option<&Node> {
        self.nodes.get(&id)
    }

    pub fn sign(&self, id: NeuronId) -> Option<Sign> {
        self.nodes.get(&id).map(|n| n.sign)
    }

    pub fn contains(&self, id: NeuronId) -> bool {
        self.nodes.contains_key(&id)
    }

    pub fn nodes(&self) -> impl Iterator<Item = (NeuronId, &Node)> {
        self.nodes.iter().map(|(k, v)| (*k, v))
    }

    pub fn node_ids(&self) -> Vec<NeuronId> {
        self.nodes.keys().copied().collect()
    }

    pub fn edges(&self) -> impl Iterator<Item = ((NeuronId, NeuronId), f64)> + '_ {
        self.edges.iter().map(|(k, v)| (*k, *v))
    }

    pub fn edge(&self, src: NeuronId, dst: NeuronId) -> Option<f64> {
        self.edges.get(&(src, dst)).copied()
    }

    pub fn has_edge(&self, src: NeuronId, dst: NeuronId) -> bool {
        self.edges.contains_key(&(src, dst))
    }

    pub fn input_edges(&self) -> impl Iterator<Item = ((u32, NeuronId), f64)> + '_ {
        self.input_edges.iter().map(|(k, v)| (*k, *v))
    }

    pub fn n_input_edges(&self) -> usize {
        self.input_edges.len()
    }

    /// Checks the sign convention, the no-self-loop rule and endpoint liveness.
    pub fn check_invariants(&self) -> Result<()> {
        for (&(s, d), &w) in &self.edges {
            if s == d {
                return Err(Error::input(format!("self-loop on {s}")));
            }
            let sign = self.sign(s).ok_or_else(|| Error::input(format!("edge from dead neuron {s}")))?;
            if !self.nodes.contains_key(&d) {
                return Err(Error::input(format!("edge into dead neuron {d}")));
            }
            if !sign.admits(w) {
                return Err(Error::input(format!("edge {s}->{d} weight {w} violates sign")));
            }
        }
        for (&(e, d), &w) in &self.input_edges {
            if e >= self.n_encoders || !self.nodes.contains_key(&d) || w < 0.0 {
                return Err(Error::input(format!("bad input edge {e}->{d} ({w})")));
            }
        }
        Ok(())
    }

    pub fn adjacency(&self) -> Adjacency {
        Adjacency::new(self)
    }
}

/// Index-based adjacency lists over the live nodes, in ascending id order.
#[derive(Debug, Clone)]
pub struct Adjacency {
    pub ids: Vec<NeuronId>,
    pub out: Vec<Vec<usize>>,
    pub inc: Vec<Vec<usize>>,
}

impl Adjacency {
    pub fn new(graph: &NetworkGraph) -> Self {
        let ids = graph.node_ids();
        let n = ids.len();
        let mut out = vec![Vec::new(); n];
        let mut inc = vec![Vec::new(); n];
        for ((s, d), _) in graph.edges() {
            // ids are sorted, so binary search gives the dense index.
            let si = ids.binary_search(&s).expect("edge source is live");
            let di = ids.binary_search(&d).expect("edge target is live");
            out[si].push(di);
            inc[di].push(si);
        }
        for list in out.iter_mut().chain(inc.iter_mut()) {
            list.sort_unstable();
        }
        Adjacency { ids, out, inc }
    }

    pub fn index_of(&self, id: NeuronId) -> Option<usize> {
        self.ids.binary_search(&id).ok()
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Undirected neighbour set (in- or out-neighbours) of dense index `i`.
    pub fn neighbours(&self, i: usize) -> BTreeSet<usize> {
        self.out[i].iter().chain(&self.inc[i]).copied().collect()
    }
}

/// Build the recurrent graph: lattice placement, shuffled E/I labels,
/// distance-kernel edges and input projections onto a random subset.
pub fn build_recurrent_graph(config: &TopologyConfig, seed: u64) -> Result<NetworkGraph> {
    config.validate()?;
    let n = config.n_total;
    let mut graph = NetworkGraph::new(config.n_encoders as u32);

    let n_exc = config.n_excitatory().min(n);
    let mut labels: Vec<Sign> = (0..n).map(|i| if i < n_exc { Sign::Excitatory } else { Sign::Inhibitory }).collect();
    labels.shuffle(&mut stream(seed, tags::EI_LABELS));

    for (i, &sign) in labels.iter().enumerate() {
        let pos = lattice_position(i, config.lattice_shape);
        graph.add_node(NeuronId(i as u32), Node { pos, sign })?;
    }

    let mut rng = stream(seed, tags::EDGES);
    let positions: Vec<[f64; 3]> = (0..n).map(|i| lattice_position(i, config.lattice_shape)).collect();
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let p = connection_probability(config.amplitude_c, config.lambda_scale, distance(&positions[i], &positions[j]));
            let u: f64 = rng.random();
            if u < p {
                let w = labels[i].factor() * uniform_open_closed(&mut rng, config.w_scale);
                graph.edges.insert((NeuronId(i as u32), NeuronId(j as u32)), w);
            }
        }
    }

    let mut rng = stream(seed, tags::INPUT_EDGES);
    let n_targets = ((config.input_fraction * n as f64).round() as usize).clamp(1, n);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let mut targets = order[..n_targets].to_vec();
    targets.sort_unstable();
    for e in 0..config.n_encoders as u32 {
        for &j in &targets {
            let u: f64 = rng.random();
            if u < config.input_connect_prob {
                let w = uniform_open_closed(&mut rng, config.w_in_scale);
                graph.input_edges.insert((e, NeuronId(j as u32)), w);
            }
        }
    }
    Ok(graph)
}

/// Unweighted directed shortest-path betweenness (raw pair counts), Brandes
/// accumulation; ties between equal-length paths are split fractionally.
pub fn betweenness_centrality(graph: &NetworkGraph) -> BTreeMap<NeuronId, f64> {
    let adj = graph.adjacency();
    let scores = betweenness_dense(&adj);
    adj.ids.iter().copied().zip(scores).collect()
}

pub(crate) fn betweenness_dense(adj: &Adjacency) -> Vec<f64> {
    let n = adj.len();
    let mut cb = vec![0.0; n];
    let mut stack = Vec::with_capacity(n);
    let mut pred: Vec<Vec<usize>> = vec![Vec::new(); n];
    let mut sigma = vec![0.0_f64; n];
    let mut dist = vec![-1_i64; n];
    let mut delta = vec![0.0_f64; n];
    let mut queue = VecDeque::with_capacity(n);
    for s in 0..n {
        stack.clear();
        for p in pred.iter_mut() {
            p.clear();
        }
        sigma.iter_mut().for_each(|x| *x = 0.0);
        dist.iter_mut().for_each(|x| *x = -1);
        sigma[s] = 1.0;
        dist[s] = 0;
        queue.push_back(s);
        while let Some(v) = queue.pop_front() {
            stack.push(v);
            for &w in &adj.out[v] {
                if dist[w] < 0 {
                    dist[w] = dist[v] + 1;
                    queue.push_back(w);
                }
                if dist[w] == dist[v] + 1 {
                    sigma[w] += sigma[v];
                    pred[w].push(v);
                }
            }
        }
        delta.iter_mut().for_each(|x| *x = 0.0);
        while let Some(w) = stack.pop() {
            for &v in &pred[w] {
                delta[v] += sigma[v] / sigma[w] * (1.0 + delta[w]);
            }
            if w != s {
                cb[w] += delta[w];
            }
        }
    }
    cb
}

/// Total degree (in + out) of every live node, in id order.
pub fn total_degrees(graph: &NetworkGraph) -> BTreeMap<NeuronId, usize> {
    let mut deg: BTreeMap<NeuronId, usize> = graph.node_ids().into_iter().map(|id| (id, 0)).collect();
    for ((s, d), _) in graph.edges() {
        *deg.get_mut(&s).expect("live source") += 1;
        *deg.get_mut(&d).expect("live target") += 1;
    }
    deg
}

/// Population variance of the total degree, `H = (1/|V|) sum (d - mean)^2`.
pub fn degree_variance(graph: &NetworkGraph) -> Result<f64> {
    if graph.is_empty() {
        return Err(Error::input("degree variance of an empty graph"));
    }
    let deg = total_degrees(graph);
    Ok(variance_of(deg.values().map(|&d| d as f64)))
}

pub(crate) fn variance_of(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let n = values.clone().count() as f64;
    let mean = values.clone().sum::<f64>() / n;
    values.map(|d| (d - mean) * (d - mean)).sum::<f64>() / n
}

// ---------------------------------------------------------------------------
// Snapshot format
// ---------------------------------------------------------------------------

/// Formats a float with 17 significant digits (round-trip exact).
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

impl NetworkGraph {
    /// Writes the snapshot object
    /// `{"nodes":[{id,pos,sign}],"edges":[{src,dst,w}],"input_edges":[{enc,dst,w}]}`
    /// with fixed field order and 17-significant-digit weights.
    pub fn to_snapshot_json(&self) -> String {
        let mut s = String::with_capacity(64 * (self.nodes.len() + self.edges.len() + self.input_edges.len()) + 64);
        s.push_str("{\"nodes\":[");
        for (k, (id, node)) in self.nodes.iter().enumerate() {
            if k > 0 {
                s.push(',');
            }
            let _ = write!(
                s,
                "{{\"id\":{},\"pos\":[{},{},{}],\"sign\":\"{}\"}}",
                id.0,
                fmt_f64(node.pos[0]),
                fmt_f64(node.pos[1]),
                fmt_f64(node.pos[2]),
                node.sign.as_str()
            );
        }
        s.push_str("],\"edges\":[");
        for (k, ((src, dst), w)) in self.edges.iter().enumerate() {
            if k > 0 {
                s.push(',');
            }
            let _ = write!(s, "{{\"src\":{},\"dst\":{},\"w\":{}}}", src.0, dst.0, fmt_f64(*w));
        }
        s.push_str("],\"input_edges\":[");
        for (k, ((enc, dst), w)) in self.input_edges.iter().enumerate() {
            if k > 0 {
                s.push(',');
            }
            let _ = write!(s, "{{\"enc\":{},\"dst\":{},\"w\":{}}}", enc, dst.0, fmt_f64(*w));
        }
        let _ = write!(s, "],\"n_encoders\":{}}}", self.n_encoders);
        s
    }

    pub fn from_snapshot_json(text: &str) -> Result<Self> {
        let raw: RawSnapshot = serde_json::from_str(text)?;
        Self::from_raw(raw)
    }

    pub(crate) fn from_raw(raw: RawSnapshot) -> Result<Self> {
        let n_encoders = raw
            .n_encoders
            .unwrap_or_else(|| raw.input_edges.iter().map(|e| e.enc + 1).max().unwrap_or(0));
        let mut g = NetworkGraph::new(n_encoders);
        for n in raw.nodes {
            g.add_node(NeuronId(n.id), Node { pos: n.pos, sign: n.sign })?;
        }
        for e in raw.edges {
            g.set_edge(NeuronId(e.src), NeuronId(e.dst), e.w).map_err(|e| Error::Format(e.to_string()))?;
        }
        for e in raw.input_edges {
            g.set_input_edge(e.enc, NeuronId(e.dst), e.w).map_err(|e| Error::Format(e.to_string()))?;
        }
        Ok(g)
    }
}

#[derive(Debug, Deserialize)]
pub(crate) struct RawSnapshot {
    nodes: Vec<RawNode>,
    edges: Vec<RawEdge>,
    input_edges: Vec<RawInputEdge>,
    #[serde(default)]
    n_encoders: Option<u32>,
}

#[derive(Debug, Deserialize)]
struct RawNode {
    id: u32,
    pos: [f64; 3],
    sign: Sign,
}

#[derive(Debug, Deserialize)]
struct RawEdge {
    src: u32,
    dst: u32,
    w: f64,
}

#[derive(Debug, Deserialize)]
struct RawInputEdge {
    enc: u32,
    dst: u32,
    w: f64,
}

#[cfg(test)]
pub(crate) mod test_graphs {
    use super::*;

    /// Graph on ids `0..n` (all excitatory) with unit weights on `edges`.
    pub fn from_edges(n: u32, edges: &[(u32, u32)]) -> NetworkGraph {
        let mut g = NetworkGraph::new(0);
        for i in 0..n {
            g.add_node(NeuronId(i), Node { pos: [i as f64, 0.0, 0.0], sign: Sign::Excitatory }).unwrap();
        }
        for &(s, d) in edges {
            g.set_edge(NeuronId(s), NeuronId(d), 1.0).unwrap();
        }
        g
    }
}
