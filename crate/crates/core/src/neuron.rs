//! Heterogeneous leaky integrate-and-fire dynamics.
//!
//! Membrane update (forward Euler, non-refractory neurons only):
//! `v <- v + dt * (a + R_m * I - v) / tau_m`, with `I = I_syn + I_ext`.
//! A neuron spikes when `v > v_threshold`; the spike is stamped at the end of
//! the step, `v` is reset and held for the refractory period.
//!
//! Synapses are exponentially decaying currents: each presynaptic spike adds
//! its weight to the target's `I_syn`, which decays with `tau_syn`.
//!
//! Per-step order:
//! 1. encoder spikes of this step are added to `I_syn`;
//! 2. Euler update and threshold test;
//! 3. `I_syn` decays by `exp(-dt / tau_syn)`;
//! 4. recurrent spikes of this step are added to `I_syn` (felt next step);
//! 5. the optional [`StepHook`] runs (plasticity).

use std::collections::BTreeMap;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::dist::ParamDist;
use crate::error::{Error, Result};
use crate::rng::{stream, tags};
use crate::topology::{NetworkGraph, NeuronId, Sign};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NeuronParams {
    pub tau_m: f64,
    pub r_m: f64,
    pub v_rest_a: f64,
    pub v_threshold: f64,
    pub v_reset: f64,
    pub refractory_r: f64,
}

impl NeuronParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau_m > 0.0 && self.tau_m.is_finite()) {
            return Err(Error::config(format!("tau_m = {} must be positive", self.tau_m)));
        }
        if !(self.v_reset < self.v_threshold) {
            return Err(Error::config(format!(
                "v_reset = {} must be below v_threshold = {}",
                self.v_reset, self.v_threshold
            )));
        }
        if !(self.refractory_r >= 0.0) {
            return Err(Error::config("refractory_r must be non-negative"));
        }
        Ok(())
    }
}

/// Laws for one population (excitatory or inhibitory).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PopulationSpec {
    pub tau_m: ParamDist,
    /// When set, the threshold is drawn per neuron as well.
    pub v_threshold: Option<ParamDist>,
}

/// Constants shared by all neurons.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LifConstants {
    pub r_m: f64,
    pub v_rest_a: f64,
    pub v_threshold: f64,
    pub v_reset: f64,
    pub refractory_r: f64,
    /// Sampled membrane time constants are floored here so the Euler
    /// stability guard keeps holding at the configured step.
    pub tau_floor: f64,
}

impl Default for LifConstants {
    fn default() -> Self {
        LifConstants { r_m: 1.0, v_rest_a: -65.0, v_threshold: -50.0, v_reset: -65.0, refractory_r: 2.0, tau_floor: 2.5 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeterogeneityProfile {
    pub exc: PopulationSpec,
    pub inh: PopulationSpec,
    pub constants: LifConstants,
    /// Requires the excitatory mean `tau_m` to be at least the inhibitory one.
    pub bio_inspired: bool,
}

impl Default for HeterogeneityProfile {
    fn default() -> Self {
        HeterogeneityProfile {
            exc: PopulationSpec { tau_m: ParamDist::gamma(4.0, 5.0), v_threshold: None },
            inh: PopulationSpec { tau_m: ParamDist::gamma(4.0, 2.5), v_threshold: None },
            constants: LifConstants::default(),
            bio_inspired: true,
        }
    }
}

impl HeterogeneityProfile {
    pub fn validate(&self) -> Result<()> {
        for (name, pop) in [("exc", &self.exc), ("inh", &self.inh)] {
            pop.tau_m.validate().map_err(|e| Error::config(format!("{name}.tau_m: {e}")))?;
            if let Some(v) = &pop.v_threshold {
                v.validate().map_err(|e| Error::config(format!("{name}.v_threshold: {e}")))?;
            }
        }
        if self.bio_inspired && self.exc.tau_m.mean() < self.inh.tau_m.mean() {
            return Err(Error::config(format!(
                "bio-inspired profile needs mean exc tau_m ({}) >= mean inh tau_m ({})",
                self.exc.tau_m.mean(),
                self.inh.tau_m.mean()
            )));
        }
        let c = &self.constants;
        if !(c.v_reset < c.v_threshold) {
            return Err(Error::config("v_reset must be below v_threshold"));
        }
        if !(c.refractory_r >= 0.0 && c.tau_floor > 0.0) {
            return Err(Error::config("refractory_r must be >= 0 and tau_floor > 0"));
        }
        Ok(())
    }

    /// The matched homogeneous profile: every law collapses to a point mass at
    /// its mean.
    pub fn homogenized(&self) -> Self {
        let collapse = |p: &PopulationSpec| PopulationSpec {
            tau_m: ParamDist::point(p.tau_m.mean()),
            v_threshold: p.v_threshold.map(|d| ParamDist::point(d.mean())),
        };
        HeterogeneityProfile { exc: collapse(&self.exc), inh: collapse(&self.inh), ..*self }
    }

    pub fn population(&self, sign: Sign) -> &PopulationSpec {
        match sign {
            Sign::Excitatory => &self.exc,
            Sign::Inhibitory => &self.inh,
        }
    }
}

/// Draw per-neuron parameters in ascending id order.
pub fn sample_params(profile: &HeterogeneityProfile, graph: &NetworkGraph, seed: u64) -> Result<BTreeMap<NeuronId, NeuronParams>> {
    profile.validate()?;
    let mut rng = stream(seed, tags::NEURON_PARAMS);
    let c = profile.constants;
    let mut out = BTreeMap::new();
    for (id, node) in graph.nodes() {
        let pop = profile.population(node.sign);
        let tau_m = pop.tau_m.sample(&mut rng).max(c.tau_floor);
        let v_threshold = match &pop.v_threshold {
            Some(d) => d.sample(&mut rng).max(c.v_reset + 1e-3),
            None => c.v_threshold,
        };
        out.insert(
            id,
            NeuronParams { tau_m, r_m: c.r_m, v_rest_a: c.v_rest_a, v_threshold, v_reset: c.v_reset, refractory_r: c.refractory_r },
        );
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum InitMode {
    /// Every neuron starts at its resting potential `a`.
    Rest,
    /// Uniform in `[v_reset, v_threshold)`.
    Uniform,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub dt: f64,
    pub tau_syn: f64,
    /// Inhibition cannot push `v` below `v_reset - v_floor_slack`.
    pub v_floor_slack: f64,
    pub init: InitMode,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig { dt: 0.25, tau_syn: 5.0, v_floor_slack: 20.0, init: InitMode::Uniform }
    }
}

impl SimConfig {
    /// Stability guard `dt <= min(tau_m) / 10`.
    pub fn check_dt(&self, params: &[NeuronParams]) -> Result<()> {
        if !(self.dt > 0.0) {
            return Err(Error::config(format!("dt = {} must be positive", self.dt)));
        }
        if !(self.tau_syn > 0.0) {
            return Err(Error::config("tau_syn must be positive"));
        }
        let min_tau = params.iter().map(|p| p.tau_m).fold(f64::INFINITY, f64::min);
        if self.dt > min_tau / 10.0 {
            return Err(Error::config(format!("dt = {} exceeds min(tau_m)/10 = {}", self.dt, min_tau / 10.0)));
        }
        Ok(())
    }
}

/// Dense, index-based form of a graph plus parameters, used by the simulator
/// and by plasticity. Synapse `k` of the recurrent arrays corresponds to the
/// k-th edge of the graph in `(src, dst)` order.
#[derive(Debug, Clone)]
pub struct Network {
    pub ids: Vec<NeuronId>,
    pub signs: Vec<Sign>,
    pub params: Vec<NeuronParams>,
    /// Per-neuron offset added to the resting potential (excitability shift).
    pub v_rest_offset: Vec<f64>,
    pub syn_src: Vec<usize>,
    pub syn_dst: Vec<usize>,
    pub weights: Vec<f64>,
    /// CSR row pointer over `syn_src` (length `n + 1`).
    pub out_start: Vec<usize>,
    /// Incoming recurrent synapse indices per neuron.
    pub in_syn: Vec<Vec<usize>>,
    pub n_encoders: usize,
    pub inp_enc: Vec<usize>,
    pub inp_dst: Vec<usize>,
    pub inp_weights: Vec<f64>,
    /// CSR row pointer over `inp_enc` (length `n_encoders + 1`).
    pub enc_start: Vec<usize>,
    /// Incoming input synapse indices per neuron.
    pub in_inp: Vec<Vec<usize>>,
}

impl Network {
    pub fn new(graph: &NetworkGraph, params: &BTreeMap<NeuronId, NeuronParams>) -> Result<Self> {
        let ids = graph.node_ids();
        let n = ids.len();
        let index = |id: NeuronId| ids.binary_search(&id).expect("live node");
        let mut p = Vec::with_capacity(n);
        let mut signs = Vec::with_capacity(n);
        for (id, node) in graph.nodes() {
            let np = params.get(&id).ok_or_else(|| Error::input(format!("no parameters for neuron {id}")))?;
            np.validate()?;
            p.push(*np);
            signs.push(node.sign);
        }
        let mut syn_src = Vec::with_capacity(graph.n_edges());
        let mut syn_dst = Vec::with_capacity(graph.n_edges());
        let mut weights = Vec::with_capacity(graph.n_edges());
        let mut in_syn = vec![Vec::new(); n];
        for ((s, d), w) in graph.edges() {
            let (si, di) = (index(s), index(d));
            in_syn[di].push(syn_src.len());
            syn_src.push(si);
            syn_dst.push(di);
            weights.push(w);
        }
        let out_start = row_pointer(&syn_src, n);
        let n_encoders = graph.n_encoders() as usize;
        let mut inp_enc = Vec::new();
        let mut inp_dst = Vec::new();
        let mut inp_weights = Vec::new();
        let mut in_inp = vec![Vec::new(); n];
        for ((e, d), w) in graph.input_edges() {
            let di = index(d);
            in_inp[di].push(inp_enc.len());
            inp_enc.push(e as usize);
            inp_dst.push(di);
            inp_weights.push(w);
        }
        let enc_start = row_pointer(&inp_enc, n_encoders);
        Ok(Network {
            ids,
            signs,
            params: p,
            v_rest_offset: vec![0.0; n],
            syn_src,
            syn_dst,
            weights,
            out_start,
            in_syn,
            n_encoders,
            inp_enc,
            inp_dst,
            inp_weights,
            enc_start,
            in_inp,
        })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn n_synapses(&self) -> usize {
        self.weights.len()
    }

    pub fn index_of(&self, id: NeuronId) -> Option<usize> {
        self.ids.binary_search(&id).ok()
    }

    /// Copy of `graph` carrying this network's current weights. The graph must
    /// be the one the network was built from.
    pub fn write_weights(&self, graph: &NetworkGraph) -> Result<NetworkGraph> {
        let mut g = graph.clone();
        for k in 0..self.weights.len() {
            g.set_edge(self.ids[self.syn_src[k]], self.ids[self.syn_dst[k]], self.weights[k])?;
        }
        for k in 0..self.inp_weights.len() {
            g.set_input_edge(self.inp_enc[k] as u32, self.ids[self.inp_dst[k]], self.inp_weights[k])?;
        }
        Ok(g)
    }

    pub fn params_map(&self) -> BTreeMap<NeuronId, NeuronParams> {
        self.ids.iter().copied().zip(self.params.iter().copied()).collect()
    }
}

fn row_pointer(sorted_rows: &[usize], n_rows: usize) -> Vec<usize> {
    let mut ptr = vec![0; n_rows + 1];
    for &r in sorted_rows {
        ptr[r + 1] += 1;
    }
    for i in 0..n_rows {
        ptr[i + 1] += ptr[i];
    }
    ptr
}

/// Encoder spike trains on the simulation grid: `steps[k]` lists the encoders
/// that fire during step `k`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct InputSpikes {
    pub n_encoders: usize,
    pub steps: Vec<Vec<u32>>,
}

impl InputSpikes {
    pub fn silent(n_encoders: usize, n_steps: usize) -> Self {
        InputSpikes { n_encoders, steps: vec![Vec::new(); n_steps] }
    }

    pub fn total_spikes(&self) -> usize {
        self.steps.iter().map(Vec::len).sum()
    }

    /// Concatenate in time.
    pub fn extend(&mut self, other: &InputSpikes) {
        self.steps.extend(other.steps.iter().cloned());
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkState {
    pub v: Vec<f64>,
    pub refractory_until: Vec<f64>,
    pub i_syn: Vec<f64>,
    pub t_now: f64,
}

impl NetworkState {
    pub fn at_rest(net: &Network) -> Self {
        let v = net.params.iter().zip(&net.v_rest_offset).map(|(p, o)| p.v_rest_a + o).collect();
        let n = net.len();
        NetworkState { v, refractory_until: vec![f64::NEG_INFINITY; n], i_syn: vec![0.0; n], t_now: 0.0 }
    }

    pub fn initial(net: &Network, mode: InitMode, seed: u64) -> Self {
        let mut s = Self::at_rest(net);
        if mode == InitMode::Uniform {
            let mut rng = stream(seed, tags::INITIAL_STATE);
            for (v, p) in s.v.iter_mut().zip(&net.params) {
                *v = p.v_reset + rng.random::<f64>() * (p.v_threshold - p.v_reset);
            }
        }
        s
    }

    pub fn potential(&self, net: &Network, id: NeuronId) -> Option<f64> {
        net.index_of(id).map(|i| self.v[i])
    }
}

/// Called once per step after spike delivery; `spiked` are dense neuron
/// indices and `enc_spiked` encoder indices that fired during the step, and
/// `t_end` is the time stamp given to those spikes.
pub trait StepHook {
    fn after_step(&mut self, t_end: f64, spiked: &[usize], enc_spiked: &[u32], net: &mut Network);
}

/// One simulation step. `ext_current` (per dense index) is optional. Returns
/// the dense indices that spiked.
pub fn step(
    state: &mut NetworkState,
    net: &Network,
    enc_spikes: &[u32],
    ext_current: Option<&[f64]>,
    cfg: &SimConfig,
) -> Vec<usize> {
    let mut spiked = Vec::new();
    step_into(state, net, enc_spikes, ext_current, cfg, &mut spiked);
    spiked
}

fn step_into(
    state: &mut NetworkState,
    net: &Network,
    enc_spikes: &[u32],
    ext_current: Option<&[f64]>,
    cfg: &SimConfig,
    spiked: &mut Vec<usize>,
) {
    spiked.clear();
    let dt = cfg.dt;
    for &e in enc_spikes {
        let e = e as usize;
        for k in net.enc_start[e]..net.enc_start[e + 1] {
            state.i_syn[net.inp_dst[k]] += net.inp_weights[k];
        }
    }
    let t_end = state.t_now + dt;
    // Tolerance for comparing accumulated step times.
    let tol = 1e-9 * dt;
    for i in 0..net.len() {
        if state.t_now < state.refractory_until[i] - tol {
            continue;
        }
        let p = &net.params[i];
        let a = p.v_rest_a + net.v_rest_offset[i];
        let current = state.i_syn[i] + ext_current.map_or(0.0, |c| c[i]);
        let v = state.v[i] + dt * (a + p.r_m * current - state.v[i]) / p.tau_m;
        if v > p.v_threshold {
            spiked.push(i);
            state.v[i] = p.v_reset;
            state.refractory_until[i] = t_end + p.refractory_r;
        } else {
            state.v[i] = v.max(p.v_reset - cfg.v_floor_slack);
        }
    }
    let decay = (-dt / cfg.tau_syn).exp();
    for x in state.i_syn.iter_mut() {
        *x *= decay;
    }
    for &i in spiked.iter() {
        for k in net.out_start[i]..net.out_start[i + 1] {
            state.i_syn[net.syn_dst[k]] += net.weights[k];
        }
    }
    state.t_now = t_end;
}

/// Spikes over a window `[0, duration]`, with per-neuron counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpikeRecord {
    pub ids: Vec<NeuronId>,
    /// `(neuron, time)` in emission order.
    pub spikes: Vec<(NeuronId, f64)>,
    pub duration: f64,
    pub counts: BTreeMap<NeuronId, usize>,
}

impl SpikeRecord {
    pub fn empty(ids: &[NeuronId], duration: f64) -> Self {
        SpikeRecord { ids: ids.to_vec(), spikes: Vec::new(), duration, counts: ids.iter().map(|&i| (i, 0)).collect() }
    }

    pub fn push(&mut self, id: NeuronId, t: f64) {
        self.spikes.push((id, t));
        *self.counts.entry(id).or_insert(0) += 1;
    }

    pub fn total_spikes(&self) -> usize {
        self.spikes.len()
    }

    pub fn mean_count(&self) -> f64 {
        if self.ids.is_empty() {
            0.0
        } else {
            self.spikes.len() as f64 / self.ids.len() as f64
        }
    }

    /// Spike times grouped per neuron.
    pub fn trains(&self) -> BTreeMap<NeuronId, Vec<f64>> {
        let mut m: BTreeMap<NeuronId, Vec<f64>> = self.ids.iter().map(|&i| (i, Vec::new())).collect();
        for &(id, t) in &self.spikes {
            m.entry(id).or_default().push(t);
        }
        m
    }

    /// Spikes restricted to `[t0, t1)`, re-based to start at 0.
    pub fn window(&self, t0: f64, t1: f64) -> SpikeRecord {
        let mut r = SpikeRecord::empty(&self.ids, t1 - t0);
        for &(id, t) in &self.spikes {
            if t >= t0 && t < t1 {
                r.push(id, t - t0);
            }
        }
        r
    }
}

/// Run `input.steps.len()` steps from `state`, recording spikes with times
/// relative to the state's clock at entry.
pub fn run(
    net: &mut Network,
    state: &mut NetworkState,
    input: &InputSpikes,
    ext_current: Option<&[f64]>,
    cfg: &SimConfig,
    mut hook: Option<&mut dyn StepHook>,
) -> Result<SpikeRecord> {
    cfg.check_dt(&net.params)?;
    if input.n_encoders > net.n_encoders || input.steps.iter().flatten().any(|&e| e as usize >= net.n_encoders) {
        return Err(Error::input("input spikes reference encoders the network does not have"));
    }
    let t0 = state.t_now;
    let mut record = SpikeRecord::empty(&net.ids, input.steps.len() as f64 * cfg.dt);
    let mut spiked = Vec::new();
    for (k, enc) in input.steps.iter().enumerate() {
        step_into(state, net, enc, ext_current, cfg, &mut spiked);
        let t_rel = (k + 1) as f64 * cfg.dt;
        for &i in &spiked {
            record.push(net.ids[i], t_rel);
        }
        if let Some(h) = hook.as_deref_mut() {
            h.after_step(state.t_now, &spiked, enc, net);
        }
    }
    if state.v.iter().any(|v| !v.is_finite()) {
        return Err(Error::numeric(format!("membrane potential diverged after t = {}", state.t_now - t0)));
    }
    Ok(record)
}

/// Simulate a graph from a fresh state for `duration` ms.
pub fn simulate(
    graph: &NetworkGraph,
    params: &BTreeMap<NeuronId, NeuronParams>,
    input: &InputSpikes,
    duration: f64,
    cfg: &SimConfig,
    seed: u64,
) -> Result<(SpikeRecord, NetworkState)> {
    if !(duration > 0.0) {
        return Err(Error::input("duration must be positive"));
    }
    let mut net = Network::new(graph, params)?;
    let n_steps = (duration / cfg.dt).round() as usize;
    let mut padded = input.clone();
    padded.steps.resize(n_steps, Vec::new());
    let mut state = NetworkState::initial(&net, cfg.init, seed);
    let record = run(&mut net, &mut state, &padded, None, cfg, None)?;
    Ok((record, state))
}

/// Per-neuron rate in Hz over `window` ms.
pub fn firing_rates(record: &SpikeRecord, window: f64) -> Result<BTreeMap<NeuronId, f64>> {
    if !(window > 0.0) {
        return Err(Error::input("rate window must be positive"));
    }
    Ok(record.counts.iter().map(|(&id, &c)| (id, c as f64 * 1000.0 / window)).collect())
}

/// Closed-form first-spike time of a LIF neuron from `v0` under constant
/// current, or `None` when the asymptote does not exceed threshold.
pub fn analytic_first_spike(p: &NeuronParams, current: f64, v0: f64) -> Option<f64> {
    let v_inf = p.v_rest_a + p.r_m * current;
    if v_inf <= p.v_threshold || v0 >= p.v_threshold {
        return None;
    }
    Some(p.tau_m * ((v_inf - v0) / (v_inf - p.v_threshold)).ln())
}
