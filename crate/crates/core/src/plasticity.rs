//! Trace-based STDP with per-synapse heterogeneous parameters.
//!
//! Each synapse keeps its own pre and post traces because the trace time
//! constants differ per synapse. Within a simulation step the order is:
//! decay traces, deliver spikes (done by the simulator), apply weight
//! updates, bump traces. A spike therefore never interacts with the trace
//! increment it causes itself.
//!
//! Updates act on the weight magnitude; the sign stays that of the
//! presynaptic neuron, and the magnitude is clamped to `[w_min, w_max]`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::dist::ParamDist;
use crate::error::{Error, Result};
use crate::neuron::{Network, StepHook};
use crate::rng::{stream, tags};
use crate::topology::{NetworkGraph, NeuronId};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StdpParams {
    pub a_plus_gain: f64,
    pub a_minus_gain: f64,
    pub trace_incr_plus: f64,
    pub trace_incr_minus: f64,
    pub tau_plus: f64,
    pub tau_minus: f64,
    pub w_min: f64,
    pub w_max: f64,
}

impl StdpParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau_plus > 0.0 && self.tau_minus > 0.0) {
            return Err(Error::config("STDP time constants must be positive"));
        }
        if !(self.w_min <= self.w_max) {
            return Err(Error::config("STDP needs w_min <= w_max"));
        }
        if !(self.a_plus_gain >= 0.0 && self.a_minus_gain >= 0.0) {
            return Err(Error::config("STDP gains must be non-negative"));
        }
        Ok(())
    }
}

/// Laws for the per-synapse STDP parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StdpProfile {
    pub a_plus: ParamDist,
    pub a_minus: ParamDist,
    pub tau_plus: ParamDist,
    pub tau_minus: ParamDist,
    pub trace_incr_plus: f64,
    pub trace_incr_minus: f64,
    pub w_min: f64,
    pub w_max: f64,
}

impl Default for StdpProfile {
    fn default() -> Self {
        StdpProfile {
            a_plus: ParamDist::gamma(4.0, 0.0125),
            a_minus: ParamDist::gamma(4.0, 0.015),
            tau_plus: ParamDist::gamma(4.0, 5.0),
            tau_minus: ParamDist::gamma(4.0, 5.0),
            trace_incr_plus: 1.0,
            trace_incr_minus: 1.0,
            w_min: 0.0,
            w_max: 6.0,
        }
    }
}

impl StdpProfile {
    pub fn validate(&self) -> Result<()> {
        for (name, d) in
            [("a_plus", &self.a_plus), ("a_minus", &self.a_minus), ("tau_plus", &self.tau_plus), ("tau_minus", &self.tau_minus)]
        {
            d.validate().map_err(|e| Error::config(format!("plasticity.{name}: {e}")))?;
        }
        if nonneg_finite(self.trace_incr_plus) && nonneg_finite(self.trace_incr_minus) && self.w_min <= self.w_max && self.w_min >= 0.0 {
            Ok(())
        } else {
            Err(Error::config("plasticity: trace increments must be >= 0 and 0 <= w_min <= w_max"))
        }
    }

    pub fn homogenized(&self) -> Self {
        StdpProfile {
            a_plus: ParamDist::point(self.a_plus.mean()),
            a_minus: ParamDist::point(self.a_minus.mean()),
            tau_plus: ParamDist::point(self.tau_plus.mean()),
            tau_minus: ParamDist::point(self.tau_minus.mean()),
            ..*self
        }
    }

    /// Profile with both gains forced to zero (plasticity disabled).
    pub fn frozen(&self) -> Self {
        StdpProfile { a_plus: ParamDist::point(0.0), a_minus: ParamDist::point(0.0), ..*self }
    }
}

fn nonneg_finite(x: f64) -> bool {
    x >= 0.0 && x.is_finite()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum SynapseId {
    Recurrent(NeuronId, NeuronId),
    Input(u32, NeuronId),
}

/// Per-synapse parameters, recurrent synapses in edge order then input
/// synapses in `(encoder, target)` order.
pub fn sample_stdp_params(profile: &StdpProfile, graph: &NetworkGraph, seed: u64) -> Result<BTreeMap<SynapseId, StdpParams>> {
    profile.validate()?;
    let mut rng = stream(seed, tags::STDP_PARAMS);
    let draw = |rng: &mut crate::rng::Rng| StdpParams {
        a_plus_gain: profile.a_plus.sample(rng),
        a_minus_gain: profile.a_minus.sample(rng),
        trace_incr_plus: profile.trace_incr_plus,
        trace_incr_minus: profile.trace_incr_minus,
        tau_plus: profile.tau_plus.sample(rng).max(f64::MIN_POSITIVE),
        tau_minus: profile.tau_minus.sample(rng).max(f64::MIN_POSITIVE),
        w_min: profile.w_min,
        w_max: profile.w_max,
    };
    let mut out = BTreeMap::new();
    for ((s, d), _) in graph.edges() {
        out.insert(SynapseId::Recurrent(s, d), draw(&mut rng));
    }
    for ((e, d), _) in graph.input_edges() {
        out.insert(SynapseId::Input(e, d), draw(&mut rng));
    }
    Ok(out)
}

/// Pre and post traces of a single synapse.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct TraceState {
    pub t_pre: f64,
    pub t_post: f64,
}

/// One step of trace dynamics: exponential decay over `dt`, then `a+` for a
/// presynaptic spike and `a-` for a postsynaptic spike.
pub fn decay_and_bump_traces(traces: TraceState, pre_spike: bool, post_spike: bool, params: &StdpParams, dt: f64) -> TraceState {
    let mut t = decay_traces(traces, params, dt);
    bump_traces(&mut t, pre_spike, post_spike, params);
    t
}

pub fn decay_traces(traces: TraceState, params: &StdpParams, dt: f64) -> TraceState {
    TraceState { t_pre: traces.t_pre * (-dt / params.tau_plus).exp(), t_post: traces.t_post * (-dt / params.tau_minus).exp() }
}

pub fn bump_traces(traces: &mut TraceState, pre_spike: bool, post_spike: bool, params: &StdpParams) {
    if pre_spike {
        traces.t_pre += params.trace_incr_plus;
    }
    if post_spike {
        traces.t_post += params.trace_incr_minus;
    }
}

/// Weight update for one synapse given already-decayed traces: potentiation
/// `A+ T_pre` on a post spike, depression `A- T_post` on a pre spike, applied
/// to the magnitude and clamped. The sign of `w` is preserved; `sign` gives
/// the presynaptic convention for a weight that is currently zero.
pub fn apply_stdp(w: f64, sign: f64, traces: &TraceState, pre_spike: bool, post_spike: bool, params: &StdpParams) -> f64 {
    let mut delta = 0.0;
    if post_spike {
        delta += params.a_plus_gain * traces.t_pre;
    }
    if pre_spike {
        delta -= params.a_minus_gain * traces.t_post;
    }
    if delta == 0.0 {
        return w;
    }
    let mag = (w.abs() + delta).clamp(params.w_min, params.w_max);
    sign * mag
}

/// Plasticity engine attached to a [`Network`] as a [`StepHook`]. Arrays are
/// aligned with the network's recurrent and input synapse arrays.
#[derive(Debug, Clone)]
pub struct Stdp {
    pub rec_params: Vec<StdpParams>,
    pub inp_params: Vec<StdpParams>,
    pub rec_traces: Vec<TraceState>,
    pub inp_traces: Vec<TraceState>,
    rec_decay: Vec<(f64, f64)>,
    inp_decay: Vec<(f64, f64)>,
    dt: f64,
    pre_flag: Vec<bool>,
    post_flag: Vec<bool>,
    enc_flag: Vec<bool>,
    plastic_inputs: bool,
}

impl Stdp {
    pub fn new(net: &Network, params: &BTreeMap<SynapseId, StdpParams>, dt: f64, plastic_inputs: bool) -> Result<Self> {
        let lookup = |key: SynapseId| params.get(&key).copied().ok_or_else(|| Error::input(format!("no STDP parameters for {key:?}")));
        let mut rec_params = Vec::with_capacity(net.n_synapses());
        for k in 0..net.n_synapses() {
            let p = lookup(SynapseId::Recurrent(net.ids[net.syn_src[k]], net.ids[net.syn_dst[k]]))?;
            p.validate()?;
            rec_params.push(p);
        }
        let mut inp_params = Vec::with_capacity(net.inp_weights.len());
        for k in 0..net.inp_weights.len() {
            let p = lookup(SynapseId::Input(net.inp_enc[k] as u32, net.ids[net.inp_dst[k]]))?;
            p.validate()?;
            inp_params.push(p);
        }
        let factors = |p: &StdpParams| ((-dt / p.tau_plus).exp(), (-dt / p.tau_minus).exp());
        Ok(Stdp {
            rec_decay: rec_params.iter().map(factors).collect(),
            inp_decay: inp_params.iter().map(factors).collect(),
            rec_traces: vec![TraceState::default(); rec_params.len()],
            inp_traces: vec![TraceState::default(); inp_params.len()],
            rec_params,
            inp_params,
            dt,
            pre_flag: vec![false; net.len()],
            post_flag: vec![false; net.len()],
            enc_flag: vec![false; net.n_encoders],
            plastic_inputs,
        })
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }
}

impl StepHook for Stdp {
    fn after_step(&mut self, _t_end: f64, spiked: &[usize], enc_spiked: &[u32], net: &mut Network) {
        for (t, &(fp, fm)) in self.rec_traces.iter_mut().zip(&self.rec_decay) {
            t.t_pre *= fp;
            t.t_post *= fm;
        }
        if self.plastic_inputs {
            for (t, &(fp, fm)) in self.inp_traces.iter_mut().zip(&self.inp_decay) {
                t.t_pre *= fp;
                t.t_post *= fm;
            }
        }
        if spiked.is_empty() && enc_spiked.is_empty() {
            return;
        }
        for &i in spiked {
            self.pre_flag[i] = true;
            self.post_flag[i] = true;
        }
        for &e in enc_spiked {
            self.enc_flag[e as usize] = true;
        }

        // Recurrent synapses touched by a spike at either end.
        let mut touched: Vec<usize> = Vec::new();
        for &i in spiked {
            touched.extend(net.out_start[i]..net.out_start[i + 1]);
            touched.extend(net.in_syn[i].iter().copied());
        }
        touched.sort_unstable();
        touched.dedup();
        for &k in &touched {
            let pre = self.pre_flag[net.syn_src[k]];
            let post = self.post_flag[net.syn_dst[k]];
            let p = &self.rec_params[k];
            let sign = net.signs[net.syn_src[k]].factor();
            net.weights[k] = apply_stdp(net.weights[k], sign, &self.rec_traces[k], pre, post, p);
        }
        for &k in &touched {
            let pre = self.pre_flag[net.syn_src[k]];
            let post = self.post_flag[net.syn_dst[k]];
            bump_traces(&mut self.rec_traces[k], pre, post, &self.rec_params[k]);
        }

        if self.plastic_inputs {
            let mut touched: Vec<usize> = Vec::new();
            for &e in enc_spiked {
                let e = e as usize;
                touched.extend(net.enc_start[e]..net.enc_start[e + 1]);
            }
            for &i in spiked {
                touched.extend(net.in_inp[i].iter().copied());
            }
            touched.sort_unstable();
            touched.dedup();
            for &k in &touched {
                let pre = self.enc_flag[net.inp_enc[k]];
                let post = self.post_flag[net.inp_dst[k]];
                net.inp_weights[k] = apply_stdp(net.inp_weights[k], 1.0, &self.inp_traces[k], pre, post, &self.inp_params[k]);
            }
            for &k in &touched {
                let pre = self.enc_flag[net.inp_enc[k]];
                let post = self.post_flag[net.inp_dst[k]];
                bump_traces(&mut self.inp_traces[k], pre, post, &self.inp_params[k]);
            }
        }

        for &i in spiked {
            self.pre_flag[i] = false;
            self.post_flag[i] = false;
        }
        for &e in enc_spiked {
            self.enc_flag[e as usize] = false;
        }
    }
}
