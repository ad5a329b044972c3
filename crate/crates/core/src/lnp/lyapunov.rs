//! Per-node finite-time Lyapunov exponents and the harmonic-mean Lyapunov
//! matrix.
//!
//! A node exponent is measured on rate dynamics: a reference trajectory and a
//! twin perturbed only at node `i` by `delta0` are integrated side by side
//! (RK4); every `renorm_every` steps the separation is measured, its log
//! growth accumulated and the twin pulled back to distance `delta0`.

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::neuron::NeuronParams;
use crate::rng::{stream, tags};
use crate::topology::{NetworkGraph, NeuronId};

/// Autonomous rate dynamics `x' = f(x)`.
pub trait RateSystem {
    fn dim(&self) -> usize;
    fn rhs(&self, x: &[f64], out: &mut [f64]);
    /// Starting point for replica `r`; the default is a small random state.
    fn initial_state(&self, rng: &mut crate::rng::Rng) -> Vec<f64> {
        (0..self.dim()).map(|_| 0.1 * (rng.random::<f64>() - 0.5)).collect()
    }
}

/// `x' = A x`.
#[derive(Debug, Clone)]
pub struct LinearRate {
    pub a: nalgebra::DMatrix<f64>,
}

impl RateSystem for LinearRate {
    fn dim(&self) -> usize {
        self.a.nrows()
    }

    fn rhs(&self, x: &[f64], out: &mut [f64]) {
        let n = self.dim();
        for i in 0..n {
            let mut s = 0.0;
            for j in 0..n {
                s += self.a[(i, j)] * x[j];
            }
            out[i] = s;
        }
    }
}

/// Firing-rate proxy of a spiking network:
/// `tau_i x_i' = -x_i + tanh(g * sum_j w_ji x_j / s + b_i)` with
/// `s = w_scale * sqrt(mean in-degree)` and `b_i` proportional to the
/// neuron's total input weight.
#[derive(Debug, Clone)]
pub struct NetworkRate {
    pub ids: Vec<NeuronId>,
    pub tau: Vec<f64>,
    pub bias: Vec<f64>,
    /// Incoming `(source index, scaled weight)` per neuron.
    pub incoming: Vec<Vec<(usize, f64)>>,
}

impl NetworkRate {
    pub fn new(graph: &NetworkGraph, params: &BTreeMap<NeuronId, NeuronParams>, gain: f64, w_scale: f64) -> Result<Self> {
        let ids = graph.node_ids();
        let n = ids.len();
        let tau = ids
            .iter()
            .map(|id| params.get(id).map(|p| p.tau_m).ok_or_else(|| Error::input(format!("no parameters for neuron {id}"))))
            .collect::<Result<Vec<_>>>()?;
        let mean_in = if n == 0 { 0.0 } else { graph.n_edges() as f64 / n as f64 };
        let s = w_scale * mean_in.max(1.0).sqrt();
        let mut incoming = vec![Vec::new(); n];
        for ((src, dst), w) in graph.edges() {
            let si = ids.binary_search(&src).expect("live");
            let di = ids.binary_search(&dst).expect("live");
            incoming[di].push((si, gain * w / s));
        }
        let mut input_sum = vec![0.0; n];
        for ((_, d), w) in graph.input_edges() {
            input_sum[ids.binary_search(&d).expect("live")] += w;
        }
        let max_in = input_sum.iter().cloned().fold(0.0, f64::max);
        let bias = input_sum.iter().map(|&x| if max_in > 0.0 { 0.5 * x / max_in } else { 0.0 }).collect();
        Ok(NetworkRate { ids, tau, bias, incoming })
    }
}

impl RateSystem for NetworkRate {
    fn dim(&self) -> usize {
        self.ids.len()
    }

    fn rhs(&self, x: &[f64], out: &mut [f64]) {
        for i in 0..x.len() {
            let u: f64 = self.incoming[i].iter().map(|&(j, w)| w * x[j]).sum::<f64>() + self.bias[i];
            out[i] = (-x[i] + u.tanh()) / self.tau[i];
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LyapunovConfig {
    /// Measurement horizon (time units of the system; ms for networks).
    pub horizon: f64,
    /// RK4 step.
    pub dt: f64,
    pub n_perturbations: usize,
    pub delta0: f64,
    /// Steps between renormalizations.
    pub renorm_every: usize,
    /// Reference-only integration before measuring.
    pub warmup: f64,
    /// Coupling gain of the network rate proxy.
    pub gain: f64,
}

impl Default for LyapunovConfig {
    fn default() -> Self {
        LyapunovConfig { horizon: 200.0, dt: 1.0, n_perturbations: 1, delta0: 1e-6, renorm_every: 10, warmup: 50.0, gain: 1.5 }
    }
}

impl LyapunovConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.horizon > 0.0 && self.dt > 0.0 && self.delta0 > 0.0 && self.warmup >= 0.0) {
            return Err(Error::config("lyapunov horizon, dt and delta0 must be positive"));
        }
        if self.n_perturbations == 0 || self.renorm_every == 0 {
            return Err(Error::config("lyapunov n_perturbations and renorm_every must be positive"));
        }
        Ok(())
    }
}

struct Rk4Scratch {
    k1: Vec<f64>,
    k2: Vec<f64>,
    k3: Vec<f64>,
    k4: Vec<f64>,
    tmp: Vec<f64>,
}

impl Rk4Scratch {
    fn new(n: usize) -> Self {
        Rk4Scratch { k1: vec![0.0; n], k2: vec![0.0; n], k3: vec![0.0; n], k4: vec![0.0; n], tmp: vec![0.0; n] }
    }

    fn step(&mut self, sys: &dyn RateSystem, x: &mut [f64], h: f64) {
        let n = x.len();
        sys.rhs(x, &mut self.k1);
        for i in 0..n {
            self.tmp[i] = x[i] + 0.5 * h * self.k1[i];
        }
        sys.rhs(&self.tmp, &mut self.k2);
        for i in 0..n {
            self.tmp[i] = x[i] + 0.5 * h * self.k2[i];
        }
        sys.rhs(&self.tmp, &mut self.k3);
        for i in 0..n {
            self.tmp[i] = x[i] + h * self.k3[i];
        }
        sys.rhs(&self.tmp, &mut self.k4);
        for i in 0..n {
            x[i] += h / 6.0 * (self.k1[i] + 2.0 * self.k2[i] + 2.0 * self.k3[i] + self.k4[i]);
        }
    }
}

/// Node exponents in index order of the system state.
pub fn node_exponents(sys: &dyn RateSystem, cfg: &LyapunovConfig, seed: u64) -> Result<Vec<f64>> {
    cfg.validate()?;
    let n = sys.dim();
    let n_steps = ((cfg.horizon / cfg.dt).round() as usize).max(1);
    let horizon = n_steps as f64 * cfg.dt;
    let warm_steps = (cfg.warmup / cfg.dt).round() as usize;
    let mut rng = stream(seed, tags::LYAPUNOV);
    let mut scratch = Rk4Scratch::new(n);
    let mut acc = vec![0.0; n];
    for _ in 0..cfg.n_perturbations {
        let mut x0 = sys.initial_state(&mut rng);
        for _ in 0..warm_steps {
            scratch.step(sys, &mut x0, cfg.dt);
        }
        // Reference trajectory snapshots at renormalization points.
        let mut reference = Vec::with_capacity(n_steps + 1);
        let mut x = x0.clone();
        reference.push(x.clone());
        for _ in 0..n_steps {
            scratch.step(sys, &mut x, cfg.dt);
            reference.push(x.clone());
        }
        for i in 0..n {
            let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
            let mut twin = x0.clone();
            twin[i] += sign * cfg.delta0;
            let mut log_growth = 0.0;
            let mut step = 0;
            while step < n_steps {
                let block = cfg.renorm_every.min(n_steps - step);
                for _ in 0..block {
                    scratch.step(sys, &mut twin, cfg.dt);
                }
                step += block;
                let r = &reference[step];
                let d = twin.iter().zip(r).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
                if !d.is_finite() || d <= 0.0 {
                    return Err(Error::numeric(format!("perturbation of node {i} left the representable range (distance {d})")));
                }
                log_growth += (d / cfg.delta0).ln();
                let f = cfg.delta0 / d;
                for (t, rv) in twin.iter_mut().zip(r) {
                    *t = rv + (*t - rv) * f;
                }
            }
            acc[i] += log_growth / horizon;
        }
    }
    Ok(acc.into_iter().map(|s| s / cfg.n_perturbations as f64).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeLyapunov {
    pub exponent: BTreeMap<NeuronId, f64>,
    pub horizon: f64,
    pub method: String,
}

/// Node exponents of a spiking network through its rate proxy.
pub fn estimate_node_lyapunov(
    graph: &NetworkGraph,
    params: &BTreeMap<NeuronId, NeuronParams>,
    w_scale: f64,
    cfg: &LyapunovConfig,
    seed: u64,
) -> Result<NodeLyapunov> {
    let sys = NetworkRate::new(graph, params, cfg.gain, w_scale)?;
    let exps = node_exponents(&sys, cfg, seed)?;
    Ok(NodeLyapunov {
        exponent: sys.ids.iter().copied().zip(exps).collect(),
        horizon: cfg.horizon,
        method: "rate-twin-renormalized".to_string(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HarmonicConfig {
    /// Magnitude shift that keeps the harmonic mean finite.
    pub eps_h: f64,
    /// Factor applied to every entry (1 = pure harmonic mean).
    pub multiplier: f64,
}

impl Default for HarmonicConfig {
    fn default() -> Self {
        HarmonicConfig { eps_h: 1e-6, multiplier: 1.0 }
    }
}

/// Harmonic mean of `|x| + eps_h` minus `eps_h`, signed by the arithmetic
/// mean of the pool.
pub fn pooled_harmonic_mean(pool: &[f64], eps_h: f64) -> Option<f64> {
    if pool.is_empty() {
        return None;
    }
    let inv: f64 = pool.iter().map(|x| 1.0 / (x.abs() + eps_h)).sum();
    let magnitude = (pool.len() as f64 / inv - eps_h).max(0.0);
    let mean = pool.iter().sum::<f64>() / pool.len() as f64;
    Some(if mean < 0.0 { -magnitude } else { magnitude })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LyapunovMatrix {
    /// `L_ij` for every edge `(i, j)` of the graph.
    pub entries: BTreeMap<(NeuronId, NeuronId), f64>,
    /// Edges whose neighbour pool was empty and used the endpoints instead.
    pub fallback: Vec<(NeuronId, NeuronId)>,
}

/// Undirected neighbour sets of every node.
pub(crate) fn neighbour_sets(graph: &NetworkGraph) -> BTreeMap<NeuronId, BTreeSet<NeuronId>> {
    let mut nb: BTreeMap<NeuronId, BTreeSet<NeuronId>> = graph.node_ids().into_iter().map(|i| (i, BTreeSet::new())).collect();
    for ((s, d), _) in graph.edges() {
        nb.get_mut(&s).expect("live").insert(d);
        nb.get_mut(&d).expect("live").insert(s);
    }
    nb
}

/// `L_ij` = harmonic mean of the multiset `Lambda(N(i)) + Lambda(N(j))`.
pub fn build_lyapunov_matrix(graph: &NetworkGraph, node_lyap: &BTreeMap<NeuronId, f64>, cfg: &HarmonicConfig) -> Result<LyapunovMatrix> {
    let nb = neighbour_sets(graph);
    let exponent = |id: &NeuronId| node_lyap.get(id).copied().ok_or_else(|| Error::input(format!("no Lyapunov exponent for neuron {id}")));
    let mut entries = BTreeMap::new();
    let mut fallback = Vec::new();
    for ((i, j), _) in graph.edges() {
        let mut pool = Vec::new();
        for k in nb[&i].iter().chain(nb[&j].iter()) {
            pool.push(exponent(k)?);
        }
        let value = match pooled_harmonic_mean(&pool, cfg.eps_h) {
            Some(v) => v,
            None => {
                fallback.push((i, j));
                pooled_harmonic_mean(&[exponent(&i)?, exponent(&j)?], cfg.eps_h).expect("two-element pool")
            }
        };
        entries.insert((i, j), cfg.multiplier * value);
    }
    Ok(LyapunovMatrix { entries, fallback })
}
