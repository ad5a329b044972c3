//! The iterated pruning pipeline: per iteration, synapse sparsification,
//! centrality node pruning, delocalizing edge addition and timescale
//! re-optimization. Only the graph, neuron parameters, config and seed are
//! consulted.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::neuron::{HeterogeneityProfile, NeuronParams};
use crate::rng::{derive, stream, tags};
use crate::topology::{degree_variance, NetworkGraph, NeuronId, Sign};

use super::covariance::{max_real_eigenvalue, stationary_covariance, LinearizedSystem, ShiftConfig, StationaryCovariance};
use super::delocalize::delocalize_edges;
use super::lyapunov::{build_lyapunov_matrix, estimate_node_lyapunov, HarmonicConfig, LyapunovConfig, LyapunovMatrix, NodeLyapunov};
use super::nodes::{prune_nodes, CentralityThreshold};
use super::sparsify::{keep_probabilities, prune_synapses, DiagonalMode, SparsifyReport};
use super::timescale::{optimize_timescales, TimescaleConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PruneConfig {
    pub rho_density: f64,
    pub p_min: f64,
    pub diagonal_mode: DiagonalMode,
    pub centrality_threshold: CentralityThreshold,
    pub m_delocalize: usize,
    /// Tolerance of the quadratic-form preservation contract.
    pub epsilon_quadform: f64,
    pub iterations: usize,
    /// Noise amplitude of the linearized rate system.
    pub sigma_noise: f64,
    /// Absolute cap on a rescaled weight, as a multiple of `w_scale`.
    pub weight_cap: f64,
    pub lyapunov: LyapunovConfig,
    pub harmonic: HarmonicConfig,
    pub shift: ShiftConfig,
    /// `None` skips the timescale step.
    pub timescale: Option<TimescaleConfig>,
}

impl Default for PruneConfig {
    fn default() -> Self {
        PruneConfig {
            rho_density: 1.0,
            p_min: 1e-3,
            diagonal_mode: DiagonalMode::Retain,
            centrality_threshold: CentralityThreshold::Quantile(0.05),
            m_delocalize: 5,
            epsilon_quadform: 0.2,
            iterations: 10,
            sigma_noise: 1.0,
            weight_cap: 2.0,
            lyapunov: LyapunovConfig::default(),
            harmonic: HarmonicConfig::default(),
            shift: ShiftConfig::default(),
            timescale: Some(TimescaleConfig::default()),
        }
    }
}

impl PruneConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.rho_density > 0.0 && self.rho_density.is_finite()) {
            return Err(Error::config("lnp.rho_density must be positive"));
        }
        if !(self.p_min > 0.0 && self.p_min <= 1.0) {
            return Err(Error::config("lnp.p_min must lie in (0, 1]"));
        }
        if !(self.epsilon_quadform > 0.0 && self.sigma_noise > 0.0 && self.weight_cap >= 1.0) {
            return Err(Error::config("lnp.epsilon_quadform and sigma_noise must be positive and weight_cap >= 1"));
        }
        self.centrality_threshold.validate()?;
        self.lyapunov.validate()?;
        if let Some(t) = &self.timescale {
            t.validate()?;
        }
        Ok(())
    }
}

/// One record of the iteration log (field order is the on-disk order).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LnpIterationRecord {
    pub iter: usize,
    pub n_neurons: usize,
    pub n_synapses: usize,
    pub density: f64,
    pub lambda_max: f64,
    pub degree_var: f64,
    pub shift_applied: f64,
    pub seed: u64,
}

/// A network state between iterations.
#[derive(Debug, Clone, PartialEq)]
pub struct PrunedModel {
    pub graph: NetworkGraph,
    pub params: BTreeMap<NeuronId, NeuronParams>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterationDetail {
    pub sparsify: SparsifyReport,
    pub removed_nodes: Vec<NeuronId>,
    pub added_edges: Vec<(NeuronId, NeuronId)>,
    pub delocalize_shortfall: usize,
    pub lambda_before_timescale: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LnpRun {
    /// Models after each iteration (empty when no iteration ran).
    pub models: Vec<PrunedModel>,
    pub log: Vec<LnpIterationRecord>,
    pub details: Vec<IterationDetail>,
}

impl LnpRun {
    /// The last model, or the input when no iteration ran.
    pub fn final_model<'a>(&'a self, original: &'a PrunedModel) -> &'a PrunedModel {
        self.models.last().unwrap_or(original)
    }
}

/// One JSON object per line in the log's field order.
pub fn log_to_jsonl(log: &[LnpIterationRecord]) -> Result<String> {
    let mut out = String::new();
    for r in log {
        out.push_str(&serde_json::to_string(r)?);
        out.push('\n');
    }
    Ok(out)
}

/// Dense `L` aligned with `A`: entry `(dst, src)`.
fn dense_lyapunov(ids: &[NeuronId], l: &LyapunovMatrix) -> DMatrix<f64> {
    let n = ids.len();
    let mut m = DMatrix::zeros(n, n);
    for (&(src, dst), &v) in &l.entries {
        if let (Ok(si), Ok(di)) = (ids.binary_search(&src), ids.binary_search(&dst)) {
            m[(di, si)] = v;
        }
    }
    m
}

/// Leading eigenvalue of the linearization of `graph` under node exponents.
fn linearized_lambda(
    graph: &NetworkGraph,
    params: &BTreeMap<NeuronId, NeuronParams>,
    exps: &BTreeMap<NeuronId, f64>,
    harmonic: &HarmonicConfig,
) -> Result<(f64, LyapunovMatrix)> {
    let l = build_lyapunov_matrix(graph, exps, harmonic)?;
    let sys = LinearizedSystem::from_lyapunov(&graph.node_ids(), params, &l, 0.0)?;
    Ok((max_real_eigenvalue(&sys.a)?, l))
}

/// Everything the synapse-sparsification step reads, for one network state.
#[derive(Debug, Clone, PartialEq)]
pub struct Linearization {
    pub lyap: NodeLyapunov,
    /// Neuron order of every matrix below.
    pub ids: Vec<NeuronId>,
    pub system: LinearizedSystem,
    pub cov: StationaryCovariance,
    /// `L` aligned with `A` (entry `(dst, src)`).
    pub l_dense: DMatrix<f64>,
    pub signs: Vec<Sign>,
}

impl Linearization {
    /// Keep probabilities of the sparsification step.
    pub fn keep_probabilities(&self, cfg: &PruneConfig) -> Result<DMatrix<f64>> {
        keep_probabilities(&self.system.a, &self.cov.sigma, &self.l_dense, &self.signs, cfg.rho_density, cfg.p_min)
    }
}

/// Node exponents, harmonic-mean coupling, linearized system and its
/// stationary covariance for one network state (`seed` is the iteration seed).
pub fn linearize(
    graph: &NetworkGraph,
    params: &BTreeMap<NeuronId, NeuronParams>,
    w_scale: f64,
    cfg: &PruneConfig,
    seed: u64,
) -> Result<Linearization> {
    let lyap = estimate_node_lyapunov(graph, params, w_scale, &cfg.lyapunov, seed)?;
    let l = build_lyapunov_matrix(graph, &lyap.exponent, &cfg.harmonic)?;
    let ids = graph.node_ids();
    let system = LinearizedSystem::from_lyapunov(&ids, params, &l, cfg.sigma_noise)?;
    let cov = stationary_covariance(&system, &cfg.shift)?;
    let signs: Vec<Sign> = ids.iter().map(|&id| graph.sign(id).expect("live")).collect();
    let l_dense = dense_lyapunov(&ids, &l);
    Ok(Linearization { lyap, ids, system, cov, l_dense, signs })
}

/// Apply the pruning pipeline `cfg.iterations` times.
pub fn run_lnp(model: &PrunedModel, profile: &HeterogeneityProfile, w_scale: f64, cfg: &PruneConfig, seed: u64) -> Result<LnpRun> {
    cfg.validate()?;
    if !(w_scale > 0.0) {
        return Err(Error::config("w_scale must be positive"));
    }
    let mut graph = model.graph.clone();
    let mut params = model.params.clone();
    let mut run = LnpRun { models: Vec::new(), log: Vec::new(), details: Vec::new() };
    let v_span = profile.constants.v_threshold - profile.constants.v_rest_a;
    for iter in 1..=cfg.iterations {
        if graph.n_nodes() < 2 {
            return Err(Error::numeric(format!("network collapsed to {} neuron(s) at iteration {iter}", graph.n_nodes())));
        }
        let it_seed = derive(seed, iter as u64);

        // Step 1: node exponents, Lyapunov matrix, covariance, sparsification.
        let Linearization { lyap, ids, system, cov, l_dense, signs } = linearize(&graph, &params, w_scale, cfg, it_seed)?;
        let mut rng = stream(it_seed, tags::PRUNE);
        let sparse = prune_synapses(&system.a, &cov.sigma, &l_dense, &signs, cfg.rho_density, cfg.p_min, cfg.diagonal_mode, &mut rng)?;

        let cap = cfg.weight_cap * w_scale;
        let edges: Vec<((NeuronId, NeuronId), f64)> = graph.edges().collect();
        for ((src, dst), w) in edges {
            let (si, di) = (system.index_of(src).expect("live"), system.index_of(dst).expect("live"));
            if sparse.a_sparse[(di, si)] == 0.0 {
                graph.remove_edge(src, dst);
            } else {
                let p = sparse.p[(di, si)];
                let w_new = (w / p).clamp(-cap, cap);
                graph.set_edge(src, dst, w_new)?;
            }
        }
        if cfg.diagonal_mode == DiagonalMode::Perturb {
            for (i, id) in ids.iter().enumerate() {
                let p = params.get_mut(id).expect("live");
                let offset = -sparse.delta[i] * p.tau_m * v_span / 2.0;
                let lo = profile.constants.v_rest_a - v_span / 2.0;
                let hi = profile.constants.v_rest_a + v_span / 2.0;
                p.v_rest_a = (p.v_rest_a + offset).clamp(lo, hi);
            }
        }

        // Step 2: centrality node pruning.
        let (g2, removed) = prune_nodes(&graph, cfg.centrality_threshold)?;
        graph = g2;
        for id in &removed {
            params.remove(id);
        }

        // Step 3: delocalizing edges.
        let deloc = delocalize_edges(&graph, cfg.m_delocalize, w_scale, it_seed)?;
        graph = deloc.graph;

        // Step 4: timescales, with the coupling rebuilt on the new graph from
        // the surviving node exponents.
        let exps: BTreeMap<NeuronId, f64> = lyap.exponent.iter().filter(|(id, _)| graph.contains(**id)).map(|(k, v)| (*k, *v)).collect();
        let mut lambda_before = None;
        let lambda_max = match &cfg.timescale {
            Some(tcfg) => {
                let l_new = build_lyapunov_matrix(&graph, &exps, &cfg.harmonic)?;
                let out = optimize_timescales(&graph, &params, profile, &l_new, tcfg, it_seed)?;
                params = out.params;
                lambda_before = Some(out.lambda_before);
                out.lambda_after
            }
            None => linearized_lambda(&graph, &params, &exps, &cfg.harmonic)?.0,
        };

        run.log.push(LnpIterationRecord {
            iter,
            n_neurons: graph.n_nodes(),
            n_synapses: graph.n_edges(),
            density: graph.density(),
            lambda_max,
            degree_var: degree_variance(&graph)?,
            shift_applied: cov.shift_applied,
            seed: it_seed,
        });
        run.details.push(IterationDetail {
            sparsify: sparse.report,
            removed_nodes: removed.into_iter().collect(),
            added_edges: deloc.added,
            delocalize_shortfall: deloc.shortfall,
            lambda_before_timescale: lambda_before,
        });
        run.models.push(PrunedModel { graph: graph.clone(), params: params.clone() });
    }
    Ok(run)
}
