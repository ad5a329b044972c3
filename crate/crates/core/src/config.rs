//! Experiment configuration: a flat text format of `key = value` lines under
//! `[section]` headers, mapped onto the module configurations.
//!
//! Blank lines and lines starting with `#` or `;` are ignored. Values are
//! numbers, booleans (`true`/`false`), bare or double-quoted strings, lists
//! (`6, 6, 6`), ratios (`4:1`) or parameter laws (`gamma(4, 5)`,
//! `point(20)` or a plain number for a point mass). Unknown sections, unknown
//! keys and repeated keys are configuration errors naming `section.key`.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::bayesopt::{BoConfig, Range};
use crate::datagen::{ChaoticConfig, ChaoticSystem, SyntheticClassTask, TwoScale};
use crate::dist::ParamDist;
use crate::encode::EncodeMode;
use crate::error::{Error, Result};
use crate::lnp::activity::ActivityPruneConfig;
use crate::lnp::nodes::CentralityThreshold;
use crate::lnp::sparsify::DiagonalMode;
use crate::lnp::timescale::TimescaleConfig;
use crate::lnp::PruneConfig;
use crate::model::{ClassifyConfig, ForecastConfig, ModelConfig};
use crate::neuron::{HeterogeneityProfile, InitMode, PopulationSpec};
use crate::plasticity::StdpProfile;
use crate::topology::TopologyConfig;

/// Benchmark task of `train` and `evaluate`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Task {
    Lorenz63,
    Lorenz96,
    Rossler,
    SynthClass,
}

impl Task {
    pub fn parse(s: &str) -> Result<Task> {
        match s {
            "lorenz63" => Ok(Task::Lorenz63),
            "lorenz96" => Ok(Task::Lorenz96),
            "rossler" => Ok(Task::Rossler),
            "synth-class" => Ok(Task::SynthClass),
            _ => Err(Error::config(format!("unknown task '{s}' (expected lorenz63, lorenz96, rossler or synth-class)"))),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Task::Lorenz63 => "lorenz63",
            Task::Lorenz96 => "lorenz96",
            Task::Rossler => "rossler",
            Task::SynthClass => "synth-class",
        }
    }

    pub fn is_forecast(self) -> bool {
        self != Task::SynthClass
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PruneMode {
    Lnp,
    Activity,
}

/// Objective maximized by `bo`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoObjective {
    /// Spike efficiency `C / S~`.
    Efficiency,
    /// Memory capacity `C`.
    Capacity,
    /// Negated mean spike count `-S~`.
    SpikeCount,
}

impl BoObjective {
    pub fn as_str(self) -> &'static str {
        match self {
            BoObjective::Efficiency => "efficiency",
            BoObjective::Capacity => "capacity",
            BoObjective::SpikeCount => "spike_count",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlasticityConfig {
    pub profile: StdpProfile,
    /// `false` collapses every law to its mean.
    pub heterogeneous: bool,
    /// Samples of the training stream STDP runs over.
    pub train_samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsConfig {
    pub tau_max: usize,
    /// White-noise samples of the memory-capacity run.
    pub capacity_samples: usize,
    pub rank_threshold: f64,
    /// Distinct stimuli of the separation-rank run.
    pub rank_stimuli: usize,
    pub energy_per_sop: f64,
    /// Count spikes only up to the first readout spike.
    pub count_until_readout_spike: bool,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        MetricsConfig {
            tau_max: crate::metrics::DEFAULT_TAU_MAX,
            capacity_samples: 1500,
            rank_threshold: crate::metrics::DEFAULT_RANK_THRESHOLD,
            rank_stimuli: 20,
            energy_per_sop: 1.0,
            count_until_readout_spike: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LnpSection {
    pub mode: PruneMode,
    pub prune: PruneConfig,
    pub activity: ActivityPruneConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoSection {
    pub objective: BoObjective,
    pub loop_cfg: BoConfig,
    /// Shape box of every searched marginal.
    pub shape: Range,
    /// Scales range over `[theta / f, theta f]` around the starting law.
    pub scale_factor: f64,
    /// White-noise samples per objective evaluation.
    pub capacity_samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataConfig {
    /// Integration step of the chaotic systems.
    pub dt: f64,
    /// Integration steps discarded before the series starts.
    pub washout: usize,
    pub lorenz63: ChaoticSystem,
    pub lorenz96: ChaoticSystem,
    pub rossler: ChaoticSystem,
    pub forecast: ForecastConfig,
    pub classes: SyntheticClassTask,
    pub classify: ClassifyConfig,
}

impl DataConfig {
    pub fn system(&self, task: Task) -> Option<&ChaoticSystem> {
        match task {
            Task::Lorenz63 => Some(&self.lorenz63),
            Task::Lorenz96 => Some(&self.lorenz96),
            Task::Rossler => Some(&self.rossler),
            Task::SynthClass => None,
        }
    }

    /// Integration settings producing exactly the samples forecasting needs.
    pub fn chaotic(&self, task: Task, seed: u64) -> Option<ChaoticConfig> {
        self.system(task)
            .map(|s| ChaoticConfig::new(s.clone(), self.dt, self.washout + self.forecast.series_len(), self.washout, seed))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    /// Mandatory, either in the file or on the command line.
    pub seed: Option<u64>,
    pub out: Option<String>,
    pub task: Task,
    pub topology: TopologyConfig,
    pub neurons: HeterogeneityProfile,
    /// `false` collapses the neuron laws to their means.
    pub heterogeneous_neurons: bool,
    pub plasticity: PlasticityConfig,
    pub model: ModelConfig,
    pub metrics: MetricsConfig,
    pub lnp: LnpSection,
    pub bo: BoSection,
    pub data: DataConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let topology = TopologyConfig::default();
        ExperimentConfig {
            seed: None,
            out: None,
            task: Task::Lorenz63,
            neurons: HeterogeneityProfile::default(),
            heterogeneous_neurons: true,
            plasticity: PlasticityConfig { profile: StdpProfile::default(), heterogeneous: true, train_samples: 400 },
            model: ModelConfig::default(),
            metrics: MetricsConfig::default(),
            lnp: LnpSection { mode: PruneMode::Lnp, prune: PruneConfig::default(), activity: ActivityPruneConfig::default() },
            bo: BoSection {
                objective: BoObjective::Efficiency,
                loop_cfg: BoConfig::default(),
                shape: Range::new(1.0, 16.0),
                scale_factor: 4.0,
                capacity_samples: 600,
            },
            data: DataConfig {
                dt: 0.02,
                washout: 500,
                lorenz63: ChaoticSystem::lorenz63(),
                lorenz96: ChaoticSystem::lorenz96(),
                rossler: ChaoticSystem::rossler(),
                forecast: ForecastConfig::default(),
                classes: SyntheticClassTask::default(),
                classify: ClassifyConfig::default(),
            },
            topology,
        }
    }
}

impl ExperimentConfig {
    /// Neuron laws actually used (homogenized when requested).
    pub fn neuron_profile(&self) -> HeterogeneityProfile {
        if self.heterogeneous_neurons {
            self.neurons
        } else {
            self.neurons.homogenized()
        }
    }

    pub fn stdp_profile(&self) -> StdpProfile {
        if self.plasticity.heterogeneous {
            self.plasticity.profile
        } else {
            self.plasticity.profile.homogenized()
        }
    }

    /// The mandatory seed.
    pub fn seed(&self) -> Result<u64> {
        self.seed.ok_or_else(|| Error::config("experiment.seed is mandatory (set it in the file or pass --seed)"))
    }

    pub fn validate(&self) -> Result<()> {
        let sect = |name: &str, r: Result<()>| r.map_err(|e| Error::config(format!("[{name}] {}", strip(&e))));
        sect("topology", self.topology.validate())?;
        sect("dynamics", self.neurons.validate())?;
        sect("plasticity", self.plasticity.profile.validate())?;
        sect("readout", self.model.validate())?;
        if self.model.encoder.n_encoders != self.topology.n_encoders {
            return Err(Error::config("[encoder] n_encoders must equal topology.n_encoders"));
        }
        if self.plasticity.train_samples == 0 {
            return Err(Error::config("[plasticity] train_samples must be positive"));
        }
        if self.metrics.tau_max == 0 || self.metrics.rank_stimuli == 0 {
            return Err(Error::config("[metrics] tau_max and rank_stimuli must be positive"));
        }
        if !(self.metrics.rank_threshold > 0.0 && self.metrics.rank_threshold <= 1.0) {
            return Err(Error::config("[metrics] rank_threshold must lie in (0, 1]"));
        }
        if !(self.metrics.energy_per_sop >= 0.0) {
            return Err(Error::config("[metrics] energy_per_sop must be non-negative"));
        }
        sect("lnp", self.lnp.prune.validate())?;
        if !(self.lnp.activity.fraction_per_iter > 0.0 && self.lnp.activity.fraction_per_iter < 1.0) {
            return Err(Error::config("[lnp] activity_fraction must lie in (0, 1)"));
        }
        sect("bo", self.bo.loop_cfg.validate())?;
        if !(self.bo.shape.lo > 0.0 && self.bo.shape.lo <= self.bo.shape.hi && self.bo.scale_factor >= 1.0) {
            return Err(Error::config("[bo] needs 0 < shape_min <= shape_max and scale_factor >= 1"));
        }
        if !(self.data.dt > 0.0) {
            return Err(Error::config("[data] dt must be positive"));
        }
        for s in [&self.data.lorenz63, &self.data.lorenz96, &self.data.rossler] {
            sect("data", s.validate())?;
        }
        sect("data", self.data.forecast.validate())?;
        sect("data", self.data.classify.validate())?;
        Ok(())
    }

    /// SHA-256 of the canonical JSON form of the configuration.
    pub fn hash(&self) -> String {
        let text = serde_json::to_string(self).expect("configuration serializes");
        let digest = Sha256::digest(text.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| std::io::Error::new(e.kind(), format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let ini = Ini::parse(text)?;
        let mut cfg = ExperimentConfig::default();
        let mut topology_lattice_set = false;
        for (section, entries) in &ini.sections {
            let mut r = Reader { section, entries, used: Vec::new() };
            match section.as_str() {
                "experiment" => {
                    if let Some(v) = r.u64("seed")? {
                        cfg.seed = Some(v);
                    }
                    if let Some(v) = r.string("out") {
                        cfg.out = Some(v);
                    }
                    if let Some(v) = r.string("task") {
                        cfg.task = Task::parse(&v).map_err(|e| r.err("task", &strip(&e)))?;
                    }
                }
                "topology" => {
                    let t = &mut cfg.topology;
                    r.set_usize("n_total", &mut t.n_total)?;
                    if let Some(v) = r.string("ei_ratio") {
                        t.ei_ratio = parse_ratio(&v).ok_or_else(|| r.err("ei_ratio", "expected 'E:I', e.g. 4:1"))?;
                    }
                    r.set_f64("amplitude_c", &mut t.amplitude_c)?;
                    r.set_f64("lambda_scale", &mut t.lambda_scale)?;
                    r.set_f64("input_fraction", &mut t.input_fraction)?;
                    r.set_f64("input_connect_prob", &mut t.input_connect_prob)?;
                    if let Some(v) = r.string("lattice_shape") {
                        let l = parse_list(&v).filter(|l| l.len() == 3 && l.iter().all(|x| *x >= 1.0 && x.fract() == 0.0));
                        let l = l.ok_or_else(|| r.err("lattice_shape", "expected three positive integers"))?;
                        t.lattice_shape = [l[0] as usize, l[1] as usize, l[2] as usize];
                        topology_lattice_set = true;
                    }
                    if let Some(v) = r.usize("n_encoders")? {
                        t.n_encoders = v;
                        cfg.model.encoder.n_encoders = v;
                    }
                    r.set_f64("w_scale", &mut t.w_scale)?;
                    r.set_f64("w_in_scale", &mut t.w_in_scale)?;
                }
                "dynamics" => {
                    let s = &mut cfg.model.sim;
                    r.set_f64("dt", &mut s.dt)?;
                    r.set_f64("tau_syn", &mut s.tau_syn)?;
                    r.set_f64("v_floor_slack", &mut s.v_floor_slack)?;
                    if let Some(v) = r.string("init") {
                        s.init = match v.as_str() {
                            "rest" => InitMode::Rest,
                            "uniform" => InitMode::Uniform,
                            _ => return Err(r.err("init", "expected 'rest' or 'uniform'")),
                        };
                    }
                    let p = &mut cfg.neurons;
                    set_pop(&mut r, "exc", &mut p.exc)?;
                    set_pop(&mut r, "inh", &mut p.inh)?;
                    let c = &mut p.constants;
                    r.set_f64("r_m", &mut c.r_m)?;
                    r.set_f64("v_rest", &mut c.v_rest_a)?;
                    r.set_f64("v_threshold", &mut c.v_threshold)?;
                    r.set_f64("v_reset", &mut c.v_reset)?;
                    r.set_f64("refractory", &mut c.refractory_r)?;
                    r.set_f64("tau_floor", &mut c.tau_floor)?;
                    r.set_bool("bio_inspired", &mut p.bio_inspired)?;
                    r.set_bool("heterogeneous", &mut cfg.heterogeneous_neurons)?;
                }
                "plasticity" => {
                    let p = &mut cfg.plasticity;
                    r.set_dist("a_plus", &mut p.profile.a_plus)?;
                    r.set_dist("a_minus", &mut p.profile.a_minus)?;
                    r.set_dist("tau_plus", &mut p.profile.tau_plus)?;
                    r.set_dist("tau_minus", &mut p.profile.tau_minus)?;
                    r.set_f64("trace_incr_plus", &mut p.profile.trace_incr_plus)?;
                    r.set_f64("trace_incr_minus", &mut p.profile.trace_incr_minus)?;
                    r.set_f64("w_min", &mut p.profile.w_min)?;
                    r.set_f64("w_max", &mut p.profile.w_max)?;
                    r.set_bool("heterogeneous", &mut p.heterogeneous)?;
                    r.set_usize("train_samples", &mut p.train_samples)?;
                    r.set_bool("plastic_inputs", &mut cfg.model.plastic_inputs)?;
                }
                "encoder" => {
                    let e = &mut cfg.model.encoder;
                    r.set_f64("max_rate", &mut e.max_rate)?;
                    r.set_usize("n_encoders", &mut e.n_encoders)?;
                    r.set_f64("window", &mut e.window)?;
                    if let Some(v) = r.string("mode") {
                        e.mode = match v.as_str() {
                            "poisson_rate" => EncodeMode::PoissonRate,
                            "temporal_difference" => EncodeMode::TemporalDifference,
                            _ => return Err(r.err("mode", "expected 'poisson_rate' or 'temporal_difference'")),
                        };
                    }
                }
                "readout" => {
                    let m = &mut cfg.model;
                    r.set_f64("filter_tau", &mut m.filter_tau)?;
                    r.set_f64("fraction", &mut m.readout_fraction)?;
                    r.set_f64("regularization", &mut m.regularization)?;
                    if let Some(h) = r.usize("hidden_units")? {
                        cfg.data.classify.hidden_units = (h > 0).then_some(h);
                    }
                }
                "metrics" => {
                    let m = &mut cfg.metrics;
                    r.set_usize("tau_max", &mut m.tau_max)?;
                    r.set_usize("capacity_samples", &mut m.capacity_samples)?;
                    r.set_f64("rank_threshold", &mut m.rank_threshold)?;
                    r.set_usize("rank_stimuli", &mut m.rank_stimuli)?;
                    r.set_f64("energy_per_sop", &mut m.energy_per_sop)?;
                    r.set_f64("vpt_epsilon", &mut cfg.data.forecast.vpt_epsilon)?;
                    if let Some(v) = r.string("count_mode") {
                        m.count_until_readout_spike = match v.as_str() {
                            "full_window" => false,
                            "until_readout_spike" => true,
                            _ => return Err(r.err("count_mode", "expected 'full_window' or 'until_readout_spike'")),
                        };
                    }
                }
                "lnp" => {
                    let l = &mut cfg.lnp;
                    if let Some(v) = r.string("mode") {
                        l.mode = match v.as_str() {
                            "lnp" => PruneMode::Lnp,
                            "activity" => PruneMode::Activity,
                            _ => return Err(r.err("mode", "expected 'lnp' or 'activity'")),
                        };
                    }
                    let p = &mut l.prune;
                    r.set_usize("iterations", &mut p.iterations)?;
                    r.set_f64("rho_density", &mut p.rho_density)?;
                    r.set_f64("p_min", &mut p.p_min)?;
                    if let Some(v) = r.string("diagonal_mode") {
                        p.diagonal_mode = match v.as_str() {
                            "retain" => DiagonalMode::Retain,
                            "perturb" => DiagonalMode::Perturb,
                            _ => return Err(r.err("diagonal_mode", "expected 'retain' or 'perturb'")),
                        };
                    }
                    if let Some(v) = r.f64("centrality_quantile")? {
                        p.centrality_threshold = CentralityThreshold::Quantile(v);
                    }
                    if let Some(v) = r.f64("centrality_absolute")? {
                        p.centrality_threshold = CentralityThreshold::Absolute(v);
                    }
                    r.set_usize("m_delocalize", &mut p.m_delocalize)?;
                    r.set_f64("epsilon_quadform", &mut p.epsilon_quadform)?;
                    r.set_f64("sigma_noise", &mut p.sigma_noise)?;
                    r.set_f64("weight_cap", &mut p.weight_cap)?;
                    r.set_f64("lyapunov_horizon", &mut p.lyapunov.horizon)?;
                    r.set_f64("lyapunov_dt", &mut p.lyapunov.dt)?;
                    r.set_f64("lyapunov_warmup", &mut p.lyapunov.warmup)?;
                    r.set_f64("lyapunov_gain", &mut p.lyapunov.gain)?;
                    r.set_usize("lyapunov_perturbations", &mut p.lyapunov.n_perturbations)?;
                    r.set_f64("harmonic_eps", &mut p.harmonic.eps_h)?;
                    r.set_f64("harmonic_multiplier", &mut p.harmonic.multiplier)?;
                    r.set_f64("shift_margin", &mut p.shift.margin)?;
                    let mut ts = p.timescale.clone().unwrap_or_default();
                    let mut ts_on = p.timescale.is_some();
                    r.set_bool("timescale", &mut ts_on)?;
                    r.set_usize("timescale_budget", &mut ts.budget)?;
                    r.set_usize("timescale_candidates", &mut ts.n_candidates)?;
                    r.set_f64("timescale_shape_min", &mut ts.shape.lo)?;
                    r.set_f64("timescale_shape_max", &mut ts.shape.hi)?;
                    r.set_f64("timescale_scale_factor", &mut ts.scale_factor)?;
                    p.timescale = ts_on.then_some(TimescaleConfig { ..ts });
                    r.set_f64("activity_fraction", &mut l.activity.fraction_per_iter)?;
                    r.set_usize("activity_iterations", &mut l.activity.max_iterations)?;
                    if let Some(v) = r.usize("activity_target_synapses")? {
                        l.activity.target_synapses = Some(v);
                    }
                }
                "bo" => {
                    let b = &mut cfg.bo;
                    if let Some(v) = r.string("objective") {
                        b.objective = match v.as_str() {
                            "efficiency" => BoObjective::Efficiency,
                            "capacity" => BoObjective::Capacity,
                            "spike_count" => BoObjective::SpikeCount,
                            _ => return Err(r.err("objective", "expected 'efficiency', 'capacity' or 'spike_count'")),
                        };
                    }
                    r.set_usize("budget", &mut b.loop_cfg.budget)?;
                    r.set_usize("n_initial", &mut b.loop_cfg.n_initial)?;
                    r.set_usize("n_candidates", &mut b.loop_cfg.n_candidates)?;
                    r.set_f64("smoothness", &mut b.loop_cfg.smoothness)?;
                    r.set_f64("noise", &mut b.loop_cfg.noise)?;
                    r.set_f64("shape_min", &mut b.shape.lo)?;
                    r.set_f64("shape_max", &mut b.shape.hi)?;
                    r.set_f64("scale_factor", &mut b.scale_factor)?;
                    r.set_usize("capacity_samples", &mut b.capacity_samples)?;
                }
                "data" => {
                    let d = &mut cfg.data;
                    r.set_f64("dt", &mut d.dt)?;
                    r.set_usize("washout", &mut d.washout)?;
                    if let ChaoticSystem::Lorenz63 { sigma, rho, beta } = &mut d.lorenz63 {
                        r.set_f64("lorenz63_sigma", sigma)?;
                        r.set_f64("lorenz63_rho", rho)?;
                        r.set_f64("lorenz63_beta", beta)?;
                    }
                    if let ChaoticSystem::Lorenz96 { k, forcing, two_scale } = &mut d.lorenz96 {
                        r.set_usize("lorenz96_k", k)?;
                        r.set_f64("lorenz96_forcing", forcing)?;
                        if let Some(j) = r.usize("lorenz96_fast_j")? {
                            let mut t = two_scale.unwrap_or(TwoScale { j, h: 1.0, c: 10.0, b: 10.0 });
                            t.j = j;
                            *two_scale = Some(t);
                        }
                        if let Some(t) = two_scale.as_mut() {
                            r.set_f64("lorenz96_h", &mut t.h)?;
                            r.set_f64("lorenz96_c", &mut t.c)?;
                            r.set_f64("lorenz96_b", &mut t.b)?;
                        }
                    }
                    if let ChaoticSystem::Rossler { a, b, c } = &mut d.rossler {
                        r.set_f64("rossler_a", a)?;
                        r.set_f64("rossler_b", b)?;
                        r.set_f64("rossler_c", c)?;
                    }
                    let f = &mut d.forecast;
                    r.set_usize("train_steps", &mut f.train_steps)?;
                    r.set_usize("predict_steps", &mut f.predict_steps)?;
                    r.set_usize("readout_washout", &mut f.washout)?;
                    r.set_bool("closed_loop", &mut f.closed_loop)?;
                    r.set_f64("scaler_margin", &mut f.scaler_margin)?;
                    let c = &mut d.classes;
                    r.set_usize("n_classes", &mut c.n_classes)?;
                    r.set_usize("n_channels", &mut c.n_channels)?;
                    r.set_f64("class_noise", &mut c.noise)?;
                    r.set_usize("trials_per_class", &mut c.trials_per_class)?;
                    r.set_f64("test_fraction", &mut c.test_fraction)?;
                    r.set_f64("stimulus_ms", &mut d.classify.stimulus_ms)?;
                    r.set_f64("gap_ms", &mut d.classify.gap_ms)?;
                }
                other => return Err(Error::config(format!("unknown section [{other}]"))),
            }
            r.finish()?;
        }
        if !topology_lattice_set {
            cfg.topology.lattice_shape = TopologyConfig::cubic_lattice_for(cfg.topology.n_total);
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Message of an error without its category prefix.
fn strip(e: &Error) -> String {
    match e {
        Error::Config(m) | Error::Input(m) | Error::Numeric(m) | Error::Format(m) => m.clone(),
        Error::Io(e) => e.to_string(),
    }
}

fn set_pop(r: &mut Reader, prefix: &str, pop: &mut PopulationSpec) -> Result<()> {
    r.set_dist(&format!("tau_m_{prefix}"), &mut pop.tau_m)?;
    let key = format!("v_threshold_{prefix}");
    if let Some(v) = r.string(&key) {
        pop.v_threshold = Some(parse_dist(&v).ok_or_else(|| r.err(&key, "expected gamma(k, theta), point(v) or a number"))?);
    }
    Ok(())
}

/// Raw `[section] key = value` content with line numbers.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Ini {
    pub sections: BTreeMap<String, BTreeMap<String, (String, usize)>>,
}

impl Ini {
    pub fn parse(text: &str) -> Result<Ini> {
        let mut ini = Ini::default();
        let mut current: Option<String> = None;
        for (k, raw) in text.lines().enumerate() {
            let line_no = k + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') || line.starts_with(';') {
                continue;
            }
            if let Some(rest) = line.strip_prefix('[') {
                let name = rest
                    .strip_suffix(']')
                    .map(str::trim)
                    .filter(|n| !n.is_empty())
                    .ok_or_else(|| Error::config(format!("line {line_no}: malformed section header '{line}'")))?;
                ini.sections.entry(name.to_string()).or_default();
                current = Some(name.to_string());
                continue;
            }
            let (key, value) =
                line.split_once('=').ok_or_else(|| Error::config(format!("line {line_no}: expected 'key = value', got '{line}'")))?;
            let key = key.trim();
            if key.is_empty() {
                return Err(Error::config(format!("line {line_no}: empty key")));
            }
            let section = current.as_ref().ok_or_else(|| Error::config(format!("line {line_no}: key '{key}' outside any [section]")))?;
            let value = unquote(value.trim());
            let entries = ini.sections.get_mut(section).expect("section created");
            if entries.insert(key.to_string(), (value, line_no)).is_some() {
                return Err(Error::config(format!("line {line_no}: duplicate key {section}.{key}")));
            }
        }
        Ok(ini)
    }
}

fn unquote(v: &str) -> String {
    if v.len() >= 2 && v.starts_with('"') && v.ends_with('"') {
        v[1..v.len() - 1].to_string()
    } else {
        v.to_string()
    }
}

/// Typed access to one section that remembers which keys were read.
struct Reader<'a> {
    section: &'a str,
    entries: &'a BTreeMap<String, (String, usize)>,
    used: Vec<String>,
}

impl Reader<'_> {
    fn err(&self, key: &str, msg: &str) -> Error {
        let line = self.entries.get(key).map(|e| e.1).unwrap_or(0);
        Error::config(format!("{}.{key} (line {line}): {msg}", self.section))
    }

    fn string(&mut self, key: &str) -> Option<String> {
        self.used.push(key.to_string());
        self.entries.get(key).map(|e| e.0.clone())
    }

    fn parsed<T: std::str::FromStr>(&mut self, key: &str, what: &str) -> Result<Option<T>> {
        match self.string(key) {
            None => Ok(None),
            Some(v) => v.parse::<T>().map(Some).map_err(|_| self.err(key, &format!("expected {what}, got '{v}'"))),
        }
    }

    fn f64(&mut self, key: &str) -> Result<Option<f64>> {
        let v: Option<f64> = self.parsed(key, "a number")?;
        match v {
            Some(x) if !x.is_finite() => Err(self.err(key, "must be finite")),
            _ => Ok(v),
        }
    }

    fn usize(&mut self, key: &str) -> Result<Option<usize>> {
        self.parsed(key, "a non-negative integer")
    }

    fn u64(&mut self, key: &str) -> Result<Option<u64>> {
        self.parsed(key, "a non-negative integer")
    }

    fn set_f64(&mut self, key: &str, slot: &mut f64) -> Result<()> {
        if let Some(v) = self.f64(key)? {
            *slot = v;
        }
        Ok(())
    }

    fn set_usize(&mut self, key: &str, slot: &mut usize) -> Result<()> {
        if let Some(v) = self.usize(key)? {
            *slot = v;
        }
        Ok(())
    }

    fn set_bool(&mut self, key: &str, slot: &mut bool) -> Result<()> {
        if let Some(v) = self.parsed::<bool>(key, "true or false")? {
            *slot = v;
        }
        Ok(())
    }

    fn set_dist(&mut self, key: &str, slot: &mut ParamDist) -> Result<()> {
        if let Some(v) = self.string(key) {
            let d = parse_dist(&v).ok_or_else(|| self.err(key, "expected gamma(k, theta), point(v) or a number"))?;
            d.validate().map_err(|e| self.err(key, &strip(&e)))?;
            *slot = d;
        }
        Ok(())
    }

    fn finish(self) -> Result<()> {
        for (key, (_, line)) in self.entries {
            if !self.used.iter().any(|u| u == key) {
                return Err(Error::config(format!("unknown key {}.{key} (line {line})", self.section)));
            }
        }
        Ok(())
    }
}

fn parse_ratio(v: &str) -> Option<(u32, u32)> {
    let (a, b) = v.split_once(':')?;
    Some((a.trim().parse().ok()?, b.trim().parse().ok()?))
}

fn parse_list(v: &str) -> Option<Vec<f64>> {
    v.split(',').map(|x| x.trim().parse::<f64>().ok()).collect()
}

/// `gamma(k, theta)`, `point(v)` or a bare number.
pub fn parse_dist(v: &str) -> Option<ParamDist> {
    let v = v.trim();
    if let Ok(x) = v.parse::<f64>() {
        return Some(ParamDist::point(x));
    }
    let (name, rest) = v.split_once('(')?;
    let args = parse_list(rest.trim().strip_suffix(')')?)?;
    match (name.trim(), args.as_slice()) {
        ("gamma", [k, theta]) => Some(ParamDist::gamma(*k, *theta)),
        ("point", [x]) => Some(ParamDist::point(*x)),
        _ => None,
    }
}
