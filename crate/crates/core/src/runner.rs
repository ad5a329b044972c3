//! Experiment stages behind the `hrsnn` binary: build, train, prune,
//! evaluate and bo. Every stage reads an [`ExperimentConfig`], writes its
//! artifacts into the output directory and finishes with a `manifest.json`
//! listing the configuration hash, stage seeds and every file written.
//!
//! A model snapshot is the graph file (`NAME.json`) plus a neuron-parameter
//! sidecar (`NAME.params.json`). JSON reports serialize structs, so their key
//! order is fixed; floats use the shortest round-trip form.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use nalgebra::DMatrix;
use serde::Serialize;

use crate::bayesopt::{bo_loop, ParamDistributionSet, SearchSpace};
use crate::config::{BoObjective, ExperimentConfig, PruneMode, Task};
use crate::datagen::{generate, make_classification_task};
use crate::error::{Error, Result};
use crate::lnp::activity::{run_activity_pruning, ActivityRecord};
use crate::lnp::{log_to_jsonl, run_lnp, LnpRun, PrunedModel};
use crate::metrics::{count_sops, count_sops_vs_dense, effective_rank, heterogeneity_score, spike_efficiency, CountMode, SpikeStats};
use crate::model::{
    build_model, capacity_run, classify, final_states, forecast, forecast_training_input, noise_rates, train_stdp, white_noise, TrainedModel,
};
use crate::neuron::{NeuronParams, SpikeRecord};
use crate::readout::{select_readout_neurons, ReadoutLayer};
use crate::rng::{derive, tags};
use crate::topology::{degree_variance, NetworkGraph, NeuronId, Sign};

/// Seed derivation tags of the stages.
pub mod stage {
    pub const BUILD: u64 = 101;
    pub const TRAIN: u64 = 102;
    pub const PRUNE: u64 = 103;
    pub const EVALUATE: u64 = 104;
    pub const BO: u64 = 105;
}

/// Resolved command-line invocation.
#[derive(Debug, Clone)]
pub struct Invocation {
    pub cfg: ExperimentConfig,
    pub seed: u64,
    pub out: PathBuf,
    pub snapshot: Option<PathBuf>,
    pub task: Task,
    /// Also compute capacity, efficiency and separation rank in `evaluate`.
    pub extended: bool,
    /// Dense parent snapshot for the SOP ratio in `evaluate`.
    pub reference: Option<PathBuf>,
}

impl Invocation {
    /// Apply command-line overrides to a loaded configuration.
    pub fn new(
        mut cfg: ExperimentConfig,
        seed: Option<u64>,
        out: Option<PathBuf>,
        snapshot: Option<PathBuf>,
        task: Option<Task>,
    ) -> Result<Self> {
        if seed.is_some() {
            cfg.seed = seed;
        }
        let seed = cfg.seed()?;
        let out = out.or_else(|| cfg.out.as_ref().map(PathBuf::from)).unwrap_or_else(|| PathBuf::from("hrsnn-out"));
        let task = task.unwrap_or(cfg.task);
        cfg.task = task;
        Ok(Invocation { cfg, seed, out, snapshot, task, extended: false, reference: None })
    }

    pub fn stage_seed(&self, tag: u64) -> u64 {
        derive(self.seed, tag)
    }

    fn snapshot(&self) -> Result<&Path> {
        self.snapshot.as_deref().ok_or_else(|| Error::config("this command needs --snapshot PATH"))
    }
}

/// Record of one command run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub config_hash: String,
    pub version: String,
    pub started_unix: u64,
    pub finished_unix: u64,
    pub seed: u64,
    pub stage_seeds: BTreeMap<String, u64>,
    pub artifacts: Vec<String>,
}

/// Collects written files for the manifest.
struct Artifacts {
    dir: PathBuf,
    files: Vec<String>,
}

impl Artifacts {
    fn new(dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir)
            .map_err(|e| std::io::Error::new(e.kind(), format!("cannot create output directory {}: {e}", dir.display())))?;
        Ok(Artifacts { dir: dir.to_path_buf(), files: Vec::new() })
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    fn write(&mut self, name: &str, contents: &str) -> Result<PathBuf> {
        let p = self.path(name);
        std::fs::write(&p, contents).map_err(|e| std::io::Error::new(e.kind(), format!("cannot write {}: {e}", p.display())))?;
        self.files.push(name.to_string());
        Ok(p)
    }

    fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<PathBuf> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.write(name, &text)
    }

    fn model(&mut self, name: &str, model: &PrunedModel) -> Result<PathBuf> {
        let path = self.path(&format!("{name}.json"));
        save_model(&path, model)?;
        self.files.push(format!("{name}.json"));
        self.files.push(format!("{name}.params.json"));
        Ok(path)
    }

    fn finish(mut self, inv: &Invocation, command: &str, started: u64, stages: &[(&str, u64)]) -> Result<RunManifest> {
        self.files.push("config.json".to_string());
        self.files.push("manifest.json".to_string());
        let mut cfg_text = serde_json::to_string_pretty(&inv.cfg)?;
        cfg_text.push('\n');
        let p = self.path("config.json");
        std::fs::write(&p, cfg_text).map_err(|e| std::io::Error::new(e.kind(), format!("cannot write {}: {e}", p.display())))?;
        let manifest = RunManifest {
            command: command.to_string(),
            config_hash: inv.cfg.hash(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            started_unix: started,
            finished_unix: now(),
            seed: inv.seed,
            stage_seeds: stages.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
            artifacts: self.files.clone(),
        };
        let mut text = serde_json::to_string_pretty(&manifest)?;
        text.push('\n');
        let p = self.path("manifest.json");
        std::fs::write(&p, text).map_err(|e| std::io::Error::new(e.kind(), format!("cannot write {}: {e}", p.display())))?;
        Ok(manifest)
    }
}

fn now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

/// Sidecar path of a snapshot: `x.json` → `x.params.json`.
pub fn params_path(snapshot: &Path) -> PathBuf {
    let stem = snapshot.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    snapshot.with_file_name(format!("{stem}.params.json"))
}

#[derive(Debug, Serialize, serde::Deserialize)]
struct ParamEntry {
    id: u32,
    #[serde(flatten)]
    params: NeuronParams,
}

#[derive(Debug, Serialize, serde::Deserialize)]
struct ParamFile {
    params: Vec<ParamEntry>,
}

pub fn save_model(path: &Path, model: &PrunedModel) -> Result<()> {
    let write = |p: &Path, text: String| -> Result<()> {
        std::fs::write(p, text).map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("cannot write {}: {e}", p.display()))))
    };
    write(path, model.graph.to_snapshot_json() + "\n")?;
    let file = ParamFile { params: model.params.iter().map(|(id, p)| ParamEntry { id: id.0, params: *p }).collect() };
    write(&params_path(path), serde_json::to_string(&file)? + "\n")
}

pub fn load_model(path: &Path) -> Result<PrunedModel> {
    let read = |p: &Path| -> Result<String> {
        std::fs::read_to_string(p).map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("cannot read {}: {e}", p.display()))))
    };
    let graph = NetworkGraph::from_snapshot_json(&read(path)?)?;
    let file: ParamFile = serde_json::from_str(&read(&params_path(path))?)?;
    let params: BTreeMap<NeuronId, NeuronParams> = file.params.into_iter().map(|e| (NeuronId(e.id), e.params)).collect();
    let ids = graph.node_ids();
    if ids.len() != params.len() || ids.iter().any(|id| !params.contains_key(id)) {
        return Err(Error::Format(format!("{} does not match the neurons of {}", params_path(path).display(), path.display())));
    }
    for p in params.values() {
        p.validate().map_err(|e| Error::Format(e.to_string()))?;
    }
    Ok(PrunedModel { graph, params })
}

fn check_snapshot(model: &PrunedModel, inv: &Invocation) -> Result<()> {
    let want = inv.cfg.model.encoder.n_encoders;
    if model.graph.n_encoders() as usize != want {
        return Err(Error::input(format!(
            "snapshot has {} encoders but the configuration uses {want}",
            model.graph.n_encoders()
        )));
    }
    if model.graph.is_empty() {
        return Err(Error::input("snapshot has no neurons"));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GraphSummary {
    pub n_neurons: usize,
    pub n_excitatory: usize,
    pub n_inhibitory: usize,
    pub n_synapses: usize,
    pub n_input_synapses: usize,
    pub density: f64,
    pub degree_var: f64,
    /// Sample variance of `tau_m` per population (the 1-parameter
    /// covariance determinant).
    pub heterogeneity_exc: f64,
    pub heterogeneity_inh: f64,
}

pub fn summarize(model: &PrunedModel) -> Result<GraphSummary> {
    let g = &model.graph;
    let pop = |s: Sign| -> Vec<f64> { model.params.iter().filter(|(id, _)| g.sign(**id) == Some(s)).map(|(_, p)| p.tau_m).collect() };
    let score = |v: Vec<f64>| -> Result<f64> {
        if v.len() < 2 {
            return Ok(0.0);
        }
        Ok(heterogeneity_score(&DMatrix::from_column_slice(v.len(), 1, &v))?.value)
    };
    let exc = pop(Sign::Excitatory);
    let inh = pop(Sign::Inhibitory);
    Ok(GraphSummary {
        n_neurons: g.n_nodes(),
        n_excitatory: exc.len(),
        n_inhibitory: inh.len(),
        n_synapses: g.n_edges(),
        n_input_synapses: g.n_input_edges(),
        density: g.density(),
        degree_var: if g.is_empty() { 0.0 } else { degree_variance(g)? },
        heterogeneity_exc: score(exc)?,
        heterogeneity_inh: score(inh)?,
    })
}

/// What a command produced, for the console summary.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub summary: String,
    pub manifest: RunManifest,
}

/// `build`: construct the graph and draw parameters.
pub fn cmd_build(inv: &Invocation) -> Result<Outcome> {
    let started = now();
    let seed = inv.stage_seed(stage::BUILD);
    let model = build_model(&inv.cfg.topology, &inv.cfg.neuron_profile(), seed)?;
    let summary = summarize(&model)?;
    let mut art = Artifacts::new(&inv.out)?;
    art.model("graph", &model)?;
    art.json("build.json", &summary)?;
    let manifest = art.finish(inv, "build", started, &[("build", seed)])?;
    Ok(Outcome {
        summary: format!(
            "built {} neurons, {} synapses, density {:.4}, heterogeneity exc {:.4} inh {:.4}",
            summary.n_neurons, summary.n_synapses, summary.density, summary.heterogeneity_exc, summary.heterogeneity_inh
        ),
        manifest,
    })
}

/// The training stream of a task as encoder rows, and the encoder window.
fn training_stream(inv: &Invocation, seed: u64) -> Result<(Vec<Vec<f64>>, f64)> {
    let cfg = &inv.cfg;
    match cfg.data.chaotic(inv.task, derive(seed, tags::SIGNAL)) {
        Some(cc) => {
            let series = generate(&cc)?;
            Ok((forecast_training_input(&series, &cfg.data.forecast)?, cfg.model.encoder.window))
        }
        None => {
            let data = make_classification_task(&cfg.data.classes, derive(seed, tags::TASK))?;
            let mut rows = Vec::with_capacity(2 * data.train.len());
            for t in &data.train {
                rows.push(t.pattern.clone());
                rows.push(vec![0.0; t.pattern.len()]);
            }
            Ok((rows, cfg.data.classify.stimulus_ms))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainReport {
    pub task: String,
    pub n_neurons: usize,
    pub n_synapses: usize,
    pub duration_ms: f64,
    pub total_spikes: usize,
    pub mean_count: f64,
    pub mean_abs_weight_before: f64,
    pub mean_abs_weight_after: f64,
    pub readout_inputs: usize,
    pub readout_outputs: usize,
}

fn mean_abs_weight(g: &NetworkGraph) -> f64 {
    let n = g.n_edges();
    if n == 0 {
        0.0
    } else {
        g.edges().map(|(_, w)| w.abs()).sum::<f64>() / n as f64
    }
}

/// Per-neuron spike-count CSV.
pub fn spike_csv(record: &SpikeRecord) -> String {
    let mut s = String::from("neuron,count,rate_hz\n");
    for (id, c) in &record.counts {
        let rate = if record.duration > 0.0 { *c as f64 * 1000.0 / record.duration } else { 0.0 };
        let _ = writeln!(s, "{},{},{}", id.0, c, rate);
    }
    s
}

/// STDP over the task's training stream with the train-stage seed.
pub fn train_on_task(model: &PrunedModel, inv: &Invocation) -> Result<TrainedModel> {
    check_snapshot(model, inv)?;
    let (rows, window) = training_stream(inv, inv.seed)?;
    let mut mc = inv.cfg.model.clone();
    mc.encoder.window = window;
    train_stdp(model, &inv.cfg.stdp_profile(), &rows, &mc, inv.stage_seed(stage::TRAIN))
}

/// `train`: STDP over the task's training stream, then fit the readout.
pub fn cmd_train(inv: &Invocation) -> Result<Outcome> {
    let started = now();
    let seed = inv.stage_seed(stage::TRAIN);
    let model = load_model(inv.snapshot()?)?;
    let trained = train_on_task(&model, inv)?;
    let readout = task_readout(&trained.model, inv, seed)?;
    let report = TrainReport {
        task: inv.task.as_str().to_string(),
        n_neurons: trained.model.graph.n_nodes(),
        n_synapses: trained.model.graph.n_edges(),
        duration_ms: trained.record.duration,
        total_spikes: trained.record.total_spikes(),
        mean_count: trained.record.mean_count(),
        mean_abs_weight_before: mean_abs_weight(&model.graph),
        mean_abs_weight_after: mean_abs_weight(&trained.model.graph),
        readout_inputs: readout.layer_sizes.first().copied().unwrap_or(0),
        readout_outputs: readout.layer_sizes.last().copied().unwrap_or(0),
    };
    let mut art = Artifacts::new(&inv.out)?;
    art.model("trained", &trained.model)?;
    art.write("train_spikes.csv", &spike_csv(&trained.record))?;
    art.json("readout.json", &readout)?;
    art.json("train.json", &report)?;
    let manifest = art.finish(inv, "train", started, &[("train", seed)])?;
    Ok(Outcome {
        summary: format!(
            "trained on {} ms of {}: {} spikes, mean |w| {:.4} -> {:.4}",
            report.duration_ms, report.task, report.total_spikes, report.mean_abs_weight_before, report.mean_abs_weight_after
        ),
        manifest,
    })
}

/// The readout the task protocol fits on a model.
fn task_readout(model: &PrunedModel, inv: &Invocation, seed: u64) -> Result<ReadoutLayer> {
    let cfg = &inv.cfg;
    match cfg.data.chaotic(inv.task, derive(inv.seed, tags::SIGNAL)) {
        Some(cc) => Ok(forecast(model, &generate(&cc)?, &cfg.model, &cfg.data.forecast, seed)?.readout),
        None => {
            let data = make_classification_task(&cfg.data.classes, derive(inv.seed, tags::TASK))?;
            Ok(classify(model, &data, &cfg.model, &cfg.data.classify, seed)?.readout)
        }
    }
}

/// Result of the configured pruning method.
#[derive(Debug, Clone, PartialEq)]
pub enum PruneOutcome {
    Lnp(LnpRun),
    Activity(PrunedModel, Vec<ActivityRecord>),
}

impl PruneOutcome {
    pub fn into_model(self, original: &PrunedModel) -> PrunedModel {
        match self {
            PruneOutcome::Lnp(run) => run.final_model(original).clone(),
            PruneOutcome::Activity(m, _) => m,
        }
    }
}

/// Prune with the configured method and the prune-stage seed.
pub fn prune_model(model: &PrunedModel, inv: &Invocation) -> Result<PruneOutcome> {
    check_snapshot(model, inv)?;
    let cfg = &inv.cfg;
    let seed = inv.stage_seed(stage::PRUNE);
    match cfg.lnp.mode {
        PruneMode::Lnp => Ok(PruneOutcome::Lnp(run_lnp(model, &cfg.neuron_profile(), cfg.topology.w_scale, &cfg.lnp.prune, seed)?)),
        PruneMode::Activity => {
            let n_samples = cfg.bo.capacity_samples;
            let (m, log) =
                run_activity_pruning(model, &cfg.lnp.activity, |m| noise_rates(m, &cfg.model, n_samples, derive(seed, tags::SIGNAL)))?;
            Ok(PruneOutcome::Activity(m, log))
        }
    }
}

/// `prune`: LNP (or the activity comparator) with per-iteration snapshots.
pub fn cmd_prune(inv: &Invocation) -> Result<Outcome> {
    let started = now();
    let seed = inv.stage_seed(stage::PRUNE);
    let model = load_model(inv.snapshot()?)?;
    let mut art = Artifacts::new(&inv.out)?;
    let final_model = match prune_model(&model, inv)? {
        PruneOutcome::Lnp(run) => {
            for (k, m) in run.models.iter().enumerate() {
                art.model(&format!("pruned_iter{:02}", k + 1), m)?;
            }
            art.write("lnp_log.jsonl", &log_to_jsonl(&run.log)?)?;
            run.final_model(&model).clone()
        }
        PruneOutcome::Activity(m, log) => {
            art.write("activity_log.jsonl", &activity_jsonl(&log)?)?;
            m
        }
    };
    art.model("pruned", &final_model)?;
    let summary = summarize(&final_model)?;
    art.json("prune.json", &summary)?;
    let manifest = art.finish(inv, "prune", started, &[("prune", seed)])?;
    Ok(Outcome {
        summary: format!(
            "pruned {} -> {} neurons, {} -> {} synapses",
            model.graph.n_nodes(),
            summary.n_neurons,
            model.graph.n_edges(),
            summary.n_synapses
        ),
        manifest,
    })
}

fn activity_jsonl(log: &[ActivityRecord]) -> Result<String> {
    let mut s = String::new();
    for r in log {
        s.push_str(&serde_json::to_string(r)?);
        s.push('\n');
    }
    Ok(s)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpikeSummary {
    pub mean_count: f64,
    pub avg_activation: f64,
    pub window_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EnergySummary {
    pub total_sops: u64,
    pub energy: f64,
    pub sop_ratio_vs_reference: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ForecastSummary {
    pub closed_loop: bool,
    pub horizon: usize,
    pub nrmse_mean: f64,
    pub nrmse_final: f64,
    pub vpt: usize,
    pub vpt_epsilon: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassSummary {
    pub n_classes: usize,
    pub n_test: usize,
    pub accuracy: f64,
    pub confusion: Vec<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExtendedSummary {
    pub memory_capacity: f64,
    pub capacity_mean_count: f64,
    pub efficiency: Option<f64>,
    pub effective_rank: usize,
    pub rank_stimuli: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvaluateReport {
    pub task: String,
    pub n_neurons: usize,
    pub n_synapses: usize,
    pub forecast: Option<ForecastSummary>,
    pub classification: Option<ClassSummary>,
    pub spikes: SpikeSummary,
    pub energy: EnergySummary,
    pub extended: Option<ExtendedSummary>,
}

fn spike_summary(stats: &SpikeStats) -> SpikeSummary {
    SpikeSummary { mean_count: stats.mean_count, avg_activation: stats.avg_activation, window_ms: stats.window }
}

/// Evaluate a model on the invocation's task (no files written).
pub fn evaluate_model(model: &PrunedModel, inv: &Invocation, reference: Option<&PrunedModel>) -> Result<EvaluateReport> {
    let cfg = &inv.cfg;
    check_snapshot(model, inv)?;
    let seed = inv.stage_seed(stage::EVALUATE);
    let (forecast_summary, class_summary, record, mut stats) = match cfg.data.chaotic(inv.task, derive(inv.seed, tags::SIGNAL)) {
        Some(cc) => {
            let series = generate(&cc)?;
            let fc = &cfg.data.forecast;
            let r = forecast(model, &series, &cfg.model, fc, seed)?;
            let s = ForecastSummary {
                closed_loop: fc.closed_loop,
                horizon: r.rmse.len(),
                nrmse_mean: r.mean_nrmse,
                nrmse_final: *r.rmse.last().expect("non-empty horizon"),
                vpt: r.vpt,
                vpt_epsilon: fc.vpt_epsilon,
            };
            (Some(s), None, r.record, r.stats)
        }
        None => {
            let data = make_classification_task(&cfg.data.classes, derive(inv.seed, tags::TASK))?;
            let r = classify(model, &data, &cfg.model, &cfg.data.classify, seed)?;
            let s = ClassSummary {
                n_classes: data.templates.len(),
                n_test: r.labels.len(),
                accuracy: r.accuracy,
                confusion: r.confusion.clone(),
            };
            (None, Some(s), r.record, r.stats)
        }
    };
    if cfg.metrics.count_until_readout_spike {
        let readout = select_readout_neurons(&model.graph, cfg.model.readout_fraction)?;
        stats = SpikeStats::from_record(&record, &CountMode::UntilFirstReadoutSpike(readout))?;
    }
    let energy = match reference {
        Some(dense) => count_sops_vs_dense(&record, &model.graph, &dense.graph, cfg.metrics.energy_per_sop),
        None => count_sops(&record, &model.graph, cfg.metrics.energy_per_sop),
    };
    let extended = if inv.extended { Some(extended_metrics(model, inv, seed)?) } else { None };
    Ok(EvaluateReport {
        task: inv.task.as_str().to_string(),
        n_neurons: model.graph.n_nodes(),
        n_synapses: model.graph.n_edges(),
        forecast: forecast_summary,
        classification: class_summary,
        spikes: spike_summary(&stats),
        energy: EnergySummary { total_sops: energy.total_sops, energy: energy.energy, sop_ratio_vs_reference: energy.sop_ratio_vs_dense },
        extended,
    })
}

fn extended_metrics(model: &PrunedModel, inv: &Invocation, seed: u64) -> Result<ExtendedSummary> {
    let cfg = &inv.cfg;
    let cap = capacity_run(model, &cfg.model, cfg.metrics.capacity_samples, cfg.metrics.tau_max, seed)?;
    let spec = crate::datagen::SyntheticClassTask {
        n_classes: cfg.metrics.rank_stimuli,
        trials_per_class: 1,
        noise: 0.0,
        test_fraction: 0.0,
        ..cfg.data.classes.clone()
    };
    let stimuli = make_classification_task(&spec, derive(seed, tags::TASK))?.templates;
    let (states, _) = final_states(model, &stimuli, &model.graph.node_ids(), &cfg.model, &cfg.data.classify, seed)?;
    let rank = effective_rank(&states, cfg.metrics.rank_threshold).map(|r| r.effective_rank).unwrap_or(0);
    Ok(ExtendedSummary {
        memory_capacity: cap.capacity.total,
        capacity_mean_count: cap.stats.mean_count,
        efficiency: spike_efficiency(cap.capacity.total, &cap.stats).ok(),
        effective_rank: rank,
        rank_stimuli: stimuli.len(),
    })
}

/// `evaluate`: task metrics as `evaluate.json`.
pub fn cmd_evaluate(inv: &Invocation) -> Result<Outcome> {
    let started = now();
    let model = load_model(inv.snapshot()?)?;
    let reference = inv.reference.as_deref().map(load_model).transpose()?;
    let report = evaluate_model(&model, inv, reference.as_ref())?;
    let mut art = Artifacts::new(&inv.out)?;
    art.json("evaluate.json", &report)?;
    let manifest = art.finish(inv, "evaluate", started, &[("evaluate", inv.stage_seed(stage::EVALUATE))])?;
    let headline = match (&report.forecast, &report.classification) {
        (Some(f), _) => format!("NRMSE {:.4}, VPT {}", f.nrmse_mean, f.vpt),
        (_, Some(c)) => format!("accuracy {:.4}", c.accuracy),
        _ => String::new(),
    };
    Ok(Outcome {
        summary: format!("{}: {headline}, mean spikes {:.2}, SOPs {}", report.task, report.spikes.mean_count, report.energy.total_sops),
        manifest,
    })
}

/// Objective value of one BO point: build, STDP-train on white noise and
/// measure capacity and spikes.
pub fn bo_objective(point: &ParamDistributionSet, cfg: &ExperimentConfig, seed: u64) -> Result<f64> {
    let (het, stdp) = point.apply(&cfg.neurons, &cfg.plasticity.profile);
    let model = build_model(&cfg.topology, &het, seed)?;
    let train: Vec<Vec<f64>> = white_noise(cfg.plasticity.train_samples, derive(seed, tags::TASK)).into_iter().map(|x| vec![x]).collect();
    let trained = train_stdp(&model, &stdp, &train, &cfg.model, seed)?;
    let run = capacity_run(&trained.model, &cfg.model, cfg.bo.capacity_samples, cfg.metrics.tau_max, seed)?;
    match cfg.bo.objective {
        BoObjective::Capacity => Ok(run.capacity.total),
        BoObjective::SpikeCount => Ok(-run.stats.mean_count),
        BoObjective::Efficiency => spike_efficiency(run.capacity.total, &run.stats),
    }
}

fn marginal_header() -> String {
    crate::bayesopt::set::MARGINALS.iter().map(|m| format!("{m}_shape,{m}_scale")).collect::<Vec<_>>().join(",")
}

fn marginal_cells(p: &ParamDistributionSet) -> String {
    p.marginals()
        .iter()
        .map(|d| match d.as_gamma() {
            Some(g) => format!("{},{}", g.shape, g.scale),
            None => format!(",{}", d.mean()),
        })
        .collect::<Vec<_>>()
        .join(",")
}

fn opt(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoReport {
    pub objective: String,
    pub budget: usize,
    pub best_value: f64,
    pub n_failures: usize,
    pub best: ParamDistributionSet,
}

/// `bo`: search the six parameter laws.
pub fn cmd_bo(inv: &Invocation) -> Result<Outcome> {
    let started = now();
    let seed = inv.stage_seed(stage::BO);
    let cfg = &inv.cfg;
    let base = ParamDistributionSet::from_profiles(&cfg.neurons, &cfg.plasticity.profile);
    let space = SearchSpace::around(base, cfg.bo.shape, cfg.bo.scale_factor)?;
    let eval_seed = derive(seed, tags::TASK);
    let outcome = bo_loop(|p| bo_objective(p, cfg, eval_seed), &space, &cfg.bo.loop_cfg, seed)?;
    let mut csv = format!("iter,stage,value,best_so_far,acquisition,error,{}\n", marginal_header());
    for e in &outcome.trace {
        let err = e.error.as_deref().unwrap_or("").replace([',', '\n'], ";");
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{},{}",
            e.iter,
            serde_json::to_value(e.stage)?.as_str().unwrap_or(""),
            opt(e.value),
            opt(e.best_so_far),
            opt(e.acquisition),
            err,
            marginal_cells(&e.point)
        );
    }
    let report = BoReport {
        objective: cfg.bo.objective.as_str().to_string(),
        budget: cfg.bo.loop_cfg.budget,
        best_value: outcome.best_value,
        n_failures: outcome.n_failures,
        best: outcome.best,
    };
    let mut art = Artifacts::new(&inv.out)?;
    art.write("bo_trace.csv", &csv)?;
    art.json("bo_best.json", &report)?;
    let manifest = art.finish(inv, "bo", started, &[("bo", seed)])?;
    Ok(Outcome {
        summary: format!("bo ({}) best {:.6} after {} evaluations", report.objective, report.best_value, outcome.trace.len()),
        manifest,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_cfg() -> ExperimentConfig {
        ExperimentConfig::parse(
            "[experiment]\nseed = 3\n[topology]\nn_total = 40\n[lnp]\niterations = 2\ntimescale_budget = 5\n\
             [data]\ntrain_steps = 80\npredict_steps = 10\nreadout_washout = 10\nwashout = 50\ntrials_per_class = 6\n",
        )
        .unwrap()
    }

    #[test]
    fn snapshot_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let inv = Invocation::new(small_cfg(), None, Some(dir.path().to_path_buf()), None, None).unwrap();
        cmd_build(&inv).unwrap();
        let p = dir.path().join("graph.json");
        let m = load_model(&p).unwrap();
        let q = dir.path().join("copy.json");
        save_model(&q, &m).unwrap();
        assert_eq!(std::fs::read(&p).unwrap(), std::fs::read(&q).unwrap());
        assert_eq!(std::fs::read(params_path(&p)).unwrap(), std::fs::read(params_path(&q)).unwrap());
        let manifest: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("manifest.json")).unwrap()).unwrap();
        for f in manifest["artifacts"].as_array().unwrap() {
            assert!(dir.path().join(f.as_str().unwrap()).exists(), "{f}");
        }
    }

    #[test]
    fn missing_sidecar_is_io_error() {
        let dir = tempfile::tempdir().unwrap();
        let inv = Invocation::new(small_cfg(), None, Some(dir.path().to_path_buf()), None, None).unwrap();
        cmd_build(&inv).unwrap();
        std::fs::remove_file(dir.path().join("graph.params.json")).unwrap();
        assert_eq!(load_model(&dir.path().join("graph.json")).unwrap_err().exit_code(), 4);
    }

    #[test]
    fn seed_is_mandatory() {
        let cfg = ExperimentConfig::default();
        assert_eq!(Invocation::new(cfg.clone(), None, None, None, None).unwrap_err().exit_code(), 2);
        assert_eq!(Invocation::new(cfg, Some(9), None, None, None).unwrap().seed, 9);
    }

    #[test]
    fn spike_csv_sums_match_record() {
        let ids = [NeuronId(0), NeuronId(4)];
        let mut r = SpikeRecord::empty(&ids, 100.0);
        r.push(NeuronId(4), 1.0);
        r.push(NeuronId(4), 2.0);
        r.push(NeuronId(0), 3.0);
        let csv = spike_csv(&r);
        let total: usize = csv.lines().skip(1).map(|l| l.split(',').nth(1).unwrap().parse::<usize>().unwrap()).sum();
        assert_eq!(total, r.total_spikes());
        assert!(csv.starts_with("neuron,count,rate_hz\n"));
    }
}
