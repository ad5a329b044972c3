//! End-to-end reservoir protocols: STDP training on an input stream,
//! memory capacity on white noise, chaotic-series forecasting, synthetic
//! classification, final-state separation and firing rates.
//!
//! A model is a [`PrunedModel`] (graph plus per-neuron parameters). Every
//! protocol simulates the model from a freshly initialized state, so the
//! result depends only on the model, the protocol settings and the seed.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::datagen::{normalize_series, ClassificationData, Normalized, TimeSeries, UnitScaler};
use crate::encode::{extract_features, rate_encode, RateEncoderConfig};
use crate::error::{Error, Result};
use crate::lnp::PrunedModel;
use crate::metrics::{memory_capacity, nrmse, spike_efficiency, vpt, CountMode, MemoryCapacityReport, SpikeStats};
use crate::neuron::{firing_rates, run, sample_params, HeterogeneityProfile, InputSpikes, Network, NetworkState, SimConfig, SpikeRecord};
use crate::plasticity::{sample_stdp_params, Stdp, StdpProfile};
use crate::readout::{fit_classifier, fit_matrix_readout, select_readout_neurons, ReadoutLayer};
use crate::rng::{derive, stream, tags};
use crate::topology::{build_recurrent_graph, NeuronId, TopologyConfig};

/// Settings shared by every protocol.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub sim: SimConfig,
    pub encoder: RateEncoderConfig,
    /// Exponential filter time constant of the readout features (ms).
    pub filter_tau: f64,
    /// Fraction of neurons (highest betweenness first) feeding the readout.
    pub readout_fraction: f64,
    pub regularization: f64,
    /// Whether STDP also adapts the input synapses.
    pub plastic_inputs: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            sim: SimConfig::default(),
            encoder: RateEncoderConfig::default(),
            filter_tau: 20.0,
            readout_fraction: 0.1,
            regularization: 1e-3,
            plastic_inputs: true,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        if !(self.filter_tau > 0.0) {
            return Err(Error::config("readout.filter_tau must be positive"));
        }
        if !(self.readout_fraction > 0.0 && self.readout_fraction <= 1.0) {
            return Err(Error::config("readout.fraction must lie in (0, 1]"));
        }
        if !(self.regularization >= 0.0) {
            return Err(Error::config("readout.regularization must be non-negative"));
        }
        Ok(())
    }
}

/// Build a graph and draw neuron parameters from `profile`.
pub fn build_model(topology: &TopologyConfig, profile: &HeterogeneityProfile, seed: u64) -> Result<PrunedModel> {
    let graph = build_recurrent_graph(topology, seed)?;
    let params = sample_params(profile, &graph, seed)?;
    Ok(PrunedModel { graph, params })
}

/// `n` i.i.d. samples uniform in `[0, 1]`.
pub fn white_noise(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = stream(seed, tags::SIGNAL);
    (0..n).map(|_| rng.random::<f64>()).collect()
}

/// End time of each sample window.
pub fn sample_timestamps(n_samples: usize, encoder: &RateEncoderConfig, dt: f64) -> Vec<f64> {
    let per = encoder.steps_per_sample(dt) as f64 * dt;
    (1..=n_samples).map(|k| k as f64 * per).collect()
}

/// Outcome of STDP training.
#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub model: PrunedModel,
    pub record: SpikeRecord,
}

/// Run the model on `signal` with STDP active and return the model carrying
/// the learned weights.
pub fn train_stdp(model: &PrunedModel, stdp: &StdpProfile, signal: &[Vec<f64>], cfg: &ModelConfig, seed: u64) -> Result<TrainedModel> {
    cfg.validate()?;
    let input = rate_encode(signal, &cfg.encoder, cfg.sim.dt, derive(seed, tags::ENCODER))?;
    let syn_params = sample_stdp_params(stdp, &model.graph, seed)?;
    let mut net = Network::new(&model.graph, &model.params)?;
    let mut plasticity = Stdp::new(&net, &syn_params, cfg.sim.dt, cfg.plastic_inputs)?;
    let mut state = NetworkState::initial(&net, cfg.sim.init, derive(seed, tags::INITIAL_STATE));
    let record = run(&mut net, &mut state, &input, None, &cfg.sim, Some(&mut plasticity))?;
    let graph = net.write_weights(&model.graph)?;
    Ok(TrainedModel { model: PrunedModel { graph, params: model.params.clone() }, record })
}

/// Simulate the frozen model on an encoded signal from a fresh state.
pub fn drive(model: &PrunedModel, input: &InputSpikes, cfg: &ModelConfig, seed: u64) -> Result<SpikeRecord> {
    let mut net = Network::new(&model.graph, &model.params)?;
    let mut state = NetworkState::initial(&net, cfg.sim.init, derive(seed, tags::INITIAL_STATE));
    run(&mut net, &mut state, input, None, &cfg.sim, None)
}

/// Encode `signal` and simulate; returns the record and the sample-end
/// timestamps.
pub fn drive_signal(model: &PrunedModel, signal: &[Vec<f64>], cfg: &ModelConfig, seed: u64) -> Result<(SpikeRecord, Vec<f64>)> {
    cfg.validate()?;
    let input = rate_encode(signal, &cfg.encoder, cfg.sim.dt, derive(seed, tags::ENCODER))?;
    let record = drive(model, &input, cfg, seed)?;
    Ok((record, sample_timestamps(signal.len(), &cfg.encoder, cfg.sim.dt)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CapacityRun {
    pub capacity: MemoryCapacityReport,
    pub stats: SpikeStats,
    /// `None` when the network stayed silent.
    pub efficiency: Option<f64>,
    pub readout_neurons: Vec<NeuronId>,
}

/// Memory capacity on `n_samples` of white noise (one channel fed to every
/// encoder), with spike statistics of the same run.
pub fn capacity_run(model: &PrunedModel, cfg: &ModelConfig, n_samples: usize, tau_max: usize, seed: u64) -> Result<CapacityRun> {
    let noise = white_noise(n_samples, seed);
    let signal: Vec<Vec<f64>> = noise.iter().map(|&x| vec![x]).collect();
    let (record, stamps) = drive_signal(model, &signal, cfg, seed)?;
    let neurons = select_readout_neurons(&model.graph, cfg.readout_fraction)?;
    let features = extract_features(&record, &neurons, cfg.filter_tau, &stamps)?;
    let capacity = memory_capacity(&features.matrix, &noise, tau_max, cfg.regularization)?;
    let stats = SpikeStats::from_record(&record, &CountMode::FullWindow)?;
    let efficiency = spike_efficiency(capacity.total, &stats).ok();
    Ok(CapacityRun { capacity, stats, efficiency, readout_neurons: neurons })
}

/// Per-neuron firing rates (Hz) under `n_samples` of white-noise drive.
pub fn noise_rates(model: &PrunedModel, cfg: &ModelConfig, n_samples: usize, seed: u64) -> Result<BTreeMap<NeuronId, f64>> {
    let signal: Vec<Vec<f64>> = white_noise(n_samples, seed).into_iter().map(|x| vec![x]).collect();
    let (record, _) = drive_signal(model, &signal, cfg, seed)?;
    firing_rates(&record, record.duration)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForecastConfig {
    /// Samples used to fit the readout.
    pub train_steps: usize,
    /// Samples forecast after the training window.
    pub predict_steps: usize,
    /// Leading training samples excluded from the readout fit.
    pub washout: usize,
    /// Feed predictions back as input (otherwise the true series is fed).
    pub closed_loop: bool,
    /// Relative margin of the `[0, 1]` input scaling.
    pub scaler_margin: f64,
    pub vpt_epsilon: f64,
}

impl Default for ForecastConfig {
    fn default() -> Self {
        ForecastConfig {
            train_steps: 500,
            predict_steps: 100,
            washout: 50,
            closed_loop: true,
            scaler_margin: 0.1,
            vpt_epsilon: crate::metrics::DEFAULT_VPT_EPSILON,
        }
    }
}

impl ForecastConfig {
    pub fn validate(&self) -> Result<()> {
        if self.predict_steps == 0 {
            return Err(Error::config("forecast predict_steps must be positive"));
        }
        if self.washout + 2 > self.train_steps {
            return Err(Error::config("forecast train_steps must exceed washout by at least 2"));
        }
        if !(self.scaler_margin >= 0.0) || !(self.vpt_epsilon > 0.0) {
            return Err(Error::config("forecast scaler_margin must be >= 0 and vpt_epsilon > 0"));
        }
        Ok(())
    }

    pub fn series_len(&self) -> usize {
        self.train_steps + self.predict_steps + 1
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForecastRun {
    /// `RMSE(t)` of the normalized forecast for each predicted step.
    pub rmse: Vec<f64>,
    pub mean_nrmse: f64,
    pub vpt: usize,
    /// Forecast in the original units.
    pub forecast: Vec<Vec<f64>>,
    pub truth: Vec<Vec<f64>>,
    pub stats: SpikeStats,
    pub readout: ReadoutLayer,
    /// Spikes of the whole run (training window and forecast).
    pub record: SpikeRecord,
}

/// Streaming feature state: the exponential filter of each sampled neuron,
/// advanced by re-running the simulator one sample window at a time.
struct Stream<'a> {
    net: Network,
    state: NetworkState,
    cfg: &'a ModelConfig,
    cols: BTreeMap<NeuronId, usize>,
    filt: Vec<f64>,
    decay: f64,
    record: SpikeRecord,
    offset: f64,
}

impl<'a> Stream<'a> {
    fn new(model: &PrunedModel, neurons: &[NeuronId], cfg: &'a ModelConfig, seed: u64) -> Result<Self> {
        let net = Network::new(&model.graph, &model.params)?;
        let state = NetworkState::initial(&net, cfg.sim.init, derive(seed, tags::INITIAL_STATE));
        let record = SpikeRecord::empty(&net.ids, 0.0);
        Ok(Stream {
            cols: neurons.iter().enumerate().map(|(k, &id)| (id, k)).collect(),
            filt: vec![0.0; neurons.len()],
            decay: (-cfg.sim.dt / cfg.filter_tau).exp(),
            net,
            state,
            cfg,
            record,
            offset: 0.0,
        })
    }

    /// Present one sample (encoded with its own seed) and return the filtered
    /// features at the end of its window.
    fn present(&mut self, row: &[f64], seed: u64) -> Result<Vec<f64>> {
        let input = rate_encode(&[row.to_vec()], &self.cfg.encoder, self.cfg.sim.dt, seed)?;
        let chunk = run(&mut self.net, &mut self.state, &input, None, &self.cfg.sim, None)?;
        // Spikes are stamped at step ends, so they land on the step grid.
        let dt = self.cfg.sim.dt;
        let mut by_step: BTreeMap<usize, Vec<NeuronId>> = BTreeMap::new();
        for &(id, t) in &chunk.spikes {
            by_step.entry((t / dt).round() as usize).or_default().push(id);
            self.record.push(id, self.offset + t);
        }
        for k in 1..=input.steps.len() {
            for f in self.filt.iter_mut() {
                *f *= self.decay;
            }
            if let Some(ids) = by_step.get(&k) {
                for id in ids {
                    if let Some(&c) = self.cols.get(id) {
                        self.filt[c] += 1.0;
                    }
                }
            }
        }
        self.offset += chunk.duration;
        self.record.duration = self.offset;
        Ok(self.filt.clone())
    }
}

/// Normalization (fitted on the training window) and the `[0, 1]` input
/// scaling of the normalized series.
fn forecast_scaling(series: &TimeSeries, fc: &ForecastConfig) -> Result<(Normalized, UnitScaler)> {
    if series.len() < fc.series_len() {
        return Err(Error::input(format!("series has {} samples, forecasting needs {}", series.len(), fc.series_len())));
    }
    let train = &series.data[..=fc.train_steps];
    let norm = normalize_series(train)?;
    let scaler = UnitScaler::fit(&standardized(&norm), fc.scaler_margin)?;
    Ok((norm, scaler))
}

/// Mean-removed rows divided by the per-dimension deviation.
fn standardized(norm: &Normalized) -> Vec<Vec<f64>> {
    norm.data.iter().map(|r| r.iter().zip(&norm.sigma).map(|(x, s)| x / s).collect()).collect()
}

/// The training window of a forecasting task as encoder input in `[0, 1]`.
pub fn forecast_training_input(series: &TimeSeries, fc: &ForecastConfig) -> Result<Vec<Vec<f64>>> {
    fc.validate()?;
    let (norm, scaler) = forecast_scaling(series, fc)?;
    Ok(scaler.transform(&standardized(&norm)[..fc.train_steps]))
}

/// Forecast a multivariate series one step ahead: the readout maps the state
/// after sample `t` to sample `t + 1`. After `train_steps` samples the model
/// runs `predict_steps` further steps, fed either its own output (closed
/// loop) or the true series (teacher forcing).
pub fn forecast(model: &PrunedModel, series: &TimeSeries, cfg: &ModelConfig, fc: &ForecastConfig, seed: u64) -> Result<ForecastRun> {
    cfg.validate()?;
    fc.validate()?;
    if series.len() < fc.series_len() {
        return Err(Error::input(format!("series has {} samples, forecasting needs {}", series.len(), fc.series_len())));
    }
    let data = &series.data[..fc.series_len()];
    let (norm, scaler) = forecast_scaling(series, fc)?;
    let to_norm = |r: &[f64]| -> Vec<f64> { r.iter().enumerate().map(|(i, x)| (x - norm.mean[i]) / norm.sigma[i]).collect() };
    let encode_row = |r: &[f64]| scaler.transform(&[r.to_vec()]).remove(0);

    let neurons = select_readout_neurons(&model.graph, cfg.readout_fraction)?;
    let mut stream_state = Stream::new(model, &neurons, cfg, seed)?;
    let enc_seed = |k: usize| derive(derive(seed, tags::ENCODER), k as u64);

    let mut feats = Vec::with_capacity(fc.train_steps);
    for (k, row) in data[..fc.train_steps].iter().enumerate() {
        feats.push(stream_state.present(&encode_row(&to_norm(row)), enc_seed(k))?);
    }
    let rows = fc.train_steps - fc.washout;
    let x = DMatrix::from_fn(rows, neurons.len(), |r, c| feats[fc.washout + r][c]);
    let dims = norm.sigma.len();
    let y = DMatrix::from_fn(rows, dims, |r, c| to_norm(&data[fc.washout + r + 1])[c]);
    let readout = fit_matrix_readout(&x, &neurons, &y, cfg.regularization)?;

    let mut state_row = feats.last().cloned().unwrap_or_default();
    let mut forecast_norm = Vec::with_capacity(fc.predict_steps);
    for k in 0..fc.predict_steps {
        let pred = readout.predict_row(&state_row);
        if pred.iter().any(|v| !v.is_finite()) {
            return Err(Error::numeric(format!("forecast diverged at step {}", k + 1)));
        }
        forecast_norm.push(pred.clone());
        if k + 1 == fc.predict_steps {
            break;
        }
        let fed = if fc.closed_loop { pred } else { to_norm(&data[fc.train_steps + k + 1]) };
        state_row = stream_state.present(&encode_row(&fed), enc_seed(fc.train_steps + k))?;
    }
    let truth_norm: Vec<Vec<f64>> = data[fc.train_steps + 1..].iter().map(|r| to_norm(r)).collect();
    let unit = vec![1.0; dims];
    let rmse = nrmse(&forecast_norm, &truth_norm, &unit)?;
    let mean_nrmse = rmse.iter().sum::<f64>() / rmse.len() as f64;
    let valid = vpt(&rmse, fc.vpt_epsilon)?;
    let forecast: Vec<Vec<f64>> =
        forecast_norm.iter().map(|r| r.iter().enumerate().map(|(i, v)| v * norm.sigma[i] + norm.mean[i]).collect()).collect();
    let stats = SpikeStats::from_record(&stream_state.record, &CountMode::FullWindow)?;
    Ok(ForecastRun {
        rmse,
        mean_nrmse,
        vpt: valid,
        forecast,
        truth: data[fc.train_steps + 1..].to_vec(),
        stats,
        readout,
        record: stream_state.record,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassifyConfig {
    /// Stimulus presentation time (ms).
    pub stimulus_ms: f64,
    /// Empty input after each stimulus (ms).
    pub gap_ms: f64,
    pub hidden_units: Option<usize>,
}

impl Default for ClassifyConfig {
    fn default() -> Self {
        ClassifyConfig { stimulus_ms: 100.0, gap_ms: 100.0, hidden_units: None }
    }
}

impl ClassifyConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.stimulus_ms > 0.0 && self.gap_ms >= 0.0) {
            return Err(Error::config("classification stimulus_ms must be > 0 and gap_ms >= 0"));
        }
        if self.hidden_units == Some(0) {
            return Err(Error::config("classification hidden_units must be positive"));
        }
        Ok(())
    }
}

/// Present each pattern for `stimulus_ms` followed by `gap_ms` of silence,
/// all in one continuous run, and return the feature vector of `neurons` at
/// the end of each stimulus (rows follow `patterns`) plus the record.
pub fn final_states(
    model: &PrunedModel,
    patterns: &[Vec<f64>],
    neurons: &[NeuronId],
    cfg: &ModelConfig,
    cc: &ClassifyConfig,
    seed: u64,
) -> Result<(DMatrix<f64>, SpikeRecord)> {
    cfg.validate()?;
    cc.validate()?;
    if patterns.is_empty() {
        return Err(Error::input("no stimuli to present"));
    }
    let channels = patterns[0].len();
    let dt = cfg.sim.dt;
    let stim_steps = ((cc.stimulus_ms / dt).round() as usize).max(1);
    let gap_steps = (cc.gap_ms / dt).round() as usize;
    let encoder = RateEncoderConfig { window: cc.stimulus_ms, ..cfg.encoder };
    // Each stimulus is a held sample followed by a zero sample, so the
    // temporal-difference mode sees an onset and an offset.
    let mut rows = Vec::with_capacity(2 * patterns.len());
    for p in patterns {
        if p.len() != channels {
            return Err(Error::input("stimuli have different channel counts"));
        }
        rows.push(p.clone());
        rows.push(vec![0.0; channels]);
    }
    let encoded = rate_encode(&rows, &encoder, dt, derive(seed, tags::ENCODER))?;
    let mut input = InputSpikes { n_encoders: encoded.n_encoders, steps: Vec::new() };
    for k in 0..patterns.len() {
        let on = &encoded.steps[2 * k * stim_steps..(2 * k + 1) * stim_steps];
        input.steps.extend(on.iter().cloned());
        let off = &encoded.steps[(2 * k + 1) * stim_steps..(2 * k + 2) * stim_steps];
        input.steps.extend(off.iter().take(gap_steps).cloned());
        input.steps.extend(std::iter::repeat_n(Vec::new(), gap_steps.saturating_sub(stim_steps)));
    }
    let record = drive(model, &input, cfg, seed)?;
    let period = (stim_steps + gap_steps) as f64 * dt;
    let stamps: Vec<f64> = (0..patterns.len()).map(|k| k as f64 * period + stim_steps as f64 * dt).collect();
    let features = extract_features(&record, neurons, cfg.filter_tau, &stamps)?;
    Ok((features.matrix, record))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassifyRun {
    pub accuracy: f64,
    /// `confusion[true][predicted]` over the test trials.
    pub confusion: Vec<Vec<usize>>,
    pub predictions: Vec<usize>,
    pub labels: Vec<usize>,
    pub stats: SpikeStats,
    pub readout: ReadoutLayer,
    pub record: SpikeRecord,
}

/// Fit the classifier on the training trials and score the test trials.
pub fn classify(model: &PrunedModel, data: &ClassificationData, cfg: &ModelConfig, cc: &ClassifyConfig, seed: u64) -> Result<ClassifyRun> {
    if data.train.is_empty() || data.test.is_empty() {
        return Err(Error::input("classification needs train and test trials"));
    }
    let n_classes = data.templates.len();
    let neurons = select_readout_neurons(&model.graph, cfg.readout_fraction)?;
    let patterns: Vec<Vec<f64>> = data.train.iter().chain(&data.test).map(|t| t.pattern.clone()).collect();
    let (states, record) = final_states(model, &patterns, &neurons, cfg, cc, seed)?;
    let n_train = data.train.len();
    let x_train = states.rows(0, n_train).into_owned();
    let x_test = states.rows(n_train, data.test.len()).into_owned();
    let train_labels: Vec<usize> = data.train.iter().map(|t| t.label).collect();
    let readout =
        fit_classifier(&x_train, &neurons, &train_labels, n_classes, cfg.regularization, cc.hidden_units, derive(seed, tags::READOUT))?;
    let predictions = readout.classify(&x_test);
    let labels: Vec<usize> = data.test.iter().map(|t| t.label).collect();
    let mut confusion = vec![vec![0usize; n_classes]; n_classes];
    for (&t, &p) in labels.iter().zip(&predictions) {
        confusion[t][p] += 1;
    }
    let correct = labels.iter().zip(&predictions).filter(|(a, b)| a == b).count();
    let stats = SpikeStats::from_record(&record, &CountMode::FullWindow)?;
    Ok(ClassifyRun { accuracy: correct as f64 / labels.len() as f64, confusion, predictions, labels, stats, readout, record })
}
