//! Analog signal to spike-train conversion and spike-train to feature
//! conversion.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::neuron::{InputSpikes, SpikeRecord};
use crate::rng::{stream, tags};
use crate::topology::NeuronId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncodeMode {
    /// Rate proportional to the sample value.
    PoissonRate,
    /// Rate proportional to the first difference, split into ON (rising) and
    /// OFF (falling) channels.
    TemporalDifference,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateEncoderConfig {
    /// Peak rate in Hz.
    pub max_rate: f64,
    pub n_encoders: usize,
    /// Duration each sample is presented, in ms.
    pub window: f64,
    pub mode: EncodeMode,
}

impl Default for RateEncoderConfig {
    fn default() -> Self {
        RateEncoderConfig { max_rate: 400.0, n_encoders: 20, window: 5.0, mode: EncodeMode::PoissonRate }
    }
}

impl RateEncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.max_rate > 0.0 && self.max_rate.is_finite()) {
            return Err(Error::config("encoder max_rate must be positive"));
        }
        if self.n_encoders == 0 {
            return Err(Error::config("encoder count must be positive"));
        }
        if !(self.window > 0.0) {
            return Err(Error::config("encoder window must be positive"));
        }
        Ok(())
    }

    pub fn steps_per_sample(&self, dt: f64) -> usize {
        ((self.window / dt).round() as usize).max(1)
    }
}

/// First differences of each channel mapped to ON/OFF channels in `[0, 1]`:
/// output channel `2c` carries `max(d, 0)` and `2c + 1` carries `max(-d, 0)`.
/// The first sample has zero difference.
pub fn temporal_difference(signal: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut out = Vec::with_capacity(signal.len());
    for (t, row) in signal.iter().enumerate() {
        let mut r = Vec::with_capacity(2 * row.len());
        for (c, &x) in row.iter().enumerate() {
            let d = if t == 0 { 0.0 } else { x - signal[t - 1][c] };
            r.push(d.max(0.0));
            r.push((-d).max(0.0));
        }
        out.push(r);
    }
    out
}

/// Encode a multichannel signal (rows = samples, values in `[0, 1]`) into
/// Bernoulli spike trains with per-step probability `value * max_rate * dt`.
/// Encoder `e` carries channel `e mod channels`. Each sample is held for
/// `window` ms.
pub fn rate_encode(signal: &[Vec<f64>], config: &RateEncoderConfig, dt: f64, seed: u64) -> Result<InputSpikes> {
    config.validate()?;
    if !(dt > 0.0) {
        return Err(Error::config("dt must be positive"));
    }
    let diffed;
    let rows: &[Vec<f64>] = match config.mode {
        EncodeMode::PoissonRate => signal,
        EncodeMode::TemporalDifference => {
            diffed = temporal_difference(signal);
            &diffed
        }
    };
    for (t, row) in rows.iter().enumerate() {
        if row.is_empty() {
            return Err(Error::input(format!("sample {t} has no channels")));
        }
        if let Some(x) = row.iter().find(|x| !(0.0..=1.0).contains(*x)) {
            return Err(Error::input(format!("sample {t} value {x} outside [0, 1]")));
        }
    }
    let per_sample = config.steps_per_sample(dt);
    let mut rng = stream(seed, tags::ENCODER);
    let mut steps = Vec::with_capacity(rows.len() * per_sample);
    let scale = config.max_rate * dt / 1000.0;
    for row in rows {
        let probs: Vec<f64> = (0..config.n_encoders).map(|e| (row[e % row.len()] * scale).min(1.0)).collect();
        for _ in 0..per_sample {
            let mut fired = Vec::new();
            for (e, &p) in probs.iter().enumerate() {
                // Always draw so the stream position does not depend on the values.
                let u: f64 = rng.random();
                if u < p {
                    fired.push(e as u32);
                }
            }
            steps.push(fired);
        }
    }
    Ok(InputSpikes { n_encoders: config.n_encoders, steps })
}

/// Filtered spike activity sampled at timestamps.
#[derive(Debug, Clone, PartialEq)]
pub struct StateFeatures {
    /// `timestamps.len() x neurons.len()`.
    pub matrix: DMatrix<f64>,
    pub neurons: Vec<NeuronId>,
    pub timestamps: Vec<f64>,
    pub filter_tau: f64,
}

/// `x_i(t) = sum over spikes s of neuron i with t_s <= t of exp(-(t - t_s) / tau)`.
pub fn extract_features(record: &SpikeRecord, sampled: &[NeuronId], filter_tau: f64, timestamps: &[f64]) -> Result<StateFeatures> {
    if !(filter_tau > 0.0) {
        return Err(Error::config("filter_tau must be positive"));
    }
    let known: std::collections::BTreeSet<NeuronId> = record.ids.iter().copied().collect();
    if let Some(id) = sampled.iter().find(|id| !known.contains(id)) {
        return Err(Error::input(format!("neuron {id} is not in the spike record")));
    }
    let tol = 1e-9 * record.duration.max(1.0);
    if let Some(t) = timestamps.iter().find(|&&t| !(t >= -tol && t <= record.duration + tol)) {
        return Err(Error::input(format!("timestamp {t} outside [0, {}]", record.duration)));
    }
    let col: BTreeMap<NeuronId, usize> = sampled.iter().enumerate().map(|(k, &id)| (id, k)).collect();
    let mut trains: Vec<Vec<f64>> = vec![Vec::new(); sampled.len()];
    for &(id, t) in &record.spikes {
        if let Some(&k) = col.get(&id) {
            trains[k].push(t);
        }
    }
    let mut order: Vec<usize> = (0..timestamps.len()).collect();
    order.sort_by(|&a, &b| timestamps[a].total_cmp(&timestamps[b]));
    let mut matrix = DMatrix::zeros(timestamps.len(), sampled.len());
    for (k, train) in trains.iter_mut().enumerate() {
        train.sort_by(f64::total_cmp);
        let mut value = 0.0;
        let mut t_last = f64::NEG_INFINITY;
        let mut next = 0;
        for &r in &order {
            let t = timestamps[r];
            // Fold spikes up to t into the running value.
            while next < train.len() && train[next] <= t {
                let ts = train[next];
                value = if t_last.is_finite() { value * (-(ts - t_last) / filter_tau).exp() } else { 0.0 } + 1.0;
                t_last = ts;
                next += 1;
            }
            matrix[(r, k)] = if t_last.is_finite() { value * (-(t - t_last) / filter_tau).exp() } else { 0.0 };
        }
    }
    Ok(StateFeatures { matrix, neurons: sampled.to_vec(), timestamps: timestamps.to_vec(), filter_tau })
}
