//! Efficiency and accuracy metrics: memory capacity, spike statistics and
//! spike efficiency, effective-rank separation, heterogeneity score, synaptic
//! operation counts, NRMSE and valid prediction time.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::neuron::SpikeRecord;
use crate::topology::{NetworkGraph, NeuronId};

pub const DEFAULT_TAU_MAX: usize = 100;
pub const DEFAULT_VPT_EPSILON: f64 = 0.1;
pub const DEFAULT_RANK_THRESHOLD: f64 = 0.99;
/// Fraction of rows used to fit capacity readouts; the rest is held out.
pub const CAPACITY_TRAIN_FRACTION: f64 = 0.7;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemoryCapacityReport {
    /// `per_delay[k]` is `C(k + 1)`.
    pub per_delay: Vec<f64>,
    pub total: f64,
    pub tau_max: usize,
}

/// Memory capacity from features aligned with the input: row `t` of
/// `features` is the reservoir state after sample `input[t]` was presented.
///
/// For every delay `tau` a ridge readout (with intercept) reconstructs
/// `input[t - tau]` from row `t`; rows `t >= tau_max` are used for every
/// delay, the first 70% fit the readouts and `C(tau)` is the squared
/// correlation on the remaining 30%.
pub fn memory_capacity(features: &DMatrix<f64>, input: &[f64], tau_max: usize, regularization: f64) -> Result<MemoryCapacityReport> {
    let t_len = input.len();
    if features.nrows() != t_len {
        return Err(Error::input(format!("features have {} rows but the input has {t_len} samples", features.nrows())));
    }
    if tau_max == 0 {
        return Err(Error::config("tau_max must be at least 1"));
    }
    let n = features.ncols();
    if t_len < tau_max || t_len - tau_max < 10 * n.max(1) {
        return Err(Error::input(format!(
            "input of length {t_len} too short for tau_max = {tau_max} with {n} readout neurons (need {} samples)",
            tau_max + 10 * n.max(1)
        )));
    }
    let mean = input.iter().sum::<f64>() / t_len as f64;
    if input.iter().all(|&x| (x - mean).abs() <= 1e-15 * mean.abs().max(1.0)) {
        return Err(Error::input("memory capacity of a constant signal is undefined"));
    }
    let rows = t_len - tau_max;
    let n_train = ((rows as f64) * CAPACITY_TRAIN_FRACTION).round() as usize;
    if n_train < 2 || rows - n_train < 2 {
        return Err(Error::input("not enough rows for the train/test split"));
    }
    let x = features.rows(tau_max, rows).into_owned();
    let y = DMatrix::from_fn(rows, tau_max, |r, k| input[tau_max + r - (k + 1)]);
    let x_train = x.rows(0, n_train).into_owned();
    let y_train = y.rows(0, n_train).into_owned();
    let readout = crate::readout::fit_matrix_readout(&x_train, &[], &y_train, regularization)?;
    let x_test = x.rows(n_train, rows - n_train).into_owned();
    let pred = readout.predict(&x_test);
    let mut per_delay = Vec::with_capacity(tau_max);
    for k in 0..tau_max {
        let truth: Vec<f64> = y.column(k).rows(n_train, rows - n_train).iter().copied().collect();
        let guess: Vec<f64> = pred.column(k).iter().copied().collect();
        per_delay.push(squared_correlation(&truth, &guess));
    }
    let total = per_delay.iter().sum();
    Ok(MemoryCapacityReport { per_delay, total, tau_max })
}

/// `Cov(a, b)^2 / (Var(a) Var(b))`, 0 when either side is constant, clamped
/// to `[0, 1]`.
pub fn squared_correlation(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa <= 0.0 || sbb <= 0.0 {
        return 0.0;
    }
    (sab * sab / (saa * sbb)).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum CountMode {
    /// Count every spike in the window.
    FullWindow,
    /// Count spikes up to and including the first spike of any of the given
    /// readout neurons.
    UntilFirstReadoutSpike(Vec<NeuronId>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpikeStats {
    pub per_neuron: BTreeMap<NeuronId, usize>,
    /// Mean of the per-neuron counts.
    pub mean_count: f64,
    /// Average neuronal activation: total spikes over the full window per neuron.
    pub avg_activation: f64,
    pub window: f64,
}

impl SpikeStats {
    pub fn from_record(record: &SpikeRecord, mode: &CountMode) -> Result<SpikeStats> {
        let cutoff = match mode {
            CountMode::FullWindow => f64::INFINITY,
            CountMode::UntilFirstReadoutSpike(readout) => {
                let set: std::collections::BTreeSet<_> = readout.iter().collect();
                record
                    .spikes
                    .iter()
                    .filter(|(id, _)| set.contains(id))
                    .map(|&(_, t)| t)
                    .fold(None, |m: Option<f64>, t| Some(m.map_or(t, |m| m.min(t))))
                    .ok_or_else(|| Error::numeric("no readout neuron spiked; first-spike count undefined"))?
            }
        };
        let mut per_neuron: BTreeMap<NeuronId, usize> = record.ids.iter().map(|&i| (i, 0)).collect();
        for &(id, t) in &record.spikes {
            if t <= cutoff {
                *per_neuron.entry(id).or_insert(0) += 1;
            }
        }
        let n = per_neuron.len().max(1) as f64;
        let mean_count = per_neuron.values().sum::<usize>() as f64 / n;
        Ok(SpikeStats { per_neuron, mean_count, avg_activation: record.mean_count(), window: record.duration })
    }
}

/// `E = C / S~`.
pub fn spike_efficiency(capacity: f64, stats: &SpikeStats) -> Result<f64> {
    if !(stats.mean_count > 0.0) {
        return Err(Error::numeric("spike efficiency undefined without spikes"));
    }
    Ok(capacity / stats.mean_count)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeparationReport {
    pub singular_values: Vec<f64>,
    pub effective_rank: usize,
    pub threshold: f64,
}

/// Smallest `k` whose leading singular values cover `threshold` of the sum.
pub fn effective_rank(final_states: &DMatrix<f64>, threshold: f64) -> Result<SeparationReport> {
    if !(threshold > 0.0 && threshold <= 1.0) {
        return Err(Error::config("rank threshold must lie in (0, 1]"));
    }
    if final_states.iter().any(|v| !v.is_finite()) {
        return Err(Error::numeric("non-finite state matrix"));
    }
    if final_states.iter().all(|&v| v == 0.0) || final_states.is_empty() {
        return Err(Error::input("effective rank of an all-zero matrix is undefined"));
    }
    let mut sv: Vec<f64> = final_states.clone().svd(false, false).singular_values.iter().copied().collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    Ok(SeparationReport { effective_rank: rank_from_singular_values(&sv, threshold), singular_values: sv, threshold })
}

pub fn rank_from_singular_values(sorted_desc: &[f64], threshold: f64) -> usize {
    let total: f64 = sorted_desc.iter().sum();
    let target = threshold * total;
    let mut acc = 0.0;
    for (k, s) in sorted_desc.iter().enumerate() {
        acc += s;
        if acc >= target {
            return k + 1;
        }
    }
    sorted_desc.len()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeterogeneityScore {
    pub value: f64,
    /// True when there were fewer draws than parameters.
    pub degenerate: bool,
}

/// Determinant of the sample covariance (unbiased, `n - 1`) of `samples`
/// (`draws x params`).
pub fn heterogeneity_score(samples: &DMatrix<f64>) -> Result<HeterogeneityScore> {
    let (n, p) = samples.shape();
    if n < 2 {
        return Err(Error::input("heterogeneity score needs at least 2 draws"));
    }
    if n < p {
        return Ok(HeterogeneityScore { value: 0.0, degenerate: true });
    }
    let means: Vec<f64> = (0..p).map(|j| samples.column(j).mean()).collect();
    let centered = DMatrix::from_fn(n, p, |i, j| samples[(i, j)] - means[j]);
    let cov = centered.transpose() * &centered / (n as f64 - 1.0);
    Ok(HeterogeneityScore { value: cov.determinant(), degenerate: false })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyReport {
    pub total_sops: u64,
    pub energy: f64,
    /// SOPs of the dense parent on the same record divided by this count.
    pub sop_ratio_vs_dense: Option<f64>,
}

/// `sum_i s_i c_i` where `c_i` counts surviving synapses from `i` into
/// surviving neurons; spikes of neurons absent from `graph` cost nothing.
pub fn total_sops(record: &SpikeRecord, graph: &NetworkGraph) -> u64 {
    let mut out_deg: BTreeMap<NeuronId, u64> = BTreeMap::new();
    for ((s, d), _) in graph.edges() {
        if graph.contains(d) {
            *out_deg.entry(s).or_insert(0) += 1;
        }
    }
    record.counts.iter().map(|(id, &c)| c as u64 * out_deg.get(id).copied().unwrap_or(0)).sum()
}

pub fn count_sops(record: &SpikeRecord, graph: &NetworkGraph, energy_per_sop: f64) -> EnergyReport {
    let total = total_sops(record, graph);
    EnergyReport { total_sops: total, energy: energy_per_sop * total as f64, sop_ratio_vs_dense: None }
}

/// As [`count_sops`], plus the ratio against the dense parent graph evaluated
/// on the same record.
pub fn count_sops_vs_dense(record: &SpikeRecord, graph: &NetworkGraph, dense: &NetworkGraph, energy_per_sop: f64) -> EnergyReport {
    let mut r = count_sops(record, graph, energy_per_sop);
    let parent = total_sops(record, dense);
    r.sop_ratio_vs_dense = Some(match (parent, r.total_sops) {
        (0, 0) => 1.0,
        (_, 0) => f64::INFINITY,
        (p, q) => p as f64 / q as f64,
    });
    r
}

/// `RMSE(t) = sqrt(mean_i ((f_i(t) - u_i(t)) / sigma_i)^2)` per time step.
pub fn nrmse(forecast: &[Vec<f64>], truth: &[Vec<f64>], sigma: &[f64]) -> Result<Vec<f64>> {
    if forecast.len() != truth.len() {
        return Err(Error::input(format!("forecast length {} != truth length {}", forecast.len(), truth.len())));
    }
    if let Some(s) = sigma.iter().find(|&&s| !(s > 0.0)) {
        return Err(Error::input(format!("sigma {s} must be positive")));
    }
    let d = sigma.len();
    forecast
        .iter()
        .zip(truth)
        .map(|(f, u)| {
            if f.len() != d || u.len() != d {
                return Err(Error::input("dimension mismatch in nrmse"));
            }
            let ss: f64 = (0..d).map(|i| ((f[i] - u[i]) / sigma[i]).powi(2)).sum();
            Ok((ss / d as f64).sqrt())
        })
        .collect()
}

/// Number of steps with `RMSE(t) < epsilon`.
pub fn vpt(rmse: &[f64], epsilon: f64) -> Result<usize> {
    if !(epsilon > 0.0) {
        return Err(Error::input("VPT epsilon must be positive"));
    }
    Ok(rmse.iter().filter(|&&r| r < epsilon).count())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::topology::test_graphs::from_edges;

    #[test]
    fn capacity_of_delay_line() {
        // Features are x(t-1) and x(t-2) exactly.
        let n = 400;
        let input: Vec<f64> = (0..n).map(|t| ((t * 7919) % 101) as f64 / 101.0).collect();
        let feats = DMatrix::from_fn(n, 2, |t, k| if t > k { input[t - k - 1] } else { 0.0 });
        let r = memory_capacity(&feats, &input, 5, 1e-9).unwrap();
        assert!(r.per_delay[0] >= 0.999 && r.per_delay[1] >= 0.999);
        assert!(r.per_delay.iter().all(|c| (0.0..=1.0).contains(c)));
        assert!((r.total - r.per_delay.iter().sum::<f64>()).abs() < 1e-12);
        assert!(memory_capacity(&feats, &vec![0.5; n], 5, 1e-9).is_err());
        assert!(memory_capacity(&feats.rows(0, 20).into_owned(), &input[..20], 5, 1e-9).is_err());
    }

    #[test]
    fn efficiency_arithmetic() {
        let ids = [NeuronId(0)];
        let mut r = SpikeRecord::empty(&ids, 100.0);
        for k in 0..5 {
            r.push(NeuronId(0), k as f64);
        }
        let s = SpikeStats::from_record(&r, &CountMode::FullWindow).unwrap();
        assert_eq!(spike_efficiency(10.0, &s).unwrap(), 2.0);
        let empty = SpikeStats::from_record(&SpikeRecord::empty(&ids, 1.0), &CountMode::FullWindow).unwrap();
        assert!(spike_efficiency(1.0, &empty).is_err());
    }

    #[test]
    fn first_spike_mode() {
        let ids = [NeuronId(0), NeuronId(1)];
        let mut r = SpikeRecord::empty(&ids, 100.0);
        r.push(NeuronId(0), 1.0);
        r.push(NeuronId(0), 2.0);
        r.push(NeuronId(1), 3.0);
        r.push(NeuronId(0), 4.0);
        let s = SpikeStats::from_record(&r, &CountMode::UntilFirstReadoutSpike(vec![NeuronId(1)])).unwrap();
        assert_eq!(s.mean_count, 1.5);
        assert_eq!(s.avg_activation, 2.0);
        assert!(SpikeStats::from_record(&r, &CountMode::UntilFirstReadoutSpike(vec![NeuronId(7)])).is_err());
    }

    #[test]
    fn rank_cases() {
        assert_eq!(effective_rank(&DMatrix::identity(4, 4), 0.99).unwrap().effective_rank, 4);
        let u = DMatrix::from_column_slice(3, 1, &[1.0, 2.0, 3.0]);
        let v = DMatrix::from_row_slice(1, 4, &[1.0, -1.0, 0.5, 2.0]);
        assert_eq!(effective_rank(&(u * v), 0.99).unwrap().effective_rank, 1);
        assert!(effective_rank(&DMatrix::zeros(3, 3), 0.99).is_err());
    }

    #[test]
    fn heterogeneity_cases() {
        let same = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 1.0, 2.0, 1.0, 2.0]);
        assert_eq!(heterogeneity_score(&same).unwrap().value, 0.0);
        let m = DMatrix::from_row_slice(4, 2, &[1.0, 0.3, 2.0, -1.0, 0.5, 0.9, -1.2, 0.1]);
        let base = heterogeneity_score(&m).unwrap().value;
        let mut scaled = m.clone();
        scaled.column_mut(1).scale_mut(3.0);
        assert!((heterogeneity_score(&scaled).unwrap().value - 9.0 * base).abs() < 1e-12 * base.abs().max(1.0));
        let few = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 7.0]);
        assert!(heterogeneity_score(&few).unwrap().degenerate);
    }

    #[test]
    fn sop_fixture() {
        let g = from_edges(3, &[(0, 1), (0, 2), (1, 2)]);
        let ids = g.node_ids();
        let mut r = SpikeRecord::empty(&ids, 10.0);
        for k in 0..4 {
            r.push(NeuronId(0), k as f64);
        }
        assert_eq!(count_sops(&r, &g, 1.0).total_sops, 8);
        let mut pruned = g.clone();
        pruned.remove_edge(NeuronId(0), NeuronId(2));
        let rep = count_sops_vs_dense(&r, &pruned, &g, 1.0);
        assert_eq!(rep.total_sops, 4);
        assert_eq!(rep.sop_ratio_vs_dense, Some(2.0));
        assert_eq!(count_sops(&SpikeRecord::empty(&ids, 1.0), &g, 1.0).total_sops, 0);
    }

    #[test]
    fn nrmse_and_vpt() {
        let truth = vec![vec![1.0, 2.0]; 3];
        let sigma = [0.5, 2.0];
        assert!(nrmse(&truth, &truth, &sigma).unwrap().iter().all(|&r| r == 0.0));
        let off: Vec<Vec<f64>> = truth.iter().map(|u| vec![u[0] + 0.5, u[1] - 2.0]).collect();
        assert!(nrmse(&off, &truth, &sigma).unwrap().iter().all(|&r| (r - 1.0).abs() < 1e-15));
        assert!(nrmse(&off, &truth, &[0.0, 1.0]).is_err());
        assert_eq!(vpt(&vec![0.0; 100], 0.1).unwrap(), 100);
        let ramp: Vec<f64> = (1..=200).map(|t| 0.001 * t as f64).collect();
        assert_eq!(vpt(&ramp, 0.1).unwrap(), 99);
    }
}
