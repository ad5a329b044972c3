//! Acceptance suite. Each criterion prints one PASS/FAIL line; the binary
//! exits non-zero when any criterion fails.
//!
//!     cargo test -p hrsnn --test acceptance            # all criteria
//!     cargo test -p hrsnn --test acceptance -- 7 8     # a selection

#![allow(clippy::needless_range_loop)]

use std::collections::BTreeMap;
use std::sync::OnceLock;
use std::time::Instant;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng as _;
use rand_distr::{Distribution, Gamma, Normal, StandardNormal};

use hrsnn::bayesopt::kernel::{matern, KernelHyper};
use hrsnn::bayesopt::wasserstein::sinkhorn_distance;
use hrsnn::bayesopt::{
    bo_loop, expected_improvement, set_distance, wasserstein_1d, BoConfig, ParamDistributionSet, Range, SearchSpace, SetDistanceMode,
};
use hrsnn::config::{BoObjective, ExperimentConfig, Task};
use hrsnn::datagen::{generate, make_classification_task, SyntheticClassTask};
use hrsnn::dist::ParamDist;
use hrsnn::error::{Error, Result};
use hrsnn::lnp::activity::{run_activity_pruning, ActivityPruneConfig};
use hrsnn::lnp::covariance::{max_real_eigenvalue, solve_continuous_lyapunov, stationary_covariance, LinearizedSystem, ShiftConfig};
use hrsnn::lnp::lyapunov::{build_lyapunov_matrix, HarmonicConfig};
use hrsnn::lnp::sparsify::{edge_probability, keep_probabilities, quadratic_form_deviation, sample_sparse, DiagonalMode};
use hrsnn::lnp::{linearize, run_lnp, PrunedModel};
use hrsnn::metrics::{count_sops, count_sops_vs_dense, effective_rank};
use hrsnn::model::{build_model, capacity_run, drive_signal, final_states, forecast, forecast_training_input, noise_rates, train_stdp, white_noise};
use hrsnn::neuron::{analytic_first_spike, run, InitMode, InputSpikes, Network, NetworkState, NeuronParams, SimConfig, SpikeRecord};
use hrsnn::plasticity::{Stdp, StdpParams, SynapseId};
use hrsnn::rng::{derive, stream, tags, Rng};
use hrsnn::runner::{bo_objective, cmd_build, cmd_evaluate, cmd_prune, cmd_train, stage, Invocation};
use hrsnn::topology::{betweenness_centrality, NetworkGraph, Node, NeuronId, Sign};

/// Outcome of one criterion.
struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Result<Verdict> {
    Ok(Verdict { pass, detail: detail.into() })
}

/// Default experiment configuration at network size `n`.
fn cfg_for(n: usize, seed: u64) -> ExperimentConfig {
    ExperimentConfig::parse(&format!("[experiment]\nseed = {seed}\n[topology]\nn_total = {n}\n")).expect("valid config")
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn sample_variance(v: &[f64]) -> f64 {
    let m = mean(v);
    v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() as f64 - 1.0)
}

fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

fn max_abs_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).abs().max()
}

/// Excitatory nodes `0..n` with unit-weight edges.
fn graph_from_edges(n: u32, edges: &[(u32, u32)]) -> NetworkGraph {
    let mut g = NetworkGraph::new(0);
    for i in 0..n {
        g.add_node(NeuronId(i), Node { pos: [i as f64, 0.0, 0.0], sign: Sign::Excitatory }).expect("fresh node");
    }
    for &(s, d) in edges {
        g.set_edge(NeuronId(s), NeuronId(d), 1.0).expect("valid edge");
    }
    g
}

fn ids(n: usize) -> Vec<NeuronId> {
    (0..n as u32).map(NeuronId).collect()
}

// ---------------------------------------------------------------------------
// 1. Covariance solve.

fn random_stable(rng: &mut Rng, n: usize) -> DMatrix<f64> {
    loop {
        let a = DMatrix::from_fn(n, n, |i, j| {
            let g: f64 = StandardNormal.sample(rng);
            if i == j {
                -1.5 + 0.3 * g
            } else {
                0.4 * g
            }
        });
        if max_real_eigenvalue(&a).expect("eigenvalues") < -0.05 {
            return a;
        }
    }
}

fn kronecker_oracle(a: &DMatrix<f64>, sigma: f64) -> DMatrix<f64> {
    let n = a.nrows();
    let eye = DMatrix::<f64>::identity(n, n);
    let k = eye.kronecker(a) + a.kronecker(&eye);
    let rhs = DMatrix::from_column_slice(n * n, 1, (-(sigma * sigma) * &eye).as_slice());
    let v = k.lu().solve(&rhs).expect("non-singular Kronecker system");
    DMatrix::from_column_slice(n, n, v.as_slice())
}

fn c01_covariance() -> Result<Verdict> {
    let sys = |a: DMatrix<f64>, sigma: f64| LinearizedSystem { ids: ids(a.nrows()), d: vec![], b: vec![0.0; a.nrows()], a, sigma };

    let s = stationary_covariance(&sys(-DMatrix::identity(4, 4), 1.0), &ShiftConfig::default())?;
    let e_identity = max_abs_diff(&s.sigma, &(DMatrix::identity(4, 4) * 0.5));

    let d = [0.5, 1.0, 2.0, 3.5, 10.0];
    let sigma = 1.7;
    let s = stationary_covariance(&sys(DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(5, d.iter().map(|x| -x))), sigma), &ShiftConfig::default())?;
    let oracle = DMatrix::from_fn(5, 5, |i, j| if i == j { sigma * sigma / (2.0 * d[i]) } else { 0.0 });
    let e_diag = max_abs_diff(&s.sigma, &oracle);

    let mut rng = stream(1, 1);
    let mut e_kron: f64 = 0.0;
    for _ in 0..20 {
        let a = random_stable(&mut rng, 6);
        let sigma = 0.5 + rng.random::<f64>();
        let x = solve_continuous_lyapunov(&a, &(DMatrix::identity(6, 6) * (sigma * sigma)))?;
        let o = kronecker_oracle(&a, sigma);
        e_kron = e_kron.max(max_abs_diff(&x, &o) / o.abs().max().max(1.0));
    }
    verdict(
        e_identity <= 1e-10 && e_diag <= 1e-10 && e_kron <= 1e-8,
        format!("A=-I err {e_identity:.1e}, diagonal err {e_diag:.1e}, 20 random 6x6 vs Kronecker max rel err {e_kron:.1e}"),
    )
}

// ---------------------------------------------------------------------------
// 2. Sparsification unbiasedness.

fn sparsify_fixture() -> (DMatrix<f64>, DMatrix<f64>) {
    let mut rng = stream(2, 1);
    let n = 5;
    let a = DMatrix::from_fn(n, n, |i, j| {
        if i == j {
            -1.5
        } else if rng.random::<f64>() < 0.8 {
            0.5 * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng)
        } else {
            0.0
        }
    });
    let signs = [Sign::Excitatory, Sign::Excitatory, Sign::Inhibitory, Sign::Excitatory, Sign::Inhibitory];
    let sigma = solve_continuous_lyapunov(&a, &DMatrix::identity(n, n)).expect("stable fixture");
    let l = DMatrix::from_fn(n, n, |i, j| if i == j { 0.0 } else { a[(i, j)] });
    // Choose rho so that the median keep probability is 1/2.
    let mut raw = Vec::new();
    for j in 0..n {
        for i in 0..n {
            if i != j && a[(j, i)] != 0.0 {
                raw.push(edge_probability(1.0, l[(j, i)], sigma[(i, i)], sigma[(j, j)], sigma[(i, j)], signs[i]));
            }
        }
    }
    let rho = 0.5 / median(&raw);
    let p = keep_probabilities(&a, &sigma, &l, &signs, rho, 0.05).expect("probabilities");
    (a, p)
}

fn c02_unbiased() -> Result<Verdict> {
    let (a, p) = sparsify_fixture();
    let n = a.nrows();
    let draws = 100_000;
    let mut worst = 0.0_f64;
    let mut inside = 0;
    let mut total = 0;
    for (k, mode) in [DiagonalMode::Retain, DiagonalMode::Perturb].into_iter().enumerate() {
        let mut rng = stream(2, 10 + k as u64);
        let mut sum = DMatrix::<f64>::zeros(n, n);
        let mut sq = DMatrix::<f64>::zeros(n, n);
        for _ in 0..draws {
            let (s, _) = sample_sparse(&a, &p, mode, &mut rng);
            sum += &s;
            sq += s.component_mul(&s);
        }
        for idx in 0..n * n {
            let m = sum[idx] / draws as f64;
            let var = (sq[idx] / draws as f64 - m * m).max(0.0) * draws as f64 / (draws as f64 - 1.0);
            let se = (var / draws as f64).sqrt();
            let dev = (m - a[idx]).abs();
            let ok = if se == 0.0 { dev <= 1e-12 * a[idx].abs().max(1.0) } else { dev <= 3.0 * se };
            total += 1;
            inside += ok as usize;
            if se > 0.0 {
                worst = worst.max(dev / se);
            }
        }
    }
    let kept = p.iter().filter(|&&x| x > 0.0 && x < 1.0).count();
    verdict(
        inside == total,
        format!("{inside}/{total} entries within 3 SE over 1e5 draws (retain + perturb modes, {kept} random entries), worst {worst:.2} SE"),
    )
}

// ---------------------------------------------------------------------------
// 3. Quadratic-form preservation.

fn c03_quadratic_form() -> Result<Verdict> {
    let seed = 3;
    let cfg = cfg_for(50, seed);
    let prune = &cfg.lnp.prune;
    let model = build_model(&cfg.topology, &cfg.neuron_profile(), derive(seed, stage::BUILD))?;
    let lin = linearize(&model.graph, &model.params, cfg.topology.w_scale, prune, derive(seed, 1))?;
    let p = lin.keep_probabilities(prune)?;
    let dev = quadratic_form_deviation(&lin.system.a, &p, prune.diagonal_mode, 100, 200, &mut stream(seed, tags::PRUNE))?;
    let kept = p.iter().filter(|&&x| x > 0.0).map(|x| x.min(1.0)).sum::<f64>() / p.iter().filter(|&&x| x > 0.0).count() as f64;
    verdict(
        dev < prune.epsilon_quadform,
        format!(
            "mean |x'(A_s - A)x| / |x'Ax| = {dev:.4} (epsilon {}), 50 neurons, mean keep probability {kept:.3}",
            prune.epsilon_quadform
        ),
    )
}

// ---------------------------------------------------------------------------
// 4. STDP pair window.

fn pair_params() -> StdpParams {
    StdpParams {
        a_plus_gain: 0.02,
        a_minus_gain: 0.025,
        trace_incr_plus: 0.9,
        trace_incr_minus: 0.7,
        tau_plus: 16.0,
        tau_minus: 27.0,
        w_min: 0.0,
        w_max: 10.0,
    }
}

/// Simulate two neurons joined by `0 -> 1`, each forced to fire exactly once
/// by a one-step current pulse. Returns (measured post - pre time, weight change).
fn simulated_pair(step_pre: usize, step_post: usize) -> Result<(f64, f64)> {
    let lif = NeuronParams { tau_m: 20.0, r_m: 1.0, v_rest_a: -65.0, v_threshold: -50.0, v_reset: -65.0, refractory_r: 2.0 };
    let mut g = NetworkGraph::new(0);
    g.add_node(NeuronId(0), Node { pos: [0.0; 3], sign: Sign::Excitatory })?;
    g.add_node(NeuronId(1), Node { pos: [1.0, 0.0, 0.0], sign: Sign::Excitatory })?;
    g.set_edge(NeuronId(0), NeuronId(1), 0.5)?;
    let params = BTreeMap::from([(NeuronId(0), lif), (NeuronId(1), lif)]);
    let mut net = Network::new(&g, &params)?;
    let sim = SimConfig { dt: 0.25, init: InitMode::Rest, ..Default::default() };
    let syn = BTreeMap::from([(SynapseId::Recurrent(NeuronId(0), NeuronId(1)), pair_params())]);
    let mut stdp = Stdp::new(&net, &syn, sim.dt, false)?;
    let mut state = NetworkState::at_rest(&net);
    let w0 = g.edge(NeuronId(0), NeuronId(1)).expect("edge");
    let mut times: BTreeMap<NeuronId, Vec<f64>> = BTreeMap::new();
    let n_steps = step_pre.max(step_post) + 200;
    for k in 0..n_steps {
        let pulse = |s: usize| if k == s { 4000.0 } else { 0.0 };
        let current = [pulse(step_pre), pulse(step_post)];
        let t0 = state.t_now;
        let rec: SpikeRecord = run(&mut net, &mut state, &InputSpikes::silent(0, 1), Some(&current), &sim, Some(&mut stdp))?;
        for (id, t) in rec.spikes {
            times.entry(id).or_default().push(t0 + t);
        }
    }
    let (pre, post) = (&times[&NeuronId(0)], &times[&NeuronId(1)]);
    assert!(pre.len() == 1 && post.len() == 1, "each neuron must fire exactly once: {times:?}");
    let w1 = net.write_weights(&g)?.edge(NeuronId(0), NeuronId(1)).expect("edge");
    Ok((post[0] - pre[0], w1.abs() - w0.abs()))
}

fn c04_stdp_pairs() -> Result<Verdict> {
    let p = pair_params();
    let dt = 0.25;
    let mut worst: f64 = 0.0;
    let mut timing_ok = true;
    for delta in [5.0, 10.0, 20.0] {
        let steps = (delta / dt) as usize;
        let (measured, dw) = simulated_pair(20, 20 + steps)?;
        timing_ok &= (measured - delta).abs() < 1e-9;
        let oracle = p.a_plus_gain * p.trace_incr_plus * (-measured / p.tau_plus).exp();
        worst = worst.max((dw - oracle).abs() / oracle);
        let (measured, dw) = simulated_pair(20 + steps, 20)?;
        timing_ok &= (measured + delta).abs() < 1e-9;
        let oracle = -p.a_minus_gain * p.trace_incr_minus * (measured / p.tau_minus).exp();
        worst = worst.max((dw - oracle).abs() / oracle.abs());
    }
    verdict(worst <= 1e-9 && timing_ok, format!("6 simulated pairs (dt in 5/10/20 ms, both orders): max relative error {worst:.1e}"))
}

// ---------------------------------------------------------------------------
// 5. LIF first-spike time.

fn simulated_first_spike(p: &NeuronParams, current: f64, dt: f64) -> Result<f64> {
    let mut g = NetworkGraph::new(0);
    g.add_node(NeuronId(0), Node { pos: [0.0; 3], sign: Sign::Excitatory })?;
    let params = BTreeMap::from([(NeuronId(0), *p)]);
    let mut net = Network::new(&g, &params)?;
    let sim = SimConfig { dt, init: InitMode::Rest, ..Default::default() };
    let mut state = NetworkState::at_rest(&net);
    let chunk = (50.0 / dt) as usize;
    for _ in 0..40 {
        let t0 = state.t_now;
        let rec = run(&mut net, &mut state, &InputSpikes::silent(0, chunk), Some(&[current]), &sim, None)?;
        if let Some(&(_, t)) = rec.spikes.first() {
            return Ok(t0 + t);
        }
    }
    Err(hrsnn::error::Error::numeric("neuron never fired"))
}

fn c05_first_spike() -> Result<Verdict> {
    let p = NeuronParams { tau_m: 20.0, r_m: 1.0, v_rest_a: -65.0, v_threshold: -50.0, v_reset: -65.0, refractory_r: 2.0 };
    let currents: Vec<f64> = (0..200).map(|k| 16.0 + 0.15 * k as f64).collect();
    let dts = [0.25, 0.125, 0.0625];
    let mut mean_err = Vec::new();
    let mut within = true;
    for &dt in &dts {
        let mut errs = Vec::new();
        for &i in &currents {
            let exact = analytic_first_spike(&p, i, p.v_reset).expect("supra-threshold");
            let err = (simulated_first_spike(&p, i, dt)? - exact).abs();
            within &= err <= 2.0 * dt;
            errs.push(err);
        }
        mean_err.push(mean(&errs));
    }
    let r1 = mean_err[1] / mean_err[0];
    let r2 = mean_err[2] / mean_err[1];
    let ok_ratio = |r: f64| (0.4..=0.6).contains(&r);
    verdict(
        within && ok_ratio(r1) && ok_ratio(r2),
        format!(
            "200 currents: all within 2dt = {within}; mean |error| {:.4}/{:.4}/{:.4} ms at dt 0.25/0.125/0.0625, halving ratios {r1:.3}, {r2:.3}",
            mean_err[0], mean_err[1], mean_err[2]
        ),
    )
}

// ---------------------------------------------------------------------------
// 6. Kernel validity.

fn random_set(rng: &mut Rng) -> ParamDistributionSet {
    let base = ParamDistributionSet::bio_default();
    let mut m = base.marginals();
    for d in m.iter_mut() {
        let theta = match *d {
            ParamDist::Gamma { scale, .. } => scale,
            ParamDist::Point { value } => value,
        };
        let shape = (rng.random::<f64>() * 16f64.ln()).exp();
        let scale = theta * ((rng.random::<f64>() * 2.0 - 1.0) * 4f64.ln()).exp();
        *d = ParamDist::gamma(shape, scale);
    }
    ParamDistributionSet::from_marginals(m)
}

/// Minimum Gram eigenvalue and exact symmetry over `n_sets` random 10-point sets.
fn gram_check(smoothness: f64, n_sets: usize) -> Result<(f64, bool)> {
    let mut rng = stream(6, 1);
    let mut min_eig = f64::INFINITY;
    let mut symmetric = true;
    for _ in 0..n_sets {
        let pts: Vec<ParamDistributionSet> = (0..10).map(|_| random_set(&mut rng)).collect();
        let mut w = DMatrix::zeros(10, 10);
        for i in 0..10 {
            for j in 0..10 {
                w[(i, j)] = set_distance(&pts[i], &pts[j], SetDistanceMode::MarginalSum)?;
            }
        }
        let off: Vec<f64> = (0..10).flat_map(|i| (0..10).filter(move |&j| j > i).map(move |j| (i, j))).map(|(i, j)| w[(i, j)]).collect();
        let hyper = KernelHyper { variance: 1.0, length_scale: median(&off), smoothness };
        let k = DMatrix::from_fn(10, 10, |i, j| matern(w[(i, j)], &hyper).expect("kernel"));
        symmetric &= k == k.transpose();
        min_eig = min_eig.min(SymmetricEigen::new(k).eigenvalues.min());
    }
    Ok((min_eig, symmetric))
}

fn c06_kernel_validity() -> Result<Verdict> {
    let (min_52, sym_52) = gram_check(2.5, 50)?;
    let (min_12, sym_12) = gram_check(0.5, 50)?;
    verdict(
        min_52 >= -1e-8 && sym_52,
        format!(
            "smoothness 5/2: min eigenvalue {min_52:.3e}, symmetric {sym_52}; (configured default 1/2: min eigenvalue {min_12:.3e}, symmetric {sym_12})"
        ),
    )
}

// ---------------------------------------------------------------------------
// 7 and 8. Matched heterogeneous vs homogeneous capacity and spike counts.

#[derive(Debug, Clone, Copy)]
struct Arm {
    capacity: f64,
    spikes: f64,
}

/// Per seed: (het LIF, het STDP), (het LIF, hom STDP), (hom LIF, hom STDP).
fn capacity_arms() -> &'static Vec<[Arm; 3]> {
    static ARMS: OnceLock<Vec<[Arm; 3]>> = OnceLock::new();
    ARMS.get_or_init(|| {
        (0..20u64)
            .map(|seed| {
                let cfg = cfg_for(200, seed);
                let het = cfg.neurons;
                let stdp = cfg.plasticity.profile;
                let train: Vec<Vec<f64>> =
                    white_noise(cfg.plasticity.train_samples, derive(seed, tags::TASK)).into_iter().map(|x| vec![x]).collect();
                let arm = |lif: &hrsnn::neuron::HeterogeneityProfile, plastic: &hrsnn::plasticity::StdpProfile| {
                    let m = build_model(&cfg.topology, lif, derive(seed, stage::BUILD)).expect("build");
                    let t = train_stdp(&m, plastic, &train, &cfg.model, derive(seed, stage::TRAIN)).expect("train").model;
                    let r = capacity_run(&t, &cfg.model, cfg.metrics.capacity_samples, cfg.metrics.tau_max, derive(seed, stage::EVALUATE))
                        .expect("capacity");
                    Arm { capacity: r.capacity.total, spikes: r.stats.mean_count }
                };
                [arm(&het, &stdp), arm(&het, &stdp.homogenized()), arm(&het.homogenized(), &stdp.homogenized())]
            })
            .collect()
    })
}

fn c07_capacity() -> Result<Verdict> {
    let arms = capacity_arms();
    let diff: Vec<f64> = arms.iter().map(|a| a[1].capacity - a[2].capacity).collect();
    let agree = diff.iter().filter(|d| **d > 0.0).count();
    let md = mean(&diff);
    let se = (sample_variance(&diff) / diff.len() as f64).sqrt();
    verdict(
        md > 0.0 && agree >= 15,
        format!(
            "N=200, 20 seeds: mean C het-LIF {:.4} vs hom-LIF {:.4}; mean paired diff {md:.4} (t = {:.2}), {agree}/20 seeds het > hom",
            mean(&arms.iter().map(|a| a[1].capacity).collect::<Vec<_>>()),
            mean(&arms.iter().map(|a| a[2].capacity).collect::<Vec<_>>()),
            md / se
        ),
    )
}

fn c08_spikes() -> Result<Verdict> {
    let arms = capacity_arms();
    let agree = arms.iter().filter(|a| a[0].spikes <= a[1].spikes).count();
    let s_het = mean(&arms.iter().map(|a| a[0].spikes).collect::<Vec<_>>());
    let s_hom = mean(&arms.iter().map(|a| a[1].spikes).collect::<Vec<_>>());
    // Efficiency of the fully heterogeneous model vs the fully homogeneous one.
    let e_r = mean(&arms.iter().map(|a| a[0].capacity).collect::<Vec<_>>()) / s_het;
    let e_m = mean(&arms.iter().map(|a| a[2].capacity).collect::<Vec<_>>())
        / mean(&arms.iter().map(|a| a[2].spikes).collect::<Vec<_>>());
    verdict(
        s_het <= s_hom && agree >= 15 && e_r >= e_m,
        format!(
            "mean spikes/neuron het-STDP {s_het:.2} vs hom-STDP {s_hom:.2}, {agree}/20 seeds het <= hom; seed-mean efficiency E_R {e_r:.5} vs E_M {e_m:.5}"
        ),
    )
}

// ---------------------------------------------------------------------------
// 9. Separation rank.

fn c09_rank() -> Result<Verdict> {
    let mut agree = 0;
    let mut ranks = Vec::new();
    for seed in 0..20u64 {
        let cfg = cfg_for(300, seed);
        let spec = SyntheticClassTask { n_classes: 20, trials_per_class: 1, noise: 0.0, test_fraction: 0.0, ..cfg.data.classes.clone() };
        let stimuli = make_classification_task(&spec, derive(seed, tags::TASK))?.templates;
        let rank = |lif: &hrsnn::neuron::HeterogeneityProfile| -> Result<usize> {
            let m = build_model(&cfg.topology, lif, derive(seed, stage::BUILD))?;
            let (states, _) = final_states(&m, &stimuli, &m.graph.node_ids(), &cfg.model, &cfg.data.classify, derive(seed, stage::EVALUATE))?;
            Ok(effective_rank(&states, cfg.metrics.rank_threshold)?.effective_rank)
        };
        let (h, m) = (rank(&cfg.neurons)?, rank(&cfg.neurons.homogenized())?);
        agree += (h >= m) as usize;
        ranks.push((h, m));
    }
    let mh = mean(&ranks.iter().map(|r| r.0 as f64).collect::<Vec<_>>());
    let mm = mean(&ranks.iter().map(|r| r.1 as f64).collect::<Vec<_>>());
    verdict(agree >= 15, format!("N=300, 20 stimuli: mean rank het {mh:.2} vs hom {mm:.2}; {agree}/20 seeds het >= hom"))
}

// ---------------------------------------------------------------------------
// 10. LNP vs activity pruning on Lorenz63.

fn c10_lnp_vs_activity() -> Result<Verdict> {
    let mut lnp = Vec::new();
    let mut ap = Vec::new();
    let mut matched = 0;
    let mut counts = Vec::new();
    for seed in 0..10u64 {
        let cfg = cfg_for(300, seed);
        let model = build_model(&cfg.topology, &cfg.neuron_profile(), derive(seed, stage::BUILD))?;
        let series = generate(&cfg.data.chaotic(Task::Lorenz63, derive(seed, tags::SIGNAL)).expect("forecast task"))?;
        let rows = forecast_training_input(&series, &cfg.data.forecast)?;
        let trained = train_stdp(&model, &cfg.stdp_profile(), &rows, &cfg.model, derive(seed, stage::TRAIN))?.model;

        let run = run_lnp(&trained, &cfg.neuron_profile(), cfg.topology.w_scale, &cfg.lnp.prune, derive(seed, stage::PRUNE))?;
        let pruned_lnp = run.final_model(&trained).clone();
        let target = pruned_lnp.graph.n_edges();
        let ap_cfg = ActivityPruneConfig { target_synapses: Some(target), max_iterations: 1000, ..cfg.lnp.activity.clone() };
        let (pruned_ap, _) = run_activity_pruning(&trained, &ap_cfg, |m| {
            noise_rates(m, &cfg.model, cfg.bo.capacity_samples, derive(derive(seed, stage::PRUNE), tags::SIGNAL))
        })?;
        let got = pruned_ap.graph.n_edges();
        matched += ((got as f64 - target as f64).abs() <= 0.1 * target as f64) as usize;
        counts.push((trained.graph.n_edges(), target, got));

        let eval = |m: &PrunedModel| forecast(m, &series, &cfg.model, &cfg.data.forecast, derive(seed, stage::EVALUATE)).map(|r| r.mean_nrmse);
        lnp.push(eval(&pruned_lnp)?);
        ap.push(eval(&pruned_ap)?);
    }
    let (ml, ma) = (median(&lnp), median(&ap));
    let (vl, va) = (sample_variance(&lnp), sample_variance(&ap));
    let syn = |k: usize| mean(&counts.iter().map(|c| [c.0, c.1, c.2][k] as f64).collect::<Vec<_>>());
    verdict(
        matched == 10 && ml <= ma && vl <= va,
        format!(
            "N=300, 10 seeds: synapses {:.0} -> LNP {:.0} / AP {:.0} ({matched}/10 matched within 10%); median NRMSE LNP {ml:.4} vs AP {ma:.4}; variance LNP {vl:.5} vs AP {va:.5}",
            syn(0),
            syn(1),
            syn(2)
        ),
    )
}

// ---------------------------------------------------------------------------
// 11. SOP accounting.

fn c11_sops() -> Result<Verdict> {
    let g = graph_from_edges(3, &[(0, 1), (0, 2), (1, 2)]);
    let mut rec = SpikeRecord::empty(&g.node_ids(), 100.0);
    for t in [1.0, 2.0, 3.0, 4.0] {
        rec.push(NeuronId(0), t);
    }
    let dense = count_sops(&rec, &g, 1.0).total_sops;
    let mut cut = g.clone();
    cut.remove_edge(NeuronId(0), NeuronId(2));
    let sparse = count_sops_vs_dense(&rec, &cut, &g, 1.0);
    let fixture_ok = dense == 8 && sparse.total_sops == 4 && sparse.sop_ratio_vs_dense == Some(2.0);

    let seed = 11;
    let cfg = cfg_for(100, seed);
    let model = build_model(&cfg.topology, &cfg.neuron_profile(), derive(seed, stage::BUILD))?;
    let mut prune = cfg.lnp.prune.clone();
    prune.iterations = 3;
    let run = run_lnp(&model, &cfg.neuron_profile(), cfg.topology.w_scale, &prune, derive(seed, stage::PRUNE))?;
    let pruned = run.final_model(&model);
    let signal: Vec<Vec<f64>> = white_noise(400, derive(seed, tags::SIGNAL)).into_iter().map(|x| vec![x]).collect();
    let (record, _) = drive_signal(pruned, &signal, &cfg.model, seed)?;
    let ratio = count_sops_vs_dense(&record, &pruned.graph, &model.graph, 1.0).sop_ratio_vs_dense.expect("ratio");
    verdict(
        fixture_ok && ratio >= 1.0,
        format!(
            "fixture: dense {dense} SOPs, after deleting one synapse {} SOPs, ratio {:?}; 100-neuron LNP (3 iterations) ratio {ratio:.3}",
            sparse.total_sops, sparse.sop_ratio_vs_dense
        ),
    )
}

// ---------------------------------------------------------------------------
// 12. BO sanity.

fn c12_bo() -> Result<Verdict> {
    let space = SearchSpace::around(ParamDistributionSet::bio_default(), Range::new(1.0, 16.0), 4.0)?;
    let bo = BoConfig::default();
    let mut ratios = Vec::new();
    for seed in 0..10u64 {
        let target = random_set(&mut stream(seed, 99));
        let out = bo_loop(|x| Ok(-set_distance(x, &target, SetDistanceMode::MarginalSum)?), &space, &bo, seed)?;
        let initial = out.trace[..bo.n_initial].iter().filter_map(|e| e.value).fold(f64::NEG_INFINITY, f64::max);
        ratios.push(out.best_value / initial);
    }
    let ratio = median(&ratios);

    // Desk fixture: three objectives, compared on spike efficiency.
    let seed = 12;
    let mut cfg = cfg_for(100, seed);
    cfg.bo.loop_cfg.budget = 15;
    cfg.bo.loop_cfg.n_initial = 6;
    let space = SearchSpace::around(ParamDistributionSet::from_profiles(&cfg.neurons, &cfg.plasticity.profile), cfg.bo.shape, cfg.bo.scale_factor)?;
    let eval_seed = derive(seed, tags::TASK);
    let mut e = BTreeMap::new();
    let mut silent = Vec::new();
    for objective in [BoObjective::Efficiency, BoObjective::Capacity, BoObjective::SpikeCount] {
        let mut c = cfg.clone();
        c.bo.objective = objective;
        let out = bo_loop(|p| bo_objective(p, &c, eval_seed), &space, &c.bo.loop_cfg, derive(seed, stage::BO))?;
        let mut ce = c.clone();
        ce.bo.objective = BoObjective::Efficiency;
        // A silent best point has zero capacity; score it as zero efficiency.
        match bo_objective(&out.best, &ce, eval_seed) {
            Ok(v) => e.insert(objective.as_str(), v),
            Err(Error::Numeric(_)) => {
                silent.push(objective.as_str());
                e.insert(objective.as_str(), 0.0)
            }
            Err(err) => return Err(err),
        };
    }
    let dominates = e["efficiency"] >= e["capacity"] && e["efficiency"] >= e["spike_count"];
    verdict(
        ratio <= 0.25 && dominates,
        format!(
            "self-distance: median final/initial-design distance {ratio:.3} over 10 seeds (budget 50); E of best point: efficiency run {:.5}, capacity run {:.5}, count run {:.5}; silent best points scored 0: {silent:?}",
            e["efficiency"], e["capacity"], e["spike_count"]
        ),
    )
}

// ---------------------------------------------------------------------------
// 13. Oracles: centrality, SVD rank, Wasserstein, EI, harmonic mean.

/// Betweenness by enumerating every simple path between every ordered pair.
fn brute_betweenness(n: usize, adj: &[Vec<bool>]) -> Vec<f64> {
    fn walk(adj: &[Vec<bool>], path: &mut Vec<usize>, t: usize, out: &mut Vec<Vec<usize>>) {
        let u = *path.last().expect("non-empty");
        if u == t {
            out.push(path.clone());
            return;
        }
        for v in 0..adj.len() {
            if adj[u][v] && !path.contains(&v) {
                path.push(v);
                walk(adj, path, t, out);
                path.pop();
            }
        }
    }
    let mut b = vec![0.0; n];
    for s in 0..n {
        for t in 0..n {
            if s == t {
                continue;
            }
            let mut paths = Vec::new();
            walk(adj, &mut vec![s], t, &mut paths);
            let Some(shortest) = paths.iter().map(Vec::len).min() else { continue };
            let best: Vec<&Vec<usize>> = paths.iter().filter(|p| p.len() == shortest).collect();
            for p in &best {
                for &v in &p[1..p.len() - 1] {
                    b[v] += 1.0 / best.len() as f64;
                }
            }
        }
    }
    b
}

fn random_digraph(rng: &mut Rng, n: usize, p: f64) -> (NetworkGraph, Vec<Vec<bool>>) {
    let mut edges = Vec::new();
    let mut adj = vec![vec![false; n]; n];
    for i in 0..n {
        for j in 0..n {
            if i != j && rng.random::<f64>() < p {
                edges.push((i as u32, j as u32));
                adj[i][j] = true;
            }
        }
    }
    (graph_from_edges(n as u32, &edges), adj)
}

fn oracle_centrality() -> (bool, String) {
    let mut rng = stream(13, 1);
    let mut err: f64 = 0.0;
    for _ in 0..30 {
        let (g, adj) = random_digraph(&mut rng, 8, 0.3);
        let b = betweenness_centrality(&g);
        let o = brute_betweenness(8, &adj);
        for (i, v) in o.iter().enumerate() {
            err = err.max((b[&NeuronId(i as u32)] - v).abs());
        }
    }
    (err <= 1e-12, format!("betweenness 30x8-node max err {err:.1e}"))
}

fn oracle_rank() -> Result<(bool, String)> {
    let mut rng = stream(13, 2);
    let mut agree = 0;
    let trials = 30;
    for t in 0..trials {
        // Spectra decaying at different rates so the 99% rank varies.
        let decay = 0.3 + 0.7 * t as f64 / trials as f64;
        let u = DMatrix::<f64>::from_fn(10, 10, |_, _| StandardNormal.sample(&mut rng)).qr().q();
        let v = DMatrix::<f64>::from_fn(20, 10, |_, _| StandardNormal.sample(&mut rng)).qr().q();
        let s = DMatrix::from_diagonal(&nalgebra::DVector::from_fn(10, |k, _| decay.powi(k as i32)));
        let x: DMatrix<f64> = u * s * v.transpose() + DMatrix::<f64>::from_fn(10, 20, |_, _| 1e-6 * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng));
        // Independent singular values: square roots of the Gram eigenvalues.
        let mut sv: Vec<f64> = SymmetricEigen::new(&x * x.transpose()).eigenvalues.iter().map(|e| e.max(0.0).sqrt()).collect();
        sv.sort_by(|a, b| b.total_cmp(a));
        let total: f64 = sv.iter().sum();
        let mut acc = 0.0;
        let mut oracle = sv.len();
        for (k, s) in sv.iter().enumerate() {
            acc += s;
            if acc >= 0.99 * total {
                oracle = k + 1;
                break;
            }
        }
        agree += (effective_rank(&x, 0.99)?.effective_rank == oracle) as usize;
    }
    let fixed = effective_rank(&DMatrix::identity(4, 4), 0.99)?.effective_rank == 4
        && effective_rank(&(DMatrix::from_column_slice(3, 1, &[1.0, 2.0, 3.0]) * DMatrix::from_row_slice(1, 4, &[1.0, -1.0, 0.5, 2.0])), 0.99)?
            .effective_rank
            == 1;
    Ok((agree == trials && fixed, format!("rank {agree}/{trials} random 10x20 + identity/rank-1 {fixed}")))
}

fn oracle_wasserstein() -> Result<(bool, String)> {
    let (p, q) = (ParamDist::gamma(2.0, 1.0), ParamDist::gamma(2.0, 3.0));
    let w = wasserstein_1d(&p, &q)?;
    let mut rng = stream(13, 3);
    let n = 1_000_000;
    let (gp, gq) = (Gamma::new(2.0, 1.0).expect("gamma"), Gamma::new(2.0, 3.0).expect("gamma"));
    let mut xs: Vec<f64> = (0..n).map(|_| gp.sample(&mut rng)).collect();
    let mut ys: Vec<f64> = (0..n).map(|_| gq.sample(&mut rng)).collect();
    xs.sort_by(f64::total_cmp);
    ys.sort_by(f64::total_cmp);
    let mc = xs.iter().zip(&ys).map(|(a, b)| (a - b).abs()).sum::<f64>() / n as f64;
    let mc_ok = (w - mc).abs() <= 0.01 * mc;
    let point_ok = (wasserstein_1d(&ParamDist::point(1.5), &ParamDist::point(-2.0))? - 3.5).abs() < 1e-12;

    // Sinkhorn against exhaustive assignment on equal-size uniform clouds.
    let mut worst: f64 = 0.0;
    for k in 0..10 {
        let m = 3 + k % 4;
        let cloud = |rng: &mut Rng| -> Vec<Vec<f64>> { (0..m).map(|_| (0..2).map(|_| 3.0 * rng.random::<f64>()).collect()).collect() };
        let (a, b) = (cloud(&mut rng), cloud(&mut rng));
        let cost = |i: usize, j: usize| a[i].iter().zip(&b[j]).map(|(x, y)| (x - y).abs()).sum::<f64>();
        let exact = permutations(m).iter().map(|perm| perm.iter().enumerate().map(|(i, &j)| cost(i, j)).sum::<f64>()).fold(f64::INFINITY, f64::min)
            / m as f64;
        let s = sinkhorn_distance(&a, &b, 0.005, 20_000, 1e-10)?;
        worst = worst.max((s - exact).abs() / exact);
    }
    Ok((
        mc_ok && point_ok && worst <= 0.05,
        format!("W1 gamma(2,1)|gamma(2,3) {w:.5} vs MC {mc:.5}; point masses {point_ok}; Sinkhorn worst rel err {worst:.4}"),
    ))
}

fn permutations(m: usize) -> Vec<Vec<usize>> {
    if m == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(m - 1) {
        for pos in 0..=p.len() {
            let mut q = p.clone();
            q.insert(pos, m - 1);
            out.push(q);
        }
    }
    out
}

fn oracle_ei() -> (bool, String) {
    let (mu, sd, best) = (1.0, 0.5, 0.8);
    let ei = expected_improvement(mu, sd, best);
    let normal = Normal::new(mu, sd).expect("normal");
    let mut rng = stream(13, 4);
    let n = 10_000_000;
    let (mut s, mut s2) = (0.0, 0.0);
    for _ in 0..n {
        let g = (normal.sample(&mut rng) - best).max(0.0);
        s += g;
        s2 += g * g;
    }
    let m = s / n as f64;
    let se = ((s2 / n as f64 - m * m) / n as f64).sqrt();
    ((ei - m).abs() <= 3.0 * se, format!("EI {ei:.6} vs MC {m:.6} (SE {se:.1e})"))
}

fn oracle_harmonic() -> Result<(bool, String)> {
    let mut rng = stream(13, 5);
    let cfg = HarmonicConfig::default();
    let mut err: f64 = 0.0;
    for _ in 0..20 {
        let n = 10;
        let (g, adj) = random_digraph(&mut rng, n, 0.25);
        let lam: Vec<f64> = (0..n).map(|_| 2.0 * rng.random::<f64>() - 1.2).collect();
        let lyap: BTreeMap<NeuronId, f64> = lam.iter().enumerate().map(|(i, &v)| (NeuronId(i as u32), v)).collect();
        let l = build_lyapunov_matrix(&g, &lyap, &cfg)?;
        let undirected = |a: usize, b: usize| adj[a][b] || adj[b][a];
        for (&(i, j), &v) in &l.entries {
            let (i, j) = (i.0 as usize, j.0 as usize);
            // Multiset N(i) + N(j): node k appears once per endpoint it neighbours.
            let mult: Vec<f64> = (0..n).map(|k| undirected(i, k) as u8 as f64 + undirected(j, k) as u8 as f64).collect();
            let count: f64 = mult.iter().sum();
            let inv: f64 = (0..n).map(|k| mult[k] / (lam[k].abs() + cfg.eps_h)).sum();
            let mag = (count / inv - cfg.eps_h).max(0.0);
            let arith: f64 = (0..n).map(|k| mult[k] * lam[k]).sum::<f64>() / count;
            let oracle = if arith < 0.0 { -mag } else { mag };
            err = err.max((v - oracle).abs() / oracle.abs().max(1e-12));
        }
    }
    Ok((err <= 1e-12, format!("harmonic mean 20 random 10-node graphs max rel err {err:.1e}")))
}

fn c13_oracles() -> Result<Verdict> {
    let parts = [oracle_centrality(), oracle_rank()?, oracle_wasserstein()?, oracle_ei(), oracle_harmonic()?];
    verdict(parts.iter().all(|p| p.0), parts.iter().map(|p| p.1.as_str()).collect::<Vec<_>>().join("; "))
}

// ---------------------------------------------------------------------------
// 14. End-to-end determinism.

fn pipeline_reports(dir: &std::path::Path) -> Result<BTreeMap<String, Vec<u8>>> {
    let cfg = ExperimentConfig::parse(
        "[experiment]\nseed = 14\n[topology]\nn_total = 80\n[lnp]\niterations = 2\n[data]\ntrain_steps = 150\npredict_steps = 30\n",
    )?;
    cfg.validate()?;
    let stage_inv = |snapshot: Option<&str>| -> Result<Invocation> {
        Invocation::new(cfg.clone(), None, Some(dir.to_path_buf()), snapshot.map(|s| dir.join(s)), None)
    };
    cmd_build(&stage_inv(None)?)?;
    cmd_train(&stage_inv(Some("graph.json"))?)?;
    cmd_prune(&stage_inv(Some("trained.json"))?)?;
    let mut inv = stage_inv(Some("pruned.json"))?;
    inv.extended = true;
    inv.reference = Some(dir.join("trained.json"));
    cmd_evaluate(&inv)?;
    let mut files = BTreeMap::new();
    for entry in std::fs::read_dir(dir)? {
        let path = entry?.path();
        let name = path.file_name().expect("file").to_string_lossy().into_owned();
        let mut bytes = std::fs::read(&path)?;
        if name == "manifest.json" {
            // Wall-clock timestamps are the only run-dependent fields.
            let mut v: serde_json::Value = serde_json::from_slice(&bytes)?;
            v["started_unix"] = 0.into();
            v["finished_unix"] = 0.into();
            bytes = serde_json::to_vec(&v)?;
        }
        files.insert(name, bytes);
    }
    Ok(files)
}

fn c14_determinism() -> Result<Verdict> {
    let (a, b) = (tempfile::tempdir()?, tempfile::tempdir()?);
    let ra = pipeline_reports(a.path())?;
    let rb = pipeline_reports(b.path())?;
    let differing: Vec<&String> = ra.keys().filter(|k| rb.get(*k) != ra.get(*k)).collect();
    let same_names = ra.keys().eq(rb.keys());
    verdict(
        differing.is_empty() && same_names && ra.len() > 10,
        format!("build -> train -> prune -> evaluate twice: {} files, differing {:?}", ra.len(), differing),
    )
}

// ---------------------------------------------------------------------------

type CriterionFn = fn() -> Result<Verdict>;

fn main() {
    let selected: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let criteria: [(u32, &str, CriterionFn, Option<f64>); 14] = [
        (1, "covariance solve", c01_covariance, Some(1.0)),
        (2, "sparsification unbiasedness", c02_unbiased, Some(30.0)),
        (3, "quadratic-form preservation", c03_quadratic_form, Some(120.0)),
        (4, "STDP pair window", c04_stdp_pairs, None),
        (5, "LIF first-spike time", c05_first_spike, None),
        (6, "kernel validity", c06_kernel_validity, None),
        (7, "capacity: heterogeneous >= homogeneous", c07_capacity, Some(1200.0)),
        (8, "spikes: heterogeneous STDP <= homogeneous", c08_spikes, None),
        (9, "separation rank", c09_rank, None),
        (10, "LNP vs activity pruning", c10_lnp_vs_activity, Some(3600.0)),
        (11, "SOP accounting", c11_sops, None),
        (12, "BO sanity", c12_bo, None),
        (13, "oracles", c13_oracles, None),
        (14, "end-to-end determinism", c14_determinism, None),
    ];
    let mut failed = Vec::new();
    let mut ran = 0;
    for (id, name, f, limit) in criteria {
        if !selected.is_empty() && !selected.contains(&id) {
            continue;
        }
        ran += 1;
        let t = Instant::now();
        let outcome = std::panic::catch_unwind(f);
        let secs = t.elapsed().as_secs_f64();
        let (mut pass, mut detail) = match outcome {
            Ok(Ok(v)) => (v.pass, v.detail),
            Ok(Err(e)) => (false, format!("error: {e}")),
            Err(_) => (false, "panicked".to_string()),
        };
        if let Some(limit) = limit {
            if secs > limit {
                pass = false;
                detail.push_str(&format!("; runtime {secs:.1}s exceeds {limit}s"));
            }
        }
        println!("criterion {id:>2} {} [{name}] {detail} ({secs:.1}s)", if pass { "PASS" } else { "FAIL" });
        if !pass {
            failed.push(id);
        }
    }
    println!("acceptance: {} passed, {} failed {:?}", ran - failed.len(), failed.len(), failed);
    if !failed.is_empty() {
        std::process::exit(1);
    }
}
