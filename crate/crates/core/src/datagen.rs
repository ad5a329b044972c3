//! Benchmark data: chaotic flows integrated with RK4 and synthetic
//! spike-pattern classification tasks.

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{stream, tags};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeSeries {
    pub dt: f64,
    /// Rows are time samples.
    pub data: Vec<Vec<f64>>,
}

impl TimeSeries {
    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn dims(&self) -> usize {
        self.data.first().map_or(0, Vec::len)
    }
}

/// Fast-variable coupling of the two-scale Lorenz96 system.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TwoScale {
    /// Fast variables per slow variable.
    pub j: usize,
    pub h: f64,
    pub c: f64,
    pub b: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "system", rename_all = "snake_case")]
pub enum ChaoticSystem {
    Lorenz63 { sigma: f64, rho: f64, beta: f64 },
    Lorenz96 { k: usize, forcing: f64, two_scale: Option<TwoScale> },
    Rossler { a: f64, b: f64, c: f64 },
}

impl ChaoticSystem {
    pub fn lorenz63() -> Self {
        ChaoticSystem::Lorenz63 { sigma: 10.0, rho: 28.0, beta: 8.0 / 3.0 }
    }

    pub fn lorenz96() -> Self {
        ChaoticSystem::Lorenz96 { k: 8, forcing: 8.0, two_scale: None }
    }

    pub fn rossler() -> Self {
        ChaoticSystem::Rossler { a: 0.2, b: 0.2, c: 5.7 }
    }

    /// Dimension of the integrated state (including fast variables).
    pub fn state_dim(&self) -> usize {
        match self {
            ChaoticSystem::Lorenz63 { .. } | ChaoticSystem::Rossler { .. } => 3,
            ChaoticSystem::Lorenz96 { k, two_scale, .. } => k + two_scale.map_or(0, |t| t.j * k),
        }
    }

    /// Dimension of the reported (slow) state.
    pub fn output_dim(&self) -> usize {
        match self {
            ChaoticSystem::Lorenz96 { k, .. } => *k,
            _ => 3,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            ChaoticSystem::Lorenz96 { k, two_scale, .. } => {
                if *k < 4 {
                    return Err(Error::config("lorenz96 needs dimension k >= 4"));
                }
                if let Some(t) = two_scale {
                    if t.j < 3 || !(t.b != 0.0) {
                        return Err(Error::config("two-scale lorenz96 needs j >= 3 and b != 0"));
                    }
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    /// Right-hand side of the flow.
    pub fn derivative(&self, x: &[f64], out: &mut [f64]) {
        match *self {
            ChaoticSystem::Lorenz63 { sigma, rho, beta } => {
                out[0] = sigma * (x[1] - x[0]);
                out[1] = x[0] * (rho - x[2]) - x[1];
                out[2] = x[0] * x[1] - beta * x[2];
            }
            ChaoticSystem::Rossler { a, b, c } => {
                out[0] = -x[1] - x[2];
                out[1] = x[0] + a * x[1];
                out[2] = b + x[2] * (x[0] - c);
            }
            ChaoticSystem::Lorenz96 { k, forcing, two_scale } => {
                let idx = |i: isize| i.rem_euclid(k as isize) as usize;
                for i in 0..k {
                    let ii = i as isize;
                    out[i] = (x[idx(ii + 1)] - x[idx(ii - 2)]) * x[idx(ii - 1)] - x[i] + forcing;
                }
                if let Some(ts) = two_scale {
                    let nf = ts.j * k;
                    let y = &x[k..];
                    let fy = |m: isize| y[m.rem_euclid(nf as isize) as usize];
                    let coupling = ts.h * ts.c / ts.b;
                    for i in 0..k {
                        let s: f64 = y[i * ts.j..(i + 1) * ts.j].iter().sum();
                        out[i] -= coupling * s;
                    }
                    for m in 0..nf {
                        let mm = m as isize;
                        out[k + m] = -ts.c * ts.b * fy(mm + 1) * (fy(mm + 2) - fy(mm - 1)) - ts.c * y[m] + coupling * x[m / ts.j];
                    }
                }
            }
        }
    }

    /// Trace of the Jacobian at `x`.
    pub fn divergence(&self, x: &[f64]) -> f64 {
        match *self {
            ChaoticSystem::Lorenz63 { sigma, beta, .. } => -(sigma + 1.0 + beta),
            ChaoticSystem::Rossler { a, c, .. } => a + (x[0] - c),
            ChaoticSystem::Lorenz96 { k, two_scale, .. } => -(k as f64) - two_scale.map_or(0.0, |t| t.c * (t.j * k) as f64),
        }
    }
}

/// One classical RK4 step.
pub fn rk4_step(system: &ChaoticSystem, x: &mut [f64], dt: f64) {
    let n = x.len();
    let mut k1 = vec![0.0; n];
    let mut k2 = vec![0.0; n];
    let mut k3 = vec![0.0; n];
    let mut k4 = vec![0.0; n];
    let mut tmp = vec![0.0; n];
    system.derivative(x, &mut k1);
    for i in 0..n {
        tmp[i] = x[i] + 0.5 * dt * k1[i];
    }
    system.derivative(&tmp, &mut k2);
    for i in 0..n {
        tmp[i] = x[i] + 0.5 * dt * k2[i];
    }
    system.derivative(&tmp, &mut k3);
    for i in 0..n {
        tmp[i] = x[i] + dt * k3[i];
    }
    system.derivative(&tmp, &mut k4);
    for i in 0..n {
        x[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChaoticConfig {
    pub system: ChaoticSystem,
    pub dt: f64,
    pub n_steps: usize,
    pub washout: usize,
    pub seed: u64,
    /// Explicit initial state; drawn from the seed when absent.
    pub initial: Option<Vec<f64>>,
}

impl ChaoticConfig {
    pub fn new(system: ChaoticSystem, dt: f64, n_steps: usize, washout: usize, seed: u64) -> Self {
        ChaoticConfig { system, dt, n_steps, washout, seed, initial: None }
    }

    pub fn validate(&self) -> Result<()> {
        self.system.validate()?;
        if !(self.dt > 0.0) {
            return Err(Error::config("integration dt must be positive"));
        }
        if self.washout >= self.n_steps {
            return Err(Error::config(format!("washout {} must be below n_steps {}", self.washout, self.n_steps)));
        }
        if let Some(x0) = &self.initial {
            if x0.len() != self.system.state_dim() {
                return Err(Error::config(format!("initial state has {} entries, expected {}", x0.len(), self.system.state_dim())));
            }
        }
        Ok(())
    }

    fn initial_state(&self) -> Vec<f64> {
        if let Some(x0) = &self.initial {
            return x0.clone();
        }
        let mut rng = stream(self.seed, tags::SIGNAL);
        let mut jitter = |s: f64| s * (rng.random::<f64>() - 0.5);
        match &self.system {
            ChaoticSystem::Lorenz63 { .. } => vec![1.0 + jitter(2.0), 1.0 + jitter(2.0), 20.0 + jitter(2.0)],
            ChaoticSystem::Rossler { .. } => vec![1.0 + jitter(2.0), 1.0 + jitter(2.0), jitter(0.2).abs()],
            ChaoticSystem::Lorenz96 { k, forcing, two_scale } => {
                let mut x: Vec<f64> = (0..*k).map(|_| forcing + jitter(2.0)).collect();
                if let Some(t) = two_scale {
                    x.extend((0..t.j * k).map(|_| jitter(0.2)));
                }
                x
            }
        }
    }
}

/// Integrate and return the slow state at steps `washout..n_steps`.
pub fn generate(config: &ChaoticConfig) -> Result<TimeSeries> {
    config.validate()?;
    let mut x = config.initial_state();
    let out_dim = config.system.output_dim();
    let mut data = Vec::with_capacity(config.n_steps - config.washout);
    for step in 0..config.n_steps {
        if step >= config.washout {
            data.push(x[..out_dim].to_vec());
        }
        rk4_step(&config.system, &mut x, config.dt);
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::numeric(format!("integration diverged at step {step}")));
        }
    }
    Ok(TimeSeries { dt: config.dt, data })
}

fn expect_system(config: &ChaoticConfig, name: &str, ok: bool) -> Result<TimeSeries> {
    if !ok {
        return Err(Error::config(format!("config does not describe a {name} system")));
    }
    generate(config)
}

pub fn generate_lorenz63(config: &ChaoticConfig) -> Result<TimeSeries> {
    expect_system(config, "lorenz63", matches!(config.system, ChaoticSystem::Lorenz63 { .. }))
}

pub fn generate_lorenz96(config: &ChaoticConfig) -> Result<TimeSeries> {
    expect_system(config, "lorenz96", matches!(config.system, ChaoticSystem::Lorenz96 { .. }))
}

pub fn generate_rossler(config: &ChaoticConfig) -> Result<TimeSeries> {
    expect_system(config, "rossler", matches!(config.system, ChaoticSystem::Rossler { .. }))
}

/// Mean-removed series with the per-dimension (population) standard deviation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalized {
    pub data: Vec<Vec<f64>>,
    pub mean: Vec<f64>,
    pub sigma: Vec<f64>,
}

impl Normalized {
    pub fn denormalize(&self, rows: &[Vec<f64>]) -> Vec<Vec<f64>> {
        rows.iter().map(|r| r.iter().zip(&self.mean).map(|(x, m)| x + m).collect()).collect()
    }
}

pub fn normalize_series(series: &[Vec<f64>]) -> Result<Normalized> {
    if series.len() < 2 {
        return Err(Error::input("normalization needs at least 2 samples"));
    }
    let d = series[0].len();
    if series.iter().any(|r| r.len() != d) {
        return Err(Error::input("ragged series"));
    }
    let n = series.len() as f64;
    let mean: Vec<f64> = (0..d).map(|i| series.iter().map(|r| r[i]).sum::<f64>() / n).collect();
    let sigma: Vec<f64> = (0..d).map(|i| (series.iter().map(|r| (r[i] - mean[i]).powi(2)).sum::<f64>() / n).sqrt()).collect();
    if let Some(i) = sigma.iter().position(|&s| !(s > 0.0)) {
        return Err(Error::input(format!("dimension {i} has zero variance")));
    }
    let data = series.iter().map(|r| r.iter().zip(&mean).map(|(x, m)| x - m).collect()).collect();
    Ok(Normalized { data, mean, sigma })
}

/// Affine map of each dimension onto `[0, 1]` fitted on a reference window
/// with a relative margin; values outside the fitted range are clipped.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnitScaler {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl UnitScaler {
    pub fn fit(rows: &[Vec<f64>], margin: f64) -> Result<Self> {
        let d = rows.first().map_or(0, Vec::len);
        if d == 0 {
            return Err(Error::input("cannot fit a scaler on an empty series"));
        }
        let mut lo = vec![f64::INFINITY; d];
        let mut hi = vec![f64::NEG_INFINITY; d];
        for r in rows {
            for i in 0..d {
                lo[i] = lo[i].min(r[i]);
                hi[i] = hi[i].max(r[i]);
            }
        }
        for i in 0..d {
            let span = (hi[i] - lo[i]).max(1e-12);
            lo[i] -= margin * span;
            hi[i] += margin * span;
        }
        Ok(UnitScaler { lo, hi })
    }

    pub fn transform(&self, rows: &[Vec<f64>]) -> Vec<Vec<f64>> {
        rows.iter()
            .map(|r| r.iter().enumerate().map(|(i, x)| ((x - self.lo[i]) / (self.hi[i] - self.lo[i])).clamp(0.0, 1.0)).collect())
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticClassTask {
    pub n_classes: usize,
    pub n_channels: usize,
    /// Std of the Gaussian noise added to the template per trial.
    pub noise: f64,
    pub trials_per_class: usize,
    pub test_fraction: f64,
    /// Explicit templates; random ones in `[0, 1]` are drawn when absent.
    pub templates: Option<Vec<Vec<f64>>>,
}

impl Default for SyntheticClassTask {
    fn default() -> Self {
        SyntheticClassTask { n_classes: 4, n_channels: 20, noise: 0.1, trials_per_class: 10, test_fraction: 0.3, templates: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trial {
    pub pattern: Vec<f64>,
    pub label: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationData {
    pub templates: Vec<Vec<f64>>,
    pub train: Vec<Trial>,
    pub test: Vec<Trial>,
}

pub fn make_classification_task(spec: &SyntheticClassTask, seed: u64) -> Result<ClassificationData> {
    if spec.n_classes == 0 || spec.n_channels == 0 || spec.trials_per_class == 0 {
        return Err(Error::config("classification task needs classes, channels and trials"));
    }
    if !(spec.noise >= 0.0) || !(0.0..1.0).contains(&spec.test_fraction) {
        return Err(Error::config("noise must be >= 0 and test_fraction in [0, 1)"));
    }
    let mut rng = stream(seed, tags::TASK);
    let templates = match &spec.templates {
        Some(t) => {
            if t.len() != spec.n_classes || t.iter().any(|r| r.len() != spec.n_channels) {
                return Err(Error::config("template shape does not match n_classes x n_channels"));
            }
            if t.iter().flatten().any(|x| !(0.0..=1.0).contains(x)) {
                return Err(Error::config("templates must lie in [0, 1]"));
            }
            t.clone()
        }
        None => (0..spec.n_classes).map(|_| (0..spec.n_channels).map(|_| rng.random::<f64>()).collect()).collect(),
    };
    let normal = Normal::new(0.0, spec.noise.max(0.0)).map_err(|e| Error::config(e.to_string()))?;
    let n_test = (spec.test_fraction * spec.trials_per_class as f64).round() as usize;
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (label, tpl) in templates.iter().enumerate() {
        let mut trials: Vec<Trial> = (0..spec.trials_per_class)
            .map(|_| Trial {
                pattern: tpl
                    .iter()
                    .map(|&x| if spec.noise > 0.0 { (x + normal.sample(&mut rng)).clamp(0.0, 1.0) } else { x })
                    .collect(),
                label,
            })
            .collect();
        trials.shuffle(&mut rng);
        test.extend(trials.drain(..n_test));
        train.extend(trials);
    }
    train.shuffle(&mut rng);
    test.shuffle(&mut rng);
    Ok(ClassificationData { templates, train, test })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(system: ChaoticSystem, dt: f64, n: usize) -> ChaoticConfig {
        ChaoticConfig::new(system, dt, n, 0, 3)
    }

    #[test]
    fn lorenz63_origin_is_equilibrium() {
        let mut c = cfg(ChaoticSystem::lorenz63(), 0.01, 100);
        c.initial = Some(vec![0.0; 3]);
        let ts = generate_lorenz63(&c).unwrap();
        assert!(ts.data.iter().all(|r| r.iter().all(|&v| v == 0.0)));
        assert_eq!(ChaoticSystem::lorenz63().divergence(&[3.0, 1.0, 2.0]), -(10.0 + 1.0 + 8.0 / 3.0));
    }

    #[test]
    fn lorenz96_fixed_point_and_shift() {
        let mut c = cfg(ChaoticSystem::lorenz96(), 0.01, 50);
        c.initial = Some(vec![8.0; 8]);
        assert!(generate_lorenz96(&c).unwrap().data.iter().all(|r| r.iter().all(|&v| v == 8.0)));
        let x0: Vec<f64> = (0..8).map(|i| 8.0 + 0.1 * i as f64 * (i % 3) as f64).collect();
        let mut shifted = x0.clone();
        shifted.rotate_right(1);
        c.initial = Some(x0);
        let a = generate(&c).unwrap();
        c.initial = Some(shifted);
        let b = generate(&c).unwrap();
        for (ra, rb) in a.data.iter().zip(&b.data) {
            let mut r = ra.clone();
            r.rotate_right(1);
            assert_eq!(&r, rb);
        }
    }

    #[test]
    fn rossler_origin_moves() {
        let mut d = [0.0; 3];
        ChaoticSystem::rossler().derivative(&[0.0; 3], &mut d);
        assert_eq!(d, [0.0, 0.0, 0.2]);
        assert!((ChaoticSystem::rossler().divergence(&[1.5, 0.0, 0.0]) - (0.2 + 1.5 - 5.7)).abs() < 1e-15);
    }

    #[test]
    fn two_scale_runs() {
        let sys = ChaoticSystem::Lorenz96 { k: 4, forcing: 10.0, two_scale: Some(TwoScale { j: 4, h: 1.0, c: 10.0, b: 10.0 }) };
        let ts = generate(&ChaoticConfig::new(sys, 0.001, 500, 100, 1)).unwrap();
        assert_eq!(ts.len(), 400);
        assert_eq!(ts.dims(), 4);
    }

    #[test]
    fn config_errors() {
        assert!(generate(&ChaoticConfig::new(ChaoticSystem::lorenz63(), 0.01, 10, 10, 0)).is_err());
        let bad = ChaoticSystem::Lorenz96 { k: 3, forcing: 8.0, two_scale: None };
        assert!(generate(&ChaoticConfig::new(bad, 0.01, 10, 0, 0)).is_err());
        assert!(generate_rossler(&ChaoticConfig::new(ChaoticSystem::lorenz63(), 0.01, 10, 0, 0)).is_err());
    }

    #[test]
    fn normalization() {
        let s = vec![vec![1.0, 5.0], vec![3.0, 5.0]];
        assert!(normalize_series(&s).is_err());
        let s = vec![vec![1.0, 5.0], vec![3.0, 4.0], vec![8.0, -1.0]];
        let n = normalize_series(&s).unwrap();
        let m0 = 4.0;
        let s0 = (((1.0f64 - m0).powi(2) + (3.0f64 - m0).powi(2) + (8.0f64 - m0).powi(2)) / 3.0).sqrt();
        assert!((n.sigma[0] - s0).abs() < 1e-14);
        let back = n.denormalize(&n.data);
        for (a, b) in back.iter().flatten().zip(s.iter().flatten()) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn classification_split() {
        let spec = SyntheticClassTask { n_classes: 3, trials_per_class: 10, test_fraction: 0.3, noise: 0.0, ..Default::default() };
        let d = make_classification_task(&spec, 4).unwrap();
        for c in 0..3 {
            assert_eq!(d.test.iter().filter(|t| t.label == c).count(), 3);
            assert_eq!(d.train.iter().filter(|t| t.label == c).count(), 7);
            assert!(d.train.iter().chain(&d.test).filter(|t| t.label == c).all(|t| t.pattern == d.templates[c]));
        }
    }
}
