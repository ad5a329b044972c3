//! The optimization loop: space-filling start, GP fit with the length scale
//! picked by marginal likelihood, EI maximized over random candidates.

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dist::ParamDist;
use crate::error::{Error, Result};
use crate::rng::{stream, tags, Rng};

use super::ei::expected_improvement;
use super::gp::{distance_matrix, GpCore};
use super::kernel::KernelHyper;
use super::set::{ParamDistributionSet, SetProfile, MARGINALS};

/// Smallest accepted evaluation budget.
pub const MIN_BUDGET: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Range {
    pub lo: f64,
    pub hi: f64,
}

impl Range {
    pub fn new(lo: f64, hi: f64) -> Self {
        Range { lo, hi }
    }

    pub fn fixed(v: f64) -> Self {
        Range { lo: v, hi: v }
    }

    fn validate(&self, what: &str) -> Result<()> {
        if self.lo > 0.0 && self.hi >= self.lo && self.hi.is_finite() {
            Ok(())
        } else {
            Err(Error::config(format!("{what}: range needs 0 < lo <= hi (got [{}, {}])", self.lo, self.hi)))
        }
    }
}

/// Box over the gamma hyperparameters of one marginal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MarginalBounds {
    pub shape: Range,
    pub scale: Range,
}

/// One searched coordinate: a log-scaled hyperparameter of one marginal.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Coord {
    marginal: usize,
    is_shape: bool,
    lo: f64,
    hi: f64,
}

/// Search box in log space; marginals without bounds stay at `base`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchSpace {
    pub base: ParamDistributionSet,
    pub bounds: [Option<MarginalBounds>; 6],
    /// Shapes are snapped to this many log-spaced levels so that quantile
    /// profiles can be shared between candidates.
    pub shape_levels: usize,
}

impl SearchSpace {
    /// Every marginal searched with shapes in `shape` and scales within a
    /// factor `scale_factor` of the base scale.
    pub fn around(base: ParamDistributionSet, shape: Range, scale_factor: f64) -> Result<Self> {
        Self::around_subset(base, &[0, 1, 2, 3, 4, 5], shape, scale_factor)
    }

    pub fn around_subset(base: ParamDistributionSet, which: &[usize], shape: Range, scale_factor: f64) -> Result<Self> {
        if !(scale_factor >= 1.0) {
            return Err(Error::config("search scale factor must be >= 1"));
        }
        let mut bounds = [None; 6];
        for &i in which {
            let m = base.marginals().get(i).copied().ok_or_else(|| Error::config(format!("no marginal {i}")))?;
            let theta = match m {
                ParamDist::Gamma { scale, .. } => scale,
                ParamDist::Point { value } => value / shape.lo.max(1.0),
            };
            bounds[i] = Some(MarginalBounds { shape, scale: Range::new(theta / scale_factor, theta * scale_factor) });
        }
        let s = SearchSpace { base, bounds, shape_levels: 128 };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        self.base.validate()?;
        for (name, b) in MARGINALS.iter().zip(&self.bounds) {
            if let Some(b) = b {
                b.shape.validate(&format!("{name}.shape"))?;
                b.scale.validate(&format!("{name}.scale"))?;
            }
        }
        if self.shape_levels < 2 {
            return Err(Error::config("shape_levels must be >= 2"));
        }
        if self.coords().is_empty() {
            return Err(Error::config("search space has no free coordinate"));
        }
        Ok(())
    }

    fn coords(&self) -> Vec<Coord> {
        let mut out = Vec::new();
        for (i, b) in self.bounds.iter().enumerate() {
            if let Some(b) = b {
                for (is_shape, r) in [(true, b.shape), (false, b.scale)] {
                    if r.hi > r.lo {
                        out.push(Coord { marginal: i, is_shape, lo: r.lo.ln(), hi: r.hi.ln() });
                    }
                }
            }
        }
        out
    }

    fn snap_shape(&self, c: &Coord, x: f64) -> f64 {
        let step = (c.hi - c.lo) / (self.shape_levels - 1) as f64;
        let k = ((x - c.lo) / step).round();
        if k <= 0.0 {
            c.lo
        } else if k >= (self.shape_levels - 1) as f64 {
            c.hi
        } else {
            c.lo + k * step
        }
    }

    /// Map log coordinates to a distribution set (clamped, shapes snapped).
    fn decode(&self, coords: &[Coord], x: &[f64]) -> ParamDistributionSet {
        let mut m = self.base.marginals();
        for (i, b) in self.bounds.iter().enumerate() {
            if let Some(b) = b {
                let (k0, t0) = match m[i] {
                    ParamDist::Gamma { shape, scale } => (shape, scale),
                    ParamDist::Point { value } => (b.shape.lo, value / b.shape.lo),
                };
                m[i] = ParamDist::Gamma { shape: k0.clamp(b.shape.lo, b.shape.hi), scale: t0.clamp(b.scale.lo, b.scale.hi) };
            }
        }
        for (c, &v) in coords.iter().zip(x) {
            let v = v.clamp(c.lo, c.hi);
            if let ParamDist::Gamma { shape, scale } = &mut m[c.marginal] {
                if c.is_shape {
                    *shape = self.snap_shape(c, v).exp();
                } else {
                    *scale = v.exp();
                }
            }
        }
        ParamDistributionSet::from_marginals(m)
    }

    /// The base set clamped into the box (not snapped).
    fn start_point(&self) -> ParamDistributionSet {
        self.decode(&[], &[])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoConfig {
    pub budget: usize,
    pub n_initial: usize,
    pub n_candidates: usize,
    /// Matern smoothness; 1/2 is the order that stays positive definite for
    /// every length scale under the L1-type W1 metric.
    pub smoothness: f64,
    /// Observation-noise variance on the standardized objective.
    pub noise: f64,
    /// Length scales tried, as multiples of the median observed distance.
    pub length_scale_multipliers: Vec<f64>,
    /// Perturbation std of local candidates, as a fraction of each log range.
    pub perturb_sigma: f64,
    /// Local candidates are drawn around this many of the best points.
    pub top_k: usize,
}

impl Default for BoConfig {
    fn default() -> Self {
        BoConfig {
            budget: 50,
            n_initial: 8,
            n_candidates: 1024,
            smoothness: 0.5,
            noise: 1e-6,
            length_scale_multipliers: vec![0.25, 0.5, 1.0, 2.0, 4.0],
            perturb_sigma: 0.1,
            top_k: 5,
        }
    }
}

impl BoConfig {
    pub fn validate(&self) -> Result<()> {
        if self.budget < MIN_BUDGET {
            return Err(Error::config(format!("bo budget must be >= {MIN_BUDGET} (got {})", self.budget)));
        }
        if self.n_initial == 0 || self.n_candidates == 0 || self.top_k == 0 {
            return Err(Error::config("bo n_initial, n_candidates and top_k must be positive"));
        }
        if !(self.smoothness > 0.0 && self.noise >= 0.0 && self.perturb_sigma > 0.0) {
            return Err(Error::config("bo smoothness and perturb_sigma must be positive and noise >= 0"));
        }
        if self.length_scale_multipliers.is_empty() || self.length_scale_multipliers.iter().any(|m| !(*m > 0.0)) {
            return Err(Error::config("bo length_scale_multipliers must be non-empty and positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoStage {
    Initial,
    Acquisition,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoTraceEntry {
    pub iter: usize,
    pub stage: BoStage,
    pub point: ParamDistributionSet,
    pub value: Option<f64>,
    pub error: Option<String>,
    pub best_so_far: Option<f64>,
    pub acquisition: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoOutcome {
    pub best: ParamDistributionSet,
    pub best_value: f64,
    pub trace: Vec<BoTraceEntry>,
    pub n_failures: usize,
}

fn latin_hypercube(rng: &mut Rng, coords: &[Coord], n: usize) -> Vec<Vec<f64>> {
    let mut pts = vec![vec![0.0; coords.len()]; n];
    for (d, c) in coords.iter().enumerate() {
        let mut strata: Vec<usize> = (0..n).collect();
        strata.shuffle(rng);
        for (p, s) in pts.iter_mut().zip(strata) {
            let u = (s as f64 + rng.random::<f64>()) / n as f64;
            p[d] = c.lo + u * (c.hi - c.lo);
        }
    }
    pts
}

fn median(mut v: Vec<f64>) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Log coordinates of a set (inverse of `decode` on the free coordinates).
fn encode(coords: &[Coord], x: &ParamDistributionSet) -> Vec<f64> {
    let m = x.marginals();
    coords
        .iter()
        .map(|c| match m[c.marginal] {
            ParamDist::Gamma { shape, scale } => (if c.is_shape { shape } else { scale }).ln().clamp(c.lo, c.hi),
            ParamDist::Point { .. } => c.lo,
        })
        .collect()
}

/// Maximize `objective` over the search space. Objective errors and
/// non-finite values are recorded as failures and excluded from the model.
pub fn bo_loop<F>(mut objective: F, space: &SearchSpace, cfg: &BoConfig, seed: u64) -> Result<BoOutcome>
where
    F: FnMut(&ParamDistributionSet) -> Result<f64>,
{
    cfg.validate()?;
    space.validate()?;
    let coords = space.coords();
    let mut rng = stream(seed, tags::BO);

    let mut design = vec![space.start_point()];
    let n0 = cfg.n_initial.min(cfg.budget);
    for x in latin_hypercube(&mut rng, &coords, n0.saturating_sub(1)) {
        design.push(space.decode(&coords, &x));
    }

    let mut trace: Vec<BoTraceEntry> = Vec::with_capacity(cfg.budget);
    // Successful observations.
    let mut obs_points: Vec<ParamDistributionSet> = Vec::new();
    let mut obs_profiles: Vec<SetProfile> = Vec::new();
    let mut obs_values: Vec<f64> = Vec::new();
    let mut best: Option<(ParamDistributionSet, f64)> = None;
    let mut n_failures = 0;

    let mut record = |point: ParamDistributionSet,
                      stage: BoStage,
                      acquisition: Option<f64>,
                      trace: &mut Vec<BoTraceEntry>,
                      obs_points: &mut Vec<ParamDistributionSet>,
                      obs_profiles: &mut Vec<SetProfile>,
                      obs_values: &mut Vec<f64>|
     -> Result<()> {
        let outcome = objective(&point).and_then(|v| {
            if v.is_finite() {
                Ok(v)
            } else {
                Err(Error::numeric(format!("objective returned {v}")))
            }
        });
        let (value, error) = match outcome {
            Ok(v) => {
                obs_points.push(point);
                obs_profiles.push(SetProfile::new(&point)?);
                obs_values.push(v);
                if best.as_ref().is_none_or(|(_, b)| v > *b) {
                    best = Some((point, v));
                }
                (Some(v), None)
            }
            Err(e) => {
                n_failures += 1;
                (None, Some(e.to_string()))
            }
        };
        trace.push(BoTraceEntry {
            iter: trace.len(),
            stage,
            point,
            value,
            error,
            best_so_far: best.as_ref().map(|(_, b)| *b),
            acquisition,
        });
        Ok(())
    };

    for p in design {
        record(p, BoStage::Initial, None, &mut trace, &mut obs_points, &mut obs_profiles, &mut obs_values)?;
    }

    while trace.len() < cfg.budget {
        let candidates = propose_candidates(space, &coords, cfg, &obs_points, &obs_values, &mut rng);
        let (next, acq) = if obs_values.is_empty() {
            (candidates[0], None)
        } else {
            match select_by_ei(&candidates, &obs_profiles, &obs_values, cfg)? {
                Some((i, ei)) => (candidates[i], Some(ei)),
                None => (candidates[0], None),
            }
        };
        record(next, BoStage::Acquisition, acq, &mut trace, &mut obs_points, &mut obs_profiles, &mut obs_values)?;
    }

    let (best, best_value) = best.ok_or_else(|| Error::numeric("every objective evaluation failed"))?;
    Ok(BoOutcome { best, best_value, trace, n_failures })
}

fn propose_candidates(
    space: &SearchSpace,
    coords: &[Coord],
    cfg: &BoConfig,
    obs_points: &[ParamDistributionSet],
    obs_values: &[f64],
    rng: &mut Rng,
) -> Vec<ParamDistributionSet> {
    let n_local = if obs_points.is_empty() { 0 } else { cfg.n_candidates / 2 };
    let n_global = cfg.n_candidates - n_local;
    let mut out = Vec::with_capacity(cfg.n_candidates);
    for _ in 0..n_global {
        let x: Vec<f64> = coords.iter().map(|c| c.lo + rng.random::<f64>() * (c.hi - c.lo)).collect();
        out.push(space.decode(coords, &x));
    }
    if n_local > 0 {
        let mut order: Vec<usize> = (0..obs_values.len()).collect();
        order.sort_by(|&a, &b| obs_values[b].total_cmp(&obs_values[a]).then(a.cmp(&b)));
        order.truncate(cfg.top_k);
        let centres: Vec<Vec<f64>> = order.iter().map(|&i| encode(coords, &obs_points[i])).collect();
        for j in 0..n_local {
            let centre = &centres[j % centres.len()];
            let x: Vec<f64> = coords
                .iter()
                .zip(centre)
                .map(|(c, &m)| {
                    let z: f64 = StandardNormal.sample(rng);
                    m + cfg.perturb_sigma * (c.hi - c.lo) * z
                })
                .collect();
            out.push(space.decode(coords, &x));
        }
    }
    out
}

/// Fit the surrogate on standardized values and return the candidate with
/// the largest EI (first index on ties).
fn select_by_ei(
    candidates: &[ParamDistributionSet],
    obs_profiles: &[SetProfile],
    obs_values: &[f64],
    cfg: &BoConfig,
) -> Result<Option<(usize, f64)>> {
    let n = obs_values.len() as f64;
    let mean = obs_values.iter().sum::<f64>() / n;
    let sd = (obs_values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
    let sd = if sd > 0.0 { sd } else { 1.0 };
    let y: Vec<f64> = obs_values.iter().map(|v| (v - mean) / sd).collect();
    let d = distance_matrix(obs_profiles);
    let mut off = Vec::new();
    for i in 0..obs_profiles.len() {
        for j in 0..i {
            off.push(d[(i, j)]);
        }
    }
    let med = median(off);
    let base = if med > 0.0 { med } else { 1.0 };
    let mut gp: Option<(GpCore, f64)> = None;
    for &m in &cfg.length_scale_multipliers {
        let hyper = KernelHyper { variance: 1.0, length_scale: m * base, smoothness: cfg.smoothness };
        if let Ok(core) = GpCore::fit(&d, &y, hyper, cfg.noise) {
            let lml = core.log_marginal_likelihood();
            if gp.as_ref().is_none_or(|(_, b)| lml > *b) {
                gp = Some((core, lml));
            }
        }
    }
    let Some((gp, _)) = gp else {
        return Ok(None);
    };
    let f_best = y.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut best: Option<(usize, f64)> = None;
    let mut dist = vec![0.0; obs_profiles.len()];
    for (i, c) in candidates.iter().enumerate() {
        let prof = SetProfile::new(c)?;
        for (dv, p) in dist.iter_mut().zip(obs_profiles) {
            *dv = p.distance(&prof);
        }
        let (mu, s) = gp.predict(&dist)?;
        let ei = expected_improvement(mu, s, f_best);
        if best.is_none_or(|(_, b)| ei > b) {
            best = Some((i, ei));
        }
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bayesopt::set::{set_distance, SetDistanceMode};

    fn small_cfg(budget: usize) -> BoConfig {
        BoConfig { budget, n_candidates: 128, ..BoConfig::default() }
    }

    #[test]
    fn constant_objective_keeps_first_point() {
        let space = SearchSpace::around(ParamDistributionSet::bio_default(), Range::new(1.0, 16.0), 4.0).unwrap();
        let out = bo_loop(|_| Ok(1.0), &space, &small_cfg(10), 3).unwrap();
        assert_eq!(out.best, ParamDistributionSet::bio_default());
        assert_eq!(out.trace.len(), 10);
        assert!(out.trace.iter().all(|t| t.best_so_far == Some(1.0)));
    }

    #[test]
    fn deterministic_and_failures_recorded() {
        let space = SearchSpace::around(ParamDistributionSet::bio_default(), Range::new(1.0, 16.0), 4.0).unwrap();
        let target = ParamDistributionSet::bio_default();
        let mut calls = 0;
        let obj = |x: &ParamDistributionSet| {
            calls += 1;
            if calls == 2 {
                return Err(Error::numeric("boom"));
            }
            Ok(-set_distance(x, &target, SetDistanceMode::MarginalSum)?)
        };
        let a = bo_loop(obj, &space, &small_cfg(12), 9).unwrap();
        let b = bo_loop(
            {
                let mut calls = 0;
                move |x: &ParamDistributionSet| {
                    calls += 1;
                    if calls == 2 {
                        return Err(Error::numeric("boom"));
                    }
                    Ok(-set_distance(x, &target, SetDistanceMode::MarginalSum)?)
                }
            },
            &space,
            &small_cfg(12),
            9,
        )
        .unwrap();
        assert_eq!(a, b);
        assert_eq!(a.n_failures, 1);
        assert!(a.trace[1].value.is_none() && a.trace[1].error.is_some());
        assert!(a.trace.windows(2).all(|w| w[1].best_so_far >= w[0].best_so_far));
    }

    #[test]
    fn rejects_small_budget() {
        let space = SearchSpace::around(ParamDistributionSet::bio_default(), Range::new(1.0, 16.0), 4.0).unwrap();
        assert!(bo_loop(|_| Ok(0.0), &space, &small_cfg(4), 0).is_err());
    }
}
