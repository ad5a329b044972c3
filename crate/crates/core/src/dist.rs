//! Parameter distributions used for heterogeneous neuron and synapse
//! parameters: gamma laws and the degenerate point mass that stands in for a
//! homogeneous population.

use rand::Rng as _;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use statrs::function::gamma::{gamma_lr, gamma_ur, ln_gamma};

use crate::error::{Error, Result};
use crate::rng::Rng;

/// Gamma law with shape `k` and scale `theta` (mean `k * theta`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GammaSpec {
    pub shape: f64,
    pub scale: f64,
}

impl GammaSpec {
    pub fn new(shape: f64, scale: f64) -> Result<Self> {
        let g = GammaSpec { shape, scale };
        g.validate()?;
        Ok(g)
    }

    /// Gamma law with the given mean and coefficient of variation.
    pub fn from_mean_cv(mean: f64, cv: f64) -> Result<Self> {
        if !(mean > 0.0 && cv > 0.0) {
            return Err(Error::config(format!(
                "gamma mean and cv must be positive (got {mean}, {cv})"
            )));
        }
        let shape = 1.0 / (cv * cv);
        GammaSpec::new(shape, mean / shape)
    }

    pub fn validate(&self) -> Result<()> {
        if self.shape > 0.0 && self.scale > 0.0 && self.shape.is_finite() && self.scale.is_finite() {
            Ok(())
        } else {
            Err(Error::config(format!(
                "gamma spec needs shape > 0 and scale > 0 (got k={}, theta={})",
                self.shape, self.scale
            )))
        }
    }

    pub fn mean(&self) -> f64 {
        self.shape * self.scale
    }

    pub fn variance(&self) -> f64 {
        self.shape * self.scale * self.scale
    }

    pub fn quantile(&self, u: f64) -> Result<f64> {
        Ok(self.scale * standard_gamma_quantile(self.shape, u)?)
    }
}

/// A per-parameter law: either a fixed value or a gamma distribution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ParamDist {
    Point { value: f64 },
    Gamma { shape: f64, scale: f64 },
}

impl ParamDist {
    pub fn point(value: f64) -> Self {
        ParamDist::Point { value }
    }

    pub fn gamma(shape: f64, scale: f64) -> Self {
        ParamDist::Gamma { shape, scale }
    }

    pub fn as_gamma(&self) -> Option<GammaSpec> {
        match *self {
            ParamDist::Gamma { shape, scale } => Some(GammaSpec { shape, scale }),
            ParamDist::Point { .. } => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            ParamDist::Point { value } if value.is_finite() => Ok(()),
            ParamDist::Point { value } => Err(Error::config(format!("point mass at non-finite value {value}"))),
            ParamDist::Gamma { shape, scale } => GammaSpec { shape, scale }.validate(),
        }
    }

    pub fn mean(&self) -> f64 {
        match *self {
            ParamDist::Point { value } => value,
            ParamDist::Gamma { shape, scale } => shape * scale,
        }
    }

    pub fn variance(&self) -> f64 {
        match *self {
            ParamDist::Point { .. } => 0.0,
            ParamDist::Gamma { shape, scale } => shape * scale * scale,
        }
    }

    pub fn is_degenerate(&self) -> bool {
        matches!(self, ParamDist::Point { .. })
    }

    pub fn sample(&self, rng: &mut Rng) -> f64 {
        match *self {
            ParamDist::Point { value } => value,
            ParamDist::Gamma { shape, scale } => match Gamma::new(shape, scale) {
                Ok(g) => g.sample(rng),
                // Invalid specs are rejected by `validate`; keep sampling total.
                Err(_) => shape * scale,
            },
        }
    }

    pub fn quantile(&self, u: f64) -> Result<f64> {
        match *self {
            ParamDist::Point { value } => Ok(value),
            ParamDist::Gamma { shape, scale } => GammaSpec { shape, scale }.quantile(u),
        }
    }
}

/// Uniform draw on the half-open interval `(0, hi]`.
pub fn uniform_open_closed(rng: &mut Rng, hi: f64) -> f64 {
    let u: f64 = rng.random();
    hi * (1.0 - u)
}

/// Quantile of Gamma(k, 1) by safeguarded Halley iteration.
///
/// The lower tail is solved against the regularized lower incomplete gamma
/// function and the upper tail against its complement, so both ends keep full
/// relative precision.
pub fn standard_gamma_quantile(k: f64, u: f64) -> Result<f64> {
    if !(k > 0.0) || !k.is_finite() {
        return Err(Error::numeric(format!("gamma quantile: invalid shape {k}")));
    }
    if !(0.0..=1.0).contains(&u) {
        return Err(Error::numeric(format!("gamma quantile: probability {u} outside [0, 1]")));
    }
    if u == 0.0 {
        return Ok(0.0);
    }
    if u == 1.0 {
        return Ok(f64::INFINITY);
    }
    let lg = ln_gamma(k);
    let upper = u > 0.5;
    let target = if upper { 1.0 - u } else { u };

    let mut x = initial_guess(k, u, lg);
    let (mut lo, mut hi) = (0.0_f64, f64::INFINITY);
    for _ in 0..200 {
        let f = if upper { target - gamma_ur(k, x) } else { gamma_lr(k, x) - target };
        // f is increasing in x in both branches.
        if f > 0.0 {
            hi = hi.min(x);
        } else {
            lo = lo.max(x);
        }
        let log_pdf = (k - 1.0) * x.ln() - x - lg;
        let pdf = log_pdf.exp();
        let mut next = if pdf > 0.0 && pdf.is_finite() {
            let newton = f / pdf;
            let curvature = (k - 1.0) / x - 1.0;
            let denom = 1.0 - 0.5 * newton * curvature;
            let step = if denom.abs() > 0.1 { newton / denom } else { newton };
            x - step
        } else {
            f64::NAN
        };
        if !(next > lo && next < hi) || !next.is_finite() {
            next = if hi.is_finite() { 0.5 * (lo + hi) } else { (2.0 * x).max(lo * 2.0 + 1e-300) };
        }
        if (next - x).abs() <= 4.0 * f64::EPSILON * x.abs() {
            return Ok(next);
        }
        x = next;
    }
    if x.is_finite() && x > 0.0 {
        Ok(x)
    } else {
        Err(Error::numeric(format!("gamma quantile did not converge (k={k}, u={u})")))
    }
}

fn initial_guess(k: f64, u: f64, lg: f64) -> f64 {
    let z = Normal::standard().inverse_cdf(u);
    if k >= 1.0 {
        let c = 1.0 / (9.0 * k);
        let wh = k * (1.0 - c + z * c.sqrt()).powi(3);
        if wh > 0.0 {
            return wh;
        }
    }
    // Small-x series P(k, x) ~ x^k / Gamma(k + 1).
    let small = ((u.ln() + lg + k.ln()) / k).exp();
    if small.is_finite() && small > 0.0 {
        small
    } else {
        k.max(1e-3)
    }
}
