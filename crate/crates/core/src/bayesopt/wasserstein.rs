//! Distances between parameter distributions: 1-D Wasserstein-1 by quantile
//! quadrature and an entropic (Sinkhorn) transport cost between clouds.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use crate::dist::{standard_gamma_quantile, ParamDist};
use crate::error::{Error, Result};

use super::quadrature::quantile_rule;

/// Upper bound on memoized standard profiles before the cache is reset.
const CACHE_LIMIT: usize = 8192;

/// Standard-gamma quantiles (unit scale) at every quadrature node.
pub fn standard_gamma_profile(k: f64) -> Result<Arc<Vec<f64>>> {
    static CACHE: OnceLock<Mutex<HashMap<u64, Arc<Vec<f64>>>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    if let Some(p) = cache.lock().expect("profile cache poisoned").get(&k.to_bits()) {
        return Ok(Arc::clone(p));
    }
    let (nodes, _) = quantile_rule();
    let profile: Arc<Vec<f64>> = Arc::new(nodes.iter().map(|&u| standard_gamma_quantile(k, u)).collect::<Result<_>>()?);
    let mut guard = cache.lock().expect("profile cache poisoned");
    if guard.len() >= CACHE_LIMIT {
        guard.clear();
    }
    guard.insert(k.to_bits(), Arc::clone(&profile));
    Ok(profile)
}

/// Quantile function of a distribution sampled at the quadrature nodes.
#[derive(Debug, Clone, PartialEq)]
pub enum QuantileProfile {
    Point(f64),
    Scaled { standard: Arc<Vec<f64>>, scale: f64 },
}

impl QuantileProfile {
    pub fn new(d: &ParamDist) -> Result<Self> {
        d.validate()?;
        Ok(match *d {
            ParamDist::Point { value } => QuantileProfile::Point(value),
            ParamDist::Gamma { shape, scale } => QuantileProfile::Scaled { standard: standard_gamma_profile(shape)?, scale },
        })
    }

    /// Quadrature estimate of the W1 distance between the two laws.
    pub fn distance(&self, other: &QuantileProfile) -> f64 {
        let (_, w) = quantile_rule();
        match (self, other) {
            (QuantileProfile::Point(a), QuantileProfile::Point(b)) => (a - b).abs(),
            (QuantileProfile::Point(a), QuantileProfile::Scaled { standard, scale })
            | (QuantileProfile::Scaled { standard, scale }, QuantileProfile::Point(a)) => {
                standard.iter().zip(w).map(|(q, w)| w * (a - scale * q).abs()).sum()
            }
            (QuantileProfile::Scaled { standard: p, scale: s }, QuantileProfile::Scaled { standard: q, scale: t }) => {
                if Arc::ptr_eq(p, q) {
                    // Same shape: the quantile difference never changes sign.
                    (s - t).abs() * p.iter().zip(w).map(|(a, w)| w * a).sum::<f64>()
                } else {
                    p.iter().zip(q.iter()).zip(w).map(|((a, b), w)| w * (s * a - t * b).abs()).sum()
                }
            }
        }
    }
}

/// `W1(p, q) = int_0^1 |F_p^-1(u) - F_q^-1(u)| du`.
pub fn wasserstein_1d(p: &ParamDist, q: &ParamDist) -> Result<f64> {
    if p == q {
        p.validate()?;
        return Ok(0.0);
    }
    Ok(QuantileProfile::new(p)?.distance(&QuantileProfile::new(q)?))
}

fn log_sum_exp(vals: impl Iterator<Item = f64>) -> f64 {
    let vals: Vec<f64> = vals.collect();
    let mx = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if mx == f64::NEG_INFINITY {
        return mx;
    }
    mx + vals.iter().map(|z| (z - mx).exp()).sum::<f64>().ln()
}

/// Log-domain Sinkhorn between two uniform empirical clouds under the L1
/// ground cost; returns the transport cost `<P, C>` of the entropic plan.
pub fn sinkhorn_distance(x: &[Vec<f64>], y: &[Vec<f64>], epsilon: f64, max_iter: usize, tol: f64) -> Result<f64> {
    let (n, m) = (x.len(), y.len());
    if n == 0 || m == 0 {
        return Err(Error::input("sinkhorn needs non-empty clouds"));
    }
    if !(epsilon > 0.0) {
        return Err(Error::config("sinkhorn epsilon must be positive"));
    }
    let cost: Vec<Vec<f64>> =
        x.iter().map(|a| y.iter().map(|b| a.iter().zip(b).map(|(p, q)| (p - q).abs()).sum()).collect()).collect();
    let log_a = -(n as f64).ln();
    let log_b = -(m as f64).ln();
    let mut f = vec![0.0; n];
    let mut g = vec![0.0; m];
    for _ in 0..max_iter {
        let mut change: f64 = 0.0;
        for i in 0..n {
            let nf = -epsilon * log_sum_exp((0..m).map(|j| (g[j] - cost[i][j]) / epsilon + log_b));
            change = change.max((nf - f[i]).abs());
            f[i] = nf;
        }
        for j in 0..m {
            let ng = -epsilon * log_sum_exp((0..n).map(|i| (f[i] - cost[i][j]) / epsilon + log_a));
            change = change.max((ng - g[j]).abs());
            g[j] = ng;
        }
        if change < tol {
            break;
        }
    }
    let mut total = 0.0;
    for i in 0..n {
        for j in 0..m {
            total += ((f[i] + g[j] - cost[i][j]) / epsilon + log_a + log_b).exp() * cost[i][j];
        }
    }
    if !total.is_finite() {
        return Err(Error::numeric("sinkhorn produced a non-finite cost"));
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use rand::Rng as _;

    #[test]
    fn identical_and_points() {
        let g = ParamDist::gamma(2.0, 3.0);
        assert_eq!(wasserstein_1d(&g, &g).unwrap(), 0.0);
        assert!((wasserstein_1d(&ParamDist::point(2.0), &ParamDist::point(5.5)).unwrap() - 3.5).abs() < 1e-12);
        // Same shape: W1 = k |theta1 - theta2|.
        let w = wasserstein_1d(&ParamDist::gamma(2.0, 1.0), &ParamDist::gamma(2.0, 3.0)).unwrap();
        assert!((w - 4.0).abs() < 1e-3, "{w}");
        // Point vs gamma: E|X - a|.
        let w = wasserstein_1d(&ParamDist::point(0.0), &ParamDist::gamma(3.0, 2.0)).unwrap();
        assert!((w - 6.0).abs() < 1e-3, "{w}");
    }

    #[test]
    fn symmetric_across_shapes() {
        let p = ParamDist::gamma(1.5, 2.0);
        let q = ParamDist::gamma(6.0, 0.4);
        let a = wasserstein_1d(&p, &q).unwrap();
        assert_eq!(a, wasserstein_1d(&q, &p).unwrap());
        assert!(a > 0.0);
    }

    #[test]
    fn sinkhorn_identical_clouds_cost_nothing() {
        let mut rng = stream(4, 4);
        let x: Vec<Vec<f64>> = (0..5).map(|_| vec![rng.random::<f64>(), rng.random::<f64>()]).collect();
        assert!(sinkhorn_distance(&x, &x, 1e-3, 20_000, 1e-12).unwrap() < 1e-6);
        assert!(sinkhorn_distance(&x, &[], 1e-3, 10, 1e-12).is_err());
    }
}
