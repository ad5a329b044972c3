//! Gaussian-process regression with a Matern kernel on distances between
//! distribution sets (zero prior mean).

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};

use super::kernel::{matern, KernelHyper};
use super::set::{ParamDistributionSet, SetProfile};

/// Default diagonal jitter.
pub const DEFAULT_JITTER: f64 = 1e-8;
/// Jitter is escalated by factors of ten up to this multiple of the variance.
pub const MAX_JITTER_FRACTION: f64 = 1e-2;

/// A fitted GP over an abstract point set described by its distance matrix.
#[derive(Debug, Clone)]
pub struct GpCore {
    pub hyper: KernelHyper,
    /// Jitter actually used after escalation.
    pub jitter: f64,
    chol: Cholesky<f64, Dyn>,
    alpha: DVector<f64>,
    values: DVector<f64>,
}

impl GpCore {
    /// Fit from pairwise distances between observed points.
    pub fn fit(distances: &DMatrix<f64>, values: &[f64], hyper: KernelHyper, jitter: f64) -> Result<Self> {
        hyper.validate()?;
        let n = values.len();
        if n == 0 {
            return Err(Error::input("GP needs at least one observation"));
        }
        if distances.nrows() != n || distances.ncols() != n {
            return Err(Error::input("GP distance matrix does not match the observations"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::numeric("GP observations must be finite"));
        }
        if !(jitter >= 0.0) {
            return Err(Error::config("GP jitter must be >= 0"));
        }
        let mut gram = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..=i {
                let k = matern(distances[(i, j)], &hyper)?;
                gram[(i, j)] = k;
                gram[(j, i)] = k;
            }
        }
        let max_jitter = MAX_JITTER_FRACTION * hyper.variance;
        let mut jit = jitter;
        loop {
            let mut g = gram.clone();
            for i in 0..n {
                g[(i, i)] += jit;
            }
            if let Some(chol) = Cholesky::new(g) {
                let y = DVector::from_column_slice(values);
                let alpha = chol.solve(&y);
                return Ok(GpCore { hyper, jitter: jit, chol, alpha, values: y });
            }
            jit = if jit == 0.0 { DEFAULT_JITTER * hyper.variance } else { jit * 10.0 };
            if jit > max_jitter {
                return Err(Error::numeric("GP Gram matrix is not positive definite even after jitter escalation"));
            }
        }
    }

    pub fn n_obs(&self) -> usize {
        self.values.len()
    }

    /// Posterior `(mean, std)` at a query with the given distances to the
    /// observations.
    pub fn predict(&self, dist_to_obs: &[f64]) -> Result<(f64, f64)> {
        if dist_to_obs.len() != self.n_obs() {
            return Err(Error::input("query distance vector does not match the observations"));
        }
        let kstar = DVector::from_iterator(
            dist_to_obs.len(),
            dist_to_obs.iter().map(|&d| matern(d, &self.hyper)).collect::<Result<Vec<_>>>()?,
        );
        let mean = kstar.dot(&self.alpha);
        let v = self.chol.l_dirty().solve_lower_triangular(&kstar).ok_or_else(|| Error::numeric("singular Cholesky factor"))?;
        let var = (self.hyper.variance - v.dot(&v)).max(0.0);
        Ok((mean, var.sqrt()))
    }

    /// `log p(y) = -y^T alpha / 2 - sum log L_ii - n log(2 pi) / 2`.
    pub fn log_marginal_likelihood(&self) -> f64 {
        let n = self.n_obs() as f64;
        let l = self.chol.l_dirty();
        let logdet: f64 = (0..self.n_obs()).map(|i| l[(i, i)].ln()).sum();
        -0.5 * self.values.dot(&self.alpha) - logdet - 0.5 * n * (2.0 * std::f64::consts::PI).ln()
    }
}

/// A GP whose inputs are distribution sets.
#[derive(Debug, Clone)]
pub struct GpState {
    pub points: Vec<ParamDistributionSet>,
    pub profiles: Vec<SetProfile>,
    pub values: Vec<f64>,
    pub core: GpCore,
}

/// Pairwise marginal-sum W1 distances.
pub fn distance_matrix(profiles: &[SetProfile]) -> DMatrix<f64> {
    let n = profiles.len();
    let mut d = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..i {
            let v = profiles[i].distance(&profiles[j]);
            d[(i, j)] = v;
            d[(j, i)] = v;
        }
    }
    d
}

pub fn gp_fit(points: &[ParamDistributionSet], values: &[f64], hyper: KernelHyper, jitter: f64) -> Result<GpState> {
    if points.len() != values.len() {
        return Err(Error::input("GP points and values differ in length"));
    }
    let profiles: Vec<SetProfile> = points.iter().map(SetProfile::new).collect::<Result<_>>()?;
    let core = GpCore::fit(&distance_matrix(&profiles), values, hyper, jitter)?;
    Ok(GpState { points: points.to_vec(), profiles, values: values.to_vec(), core })
}

pub fn gp_predict(state: &GpState, query: &ParamDistributionSet) -> Result<(f64, f64)> {
    let q = SetProfile::new(query)?;
    let d: Vec<f64> = state.profiles.iter().map(|p| p.distance(&q)).collect();
    state.core.predict(&d)
}
