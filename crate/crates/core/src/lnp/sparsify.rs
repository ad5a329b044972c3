//! Covariance-weighted probabilistic synapse pruning.
//!
//! For an off-diagonal entry coupling presynaptic `i` into `j`:
//! `p_ij = rho |l_ij| (S_ii + S_jj - 2 S_ij)` for excitatory `i` and
//! `p_ij = rho |l_ij| (S_ii + S_jj + 2 S_ij)` for inhibitory `i`, clamped to
//! `[p_min, 1]`. The entry survives with probability `p_ij` and is then
//! rescaled by `1 / p_ij`, so `E[A_sparse] = A`.

use nalgebra::{DMatrix, DVector};
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::topology::Sign;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiagonalMode {
    /// Keep `A_ii`.
    Retain,
    /// `A_ii - Delta_i` with `Delta_i` the change of the row's off-diagonal
    /// absolute sum.
    Perturb,
}

/// Unclamped keep probability.
pub fn edge_probability(rho: f64, l_ij: f64, s_ii: f64, s_jj: f64, s_ij: f64, presynaptic: Sign) -> f64 {
    let resistance = match presynaptic {
        Sign::Excitatory => s_ii + s_jj - 2.0 * s_ij,
        Sign::Inhibitory => s_ii + s_jj + 2.0 * s_ij,
    };
    rho * l_ij.abs() * resistance
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparsifyReport {
    pub candidates: usize,
    pub kept: usize,
    pub clamped_to_min: usize,
    pub clamped_to_one: usize,
    /// Every probability hit `p_min`: `rho` is too small for this system.
    pub degenerate: bool,
    pub density_before: f64,
    pub density_after: f64,
}

/// Keep probabilities for every non-zero off-diagonal entry of `a` (zero
/// elsewhere). `source_signs[i]` is the sign of the neuron of column `i`.
pub fn keep_probabilities(
    a: &DMatrix<f64>,
    sigma: &DMatrix<f64>,
    l: &DMatrix<f64>,
    source_signs: &[Sign],
    rho: f64,
    p_min: f64,
) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    if a.shape() != sigma.shape() || a.shape() != l.shape() || source_signs.len() != n {
        return Err(Error::input("A, Sigma, L and signs must share one dimension"));
    }
    if !(rho > 0.0) {
        return Err(Error::config("rho_density must be positive"));
    }
    if !(p_min > 0.0 && p_min <= 1.0) {
        return Err(Error::config("p_min must lie in (0, 1]"));
    }
    let mut p = DMatrix::zeros(n, n);
    for j in 0..n {
        for i in 0..n {
            if i == j || a[(j, i)] == 0.0 {
                continue;
            }
            let raw = edge_probability(rho, l[(j, i)], sigma[(i, i)], sigma[(j, j)], sigma[(i, j)], source_signs[i]);
            p[(j, i)] = if raw.is_nan() { p_min } else { raw.clamp(p_min, 1.0) };
        }
    }
    Ok(p)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SparsifyOutcome {
    pub a_sparse: DMatrix<f64>,
    pub p: DMatrix<f64>,
    /// Per-row diagonal perturbation `Delta_i` (zero in retain mode).
    pub delta: Vec<f64>,
    pub report: SparsifyReport,
}

/// One Bernoulli draw of the sparsified matrix given keep probabilities.
pub fn sample_sparse(a: &DMatrix<f64>, p: &DMatrix<f64>, mode: DiagonalMode, rng: &mut Rng) -> (DMatrix<f64>, Vec<f64>) {
    let n = a.nrows();
    let mut out = a.clone();
    for j in 0..n {
        for i in 0..n {
            if i == j || p[(j, i)] == 0.0 {
                continue;
            }
            let u: f64 = rng.random();
            out[(j, i)] = if u < p[(j, i)] { a[(j, i)] / p[(j, i)] } else { 0.0 };
        }
    }
    let mut delta = vec![0.0; n];
    if mode == DiagonalMode::Perturb {
        for r in 0..n {
            let before: f64 = (0..n).filter(|&c| c != r).map(|c| a[(r, c)].abs()).sum();
            let after: f64 = (0..n).filter(|&c| c != r).map(|c| out[(r, c)].abs()).sum();
            delta[r] = after - before;
            out[(r, r)] = a[(r, r)] - delta[r];
        }
    }
    (out, delta)
}

fn off_diag_nnz(m: &DMatrix<f64>) -> usize {
    let n = m.nrows();
    (0..n).flat_map(|j| (0..n).map(move |i| (j, i))).filter(|&(j, i)| i != j && m[(j, i)] != 0.0).count()
}

#[allow(clippy::too_many_arguments)]
pub fn prune_synapses(
    a: &DMatrix<f64>,
    sigma: &DMatrix<f64>,
    l: &DMatrix<f64>,
    source_signs: &[Sign],
    rho: f64,
    p_min: f64,
    mode: DiagonalMode,
    rng: &mut Rng,
) -> Result<SparsifyOutcome> {
    let p = keep_probabilities(a, sigma, l, source_signs, rho, p_min)?;
    let (a_sparse, delta) = sample_sparse(a, &p, mode, rng);
    let n = a.nrows();
    let denom = if n > 1 { (n * (n - 1)) as f64 } else { 1.0 };
    let candidates = off_diag_nnz(a);
    let probs: Vec<f64> = p.iter().copied().filter(|&x| x > 0.0).collect();
    let clamped_to_min = probs.iter().filter(|&&x| x == p_min).count();
    let report = SparsifyReport {
        candidates,
        kept: off_diag_nnz(&a_sparse),
        clamped_to_min,
        clamped_to_one: probs.iter().filter(|&&x| x == 1.0).count(),
        degenerate: candidates > 0 && clamped_to_min == candidates,
        density_before: candidates as f64 / denom,
        density_after: off_diag_nnz(&a_sparse) as f64 / denom,
    };
    Ok(SparsifyOutcome { a_sparse, p, delta, report })
}

/// Mean over `n_vectors` random unit vectors and `n_draws` sparsification
/// draws of `|x^T (A_sparse - A) x| / |x^T A x|`.
pub fn quadratic_form_deviation(
    a: &DMatrix<f64>,
    p: &DMatrix<f64>,
    mode: DiagonalMode,
    n_vectors: usize,
    n_draws: usize,
    rng: &mut Rng,
) -> Result<f64> {
    let n = a.nrows();
    if n == 0 || n_vectors == 0 || n_draws == 0 {
        return Err(Error::input("quadratic-form check needs a non-empty matrix, vectors and draws"));
    }
    let xs: Vec<DVector<f64>> = (0..n_vectors)
        .map(|_| {
            let v: DVector<f64> = DVector::from_fn(n, |_, _| StandardNormal.sample(rng));
            let norm = v.norm();
            v / norm
        })
        .collect();
    let base: Vec<f64> = xs.iter().map(|x| x.dot(&(a * x))).collect();
    if base.contains(&0.0) {
        return Err(Error::numeric("x^T A x vanished for a probe vector"));
    }
    let mut total = 0.0;
    for _ in 0..n_draws {
        let (sparse, _) = sample_sparse(a, p, mode, rng);
        let diff = sparse - a;
        for (x, b) in xs.iter().zip(&base) {
            total += (x.dot(&(&diff * x)) / b).abs();
        }
    }
    Ok(total / (n_vectors * n_draws) as f64)
}
