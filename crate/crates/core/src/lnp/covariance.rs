//! Linearized rate system `x' = A x + b + sigma xi` and its stationary
//! covariance, the solution of `A S + S A^T + sigma^2 I = 0`.

use std::collections::BTreeMap;

use nalgebra::{Complex, DMatrix};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::neuron::NeuronParams;
use crate::topology::NeuronId;

use super::lyapunov::LyapunovMatrix;

#[derive(Debug, Clone, PartialEq)]
pub struct LinearizedSystem {
    /// Neuron of each row/column.
    pub ids: Vec<NeuronId>,
    /// `A = -D + L`; entry `(j, i)` couples presynaptic `i` into `j`.
    pub a: DMatrix<f64>,
    /// Diagonal of `D`.
    pub d: Vec<f64>,
    pub b: Vec<f64>,
    pub sigma: f64,
}

impl LinearizedSystem {
    /// `D = diag(1 / tau_m)`, off-diagonal from the Lyapunov matrix.
    pub fn from_lyapunov(ids: &[NeuronId], params: &BTreeMap<NeuronId, NeuronParams>, l: &LyapunovMatrix, sigma: f64) -> Result<Self> {
        let n = ids.len();
        let d: Vec<f64> = ids
            .iter()
            .map(|id| params.get(id).map(|p| 1.0 / p.tau_m).ok_or_else(|| Error::input(format!("no parameters for neuron {id}"))))
            .collect::<Result<_>>()?;
        let mut a = DMatrix::zeros(n, n);
        for i in 0..n {
            a[(i, i)] = -d[i];
        }
        for (&(src, dst), &v) in &l.entries {
            let (Ok(si), Ok(di)) = (ids.binary_search(&src), ids.binary_search(&dst)) else {
                return Err(Error::input(format!("Lyapunov entry {src}->{dst} outside the system")));
            };
            a[(di, si)] = v;
        }
        Ok(LinearizedSystem { ids: ids.to_vec(), a, d, b: vec![0.0; n], sigma })
    }

    pub fn index_of(&self, id: NeuronId) -> Option<usize> {
        self.ids.binary_search(&id).ok()
    }
}

/// Iteration cap of the Schur decompositions.
const SCHUR_MAX_ITER: usize = 10_000;

/// Convergence tolerances tried in turn: the QR iteration can stall at
/// machine precision on sparse, nearly decoupled matrices.
const SCHUR_TOLERANCES: [f64; 3] = [f64::EPSILON, 1e-14, 1e-12];

type CMatrix = DMatrix<Complex<f64>>;

/// Complex Schur form `a = U T U^H`.
fn complex_schur(a: &DMatrix<f64>) -> Result<(CMatrix, CMatrix)> {
    let ac = a.map(|v| Complex::new(v, 0.0));
    for eps in SCHUR_TOLERANCES {
        if let Some(s) = ac.clone().try_schur(eps, SCHUR_MAX_ITER) {
            return Ok(s.unpack());
        }
    }
    Err(Error::numeric("Schur decomposition did not converge"))
}

/// Largest real part among the eigenvalues of `a`. Uses a bounded real
/// Schur iteration and falls back to the complex Schur form.
pub fn max_real_eigenvalue(a: &DMatrix<f64>) -> Result<f64> {
    if a.is_empty() {
        return Ok(f64::NEG_INFINITY);
    }
    if a.iter().any(|v| !v.is_finite()) {
        return Err(Error::numeric("matrix has non-finite entries"));
    }
    let fold = |it: &mut dyn Iterator<Item = f64>| it.fold(f64::NEG_INFINITY, f64::max);
    for eps in SCHUR_TOLERANCES {
        if let Some(s) = a.clone().try_schur(eps, SCHUR_MAX_ITER) {
            return Ok(fold(&mut s.complex_eigenvalues().iter().map(|z| z.re)));
        }
    }
    let (_, t) = complex_schur(a)?;
    Ok(fold(&mut t.diagonal().iter().map(|z| z.re)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StationaryCovariance {
    pub sigma: DMatrix<f64>,
    /// Amount subtracted from the diagonal of `A` before solving (0 if `A`
    /// was already Hurwitz).
    pub shift_applied: f64,
    pub lambda_max: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShiftConfig {
    /// Distance kept between the shifted spectrum and the imaginary axis.
    pub margin: f64,
    /// Largest shift tolerated before declaring the system unstabilizable.
    pub max_shift: f64,
}

impl Default for ShiftConfig {
    fn default() -> Self {
        ShiftConfig { margin: 0.01, max_shift: 1e6 }
    }
}

/// Solve the continuous Lyapunov equation for `system`, shifting `A` left
/// when it is not Hurwitz. The shift only affects the solve.
pub fn stationary_covariance(system: &LinearizedSystem, shift: &ShiftConfig) -> Result<StationaryCovariance> {
    let n = system.a.nrows();
    if system.a.ncols() != n {
        return Err(Error::input("A must be square"));
    }
    if system.a.iter().any(|v| !v.is_finite()) {
        return Err(Error::numeric("A has non-finite entries"));
    }
    let lambda_max = max_real_eigenvalue(&system.a)?;
    let mut a = system.a.clone();
    let mut shift_applied = 0.0;
    if lambda_max >= 0.0 {
        shift_applied = lambda_max + shift.margin;
        if !(shift_applied <= shift.max_shift) {
            return Err(Error::numeric(format!("A needs a shift of {shift_applied}, above the limit {}", shift.max_shift)));
        }
        for i in 0..n {
            a[(i, i)] -= shift_applied;
        }
    }
    let q = DMatrix::identity(n, n) * (system.sigma * system.sigma);
    let sigma = solve_continuous_lyapunov(&a, &q)?;
    Ok(StationaryCovariance { sigma, shift_applied, lambda_max })
}

/// Solve `A X + X A^T + Q = 0` for symmetric `Q` by Bartels–Stewart on the
/// complex Schur form `A = U T U^H`.
pub fn solve_continuous_lyapunov(a: &DMatrix<f64>, q: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    if n == 0 {
        return Ok(DMatrix::zeros(0, 0));
    }
    let (u, t) = complex_schur(a)?;
    let uh = u.adjoint();
    let c: DMatrix<Complex<f64>> = -(&uh * q.map(|v| Complex::new(v, 0.0)) * &u);
    // T Y + Y T^H = C, T upper triangular: fill from the bottom-right corner.
    let mut y: DMatrix<Complex<f64>> = DMatrix::zeros(n, n);
    for i in (0..n).rev() {
        for j in (0..n).rev() {
            let mut rhs = c[(i, j)];
            for k in i + 1..n {
                rhs -= t[(i, k)] * y[(k, j)];
            }
            for k in j + 1..n {
                rhs -= y[(i, k)] * t[(j, k)].conj();
            }
            let denom = t[(i, i)] + t[(j, j)].conj();
            if denom.norm() < 1e-300 {
                return Err(Error::numeric("Lyapunov equation is singular (eigenvalues symmetric about the imaginary axis)"));
            }
            y[(i, j)] = rhs / denom;
        }
    }
    let x = &u * y * &uh;
    let mut out = x.map(|z| z.re);
    // Enforce exact symmetry.
    for i in 0..n {
        for j in i + 1..n {
            let m = 0.5 * (out[(i, j)] + out[(j, i)]);
            out[(i, j)] = m;
            out[(j, i)] = m;
        }
    }
    if out.iter().any(|v| !v.is_finite()) {
        return Err(Error::numeric("non-finite covariance"));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sys(a: DMatrix<f64>, sigma: f64) -> LinearizedSystem {
        let n = a.nrows();
        LinearizedSystem { ids: (0..n as u32).map(NeuronId).collect(), a, d: vec![0.0; n], b: vec![0.0; n], sigma }
    }

    #[test]
    fn minus_identity() {
        let s = stationary_covariance(&sys(-DMatrix::identity(4, 4), 1.0), &ShiftConfig::default()).unwrap();
        assert!((s.sigma - DMatrix::identity(4, 4) * 0.5).amax() < 1e-10);
        assert_eq!(s.shift_applied, 0.0);
    }

    #[test]
    fn diagonal() {
        let d = [0.5, 1.0, 3.0];
        let a = DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(3, d.iter().map(|x| -x)));
        let s = stationary_covariance(&sys(a, 2.0), &ShiftConfig::default()).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let expect = if i == j { 4.0 / (2.0 * d[i]) } else { 0.0 };
                assert!((s.sigma[(i, j)] - expect).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn shift_when_unstable() {
        let a = DMatrix::from_row_slice(2, 2, &[0.5, 0.0, 0.0, -1.0]);
        let s = stationary_covariance(&sys(a, 1.0), &ShiftConfig::default()).unwrap();
        assert!((s.shift_applied - 0.51).abs() < 1e-12);
        assert!((s.sigma[(0, 0)] - 1.0 / (2.0 * 0.01)).abs() < 1e-8);
    }
}
