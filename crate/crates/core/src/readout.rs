//! Linear (ridge) readouts and readout-neuron selection.

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::encode::StateFeatures;
use crate::error::{Error, Result};
use crate::rng::{stream, tags};
use crate::topology::{betweenness_centrality, NetworkGraph, NeuronId};

/// Ridge solution `w = (X^T X + reg I)^{-1} X^T Y` (no intercept). With
/// `reg = 0` the minimum-norm least-squares solution is returned.
pub fn ridge(x: &DMatrix<f64>, y: &DMatrix<f64>, reg: f64) -> Result<DMatrix<f64>> {
    if x.nrows() != y.nrows() {
        return Err(Error::input(format!("feature rows {} != target rows {}", x.nrows(), y.nrows())));
    }
    if x.nrows() < 2 {
        return Err(Error::input("readout fit needs at least 2 rows"));
    }
    if !(reg >= 0.0) {
        return Err(Error::input("regularization must be non-negative"));
    }
    if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
        return Err(Error::numeric("non-finite values in readout fit"));
    }
    if reg > 0.0 {
        let mut gram = x.transpose() * x;
        for i in 0..gram.nrows() {
            gram[(i, i)] += reg;
        }
        let rhs = x.transpose() * y;
        if let Some(ch) = gram.clone().cholesky() {
            return Ok(ch.solve(&rhs));
        }
        // Extremely ill-conditioned Gram: fall through to the SVD route.
        let svd = gram.svd(true, true);
        return svd.solve(&rhs, 0.0).map_err(|e| Error::numeric(e.to_string()));
    }
    let svd = x.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let eps = smax * f64::EPSILON * x.nrows().max(x.ncols()) as f64;
    svd.solve(y, eps).map_err(|e| Error::numeric(e.to_string()))
}

/// Optional random-feature hidden layer: `h = tanh(P^T z + c)` on
/// standardized inputs `z`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HiddenLayer {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
    pub projection: DMatrix<f64>,
    pub offset: Vec<f64>,
}

impl HiddenLayer {
    fn random(x: &DMatrix<f64>, units: usize, seed: u64) -> Self {
        let n = x.ncols();
        let mean: Vec<f64> = (0..n).map(|j| x.column(j).mean()).collect();
        let scale: Vec<f64> = (0..n)
            .map(|j| {
                let s = x.column(j).variance().sqrt();
                if s > 1e-12 {
                    s
                } else {
                    1.0
                }
            })
            .collect();
        let mut rng = stream(seed, tags::READOUT);
        let norm = 1.0 / (n.max(1) as f64).sqrt();
        let projection = DMatrix::from_fn(n, units, |_, _| {
            let z: f64 = StandardNormal.sample(&mut rng);
            z * norm
        });
        let offset = (0..units)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                0.1 * z
            })
            .collect();
        HiddenLayer { mean, scale, projection, offset }
    }

    fn forward(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let z = DMatrix::from_fn(x.nrows(), x.ncols(), |i, j| (x[(i, j)] - self.mean[j]) / self.scale[j]);
        let mut h = z * &self.projection;
        for i in 0..h.nrows() {
            for j in 0..h.ncols() {
                h[(i, j)] = (h[(i, j)] + self.offset[j]).tanh();
            }
        }
        h
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReadoutLayer {
    pub sampled_neurons: Vec<NeuronId>,
    pub layer_sizes: Vec<usize>,
    pub hidden: Option<HiddenLayer>,
    /// Output weights, `inputs x outputs`.
    pub weights: DMatrix<f64>,
    /// Unpenalized intercept per output.
    pub intercept: Vec<f64>,
    pub regularization: f64,
}

impl ReadoutLayer {
    pub fn predict(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let h;
        let input = match &self.hidden {
            Some(layer) => {
                h = layer.forward(x);
                &h
            }
            None => x,
        };
        let mut y = input * &self.weights;
        for mut row in y.row_iter_mut() {
            for (v, b) in row.iter_mut().zip(&self.intercept) {
                *v += b;
            }
        }
        y
    }

    pub fn predict_row(&self, x: &[f64]) -> Vec<f64> {
        let m = DMatrix::from_row_slice(1, x.len(), x);
        self.predict(&m).row(0).iter().copied().collect()
    }

    /// Class index with the largest output per row.
    pub fn classify(&self, x: &DMatrix<f64>) -> Vec<usize> {
        let y = self.predict(x);
        y.row_iter()
            .map(|r| {
                let mut best = 0;
                for j in 1..r.len() {
                    if r[j] > r[best] {
                        best = j;
                    }
                }
                best
            })
            .collect()
    }
}

/// Ridge regression with an unpenalized intercept (fit on centered data).
fn fit_centered(x: &DMatrix<f64>, y: &DMatrix<f64>, reg: f64) -> Result<(DMatrix<f64>, Vec<f64>)> {
    if x.nrows() < 2 {
        return Err(Error::input("readout fit needs at least 2 rows"));
    }
    let xm: Vec<f64> = (0..x.ncols()).map(|j| x.column(j).mean()).collect();
    let ym: Vec<f64> = (0..y.ncols()).map(|j| y.column(j).mean()).collect();
    let xc = DMatrix::from_fn(x.nrows(), x.ncols(), |i, j| x[(i, j)] - xm[j]);
    let yc = DMatrix::from_fn(y.nrows(), y.ncols(), |i, j| y[(i, j)] - ym[j]);
    let w = ridge(&xc, &yc, reg)?;
    let xmv = DVector::from_vec(xm);
    let intercept = (0..y.ncols()).map(|j| ym[j] - xmv.dot(&w.column(j))).collect();
    Ok((w, intercept))
}

/// Ridge readout from features to `targets` (`rows x outputs`).
pub fn fit_linear_readout(features: &StateFeatures, targets: &DMatrix<f64>, regularization: f64) -> Result<ReadoutLayer> {
    fit_matrix_readout(&features.matrix, &features.neurons, targets, regularization)
}

pub fn fit_matrix_readout(x: &DMatrix<f64>, neurons: &[NeuronId], targets: &DMatrix<f64>, regularization: f64) -> Result<ReadoutLayer> {
    if x.nrows() != targets.nrows() {
        return Err(Error::input(format!("feature rows {} != target rows {}", x.nrows(), targets.nrows())));
    }
    let (weights, intercept) = fit_centered(x, targets, regularization)?;
    Ok(ReadoutLayer {
        sampled_neurons: neurons.to_vec(),
        layer_sizes: vec![x.ncols(), targets.ncols()],
        hidden: None,
        weights,
        intercept,
        regularization,
    })
}

/// One-vs-rest classifier: ridge onto one-hot targets, optionally through a
/// random-feature hidden layer of `hidden_units` units.
pub fn fit_classifier(
    x: &DMatrix<f64>,
    neurons: &[NeuronId],
    labels: &[usize],
    n_classes: usize,
    regularization: f64,
    hidden_units: Option<usize>,
    seed: u64,
) -> Result<ReadoutLayer> {
    if labels.len() != x.nrows() {
        return Err(Error::input("one label per feature row required"));
    }
    if let Some(&l) = labels.iter().find(|&&l| l >= n_classes) {
        return Err(Error::input(format!("label {l} >= n_classes {n_classes}")));
    }
    let y = DMatrix::from_fn(x.nrows(), n_classes, |i, j| if labels[i] == j { 1.0 } else { 0.0 });
    let hidden = hidden_units.map(|u| HiddenLayer::random(x, u, seed));
    let input = match &hidden {
        Some(h) => h.forward(x),
        None => x.clone(),
    };
    let (weights, intercept) = fit_centered(&input, &y, regularization)?;
    let mut layer_sizes = vec![x.ncols()];
    if let Some(u) = hidden_units {
        layer_sizes.push(u);
    }
    layer_sizes.push(n_classes);
    Ok(ReadoutLayer { sampled_neurons: neurons.to_vec(), layer_sizes, hidden, weights, intercept, regularization })
}

/// The `round(fraction * N)` (at least one) neurons of highest betweenness
/// centrality, ties broken by lower id, returned in ascending id order.
pub fn select_readout_neurons(graph: &NetworkGraph, fraction: f64) -> Result<Vec<NeuronId>> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::config(format!("readout fraction {fraction} outside (0, 1]")));
    }
    let scores = betweenness_centrality(graph);
    Ok(top_by_score(&scores, fraction))
}

pub(crate) fn top_by_score(scores: &std::collections::BTreeMap<NeuronId, f64>, fraction: f64) -> Vec<NeuronId> {
    let n = scores.len();
    if n == 0 {
        return Vec::new();
    }
    let count = ((fraction * n as f64).round() as usize).clamp(1, n);
    let mut ranked: Vec<(NeuronId, f64)> = scores.iter().map(|(&k, &v)| (k, v)).collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    let mut chosen: Vec<NeuronId> = ranked[..count].iter().map(|r| r.0).collect();
    chosen.sort_unstable();
    chosen
}
