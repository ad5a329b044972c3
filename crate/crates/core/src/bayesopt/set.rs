//! The six-marginal parameter-distribution point searched by the optimizer.

use serde::{Deserialize, Serialize};

use crate::dist::ParamDist;
use crate::error::{Error, Result};
use crate::neuron::HeterogeneityProfile;
use crate::plasticity::StdpProfile;
use crate::rng::{derive, stream, Rng};

use super::wasserstein::{sinkhorn_distance, QuantileProfile};

/// Marginal names in canonical order.
pub const MARGINALS: [&str; 6] = ["tau_m_exc", "tau_m_inh", "a_plus", "a_minus", "tau_plus", "tau_minus"];

/// Laws of the excitatory/inhibitory membrane time constants, the STDP
/// gains and the STDP trace time constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParamDistributionSet {
    pub tau_m_exc: ParamDist,
    pub tau_m_inh: ParamDist,
    pub a_plus: ParamDist,
    pub a_minus: ParamDist,
    pub tau_plus: ParamDist,
    pub tau_minus: ParamDist,
}

impl Default for ParamDistributionSet {
    fn default() -> Self {
        ParamDistributionSet::from_profiles(&HeterogeneityProfile::default(), &StdpProfile::default())
    }
}

impl ParamDistributionSet {
    /// The biologically inspired defaults (slower excitatory membranes).
    pub fn bio_default() -> Self {
        Self::default()
    }

    pub fn from_profiles(het: &HeterogeneityProfile, stdp: &StdpProfile) -> Self {
        ParamDistributionSet {
            tau_m_exc: het.exc.tau_m,
            tau_m_inh: het.inh.tau_m,
            a_plus: stdp.a_plus,
            a_minus: stdp.a_minus,
            tau_plus: stdp.tau_plus,
            tau_minus: stdp.tau_minus,
        }
    }

    /// Copies of the given profiles with these laws substituted.
    pub fn apply(&self, het: &HeterogeneityProfile, stdp: &StdpProfile) -> (HeterogeneityProfile, StdpProfile) {
        let mut het = *het;
        het.exc.tau_m = self.tau_m_exc;
        het.inh.tau_m = self.tau_m_inh;
        let stdp = StdpProfile {
            a_plus: self.a_plus,
            a_minus: self.a_minus,
            tau_plus: self.tau_plus,
            tau_minus: self.tau_minus,
            ..*stdp
        };
        (het, stdp)
    }

    pub fn marginals(&self) -> [ParamDist; 6] {
        [self.tau_m_exc, self.tau_m_inh, self.a_plus, self.a_minus, self.tau_plus, self.tau_minus]
    }

    pub fn from_marginals(m: [ParamDist; 6]) -> Self {
        ParamDistributionSet { tau_m_exc: m[0], tau_m_inh: m[1], a_plus: m[2], a_minus: m[3], tau_plus: m[4], tau_minus: m[5] }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, d) in MARGINALS.iter().zip(self.marginals()) {
            d.validate().map_err(|e| Error::config(format!("{name}: {e}")))?;
        }
        Ok(())
    }

    /// One joint draw with independent marginals.
    pub fn sample(&self, rng: &mut Rng) -> [f64; 6] {
        self.marginals().map(|d| d.sample(rng))
    }
}

/// Quantile profiles of all six marginals, reusable across many distances.
#[derive(Debug, Clone, PartialEq)]
pub struct SetProfile(pub Vec<QuantileProfile>);

impl SetProfile {
    pub fn new(x: &ParamDistributionSet) -> Result<Self> {
        Ok(SetProfile(x.marginals().iter().map(QuantileProfile::new).collect::<Result<_>>()?))
    }

    /// Sum of the marginal W1 distances.
    pub fn distance(&self, other: &SetProfile) -> f64 {
        self.0.iter().zip(&other.0).map(|(a, b)| a.distance(b)).sum()
    }
}

/// How two distribution sets are compared.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum SetDistanceMode {
    /// Sum over the six marginals of the 1-D W1 distance.
    MarginalSum,
    /// Entropic transport between joint samples of both sets.
    Sinkhorn { epsilon: f64, n_samples: usize, seed: u64 },
}

pub fn set_distance(x: &ParamDistributionSet, y: &ParamDistributionSet, mode: SetDistanceMode) -> Result<f64> {
    match mode {
        SetDistanceMode::MarginalSum => {
            if x == y {
                x.validate()?;
                return Ok(0.0);
            }
            Ok(SetProfile::new(x)?.distance(&SetProfile::new(y)?))
        }
        SetDistanceMode::Sinkhorn { epsilon, n_samples, seed } => {
            x.validate()?;
            y.validate()?;
            if n_samples == 0 {
                return Err(Error::config("sinkhorn n_samples must be positive"));
            }
            let mut rx = stream(derive(seed, 1), crate::rng::tags::BO);
            let mut ry = stream(derive(seed, 2), crate::rng::tags::BO);
            let cx: Vec<Vec<f64>> = (0..n_samples).map(|_| x.sample(&mut rx).to_vec()).collect();
            let cy: Vec<Vec<f64>> = (0..n_samples).map(|_| y.sample(&mut ry).to_vec()).collect();
            sinkhorn_distance(&cx, &cy, epsilon, 10_000, 1e-10)
        }
    }
}
