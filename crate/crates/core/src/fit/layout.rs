//! Mapping between optimizer vectors and model parameters.
//!
//! The first 16 entries are the coordinates of `log ρ` (see the
//! `logstate` module); the rest are filter parameters in an unconstrained
//! encoding: probabilities through the logit, positive rates through the log.

use serde::{Deserialize, Serialize};

use crate::counts::{FilterParams, Model1Params, Model2Params, Model3Params, Model4Params, ModelId};
use super::logstate::{coords_state, state_coords};
use crate::quantum::DensityMatrix;
use crate::{coinc_labels, single_index, Error, Result};

/// Number of state coordinates in every layout.
pub const DENSITY_LEN: usize = 16;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Transform {
    /// `value = exp(u)`
    Log,
    /// `value = 1 / (1 + exp(−u))`
    Logit,
}

impl Transform {
    pub fn forward(self, value: f64) -> f64 {
        match self {
            Transform::Log => value.ln(),
            Transform::Logit => (value / (1.0 - value)).ln(),
        }
    }

    pub fn inverse(self, u: f64) -> f64 {
        match self {
            Transform::Log => u.exp(),
            Transform::Logit => logistic(u),
        }
    }
}

fn logistic(u: f64) -> f64 {
    if u >= 0.0 {
        1.0 / (1.0 + (-u).exp())
    } else {
        let e = u.exp();
        e / (1.0 + e)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FilterSlot {
    pub name: String,
    pub transform: Transform,
}

/// Layout descriptor for one model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParameterLayout {
    pub model: ModelId,
    pub filter: Vec<FilterSlot>,
}

fn slot(name: String, transform: Transform) -> FilterSlot {
    FilterSlot { name, transform }
}

/// Layout for `model`. Model #4 shares the Model #3 layout: its
/// coefficients of variation are fixed inputs, not fitted.
pub fn pack_parameters(model: ModelId) -> ParameterLayout {
    let mut filter = Vec::new();
    match model {
        ModelId::One => {
            filter.push(slot("pairs".into(), Transform::Log));
            for i in 0..2 {
                filter.push(slot(format!("pa_{i}"), Transform::Logit));
            }
            for k in 0..2 {
                filter.push(slot(format!("pb_{k}"), Transform::Logit));
            }
        }
        ModelId::Two => {
            filter.push(slot("pairs".into(), Transform::Log));
            for n in 0..4 {
                filter.push(slot(format!("pa_{}{}", n / 2, n % 2), Transform::Logit));
            }
            for n in 0..4 {
                filter.push(slot(format!("pb_{}{}", n / 2, n % 2), Transform::Logit));
            }
        }
        ModelId::Three | ModelId::Four => {
            for n in 0..4 {
                filter.push(slot(format!("npa_{}{}", n / 2, n % 2), Transform::Log));
            }
            for n in 0..4 {
                filter.push(slot(format!("npb_{}{}", n / 2, n % 2), Transform::Log));
            }
            for idx in 0..16 {
                let (i, j, k, l) = coinc_labels(idx);
                filter.push(slot(format!("npc_{i}{j}{k}{l}"), Transform::Log));
            }
        }
    }
    ParameterLayout { model, filter }
}

/// Effective rates in the order `X (4), Z (4), Y (16)` with their
/// derivatives with respect to each filter variable.
pub(crate) struct RateJacobian {
    pub rates: [f64; 24],
    pub d: Vec<[f64; 24]>,
}

impl ParameterLayout {
    pub fn raw_len(&self) -> usize {
        DENSITY_LEN + self.filter.len()
    }

    /// Raw length minus the one redundant identity shift of `log ρ`.
    pub fn effective_len(&self) -> usize {
        self.raw_len() - 1
    }

    pub fn names(&self) -> Vec<String> {
        let mut out: Vec<String> = (0..4).map(|d| format!("h_{d}{d}")).collect();
        for &(r, c) in crate::quantum::FACTOR_OFF_DIAGONAL.iter() {
            out.push(format!("re_h_{r}{c}"));
            out.push(format!("im_h_{r}{c}"));
        }
        out.extend(self.filter.iter().map(|s| s.name.clone()));
        out
    }

    fn natural_filter(&self, filter: &FilterParams) -> Result<Vec<f64>> {
        let values = match (self.model, filter) {
            (ModelId::One, FilterParams::Model1(p)) => {
                let mut v = vec![p.pairs];
                v.extend(p.alice);
                v.extend(p.bob);
                v
            }
            (ModelId::Two, FilterParams::Model2(p)) => {
                let mut v = vec![p.pairs];
                v.extend(p.alice);
                v.extend(p.bob);
                v
            }
            (ModelId::Three | ModelId::Four, FilterParams::Model3(p))
            | (ModelId::Three | ModelId::Four, FilterParams::Model4(Model4Params { means: p, .. })) => {
                let mut v = p.alice_rate.to_vec();
                v.extend(p.bob_rate);
                v.extend(p.coinc_rate);
                v
            }
            _ => {
                return Err(Error::invalid(format!(
                    "{} parameters do not fit the {} layout",
                    filter.model(),
                    self.model
                )))
            }
        };
        Ok(values)
    }

    /// Optimizer vector for the given state and filter. Probabilities must lie
    /// strictly inside (0, 1) and rates must be strictly positive. Rank
    /// deficient states are moved a little inside the cone.
    pub fn pack(&self, density: &DensityMatrix, filter: &FilterParams) -> Result<Vec<f64>> {
        let natural = self.natural_filter(filter)?;
        let mut v = state_coords(density).to_vec();
        for (value, s) in natural.iter().zip(&self.filter) {
            let ok = match s.transform {
                Transform::Log => *value > 0.0,
                Transform::Logit => *value > 0.0 && *value < 1.0,
            };
            if !ok || !value.is_finite() {
                return Err(Error::invalid(format!("{} = {value} is on the boundary of its domain", s.name)));
            }
            v.push(s.transform.forward(*value));
        }
        Ok(v)
    }

    pub fn check_len(&self, v: &[f64]) -> Result<()> {
        if v.len() != self.raw_len() {
            return Err(Error::invalid(format!(
                "{} layout has {} variables, got {}",
                self.model,
                self.raw_len(),
                v.len()
            )));
        }
        Ok(())
    }

    pub fn density(&self, v: &[f64]) -> Result<DensityMatrix> {
        self.check_len(v)?;
        coords_state(&v[..DENSITY_LEN])
    }

    /// Filter parameters for a vector. `window_ns` and `duration_ns` only
    /// matter for Models #3/#4.
    pub fn filter_params(&self, v: &[f64], window_ns: f64, duration_ns: f64) -> Result<FilterParams> {
        self.check_len(v)?;
        let nat: Vec<f64> = v[DENSITY_LEN..]
            .iter()
            .zip(&self.filter)
            .map(|(u, s)| s.transform.inverse(*u))
            .collect();
        let p = match self.model {
            ModelId::One => FilterParams::Model1(Model1Params { pairs: nat[0], alice: [nat[1], nat[2]], bob: [nat[3], nat[4]] }),
            ModelId::Two => FilterParams::Model2(Model2Params {
                pairs: nat[0],
                alice: std::array::from_fn(|n| nat[1 + n]),
                bob: std::array::from_fn(|n| nat[5 + n]),
            }),
            ModelId::Three | ModelId::Four => FilterParams::Model3(Model3Params {
                alice_rate: std::array::from_fn(|n| nat[n]),
                bob_rate: std::array::from_fn(|n| nat[4 + n]),
                coinc_rate: std::array::from_fn(|n| nat[8 + n]),
                window_ns,
                duration_ns,
            }),
        };
        Ok(p)
    }

    pub fn unpack(&self, v: &[f64], window_ns: f64, duration_ns: f64) -> Result<(DensityMatrix, FilterParams)> {
        Ok((self.density(v)?, self.filter_params(v, window_ns, duration_ns)?))
    }

    pub(crate) fn rate_jacobian(&self, u: &[f64]) -> RateJacobian {
        let k = self.filter.len();
        let mut d = vec![[0.0; 24]; k];
        let mut rates = [0.0; 24];
        match self.model {
            ModelId::One | ModelId::Two => {
                let two = self.model == ModelId::Two;
                let n = u[0].exp();
                let (pa, pb): (Vec<f64>, Vec<f64>) = if two {
                    ((1..5).map(|s| logistic(u[s])).collect(), (5..9).map(|s| logistic(u[s])).collect())
                } else {
                    ((1..3).map(|s| logistic(u[s])).collect(), (3..5).map(|s| logistic(u[s])).collect())
                };
                // slot of the probability that rate `ch` depends on
                let a_slot = |setting: usize, result: usize| if two { 1 + single_index(setting, result) } else { 1 + setting };
                let b_slot = |setting: usize, result: usize| if two { 5 + single_index(setting, result) } else { 3 + setting };
                let pa_of = |s: usize| pa[s - 1];
                let pb_of = |s: usize| pb[s - if two { 5 } else { 3 }];
                for ch in 0..4 {
                    let sa = a_slot(ch / 2, ch % 2);
                    let x = n * pa_of(sa);
                    rates[ch] = x;
                    d[0][ch] = x;
                    d[sa][ch] = x * (1.0 - pa_of(sa));
                    let sb = b_slot(ch / 2, ch % 2);
                    let z = n * pb_of(sb);
                    rates[4 + ch] = z;
                    d[0][4 + ch] = z;
                    d[sb][4 + ch] = z * (1.0 - pb_of(sb));
                }
                for idx in 0..16 {
                    let (i, j, kk, l) = coinc_labels(idx);
                    let (sa, sb) = (a_slot(i, j), b_slot(kk, l));
                    let y = n * pa_of(sa) * pb_of(sb);
                    rates[8 + idx] = y;
                    d[0][8 + idx] = y;
                    d[sa][8 + idx] = y * (1.0 - pa_of(sa));
                    d[sb][8 + idx] = y * (1.0 - pb_of(sb));
                }
            }
            ModelId::Three | ModelId::Four => {
                for ch in 0..24 {
                    let r = u[ch].exp();
                    rates[ch] = r;
                    d[ch][ch] = r;
                }
            }
        }
        RateJacobian { rates, d }
    }
}
