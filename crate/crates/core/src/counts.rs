//! Count tables and the four detection-filter models.
//!
//! Every model maps trace-rule probabilities to expected singles and
//! coincidence counts for one experiment. Internally all four reduce to
//! per-channel effective rates:
//!
//! ```text
//! â_ij   = 2 · X_ij · qa_ij
//! b̂_kl   = 2 · Z_kl · qb_kl
//! ĉ_ijkl = Y_ijkl · qc_ijkl + â_ij · b̂_kl · w / T
//! ```
//!
//! with `X = N·pa`, `Z = N·pb`, `Y = N·pa·pb` (Models #1/#2) or
//! `Y = N·pc` (Models #3/#4). Only Models #3/#4 carry the accidental term.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::quantum::QuantumProbs;
use crate::{coinc_labels, single_index, Error, Result};

/// Floor applied to predicted counts before they are used as chi-square
/// denominators inside the optimizer.
pub const PREDICTION_FLOOR: f64 = 1e-6;

/// Observed (or simulated) counts for one experiment.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CountTable {
    /// Alice singles `a_ij`, indexed by [`single_index`].
    pub a: [f64; 4],
    /// Bob singles `b_kl`.
    pub b: [f64; 4],
    /// Coincidences `c_ijkl`, indexed by [`coinc_index`].
    pub c: [f64; 16],
}

impl CountTable {
    pub fn is_empty(&self) -> bool {
        self.a.iter().chain(&self.b).chain(&self.c).all(|&v| v == 0.0)
    }

    pub fn validate(&self) -> Result<()> {
        if self.a.iter().chain(&self.b).chain(&self.c).any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::DataInconsistency("counts must be finite and non-negative".into()));
        }
        unpaired_singles(self).map(|_| ())
    }

    /// Observed channels in chi-square order: `ua` (4), `ub` (4), `c` (16).
    pub fn channels(&self) -> Result<[f64; 24]> {
        let (ua, ub) = unpaired_singles(self)?;
        let mut out = [0.0; 24];
        out[..4].copy_from_slice(&ua);
        out[4..8].copy_from_slice(&ub);
        out[8..].copy_from_slice(&self.c);
        Ok(out)
    }

    /// Rebuild a table from `ua`, `ub`, `c` channels.
    pub fn from_channels(ch: &[f64; 24]) -> Self {
        let mut t = CountTable::default();
        t.c.copy_from_slice(&ch[8..]);
        for idx in 0..16 {
            let (i, j, k, l) = coinc_labels(idx);
            t.a[single_index(i, j)] += ch[8 + idx];
            t.b[single_index(k, l)] += ch[8 + idx];
        }
        for n in 0..4 {
            t.a[n] += ch[n];
            t.b[n] += ch[4 + n];
        }
        t
    }
}

fn paired_sums(c: &[f64; 16]) -> ([f64; 4], [f64; 4]) {
    let mut alice = [0.0; 4];
    let mut bob = [0.0; 4];
    for (idx, &v) in c.iter().enumerate() {
        let (i, j, k, l) = coinc_labels(idx);
        alice[single_index(i, j)] += v;
        bob[single_index(k, l)] += v;
    }
    (alice, bob)
}

/// `ua_ij = a_ij − Σ_kl c_ijkl`, `ub_kl = b_kl − Σ_ij c_ijkl`.
pub fn unpaired_singles(table: &CountTable) -> Result<([f64; 4], [f64; 4])> {
    let (pa, pb) = paired_sums(&table.c);
    let ua: [f64; 4] = std::array::from_fn(|n| table.a[n] - pa[n]);
    let ub: [f64; 4] = std::array::from_fn(|n| table.b[n] - pb[n]);
    if let Some(n) = ua.iter().position(|v| *v < 0.0) {
        return Err(Error::DataInconsistency(format!(
            "Alice channel {} has more coincidences than singles ({} < {})",
            channel_name(n),
            table.a[n],
            pa[n]
        )));
    }
    if let Some(n) = ub.iter().position(|v| *v < 0.0) {
        return Err(Error::DataInconsistency(format!(
            "Bob channel {} has more coincidences than singles ({} < {})",
            channel_name(4 + n),
            table.b[n],
            pb[n]
        )));
    }
    Ok((ua, ub))
}

/// Name of a chi-square channel: `ua_ij`, `ub_kl` or `c_ijkl`.
pub fn channel_name(channel: usize) -> String {
    match channel {
        0..=3 => format!("ua_{}{}", channel / 2, channel % 2),
        4..=7 => format!("ub_{}{}", (channel - 4) / 2, (channel - 4) % 2),
        8..=23 => {
            let (i, j, k, l) = coinc_labels(channel - 8);
            format!("c_{i}{j}{k}{l}")
        }
        _ => panic!("channel index {channel} out of range"),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum ModelId {
    /// Per-setting detection probabilities.
    One,
    /// Per-(setting, result) detection probabilities.
    Two,
    /// Free coincidence-identification rates plus accidentals.
    Three,
    /// Model #3 means with between-experiment parameter noise.
    Four,
}

impl ModelId {
    pub fn number(self) -> u8 {
        match self {
            ModelId::One => 1,
            ModelId::Two => 2,
            ModelId::Three => 3,
            ModelId::Four => 4,
        }
    }
}

impl TryFrom<u8> for ModelId {
    type Error = Error;

    fn try_from(v: u8) -> Result<Self> {
        match v {
            1 => Ok(ModelId::One),
            2 => Ok(ModelId::Two),
            3 => Ok(ModelId::Three),
            4 => Ok(ModelId::Four),
            _ => Err(Error::invalid(format!("unknown model {v}, expected 1-4"))),
        }
    }
}

impl From<ModelId> for u8 {
    fn from(m: ModelId) -> u8 {
        m.number()
    }
}

impl fmt::Display for ModelId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Model #{}", self.number())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Model1Params {
    /// Expected photon pairs per quadrant `N`.
    pub pairs: f64,
    /// `pa_i`
    pub alice: [f64; 2],
    /// `pb_k`
    pub bob: [f64; 2],
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Model2Params {
    pub pairs: f64,
    /// `pa_ij`
    pub alice: [f64; 4],
    /// `pb_kl`
    pub bob: [f64; 4],
}

/// Only the products with `N` are identifiable, so they are stored directly.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Model3Params {
    /// `N·pa_ij`
    pub alice_rate: [f64; 4],
    /// `N·pb_kl`
    pub bob_rate: [f64; 4],
    /// `N·pc_ijkl`
    pub coinc_rate: [f64; 16],
    /// Coincidence window width `w`, ns.
    pub window_ns: f64,
    /// Experiment duration `T`, ns.
    pub duration_ns: f64,
}

/// Coefficients of variation of the Model #3 parameters across experiments.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CvParams {
    pub alice: [f64; 4],
    pub bob: [f64; 4],
    pub coinc: [f64; 16],
}

impl CvParams {
    pub fn uniform(alice: f64, bob: f64, coinc: f64) -> Self {
        Self { alice: [alice; 4], bob: [bob; 4], coinc: [coinc; 16] }
    }

    /// Per-channel values in chi-square order.
    pub fn channels(&self) -> [f64; 24] {
        let mut out = [0.0; 24];
        out[..4].copy_from_slice(&self.alice);
        out[4..8].copy_from_slice(&self.bob);
        out[8..].copy_from_slice(&self.coinc);
        out
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels().iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::invalid("coefficients of variation must be finite and >= 0"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Model4Params {
    pub means: Model3Params,
    pub cv: CvParams,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case")]
pub enum FilterParams {
    Model1(Model1Params),
    Model2(Model2Params),
    Model3(Model3Params),
    Model4(Model4Params),
}

fn check_probabilities(name: &str, ps: &[f64]) -> Result<()> {
    if let Some(p) = ps.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(Error::invalid(format!("{name} probability {p} outside [0, 1]")));
    }
    Ok(())
}

fn check_pairs(n: f64) -> Result<()> {
    if !(n > 0.0 && n.is_finite()) {
        return Err(Error::invalid(format!("pairs per quadrant must be positive, got {n}")));
    }
    Ok(())
}

impl Model3Params {
    fn validate(&self) -> Result<()> {
        let rates = self.alice_rate.iter().chain(&self.bob_rate).chain(&self.coinc_rate);
        if rates.clone().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::invalid("Model #3 rates must be finite and non-negative"));
        }
        if !(self.window_ns >= 0.0 && self.window_ns.is_finite()) {
            return Err(Error::invalid(format!("window width must be >= 0, got {}", self.window_ns)));
        }
        if !(self.duration_ns > 0.0 && self.duration_ns.is_finite()) {
            return Err(Error::invalid(format!("duration must be > 0, got {}", self.duration_ns)));
        }
        Ok(())
    }

    /// Model #2 expressed in Model #3 form: `N·pc = N·pa·pb`, no accidentals.
    pub fn from_model2(p: &Model2Params, duration_ns: f64) -> Self {
        Self {
            alice_rate: p.alice.map(|v| p.pairs * v),
            bob_rate: p.bob.map(|v| p.pairs * v),
            coinc_rate: std::array::from_fn(|idx| {
                let (i, j, k, l) = coinc_labels(idx);
                p.pairs * p.alice[single_index(i, j)] * p.bob[single_index(k, l)]
            }),
            window_ns: 0.0,
            duration_ns,
        }
    }
}

impl FilterParams {
    pub fn model(&self) -> ModelId {
        match self {
            FilterParams::Model1(_) => ModelId::One,
            FilterParams::Model2(_) => ModelId::Two,
            FilterParams::Model3(_) => ModelId::Three,
            FilterParams::Model4(_) => ModelId::Four,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            FilterParams::Model1(p) => {
                check_pairs(p.pairs)?;
                check_probabilities("Alice", &p.alice)?;
                check_probabilities("Bob", &p.bob)
            }
            FilterParams::Model2(p) => {
                check_pairs(p.pairs)?;
                check_probabilities("Alice", &p.alice)?;
                check_probabilities("Bob", &p.bob)
            }
            FilterParams::Model3(p) => p.validate(),
            FilterParams::Model4(p) => {
                p.means.validate()?;
                p.cv.validate()
            }
        }
    }

    /// Build from a flat value list:
    /// Model #1 `[N, pa_0, pa_1, pb_0, pb_1]`;
    /// Model #2 `[N, pa_00..pa_11, pb_00..pb_11]`;
    /// Model #3 `[N·pa (4), N·pb (4), N·pc (16), w, T]`;
    /// Model #4 the Model #3 list followed by `cva (4), cvb (4), cvc (16)`.
    pub fn from_flat(model: ModelId, v: &[f64]) -> Result<Self> {
        let expected = match model {
            ModelId::One => 5,
            ModelId::Two => 9,
            ModelId::Three => 26,
            ModelId::Four => 50,
        };
        if v.len() != expected {
            return Err(Error::invalid(format!(
                "{model} takes {expected} values, got {}",
                v.len()
            )));
        }
        let arr4 = |s: &[f64]| -> [f64; 4] { std::array::from_fn(|n| s[n]) };
        let arr16 = |s: &[f64]| -> [f64; 16] { std::array::from_fn(|n| s[n]) };
        let m3 = |v: &[f64]| Model3Params {
            alice_rate: arr4(&v[0..4]),
            bob_rate: arr4(&v[4..8]),
            coinc_rate: arr16(&v[8..24]),
            window_ns: v[24],
            duration_ns: v[25],
        };
        let params = match model {
            ModelId::One => FilterParams::Model1(Model1Params {
                pairs: v[0],
                alice: [v[1], v[2]],
                bob: [v[3], v[4]],
            }),
            ModelId::Two => FilterParams::Model2(Model2Params {
                pairs: v[0],
                alice: arr4(&v[1..5]),
                bob: arr4(&v[5..9]),
            }),
            ModelId::Three => FilterParams::Model3(m3(v)),
            ModelId::Four => FilterParams::Model4(Model4Params {
                means: m3(v),
                cv: CvParams { alice: arr4(&v[26..30]), bob: arr4(&v[30..34]), coinc: arr16(&v[34..50]) },
            }),
        };
        params.validate()?;
        Ok(params)
    }

    /// Effective per-channel rates `(X, Z, Y, w, T)`.
    pub fn rates(&self) -> EffectiveRates {
        match self {
            FilterParams::Model1(p) => EffectiveRates {
                alice: std::array::from_fn(|n| p.pairs * p.alice[n / 2]),
                bob: std::array::from_fn(|n| p.pairs * p.bob[n / 2]),
                coinc: std::array::from_fn(|idx| {
                    let (i, _, k, _) = coinc_labels(idx);
                    p.pairs * p.alice[i] * p.bob[k]
                }),
                window_ns: 0.0,
                duration_ns: 1.0,
            },
            FilterParams::Model2(p) => {
                let m3 = Model3Params::from_model2(p, 1.0);
                EffectiveRates {
                    alice: m3.alice_rate,
                    bob: m3.bob_rate,
                    coinc: m3.coinc_rate,
                    window_ns: 0.0,
                    duration_ns: 1.0,
                }
            }
            FilterParams::Model3(p) | FilterParams::Model4(Model4Params { means: p, .. }) => EffectiveRates {
                alice: p.alice_rate,
                bob: p.bob_rate,
                coinc: p.coinc_rate,
                window_ns: p.window_ns,
                duration_ns: p.duration_ns,
            },
        }
    }

    /// Same parameters with a different coincidence window (Models #3/#4).
    pub fn with_window(&self, window_ns: f64) -> Self {
        let mut out = *self;
        match &mut out {
            FilterParams::Model3(p) => p.window_ns = window_ns,
            FilterParams::Model4(p) => p.means.window_ns = window_ns,
            _ => {}
        }
        out
    }

    pub fn cv(&self) -> Option<&CvParams> {
        match self {
            FilterParams::Model4(p) => Some(&p.cv),
            _ => None,
        }
    }
}

/// The common form all four models reduce to.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EffectiveRates {
    pub alice: [f64; 4],
    pub bob: [f64; 4],
    pub coinc: [f64; 16],
    pub window_ns: f64,
    pub duration_ns: f64,
}

impl EffectiveRates {
    pub fn predict(&self, qp: &QuantumProbs) -> Prediction {
        let a: [f64; 4] = std::array::from_fn(|n| 2.0 * self.alice[n] * qp.qa[n]);
        let b: [f64; 4] = std::array::from_fn(|n| 2.0 * self.bob[n] * qp.qb[n]);
        let accidental = self.window_ns / self.duration_ns;
        let c: [f64; 16] = std::array::from_fn(|idx| {
            let (i, j, k, l) = coinc_labels(idx);
            self.coinc[idx] * qp.qc[idx] + a[single_index(i, j)] * b[single_index(k, l)] * accidental
        });
        Prediction::from_totals(a, b, c)
    }
}

/// Per-channel variances for Model #4.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Variances {
    pub ua: [f64; 4],
    pub ub: [f64; 4],
    pub c: [f64; 16],
}

/// Expected counts for one experiment.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub a: [f64; 4],
    pub b: [f64; 4],
    pub c: [f64; 16],
    pub ua: [f64; 4],
    pub ub: [f64; 4],
    pub variances: Option<Variances>,
}

impl Prediction {
    pub fn from_totals(a: [f64; 4], b: [f64; 4], c: [f64; 16]) -> Self {
        let (pa, pb) = paired_sums(&c);
        Self {
            a,
            b,
            c,
            ua: std::array::from_fn(|n| a[n] - pa[n]),
            ub: std::array::from_fn(|n| b[n] - pb[n]),
            variances: None,
        }
    }

    /// Predicted channels in chi-square order: `ûa`, `ûb`, `ĉ`.
    pub fn channels(&self) -> [f64; 24] {
        let mut out = [0.0; 24];
        out[..4].copy_from_slice(&self.ua);
        out[4..8].copy_from_slice(&self.ub);
        out[8..].copy_from_slice(&self.c);
        out
    }

    /// Variances in chi-square order; the Poisson variance (= mean) when
    /// the prediction carries no explicit variances.
    pub fn variance_channels(&self) -> [f64; 24] {
        match &self.variances {
            Some(v) => {
                let mut out = [0.0; 24];
                out[..4].copy_from_slice(&v.ua);
                out[4..8].copy_from_slice(&v.ub);
                out[8..].copy_from_slice(&v.c);
                out
            }
            None => self.channels(),
        }
    }

    /// Multiply every count (and variance) by `s`.
    pub fn scaled(&self, s: f64) -> Self {
        let mut out = Self::from_totals(self.a.map(|v| v * s), self.b.map(|v| v * s), self.c.map(|v| v * s));
        out.variances = self.variances.map(|v| Variances {
            ua: v.ua.map(|x| x * s),
            ub: v.ub.map(|x| x * s),
            c: v.c.map(|x| x * s),
        });
        out
    }
}

/// `â_ij = 2N·pa_i·qa_ij`, `b̂_kl = 2N·pb_k·qb_kl`, `ĉ_ijkl = N·pa_i·pb_k·qc_ijkl`.
pub fn predict_model1(params: &Model1Params, qp: &QuantumProbs) -> Result<Prediction> {
    let fp = FilterParams::Model1(*params);
    fp.validate()?;
    Ok(fp.rates().predict(qp))
}

/// As Model #1 with per-result probabilities `pa_ij`, `pb_kl`.
pub fn predict_model2(params: &Model2Params, qp: &QuantumProbs) -> Result<Prediction> {
    let fp = FilterParams::Model2(*params);
    fp.validate()?;
    Ok(fp.rates().predict(qp))
}

/// `ĉ_ijkl = N·pc_ijkl·qc_ijkl + â_ij·b̂_kl·w/T`.
pub fn predict_model3(params: &Model3Params, qp: &QuantumProbs) -> Result<Prediction> {
    let fp = FilterParams::Model3(*params);
    fp.validate()?;
    Ok(fp.rates().predict(qp))
}

/// Model #3 means with variances `m + (m·cv)²` on every chi-square channel.
///
/// The coincidence variance ignores the contribution of accidental counts.
pub fn predict_model4(params: &Model4Params, qp: &QuantumProbs) -> Result<Prediction> {
    params.cv.validate()?;
    let mut pred = predict_model3(&params.means, qp)?;
    pred.variances = Some(inflate_variances(&pred, &params.cv));
    Ok(pred)
}

pub fn inflate_variances(pred: &Prediction, cv: &CvParams) -> Variances {
    let v = |m: f64, cv: f64| m + (m * cv).powi(2);
    Variances {
        ua: std::array::from_fn(|n| v(pred.ua[n], cv.alice[n])),
        ub: std::array::from_fn(|n| v(pred.ub[n], cv.bob[n])),
        c: std::array::from_fn(|n| v(pred.c[n], cv.coinc[n])),
    }
}

pub fn predict(params: &FilterParams, qp: &QuantumProbs) -> Result<Prediction> {
    match params {
        FilterParams::Model1(p) => predict_model1(p, qp),
        FilterParams::Model2(p) => predict_model2(p, qp),
        FilterParams::Model3(p) => predict_model3(p, qp),
        FilterParams::Model4(p) => predict_model4(p, qp),
    }
}

/// Fraction of each quadrant's predicted coincidences falling in each
/// result pair: `ĉ_ijkl / Σ_jl ĉ_ijkl`.
pub fn fair_sampling_ratios(pred: &Prediction) -> Result<[f64; 16]> {
    let mut quadrant = [0.0; 4];
    for (idx, &v) in pred.c.iter().enumerate() {
        let (i, _, k, _) = coinc_labels(idx);
        quadrant[i * 2 + k] += v;
    }
    if let Some(q) = quadrant.iter().position(|s| !(*s > 0.0)) {
        return Err(Error::degenerate(format!(
            "quadrant ({}, {}) has no predicted coincidences",
            q / 2,
            q % 2
        )));
    }
    Ok(std::array::from_fn(|idx| {
        let (i, _, k, _) = coinc_labels(idx);
        pred.c[idx] / quadrant[i * 2 + k]
    }))
}

/// Largest `|ratio − qc|` over all channels.
pub fn fair_sampling_violation(pred: &Prediction, qp: &QuantumProbs) -> Result<f64> {
    let r = fair_sampling_ratios(pred)?;
    Ok(r.iter().zip(&qp.qc).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
}
