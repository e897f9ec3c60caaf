//! Chi-square goodness of fit, degrees of freedom, the Z-score criterion
//! and the compound (Poisson × random efficiency) variance law.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Binomial, Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::counts::{channel_name, CountTable, ModelId, Prediction};
use crate::{Error, Result};

/// Counts in the full 41-experiment series.
pub const DEFAULT_COUNTS: usize = 984;
/// A model is rejected once `|Z|` reaches this value.
pub const Z_REJECT: f64 = 5.0;
/// Below this expected count the Normal approximation is doubtful.
pub const SMALL_EXPECTED_COUNT: f64 = 10.0;

/// One term of the chi-square sum.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Contribution {
    pub experiment: usize,
    pub channel: String,
    pub value: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitStatistics {
    pub model: ModelId,
    #[serde(rename = "X")]
    pub x: f64,
    #[serde(rename = "DF")]
    pub df: usize,
    #[serde(rename = "Z")]
    pub z: f64,
    pub accepted: bool,
    pub contributions: Vec<Contribution>,
}

impl FitStatistics {
    /// Chi-square (or its variance-weighted form when predictions carry
    /// variances) together with the per-channel breakdown.
    pub fn evaluate(model: ModelId, observed: &[CountTable], predicted: &[Prediction]) -> Result<Self> {
        let terms = weighted_terms(observed, predicted, predicted.iter().any(|p| p.variances.is_some()))?;
        let x = terms.iter().map(|t| t.value).sum();
        let df = degrees_of_freedom(model, observed.len() * 24)?;
        let z = z_score(x, df)?;
        Ok(Self { model, x, df, z: z.z, accepted: z.accepted, contributions: terms })
    }
}

fn weighted_terms(observed: &[CountTable], predicted: &[Prediction], use_variances: bool) -> Result<Vec<Contribution>> {
    if observed.len() != predicted.len() {
        return Err(Error::invalid(format!(
            "{} observed tables but {} predictions",
            observed.len(),
            predicted.len()
        )));
    }
    let mut out = Vec::with_capacity(observed.len() * 24);
    let mut small = Vec::new();
    for (m, (obs, pred)) in observed.iter().zip(predicted).enumerate() {
        let o = obs.channels()?;
        let p = pred.channels();
        let v = if use_variances {
            match &pred.variances {
                Some(_) => pred.variance_channels(),
                None => return Err(Error::invalid(format!("prediction for experiment {m} has no variances"))),
            }
        } else {
            p
        };
        for ch in 0..24 {
            if !(v[ch] > 0.0) || !p[ch].is_finite() {
                return Err(Error::degenerate(format!(
                    "experiment {m} channel {} has non-positive denominator {}",
                    channel_name(ch),
                    v[ch]
                )));
            }
            if p[ch] < SMALL_EXPECTED_COUNT {
                small.push(format!("{m}:{}", channel_name(ch)));
            }
            out.push(Contribution {
                experiment: m,
                channel: channel_name(ch),
                value: (o[ch] - p[ch]).powi(2) / v[ch],
            });
        }
    }
    if !small.is_empty() {
        log::warn!(
            "{} channels expect fewer than {SMALL_EXPECTED_COUNT} counts, where the Normal approximation is poor (first: {})",
            small.len(),
            small[0]
        );
    }
    Ok(out)
}

/// `X = Σ (obs − pred)² / pred` over `ua`, `ub`, `c` channels of every experiment.
pub fn chi_square_x(observed: &[CountTable], predicted: &[Prediction]) -> Result<f64> {
    Ok(weighted_terms(observed, predicted, false)?.iter().map(|t| t.value).sum())
}

/// `Xrev = Σ (obs − pred)² / v` using the variances carried by the predictions.
pub fn chi_square_xrev(observed: &[CountTable], predicted: &[Prediction]) -> Result<f64> {
    Ok(weighted_terms(observed, predicted, true)?.iter().map(|t| t.value).sum())
}

/// Number of free parameters `F` of each model (15 for the state plus the
/// filter parameters). Model #4 adds no fitted parameters: its coefficients
/// of variation are set by hand.
pub fn free_parameters(model: ModelId) -> usize {
    match model {
        ModelId::One => 20,
        ModelId::Two => 24,
        ModelId::Three | ModelId::Four => 39,
    }
}

/// `DF = n_counts − F`.
pub fn degrees_of_freedom(model: ModelId, n_counts: usize) -> Result<usize> {
    let f = free_parameters(model);
    if n_counts <= f {
        return Err(Error::invalid(format!(
            "{model} has {f} parameters but only {n_counts} counts"
        )));
    }
    Ok(n_counts - f)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ZScore {
    pub z: f64,
    /// `|Z| < 5`
    pub accepted: bool,
}

/// `Z = (X − DF) / √(2·DF)`.
pub fn z_score(x: f64, df: usize) -> Result<ZScore> {
    if df == 0 {
        return Err(Error::invalid("degrees of freedom must be positive"));
    }
    let df = df as f64;
    let z = (x - df) / (2.0 * df).sqrt();
    Ok(ZScore { z, accepted: z.abs() < Z_REJECT })
}

/// Counting `n` of `N` available events, each detected with probability `x`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompoundCountSpec {
    /// `E(N)`; `N` is Poisson.
    pub expected_events: f64,
    /// `E(x)`
    pub mean_efficiency: f64,
    /// `CV(x)`
    pub cv_efficiency: f64,
}

impl CompoundCountSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.expected_events >= 0.0 && self.expected_events.is_finite()) {
            return Err(Error::invalid("expected event count must be >= 0"));
        }
        if !(0.0..=1.0).contains(&self.mean_efficiency) {
            return Err(Error::invalid("mean detection probability must lie in [0, 1]"));
        }
        if !(self.cv_efficiency >= 0.0 && self.cv_efficiency.is_finite()) {
            return Err(Error::invalid("coefficient of variation must be >= 0"));
        }
        Ok(())
    }
}

/// `E(n | N, x) = N·x`
pub fn conditional_mean(n: f64, x: f64) -> f64 {
    n * x
}

/// `V(n | N, x) = N·x·(1 − x)`
pub fn conditional_variance(n: f64, x: f64) -> f64 {
    n * x * (1.0 - x)
}

/// `E(n) = E(N)·E(x)` and `V(n) = E(n) + (E(n)·CV(x))²` for Poisson `N`.
pub fn compound_variance(spec: &CompoundCountSpec) -> (f64, f64) {
    let mean = spec.expected_events * spec.mean_efficiency;
    (mean, mean + (mean * spec.cv_efficiency).powi(2))
}

/// Monte Carlo estimate of `(E(n), V(n))`: `N ~ Poisson`, `x ~ Beta`
/// matched to `(E(x), CV(x))`, `n ~ Binomial(N, x)`.
pub fn compound_variance_mc_oracle(spec: &CompoundCountSpec, trials: usize, seed: u64) -> Result<(f64, f64)> {
    spec.validate()?;
    if trials < 2 {
        return Err(Error::invalid("need at least two trials"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mu = spec.mean_efficiency;
    let var_x = (mu * spec.cv_efficiency).powi(2);
    let beta = if var_x > 0.0 {
        let room = mu * (1.0 - mu);
        if var_x >= room {
            return Err(Error::invalid(format!(
                "CV(x) = {} is too large for a distribution on [0, 1] with mean {mu}",
                spec.cv_efficiency
            )));
        }
        let kappa = room / var_x - 1.0;
        Some(Beta::new(mu * kappa, (1.0 - mu) * kappa).map_err(|e| Error::invalid(e.to_string()))?)
    } else {
        None
    };
    let poisson = if spec.expected_events > 0.0 {
        Some(Poisson::new(spec.expected_events).map_err(|e| Error::invalid(e.to_string()))?)
    } else {
        None
    };

    // Welford accumulation
    let mut mean = 0.0;
    let mut m2 = 0.0;
    for t in 0..trials {
        let big_n = poisson.as_ref().map_or(0.0, |p| p.sample(&mut rng));
        let x = beta.as_ref().map_or(mu, |b| b.sample(&mut rng));
        let n = if big_n > 0.0 {
            Binomial::new(big_n as u64, x)
                .map_err(|e| Error::invalid(e.to_string()))?
                .sample(&mut rng) as f64
        } else {
            0.0
        };
        let delta = n - mean;
        mean += delta / (t + 1) as f64;
        m2 += delta * (n - mean);
    }
    Ok((mean, m2 / (trials - 1) as f64))
}

/// Independent Poisson draws for the unpaired singles and coincidences of a
/// prediction; totals are rebuilt as `a_ij = ua_ij + Σ_kl c_ijkl`.
pub fn sample_counts<R: rand::Rng + ?Sized>(pred: &Prediction, rng: &mut R) -> Result<CountTable> {
    let mut draw = |mean: f64| -> Result<f64> {
        if !(mean >= 0.0 && mean.is_finite()) {
            return Err(Error::degenerate(format!("cannot draw counts with mean {mean}")));
        }
        if mean == 0.0 {
            return Ok(0.0);
        }
        Ok(Poisson::new(mean).map_err(|e| Error::invalid(e.to_string()))?.sample(rng))
    };
    let mut ua = [0.0; 4];
    let mut ub = [0.0; 4];
    let mut c = [0.0; 16];
    for n in 0..4 {
        ua[n] = draw(pred.ua[n])?;
    }
    for n in 0..4 {
        ub[n] = draw(pred.ub[n])?;
    }
    for n in 0..16 {
        c[n] = draw(pred.c[n])?;
    }
    let a = std::array::from_fn(|n| ua[n] + (0..4).map(|kl| c[n * 4 + kl]).sum::<f64>());
    let b = std::array::from_fn(|n| ub[n] + (0..4).map(|ij| c[ij * 4 + n]).sum::<f64>());
    Ok(CountTable { a, b, c })
}
