//! Simultaneous fit of the state and the filter parameters to all
//! experiments of a series by minimizing X (or Xrev for Model #4).
//!
//! The default optimizer is Levenberg–Marquardt on the weighted residuals
//! with an analytic Jacobian; Nelder–Mead is available through
//! [`OptimizerConfig::method`]. The optimizer works on `log ρ` (see
//! [`state_coords`]); results are reported as Cholesky parameters. Each
//! restart starts from the same data-derived filter guess and a linear
//! inversion of the coincidence fractions, perturbed with seeded noise.
//! The best restart wins, ties going to the lowest index.

mod completion;
mod layout;
mod logstate;
mod objective;
mod optimizer;

pub use completion::{complete, complete_max_min_eigenvalue, pauli_component, unobservable_components, Completion};
pub use layout::{pack_parameters, FilterSlot, ParameterLayout, Transform, DENSITY_LEN};
pub use logstate::{coords_state, state_coords};
pub use optimizer::{Method, OptimizerConfig, StopReason};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::counts::{
    channel_name, predict, CountTable, CvParams, FilterParams, Model1Params, Model2Params, Model3Params,
    Model4Params, ModelId, Prediction,
};
use nalgebra::{DMatrix, DVector};

use completion::pauli_pair;
use crate::quantum::{
    trace_product, ComplexMatrix4, C64, encode_density, geometry_for_experiment, quantum_probs, DensityMatrix, DensityParams,
    ExperimentGeometry,
};
use crate::scanblue::{DEFAULT_WINDOW_NS, EXPERIMENT_DURATION_NS};
use crate::stats::FitStatistics;
use crate::{coinc_labels, single_index, Error, Result};

use objective::Evaluator;
use optimizer::Outcome;

/// Fallback start when the data carry no coincidences.
const START_VISIBILITY: f64 = 0.9;
/// Smallest eigenvalue of the linear-inversion start.
const INVERSION_EIGENVALUE_FLOOR: f64 = 0.02;
const DENSITY_NOISE_FIRST: f64 = 1e-3;
const DENSITY_NOISE_OTHERS: f64 = 0.3;
const FILTER_NOISE_OTHERS: f64 = 0.02;

#[derive(Clone, Debug)]
pub struct FitProblem {
    pub model: ModelId,
    pub experiment_ids: Vec<String>,
    pub observed: Vec<CountTable>,
    pub geometries: Vec<ExperimentGeometry>,
    /// Coincidence window per experiment, ns (Models #3/#4).
    pub windows_ns: Vec<f64>,
    pub duration_ns: f64,
    /// Required for Model #4.
    pub cv: Option<CvParams>,
    /// Model #4 only: minimize Xrev instead of reusing the Model #3 optimum.
    pub reoptimize_cv: bool,
    /// How the components the data cannot determine are reported.
    pub completion: Completion,
    pub options: OptimizerConfig,
}

impl FitProblem {
    /// `thetas` are Alice's bias angles in radians, one per table.
    pub fn new(model: ModelId, observed: Vec<CountTable>, thetas: &[f64]) -> Result<Self> {
        let p = Self {
            model,
            experiment_ids: (0..observed.len()).map(|m| format!("exp{m:03}")).collect(),
            windows_ns: vec![DEFAULT_WINDOW_NS; observed.len()],
            geometries: thetas.iter().map(|&t| geometry_for_experiment(t)).collect(),
            observed,
            duration_ns: EXPERIMENT_DURATION_NS,
            cv: None,
            reoptimize_cv: false,
            completion: Completion::default(),
            options: OptimizerConfig::default(),
        };
        if p.geometries.len() != p.observed.len() {
            return Err(Error::invalid(format!(
                "{} count tables but {} angles",
                p.observed.len(),
                p.geometries.len()
            )));
        }
        Ok(p)
    }

    pub fn with_ids(mut self, ids: Vec<String>) -> Self {
        self.experiment_ids = ids;
        self
    }

    pub fn with_window(mut self, window_ns: f64) -> Self {
        self.windows_ns = vec![window_ns; self.observed.len()];
        self
    }

    pub fn with_windows(mut self, windows_ns: Vec<f64>) -> Self {
        self.windows_ns = windows_ns;
        self
    }

    pub fn with_duration(mut self, duration_ns: f64) -> Self {
        self.duration_ns = duration_ns;
        self
    }

    pub fn with_cv(mut self, cv: CvParams) -> Self {
        self.cv = Some(cv);
        self
    }

    pub fn with_options(mut self, options: OptimizerConfig) -> Self {
        self.options = options;
        self
    }

    pub fn thetas(&self) -> Vec<f64> {
        self.geometries.iter().map(|g| g.theta()).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.observed.len();
        if n == 0 {
            return Err(Error::invalid("a fit needs at least one experiment"));
        }
        if self.geometries.len() != n || self.windows_ns.len() != n || self.experiment_ids.len() != n {
            return Err(Error::invalid("counts, geometries, windows and ids must be aligned"));
        }
        for t in &self.observed {
            t.validate()?;
        }
        if let Some(w) = self.windows_ns.iter().find(|w| !(**w >= 0.0 && w.is_finite())) {
            return Err(Error::invalid(format!("window width must be >= 0, got {w}")));
        }
        if !(self.duration_ns > 0.0 && self.duration_ns.is_finite()) {
            return Err(Error::invalid("duration must be positive"));
        }
        match (self.model, &self.cv) {
            (ModelId::Four, None) => return Err(Error::invalid("Model #4 needs coefficients of variation")),
            (ModelId::Four, Some(cv)) => cv.validate()?,
            _ => {}
        }
        self.options.validate()
    }

    fn evaluator(&self, with_cv: bool) -> Result<Evaluator> {
        let accidental = match self.model {
            ModelId::Three | ModelId::Four => self.windows_ns.iter().map(|w| w / self.duration_ns).collect(),
            _ => vec![0.0; self.observed.len()],
        };
        let cv = if with_cv { self.cv.map(|c| c.channels()) } else { None };
        Evaluator::new(pack_parameters(self.model), &self.observed, &self.geometries, accidental, cv)
    }
}

/// Chi-square objective at an optimizer vector (X, or Xrev for Model #4).
pub fn objective(problem: &FitProblem, v: &[f64]) -> Result<f64> {
    pack_parameters(problem.model).check_len(v)?;
    Ok(problem.evaluator(problem.model == ModelId::Four)?.value(v))
}

/// Analytic gradient of [`objective`].
pub fn gradient(problem: &FitProblem, v: &[f64]) -> Result<Vec<f64>> {
    pack_parameters(problem.model).check_len(v)?;
    Ok(problem.evaluator(problem.model == ModelId::Four)?.gradient(v))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TracePoint {
    pub iteration: usize,
    #[serde(rename = "X")]
    pub x: f64,
}

/// Observed and predicted value of one chi-square channel.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelResidual {
    pub experiment: String,
    pub channel: String,
    pub observed: f64,
    pub predicted: f64,
    pub std_error: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub model: ModelId,
    pub params: FilterParams,
    pub density: DensityMatrix,
    pub density_params: DensityParams,
    pub statistics: FitStatistics,
    pub trace: Vec<TracePoint>,
    pub stop: StopReason,
    pub converged: bool,
    pub iterations: usize,
    pub evaluations: usize,
    pub best_restart: usize,
    pub restart_objectives: Vec<Option<f64>>,
    pub experiment_ids: Vec<String>,
    /// Radians.
    pub thetas: Vec<f64>,
    pub windows_ns: Vec<f64>,
    pub channels: Vec<ChannelResidual>,
}

impl FitResult {
    /// Predictions of the fitted parameters for every experiment.
    pub fn predictions(&self) -> Result<Vec<Prediction>> {
        predictions_for(&self.params, &self.density, &self.thetas, &self.windows_ns)
    }

    /// X (or Xrev) recomputed from the reported parameters.
    pub fn recompute(&self, observed: &[CountTable]) -> Result<FitStatistics> {
        FitStatistics::evaluate(self.model, observed, &self.predictions()?)
    }
}

fn predictions_for(params: &FilterParams, rho: &DensityMatrix, thetas: &[f64], windows: &[f64]) -> Result<Vec<Prediction>> {
    thetas
        .iter()
        .zip(windows)
        .map(|(&t, &w)| predict(&params.with_window(w), &quantum_probs(rho, &geometry_for_experiment(t))))
        .collect()
}

fn clamp_probability(p: f64) -> f64 {
    p.clamp(1e-6, 0.999)
}

/// Filter starting values from the data's moments. With `A_i = Σ_j a_ij`,
/// `B_k = Σ_l b_kl` and `C_ik = Σ_jl c_ijkl` averaged over experiments,
/// Model #1 gives `A_i = 2N·pa_i`, `B_k = 2N·pb_k` and `C_ik ≈ N·pa_i·pb_k`.
pub fn initial_filter(problem: &FitProblem) -> FilterParams {
    let n = problem.observed.len() as f64;
    let mut a = [0.0; 4];
    let mut b = [0.0; 4];
    let mut c_quadrant = [[0.0; 2]; 2];
    let mut accidental = [[0.0; 2]; 2];
    for (m, t) in problem.observed.iter().enumerate() {
        let s = problem.windows_ns[m] / problem.duration_ns;
        for ch in 0..4 {
            a[ch] += t.a[ch] / n;
            b[ch] += t.b[ch] / n;
        }
        for idx in 0..16 {
            let (i, j, k, l) = coinc_labels(idx);
            c_quadrant[i][k] += t.c[idx] / n;
            accidental[i][k] += t.a[single_index(i, j)] * t.b[single_index(k, l)] * s / n;
        }
    }
    let big_a = [a[0] + a[1], a[2] + a[3]];
    let big_b = [b[0] + b[1], b[2] + b[3]];
    let mut pairs_estimates = Vec::new();
    for i in 0..2 {
        for k in 0..2 {
            if c_quadrant[i][k] > 0.0 && big_a[i] > 0.0 && big_b[k] > 0.0 {
                pairs_estimates.push(big_a[i] * big_b[k] / (4.0 * c_quadrant[i][k]));
            }
        }
    }
    let pairs = if pairs_estimates.is_empty() {
        // no coincidences: fall back on typical efficiencies
        ((big_a[0] + big_a[1]) / (4.0 * 0.05)).max(1.0)
    } else {
        pairs_estimates.iter().sum::<f64>() / pairs_estimates.len() as f64
    };
    match problem.model {
        ModelId::One => FilterParams::Model1(Model1Params {
            pairs,
            alice: big_a.map(|v| clamp_probability(v / (2.0 * pairs))),
            bob: big_b.map(|v| clamp_probability(v / (2.0 * pairs))),
        }),
        ModelId::Two => FilterParams::Model2(Model2Params {
            pairs,
            alice: a.map(|v| clamp_probability(v / pairs)),
            bob: b.map(|v| clamp_probability(v / pairs)),
        }),
        ModelId::Three | ModelId::Four => {
            let m3 = Model3Params {
                alice_rate: a.map(|v| v.max(1.0)),
                bob_rate: b.map(|v| v.max(1.0)),
                coinc_rate: std::array::from_fn(|idx| {
                    let (i, _, k, _) = coinc_labels(idx);
                    (c_quadrant[i][k] - accidental[i][k]).max(1.0)
                }),
                window_ns: problem.windows_ns[0],
                duration_ns: problem.duration_ns,
            };
            FilterParams::Model3(m3)
        }
    }
}

/// Least-squares state from the coincidence fractions of every quadrant,
/// which equal `qc_ijkl` under fair sampling. Only the observable Pauli
/// components are estimated; the result is pulled inside the PSD cone so
/// that every factor column starts away from zero.
pub fn linear_inversion(problem: &FitProblem) -> Result<DensityMatrix> {
    let comps: Vec<(usize, usize)> = (1..16).map(|n| (n / 4, n % 4)).filter(|&(a, b)| a != 2 && b != 2).collect();
    let paulis: Vec<ComplexMatrix4> = comps.iter().map(|&(a, b)| pauli_pair(a, b)).collect();
    let mut rows = Vec::new();
    let mut rhs = Vec::new();
    for (t, g) in problem.observed.iter().zip(&problem.geometries) {
        let effects = g.effects();
        for i in 0..2 {
            for k in 0..2 {
                let idx = |j, l| crate::coinc_index(i, j, k, l);
                let total: f64 = (0..4).map(|jl| t.c[idx(jl / 2, jl % 2)]).sum();
                if total <= 0.0 {
                    continue;
                }
                for jl in 0..4 {
                    let e = &effects[8 + idx(jl / 2, jl % 2)];
                    rows.extend(paulis.iter().map(|p| trace_product(e, p) / 4.0));
                    rhs.push(t.c[idx(jl / 2, jl % 2)] / total - e.trace().re / 4.0);
                }
            }
        }
    }
    if rhs.is_empty() {
        return DensityMatrix::werner(START_VISIBILITY);
    }
    let a = DMatrix::from_row_slice(rhs.len(), comps.len(), &rows);
    let s = a
        .svd(true, true)
        .solve(&DVector::from_vec(rhs), 1e-10)
        .map_err(|e| Error::invalid(format!("linear inversion failed: {e}")))?;
    let mut m = ComplexMatrix4::identity() * C64::new(0.25, 0.0);
    for (p, v) in paulis.iter().zip(s.iter()) {
        m += p * C64::new(v / 4.0, 0.0);
    }
    let eig = m.symmetric_eigen();
    let clipped = eig.eigenvalues.map(|l| l.max(INVERSION_EIGENVALUE_FLOOR));
    let d = ComplexMatrix4::from_diagonal(&clipped.map(|l| C64::new(l, 0.0)));
    let rebuilt = eig.eigenvectors * d * eig.eigenvectors.adjoint();
    DensityMatrix::normalized((rebuilt + rebuilt.adjoint()) * C64::new(0.5, 0.0))
}

fn starting_vector(problem: &FitProblem, layout: &ParameterLayout, filter: &FilterParams, restart: usize) -> Result<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(problem.options.seed);
    rng.set_stream(restart as u64);
    let rho0 = linear_inversion(problem)?;
    let mut v = layout.pack(&rho0, filter)?;
    let dn = if restart == 0 { DENSITY_NOISE_FIRST } else { DENSITY_NOISE_OTHERS };
    for x in v[..DENSITY_LEN].iter_mut() {
        *x += dn * rng.sample::<f64, _>(StandardNormal);
    }
    if restart > 0 {
        for u in v[DENSITY_LEN..].iter_mut() {
            *u += FILTER_NOISE_OTHERS * rng.sample::<f64, _>(StandardNormal);
        }
    }
    Ok(v)
}

fn run(ev: &Evaluator, start: &[f64], cfg: &OptimizerConfig) -> Result<Outcome> {
    match cfg.method {
        Method::LevenbergMarquardt => optimizer::levenberg_marquardt(ev, start, cfg),
        Method::NelderMead => optimizer::nelder_mead(ev, start, cfg),
    }
}

/// Fit the problem's model. Deterministic for a given `options.seed`.
pub fn fit(problem: &FitProblem) -> Result<FitResult> {
    problem.validate()?;
    let layout = pack_parameters(problem.model);
    let ev = problem.evaluator(false)?;
    let filter0 = initial_filter(problem);

    let outcomes: Vec<Result<Outcome>> = (0..problem.options.restarts)
        .into_par_iter()
        .map(|r| {
            let start = starting_vector(problem, &layout, &filter0, r)?;
            run(&ev, &start, &problem.options)
        })
        .collect();

    let restart_objectives: Vec<Option<f64>> = outcomes.iter().map(|o| o.as_ref().ok().map(|o| o.x)).collect();
    let mut best: Option<(usize, Outcome)> = None;
    let mut first_error = None;
    for (r, o) in outcomes.into_iter().enumerate() {
        match o {
            Ok(o) => {
                if best.as_ref().is_none_or(|(_, b)| o.x < b.x) {
                    best = Some((r, o));
                }
            }
            Err(e) => {
                log::warn!("restart {r} failed: {e}");
                first_error.get_or_insert(e);
            }
        }
    }
    let Some((best_restart, mut outcome)) = best else {
        return Err(first_error.unwrap_or_else(|| Error::invalid("no restarts were run")));
    };

    if problem.model == ModelId::Four && problem.reoptimize_cv {
        let ev4 = problem.evaluator(true)?;
        let o4 = run(&ev4, &outcome.v, &problem.options)?;
        outcome = Outcome {
            iterations: outcome.iterations + o4.iterations,
            evaluations: outcome.evaluations + o4.evaluations,
            ..o4
        };
    }

    let (fitted, filter) = layout.unpack(&outcome.v, problem.windows_ns[0], problem.duration_ns)?;
    let params = match (problem.model, filter, problem.cv) {
        (ModelId::Four, FilterParams::Model3(means), Some(cv)) => FilterParams::Model4(Model4Params { means, cv }),
        (_, f, _) => f,
    };
    let density = complete(&fitted, problem.completion)?;
    let dp = encode_density(&density);
    let thetas = problem.thetas();
    let predictions = predictions_for(&params, &density, &thetas, &problem.windows_ns)?;
    let statistics = FitStatistics::evaluate(problem.model, &problem.observed, &predictions)?;
    let channels = channel_residuals(&problem.experiment_ids, &problem.observed, &predictions)?;

    Ok(FitResult {
        model: problem.model,
        params,
        density,
        density_params: dp,
        statistics,
        trace: outcome.trace.iter().map(|&(iteration, x)| TracePoint { iteration, x }).collect(),
        stop: outcome.stop,
        converged: outcome.stop == StopReason::Converged,
        iterations: outcome.iterations,
        evaluations: outcome.evaluations,
        best_restart,
        restart_objectives,
        experiment_ids: problem.experiment_ids.clone(),
        thetas,
        windows_ns: problem.windows_ns.clone(),
        channels,
    })
}

/// Per-channel observed and predicted counts with one standard error:
/// `√variance` when the prediction carries variances, `√predicted` otherwise.
pub fn channel_residuals(ids: &[String], observed: &[CountTable], predicted: &[Prediction]) -> Result<Vec<ChannelResidual>> {
    let mut out = Vec::with_capacity(observed.len() * 24);
    for ((id, obs), pred) in ids.iter().zip(observed).zip(predicted) {
        let o = obs.channels()?;
        let p = pred.channels();
        let v = pred.variance_channels();
        for ch in 0..24 {
            out.push(ChannelResidual {
                experiment: id.clone(),
                channel: channel_name(ch),
                observed: o[ch],
                predicted: p[ch],
                std_error: v[ch].max(0.0).sqrt(),
            });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests;
