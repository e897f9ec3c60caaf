//! Levenberg–Marquardt on the weighted residuals, and a derivative-free
//! Nelder–Mead fallback. Both record only strictly improving iterates.

use serde::{Deserialize, Serialize};

use super::layout::DENSITY_LEN;
use super::objective::Evaluator;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    #[default]
    LevenbergMarquardt,
    NelderMead,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Converged,
    MaxIterations,
    MaxEvaluations,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub method: Method,
    pub max_iter: usize,
    /// Stop once X has improved by less than `tol · max(1, X)` over the
    /// last [`CONVERGENCE_WINDOW`] iterations.
    pub tol: f64,
    pub restarts: usize,
    pub seed: u64,
    pub max_evaluations: usize,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            method: Method::LevenbergMarquardt,
            max_iter: 2000,
            tol: 1e-6,
            restarts: 5,
            seed: 0,
            max_evaluations: 100_000,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iter == 0 || self.max_evaluations == 0 {
            return Err(Error::invalid("iteration and evaluation limits must be positive"));
        }
        if self.restarts == 0 {
            return Err(Error::invalid("at least one restart is required"));
        }
        if !(self.tol > 0.0 && self.tol.is_finite()) {
            return Err(Error::invalid(format!("tolerance must be positive, got {}", self.tol)));
        }
        Ok(())
    }
}

pub(crate) struct Outcome {
    pub v: Vec<f64>,
    pub x: f64,
    pub trace: Vec<(usize, f64)>,
    pub iterations: usize,
    pub evaluations: usize,
    pub stop: StopReason,
}

/// Remove the identity component of the state block; the objective does
/// not change.
fn normalize_gauge(v: &mut [f64]) {
    super::logstate::center(&mut v[..DENSITY_LEN]);
}

/// Iterations over which the improvement of X is measured.
pub const CONVERGENCE_WINDOW: usize = 50;

/// True when the accepted iterates have stalled: the improvement since the
/// value recorded `CONVERGENCE_WINDOW` iterations ago is below tolerance.
fn stalled(trace: &[(usize, f64)], iter: usize, tol: f64) -> bool {
    let Some(&(_, now)) = trace.last() else { return false };
    if iter < CONVERGENCE_WINDOW {
        return false;
    }
    let horizon = iter - CONVERGENCE_WINDOW;
    // the last accepted value at or before the horizon
    let then = trace.iter().rev().find(|(i, _)| *i <= horizon).map_or(now, |&(_, x)| x);
    then - now < tol * now.max(1.0)
}

pub(crate) fn levenberg_marquardt(ev: &Evaluator, start: &[f64], cfg: &OptimizerConfig) -> Result<Outcome> {
    let n = start.len();
    let mut v = start.to_vec();
    normalize_gauge(&mut v);
    let (mut x, mut jtj, mut jtr) = ev.normal_equations(&v);
    let mut evaluations = 1;
    if !x.is_finite() {
        return Err(Error::Divergence { message: "objective is not finite at the starting point".into(), trace: vec![] });
    }
    let mut trace = vec![(0, x)];
    let mut mu = 1e-3;
    let mut stop = StopReason::MaxIterations;
    let mut iterations = 0;

    'outer: for iter in 1..=cfg.max_iter {
        iterations = iter;
        loop {
            if evaluations >= cfg.max_evaluations {
                stop = StopReason::MaxEvaluations;
                break 'outer;
            }
            let max_diag = (0..n).map(|d| jtj[(d, d)]).fold(0.0, f64::max);
            let floor = 1e-12 * max_diag.max(1e-300);
            let mut a = jtj.clone();
            for d in 0..n {
                a[(d, d)] += mu * jtj[(d, d)].max(floor);
            }
            let step = a.cholesky().map(|c| c.solve(&(-&jtr)));
            let Some(step) = step.filter(|s| s.iter().all(|z| z.is_finite())) else {
                mu *= 10.0;
                if mu > 1e20 {
                    stop = StopReason::Converged;
                    break 'outer;
                }
                continue;
            };
            let trial: Vec<f64> = v.iter().zip(step.iter()).map(|(a, b)| a + b).collect();
            let xt = ev.value(&trial);
            evaluations += 1;
            if xt.is_finite() && xt < x {
                v = trial;
                normalize_gauge(&mut v);
                let (x2, a2, g2) = ev.normal_equations(&v);
                evaluations += 1;
                x = x2;
                jtj = a2;
                jtr = g2;
                if !x.is_finite() {
                    return Err(Error::Divergence { message: "objective became non-finite".into(), trace });
                }
                // centring can cost a rounding error; keep the trace strict
                if trace.last().is_none_or(|&(_, prev)| x < prev) {
                    trace.push((iter, x));
                }
                mu = (mu / 3.0).max(1e-15);
                if stalled(&trace, iter, cfg.tol) {
                    stop = StopReason::Converged;
                    break 'outer;
                }
                break;
            }
            mu *= 4.0;
            if mu > 1e20 {
                // no descent direction left at machine precision
                stop = StopReason::Converged;
                break 'outer;
            }
        }
    }
    Ok(Outcome { v, x, trace, iterations, evaluations, stop })
}

/// Adaptive Nelder–Mead on the fit objective.
pub(crate) fn nelder_mead(ev: &Evaluator, start: &[f64], cfg: &OptimizerConfig) -> Result<Outcome> {
    let opts = SimplexOptions {
        step: 0.05,
        tol: cfg.tol,
        relative: true,
        max_iter: cfg.max_iter,
        max_evaluations: cfg.max_evaluations,
    };
    let mut out = simplex_minimize(|p| ev.value(p), start, &opts)?;
    normalize_gauge(&mut out.v);
    Ok(out)
}

pub(crate) struct SimplexOptions {
    /// Initial edge length (relative for coordinates larger than 0.1).
    pub step: f64,
    /// Stop once the simplex values span less than `tol` (times
    /// `max(1, |f_best|)` when `relative`).
    pub tol: f64,
    pub relative: bool,
    pub max_iter: usize,
    pub max_evaluations: usize,
}

/// Adaptive Nelder–Mead (dimension-dependent coefficients) on any function.
/// Non-finite values count as +∞.
pub(crate) fn simplex_minimize<F: Fn(&[f64]) -> f64>(func: F, start: &[f64], opts: &SimplexOptions) -> Result<Outcome> {
    let n = start.len();
    let nf = n as f64;
    let (alpha, gamma, rho, sigma) = (1.0, 1.0 + 2.0 / nf, 0.75 - 1.0 / (2.0 * nf), 1.0 - 1.0 / nf);
    let mut evaluations = 0;
    let f = |p: &[f64], evals: &mut usize| {
        *evals += 1;
        let y = func(p);
        if y.is_finite() {
            y
        } else {
            f64::INFINITY
        }
    };

    let mut simplex: Vec<Vec<f64>> = vec![start.to_vec()];
    for d in 0..n {
        let mut p = start.to_vec();
        p[d] += if p[d].abs() > 0.1 { opts.step * p[d].abs() } else { opts.step };
        simplex.push(p);
    }
    let mut values: Vec<f64> = simplex.iter().map(|p| f(p, &mut evaluations)).collect();
    if !values[0].is_finite() {
        return Err(Error::Divergence { message: "objective is not finite at the starting point".into(), trace: vec![] });
    }
    let mut best = values[0];
    let mut trace = vec![(0, best)];
    let mut stop = StopReason::MaxIterations;
    let mut iterations = 0;

    for iter in 1..=opts.max_iter {
        iterations = iter;
        let mut order: Vec<usize> = (0..=n).collect();
        order.sort_by(|&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b)));
        simplex = order.iter().map(|&i| simplex[i].clone()).collect();
        values = order.iter().map(|&i| values[i]).collect();
        if values[0] < best {
            best = values[0];
            trace.push((iter, best));
        }
        let scale = if opts.relative { values[0].abs().max(1.0) } else { 1.0 };
        if values[n] - values[0] < opts.tol * scale {
            stop = StopReason::Converged;
            break;
        }
        if evaluations >= opts.max_evaluations {
            stop = StopReason::MaxEvaluations;
            break;
        }
        let centroid: Vec<f64> = (0..n).map(|d| simplex[..n].iter().map(|p| p[d]).sum::<f64>() / nf).collect();
        let along = |t: f64| -> Vec<f64> { (0..n).map(|d| centroid[d] + t * (simplex[n][d] - centroid[d])).collect() };

        let xr = along(-alpha);
        let fr = f(&xr, &mut evaluations);
        if fr < values[0] {
            let xe = along(-alpha * gamma);
            let fe = f(&xe, &mut evaluations);
            if fe < fr {
                simplex[n] = xe;
                values[n] = fe;
            } else {
                simplex[n] = xr;
                values[n] = fr;
            }
            continue;
        }
        if fr < values[n - 1] {
            simplex[n] = xr;
            values[n] = fr;
            continue;
        }
        let (xc, fc) = if fr < values[n] {
            let xc = along(-alpha * rho);
            let fc = f(&xc, &mut evaluations);
            (xc, fc)
        } else {
            let xc = along(rho);
            let fc = f(&xc, &mut evaluations);
            (xc, fc)
        };
        if fc < values[n].min(fr) {
            simplex[n] = xc;
            values[n] = fc;
            continue;
        }
        for i in 1..=n {
            let p: Vec<f64> = (0..n).map(|d| simplex[0][d] + sigma * (simplex[i][d] - simplex[0][d])).collect();
            values[i] = f(&p, &mut evaluations);
            simplex[i] = p;
        }
    }
    let bi = (0..=n).min_by(|&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b))).unwrap_or(0);
    let v = simplex[bi].clone();
    let x = values[bi];
    if x < best {
        trace.push((iterations, x));
    }
    Ok(Outcome { v, x, trace, iterations, evaluations, stop })
}
