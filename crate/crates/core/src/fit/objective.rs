//! Chi-square objective over all experiments with an analytic Jacobian of
//! the weighted residuals `r = (o − p) / √v(p)`, so that `X = Σ r²`.
//!
//! The state is `S / t` with `S = exp(H)` and `t = Tr S`. For an effect
//! `E`, `q = Tr(E S) / t`. With `H = U diag(λ) U†`, `Ẽ = U† E U` and
//! `K = U (Γ ∘ Ẽ) U†` (Γ the divided differences of exp), the derivative
//! along a Hermitian direction `Δ` is `Tr((K − q S) Δ) / t`.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use super::layout::{ParameterLayout, RateJacobian, DENSITY_LEN};
use crate::counts::{CountTable, PREDICTION_FLOOR};
use super::logstate::LogState;
use crate::quantum::{ComplexMatrix4, ExperimentGeometry, FACTOR_OFF_DIAGONAL};
use crate::{coinc_labels, single_index, Result};

/// Everything needed to evaluate the objective repeatedly.
pub(crate) struct Evaluator {
    pub layout: ParameterLayout,
    observed: Vec<[f64; 24]>,
    effects: Vec<Vec<ComplexMatrix4>>,
    /// `w / T` per experiment; zero for Models #1/#2.
    accidental: Vec<f64>,
    /// Squared coefficients of variation per channel (Xrev), or none (X).
    cv2: Option<[f64; 24]>,
}

/// Spectral data of the state shared by all experiments.
struct State {
    spec: LogState,
    /// `exp(H)`, scaled
    s: ComplexMatrix4,
    t: f64,
    gamma: [[f64; 4]; 4],
}

struct Probs {
    q: [f64; 24],
    dq: [[f64; 24]; DENSITY_LEN],
}

/// Derivatives only exist for the channels above the floor.
struct ExperimentTerms {
    r: [f64; 24],
    jac: Option<Vec<[f64; 24]>>,
}

impl Evaluator {
    pub fn new(
        layout: ParameterLayout,
        observed: &[CountTable],
        geometries: &[ExperimentGeometry],
        accidental: Vec<f64>,
        cv: Option<[f64; 24]>,
    ) -> Result<Self> {
        let observed = observed.iter().map(|t| t.channels()).collect::<Result<Vec<_>>>()?;
        Ok(Self {
            layout,
            observed,
            effects: geometries.iter().map(|g| g.effects()).collect(),
            accidental,
            cv2: cv.map(|c| c.map(|v| v * v)),
        })
    }

    pub fn n_experiments(&self) -> usize {
        self.observed.len()
    }

    fn probs(&self, m: usize, st: &State, with_derivs: bool) -> Probs {
        let mut q = [0.0; 24];
        let mut dq = [[0.0; 24]; DENSITY_LEN];
        let t = st.t;
        for (e, eff) in self.effects[m].iter().enumerate() {
            let et = st.spec.u.adjoint() * eff * st.spec.u;
            let qe = (0..4).map(|i| st.spec.weight[i] * et[(i, i)].re).sum::<f64>() / t;
            q[e] = qe;
            if with_derivs {
                let mut inner = et;
                for i in 0..4 {
                    for j in 0..4 {
                        inner[(i, j)] *= st.gamma[i][j];
                    }
                }
                let k = st.spec.u * inner * st.spec.u.adjoint();
                let s = &st.s;
                for d in 0..4 {
                    dq[d][e] = (k[(d, d)].re - qe * s[(d, d)].re) / t;
                }
                for (n, &(r, c)) in FACTOR_OFF_DIAGONAL.iter().enumerate() {
                    let z = k[(r, c)] - s[(r, c)] * qe;
                    dq[4 + 2 * n][e] = 2.0 * z.re / t;
                    dq[5 + 2 * n][e] = 2.0 * z.im / t;
                }
            }
        }
        Probs { q, dq }
    }

    fn experiment(&self, m: usize, st: &State, rj: &RateJacobian, with_jac: bool) -> ExperimentTerms {
        let pr = self.probs(m, st, with_jac);
        let s = self.accidental[m];
        let rates = &rj.rates;
        let q = &pr.q;
        let a: [f64; 4] = std::array::from_fn(|n| 2.0 * rates[n] * q[n]);
        let b: [f64; 4] = std::array::from_fn(|n| 2.0 * rates[4 + n] * q[4 + n]);
        let p = channels(rates, q, &a, &b, s, None, None);

        let obs = &self.observed[m];
        let mut r = [0.0; 24];
        let mut dr_dp = [0.0; 24];
        for ch in 0..24 {
            let floored = p[ch] < PREDICTION_FLOOR;
            let pe = if floored { PREDICTION_FLOOR } else { p[ch] };
            let c2 = self.cv2.map_or(0.0, |c| c[ch]);
            let var = pe + c2 * pe * pe;
            let sd = var.sqrt();
            r[ch] = (obs[ch] - pe) / sd;
            if !floored {
                dr_dp[ch] = -1.0 / sd - (obs[ch] - pe) * (1.0 + 2.0 * c2 * pe) / (2.0 * var * sd);
            }
        }
        if !with_jac {
            return ExperimentTerms { r, jac: None };
        }
        let k = rj.d.len();
        let mut jac = Vec::with_capacity(DENSITY_LEN + k);
        for d in 0..DENSITY_LEN {
            let dp = channels(rates, q, &a, &b, s, None, Some(&pr.dq[d]));
            jac.push(std::array::from_fn(|ch| dr_dp[ch] * dp[ch]));
        }
        for dr in &rj.d {
            let dp = channels(rates, q, &a, &b, s, Some(dr), None);
            jac.push(std::array::from_fn(|ch| dr_dp[ch] * dp[ch]));
        }
        ExperimentTerms { r, jac: Some(jac) }
    }

    fn setup(&self, v: &[f64]) -> Option<(State, RateJacobian)> {
        let spec = LogState::new(&v[..DENSITY_LEN])?;
        let st = State { s: spec.unnormalized(), t: spec.trace(), gamma: spec.gamma(), spec };
        Some((st, self.layout.rate_jacobian(&v[DENSITY_LEN..])))
    }

    /// Objective value; non-finite when the vector is degenerate.
    pub fn value(&self, v: &[f64]) -> f64 {
        let Some((st, rj)) = self.setup(v) else { return f64::NAN };
        let terms: Vec<f64> = (0..self.n_experiments())
            .into_par_iter()
            .map(|m| self.experiment(m, &st, &rj, false).r.iter().map(|x| x * x).sum::<f64>())
            .collect();
        terms.iter().sum()
    }

    /// `(X, JᵀJ, Jᵀr)` accumulated per experiment in a fixed order.
    pub fn normal_equations(&self, v: &[f64]) -> (f64, DMatrix<f64>, DVector<f64>) {
        let n = v.len();
        let Some((st, rj)) = self.setup(v) else {
            return (f64::NAN, DMatrix::zeros(n, n), DVector::zeros(n));
        };
        let parts: Vec<(f64, DMatrix<f64>, DVector<f64>)> = (0..self.n_experiments())
            .into_par_iter()
            .map(|m| {
                let et = self.experiment(m, &st, &rj, true);
                let jac = et.jac.expect("jacobian requested");
                let mut jtj = DMatrix::zeros(n, n);
                let mut jtr = DVector::zeros(n);
                for a in 0..n {
                    let ja = &jac[a];
                    jtr[a] = (0..24).map(|ch| ja[ch] * et.r[ch]).sum();
                    for b in a..n {
                        let jb = &jac[b];
                        let s: f64 = (0..24).map(|ch| ja[ch] * jb[ch]).sum();
                        jtj[(a, b)] = s;
                        jtj[(b, a)] = s;
                    }
                }
                (et.r.iter().map(|x| x * x).sum(), jtj, jtr)
            })
            .collect();
        let mut x = 0.0;
        let mut jtj = DMatrix::zeros(n, n);
        let mut jtr = DVector::zeros(n);
        for (xm, a, g) in parts {
            x += xm;
            jtj += a;
            jtr += g;
        }
        (x, jtj, jtr)
    }

    /// `∇X = 2 Jᵀ r`.
    pub fn gradient(&self, v: &[f64]) -> Vec<f64> {
        let (_, _, jtr) = self.normal_equations(v);
        jtr.iter().map(|g| 2.0 * g).collect()
    }
}

/// Predicted channels (`ua`, `ub`, `c`) or, when a tangent `(dR, dq)` is
/// given, their directional derivative.
fn channels(
    rates: &[f64; 24],
    q: &[f64; 24],
    a: &[f64; 4],
    b: &[f64; 4],
    s: f64,
    drates: Option<&[f64; 24]>,
    dq: Option<&[f64; 24]>,
) -> [f64; 24] {
    let tangent = drates.is_some() || dq.is_some();
    let zero = [0.0; 24];
    let dr = drates.unwrap_or(&zero);
    let dqq = dq.unwrap_or(&zero);
    let (aa, bb): ([f64; 4], [f64; 4]) = if tangent {
        (
            std::array::from_fn(|n| 2.0 * (q[n] * dr[n] + rates[n] * dqq[n])),
            std::array::from_fn(|n| 2.0 * (q[4 + n] * dr[4 + n] + rates[4 + n] * dqq[4 + n])),
        )
    } else {
        (*a, *b)
    };
    let mut c = [0.0; 16];
    for (idx, slot) in c.iter_mut().enumerate() {
        let (i, j, k, l) = coinc_labels(idx);
        let (sa, sb) = (single_index(i, j), single_index(k, l));
        *slot = if tangent {
            q[8 + idx] * dr[8 + idx] + rates[8 + idx] * dqq[8 + idx] + s * (b[sb] * aa[sa] + a[sa] * bb[sb])
        } else {
            rates[8 + idx] * q[8 + idx] + a[sa] * b[sb] * s
        };
    }
    let mut out = [0.0; 24];
    for n in 0..4 {
        let paired_a: f64 = (0..4).map(|kl| c[n * 4 + kl]).sum();
        let paired_b: f64 = (0..4).map(|ij| c[ij * 4 + n]).sum();
        out[n] = aa[n] - paired_a;
        out[4 + n] = bb[n] - paired_b;
    }
    out[8..].copy_from_slice(&c);
    out
}
