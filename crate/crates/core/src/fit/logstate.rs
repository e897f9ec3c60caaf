//! Optimizer coordinates for the state: `ρ = exp(H) / Tr exp(H)` with `H`
//! Hermitian. Unlike the Cholesky factor this map has no saddle where a
//! pivot passes through zero, so a descent method cannot get caught on a
//! rank-deficient state. Adding a multiple of the identity to `H` leaves
//! `ρ` unchanged; that is the one redundant direction.
//!
//! Coordinates: the four real diagonal entries, then `(Re, Im)` of
//! `H_rc` for the lower off-diagonal entries in [`FACTOR_OFF_DIAGONAL`]
//! order.

use crate::quantum::{ComplexMatrix4, DensityMatrix, C64, FACTOR_OFF_DIAGONAL};
use crate::{Error, Result};

/// Eigenvalues below this fraction of the largest are raised to it before
/// taking the logarithm.
const EIGENVALUE_FLOOR: f64 = 1e-10;

pub(crate) fn hermitian(h: &[f64]) -> ComplexMatrix4 {
    let mut m = ComplexMatrix4::zeros();
    for d in 0..4 {
        m[(d, d)] = C64::new(h[d], 0.0);
    }
    for (n, &(r, c)) in FACTOR_OFF_DIAGONAL.iter().enumerate() {
        let z = C64::new(h[4 + 2 * n], h[5 + 2 * n]);
        m[(r, c)] = z;
        m[(c, r)] = z.conj();
    }
    m
}

fn coords(m: &ComplexMatrix4) -> [f64; 16] {
    let mut h = [0.0; 16];
    for d in 0..4 {
        h[d] = m[(d, d)].re;
    }
    for (n, &(r, c)) in FACTOR_OFF_DIAGONAL.iter().enumerate() {
        h[4 + 2 * n] = m[(r, c)].re;
        h[5 + 2 * n] = m[(r, c)].im;
    }
    h
}

/// Shift the diagonal so that `Tr H = 0`.
pub(crate) fn center(h: &mut [f64]) {
    let mean = h[..4].iter().sum::<f64>() / 4.0;
    if mean.is_finite() {
        h[..4].iter_mut().for_each(|x| *x -= mean);
    }
}

/// Spectral form of `exp(H)`, scaled so the largest weight is one.
pub(crate) struct LogState {
    pub u: ComplexMatrix4,
    pub lambda: [f64; 4],
    pub weight: [f64; 4],
}

impl LogState {
    pub fn new(h: &[f64]) -> Option<Self> {
        if h[..16].iter().any(|x| !x.is_finite()) {
            return None;
        }
        let eig = hermitian(h).symmetric_eigen();
        let lambda: [f64; 4] = std::array::from_fn(|n| eig.eigenvalues[n]);
        let top = lambda.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        Some(Self { u: eig.eigenvectors, lambda, weight: lambda.map(|l| (l - top).exp()) })
    }

    pub fn trace(&self) -> f64 {
        self.weight.iter().sum()
    }

    /// `U diag(w) U†`
    pub fn unnormalized(&self) -> ComplexMatrix4 {
        let d = ComplexMatrix4::from_diagonal(&nalgebra::Vector4::from(self.weight.map(|w| C64::new(w, 0.0))));
        self.u * d * self.u.adjoint()
    }

    /// Divided differences of the scaled exponential, so that the
    /// derivative of `exp(H)` along `Δ` is `U (Γ ∘ U†ΔU) U†`.
    pub fn gamma(&self) -> [[f64; 4]; 4] {
        std::array::from_fn(|i| {
            std::array::from_fn(|j| {
                let (li, lj) = (self.lambda[i], self.lambda[j]);
                let (wi, wj) = (self.weight[i], self.weight[j]);
                let diff = li - lj;
                if diff.abs() < 1e-12 {
                    0.5 * (wi + wj)
                } else if diff > 0.0 {
                    wj * diff.exp_m1() / diff
                } else {
                    wi * (-diff).exp_m1() / (-diff)
                }
            })
        })
    }
}

/// Coordinates of `log ρ`, centred.
pub fn state_coords(rho: &DensityMatrix) -> [f64; 16] {
    let eig = rho.matrix().symmetric_eigen();
    let top = eig.eigenvalues.iter().cloned().fold(0.0, f64::max);
    let logs = eig.eigenvalues.map(|l| l.max(EIGENVALUE_FLOOR * top).ln());
    let d = ComplexMatrix4::from_diagonal(&logs.map(|l| C64::new(l, 0.0)));
    let log = eig.eigenvectors * d * eig.eigenvectors.adjoint();
    let mut h = coords(&((log + log.adjoint()) * C64::new(0.5, 0.0)));
    center(&mut h);
    h
}

/// The state for a coordinate vector.
pub fn coords_state(h: &[f64]) -> Result<DensityMatrix> {
    let s = LogState::new(h).ok_or_else(|| Error::invalid("state coordinates must be finite"))?;
    let m = s.unnormalized() / C64::new(s.trace(), 0.0);
    DensityMatrix::normalized((m + m.adjoint()) * C64::new(0.5, 0.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scanblue;

    #[test]
    fn round_trip_through_the_logarithm() {
        for rho in [
            DensityMatrix::werner(0.95).unwrap(),
            DensityMatrix::normalized(scanblue::model3_density_raw()).unwrap(),
            DensityMatrix::maximally_mixed(),
        ] {
            let back = coords_state(&state_coords(&rho)).unwrap();
            assert!(back.max_abs_diff(&rho) < 1e-10);
        }
    }

    #[test]
    fn pure_states_land_close() {
        let rho = DensityMatrix::singlet();
        let back = coords_state(&state_coords(&rho)).unwrap();
        assert!(back.trace_distance(&rho) < 1e-8);
    }

    #[test]
    fn identity_shift_is_redundant() {
        let h: Vec<f64> = (0..16).map(|n| 0.2 * (n as f64 - 7.0).sin()).collect();
        let mut g = h.clone();
        g[..4].iter_mut().for_each(|x| *x += 3.7);
        let (a, b) = (coords_state(&h).unwrap(), coords_state(&g).unwrap());
        assert!(a.max_abs_diff(&b) < 1e-12);
        center(&mut g);
        assert!(g[..4].iter().sum::<f64>().abs() < 1e-12);
    }

    #[test]
    fn divided_differences_match_finite_differences() {
        let h: Vec<f64> = (0..16).map(|n| 0.3 * (1.3 * n as f64).cos()).collect();
        let s = LogState::new(&h).unwrap();
        let gamma = s.gamma();
        let dir: Vec<f64> = (0..16).map(|n| 0.1 * (0.7 * n as f64 + 1.0).sin()).collect();
        let x = s.u.adjoint() * hermitian(&dir) * s.u;
        let mut inner = ComplexMatrix4::zeros();
        for i in 0..4 {
            for j in 0..4 {
                inner[(i, j)] = x[(i, j)] * gamma[i][j];
            }
        }
        let analytic = s.u * inner * s.u.adjoint();
        // same scaling on both sides of the difference
        let top = s.lambda.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let scaled = |eps: f64| {
            let v: Vec<f64> = h.iter().zip(&dir).map(|(a, b)| a + eps * b).collect();
            let t = LogState::new(&v).unwrap();
            let shift = t.lambda.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - top;
            t.unnormalized() * C64::new(shift.exp(), 0.0)
        };
        let eps = 1e-6;
        let fd = (scaled(eps) - scaled(-eps)) / C64::new(2.0 * eps, 0.0);
        assert!((fd - analytic).iter().all(|z| z.norm() < 1e-8));
    }
}
