//! Settling the part of the state the scan cannot see.
//!
//! All measurement directions lie in the xz plane, so the count data only
//! constrain the Pauli components `Tr(ρ σ_a ⊗ σ_b)` with `a, b ∈ {I, x, z}`.
//! The seven components involving σ_y leave X unchanged and are whatever
//! the optimizer happened to land on. The default completion replaces
//! them by the values that put the state as far inside the PSD cone as
//! possible (largest smallest eigenvalue), which is deterministic and does
//! not depend on the restart that won.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::optimizer::{simplex_minimize, SimplexOptions};
use crate::quantum::{hermitian_eigenvalues, identity2, sigma_x, sigma_y, sigma_z, ComplexMatrix2, ComplexMatrix4, DensityMatrix};
use crate::Result;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Completion {
    /// Report the optimizer's state as is.
    None,
    /// Choose the unobservable components that maximize the smallest eigenvalue.
    #[default]
    MaxMinEigenvalue,
}

fn pauli(a: usize) -> ComplexMatrix2 {
    match a {
        0 => identity2(),
        1 => sigma_x(),
        2 => sigma_y(),
        _ => sigma_z(),
    }
}

pub(crate) fn pauli_pair(a: usize, b: usize) -> ComplexMatrix4 {
    pauli(a).kronecker(&pauli(b))
}

/// `(a, b)` labels (0 = I, 1 = x, 2 = y, 3 = z) of the components the
/// xz-plane measurements cannot reach.
pub fn unobservable_components() -> Vec<(usize, usize)> {
    (0..16).map(|n| (n / 4, n % 4)).filter(|&(a, b)| a == 2 || b == 2).collect()
}

/// `Tr(ρ σ_a ⊗ σ_b)`
pub fn pauli_component(rho: &DensityMatrix, a: usize, b: usize) -> f64 {
    (pauli_pair(a, b) * rho.matrix()).trace().re
}

fn min_eigenvalue(m: &ComplexMatrix4) -> f64 {
    hermitian_eigenvalues(m)[0]
}

/// Same observable components, unobservable ones chosen to maximize the
/// smallest eigenvalue.
pub fn complete_max_min_eigenvalue(rho: &DensityMatrix) -> Result<DensityMatrix> {
    let hidden = unobservable_components();
    let basis: Vec<ComplexMatrix4> = hidden.iter().map(|&(a, b)| pauli_pair(a, b) * Complex64::new(0.25, 0.0)).collect();
    let start: Vec<f64> = hidden.iter().map(|&(a, b)| pauli_component(rho, a, b)).collect();
    let mut fixed = *rho.matrix();
    for (bm, y) in basis.iter().zip(&start) {
        fixed -= bm * Complex64::new(*y, 0.0);
    }
    let build = |y: &[f64]| -> ComplexMatrix4 {
        let mut m = fixed;
        for (bm, v) in basis.iter().zip(y) {
            m += bm * Complex64::new(*v, 0.0);
        }
        m
    };

    // Smooth the minimum with a log-sum-exp of shrinking width.
    let mut y = start.clone();
    for (tau, step) in [(1e-2, 0.05), (1e-3, 1e-2), (1e-4, 2e-3), (1e-5, 5e-4), (1e-6, 1e-4)] {
        let soft = |v: &[f64]| -> f64 {
            let ev = hermitian_eigenvalues(&build(v));
            let lo = ev[0];
            -lo + tau * ev.iter().map(|l| (-(l - lo) / tau).exp()).sum::<f64>().ln()
        };
        let opts = SimplexOptions { step, tol: 1e-14, relative: false, max_iter: 20_000, max_evaluations: 40_000 };
        y = simplex_minimize(soft, &y, &opts)?.v;
    }
    let (completed, original) = (build(&y), build(&start));
    let best = if min_eigenvalue(&completed) >= min_eigenvalue(&original) { completed } else { original };
    let sym = (best + best.adjoint()) * Complex64::new(0.5, 0.0);
    DensityMatrix::new(sym)
}

pub fn complete(rho: &DensityMatrix, mode: Completion) -> Result<DensityMatrix> {
    match mode {
        Completion::None => Ok(rho.clone()),
        Completion::MaxMinEigenvalue => complete_max_min_eigenvalue(rho),
    }
}
