//! Two-qubit states, projective measurements and trace-rule probabilities.

use std::fmt;

use nalgebra::{Matrix2, Matrix4, SMatrix};
use num_complex::Complex64;
use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::{coinc_index, single_index, Error, Result};

pub type C64 = Complex64;
pub type ComplexMatrix2 = Matrix2<C64>;
pub type ComplexMatrix4 = Matrix4<C64>;

/// Elementwise tolerance for the Hermitian check.
pub const HERMITIAN_TOL: f64 = 1e-12;
/// Tolerance on `Tr(rho) = 1`.
pub const TRACE_TOL: f64 = 1e-12;
/// Smallest eigenvalue still accepted as positive semi-definite.
pub const PSD_TOL: f64 = 1e-10;
/// Tolerance for `P^2 = P` and `Tr(P) = 1`.
pub const PROJECTOR_TOL: f64 = 1e-10;
/// Tolerance on the norm of a measurement direction.
pub const UNIT_TOL: f64 = 1e-12;

const fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

pub fn identity2() -> ComplexMatrix2 {
    ComplexMatrix2::identity()
}

pub fn sigma_x() -> ComplexMatrix2 {
    ComplexMatrix2::new(c(0.0, 0.0), c(1.0, 0.0), c(1.0, 0.0), c(0.0, 0.0))
}

pub fn sigma_y() -> ComplexMatrix2 {
    ComplexMatrix2::new(c(0.0, 0.0), c(0.0, -1.0), c(0.0, 1.0), c(0.0, 0.0))
}

pub fn sigma_z() -> ComplexMatrix2 {
    ComplexMatrix2::new(c(1.0, 0.0), c(0.0, 0.0), c(0.0, 0.0), c(-1.0, 0.0))
}

/// `M = M^dagger` within `tol` elementwise.
pub fn is_hermitian<const D: usize>(m: &SMatrix<C64, D, D>, tol: f64) -> bool {
    (0..D).all(|r| (0..D).all(|col| (m[(r, col)] - m[(col, r)].conj()).norm() <= tol))
}

/// `P^2 = P` and `Tr(P) = 1` within `tol`.
pub fn is_rank1_projector(p: &ComplexMatrix2, tol: f64) -> bool {
    let sq = p * p;
    let idempotent = (0..2).all(|r| (0..2).all(|col| (sq[(r, col)] - p[(r, col)]).norm() <= tol));
    idempotent && (p.trace() - C64::new(1.0, 0.0)).norm() <= tol
}

/// `Tr(E rho)` for Hermitian `E` and `rho`; the imaginary part is roundoff.
#[inline]
pub fn trace_product(e: &ComplexMatrix4, rho: &ComplexMatrix4) -> f64 {
    let mut acc = 0.0;
    for r in 0..4 {
        for col in 0..4 {
            acc += (e[(r, col)] * rho[(col, r)]).re;
        }
    }
    acc
}

/// A unit vector on the Bloch sphere selecting a spin/polarization axis.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MeasurementDirection([f64; 3]);

impl MeasurementDirection {
    pub fn new(x: f64, y: f64, z: f64) -> Result<Self> {
        let norm = (x * x + y * y + z * z).sqrt();
        if !norm.is_finite() || (norm - 1.0).abs() > UNIT_TOL {
            return Err(Error::invalid(format!(
                "measurement direction ({x}, {y}, {z}) has norm {norm}, expected 1"
            )));
        }
        Ok(Self([x, y, z]))
    }

    /// Direction at angle `theta` from the z axis inside the xz plane.
    pub fn in_xz_plane(theta: f64) -> Self {
        Self([theta.sin(), 0.0, theta.cos()])
    }

    pub fn components(&self) -> [f64; 3] {
        self.0
    }

    fn dot_sigma(&self) -> ComplexMatrix2 {
        let [x, y, z] = self.0;
        sigma_x() * c(x, 0.0) + sigma_y() * c(y, 0.0) + sigma_z() * c(z, 0.0)
    }
}

/// The two projectors `(½(I + n·σ), ½(I − n·σ))` for result 0 and result 1.
pub fn measurement_operators(direction: &MeasurementDirection) -> (ComplexMatrix2, ComplexMatrix2) {
    let half = c(0.5, 0.0);
    let ns = direction.dot_sigma();
    ((identity2() + ns) * half, (identity2() - ns) * half)
}

/// Measurement operators for one experiment of the scan.
///
/// Alice measures along `(sin θ, 0, cos θ)` and `(sin(θ − π/2), 0, cos(θ − π/2))`;
/// Bob always measures along `(0, 0, 1)` and `(−1, 0, 0)`.
#[derive(Clone, Debug)]
pub struct ExperimentGeometry {
    theta: f64,
    alice: [ComplexMatrix2; 4],
    bob: [ComplexMatrix2; 4],
}

impl ExperimentGeometry {
    pub fn theta(&self) -> f64 {
        self.theta
    }

    pub fn alice_direction(&self, setting: usize) -> MeasurementDirection {
        let shift = if setting == 0 { 0.0 } else { std::f64::consts::FRAC_PI_2 };
        MeasurementDirection::in_xz_plane(self.theta - shift)
    }

    pub fn bob_direction(setting: usize) -> MeasurementDirection {
        if setting == 0 {
            MeasurementDirection([0.0, 0.0, 1.0])
        } else {
            MeasurementDirection([-1.0, 0.0, 0.0])
        }
    }

    /// `A_ij`
    pub fn alice_op(&self, i: usize, j: usize) -> &ComplexMatrix2 {
        &self.alice[single_index(i, j)]
    }

    /// `B_kl`
    pub fn bob_op(&self, k: usize, l: usize) -> &ComplexMatrix2 {
        &self.bob[single_index(k, l)]
    }

    /// `A_ij ⊗ I`
    pub fn alice_effect(&self, i: usize, j: usize) -> ComplexMatrix4 {
        self.alice_op(i, j).kronecker(&identity2())
    }

    /// `I ⊗ B_kl`
    pub fn bob_effect(&self, k: usize, l: usize) -> ComplexMatrix4 {
        identity2().kronecker(self.bob_op(k, l))
    }

    /// `A_ij ⊗ B_kl`
    pub fn joint_effect(&self, i: usize, j: usize, k: usize, l: usize) -> ComplexMatrix4 {
        self.alice_op(i, j).kronecker(self.bob_op(k, l))
    }

    /// All 24 effects in channel order: 4 Alice, 4 Bob, 16 joint.
    pub fn effects(&self) -> Vec<ComplexMatrix4> {
        let mut out = Vec::with_capacity(24);
        for idx in 0..4 {
            out.push(self.alice_effect(idx / 2, idx % 2));
        }
        for idx in 0..4 {
            out.push(self.bob_effect(idx / 2, idx % 2));
        }
        for idx in 0..16 {
            let (i, j, k, l) = crate::coinc_labels(idx);
            out.push(self.joint_effect(i, j, k, l));
        }
        out
    }
}

pub fn geometry_for_experiment(theta: f64) -> ExperimentGeometry {
    let mut alice = [ComplexMatrix2::zeros(); 4];
    let mut bob = [ComplexMatrix2::zeros(); 4];
    for setting in 0..2 {
        let shift = if setting == 0 { 0.0 } else { std::f64::consts::FRAC_PI_2 };
        let (plus, minus) = measurement_operators(&MeasurementDirection::in_xz_plane(theta - shift));
        alice[single_index(setting, 0)] = plus;
        alice[single_index(setting, 1)] = minus;
        let (plus, minus) = measurement_operators(&ExperimentGeometry::bob_direction(setting));
        bob[single_index(setting, 0)] = plus;
        bob[single_index(setting, 1)] = minus;
    }
    ExperimentGeometry { theta, alice, bob }
}

/// A validated two-qubit density matrix (Hermitian, PSD, unit trace).
#[derive(Clone, Debug, PartialEq)]
pub struct DensityMatrix(ComplexMatrix4);

impl DensityMatrix {
    pub fn new(m: ComplexMatrix4) -> Result<Self> {
        if m.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::invalid("density matrix has non-finite entries"));
        }
        if !is_hermitian(&m, HERMITIAN_TOL) {
            return Err(Error::invalid("density matrix is not Hermitian"));
        }
        let tr = m.trace();
        if (tr.re - 1.0).abs() > TRACE_TOL || tr.im.abs() > TRACE_TOL {
            return Err(Error::invalid(format!("density matrix trace is {tr}, expected 1")));
        }
        let min_eig = hermitian_eigenvalues(&m)[0];
        if min_eig < -PSD_TOL {
            return Err(Error::invalid(format!(
                "density matrix has negative eigenvalue {min_eig:e}"
            )));
        }
        Ok(Self(m))
    }

    /// Divides by the trace first, then validates. Useful for matrices
    /// quoted to a few decimals whose trace is only approximately one.
    pub fn normalized(m: ComplexMatrix4) -> Result<Self> {
        let tr = m.trace().re;
        if !(tr > 0.0) {
            return Err(Error::degenerate("matrix trace is not positive"));
        }
        Self::new(m / c(tr, 0.0))
    }

    /// `(|01⟩ − |10⟩)(⟨01| − ⟨10|) / 2`
    pub fn singlet() -> Self {
        let mut m = ComplexMatrix4::zeros();
        m[(1, 1)] = c(0.5, 0.0);
        m[(2, 2)] = c(0.5, 0.0);
        m[(1, 2)] = c(-0.5, 0.0);
        m[(2, 1)] = c(-0.5, 0.0);
        Self(m)
    }

    pub fn maximally_mixed() -> Self {
        Self(ComplexMatrix4::identity() * c(0.25, 0.0))
    }

    /// `visibility · singlet + (1 − visibility) · I/4`
    pub fn werner(visibility: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&visibility) {
            return Err(Error::invalid(format!("visibility {visibility} outside [0, 1]")));
        }
        Ok(Self(
            Self::singlet().0 * c(visibility, 0.0)
                + Self::maximally_mixed().0 * c(1.0 - visibility, 0.0),
        ))
    }

    pub fn matrix(&self) -> &ComplexMatrix4 {
        &self.0
    }

    /// Eigenvalues in ascending order.
    pub fn eigenvalues(&self) -> [f64; 4] {
        hermitian_eigenvalues(&self.0)
    }

    pub fn purity(&self) -> f64 {
        trace_product(&self.0, &self.0)
    }

    /// `½ ‖ρ − σ‖₁`
    pub fn trace_distance(&self, other: &DensityMatrix) -> f64 {
        let diff = self.0 - other.0;
        0.5 * hermitian_eigenvalues(&diff).iter().map(|v| v.abs()).sum::<f64>()
    }

    /// Largest elementwise modulus of `self − other`.
    pub fn max_abs_diff(&self, other: &DensityMatrix) -> f64 {
        (self.0 - other.0).iter().map(|z| z.norm()).fold(0.0, f64::max)
    }
}

impl fmt::Display for DensityMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for r in 0..4 {
            for col in 0..4 {
                let z = self.0[(r, col)];
                if col > 0 {
                    write!(f, "\t")?;
                }
                write!(f, "{:.4}{:+.4}i", z.re, z.im)?;
            }
            writeln!(f)?;
        }
        Ok(())
    }
}

/// Serialized as a 4×4 array of `[re, im]` pairs.
impl Serialize for DensityMatrix {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        let rows: Vec<Vec<[f64; 2]>> = (0..4)
            .map(|r| (0..4).map(|col| [self.0[(r, col)].re, self.0[(r, col)].im]).collect())
            .collect();
        rows.serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for DensityMatrix {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let rows: Vec<Vec<[f64; 2]>> = Vec::deserialize(deserializer)?;
        if rows.len() != 4 || rows.iter().any(|r| r.len() != 4) {
            return Err(D::Error::custom("density matrix must be 4x4"));
        }
        let m = ComplexMatrix4::from_fn(|r, col| c(rows[r][col][0], rows[r][col][1]));
        DensityMatrix::new(m).map_err(D::Error::custom)
    }
}

/// Ascending eigenvalues of a Hermitian 4×4 matrix.
pub fn hermitian_eigenvalues(m: &ComplexMatrix4) -> [f64; 4] {
    let eig = m.symmetric_eigenvalues();
    let mut out = [eig[0], eig[1], eig[2], eig[3]];
    out.sort_by(|a, b| a.total_cmp(b));
    out
}

/// Unconstrained parametrization of a density matrix through a
/// lower-triangular factor `L`: `ρ = L L† / Tr(L L†)`.
///
/// Layout: the four real diagonal entries, then the real and imaginary
/// parts of the off-diagonal entries in row order
/// `(1,0) (2,0) (2,1) (3,0) (3,1) (3,2)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DensityParams(pub [f64; 16]);

/// `(row, col)` of each off-diagonal factor entry, in parameter order.
pub const FACTOR_OFF_DIAGONAL: [(usize, usize); 6] = [(1, 0), (2, 0), (2, 1), (3, 0), (3, 1), (3, 2)];

impl DensityParams {
    pub fn factor(&self) -> ComplexMatrix4 {
        let p = &self.0;
        let mut l = ComplexMatrix4::zeros();
        for d in 0..4 {
            l[(d, d)] = c(p[d], 0.0);
        }
        for (n, &(r, col)) in FACTOR_OFF_DIAGONAL.iter().enumerate() {
            l[(r, col)] = c(p[4 + 2 * n], p[5 + 2 * n]);
        }
        l
    }

    pub fn from_factor(l: &ComplexMatrix4) -> Self {
        let mut p = [0.0; 16];
        for d in 0..4 {
            p[d] = l[(d, d)].re;
        }
        for (n, &(r, col)) in FACTOR_OFF_DIAGONAL.iter().enumerate() {
            p[4 + 2 * n] = l[(r, col)].re;
            p[5 + 2 * n] = l[(r, col)].im;
        }
        Self(p)
    }

    /// `L L†` without normalization.
    pub fn gram(&self) -> ComplexMatrix4 {
        let l = self.factor();
        l * l.adjoint()
    }

    /// Same state, factor scaled so that `Tr(L L†) = 1`.
    pub fn rescaled(&self) -> Self {
        let norm = self.0.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            Self(self.0.map(|v| v / norm))
        } else {
            *self
        }
    }
}

pub fn decode_density(params: &DensityParams) -> Result<DensityMatrix> {
    if params.0.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("density parameters must be finite"));
    }
    // Tr(L L†) is the squared Frobenius norm of L, i.e. of the parameter vector.
    let scale: f64 = params.0.iter().map(|v| v * v).sum();
    if scale == 0.0 {
        return Err(Error::degenerate("all-zero density parameters"));
    }
    let mut m = params.gram() / c(scale, 0.0);
    // Symmetrize away roundoff so the Hermitian check is exact.
    m = (m + m.adjoint()) * c(0.5, 0.0);
    DensityMatrix::new(m)
}

/// Cholesky factor of a PSD matrix, tolerating rank deficiency: a pivot that
/// has collapsed to (numerical) zero leaves its column empty.
pub fn encode_density(rho: &DensityMatrix) -> DensityParams {
    let a = rho.matrix();
    let mut l = ComplexMatrix4::zeros();
    for j in 0..4 {
        let mut d = a[(j, j)].re;
        for k in 0..j {
            d -= l[(j, k)].norm_sqr();
        }
        if d <= 1e-13 {
            continue;
        }
        let ljj = d.sqrt();
        l[(j, j)] = c(ljj, 0.0);
        for i in (j + 1)..4 {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)].conj();
            }
            l[(i, j)] = s / ljj;
        }
    }
    DensityParams::from_factor(&l)
}

/// Trace-rule probabilities for one experiment.
///
/// `qa[single_index(i, j)] = Tr((A_ij ⊗ I) ρ)`,
/// `qb[single_index(k, l)] = Tr((I ⊗ B_kl) ρ)`,
/// `qc[coinc_index(i, j, k, l)] = Tr((A_ij ⊗ B_kl) ρ)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuantumProbs {
    pub qa: [f64; 4],
    pub qb: [f64; 4],
    pub qc: [f64; 16],
}

impl QuantumProbs {
    pub fn qc(&self, i: usize, j: usize, k: usize, l: usize) -> f64 {
        self.qc[coinc_index(i, j, k, l)]
    }

    /// Flattened in channel order (qa, qb, qc).
    pub fn as_array(&self) -> [f64; 24] {
        let mut out = [0.0; 24];
        out[..4].copy_from_slice(&self.qa);
        out[4..8].copy_from_slice(&self.qb);
        out[8..].copy_from_slice(&self.qc);
        out
    }

    pub fn from_array(v: &[f64; 24]) -> Self {
        let mut qa = [0.0; 4];
        let mut qb = [0.0; 4];
        let mut qc = [0.0; 16];
        qa.copy_from_slice(&v[..4]);
        qb.copy_from_slice(&v[4..8]);
        qc.copy_from_slice(&v[8..]);
        Self { qa, qb, qc }
    }
}

pub fn quantum_probs(rho: &DensityMatrix, geom: &ExperimentGeometry) -> QuantumProbs {
    let m = rho.matrix();
    let effects = geom.effects();
    let mut arr = [0.0; 24];
    for (slot, e) in arr.iter_mut().zip(&effects) {
        *slot = trace_product(e, m);
    }
    QuantumProbs::from_array(&arr)
}
