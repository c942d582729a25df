//! Two-qubit states and operators, with processes written in the Pauli
//! product basis as E(ρ) = Σ_ab χ_ab A_a ρ A_b†.
//!
//! Conventions used throughout the crate:
//!
//! * single-qubit basis `|z⟩ = |S⟩ = (1, 0)` (bright), `|z̄⟩ = |D⟩ = (0, 1)` (dark);
//! * the first tensor factor is ion 1 (the ion at the rf null), the second is
//!   ion 2 (the ion addressed by local pulses);
//! * Pauli product basis `A_a = σ_i ⊗ σ_j` with `a = 4i + j` and single-qubit
//!   ordering (I, X, Y, Z), unnormalized, so the identity process has
//!   `χ_{II,II} = 1`.

use std::fmt;
use std::sync::OnceLock;

use nalgebra::{Matrix2, Matrix4, SMatrix, Vector2, Vector4};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type C64 = Complex64;
/// 2×2 complex operator on one qubit.
pub type Op2 = Matrix2<C64>;
/// 4×4 complex operator on the two-qubit space.
pub type Op = Matrix4<C64>;
/// 16×16 complex matrix (χ matrices and superoperators).
pub type Mat16 = SMatrix<C64, 16, 16>;

pub const HERMITIAN_TOL: f64 = 1e-12;
pub const TRACE_TOL: f64 = 1e-12;
pub const EIGEN_FLOOR: f64 = -1e-10;
pub const CHI_HERMITIAN_TOL: f64 = 1e-10;
pub const UNITARY_TOL: f64 = 1e-10;
pub const NORM_TOL: f64 = 1e-12;

pub(crate) const fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

/// Single-qubit Pauli operator label, ordered (I, X, Y, Z).
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Pauli {
    #[serde(rename = "0")]
    I,
    #[serde(rename = "x")]
    X,
    #[serde(rename = "y")]
    Y,
    #[serde(rename = "z")]
    Z,
}

impl Pauli {
    pub const ALL: [Pauli; 4] = [Pauli::I, Pauli::X, Pauli::Y, Pauli::Z];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Pauli> {
        Self::ALL.get(i).copied()
    }

    pub fn matrix(self) -> Op2 {
        let (o, l, i) = (c(0.0, 0.0), c(1.0, 0.0), c(0.0, 1.0));
        match self {
            Pauli::I => Op2::new(l, o, o, l),
            Pauli::X => Op2::new(o, l, l, o),
            Pauli::Y => Op2::new(o, -i, i, o),
            Pauli::Z => Op2::new(l, o, o, -l),
        }
    }

    /// Capital letter used in basis labels (`I`, `X`, `Y`, `Z`).
    pub fn letter(self) -> char {
        ['I', 'X', 'Y', 'Z'][self.index()]
    }

    pub fn parse(s: &str) -> Option<Pauli> {
        match s {
            "0" | "i" | "I" => Some(Pauli::I),
            "x" | "X" => Some(Pauli::X),
            "y" | "Y" => Some(Pauli::Y),
            "z" | "Z" => Some(Pauli::Z),
            _ => None,
        }
    }
}

impl fmt::Display for Pauli {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Pauli::I => "0",
            Pauli::X => "x",
            Pauli::Y => "y",
            Pauli::Z => "z",
        };
        f.write_str(s)
    }
}

/// Kronecker product of two single-qubit operators (first factor = ion 1).
pub fn kron(a: &Op2, b: &Op2) -> Op {
    Op::from_fn(|r, col| a[(r / 2, col / 2)] * b[(r % 2, col % 2)])
}

fn basis_table() -> &'static [Op; 16] {
    static BASIS: OnceLock<[Op; 16]> = OnceLock::new();
    BASIS.get_or_init(|| std::array::from_fn(|a| kron(&Pauli::ALL[a / 4].matrix(), &Pauli::ALL[a % 4].matrix())))
}

/// Pauli products are monomial: row `i` of `A_a` has a single nonzero entry
/// `phases[i]` in column `cols[i]`.
pub(crate) struct Monomial {
    pub cols: [usize; 4],
    pub phases: [C64; 4],
}

pub(crate) fn monomials() -> &'static [Monomial; 16] {
    static MONO: OnceLock<[Monomial; 16]> = OnceLock::new();
    MONO.get_or_init(|| {
        std::array::from_fn(|a| {
            let m = &basis_table()[a];
            let mut cols = [0; 4];
            let mut phases = [c(0.0, 0.0); 4];
            for i in 0..4 {
                let j = (0..4).find(|&j| m[(i, j)].norm() > 0.5).expect("pauli row has one entry");
                cols[i] = j;
                phases[i] = m[(i, j)];
            }
            Monomial { cols, phases }
        })
    })
}

/// The basis element `A_a = σ_i ⊗ σ_j`, `a = 4i + j`.
pub fn pauli_element(a: usize) -> Result<Op> {
    basis_table().get(a).copied().ok_or(Error::PauliIndex(a))
}

/// All 16 basis elements in index order.
pub fn pauli_basis() -> &'static [Op; 16] {
    basis_table()
}

/// Two-letter label of basis element `a`, e.g. `"YY"` for `a = 10`.
pub fn pauli_label(a: usize) -> String {
    let mut s = String::with_capacity(2);
    s.push(Pauli::ALL[a / 4].letter());
    s.push(Pauli::ALL[a % 4].letter());
    s
}

/// Index of the basis element with the given two-letter label.
pub fn pauli_index(label: &str) -> Option<usize> {
    let mut it = label.chars();
    let first = Pauli::parse(&it.next()?.to_string())?;
    let second = Pauli::parse(&it.next()?.to_string())?;
    if it.next().is_some() {
        return None;
    }
    Some(first.index() * 4 + second.index())
}

pub fn identity() -> Op {
    Op::identity()
}

pub fn max_abs<const R: usize, const C: usize>(m: &SMatrix<C64, R, C>) -> f64 {
    m.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

pub fn hermiticity_error<const N: usize>(m: &SMatrix<C64, N, N>) -> f64 {
    max_abs(&(m - m.adjoint()))
}

/// Eigen-decomposition of a Hermitian 4×4 operator, eigenvalues ascending.
pub fn hermitian_eigen(m: &Op) -> (Vector4<f64>, Op) {
    let herm = (m + m.adjoint()).scale(0.5);
    let eig = herm.symmetric_eigen();
    let mut order: Vec<usize> = (0..4).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let values = Vector4::from_fn(|k, _| eig.eigenvalues[order[k]]);
    let vectors = Op::from_fn(|r, k| eig.eigenvectors[(r, order[k])]);
    (values, vectors)
}

/// Square root of a Hermitian operator with negative eigenvalues clamped to 0.
pub fn psd_sqrt(m: &Op) -> Op {
    let (vals, vecs) = hermitian_eigen(m);
    let d = Op::from_diagonal(&vals.map(|v| c(v.max(0.0).sqrt(), 0.0)));
    vecs * d * vecs.adjoint()
}

/// A unit-norm single-qubit pure state.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct QubitState(Vector2<C64>);

impl QubitState {
    pub fn new(amplitudes: Vector2<C64>) -> Result<Self> {
        let n = amplitudes.norm();
        if (n - 1.0).abs() > NORM_TOL {
            return Err(Error::NotNormalized(n));
        }
        Ok(Self(amplitudes))
    }

    pub fn amplitudes(&self) -> &Vector2<C64> {
        &self.0
    }
}

/// The single-qubit Pauli eigenstates used as tomography inputs: the +1
/// eigenstates of σx, σy, σz and the −1 eigenstate of σz.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Eigenstate {
    #[serde(rename = "x")]
    X,
    #[serde(rename = "y")]
    Y,
    #[serde(rename = "z")]
    Z,
    #[serde(rename = "zbar")]
    ZBar,
}

impl Eigenstate {
    pub const ALL: [Eigenstate; 4] = [Eigenstate::X, Eigenstate::Y, Eigenstate::Z, Eigenstate::ZBar];

    pub fn state(self) -> QubitState {
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let v = match self {
            Eigenstate::X => Vector2::new(c(h, 0.0), c(h, 0.0)),
            Eigenstate::Y => Vector2::new(c(h, 0.0), c(0.0, h)),
            Eigenstate::Z => Vector2::new(c(1.0, 0.0), c(0.0, 0.0)),
            Eigenstate::ZBar => Vector2::new(c(0.0, 0.0), c(1.0, 0.0)),
        };
        QubitState(v)
    }

    pub fn parse(s: &str) -> Option<Eigenstate> {
        match s {
            "x" => Some(Eigenstate::X),
            "y" => Some(Eigenstate::Y),
            "z" => Some(Eigenstate::Z),
            "zbar" | "z̄" => Some(Eigenstate::ZBar),
            _ => None,
        }
    }
}

impl fmt::Display for Eigenstate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Eigenstate::X => "x",
            Eigenstate::Y => "y",
            Eigenstate::Z => "z",
            Eigenstate::ZBar => "zbar",
        };
        f.write_str(s)
    }
}

/// A unit-norm two-qubit pure state.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PureState(Vector4<C64>);

impl PureState {
    pub fn new(amplitudes: Vector4<C64>) -> Result<Self> {
        let n = amplitudes.norm();
        if (n - 1.0).abs() > NORM_TOL {
            return Err(Error::NotNormalized(n));
        }
        Ok(Self(amplitudes))
    }

    /// Normalizes `amplitudes`; fails only for the zero vector.
    pub fn normalized(amplitudes: Vector4<C64>) -> Result<Self> {
        let n = amplitudes.norm();
        if n == 0.0 || !n.is_finite() {
            return Err(Error::NotNormalized(n));
        }
        Ok(Self(amplitudes.unscale(n)))
    }

    /// Computational basis state `|q1 q2⟩`, `index = 2 q1 + q2`.
    pub fn basis(index: usize) -> Self {
        let mut v = Vector4::zeros();
        v[index] = c(1.0, 0.0);
        Self(v)
    }

    /// `(|SS⟩ + i|DD⟩)/√2`, the state produced by one ideal MS gate from `|SS⟩`.
    pub fn ms_bell() -> Self {
        let h = std::f64::consts::FRAC_1_SQRT_2;
        Self(Vector4::new(c(h, 0.0), c(0.0, 0.0), c(0.0, 0.0), c(0.0, h)))
    }

    pub fn amplitudes(&self) -> &Vector4<C64> {
        &self.0
    }

    pub fn evolve(&self, u: &Op) -> PureState {
        // unitary inputs keep the norm; renormalize away rounding
        let v = u * self.0;
        let n = v.norm();
        PureState(v.unscale(n))
    }

    pub fn projector(&self) -> DensityMatrix {
        DensityMatrix(self.0 * self.0.adjoint())
    }

    pub fn overlap(&self, other: &PureState) -> C64 {
        self.0.dotc(&other.0)
    }
}

/// `|q1⟩ ⊗ |q2⟩`.
pub fn state_tensor(q1: &QubitState, q2: &QubitState) -> PureState {
    let (a, b) = (q1.0, q2.0);
    PureState(Vector4::new(a[0] * b[0], a[0] * b[1], a[1] * b[0], a[1] * b[1]))
}

/// A valid two-qubit density matrix: Hermitian, unit trace, eigenvalues ≥ −1e-10.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DensityMatrix(Op);

impl DensityMatrix {
    pub fn new(m: Op) -> Result<Self> {
        let herr = hermiticity_error(&m);
        if herr > HERMITIAN_TOL {
            return Err(Error::NotHermitian(herr));
        }
        let tr = m.trace();
        if (tr.re - 1.0).abs() > TRACE_TOL || tr.im.abs() > TRACE_TOL {
            return Err(Error::BadTrace(tr.re));
        }
        let min = hermitian_eigen(&m).0[0];
        if min < EIGEN_FLOOR {
            return Err(Error::NotPositive(min));
        }
        Ok(Self(m))
    }

    /// Symmetrizes `m` and checks the remaining invariants. Use for matrices
    /// produced by arithmetic that may carry rounding-level anti-Hermitian parts.
    pub fn from_hermitian_part(m: Op) -> Result<Self> {
        Self::new((m + m.adjoint()).scale(0.5))
    }

    /// Wraps `m` without validation; callers guarantee Hermiticity and unit
    /// trace up to rounding.
    pub(crate) fn assume_valid(m: Op) -> Self {
        Self(m)
    }

    pub fn maximally_mixed() -> Self {
        Self(Op::identity().scale(0.25))
    }

    pub fn matrix(&self) -> &Op {
        &self.0
    }

    pub fn into_matrix(self) -> Op {
        self.0
    }

    pub fn eigenvalues(&self) -> Vector4<f64> {
        hermitian_eigen(&self.0).0
    }

    pub fn evolve(&self, u: &Op) -> DensityMatrix {
        let m = u * self.0 * u.adjoint();
        DensityMatrix((m + m.adjoint()).scale(0.5))
    }

    /// `Tr[ρ P]` for a Hermitian observable `P`.
    pub fn expectation(&self, obs: &Op) -> f64 {
        (self.0 * obs).trace().re
    }

    /// Population of computational basis state `index`.
    pub fn population(&self, index: usize) -> f64 {
        self.0[(index, index)].re
    }
}

// Eigenvalues this small are rounding noise of a 4×4 decomposition; keeping
// them would add errors of order their square root to the fidelity.
const FIDELITY_EIG_CUTOFF: f64 = 1e-14;

fn fidelity_sqrt(m: &Op) -> Op {
    let (vals, vecs) = hermitian_eigen(m);
    let d = Op::from_diagonal(&vals.map(|v| c(if v > FIDELITY_EIG_CUTOFF { v.sqrt() } else { 0.0 }, 0.0)));
    vecs * d * vecs.adjoint()
}

/// Uhlmann fidelity `F(ρ,σ) = (Tr √(√ρ σ √ρ))²`, clamped to [0, 1]. The trace
/// is evaluated as the sum of singular values of `√ρ √σ`, which is symmetric in
/// the arguments.
pub fn fidelity(rho: &DensityMatrix, sigma: &DensityMatrix) -> f64 {
    let product = fidelity_sqrt(&rho.0) * fidelity_sqrt(&sigma.0);
    let root: f64 = product.singular_values().iter().sum();
    (root * root).clamp(0.0, 1.0)
}

/// `Tr[ρ²]`.
pub fn purity(rho: &DensityMatrix) -> f64 {
    rho.0.iter().map(|z| z.norm_sqr()).sum()
}

/// A Hermitian 16×16 process matrix over the Pauli product basis.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ChiMatrix(Mat16);

impl ChiMatrix {
    pub fn new(m: Mat16) -> Result<Self> {
        let herr = hermiticity_error(&m);
        if herr > CHI_HERMITIAN_TOL {
            return Err(Error::NotHermitian(herr));
        }
        Ok(Self((m + m.adjoint()).scale(0.5)))
    }

    /// The identity process: `χ_{II,II} = 1`, all other elements 0.
    pub fn identity() -> Self {
        let mut m = Mat16::zeros();
        m[(0, 0)] = c(1.0, 0.0);
        Self(m)
    }

    pub fn matrix(&self) -> &Mat16 {
        &self.0
    }

    pub fn get(&self, a: usize, b: usize) -> C64 {
        self.0[(a, b)]
    }

    pub fn trace(&self) -> f64 {
        self.0.trace().re
    }

    /// Eigenvalues in ascending order.
    pub fn eigenvalues(&self) -> Vec<f64> {
        let mut v: Vec<f64> = self.0.symmetric_eigen().eigenvalues.iter().copied().collect();
        v.sort_by(f64::total_cmp);
        v
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.eigenvalues()[0]
    }

    pub fn is_psd(&self, floor: f64) -> bool {
        self.min_eigenvalue() >= floor
    }

    /// `Σ_ab χ_ab A_b† A_a`, which equals the identity for trace-preserving maps.
    pub fn tp_operator(&self) -> Op {
        let basis = pauli_basis();
        let mut acc = Op::zeros();
        for a in 0..16 {
            for b in 0..16 {
                let x = self.0[(a, b)];
                if x != C64::new(0.0, 0.0) {
                    acc += basis[b] * basis[a] * x;
                }
            }
        }
        acc
    }

    /// Max-element deviation of the TP operator from the identity.
    pub fn tp_residual(&self) -> f64 {
        max_abs(&(self.tp_operator() - Op::identity()))
    }

    pub fn is_cptp(&self, eig_floor: f64, tp_tol: f64) -> bool {
        self.is_psd(eig_floor) && self.tp_residual() <= tp_tol
    }

    /// Superoperator acting on row-major vectorized density matrices,
    /// `S = Σ_ab χ_ab A_a ⊗ conj(A_b)`.
    pub fn superoperator(&self) -> SuperOp {
        let mono = monomials();
        let mut s = Mat16::zeros();
        for a in 0..16 {
            for b in 0..16 {
                let x = self.0[(a, b)];
                if x.norm() == 0.0 {
                    continue;
                }
                for i in 0..4 {
                    for k in 0..4 {
                        let col = mono[a].cols[i] * 4 + mono[b].cols[k];
                        s[(i * 4 + k, col)] += x * mono[a].phases[i] * mono[b].phases[k].conj();
                    }
                }
            }
        }
        SuperOp(s)
    }

    /// Inverse of [`ChiMatrix::superoperator`].
    pub fn from_superoperator(s: &SuperOp) -> Result<Self> {
        let mono = monomials();
        let mut m = Mat16::zeros();
        for a in 0..16 {
            for b in 0..16 {
                let mut acc = c(0.0, 0.0);
                for i in 0..4 {
                    for k in 0..4 {
                        let col = mono[a].cols[i] * 4 + mono[b].cols[k];
                        let v = mono[a].phases[i] * mono[b].phases[k].conj();
                        acc += v.conj() * s.0[(i * 4 + k, col)];
                    }
                }
                m[(a, b)] = acc / 16.0;
            }
        }
        Self::new(m)
    }

    /// `Σ_ab χ_ab A_a X A_b†` on an arbitrary operator.
    pub fn apply_op(&self, x: &Op) -> Op {
        self.superoperator().apply_op(x)
    }
}

/// Linear map on vectorized 4×4 operators (row-major).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SuperOp(Mat16);

impl SuperOp {
    pub fn matrix(&self) -> &Mat16 {
        &self.0
    }

    pub fn from_matrix(m: Mat16) -> Self {
        Self(m)
    }

    pub fn apply_op(&self, x: &Op) -> Op {
        let v = SMatrix::<C64, 16, 1>::from_fn(|r, _| x[(r / 4, r % 4)]);
        let out = self.0 * v;
        Op::from_fn(|i, j| out[i * 4 + j])
    }

    pub fn apply(&self, rho: &DensityMatrix) -> Result<DensityMatrix> {
        DensityMatrix::from_hermitian_part(self.apply_op(&rho.0))
    }

    /// `self` followed by `next`.
    pub fn then(&self, next: &SuperOp) -> SuperOp {
        SuperOp(next.0 * self.0)
    }
}

/// `E(ρ) = Σ_ab χ_ab A_a ρ A_b†`. The output must itself be a valid state,
/// which holds whenever `chi` is CPTP.
pub fn apply_chi(chi: &ChiMatrix, rho: &DensityMatrix) -> Result<DensityMatrix> {
    chi.superoperator().apply(rho)
}

/// Expansion coefficients `c_a = Tr[A_a† U]/4` of an operator in the Pauli basis.
pub fn pauli_coefficients(u: &Op) -> [C64; 16] {
    let basis = pauli_basis();
    std::array::from_fn(|a| (basis[a].adjoint() * u).trace() / 4.0)
}

pub fn unitarity_error(u: &Op) -> f64 {
    max_abs(&(u.adjoint() * u - Op::identity()))
}

/// χ of the unitary channel `ρ ↦ UρU†`: `χ_ab = c_a c̄_b`.
pub fn unitary_to_chi(u: &Op) -> Result<ChiMatrix> {
    let err = unitarity_error(u);
    if err > UNITARY_TOL {
        return Err(Error::NotUnitary(err));
    }
    let coeffs = pauli_coefficients(u);
    let m = Mat16::from_fn(|a, b| coeffs[a] * coeffs[b].conj());
    ChiMatrix::new(m)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn assert_op_close(a: &Op, b: &Op, tol: f64) {
        let d = max_abs(&(a - b));
        assert!(d < tol, "operators differ by {d:e}\n{a}\n{b}");
    }

    #[test]
    fn pauli_element_examples() {
        assert_op_close(&pauli_element(0).unwrap(), &Op::identity(), 1e-15);
        let yy = kron(&Pauli::Y.matrix(), &Pauli::Y.matrix());
        assert_op_close(&pauli_element(10).unwrap(), &yy, 1e-15);
        assert_eq!(pauli_label(10), "YY");
        let xx = pauli_element(5).unwrap();
        // hand-written X⊗X: anti-diagonal ones
        let mut manual = Op::zeros();
        for k in 0..4 {
            manual[(k, 3 - k)] = c(1.0, 0.0);
        }
        assert_op_close(&xx, &manual, 1e-15);
        assert!(((xx * xx).trace() - c(4.0, 0.0)).norm() < 1e-15);
        assert!(matches!(pauli_element(16), Err(Error::PauliIndex(16))));
    }

    #[test]
    fn basis_orthogonal_and_complete() {
        let basis = pauli_basis();
        let mut sum = Op::zeros();
        for a in 0..16 {
            sum += basis[a].adjoint() * basis[a];
            for b in 0..16 {
                let ip = (basis[a].adjoint() * basis[b]).trace();
                let expected = if a == b { 4.0 } else { 0.0 };
                assert!((ip - c(expected, 0.0)).norm() < 1e-14, "({a},{b})");
            }
        }
        // each A†A = I, so the sum is 16·I; per element the identity
        assert_op_close(&sum, &Op::identity().scale(16.0), 1e-14);
    }

    #[test]
    fn label_round_trip() {
        for a in 0..16 {
            assert_eq!(pauli_index(&pauli_label(a)), Some(a));
        }
        assert_eq!(pauli_index("YYY"), None);
    }

    #[test]
    fn state_tensor_examples() {
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let zz = state_tensor(&Eigenstate::Z.state(), &Eigenstate::Z.state());
        assert_eq!(*zz.amplitudes(), Vector4::new(c(1.0, 0.0), c(0.0, 0.0), c(0.0, 0.0), c(0.0, 0.0)));
        let xzb = state_tensor(&Eigenstate::X.state(), &Eigenstate::ZBar.state());
        let want = Vector4::new(c(0.0, 0.0), c(h, 0.0), c(0.0, 0.0), c(h, 0.0));
        assert!((xzb.amplitudes() - want).norm() < 1e-15);
        let yy = state_tensor(&Eigenstate::Y.state(), &Eigenstate::Y.state());
        let want = Vector4::new(c(0.5, 0.0), c(0.0, 0.5), c(0.0, 0.5), c(-0.5, 0.0));
        assert!((yy.amplitudes() - want).norm() < 1e-15);
    }

    #[test]
    fn density_matrix_validation() {
        let mut m = Op::identity().scale(0.25);
        assert!(DensityMatrix::new(m).is_ok());
        m[(0, 1)] = c(0.0, 1e-6);
        assert!(matches!(DensityMatrix::new(m), Err(Error::NotHermitian(_))));
        let m = Op::identity().scale(0.3);
        assert!(matches!(DensityMatrix::new(m), Err(Error::BadTrace(_))));
        let m = Op::from_diagonal(&Vector4::new(c(1.1, 0.0), c(-0.1, 0.0), c(0.0, 0.0), c(0.0, 0.0)));
        assert!(matches!(DensityMatrix::new(m), Err(Error::NotPositive(_))));
        // rounding-level negativity is accepted
        let m = Op::from_diagonal(&Vector4::new(c(1.0 + 5e-11, 0.0), c(-5e-11, 0.0), c(0.0, 0.0), c(0.0, 0.0)));
        assert!(DensityMatrix::new(m).is_ok());
    }

    #[test]
    fn fidelity_examples() {
        let ss = PureState::basis(0).projector();
        let dd = PureState::basis(3).projector();
        assert!((fidelity(&ss, &ss) - 1.0).abs() < 1e-12);
        assert!(fidelity(&ss, &dd).abs() < 1e-12);
        let bell = PureState::ms_bell().projector();
        let p = 0.018;
        let mixed = DensityMatrix::new(bell.matrix().scale(1.0 - p) + Op::identity().scale(p / 4.0)).unwrap();
        // pure-state oracle ⟨Φ|E(ρ)|Φ⟩
        let v = PureState::ms_bell();
        let oracle = (v.amplitudes().adjoint() * mixed.matrix() * v.amplitudes())[(0, 0)].re;
        assert!((oracle - (1.0 - 0.75 * p)).abs() < 1e-14);
        assert!((fidelity(&bell, &mixed) - oracle).abs() < 1e-10);
        assert!((fidelity(&mixed, &bell) - 0.9865).abs() < 1e-10);
    }

    #[test]
    fn purity_examples() {
        assert!((purity(&PureState::ms_bell().projector()) - 1.0).abs() < 1e-14);
        assert!((purity(&DensityMatrix::maximally_mixed()) - 0.25).abs() < 1e-15);
        let p = 0.018;
        let rho = PureState::basis(1).projector().matrix().scale(1.0 - p) + Op::identity().scale(p / 4.0);
        // direct squaring oracle
        let direct = (rho * rho).trace().re;
        let closed = (1.0 - p) * (1.0 - p) + p * (1.0 - p) / 2.0 + p * p / 4.0;
        assert!((closed - 0.973243).abs() < 1e-12);
        assert!((direct - closed).abs() < 1e-14);
        assert!((purity(&DensityMatrix::new(rho).unwrap()) - closed).abs() < 1e-14);
    }

    #[test]
    fn unitary_to_chi_examples() {
        let chi = unitary_to_chi(&Op::identity()).unwrap();
        assert_eq!(chi, ChiMatrix::identity());
        let xi = pauli_element(4).unwrap();
        let chi = unitary_to_chi(&xi).unwrap();
        for a in 0..16 {
            for b in 0..16 {
                let want = if a == 4 && b == 4 { 1.0 } else { 0.0 };
                assert!((chi.get(a, b) - c(want, 0.0)).norm() < 1e-15);
            }
        }
        let bad = Op::identity().scale(1.1);
        assert!(matches!(unitary_to_chi(&bad), Err(Error::NotUnitary(_))));
    }

    #[test]
    fn apply_chi_examples() {
        let rho = PureState::ms_bell().projector();
        let out = apply_chi(&ChiMatrix::identity(), &rho).unwrap();
        assert_op_close(out.matrix(), rho.matrix(), 1e-15);

        // the one-gate χ applied to |SS⟩⟨SS|
        let mut m = Mat16::zeros();
        m[(0, 0)] = c(0.5, 0.0);
        m[(10, 10)] = c(0.5, 0.0);
        m[(0, 10)] = c(0.0, 0.5);
        m[(10, 0)] = c(0.0, -0.5);
        let chi = ChiMatrix::new(m).unwrap();
        let out = apply_chi(&chi, &PureState::basis(0).projector()).unwrap();
        assert_op_close(out.matrix(), PureState::ms_bell().projector().matrix(), 1e-14);

        // uniform 1/16 diagonal sends everything to I/4: brute-force sum
        let basis = pauli_basis();
        let mut brute = Op::zeros();
        for a in basis {
            brute += a * rho.matrix() * a.adjoint();
        }
        assert_op_close(&brute.unscale(16.0), &Op::identity().scale(0.25), 1e-15);
        let chi = ChiMatrix::new(Mat16::identity().unscale(16.0)).unwrap();
        let out = apply_chi(&chi, &rho).unwrap();
        assert_op_close(out.matrix(), &Op::identity().scale(0.25), 1e-15);
    }

    #[test]
    fn non_hermitian_chi_rejected() {
        let mut m = Mat16::zeros();
        m[(0, 1)] = c(1.0, 0.0);
        assert!(matches!(ChiMatrix::new(m), Err(Error::NotHermitian(_))));
    }

    #[test]
    fn superoperator_round_trip() {
        let mut m = Mat16::zeros();
        m[(0, 0)] = c(0.7, 0.0);
        m[(3, 3)] = c(0.3, 0.0);
        m[(0, 3)] = c(0.1, 0.2);
        m[(3, 0)] = c(0.1, -0.2);
        let chi = ChiMatrix::new(m).unwrap();
        let back = ChiMatrix::from_superoperator(&chi.superoperator()).unwrap();
        assert!(max_abs(&(back.matrix() - chi.matrix())) < 1e-14);
    }
}
