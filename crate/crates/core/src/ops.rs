//! Linear algebra on the two-dimensional Hilbert space of the atom.
//!
//! Basis ordering is `|e>, |g>` (excited first), so `sigma_z = diag(1, -1)`,
//! `sigma_+ = |e><g|` and `sigma_- = |g><e|`. Operators are vectorized by
//! stacking columns: `vec(X)[i + 2 j] = X[i, j]`, which gives
//! `vec(A X B) = (B^T (x) A) vec(X)`.

use std::ops::{Add, AddAssign, Mul, Neg, Sub, SubAssign};

use nalgebra::{Matrix2, Matrix4, Vector2, Vector4};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub const I: Complex64 = Complex64::new(0.0, 1.0);
const ZERO: Complex64 = Complex64::new(0.0, 0.0);
const ONE: Complex64 = Complex64::new(1.0, 0.0);

/// Tolerance used when states and Hamiltonians are constructed.
pub const CONSTRUCTION_TOL: f64 = 1e-10;
/// Tolerance used for states produced by an evolution.
pub const EVOLUTION_TOL: f64 = 1e-9;

#[inline]
pub fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

/// A bounded operator on C^2.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Operator2(pub Matrix2<Complex64>);

impl Default for Operator2 {
    fn default() -> Self {
        Operator2::zero()
    }
}

impl Operator2 {
    #[inline]
    pub const fn new(a00: Complex64, a01: Complex64, a10: Complex64, a11: Complex64) -> Self {
        Operator2(Matrix2::new(a00, a01, a10, a11))
    }

    pub fn from_real(a00: f64, a01: f64, a10: f64, a11: f64) -> Self {
        Self::new(c(a00, 0.0), c(a01, 0.0), c(a10, 0.0), c(a11, 0.0))
    }

    #[inline]
    pub const fn zero() -> Self {
        Self::new(ZERO, ZERO, ZERO, ZERO)
    }

    #[inline]
    pub const fn identity() -> Self {
        Self::new(ONE, ZERO, ZERO, ONE)
    }

    pub const fn sigma_x() -> Self {
        Self::new(ZERO, ONE, ONE, ZERO)
    }

    pub const fn sigma_y() -> Self {
        Self::new(ZERO, c_const(0.0, -1.0), c_const(0.0, 1.0), ZERO)
    }

    pub const fn sigma_z() -> Self {
        Self::new(ONE, ZERO, ZERO, c_const(-1.0, 0.0))
    }

    /// `|e><g|`
    pub const fn sigma_plus() -> Self {
        Self::new(ZERO, ONE, ZERO, ZERO)
    }

    /// `|g><e|`
    pub const fn sigma_minus() -> Self {
        Self::new(ZERO, ZERO, ONE, ZERO)
    }

    /// Excited-state projector `P_+ = sigma_+ sigma_-`.
    pub const fn projector_excited() -> Self {
        Self::new(ONE, ZERO, ZERO, ZERO)
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> Complex64 {
        self.0[(i, j)]
    }

    #[inline]
    pub fn adjoint(&self) -> Self {
        Operator2(self.0.adjoint())
    }

    #[inline]
    pub fn trace(&self) -> Complex64 {
        self.0[(0, 0)] + self.0[(1, 1)]
    }

    #[inline]
    pub fn commutator(&self, other: &Self) -> Self {
        Operator2(self.0 * other.0 - other.0 * self.0)
    }

    #[inline]
    pub fn anticommutator(&self, other: &Self) -> Self {
        Operator2(self.0 * other.0 + other.0 * self.0)
    }

    /// `(X + X^*) / 2`
    #[inline]
    pub fn hermitian_part(&self) -> Self {
        Operator2((self.0 + self.0.adjoint()) * c(0.5, 0.0))
    }

    pub fn is_hermitian(&self, tol: f64) -> bool {
        (self.0 - self.0.adjoint()).iter().all(|z| z.norm() <= tol)
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }

    /// Largest entry modulus.
    pub fn max_abs(&self) -> f64 {
        self.0.iter().fold(0.0, |m, z| m.max(z.norm()))
    }

    /// Operator norm `||X||` (largest singular value).
    pub fn operator_norm(&self) -> f64 {
        let g = self.0.adjoint() * self.0;
        hermitian_eigenvalues(&Operator2(g)).1.max(0.0).sqrt()
    }

    /// `tr(X^* X)`
    pub fn hilbert_schmidt_sq(&self) -> f64 {
        self.0.iter().map(|z| z.norm_sqr()).sum()
    }

    pub fn scale(&self, s: Complex64) -> Self {
        Operator2(self.0 * s)
    }

    /// `A X A^*`
    #[inline]
    pub fn sandwich(&self, x: &Self) -> Self {
        Operator2(self.0 * x.0 * self.0.adjoint())
    }

    /// `vec(X)` with column stacking.
    pub fn vectorize(&self) -> Vector4<Complex64> {
        Vector4::new(self.0[(0, 0)], self.0[(1, 0)], self.0[(0, 1)], self.0[(1, 1)])
    }

    pub fn unvectorize(v: &Vector4<Complex64>) -> Self {
        Self::new(v[0], v[2], v[1], v[3])
    }

    /// `exp(-i theta sigma_z / 2)`
    pub fn z_rotation(theta: f64) -> Self {
        let h = 0.5 * theta;
        Self::new(Complex64::from_polar(1.0, -h), ZERO, ZERO, Complex64::from_polar(1.0, h))
    }

    /// Basis element `|i><j|`.
    pub fn unit(i: usize, j: usize) -> Self {
        let mut m = Matrix2::zeros();
        m[(i, j)] = ONE;
        Operator2(m)
    }

    pub fn apply(&self, v: &StateVector2) -> StateVector2 {
        StateVector2(self.0 * v.0)
    }
}

const fn c_const(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

impl Add for Operator2 {
    type Output = Self;
    #[inline]
    fn add(self, rhs: Self) -> Self {
        Operator2(self.0 + rhs.0)
    }
}

impl Sub for Operator2 {
    type Output = Self;
    #[inline]
    fn sub(self, rhs: Self) -> Self {
        Operator2(self.0 - rhs.0)
    }
}

impl AddAssign for Operator2 {
    #[inline]
    fn add_assign(&mut self, rhs: Self) {
        self.0 += rhs.0;
    }
}

impl SubAssign for Operator2 {
    #[inline]
    fn sub_assign(&mut self, rhs: Self) {
        self.0 -= rhs.0;
    }
}

impl Neg for Operator2 {
    type Output = Self;
    fn neg(self) -> Self {
        Operator2(-self.0)
    }
}

impl Mul for Operator2 {
    type Output = Self;
    #[inline]
    fn mul(self, rhs: Self) -> Self {
        Operator2(self.0 * rhs.0)
    }
}

impl Mul<Complex64> for Operator2 {
    type Output = Self;
    #[inline]
    fn mul(self, rhs: Complex64) -> Self {
        Operator2(self.0 * rhs)
    }
}

impl Mul<f64> for Operator2 {
    type Output = Self;
    #[inline]
    fn mul(self, rhs: f64) -> Self {
        Operator2(self.0 * c(rhs, 0.0))
    }
}

impl Mul<Operator2> for Complex64 {
    type Output = Operator2;
    #[inline]
    fn mul(self, rhs: Operator2) -> Operator2 {
        Operator2(rhs.0 * self)
    }
}

impl Mul<Operator2> for f64 {
    type Output = Operator2;
    #[inline]
    fn mul(self, rhs: Operator2) -> Operator2 {
        Operator2(rhs.0 * c(self, 0.0))
    }
}

/// Eigenvalues `(min, max)` of the Hermitian part of a 2x2 matrix.
#[inline]
pub fn hermitian_eigenvalues(x: &Operator2) -> (f64, f64) {
    let a = x.0[(0, 0)].re;
    let d = x.0[(1, 1)].re;
    let b = 0.5 * (x.0[(0, 1)] + x.0[(1, 0)].conj());
    let mean = 0.5 * (a + d);
    let r = (0.25 * (a - d) * (a - d) + b.norm_sqr()).sqrt();
    (mean - r, mean + r)
}

/// Eigenpairs `(lambda, v)` of the Hermitian part of `x`, ascending, with unit `v`.
pub fn hermitian_eigen(x: &Operator2) -> [(f64, StateVector2); 2] {
    let (lo, hi) = hermitian_eigenvalues(x);
    let a = x.0[(0, 0)].re;
    let d = x.0[(1, 1)].re;
    let b = 0.5 * (x.0[(0, 1)] + x.0[(1, 0)].conj());
    let vec_for = |lambda: f64| {
        let u = StateVector2::new(b, c(lambda - a, 0.0));
        let w = StateVector2::new(c(lambda - d, 0.0), b.conj());
        let v = if u.norm_sqr() >= w.norm_sqr() { u } else { w };
        (v.norm_sqr() > 0.0).then(|| StateVector2(v.0 / c(v.norm(), 0.0)))
    };
    match (vec_for(lo), vec_for(hi)) {
        (Some(v0), _) => {
            // orthogonal complement, so the pair stays orthonormal when degenerate
            let v1 = StateVector2::new(-v0.0[1].conj(), v0.0[0].conj());
            [(lo, v0), (hi, v1)]
        }
        _ => [(lo, StateVector2::ground()), (hi, StateVector2::excited())],
    }
}

/// A vector in C^2.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StateVector2(pub Vector2<Complex64>);

impl StateVector2 {
    pub fn new(a: Complex64, b: Complex64) -> Self {
        StateVector2(Vector2::new(a, b))
    }

    pub fn excited() -> Self {
        Self::new(ONE, ZERO)
    }

    pub fn ground() -> Self {
        Self::new(ZERO, ONE)
    }

    /// Normalized vector; fails on a zero or non-finite input.
    pub fn normalized(a: Complex64, b: Complex64) -> Result<Self> {
        let v = Self::new(a, b);
        let n = v.norm();
        if !(n.is_finite() && n > 0.0) {
            return Err(Error::invalid("state vector must have finite nonzero norm"));
        }
        Ok(StateVector2(v.0 / c(n, 0.0)))
    }

    pub fn norm_sqr(&self) -> f64 {
        self.0[0].norm_sqr() + self.0[1].norm_sqr()
    }

    pub fn norm(&self) -> f64 {
        self.norm_sqr().sqrt()
    }

    pub fn inner(&self, other: &Self) -> Complex64 {
        self.0[0].conj() * other.0[0] + self.0[1].conj() * other.0[1]
    }

    /// `|v><v|`
    pub fn projector(&self) -> Operator2 {
        Operator2(self.0 * self.0.adjoint())
    }
}

/// A positive operator on C^2, unit trace unless built as unnormalized.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DensityOperator2(Operator2);

impl DensityOperator2 {
    /// Checks Hermiticity, positivity and unit trace at [`CONSTRUCTION_TOL`].
    pub fn new(op: Operator2) -> Result<Self> {
        Self::check(&op, CONSTRUCTION_TOL, true)?;
        Ok(DensityOperator2(op.hermitian_part()))
    }

    /// Like [`DensityOperator2::new`] without the trace condition.
    pub fn unnormalized(op: Operator2) -> Result<Self> {
        Self::check(&op, CONSTRUCTION_TOL, false)?;
        Ok(DensityOperator2(op.hermitian_part()))
    }

    pub fn check(op: &Operator2, tol: f64, unit_trace: bool) -> Result<()> {
        if !op.is_finite() {
            return Err(Error::invalid("state has non-finite entries"));
        }
        if !op.is_hermitian(tol) {
            return Err(Error::invalid("state is not Hermitian"));
        }
        let (lo, _) = hermitian_eigenvalues(op);
        if lo < -tol {
            return Err(Error::invalid(format!("state has negative eigenvalue {lo:e}")));
        }
        if unit_trace && (op.trace().re - 1.0).abs() > tol {
            return Err(Error::invalid(format!(
                "state trace {} differs from 1",
                op.trace().re
            )));
        }
        Ok(())
    }

    pub fn pure(v: &StateVector2) -> Result<Self> {
        let v = StateVector2::normalized(v.0[0], v.0[1])?;
        Ok(DensityOperator2(v.projector()))
    }

    pub fn ground() -> Self {
        DensityOperator2(StateVector2::ground().projector())
    }

    pub fn excited() -> Self {
        DensityOperator2(StateVector2::excited().projector())
    }

    pub fn maximally_mixed() -> Self {
        DensityOperator2(Operator2::identity() * 0.5)
    }

    /// `(1 + x sigma_x + y sigma_y + z sigma_z) / 2`; needs `|r| <= 1`.
    pub fn from_bloch(r: [f64; 3]) -> Result<Self> {
        let op = (Operator2::identity()
            + Operator2::sigma_x() * r[0]
            + Operator2::sigma_y() * r[1]
            + Operator2::sigma_z() * r[2])
            * 0.5;
        Self::new(op)
    }

    pub fn bloch_vector(&self) -> [f64; 3] {
        bloch_vector(&self.0)
    }

    pub fn as_operator(&self) -> &Operator2 {
        &self.0
    }

    pub fn into_operator(self) -> Operator2 {
        self.0
    }

    pub fn min_eigenvalue(&self) -> f64 {
        hermitian_eigenvalues(&self.0).0
    }
}

/// `(tr X sigma_x, tr X sigma_y, tr X sigma_z)` for any operator.
pub fn bloch_vector(x: &Operator2) -> [f64; 3] {
    [
        (x.0[(0, 1)] + x.0[(1, 0)]).re,
        (I * (x.0[(0, 1)] - x.0[(1, 0)])).re,
        (x.0[(0, 0)] - x.0[(1, 1)]).re,
    ]
}

/// A linear map on operators, as a 4x4 matrix on column-stacked vectors.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Superoperator2(pub Matrix4<Complex64>);

impl Superoperator2 {
    pub fn zero() -> Self {
        Superoperator2(Matrix4::zeros())
    }

    pub fn identity() -> Self {
        Superoperator2(Matrix4::identity())
    }

    /// The map `X -> A X B`.
    pub fn sandwich(a: &Operator2, b: &Operator2) -> Self {
        Superoperator2(b.0.transpose().kronecker(&a.0).fixed_view::<4, 4>(0, 0).into_owned())
    }

    /// Builds the matrix of `f` from its action on `|i><j|`.
    pub fn from_action(f: impl Fn(&Operator2) -> Operator2) -> Self {
        let mut m = Matrix4::zeros();
        for j in 0..2 {
            for i in 0..2 {
                let col = f(&Operator2::unit(i, j)).vectorize();
                m.set_column(i + 2 * j, &col);
            }
        }
        Superoperator2(m)
    }

    pub fn apply(&self, x: &Operator2) -> Operator2 {
        Operator2::unvectorize(&(self.0 * x.vectorize()))
    }

    pub fn compose(&self, inner: &Self) -> Self {
        Superoperator2(self.0 * inner.0)
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        (self.0 - other.0).iter().fold(0.0, |m, z| m.max(z.norm()))
    }

    /// Transpose map `X -> X^T`, the textbook positive but not completely positive map.
    pub fn transpose_map() -> Self {
        Self::from_action(|x| Operator2(x.0.transpose()))
    }
}

impl Add for Superoperator2 {
    type Output = Self;
    fn add(self, rhs: Self) -> Self {
        Superoperator2(self.0 + rhs.0)
    }
}

impl Mul<f64> for Superoperator2 {
    type Output = Self;
    fn mul(self, rhs: f64) -> Self {
        Superoperator2(self.0 * c(rhs, 0.0))
    }
}

/// `-i[H, tau] - 1/2 sum {L^* L, tau} + sum L tau L^*`.
pub fn liouvillian_apply(h: &Operator2, channels: &[Operator2], tau: &Operator2) -> Result<Operator2> {
    check_hamiltonian(h)?;
    Ok(liouvillian_unchecked(h, channels, tau))
}

pub(crate) fn check_hamiltonian(h: &Operator2) -> Result<()> {
    if !h.is_finite() || !h.is_hermitian(CONSTRUCTION_TOL) {
        return Err(Error::invalid("Hamiltonian must be Hermitian"));
    }
    Ok(())
}

#[inline]
pub(crate) fn liouvillian_unchecked(h: &Operator2, channels: &[Operator2], tau: &Operator2) -> Operator2 {
    let mut out = (h.commutator(tau)) * (-I);
    for l in channels {
        let ldl = l.adjoint() * *l;
        out += l.sandwich(tau) - ldl.anticommutator(tau) * 0.5;
    }
    out
}

/// Matrix of the generator built by [`liouvillian_apply`].
pub fn superop_matrix(h: &Operator2, channels: &[Operator2]) -> Result<Superoperator2> {
    check_hamiltonian(h)?;
    Ok(Superoperator2::from_action(|tau| liouvillian_unchecked(h, channels, tau)))
}

/// `exp(G t)` by Pade scaling and squaring.
pub fn superop_exp(g: &Superoperator2, t: f64) -> Result<Superoperator2> {
    if !(t >= 0.0) || !t.is_finite() {
        return Err(Error::invalid(format!("time must be finite and >= 0, got {t}")));
    }
    if t == 0.0 {
        return Ok(Superoperator2::identity());
    }
    Ok(Superoperator2((g.0 * c(t, 0.0)).exp()))
}

/// Choi matrix `sum_ij |i><j| (x) Phi(|i><j|)`.
pub fn choi_matrix(map: &Superoperator2) -> Matrix4<Complex64> {
    let mut choi = Matrix4::zeros();
    for i in 0..2 {
        for j in 0..2 {
            let img = map.apply(&Operator2::unit(i, j));
            for a in 0..2 {
                for b in 0..2 {
                    choi[(2 * i + a, 2 * j + b)] = img.get(a, b);
                }
            }
        }
    }
    choi
}

/// Smallest eigenvalue of the Choi matrix; the map is completely positive
/// iff this is nonnegative.
pub fn choi_positivity(map: &Superoperator2) -> f64 {
    let choi = choi_matrix(map);
    let herm = (choi + choi.adjoint()) * c(0.5, 0.0);
    herm.symmetric_eigenvalues().iter().cloned().fold(f64::INFINITY, f64::min)
}
