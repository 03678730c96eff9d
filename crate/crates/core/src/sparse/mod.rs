//! Compressed sparse row matrices and the iterative solvers built on them.

mod cg;
mod csr;
mod lobpcg;

use std::fmt::Debug;
use std::ops::{Add, AddAssign, Mul, MulAssign, Neg, Sub, SubAssign};

use num_complex::Complex64;

pub use cg::{solve_hpd, solve_hpd_from, CgOptions, CgOutcome};
pub use csr::{CsrMatrix, SparsityPattern};
pub use lobpcg::{lowest_eigenpairs, lowest_eigenpairs_constrained, EigenOptions, EigenPairs};

/// Field of matrix entries: `f64` for real-symmetric, `Complex64` for Hermitian.
pub trait Scalar:
    Copy
    + Debug
    + Default
    + PartialEq
    + Send
    + Sync
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Neg<Output = Self>
    + AddAssign
    + SubAssign
    + MulAssign
    + 'static
{
    fn zero() -> Self;
    fn from_real(x: f64) -> Self;
    fn conj(self) -> Self;
    fn re(self) -> f64;
    fn abs(self) -> f64;
    fn norm_sqr(self) -> f64;
    fn scale(self, s: f64) -> Self;
    fn is_finite(self) -> bool;
}

impl Scalar for f64 {
    fn zero() -> Self {
        0.0
    }
    fn from_real(x: f64) -> Self {
        x
    }
    fn conj(self) -> Self {
        self
    }
    fn re(self) -> f64 {
        self
    }
    fn abs(self) -> f64 {
        f64::abs(self)
    }
    fn norm_sqr(self) -> f64 {
        self * self
    }
    fn scale(self, s: f64) -> Self {
        self * s
    }
    fn is_finite(self) -> bool {
        f64::is_finite(self)
    }
}

impl Scalar for Complex64 {
    fn zero() -> Self {
        Complex64::new(0.0, 0.0)
    }
    fn from_real(x: f64) -> Self {
        Complex64::new(x, 0.0)
    }
    fn conj(self) -> Self {
        Complex64::conj(&self)
    }
    fn re(self) -> f64 {
        self.re
    }
    fn abs(self) -> f64 {
        self.norm()
    }
    fn norm_sqr(self) -> f64 {
        Complex64::norm_sqr(&self)
    }
    fn scale(self, s: f64) -> Self {
        self * s
    }
    fn is_finite(self) -> bool {
        Complex64::is_finite(self)
    }
}

/// `Σ conj(x_i) y_i`
pub fn dot<T: Scalar>(x: &[T], y: &[T]) -> T {
    x.iter().zip(y).fold(T::zero(), |acc, (&a, &b)| acc + a.conj() * b)
}

pub fn norm<T: Scalar>(x: &[T]) -> f64 {
    x.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt()
}

/// `y += alpha * x`
pub fn axpy<T: Scalar>(alpha: T, x: &[T], y: &mut [T]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}
