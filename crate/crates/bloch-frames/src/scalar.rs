//! Real scalar abstraction shared by every numerical routine.
//!
//! All algorithms are written against [`Real`], which is implemented for
//! `f32` and `f64`. Large dense Hermitian eigenproblems are delegated to
//! `faer`; the trait carries that hook so generic code never names a backend.

use std::fmt::{Debug, Display};

use faer::{Mat, Side};
use num_complex::Complex;
use num_traits::{Float, FloatConst, FromPrimitive, ToPrimitive};

use crate::error::FrameError;
use crate::linalg::CMat;

/// Floating-point type usable by the library.
pub trait Real:
    Float
    + FloatConst
    + FromPrimitive
    + ToPrimitive
    + Debug
    + Display
    + Default
    + Send
    + Sync
    + rustfft::FftNum
    + 'static
{
    /// Machine epsilon as used by tolerance heuristics.
    const EPS: Self;

    /// Dense Hermitian eigen-decomposition (ascending eigenvalues, unit eigenvectors in columns).
    fn eigh_dense(a: &CMat<Self>) -> Result<(Vec<Self>, CMat<Self>), FrameError>;

    /// Eigenvalues only of a dense Hermitian matrix, ascending.
    fn eigvalsh_dense(a: &CMat<Self>) -> Result<Vec<Self>, FrameError>;

    /// Eigenvalues of a general square complex matrix (no ordering guarantee).
    fn eigvals_general(a: &CMat<Self>) -> Result<Vec<Complex<Self>>, FrameError>;

    /// Lossy conversion from an `f64` literal.
    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("f64 literal representable")
    }

    /// Lossless-enough widening used for reporting.
    #[inline]
    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

macro_rules! impl_real {
    ($t:ty, $eps:expr) => {
        impl Real for $t {
            const EPS: Self = $eps;

            fn eigh_dense(a: &CMat<Self>) -> Result<(Vec<Self>, CMat<Self>), FrameError> {
                let n = a.nrows();
                if n == 0 {
                    return Ok((Vec::new(), CMat::zeros(0, 0)));
                }
                let m = Mat::<Complex<$t>>::from_fn(n, n, |i, j| a[(i, j)]);
                let evd = m
                    .self_adjoint_eigen(Side::Lower)
                    .map_err(|_| FrameError::NotConverged("hermitian eigensolver".into()))?;
                let u = evd.U();
                let s = evd.S();
                let vals: Vec<$t> = (0..n).map(|j| s[j].re).collect();
                let vecs = CMat::from_fn(n, n, |i, j| u[(i, j)]);
                Ok((vals, vecs))
            }

            fn eigvalsh_dense(a: &CMat<Self>) -> Result<Vec<Self>, FrameError> {
                let n = a.nrows();
                if n == 0 {
                    return Ok(Vec::new());
                }
                let m = Mat::<Complex<$t>>::from_fn(n, n, |i, j| a[(i, j)]);
                m.self_adjoint_eigenvalues(Side::Lower)
                    .map_err(|_| FrameError::NotConverged("hermitian eigensolver".into()))
            }

            fn eigvals_general(a: &CMat<Self>) -> Result<Vec<Complex<Self>>, FrameError> {
                let n = a.nrows();
                if n == 0 {
                    return Ok(Vec::new());
                }
                let m = Mat::<Complex<$t>>::from_fn(n, n, |i, j| a[(i, j)]);
                m.eigenvalues()
                    .map_err(|_| FrameError::NotConverged("general eigensolver".into()))
            }
        }
    };
}

impl_real!(f64, f64::EPSILON);
impl_real!(f32, f32::EPSILON);

/// Shorthand for `Complex::new(re, 0)`.
#[inline]
pub fn re<T: Real>(x: T) -> Complex<T> {
    Complex::new(x, T::zero())
}

/// `e^{i theta}`.
#[inline]
pub fn cis<T: Real>(theta: T) -> Complex<T> {
    Complex::new(theta.cos(), theta.sin())
}

/// Principal argument in `(-pi, pi]`.
#[inline]
pub fn arg<T: Real>(z: Complex<T>) -> T {
    z.im.atan2(z.re)
}

/// `2 pi` in the working precision.
#[inline]
pub fn two_pi<T: Real>() -> T {
    T::PI() + T::PI()
}
