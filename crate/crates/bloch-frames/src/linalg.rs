//! Small dense complex matrices.
//!
//! Fiber matrices are tiny (a handful of rows), so a plain row-major
//! container with straightforward loops is the right tool. Hermitian
//! eigenproblems go through [`Real::eigh_dense`].

use std::ops::{Add, AddAssign, Index, IndexMut, Mul, Neg, Sub, SubAssign};

use num_complex::Complex;
use num_traits::{One, Zero};

use crate::error::{FrameError, Result};
use crate::scalar::{arg, cis, re, Real};

/// Row-major dense complex matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct CMat<T> {
    rows: usize,
    cols: usize,
    data: Vec<Complex<T>>,
}

impl<T> Index<(usize, usize)> for CMat<T> {
    type Output = Complex<T>;
    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &Complex<T> {
        debug_assert!(i < self.rows && j < self.cols);
        &self.data[i * self.cols + j]
    }
}

impl<T> IndexMut<(usize, usize)> for CMat<T> {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut Complex<T> {
        debug_assert!(i < self.rows && j < self.cols);
        &mut self.data[i * self.cols + j]
    }
}

impl<T: Real> CMat<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![Complex::zero(); rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = Complex::one();
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> Complex<T>) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<Complex<T>>) -> Self {
        assert_eq!(data.len(), rows * cols, "buffer length does not match shape");
        Self { rows, cols, data }
    }

    /// Matrix whose columns are the given vectors.
    pub fn from_columns(rows: usize, columns: &[Vec<Complex<T>>]) -> Self {
        let mut m = Self::zeros(rows, columns.len());
        for (j, c) in columns.iter().enumerate() {
            assert_eq!(c.len(), rows);
            for i in 0..rows {
                m[(i, j)] = c[i];
            }
        }
        m
    }

    pub fn from_diag(d: &[Complex<T>]) -> Self {
        let mut m = Self::zeros(d.len(), d.len());
        for (i, &x) in d.iter().enumerate() {
            m[(i, i)] = x;
        }
        m
    }

    pub fn from_real_diag(d: &[T]) -> Self {
        let mut m = Self::zeros(d.len(), d.len());
        for (i, &x) in d.iter().enumerate() {
            m[(i, i)] = re(x);
        }
        m
    }

    #[inline]
    pub fn nrows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn ncols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    #[inline]
    pub fn as_slice(&self) -> &[Complex<T>] {
        &self.data
    }

    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [Complex<T>] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<Complex<T>> {
        self.data
    }

    pub fn col(&self, j: usize) -> Vec<Complex<T>> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    pub fn set_col(&mut self, j: usize, v: &[Complex<T>]) {
        assert_eq!(v.len(), self.rows);
        for i in 0..self.rows {
            self[(i, j)] = v[i];
        }
    }

    /// Sub-matrix of `nr x nc` starting at `(r0, c0)`.
    pub fn block(&self, r0: usize, c0: usize, nr: usize, nc: usize) -> Self {
        assert!(r0 + nr <= self.rows && c0 + nc <= self.cols);
        Self::from_fn(nr, nc, |i, j| self[(r0 + i, c0 + j)])
    }

    pub fn set_block(&mut self, r0: usize, c0: usize, b: &Self) {
        assert!(r0 + b.rows <= self.rows && c0 + b.cols <= self.cols);
        for i in 0..b.rows {
            for j in 0..b.cols {
                self[(r0 + i, c0 + j)] = b[(i, j)];
            }
        }
    }

    /// Columns `c0..c0+nc`.
    pub fn columns(&self, c0: usize, nc: usize) -> Self {
        self.block(0, c0, self.rows, nc)
    }

    /// Block-diagonal direct sum `a ⊕ b`.
    pub fn direct_sum(a: &Self, b: &Self) -> Self {
        let mut m = Self::zeros(a.rows + b.rows, a.cols + b.cols);
        m.set_block(0, 0, a);
        m.set_block(a.rows, a.cols, b);
        m
    }

    /// Horizontal concatenation.
    pub fn hstack(a: &Self, b: &Self) -> Self {
        assert_eq!(a.rows, b.rows);
        let mut m = Self::zeros(a.rows, a.cols + b.cols);
        m.set_block(0, 0, a);
        m.set_block(0, a.cols, b);
        m
    }

    pub fn adjoint(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self[(j, i)].conj())
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    /// Entrywise complex conjugate.
    pub fn conj(&self) -> Self {
        Self { rows: self.rows, cols: self.cols, data: self.data.iter().map(|z| z.conj()).collect() }
    }

    pub fn scale(&self, s: Complex<T>) -> Self {
        Self { rows: self.rows, cols: self.cols, data: self.data.iter().map(|&z| z * s).collect() }
    }

    pub fn scale_real(&self, s: T) -> Self {
        Self { rows: self.rows, cols: self.cols, data: self.data.iter().map(|&z| z * s).collect() }
    }

    /// `self * other`.
    pub fn matmul(&self, other: &Self) -> Self {
        assert_eq!(self.cols, other.rows, "matmul shape mismatch");
        let (n, k, m) = (self.rows, self.cols, other.cols);
        let mut out = Self::zeros(n, m);
        for i in 0..n {
            let orow = &mut out.data[i * m..(i + 1) * m];
            for l in 0..k {
                let a = self.data[i * k + l];
                if a.re == T::zero() && a.im == T::zero() {
                    continue;
                }
                let brow = &other.data[l * m..(l + 1) * m];
                for (o, &b) in orow.iter_mut().zip(brow) {
                    *o = *o + a * b;
                }
            }
        }
        out
    }

    /// `self^* other` without forming the adjoint.
    pub fn adjoint_mul(&self, other: &Self) -> Self {
        assert_eq!(self.rows, other.rows, "adjoint_mul shape mismatch");
        let (k, n, m) = (self.rows, self.cols, other.cols);
        let mut out = Self::zeros(n, m);
        for l in 0..k {
            let brow = &other.data[l * m..(l + 1) * m];
            for i in 0..n {
                let a = self.data[l * n + i].conj();
                let orow = &mut out.data[i * m..(i + 1) * m];
                for (o, &b) in orow.iter_mut().zip(brow) {
                    *o = *o + a * b;
                }
            }
        }
        out
    }

    /// `self other^*`.
    pub fn mul_adjoint(&self, other: &Self) -> Self {
        assert_eq!(self.cols, other.cols, "mul_adjoint shape mismatch");
        let (n, m, k) = (self.rows, other.rows, self.cols);
        Self::from_fn(n, m, |i, j| {
            let mut s = Complex::<T>::zero();
            for l in 0..k {
                s = s + self.data[i * k + l] * other.data[j * k + l].conj();
            }
            s
        })
    }

    pub fn mul_vec(&self, v: &[Complex<T>]) -> Vec<Complex<T>> {
        assert_eq!(self.cols, v.len());
        (0..self.rows)
            .map(|i| {
                let row = &self.data[i * self.cols..(i + 1) * self.cols];
                row.iter().zip(v).fold(Complex::zero(), |s, (&a, &b)| s + a * b)
            })
            .collect()
    }

    pub fn trace(&self) -> Complex<T> {
        (0..self.rows.min(self.cols)).fold(Complex::zero(), |s, i| s + self[(i, i)])
    }

    pub fn norm_fro(&self) -> T {
        self.data.iter().fold(T::zero(), |s, z| s + z.norm_sqr()).sqrt()
    }

    pub fn max_abs(&self) -> T {
        self.data.iter().fold(T::zero(), |s, z| s.max(z.norm()))
    }

    /// Largest entry of `|A - A^*|`.
    pub fn hermitian_defect(&self) -> T {
        assert!(self.is_square());
        let mut d = T::zero();
        for i in 0..self.rows {
            for j in 0..=i {
                d = d.max((self[(i, j)] - self[(j, i)].conj()).norm());
            }
        }
        d
    }

    /// `(A + A^*) / 2`.
    pub fn hermitian_part(&self) -> Self {
        let half = T::lit(0.5);
        Self::from_fn(self.rows, self.cols, |i, j| (self[(i, j)] + self[(j, i)].conj()) * half)
    }

    /// Spectral norm of a Hermitian matrix: largest `|eigenvalue|`.
    pub fn norm2_hermitian(&self) -> Result<T> {
        let v = T::eigvalsh_dense(&self.hermitian_part())?;
        Ok(v.iter().fold(T::zero(), |s, x| s.max(x.abs())))
    }

    /// Spectral norm of an arbitrary matrix.
    pub fn norm2(&self) -> Result<T> {
        if self.rows == 0 || self.cols == 0 {
            return Ok(T::zero());
        }
        let g = if self.rows >= self.cols { self.adjoint_mul(self) } else { self.mul_adjoint(self) };
        let v = T::eigvalsh_dense(&g.hermitian_part())?;
        Ok(v.last().copied().unwrap_or(T::zero()).max(T::zero()).sqrt())
    }

    /// LU factorisation with partial pivoting.
    pub fn lu(&self) -> Result<Lu<T>> {
        assert!(self.is_square(), "LU of a non-square matrix");
        let n = self.rows;
        let mut a = self.clone();
        let mut perm: Vec<usize> = (0..n).collect();
        let mut sign = T::one();
        let scale = self.max_abs().max(T::min_positive_value());
        for c in 0..n {
            let (p, best) = (c..n)
                .map(|r| (r, a[(r, c)].norm()))
                .fold((c, -T::one()), |acc, x| if x.1 > acc.1 { x } else { acc });
            if best <= scale * T::EPS * T::lit(1e-3) {
                return Err(FrameError::NotConverged(format!("singular matrix in LU at column {c}")));
            }
            if p != c {
                perm.swap(p, c);
                for j in 0..n {
                    a.data.swap(p * n + j, c * n + j);
                }
                sign = -sign;
            }
            let piv = a[(c, c)];
            for r in (c + 1)..n {
                let f = a[(r, c)] / piv;
                a[(r, c)] = f;
                if f.re == T::zero() && f.im == T::zero() {
                    continue;
                }
                for j in (c + 1)..n {
                    let u = a[(c, j)];
                    a[(r, j)] = a[(r, j)] - f * u;
                }
            }
        }
        Ok(Lu { lu: a, perm, sign })
    }

    pub fn inverse(&self) -> Result<Self> {
        let lu = self.lu()?;
        Ok(lu.solve(&Self::identity(self.rows)))
    }

    pub fn det(&self) -> Complex<T> {
        match self.lu() {
            Ok(lu) => lu.det(),
            Err(_) => Complex::zero(),
        }
    }

    /// Hermitian eigen-decomposition with ascending eigenvalues and a fixed phase
    /// convention: the largest-modulus entry of each eigenvector is real and
    /// positive, ties going to the lowest row.
    pub fn eigh(&self) -> Result<Eigh<T>> {
        let tol = herm_tol::<T>() * T::one().max(self.max_abs());
        let defect = self.hermitian_defect();
        if defect > tol {
            return Err(FrameError::NotHermitian { k: vec![], defect: defect.to_f64_lossy() });
        }
        let (values, mut vectors) = T::eigh_dense(&self.hermitian_part())?;
        fix_phases(&mut vectors);
        Ok(Eigh { values, vectors })
    }

    /// `f(A)` for Hermitian `A` by spectral calculus.
    pub fn herm_fn(&self, f: impl Fn(T) -> Complex<T>) -> Result<Self> {
        let e = self.eigh()?;
        Ok(e.apply(f))
    }

    /// `e^{i t A}` for Hermitian `A`.
    pub fn exp_i(&self, t: T) -> Result<Self> {
        self.herm_fn(|x| cis(t * x))
    }

    /// Unitary factor of the polar decomposition `X = U |X|`.
    pub fn polar_unitary(&self) -> Result<Self> {
        let g = self.adjoint_mul(self);
        let e = g.eigh()?;
        let min = e.values.first().copied().unwrap_or(T::one());
        if min <= T::EPS.sqrt() {
            return Err(FrameError::NotPositive { k: vec![], min_eig: min.to_f64_lossy() });
        }
        Ok(self.matmul(&e.apply(|x| re(T::one() / x.sqrt()))))
    }

    /// Largest `|U^*U - 1|` entry.
    pub fn unitarity_defect(&self) -> T {
        (&self.adjoint_mul(self) - &Self::identity(self.cols)).max_abs()
    }

    /// Orthonormal columns spanning the same space (modified Gram-Schmidt, twice).
    pub fn orthonormalize_columns(&self) -> Self {
        let mut q = self.clone();
        for _ in 0..2 {
            for j in 0..q.cols {
                for p in 0..j {
                    let mut dot = Complex::<T>::zero();
                    for i in 0..q.rows {
                        dot = dot + q[(i, p)].conj() * q[(i, j)];
                    }
                    for i in 0..q.rows {
                        let v = q[(i, p)];
                        q[(i, j)] = q[(i, j)] - dot * v;
                    }
                }
                let nrm = (0..q.rows).fold(T::zero(), |s, i| s + q[(i, j)].norm_sqr()).sqrt();
                if nrm > T::zero() {
                    for i in 0..q.rows {
                        q[(i, j)] = q[(i, j)] / nrm;
                    }
                }
            }
        }
        q
    }
}

/// Tolerance for accepting a matrix as Hermitian.
pub fn herm_tol<T: Real>() -> T {
    T::lit(1e-10).max(T::EPS * T::lit(1e4))
}

fn fix_phases<T: Real>(v: &mut CMat<T>) {
    let n = v.rows;
    let slack = T::one() - T::lit(1e-9).max(T::EPS * T::lit(64.0));
    for j in 0..v.cols {
        let bmod = (0..n).fold(T::zero(), |s, i| s.max(v[(i, j)].norm()));
        if bmod <= T::zero() {
            continue;
        }
        let best = (0..n).find(|&i| v[(i, j)].norm() >= bmod * slack).unwrap_or(0);
        let m = v[(best, j)].norm();
        let ph = v[(best, j)].conj() / m;
        for i in 0..n {
            v[(i, j)] = v[(i, j)] * ph;
        }
        v[(best, j)].im = T::zero();
    }
}

/// LU factors produced by [`CMat::lu`].
#[derive(Clone, Debug)]
pub struct Lu<T> {
    lu: CMat<T>,
    perm: Vec<usize>,
    sign: T,
}

impl<T: Real> Lu<T> {
    pub fn det(&self) -> Complex<T> {
        let n = self.lu.rows;
        (0..n).fold(re(self.sign), |s, i| s * self.lu[(i, i)])
    }

    /// Solve `A X = B`.
    pub fn solve(&self, b: &CMat<T>) -> CMat<T> {
        let n = self.lu.rows;
        assert_eq!(b.rows, n);
        let m = b.cols;
        let mut x = CMat::from_fn(n, m, |i, j| b[(self.perm[i], j)]);
        for i in 0..n {
            for k in 0..i {
                let l = self.lu[(i, k)];
                if l.re == T::zero() && l.im == T::zero() {
                    continue;
                }
                for j in 0..m {
                    let v = x[(k, j)];
                    x[(i, j)] = x[(i, j)] - l * v;
                }
            }
        }
        for i in (0..n).rev() {
            for k in (i + 1)..n {
                let u = self.lu[(i, k)];
                if u.re == T::zero() && u.im == T::zero() {
                    continue;
                }
                for j in 0..m {
                    let v = x[(k, j)];
                    x[(i, j)] = x[(i, j)] - u * v;
                }
            }
            let d = self.lu[(i, i)];
            for j in 0..m {
                x[(i, j)] = x[(i, j)] / d;
            }
        }
        x
    }
}

/// Result of [`CMat::eigh`].
#[derive(Clone, Debug)]
pub struct Eigh<T> {
    pub values: Vec<T>,
    pub vectors: CMat<T>,
}

impl<T: Real> Eigh<T> {
    /// `V f(Λ) V^*`.
    pub fn apply(&self, f: impl Fn(T) -> Complex<T>) -> CMat<T> {
        let n = self.vectors.rows;
        let k = self.values.len();
        let fv: Vec<Complex<T>> = self.values.iter().map(|&x| f(x)).collect();
        CMat::from_fn(n, n, |i, j| {
            let mut s = Complex::<T>::zero();
            for l in 0..k {
                s = s + self.vectors[(i, l)] * fv[l] * self.vectors[(j, l)].conj();
            }
            s
        })
    }

    /// Eigenvectors of the `count` largest eigenvalues, in ascending order.
    pub fn top(&self, count: usize) -> CMat<T> {
        let k = self.values.len();
        self.vectors.columns(k - count, count)
    }

    /// Eigenvectors of the `count` smallest eigenvalues.
    pub fn bottom(&self, count: usize) -> CMat<T> {
        self.vectors.columns(0, count)
    }
}

/// Eigen-decomposition of a unitary matrix: phases in `(-pi, pi]` (ascending) and
/// orthonormal eigenvectors.
///
/// The matrix is rotated so that the widest spectral gap sits at `-1`; the
/// Cayley transform is then well conditioned and Hermitian, so eigenvectors
/// come from the Hermitian solver and stay orthonormal under degeneracy.
pub fn eig_unitary<T: Real>(u: &CMat<T>) -> Result<(Vec<T>, CMat<T>)> {
    let n = u.nrows();
    if n == 0 {
        return Ok((Vec::new(), CMat::zeros(0, 0)));
    }
    let vals = T::eigvals_general(u)?;
    let centre = widest_gap_centre(&vals.iter().map(|&z| arg(z)).collect::<Vec<_>>());
    // beta = e^{-i(centre - pi)} u puts the gap centre at -1.
    let beta = u.scale(cis(T::PI() - centre));
    let one = CMat::identity(n);
    let s = (&one - &beta).matmul(&(&one + &beta).inverse()?).scale(Complex::i());
    let e = T::eigh_dense(&s.hermitian_part())?;
    let mut pairs: Vec<(T, Vec<Complex<T>>)> = e
        .0
        .iter()
        .enumerate()
        .map(|(j, &sig)| {
            let th = wrap_angle(sig.atan() * T::lit(2.0) + centre - T::PI());
            (th, e.1.col(j))
        })
        .collect();
    pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap_or(std::cmp::Ordering::Equal));
    let phases = pairs.iter().map(|p| p.0).collect();
    let cols: Vec<Vec<Complex<T>>> = pairs.into_iter().map(|p| p.1).collect();
    let mut vecs = CMat::from_columns(n, &cols);
    fix_phases(&mut vecs);
    Ok((phases, vecs))
}

/// Angle at the centre of the widest gap between the given angles on the circle.
pub fn widest_gap_centre<T: Real>(angles: &[T]) -> T {
    if angles.is_empty() {
        return T::PI();
    }
    let mut a: Vec<T> = angles.iter().map(|&x| wrap_angle(x)).collect();
    a.sort_by(|x, y| x.partial_cmp(y).unwrap_or(std::cmp::Ordering::Equal));
    let tp = T::PI() + T::PI();
    let mut best = (a[0] + tp - a[a.len() - 1], a[a.len() - 1]);
    for w in a.windows(2) {
        let g = w[1] - w[0];
        if g > best.0 {
            best = (g, w[0]);
        }
    }
    wrap_angle(best.1 + best.0 / T::lit(2.0))
}

/// Wrap into `(-pi, pi]`.
pub fn wrap_angle<T: Real>(x: T) -> T {
    let tp = T::PI() + T::PI();
    let mut y = x % tp;
    if y > T::PI() {
        y = y - tp;
    } else if y <= -T::PI() {
        y = y + tp;
    }
    y
}

/// Chord distance `|e^{ia} - e^{ib}|`.
pub fn chord<T: Real>(a: T, b: T) -> T {
    (T::lit(2.0) * ((a - b) / T::lit(2.0)).sin()).abs()
}

macro_rules! binop {
    ($tr:ident, $f:ident, $op:tt) => {
        impl<T: Real> $tr<&CMat<T>> for &CMat<T> {
            type Output = CMat<T>;
            fn $f(self, rhs: &CMat<T>) -> CMat<T> {
                assert_eq!((self.rows, self.cols), (rhs.rows, rhs.cols), "shape mismatch");
                CMat {
                    rows: self.rows,
                    cols: self.cols,
                    data: self.data.iter().zip(&rhs.data).map(|(&a, &b)| a $op b).collect(),
                }
            }
        }
        impl<T: Real> $tr<CMat<T>> for CMat<T> {
            type Output = CMat<T>;
            fn $f(self, rhs: CMat<T>) -> CMat<T> {
                (&self).$f(&rhs)
            }
        }
    };
}
binop!(Add, add, +);
binop!(Sub, sub, -);

impl<T: Real> Mul<&CMat<T>> for &CMat<T> {
    type Output = CMat<T>;
    fn mul(self, rhs: &CMat<T>) -> CMat<T> {
        self.matmul(rhs)
    }
}

impl<T: Real> Mul<CMat<T>> for CMat<T> {
    type Output = CMat<T>;
    fn mul(self, rhs: CMat<T>) -> CMat<T> {
        self.matmul(&rhs)
    }
}

impl<T: Real> Neg for &CMat<T> {
    type Output = CMat<T>;
    fn neg(self) -> CMat<T> {
        CMat { rows: self.rows, cols: self.cols, data: self.data.iter().map(|&z| -z).collect() }
    }
}

impl<T: Real> AddAssign<&CMat<T>> for CMat<T> {
    fn add_assign(&mut self, rhs: &CMat<T>) {
        assert_eq!((self.rows, self.cols), (rhs.rows, rhs.cols));
        for (a, &b) in self.data.iter_mut().zip(&rhs.data) {
            *a = *a + b;
        }
    }
}

impl<T: Real> SubAssign<&CMat<T>> for CMat<T> {
    fn sub_assign(&mut self, rhs: &CMat<T>) {
        assert_eq!((self.rows, self.cols), (rhs.rows, rhs.cols));
        for (a, &b) in self.data.iter_mut().zip(&rhs.data) {
            *a = *a - b;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_herm(n: usize, rng: &mut ChaCha8Rng) -> CMat<f64> {
        let a = CMat::from_fn(n, n, |_, _| Complex::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)));
        a.hermitian_part()
    }

    /// Cyclic complex Jacobi sweeps: an independent eigenvalue oracle.
    fn jacobi_eigenvalues(a: &CMat<f64>) -> Vec<f64> {
        let n = a.nrows();
        let mut m = a.clone();
        for _ in 0..100 {
            let mut off = 0.0;
            for p in 0..n {
                for q in (p + 1)..n {
                    off += m[(p, q)].norm_sqr();
                }
            }
            if off < 1e-30 {
                break;
            }
            for p in 0..n {
                for q in (p + 1)..n {
                    let apq = m[(p, q)];
                    if apq.norm() < 1e-300 {
                        continue;
                    }
                    let app = m[(p, p)].re;
                    let aqq = m[(q, q)].re;
                    let phase = apq / apq.norm();
                    let tau = (aqq - app) / (2.0 * apq.norm());
                    let t = tau.signum() / (tau.abs() + (1.0 + tau * tau).sqrt());
                    let t = if tau == 0.0 { 1.0 } else { t };
                    let c = 1.0 / (1.0 + t * t).sqrt();
                    let s = t * c;
                    // Rotation acting on columns p, q.
                    let mut g = CMat::identity(n);
                    g[(p, p)] = Complex::new(c, 0.0);
                    g[(q, q)] = Complex::new(c, 0.0);
                    g[(p, q)] = phase * s;
                    g[(q, p)] = -phase.conj() * s;
                    m = g.adjoint().matmul(&m).matmul(&g);
                }
            }
        }
        let mut v: Vec<f64> = (0..n).map(|i| m[(i, i)].re).collect();
        v.sort_by(|a, b| a.partial_cmp(b).unwrap());
        v
    }

    #[test]
    fn eigh_matches_jacobi_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for n in [1, 2, 3, 5, 8] {
            let a = random_herm(n, &mut rng);
            let e = a.eigh().unwrap();
            let oracle = jacobi_eigenvalues(&a);
            for (x, y) in e.values.iter().zip(&oracle) {
                assert!((x - y).abs() < 1e-12, "{x} vs {y}");
            }
            let rebuilt = e.apply(re);
            assert!((&rebuilt - &a).max_abs() < 1e-12);
        }
    }

    #[test]
    fn eigh_phase_convention() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random_herm(4, &mut rng);
        let e = a.eigh().unwrap();
        for j in 0..4 {
            let c = e.vectors.col(j);
            let (imax, _) = c.iter().enumerate().fold((0, -1.0), |b, (i, z)| if z.norm() > b.1 { (i, z.norm()) } else { b });
            assert!(c[imax].im.abs() < 1e-14 && c[imax].re > 0.0);
        }
    }

    #[test]
    fn eigh_rejects_non_hermitian() {
        let mut a = CMat::<f64>::identity(2);
        a[(0, 1)] = Complex::new(1e-6, 0.0);
        assert!(matches!(a.eigh(), Err(FrameError::NotHermitian { .. })));
    }

    #[test]
    fn lu_inverse_and_det() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let a = CMat::from_fn(5, 5, |_, _| Complex::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)));
        let inv = a.inverse().unwrap();
        assert!((&a.matmul(&inv) - &CMat::identity(5)).max_abs() < 1e-12);
        // det of a Hermitian matrix is the product of its eigenvalues.
        let h = random_herm(4, &mut rng);
        let p: f64 = h.eigh().unwrap().values.iter().product();
        assert!((h.det() - Complex::new(p, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn polar_of_unitary_times_positive() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let u = random_herm(3, &mut rng).exp_i(1.0).unwrap();
        let p = random_herm(3, &mut rng).herm_fn(|x| re(2.0 + x.abs())).unwrap();
        let x = u.matmul(&p);
        let w = x.polar_unitary().unwrap();
        assert!((&w - &u).max_abs() < 1e-12);
    }

    #[test]
    fn unitary_eigen_reconstructs() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for n in [1, 2, 4, 6] {
            let u = random_herm(n, &mut rng).exp_i(3.0).unwrap();
            let (ph, v) = eig_unitary(&u).unwrap();
            let d: Vec<Complex<f64>> = ph.iter().map(|&t| cis(t)).collect();
            let rebuilt = v.matmul(&CMat::from_diag(&d)).mul_adjoint(&v);
            assert!((&rebuilt - &u).max_abs() < 1e-11);
            assert!(v.unitarity_defect() < 1e-12);
        }
        // Degenerate spectrum keeps orthonormal vectors.
        let u = CMat::<f64>::identity(3).scale(cis(0.7));
        let (ph, v) = eig_unitary(&u).unwrap();
        assert!(ph.iter().all(|&t| (t - 0.7).abs() < 1e-12));
        assert!(v.unitarity_defect() < 1e-12);
    }

    #[test]
    fn works_in_single_precision() {
        let a = CMat::<f32>::from_fn(3, 3, |i, j| {
            if i == j { Complex::new(i as f32, 0.0) } else { Complex::new(0.1, 0.0) }
        });
        let e = a.eigh().unwrap();
        let rebuilt = e.apply(re);
        assert!((&rebuilt - &a).max_abs() < 1e-5);
    }
}
