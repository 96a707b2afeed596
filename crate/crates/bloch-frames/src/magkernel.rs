//! Magnetically covariant lattice kernels on `Z^2`.
//!
//! An operator with matrix elements `A(γ, γ') = e^{iεφ(γ,γ')} a(γ - γ')` is
//! stored through its blocks `a(δ)` for `‖δ‖_∞ ≤ radius`. Such operators form
//! an algebra under the twisted convolution, commute with the magnetic
//! translations and describe both operators and translate families of seeds
//! (a seed set `w_1..w_S` is the kernel with block columns `w_s(δ)`).

use num_complex::Complex;
use num_traits::Zero;
use rand::{Rng, SeedableRng};
use rayon::prelude::*;

use crate::error::{FrameError, Result};
use crate::kspace::{sup_norm, torus_coefficients, KGrid, LatticeBox, LatticeFunction};
use crate::linalg::CMat;
use crate::scalar::{cis, Real};

pub(crate) fn peierls_int<T: Real>(x: [i64; 2], xp: [i64; 2]) -> T {
    T::lit((xp[0] * x[1] - xp[1] * x[0]) as f64 / 2.0)
}

fn frob<T: Real>(c: &[Complex<T>]) -> T {
    c.iter().fold(T::zero(), |s, z| s + z.norm_sqr()).sqrt()
}

/// Covariant kernel with `rows × cols` blocks.
#[derive(Clone, Debug, PartialEq)]
pub struct MagneticKernel<T> {
    pub eps: T,
    pub rows: usize,
    pub cols: usize,
    pub radius: usize,
    data: Vec<Complex<T>>,
}

impl<T: Real> MagneticKernel<T> {
    pub fn zeros(eps: T, rows: usize, cols: usize, radius: usize) -> Self {
        let side = 2 * radius + 1;
        Self { eps, rows, cols, radius, data: vec![Complex::zero(); side * side * rows * cols] }
    }

    pub fn identity(eps: T, n: usize, radius: usize) -> Self {
        let mut k = Self::zeros(eps, n, n, radius);
        k.set_block([0, 0], &CMat::identity(n));
        k
    }

    /// Hopping blocks of a two-dimensional model.
    pub fn from_blocks<'a>(eps: T, n: usize, blocks: impl IntoIterator<Item = (&'a [i64], &'a CMat<T>)>) -> Self {
        let blocks: Vec<_> = blocks.into_iter().collect();
        let radius = blocks.iter().map(|(d, _)| sup_norm(d)).max().unwrap_or(0);
        let mut k = Self::zeros(eps, n, n, radius);
        for (d, b) in blocks {
            k.set_block([d[0], d[1]], b);
        }
        k
    }

    /// Fourier coefficients `a(δ) = ∫ e^{i2πk·δ} F(k) dk` of a sampled
    /// matrix field, evaluated on the grid.
    pub fn from_samples(eps: T, grid: &KGrid, mats: &[CMat<T>], radius: usize) -> Result<Self> {
        if grid.dim() != 2 || mats.len() != grid.len() {
            return Err(FrameError::InvalidInput("kernel assembly needs one matrix per point of a 2D grid".into()));
        }
        let bound = grid.sizes().iter().copied().min().unwrap() / 2;
        if radius > bound {
            return Err(FrameError::Aliasing { radius, bound });
        }
        let (r, c) = (mats[0].nrows(), mats[0].ncols());
        let flat: Vec<Complex<T>> = mats.iter().flat_map(|m| m.as_slice().iter().copied()).collect();
        let coeff = torus_coefficients(grid, r * c, &flat);
        let mut k = Self::zeros(eps, r, c, radius);
        let ds: Vec<[i64; 2]> = k.displacements().collect();
        for d in ds {
            let t = grid.flat(&[d[0].rem_euclid(grid.size(0) as i64) as usize, d[1].rem_euclid(grid.size(1) as i64) as usize]);
            let o = k.slot(d).unwrap();
            k.data[o..o + r * c].copy_from_slice(&coeff[t * r * c..(t + 1) * r * c]);
        }
        Ok(k)
    }

    /// Seed set as the kernel `δ ↦ [w_1(δ) … w_S(δ)]`.
    pub fn from_seeds(eps: T, seeds: &[LatticeFunction<T>]) -> Result<Self> {
        let first = seeds.first().ok_or_else(|| FrameError::InvalidInput("empty seed set".into()))?;
        if first.lbox.dim != 2 || seeds.iter().any(|s| s.lbox != first.lbox || s.fiber != first.fiber) {
            return Err(FrameError::InvalidInput("seeds must share a two-dimensional box and fiber".into()));
        }
        let (q, s) = (first.fiber, seeds.len());
        let mut k = Self::zeros(eps, q, s, first.lbox.radius);
        for (i, g) in first.lbox.sites().enumerate() {
            let o = k.slot([g[0], g[1]]).unwrap();
            for (a, w) in seeds.iter().enumerate() {
                for x in 0..q {
                    k.data[o + x * s + a] = w.data[i * q + x];
                }
            }
        }
        Ok(k)
    }

    /// Block columns as lattice functions on the kernel's own box.
    pub fn to_seeds(&self) -> Vec<LatticeFunction<T>> {
        let lbox = LatticeBox { dim: 2, radius: self.radius };
        (0..self.cols)
            .map(|a| {
                let mut f = LatticeFunction::zeros(lbox, self.rows);
                for (i, g) in lbox.sites().enumerate() {
                    let o = self.slot([g[0], g[1]]).unwrap();
                    for x in 0..self.rows {
                        f.data[i * self.rows + x] = self.data[o + x * self.cols + a];
                    }
                }
                f
            })
            .collect()
    }

    pub fn side(&self) -> usize {
        2 * self.radius + 1
    }

    fn bsize(&self) -> usize {
        self.rows * self.cols
    }

    fn slot(&self, d: [i64; 2]) -> Option<usize> {
        let r = self.radius as i64;
        if d[0].abs() > r || d[1].abs() > r {
            return None;
        }
        Some(((d[0] + r) as usize * self.side() + (d[1] + r) as usize) * self.bsize())
    }

    fn disp(&self, slot: usize) -> [i64; 2] {
        let s = self.side();
        let r = self.radius as i64;
        [(slot / s) as i64 - r, (slot % s) as i64 - r]
    }

    pub fn block(&self, d: [i64; 2]) -> CMat<T> {
        match self.slot(d) {
            Some(o) => CMat::from_vec(self.rows, self.cols, self.data[o..o + self.bsize()].to_vec()),
            None => CMat::zeros(self.rows, self.cols),
        }
    }

    pub fn set_block(&mut self, d: [i64; 2], b: &CMat<T>) {
        assert_eq!((b.nrows(), b.ncols()), (self.rows, self.cols));
        let n = self.bsize();
        let o = self.slot(d).expect("displacement inside the kernel radius");
        self.data[o..o + n].copy_from_slice(b.as_slice());
    }

    pub fn displacements(&self) -> impl Iterator<Item = [i64; 2]> + '_ {
        (0..self.side() * self.side()).map(move |s| self.disp(s))
    }

    /// Same blocks read with a different field strength.
    pub fn with_eps(&self, eps: T) -> Self {
        Self { eps, ..self.clone() }
    }

    /// Restriction or zero extension to another radius.
    pub fn with_radius(&self, radius: usize) -> Self {
        if radius == self.radius {
            return self.clone();
        }
        let mut out = Self::zeros(self.eps, self.rows, self.cols, radius);
        let n = self.bsize();
        for s in 0..self.side() * self.side() {
            let d = self.disp(s);
            if let Some(o) = out.slot(d) {
                out.data[o..o + n].copy_from_slice(&self.data[s * n..(s + 1) * n]);
            }
        }
        out
    }

    /// Rows `r0..r0+nr` of every block (restriction to a fiber summand).
    pub fn row_block(&self, r0: usize, nr: usize) -> Self {
        let mut out = Self::zeros(self.eps, nr, self.cols, self.radius);
        let ds: Vec<[i64; 2]> = self.displacements().collect();
        for d in ds {
            out.set_block(d, &self.block(d).block(r0, 0, nr, self.cols));
        }
        out
    }

    /// `a^*(δ) = a(-δ)^*`.
    pub fn adjoint(&self) -> Self {
        let mut out = Self::zeros(self.eps, self.cols, self.rows, self.radius);
        let ds: Vec<[i64; 2]> = self.displacements().collect();
        for d in ds {
            out.set_block(d, &self.block([-d[0], -d[1]]).adjoint());
        }
        out
    }

    pub fn scale(&self, c: Complex<T>) -> Self {
        Self { data: self.data.iter().map(|z| *z * c).collect(), ..self.clone() }
    }

    pub fn scale_real(&self, c: T) -> Self {
        Self { data: self.data.iter().map(|z| *z * c).collect(), ..self.clone() }
    }

    fn combine(&self, other: &Self, f: impl Fn(Complex<T>, Complex<T>) -> Complex<T>) -> Self {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        let r = self.radius.max(other.radius);
        let (a, b) = (self.with_radius(r), other.with_radius(r));
        Self { eps: self.eps, rows: self.rows, cols: self.cols, radius: r, data: a.data.iter().zip(&b.data).map(|(x, y)| f(*x, *y)).collect() }
    }

    pub fn add(&self, other: &Self) -> Self {
        self.combine(other, |x, y| x + y)
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.combine(other, |x, y| x - y)
    }

    /// `a + c 1` for a square kernel.
    pub fn add_identity(&self, c: T) -> Self {
        assert_eq!(self.rows, self.cols);
        let mut out = self.clone();
        let q = self.rows;
        let o = out.slot([0, 0]).unwrap();
        for i in 0..q {
            out.data[o + i * q + i] = out.data[o + i * q + i] + c;
        }
        out
    }

    /// Twisted convolution `c(δ) = Σ_{δ'} e^{iεφ(δ-δ', δ')} a(δ-δ') b(δ')`,
    /// kept for `‖δ‖_∞ ≤ radius`.
    pub fn product(&self, other: &Self, radius: usize) -> Self {
        assert_eq!(self.cols, other.rows, "inner block dimensions differ");
        let (p, m, n) = (self.rows, self.cols, other.cols);
        let side = 2 * radius + 1;
        let eps = self.eps;
        let (ra, rb) = (self.radius as i64, other.radius as i64);
        let nz_a: Vec<bool> = self.data.chunks(p * m).map(|c| c.iter().any(|z| !z.is_zero())).collect();
        let nz_b: Vec<bool> = other.data.chunks(m * n).map(|c| c.iter().any(|z| !z.is_zero())).collect();
        let half = eps * T::lit(0.5);
        let mut data = vec![Complex::<T>::zero(); side * side * p * n];
        // φ(δ - δ', δ') = (δ'_1 δ_2 - δ'_2 δ_1)/2 splits into one factor per axis of δ'.
        data.par_chunks_mut(p * n).enumerate().for_each(|(s, acc)| {
            let d = [(s / side) as i64 - radius as i64, (s % side) as i64 - radius as i64];
            let (lo0, hi0) = ((d[0] - ra).max(-rb), (d[0] + ra).min(rb));
            let (lo1, hi1) = ((d[1] - ra).max(-rb), (d[1] + ra).min(rb));
            if lo0 > hi0 || lo1 > hi1 {
                return;
            }
            let pb: Vec<Complex<T>> = (lo1..=hi1).map(|e1| cis(-half * T::lit((e1 * d[0]) as f64))).collect();
            let mut row = vec![Complex::<T>::zero(); p * n];
            let mut tmp = vec![Complex::<T>::zero(); m];
            for e0 in lo0..=hi0 {
                row.iter_mut().for_each(|z| *z = Complex::zero());
                let mut any = false;
                let sa0 = ((d[0] - e0 + ra) * (2 * ra + 1) + ra) as usize;
                let sb0 = ((e0 + rb) * (2 * rb + 1) + rb) as usize;
                for e1 in lo1..=hi1 {
                    let sa = (sa0 as i64 + d[1] - e1) as usize;
                    let sb = (sb0 as i64 + e1) as usize;
                    if !nz_a[sa] || !nz_b[sb] {
                        continue;
                    }
                    any = true;
                    let a = &self.data[sa * p * m..(sa + 1) * p * m];
                    let b = &other.data[sb * m * n..(sb + 1) * m * n];
                    let ph = pb[(e1 - lo1) as usize];
                    for i in 0..p {
                        for (l, t) in tmp.iter_mut().enumerate() {
                            *t = a[i * m + l] * ph;
                        }
                        let r = &mut row[i * n..(i + 1) * n];
                        for (l, t) in tmp.iter().enumerate() {
                            let bl = &b[l * n..(l + 1) * n];
                            for (rj, bj) in r.iter_mut().zip(bl) {
                                *rj = *rj + *t * *bj;
                            }
                        }
                    }
                }
                if any {
                    let pa = cis(half * T::lit((e0 * d[1]) as f64));
                    for (x, y) in acc.iter_mut().zip(&row) {
                        *x = *x + pa * *y;
                    }
                }
            }
        });
        Self { eps, rows: p, cols: n, radius, data }
    }

    /// `Σ_δ ‖a(δ)‖_F`, an upper bound for the operator norm.
    pub fn l1_norm(&self) -> T {
        self.data.chunks(self.bsize()).map(frob).fold(T::zero(), |s, x| s + x)
    }

    /// `max_{‖δ‖_∞ = r} ‖a(δ)‖_F` for `r = 0..=radius`.
    pub fn shell_max(&self) -> Vec<T> {
        let mut out = vec![T::zero(); self.radius + 1];
        for (s, c) in self.data.chunks(self.bsize()).enumerate() {
            let d = self.disp(s);
            let r = sup_norm(&d);
            out[r] = out[r].max(frob(c));
        }
        out
    }

    pub fn max_abs(&self) -> T {
        self.data.iter().fold(T::zero(), |m, z| m.max(z.norm()))
    }

    /// Largest `‖a(δ)‖_F` with `‖δ‖_∞ = radius` (truncation indicator).
    pub fn edge_norm(&self) -> T {
        *self.shell_max().last().unwrap()
    }

    /// `(A f)(γ) = Σ_{γ'} e^{iεφ(γ,γ')} a(γ - γ') f(γ')`, output on the box of `f`.
    pub fn apply(&self, f: &LatticeFunction<T>) -> LatticeFunction<T> {
        assert_eq!(f.fiber, self.cols);
        assert_eq!(f.lbox.dim, 2);
        let (p, n) = (self.rows, self.cols);
        let lbox = f.lbox;
        let r = self.radius as i64;
        let mut out = LatticeFunction::zeros(lbox, p);
        out.data.par_chunks_mut(p).enumerate().for_each(|(i, acc)| {
            let g = lbox.site(i);
            for d0 in -r..=r {
                for d1 in -r..=r {
                    let gp = [g[0] - d0, g[1] - d1];
                    let Some(v) = f.at(&gp) else { continue };
                    if v.iter().all(|z| z.is_zero()) {
                        continue;
                    }
                    let o = self.slot([d0, d1]).unwrap();
                    let ph = cis(self.eps * peierls_int::<T>([g[0], g[1]], gp));
                    for a in 0..p {
                        let mut s = Complex::<T>::zero();
                        for b in 0..n {
                            s = s + self.data[o + a * n + b] * v[b];
                        }
                        acc[a] = acc[a] + s * ph;
                    }
                }
            }
        });
        out
    }

    /// Dense matrix of the kernel restricted to a box.
    pub fn to_dense(&self, lbox: LatticeBox) -> CMat<T> {
        let (p, n) = (self.rows, self.cols);
        let mut m = CMat::zeros(lbox.len() * p, lbox.len() * n);
        for (i, g) in lbox.sites().enumerate() {
            for (j, gp) in lbox.sites().enumerate() {
                let Some(o) = self.slot([g[0] - gp[0], g[1] - gp[1]]) else { continue };
                let ph = cis(self.eps * peierls_int::<T>([g[0], g[1]], [gp[0], gp[1]]));
                for a in 0..p {
                    for b in 0..n {
                        m[(i * p + a, j * n + b)] = self.data[o + a * n + b] * ph;
                    }
                }
            }
        }
        m
    }

    /// Reads blocks back from the column of the box origin of a dense matrix.
    pub fn from_dense_column(m: &CMat<T>, lbox: LatticeBox, rows: usize, cols: usize, eps: T, radius: usize) -> Self {
        let mut k = Self::zeros(eps, rows, cols, radius);
        let j = lbox.index(&[0, 0]).unwrap();
        for (i, g) in lbox.sites().enumerate() {
            if sup_norm(&g) <= radius {
                k.set_block([g[0], g[1]], &m.block(i * rows, j * cols, rows, cols));
            }
        }
        k
    }
}

/// `(τ_{ε,η} f)(γ) = e^{iεφ(γ,η)} f(γ - η)`; values shifted out of the box are dropped.
pub fn magnetic_translation<T: Real>(eps: T, eta: [i64; 2], f: &LatticeFunction<T>) -> LatticeFunction<T> {
    let mut out = LatticeFunction::zeros(f.lbox, f.fiber);
    for (i, g) in f.lbox.sites().enumerate() {
        if let Some(v) = f.at(&[g[0] - eta[0], g[1] - eta[1]]) {
            let ph = cis(eps * peierls_int::<T>([g[0], g[1]], eta));
            for (a, z) in v.iter().enumerate() {
                out.data[i * f.fiber + a] = *z * ph;
            }
        }
    }
    out
}

/// Seeded random complex vectors supported in `‖γ‖_∞ ≤ inner` of `lbox`.
pub fn interior_test_vectors<T: Real>(lbox: LatticeBox, fiber: usize, inner: usize, count: usize, seed: u64) -> Vec<LatticeFunction<T>> {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let mut f = LatticeFunction::zeros(lbox, fiber);
            for (i, g) in lbox.sites().enumerate() {
                if sup_norm(&g) <= inner {
                    for x in 0..fiber {
                        f.data[i * fiber + x] = Complex::new(T::lit(rng.gen_range(-1.0..1.0)), T::lit(rng.gen_range(-1.0..1.0)));
                    }
                }
            }
            let n = f.norm_sqr().sqrt();
            for z in &mut f.data {
                *z = *z / n;
            }
            f
        })
        .collect()
}

fn diff_norm<T: Real>(a: &LatticeFunction<T>, b: &LatticeFunction<T>) -> T {
    a.data.iter().zip(&b.data).fold(T::zero(), |s, (x, y)| s + (*x - *y).norm_sqr()).sqrt()
}

/// `max_v ‖(A - B) v‖` over unit test vectors.
pub fn action_residual<T: Real>(a: &MagneticKernel<T>, b: &MagneticKernel<T>, tests: &[LatticeFunction<T>]) -> T {
    tests.iter().map(|v| diff_norm(&a.apply(v), &b.apply(v))).fold(T::zero(), T::max)
}

/// `max ‖τ_η A τ_η^* v - A v‖` over unit test vectors and `‖η‖_∞ ≤ shift`,
/// measured on the sites of the box that stay at least `margin` away from its edge.
pub fn covariance_residual<T: Real>(a: &MagneticKernel<T>, tests: &[LatticeFunction<T>], shift: i64, margin: usize) -> T {
    let mut worst = T::zero();
    for v in tests {
        let av = a.apply(v);
        for e0 in -shift..=shift {
            for e1 in -shift..=shift {
                let back = magnetic_translation(a.eps, [-e0, -e1], v);
                let lhs = magnetic_translation(a.eps, [e0, e1], &a.apply(&back));
                let mut s = T::zero();
                for (i, g) in v.lbox.sites().enumerate() {
                    if sup_norm(&g) + margin <= v.lbox.radius {
                        for x in 0..a.rows {
                            s = s + (lhs.data[i * a.rows + x] - av.data[i * a.rows + x]).norm_sqr();
                        }
                    }
                }
                worst = worst.max(s.sqrt());
            }
        }
    }
    worst
}

/// Controls for the Newton–Schulz iterations on kernels.
#[derive(Clone, Copy, Debug)]
pub struct IterOptions {
    /// Kernel radius kept after every product.
    pub radius: usize,
    /// Stop when the defect's largest block entry drops below this.
    pub tol: f64,
    pub max_iter: usize,
}

impl IterOptions {
    pub fn new(radius: usize) -> Self {
        Self { radius, tol: 1e-13, max_iter: 100 }
    }
}

/// Outcome of an iteration: steps taken and final defect.
#[derive(Clone, Copy, Debug, Default, serde::Serialize, serde::Deserialize)]
pub struct IterReport {
    pub iterations: usize,
    pub defect: f64,
}

/// Converging Newton–Schulz steps square the defect, so failing to halve it
/// over three steps means the truncation floor has been reached.
fn stalled(hist: &[f64]) -> bool {
    hist.len() >= 4 && hist[hist.len() - 1] >= 0.5 * hist[hist.len() - 4]
}

/// `sign(A)` of a Hermitian kernel by `X ← X(3 - X²)/2` from `X_0 = A/‖A‖_1`.
/// The defect is `max |X² - 1|`.
pub fn kernel_sign<T: Real>(a: &MagneticKernel<T>, opts: IterOptions) -> Result<(MagneticKernel<T>, IterReport)> {
    let s = a.l1_norm();
    if s == T::zero() {
        return Err(FrameError::InvalidInput("sign of the zero kernel".into()));
    }
    // Errors anticommuting with the limit are not damped by the iteration,
    // so every step runs at the full radius.
    let r = opts.radius;
    let mut x = a.scale_real(T::one() / s).with_radius(r);
    let mut hist = Vec::new();
    for it in 0..opts.max_iter {
        let x2 = x.product(&x, r);
        let defect = x2.add_identity(-T::one()).max_abs().to_f64_lossy();
        hist.push(defect);
        if defect < opts.tol || (defect < 1e-6 && stalled(&hist)) {
            return Ok((x, IterReport { iterations: it, defect }));
        }
        x = x.product(&x2.scale_real(-T::one()).add_identity(T::lit(3.0)), r).scale_real(T::lit(0.5));
    }
    Err(FrameError::NotConverged(format!("sign iteration: defect {:.3e} after {} steps", hist.last().unwrap(), opts.max_iter)))
}

/// `A^{-1/2}` of a Hermitian kernel with `‖1 - A‖ < 1`, by the coupled
/// iteration `T = (3 - ZY)/2`, `Y ← YT`, `Z ← TZ`. The defect is `max |ZY - 1|`.
pub fn kernel_inv_sqrt<T: Real>(a: &MagneticKernel<T>, opts: IterOptions) -> Result<(MagneticKernel<T>, IterReport)> {
    let dev = a.add_identity(-T::one()).l1_norm().to_f64_lossy();
    if dev >= 1.0 {
        return Err(FrameError::SeriesDivergent { norm: dev });
    }
    let mut y = a.with_radius(opts.radius);
    let mut z = MagneticKernel::identity(a.eps, a.rows, opts.radius);
    let mut hist = Vec::new();
    for it in 0..opts.max_iter {
        let zy = z.product(&y, opts.radius);
        let defect = zy.add_identity(-T::one()).max_abs().to_f64_lossy();
        hist.push(defect);
        if defect < opts.tol || (defect < 1e-6 && stalled(&hist)) {
            return Ok((z, IterReport { iterations: it, defect }));
        }
        let t = zy.scale_real(-T::lit(0.5)).add_identity(T::lit(1.5));
        y = y.product(&t, opts.radius);
        z = t.product(&z, opts.radius);
    }
    Err(FrameError::NotConverged(format!("inverse square root: defect {:.3e} after {} steps", hist.last().unwrap(), opts.max_iter)))
}

/// `A^{-1}` by `X ← X(2 - AX)` from `X_0 = A^*/(‖A‖_1)^2`. The defect is `max |AX - 1|`.
pub fn kernel_inverse<T: Real>(a: &MagneticKernel<T>, opts: IterOptions) -> Result<(MagneticKernel<T>, IterReport)> {
    let s = a.l1_norm();
    let mut x = a.adjoint().scale_real(T::one() / (s * s)).with_radius(opts.radius);
    let mut hist = Vec::new();
    for it in 0..opts.max_iter {
        let ax = a.product(&x, opts.radius);
        let defect = ax.add_identity(-T::one()).max_abs().to_f64_lossy();
        hist.push(defect);
        if defect < opts.tol || (defect < 1e-6 && stalled(&hist)) {
            return Ok((x, IterReport { iterations: it, defect }));
        }
        x = x.product(&ax.scale_real(-T::one()).add_identity(T::lit(2.0)), opts.radius);
    }
    Err(FrameError::NotConverged(format!("kernel inverse: defect {:.3e} after {} steps", hist.last().unwrap(), opts.max_iter)))
}
