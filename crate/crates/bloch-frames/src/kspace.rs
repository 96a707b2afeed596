//! Momentum grids, Bloch fields and the Bloch-Floquet transform.
//!
//! A [`KGrid`] samples the torus `[0,1)^d` at `k_j = i_j / N_j`. Flat indices
//! are row-major with axis 0 outermost, which is also the payload order of
//! the binary container.

use num_complex::Complex;
use num_traits::Zero;
use rustfft::{FftDirection, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{FrameError, Result};
use crate::families::ProjectionFamily;
use crate::linalg::CMat;
use crate::scalar::{cis, re, two_pi, Real};

/// Uniform grid on the torus. Dimension 0 is a single point, used for the
/// faces of one-dimensional families.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct KGrid {
    sizes: Vec<usize>,
}

impl KGrid {
    /// Grid with `sizes.len()` in `1..=3` axes, each with at least 4 points.
    pub fn new(sizes: &[usize]) -> Result<Self> {
        if sizes.is_empty() || sizes.len() > 3 {
            return Err(FrameError::InvalidInput(format!("grid dimension {} not in 1..=3", sizes.len())));
        }
        if let Some(&n) = sizes.iter().find(|&&n| n < 4) {
            return Err(FrameError::InvalidInput(format!("grid axis has {n} points; at least 4 required")));
        }
        Ok(Self { sizes: sizes.to_vec() })
    }

    /// The zero-dimensional grid.
    pub fn point() -> Self {
        Self { sizes: Vec::new() }
    }

    pub fn dim(&self) -> usize {
        self.sizes.len()
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn size(&self, axis: usize) -> usize {
        self.sizes[axis]
    }

    pub fn len(&self) -> usize {
        self.sizes.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    fn stride(&self, axis: usize) -> usize {
        self.sizes[axis + 1..].iter().product()
    }

    pub fn flat(&self, idx: &[usize]) -> usize {
        debug_assert_eq!(idx.len(), self.dim());
        idx.iter().zip(&self.sizes).fold(0, |acc, (&i, &n)| acc * n + i % n)
    }

    pub fn multi(&self, mut flat: usize) -> Vec<usize> {
        let mut out = vec![0; self.dim()];
        for a in (0..self.dim()).rev() {
            out[a] = flat % self.sizes[a];
            flat /= self.sizes[a];
        }
        out
    }

    /// Coordinates `k_j = i_j / N_j`.
    pub fn k<T: Real>(&self, flat: usize) -> Vec<T> {
        self.multi(flat)
            .iter()
            .zip(&self.sizes)
            .map(|(&i, &n)| T::from_usize(i).unwrap() / T::from_usize(n).unwrap())
            .collect()
    }

    /// Neighbour `step` points along `axis`, with the number of times the
    /// move wrapped through the boundary (positive when crossing `k = 1`).
    pub fn shift(&self, flat: usize, axis: usize, step: isize) -> (usize, i64) {
        let n = self.sizes[axis] as isize;
        let s = self.stride(axis);
        let i = ((flat / s) % self.sizes[axis]) as isize;
        let j = i + step;
        let wraps = j.div_euclid(n) as i64;
        let jm = j.rem_euclid(n);
        (flat - (i as usize) * s + (jm as usize) * s, wraps)
    }

    /// Index of `-k`.
    pub fn negate(&self, flat: usize) -> usize {
        let m: Vec<usize> = self.multi(flat).iter().zip(&self.sizes).map(|(&i, &n)| (n - i) % n).collect();
        self.flat(&m)
    }

    /// Grid with `axis` removed.
    pub fn remove_axis(&self, axis: usize) -> Self {
        let mut s = self.sizes.clone();
        s.remove(axis);
        Self { sizes: s }
    }

    /// Flat index of the point whose `axis` coordinate is `i` and whose
    /// other coordinates are `face` (a flat index of `remove_axis(axis)`).
    pub fn insert_axis(&self, face: usize, axis: usize, i: usize) -> usize {
        let f = self.remove_axis(axis);
        let mut m = f.multi(face);
        m.insert(axis, i);
        self.flat(&m)
    }

    /// Splits a flat index into (coordinate along `axis`, flat index on the face).
    pub fn split_axis(&self, flat: usize, axis: usize) -> (usize, usize) {
        let mut m = self.multi(flat);
        let i = m.remove(axis);
        (i, self.remove_axis(axis).flat(&m))
    }
}

/// Family of `count` vectors in `C^fiber` sampled on a grid (a Bloch frame).
#[derive(Clone, Debug, PartialEq)]
pub struct BlochFrame<T> {
    pub grid: KGrid,
    pub fiber: usize,
    pub count: usize,
    /// One `fiber x count` matrix per grid point, columns are the vectors.
    pub vectors: Vec<CMat<T>>,
}

impl<T: Real> BlochFrame<T> {
    pub fn new(grid: KGrid, vectors: Vec<CMat<T>>) -> Result<Self> {
        if vectors.len() != grid.len() {
            return Err(FrameError::InvalidInput(format!(
                "{} samples for a grid of {} points",
                vectors.len(),
                grid.len()
            )));
        }
        let (fiber, count) = vectors.first().map(|m| (m.nrows(), m.ncols())).unwrap_or((0, 0));
        if vectors.iter().any(|m| m.nrows() != fiber || m.ncols() != count) {
            return Err(FrameError::InvalidInput("inconsistent sample shapes".into()));
        }
        Ok(Self { grid, fiber, count, vectors })
    }

    /// Largest `|ξ^*ξ - 1|` over the grid.
    pub fn orthonormality_defect(&self) -> T {
        self.vectors.iter().map(|v| v.unitarity_defect()).fold(T::zero(), T::max)
    }

    /// Largest `‖Σ_a |ξ_a><ξ_a| - P‖_max` over the grid.
    pub fn frame_operator_defect(&self, p: &ProjectionFamily<T>) -> T {
        self.vectors
            .iter()
            .zip(&p.mats)
            .map(|(v, pk)| (&v.mul_adjoint(v) - pk).max_abs())
            .fold(T::zero(), T::max)
    }

    /// Columns `c0..c0+nc` of every sample.
    pub fn select(&self, c0: usize, nc: usize) -> Self {
        Self {
            grid: self.grid.clone(),
            fiber: self.fiber,
            count: nc,
            vectors: self.vectors.iter().map(|v| v.columns(c0, nc)).collect(),
        }
    }

    /// Flattened `[k][x][a]` payload.
    pub fn to_flat(&self) -> Vec<Complex<T>> {
        self.vectors.iter().flat_map(|v| v.as_slice().iter().copied()).collect()
    }

    pub fn from_flat(grid: KGrid, fiber: usize, count: usize, data: Vec<Complex<T>>) -> Result<Self> {
        if data.len() != grid.len() * fiber * count {
            return Err(FrameError::Format("payload size does not match header".into()));
        }
        let vectors = data.chunks(fiber * count).map(|c| CMat::from_vec(fiber, count, c.to_vec())).collect();
        Self::new(grid, vectors)
    }
}

/// Finite box `‖γ‖_∞ ≤ radius` in `Z^dim`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LatticeBox {
    pub dim: usize,
    pub radius: usize,
}

impl LatticeBox {
    pub fn new(dim: usize, radius: usize) -> Result<Self> {
        if !(1..=3).contains(&dim) {
            return Err(FrameError::InvalidInput(format!("lattice dimension {dim} not in 1..=3")));
        }
        Ok(Self { dim, radius })
    }

    pub fn side(&self) -> usize {
        2 * self.radius + 1
    }

    pub fn len(&self) -> usize {
        self.side().pow(self.dim as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn contains(&self, g: &[i64]) -> bool {
        g.iter().all(|&x| x.unsigned_abs() as usize <= self.radius)
    }

    pub fn index(&self, g: &[i64]) -> Option<usize> {
        if !self.contains(g) {
            return None;
        }
        let r = self.radius as i64;
        let s = self.side();
        Some(g.iter().fold(0usize, |acc, &x| acc * s + (x + r) as usize))
    }

    pub fn site(&self, mut idx: usize) -> Vec<i64> {
        let s = self.side();
        let r = self.radius as i64;
        let mut out = vec![0i64; self.dim];
        for a in (0..self.dim).rev() {
            out[a] = (idx % s) as i64 - r;
            idx /= s;
        }
        out
    }

    pub fn sites(&self) -> impl Iterator<Item = Vec<i64>> + '_ {
        (0..self.len()).map(move |i| self.site(i))
    }
}

/// `‖γ‖_∞`.
pub fn sup_norm(g: &[i64]) -> usize {
    g.iter().map(|x| x.unsigned_abs() as usize).max().unwrap_or(0)
}

/// Function on a box with values in `C^fiber`.
#[derive(Clone, Debug, PartialEq)]
pub struct LatticeFunction<T> {
    pub lbox: LatticeBox,
    pub fiber: usize,
    pub data: Vec<Complex<T>>,
}

impl<T: Real> LatticeFunction<T> {
    pub fn zeros(lbox: LatticeBox, fiber: usize) -> Self {
        Self { lbox, fiber, data: vec![Complex::zero(); lbox.len() * fiber] }
    }

    pub fn at(&self, g: &[i64]) -> Option<&[Complex<T>]> {
        self.lbox.index(g).map(|i| &self.data[i * self.fiber..(i + 1) * self.fiber])
    }

    pub fn at_mut(&mut self, g: &[i64]) -> Option<&mut [Complex<T>]> {
        let f = self.fiber;
        self.lbox.index(g).map(move |i| &mut self.data[i * f..(i + 1) * f])
    }

    pub fn norm_sqr(&self) -> T {
        self.data.iter().fold(T::zero(), |s, z| s + z.norm_sqr())
    }

    /// `<self, other>`, conjugate-linear in `self`.
    pub fn dot(&self, other: &Self) -> Complex<T> {
        assert_eq!(self.data.len(), other.data.len());
        self.data.iter().zip(&other.data).fold(Complex::zero(), |s, (a, b)| s + a.conj() * b)
    }

    /// Copy into another box, dropping sites that do not fit.
    pub fn rebox(&self, lbox: LatticeBox) -> Self {
        assert_eq!(lbox.dim, self.lbox.dim);
        let mut out = Self::zeros(lbox, self.fiber);
        for (i, g) in self.lbox.sites().enumerate() {
            if let Some(dst) = out.at_mut(&g) {
                dst.copy_from_slice(&self.data[i * self.fiber..(i + 1) * self.fiber]);
            }
        }
        out
    }

    /// `max_{‖γ‖_∞ = r} |w(γ)|` for `r = 0..=radius`.
    pub fn shell_max(&self) -> Vec<T> {
        let mut out = vec![T::zero(); self.lbox.radius + 1];
        for (i, g) in self.lbox.sites().enumerate() {
            let v = self.data[i * self.fiber..(i + 1) * self.fiber]
                .iter()
                .fold(T::zero(), |s, z| s + z.norm_sqr())
                .sqrt();
            let r = sup_norm(&g);
            out[r] = out[r].max(v);
        }
        out
    }
}

/// In-place multidimensional DFT over the grid axes of a `[k][comp]` buffer.
///
/// `Inverse` computes `Σ_k e^{+i2π k·γ} f(k)` and `Forward` the conjugate
/// kernel, both unnormalised. Power-of-two axes use an FFT; other sizes use
/// direct summation.
pub fn grid_dft<T: Real>(grid: &KGrid, comps: usize, data: &mut [Complex<T>], dir: FftDirection) {
    assert_eq!(data.len(), grid.len() * comps);
    let mut planner = FftPlanner::<T>::new();
    for axis in 0..grid.dim() {
        let n = grid.size(axis);
        let stride: usize = grid.sizes()[axis + 1..].iter().product::<usize>() * comps;
        let outer: usize = grid.sizes()[..axis].iter().product();
        let fft = if n.is_power_of_two() { Some(planner.plan_fft(n, dir)) } else { None };
        let twiddle: Vec<Complex<T>> = {
            let sgn = if dir == FftDirection::Inverse { T::one() } else { -T::one() };
            (0..n).map(|j| cis(sgn * two_pi::<T>() * T::from_usize(j).unwrap() / T::from_usize(n).unwrap())).collect()
        };
        let mut line = vec![Complex::zero(); n];
        let mut tmp = vec![Complex::zero(); n];
        for o in 0..outer {
            let base = o * n * stride;
            for inner in 0..stride {
                for (j, l) in line.iter_mut().enumerate() {
                    *l = data[base + j * stride + inner];
                }
                match &fft {
                    Some(f) => f.process(&mut line),
                    None => {
                        for (g, t) in tmp.iter_mut().enumerate() {
                            *t = (0..n).fold(Complex::zero(), |s, j| s + twiddle[(g * j) % n] * line[j]);
                        }
                        line.copy_from_slice(&tmp);
                    }
                }
                for (j, l) in line.iter().enumerate() {
                    data[base + j * stride + inner] = *l;
                }
            }
        }
    }
}

/// Signed representative of a torus index: `i` mapped into `(-N/2, N/2]`.
pub fn centred(i: usize, n: usize) -> i64 {
    let i = i as i64;
    let n = n as i64;
    if i > n / 2 {
        i - n
    } else {
        i
    }
}

/// Fourier coefficients `c(γ) = (1/|grid|) Σ_k e^{i2πk·γ} f(k)` of a
/// `[k][comp]` field, indexed by torus position.
pub fn torus_coefficients<T: Real>(grid: &KGrid, comps: usize, field: &[Complex<T>]) -> Vec<Complex<T>> {
    let mut d = field.to_vec();
    grid_dft(grid, comps, &mut d, FftDirection::Inverse);
    let norm = T::one() / T::from_usize(grid.len()).unwrap();
    for z in &mut d {
        *z = *z * norm;
    }
    d
}

/// Inverse Bloch-Floquet transform of every column of `frame` onto `lbox`:
/// `w_a(γ, x) = (1/|grid|) Σ_k e^{i2πk·γ} ξ_a(k, x)`.
///
/// The box must satisfy `radius ≤ min N_j / 2`; beyond that the periodic
/// images of the torus transform overlap.
pub fn inverse_bloch_floquet<T: Real>(frame: &BlochFrame<T>, lbox: LatticeBox) -> Result<Vec<LatticeFunction<T>>> {
    let grid = &frame.grid;
    if lbox.dim != grid.dim() {
        return Err(FrameError::InvalidInput("box and grid dimensions differ".into()));
    }
    let bound = grid.sizes().iter().copied().min().unwrap_or(0) / 2;
    if lbox.radius > bound {
        return Err(FrameError::Aliasing { radius: lbox.radius, bound });
    }
    let comps = frame.fiber * frame.count;
    let coeff = torus_coefficients(grid, comps, &frame.to_flat());
    let mut out: Vec<LatticeFunction<T>> = (0..frame.count).map(|_| LatticeFunction::zeros(lbox, frame.fiber)).collect();
    for (si, g) in lbox.sites().enumerate() {
        let tidx: Vec<usize> = g
            .iter()
            .zip(grid.sizes())
            .map(|(&x, &n)| x.rem_euclid(n as i64) as usize)
            .collect();
        let t = grid.flat(&tidx);
        for x in 0..frame.fiber {
            for (a, w) in out.iter_mut().enumerate() {
                w.data[si * frame.fiber + x] = coeff[t * comps + x * frame.count + a];
            }
        }
    }
    Ok(out)
}

/// Forward transform `ξ(k, x) = Σ_γ e^{-i2πk·γ} w(γ, x)` by direct summation.
pub fn bloch_floquet<T: Real>(funcs: &[LatticeFunction<T>], grid: &KGrid) -> Result<BlochFrame<T>> {
    let first = funcs.first().ok_or_else(|| FrameError::InvalidInput("no functions".into()))?;
    let (lbox, fiber) = (first.lbox, first.fiber);
    if lbox.dim != grid.dim() {
        return Err(FrameError::InvalidInput("box and grid dimensions differ".into()));
    }
    let sites: Vec<Vec<i64>> = lbox.sites().collect();
    let vectors = (0..grid.len())
        .map(|f| {
            let k: Vec<T> = grid.k(f);
            let mut m = CMat::zeros(fiber, funcs.len());
            for (si, g) in sites.iter().enumerate() {
                let ph = -two_pi::<T>() * k.iter().zip(g).fold(T::zero(), |s, (&kk, &gg)| s + kk * T::from_i64(gg).unwrap());
                let e = cis(ph);
                for (a, w) in funcs.iter().enumerate() {
                    for x in 0..fiber {
                        m[(x, a)] = m[(x, a)] + e * w.data[si * fiber + x];
                    }
                }
            }
            m
        })
        .collect();
    BlochFrame::new(grid.clone(), vectors)
}

/// `|Σ_{γ∈torus} Σ_x |w_a|² - mean_k ‖ξ_a(k)‖²|`, maximised over columns.
pub fn plancherel_defect<T: Real>(frame: &BlochFrame<T>) -> T {
    let comps = frame.fiber * frame.count;
    let coeff = torus_coefficients(&frame.grid, comps, &frame.to_flat());
    let nk = T::from_usize(frame.grid.len()).unwrap();
    (0..frame.count)
        .map(|a| {
            let mut lat = T::zero();
            let mut mom = T::zero();
            for t in 0..frame.grid.len() {
                for x in 0..frame.fiber {
                    lat = lat + coeff[t * comps + x * frame.count + a].norm_sqr();
                    mom = mom + frame.vectors[t][(x, a)].norm_sqr();
                }
            }
            (lat - mom / nk).abs()
        })
        .fold(T::zero(), T::max)
}

/// Fejér multiplier `Π_j (1 - |n_j|/F)_+` of Fourier mode `n`.
pub fn fejer_multiplier<T: Real>(n: &[i64], order: usize) -> T {
    let f = T::from_usize(order).unwrap();
    n.iter().fold(T::one(), |acc, &x| {
        let v = T::one() - T::from_i64(x.abs()).unwrap() / f;
        acc * v.max(T::zero())
    })
}

/// Circular convolution of every vector field with the normalised Fejér
/// kernel of order `order` (a nonnegative kernel summing to one).
pub fn fejer_smooth<T: Real>(frame: &BlochFrame<T>, order: usize) -> Result<BlochFrame<T>> {
    let grid = &frame.grid;
    let bound = grid.sizes().iter().copied().min().unwrap_or(0) / 2;
    if order == 0 || order > bound {
        return Err(FrameError::InvalidInput(format!("Fejér order {order} must lie in 1..={bound}")));
    }
    let comps = frame.fiber * frame.count;
    let mut c = torus_coefficients(grid, comps, &frame.to_flat());
    for t in 0..grid.len() {
        let n: Vec<i64> = grid.multi(t).iter().zip(grid.sizes()).map(|(&i, &nn)| centred(i, nn)).collect();
        let m = fejer_multiplier::<T>(&n, order);
        for z in &mut c[t * comps..(t + 1) * comps] {
            *z = *z * m;
        }
    }
    grid_dft(grid, comps, &mut c, FftDirection::Forward);
    BlochFrame::from_flat(grid.clone(), frame.fiber, frame.count, c)
}

/// Values of the discrete Fejér kernel at every grid point.
pub fn fejer_kernel<T: Real>(grid: &KGrid, order: usize) -> Vec<T> {
    let mut c: Vec<Complex<T>> = (0..grid.len())
        .map(|t| {
            let n: Vec<i64> = grid.multi(t).iter().zip(grid.sizes()).map(|(&i, &nn)| centred(i, nn)).collect();
            re(fejer_multiplier::<T>(&n, order))
        })
        .collect();
    grid_dft(grid, 1, &mut c, FftDirection::Forward);
    let norm = T::one() / T::from_usize(grid.len()).unwrap();
    c.iter().map(|z| z.re * norm).collect()
}

/// Projects each vector onto `Ran P(k)` and applies Löwdin orthonormalisation
/// `ξ̂ = φ S^{-1/2}`, `S = φ^*φ`. Requires `‖S - 1‖ < 1` everywhere.
pub fn reorthonormalize<T: Real>(frame: &BlochFrame<T>, family: &ProjectionFamily<T>) -> Result<BlochFrame<T>> {
    if frame.count != family.rank {
        return Err(FrameError::InvalidInput(format!("{} vectors cannot form a basis of a rank-{} family", frame.count, family.rank)));
    }
    retighten(frame, family)
}

/// Closest Parseval frame of `Ran P(k)` to the projected vectors `φ = Pξ`:
/// the polar part `φ Σ_j λ_j^{-1/2} v_j v_j^*` over the top `rank`
/// eigenpairs of `S = φ^*φ`. With as many vectors as the rank this is
/// Löwdin orthonormalisation. Requires those eigenvalues in `(0, 2)`.
pub fn retighten<T: Real>(frame: &BlochFrame<T>, family: &ProjectionFamily<T>) -> Result<BlochFrame<T>> {
    if frame.grid != family.grid {
        return Err(FrameError::InvalidInput("frame and family grids differ".into()));
    }
    let r = family.rank;
    if frame.count < r {
        return Err(FrameError::InvalidInput(format!("{} vectors cannot span a rank-{r} family", frame.count)));
    }
    let mut out = Vec::with_capacity(frame.grid.len());
    for (f, (v, p)) in frame.vectors.iter().zip(&family.mats).enumerate() {
        let phi = p.matmul(v);
        let e = phi.adjoint_mul(&phi).eigh()?;
        let top = &e.values[e.values.len() - r..];
        if top.iter().any(|&x| (x - T::one()).abs() >= T::one()) {
            return Err(FrameError::NotPositive { k: frame.grid.multi(f), min_eig: top[0].to_f64_lossy() });
        }
        let vt = e.top(r);
        let scaled = CMat::from_fn(vt.nrows(), r, |i, j| vt[(i, j)] / top[j].sqrt());
        out.push(phi.matmul(&scaled.mul_adjoint(&vt)));
    }
    BlochFrame::new(frame.grid.clone(), out)
}

/// Fejér order used by default when frames are smoothed.
pub const DEFAULT_FEJER_ORDER: usize = 6;

/// Fejér smoothing followed by [`retighten`]: trades a little of the
/// frame's sharpness near kinks for faster decay of its Wannier functions.
pub fn smooth_frame<T: Real>(frame: &BlochFrame<T>, family: &ProjectionFamily<T>, order: usize) -> Result<BlochFrame<T>> {
    if frame.count == 0 {
        return Ok(frame.clone());
    }
    retighten(&fejer_smooth(frame, order)?, family)
}

/// `∂_axis f` of a `[k][comp]` field by spectral differentiation.
pub fn spectral_derivative<T: Real>(grid: &KGrid, comps: usize, field: &[Complex<T>], axis: usize) -> Vec<Complex<T>> {
    let mut c = torus_coefficients(grid, comps, field);
    let n = grid.size(axis);
    for t in 0..grid.len() {
        let i = grid.multi(t)[axis];
        let mut g = centred(i, n);
        if n % 2 == 0 && g == (n / 2) as i64 {
            g = 0;
        }
        // c(γ) multiplies e^{-i2πkγ} after the forward transform.
        let fac = Complex::new(T::zero(), -two_pi::<T>() * T::from_i64(g).unwrap());
        for z in &mut c[t * comps..(t + 1) * comps] {
            *z = *z * fac;
        }
    }
    grid_dft(grid, comps, &mut c, FftDirection::Forward);
    c
}
