//! Sampled families of projections, unitaries and Hermitian matrices, with
//! the pointwise spectral tools the constructions are built from.

use num_complex::Complex;
use serde::{Deserialize, Serialize};

use crate::error::{FrameError, Result};
use crate::kspace::{BlochFrame, KGrid};
use crate::linalg::{herm_tol, CMat, Eigh};
use crate::scalar::{re, Real};

/// Projection-valued family `k ↦ P(k)` on a grid.
#[derive(Clone, Debug)]
pub struct ProjectionFamily<T> {
    pub grid: KGrid,
    pub dim: usize,
    pub rank: usize,
    pub mats: Vec<CMat<T>>,
}

/// Defects measured by [`validate_projection_family`].
#[derive(Clone, Debug, Default, Serialize, Deserialize, PartialEq)]
pub struct ValidationReport {
    pub rank: usize,
    pub hermiticity_defect: f64,
    pub idempotency_defect: f64,
    pub max_neighbor_jump: f64,
    pub warnings: Vec<String>,
}

/// Neighbour jumps above this are suspicious for parallel transport.
pub const NEIGHBOR_JUMP_WARN: f64 = 0.5;

/// Checks Hermiticity and idempotency to `1e-10`, constant integral rank and
/// the size of nearest-neighbour jumps.
pub fn validate_projection_family<T: Real>(grid: &KGrid, mats: &[CMat<T>]) -> Result<ValidationReport> {
    if mats.len() != grid.len() {
        return Err(FrameError::InvalidInput(format!("{} samples for {} grid points", mats.len(), grid.len())));
    }
    let n = mats.first().map(|m| m.nrows()).unwrap_or(0);
    let tol = herm_tol::<T>();
    let mut rep = ValidationReport::default();
    let mut rank = None;
    for (f, p) in mats.iter().enumerate() {
        if p.nrows() != n || p.ncols() != n {
            return Err(FrameError::InvalidInput("inconsistent matrix shapes".into()));
        }
        let h = p.hermitian_defect();
        if h > tol {
            return Err(FrameError::NotHermitian { k: grid.multi(f), defect: h.to_f64_lossy() });
        }
        let idem = (&p.matmul(p) - p).max_abs();
        if idem > tol {
            return Err(FrameError::NotProjection { k: grid.multi(f), defect: idem.to_f64_lossy() });
        }
        rep.hermiticity_defect = rep.hermiticity_defect.max(h.to_f64_lossy());
        rep.idempotency_defect = rep.idempotency_defect.max(idem.to_f64_lossy());
        let tr = p.trace().re.to_f64_lossy();
        let r = tr.round();
        if (tr - r).abs() > 1e-6 || r < 0.0 {
            return Err(FrameError::NotProjection { k: grid.multi(f), defect: (tr - r).abs() });
        }
        let r = r as usize;
        match rank {
            None => rank = Some(r),
            Some(r0) if r0 != r => return Err(FrameError::RankNotConstant { k: grid.multi(f), expected: r0, found: r }),
            _ => {}
        }
        for axis in 0..grid.dim() {
            let (nb, _) = grid.shift(f, axis, 1);
            let jump = (&mats[nb] - p).norm2_hermitian()?.to_f64_lossy();
            rep.max_neighbor_jump = rep.max_neighbor_jump.max(jump);
        }
    }
    rep.rank = rank.unwrap_or(0);
    if rep.max_neighbor_jump > NEIGHBOR_JUMP_WARN {
        rep.warnings.push(format!(
            "largest neighbour jump {:.3} exceeds {NEIGHBOR_JUMP_WARN}; refine the grid",
            rep.max_neighbor_jump
        ));
    }
    Ok(rep)
}

impl<T: Real> ProjectionFamily<T> {
    pub fn new(grid: KGrid, mats: Vec<CMat<T>>) -> Result<Self> {
        let rep = validate_projection_family(&grid, &mats)?;
        let dim = mats[0].nrows();
        Ok(Self { grid, dim, rank: rep.rank, mats })
    }

    /// Spectral projection onto bands `lo..hi` (ascending order) of a sampled
    /// Hamiltonian, requiring a gap of at least `min_gap` to the bands outside.
    pub fn from_hamiltonians(grid: KGrid, hams: &[CMat<T>], lo: usize, hi: usize, min_gap: T) -> Result<Self> {
        if hams.len() != grid.len() || lo >= hi {
            return Err(FrameError::InvalidInput("bad Hamiltonian samples or band range".into()));
        }
        let n = hams[0].nrows();
        if hi > n {
            return Err(FrameError::InvalidInput(format!("band range {lo}..{hi} exceeds fiber {n}")));
        }
        let mut mats = Vec::with_capacity(hams.len());
        for (f, h) in hams.iter().enumerate() {
            let e = h.eigh()?;
            let below = if lo > 0 { e.values[lo] - e.values[lo - 1] } else { T::infinity() };
            let above = if hi < n { e.values[hi] - e.values[hi - 1] } else { T::infinity() };
            let gap = below.min(above);
            if gap < min_gap {
                return Err(FrameError::GapTooSmall {
                    k: grid.multi(f),
                    gap: gap.to_f64_lossy(),
                    required: min_gap.to_f64_lossy(),
                });
            }
            let v = e.vectors.columns(lo, hi - lo);
            mats.push(v.mul_adjoint(&v));
        }
        Self::new(grid, mats)
    }

    /// Samples a Hamiltonian function on the grid, then projects.
    pub fn from_hamiltonian_fn(grid: KGrid, h: impl Fn(&[T]) -> CMat<T>, lo: usize, hi: usize, min_gap: T) -> Result<Self> {
        let hams: Vec<CMat<T>> = (0..grid.len()).map(|f| h(&grid.k::<T>(f))).collect();
        Self::from_hamiltonians(grid, &hams, lo, hi, min_gap)
    }

    /// Restriction to the face `k_0 = 0`.
    pub fn face(&self) -> Self {
        let fg = self.grid.remove_axis(0);
        let mats = (0..fg.len()).map(|f| self.mats[self.grid.insert_axis(f, 0, 0)].clone()).collect();
        Self { grid: fg, dim: self.dim, rank: self.rank, mats }
    }

    /// `Q(k) = C P(-k) C^{-1}` with `C` entrywise complex conjugation.
    pub fn conjugate_reflection(&self) -> Self {
        let mats = (0..self.grid.len()).map(|f| self.mats[self.grid.negate(f)].conj()).collect();
        Self { grid: self.grid.clone(), dim: self.dim, rank: self.rank, mats }
    }

    /// `P ⊕ Q`.
    pub fn direct_sum(&self, other: &Self) -> Result<Self> {
        if self.grid != other.grid {
            return Err(FrameError::InvalidInput("direct sum of families on different grids".into()));
        }
        let mats = self.mats.iter().zip(&other.mats).map(|(a, b)| CMat::direct_sum(a, b)).collect();
        Ok(Self { grid: self.grid.clone(), dim: self.dim + other.dim, rank: self.rank + other.rank, mats })
    }

    /// Orthonormal basis of `Ran P(k)` (eigenvectors of eigenvalue one).
    pub fn range_basis(&self, f: usize) -> Result<CMat<T>> {
        Ok(self.mats[f].eigh()?.top(self.rank))
    }

    /// `P - Σ_a |ξ_a><ξ_a|` for a frame of orthonormal vectors inside `Ran P`.
    pub fn remove(&self, frame: &BlochFrame<T>) -> Result<Self> {
        let mats: Vec<CMat<T>> = self.mats.iter().zip(&frame.vectors).map(|(p, v)| p - &v.mul_adjoint(v)).collect();
        let rank = self.rank.checked_sub(frame.count).ok_or_else(|| FrameError::InvalidInput("frame larger than rank".into()))?;
        let out = Self::new(self.grid.clone(), mats)?;
        if out.rank != rank {
            return Err(FrameError::RankNotConstant { k: vec![], expected: rank, found: out.rank });
        }
        Ok(out)
    }
}

/// Sampled matrix family with an optional twist along axis 0:
/// `μ(k_0 + 1, k') = γ(k') μ(k_0, k') γ(k')^{-1}`.
///
/// Without a twist the family is periodic. The twist is sampled on the face
/// grid (`grid.remove_axis(0)`).
#[derive(Clone, Debug)]
pub struct MatrixFamily<T> {
    pub grid: KGrid,
    pub mats: Vec<CMat<T>>,
    pub twist: Option<Vec<CMat<T>>>,
}

/// Unitary-valued family.
pub type UnitaryFamily<T> = MatrixFamily<T>;
/// Hermitian-valued family.
pub type HermitianFamily<T> = MatrixFamily<T>;

impl<T: Real> MatrixFamily<T> {
    pub fn periodic(grid: KGrid, mats: Vec<CMat<T>>) -> Self {
        assert_eq!(grid.len(), mats.len());
        Self { grid, mats, twist: None }
    }

    pub fn twisted(grid: KGrid, mats: Vec<CMat<T>>, twist: Vec<CMat<T>>) -> Self {
        assert_eq!(grid.len(), mats.len());
        assert!(grid.dim() >= 1 && twist.len() == grid.remove_axis(0).len());
        Self { grid, mats, twist: Some(twist) }
    }

    pub fn size(&self) -> usize {
        self.mats.first().map(|m| m.nrows()).unwrap_or(0)
    }

    /// Twist matrix for the face point of `flat`.
    pub fn twist_at(&self, flat: usize) -> Option<&CMat<T>> {
        self.twist.as_ref().map(|t| &t[self.grid.split_axis(flat, 0).1])
    }

    /// Applies the twist rule `wraps` times to `m` (negative counts use `γ^{-1}`).
    pub fn conjugate_by_twist(&self, flat: usize, m: &CMat<T>, wraps: i64) -> CMat<T> {
        match self.twist_at(flat) {
            None => m.clone(),
            Some(g) => {
                let mut out = m.clone();
                for _ in 0..wraps.unsigned_abs() {
                    out = if wraps > 0 { g.matmul(&out).mul_adjoint(g) } else { g.adjoint_mul(&out).matmul(g) };
                }
                out
            }
        }
    }

    /// Value at the neighbour `step` points along `axis`, honouring the twist.
    pub fn neighbor(&self, flat: usize, axis: usize, step: isize) -> (usize, CMat<T>) {
        let (nb, wraps) = self.grid.shift(flat, axis, step);
        let m = &self.mats[nb];
        if axis == 0 && wraps != 0 {
            (nb, self.conjugate_by_twist(nb, m, wraps))
        } else {
            (nb, m.clone())
        }
    }

    pub fn unitarity_defect(&self) -> T {
        self.mats.iter().map(|u| u.unitarity_defect()).fold(T::zero(), T::max)
    }

    /// Largest entrywise distance between two families on the same grid.
    pub fn distance(&self, other: &Self) -> T {
        self.mats.iter().zip(&other.mats).map(|(a, b)| (a - b).max_abs()).fold(T::zero(), T::max)
    }

    /// Pointwise map preserving the twist.
    pub fn map(&self, f: impl Fn(&CMat<T>) -> CMat<T>) -> Self {
        Self { grid: self.grid.clone(), mats: self.mats.iter().map(f).collect(), twist: self.twist.clone() }
    }

    /// Pointwise fallible map preserving the twist.
    pub fn try_map(&self, f: impl Fn(usize, &CMat<T>) -> Result<CMat<T>>) -> Result<Self> {
        let mats = self.mats.iter().enumerate().map(|(i, m)| f(i, m)).collect::<Result<Vec<_>>>()?;
        Ok(Self { grid: self.grid.clone(), mats, twist: self.twist.clone() })
    }

    /// Largest `‖μ(k + e_a) - μ(k)‖_max` over all axes, wraps included.
    pub fn max_neighbor_jump(&self) -> T {
        let mut j = T::zero();
        for f in 0..self.grid.len() {
            for axis in 0..self.grid.dim() {
                let (_, nb) = self.neighbor(f, axis, 1);
                j = j.max((&nb - &self.mats[f]).max_abs());
            }
        }
        j
    }
}

/// How [`inv_sqrt_psd`] evaluates `S^{-1/2}`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum InvSqrtMode {
    /// Spectral calculus on the Hermitian eigen-decomposition.
    Eigen,
    /// Binomial series `Σ_k binom(-1/2, k) D^k` with `D = S - 1`, `‖D‖ < 1`.
    Series,
}

/// Coefficients `binom(-1/2, k) = (-1)^k (2k-1)!! / (k! 2^k)` for `k < count`.
pub fn inv_sqrt_coefficients<T: Real>(count: usize) -> Vec<T> {
    let mut c = Vec::with_capacity(count);
    let mut v = T::one();
    for k in 0..count {
        c.push(v);
        let kk = T::from_usize(k).unwrap();
        // c_{k+1} = c_k * (-1/2 - k) / (k + 1)
        v = v * (-(T::lit(0.5) + kk)) / (kk + T::one());
    }
    c
}

/// `S^{-1/2}` for Hermitian positive definite `S`.
pub fn inv_sqrt_psd<T: Real>(s: &CMat<T>, mode: InvSqrtMode) -> Result<CMat<T>> {
    match mode {
        InvSqrtMode::Eigen => {
            let e: Eigh<T> = s.eigh()?;
            let min = e.values.first().copied().unwrap_or(T::one());
            if min <= T::zero() {
                return Err(FrameError::NotPositive { k: vec![], min_eig: min.to_f64_lossy() });
            }
            Ok(e.apply(|x| re(T::one() / x.sqrt())))
        }
        InvSqrtMode::Series => {
            let n = s.nrows();
            let d = s - &CMat::identity(n);
            let nd = d.norm2_hermitian()?;
            if nd >= T::one() {
                return Err(FrameError::SeriesDivergent { norm: nd.to_f64_lossy() });
            }
            let tol = T::EPS * T::lit(4.0);
            let mut out = CMat::identity(n);
            let mut pw = CMat::identity(n);
            let mut c = T::one();
            let mut k = 0usize;
            loop {
                pw = pw.matmul(&d);
                let kk = T::from_usize(k).unwrap();
                c = c * (-(T::lit(0.5) + kk)) / (kk + T::one());
                k += 1;
                let term = pw.scale_real(c);
                let tn = term.max_abs();
                out += &term;
                if tn <= tol * out.max_abs() || k > 200_000 {
                    break;
                }
            }
            if k > 200_000 {
                return Err(FrameError::NotConverged("binomial inverse square root".into()));
            }
            Ok(out)
        }
    }
}

/// Required distance from the spectrum to `-1` for [`cayley_log`].
pub const CAYLEY_MIN_GAP: f64 = 1e-6;

/// Distance from the spectrum of a unitary matrix to `-1`.
pub fn gap_to_minus_one<T: Real>(u: &CMat<T>) -> Result<T> {
    let a = u + &CMat::identity(u.nrows());
    let v = T::eigvalsh_dense(&a.adjoint_mul(&a).hermitian_part())?;
    Ok(v.first().copied().unwrap_or(T::one()).max(T::zero()).sqrt())
}

/// Logarithm `h` with `u = e^{ih}` and spectrum in `(-π, π)`, computed from the
/// Cayley transform `s = i(1-u)(1+u)^{-1}` by `h = 2 arctan(s)`.
pub fn cayley_log_matrix<T: Real>(u: &CMat<T>) -> Result<CMat<T>> {
    let gap = gap_to_minus_one(u)?;
    if gap < T::lit(CAYLEY_MIN_GAP) {
        return Err(FrameError::GapTooSmall { k: vec![], gap: gap.to_f64_lossy(), required: CAYLEY_MIN_GAP });
    }
    let n = u.nrows();
    let one = CMat::identity(n);
    let s = (&one - u).matmul(&(&one + u).inverse()?).scale(Complex::i());
    let (vals, vecs) = T::eigh_dense(&s.hermitian_part())?;
    let e = Eigh { values: vals, vectors: vecs };
    Ok(e.apply(|x| re(T::lit(2.0) * x.atan())))
}

/// Pointwise [`cayley_log_matrix`]; the twist is carried over unchanged.
pub fn cayley_log<T: Real>(u: &UnitaryFamily<T>) -> Result<HermitianFamily<T>> {
    u.try_map(|f, m| {
        cayley_log_matrix(m).map_err(|e| match e {
            FrameError::GapTooSmall { gap, required, .. } => FrameError::GapTooSmall { k: u.grid.multi(f), gap, required },
            other => other,
        })
    })
}

/// Pointwise `e^{i t h}`.
pub fn exp_i_family<T: Real>(h: &HermitianFamily<T>, t: T) -> Result<UnitaryFamily<T>> {
    h.try_map(|_, m| m.exp_i(t))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scalar::cis;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_herm(n: usize, scale: f64, rng: &mut ChaCha8Rng) -> CMat<f64> {
        CMat::from_fn(n, n, |_, _| Complex::new(rng.gen_range(-scale..scale), rng.gen_range(-scale..scale))).hermitian_part()
    }

    #[test]
    fn coefficients_match_double_factorial_formula() {
        let c = inv_sqrt_coefficients::<f64>(8);
        // (2k-1)!! / (k! 2^k) with alternating sign.
        let oracle = [1.0, -0.5, 0.375, -0.3125, 0.2734375, -0.24609375, 0.2255859375, -0.20947265625];
        for (a, b) in c.iter().zip(oracle) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn inv_sqrt_modes_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let d = random_herm(4, 0.2, &mut rng);
        let s = &CMat::identity(4) + &d;
        let a = inv_sqrt_psd(&s, InvSqrtMode::Eigen).unwrap();
        let b = inv_sqrt_psd(&s, InvSqrtMode::Series).unwrap();
        assert!((&a - &b).max_abs() < 1e-13);
        // S^{-1/2} S S^{-1/2} = 1
        assert!((&a.matmul(&s).matmul(&a) - &CMat::identity(4)).max_abs() < 1e-13);
    }

    #[test]
    fn series_rejects_large_perturbation() {
        let s = CMat::<f64>::from_real_diag(&[1.0, 2.5]);
        assert!(matches!(inv_sqrt_psd(&s, InvSqrtMode::Series), Err(FrameError::SeriesDivergent { .. })));
    }

    #[test]
    fn cayley_log_identity_and_gap_rejection() {
        let one = CMat::<f64>::identity(3);
        assert!(cayley_log_matrix(&one).unwrap().max_abs() < 1e-15);
        let near = CMat::from_diag(&[cis(std::f64::consts::PI - 1e-9), Complex::new(1.0, 0.0)]);
        assert!(matches!(cayley_log_matrix(&near), Err(FrameError::GapTooSmall { .. })));
    }

    #[test]
    fn validation_catches_rank_change_and_jumps() {
        let g = KGrid::new(&[4]).unwrap();
        let p1 = CMat::<f64>::from_real_diag(&[1.0, 0.0]);
        let p2 = CMat::<f64>::from_real_diag(&[1.0, 1.0]);
        let err = validate_projection_family(&g, &[p1.clone(), p1.clone(), p2, p1.clone()]).unwrap_err();
        assert!(matches!(err, FrameError::RankNotConstant { .. }));
        let q = CMat::<f64>::from_real_diag(&[0.0, 1.0]);
        let rep = validate_projection_family(&g, &[p1.clone(), q, p1.clone(), p1]).unwrap();
        assert_eq!(rep.rank, 1);
        assert!(!rep.warnings.is_empty());
    }

    proptest! {
        #[test]
        fn cayley_log_inverts_exponential(seed in 0u64..1000, n in 1usize..5) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let h = random_herm(n, 0.9, &mut rng);
            // Keep the spectrum inside (-π, π).
            let nrm = h.norm2_hermitian().unwrap();
            let h = if nrm > 3.0 { h.scale_real(3.0 / nrm) } else { h };
            let u = h.exp_i(1.0).unwrap();
            let back = cayley_log_matrix(&u).unwrap();
            prop_assert!((&back - &h).max_abs() < 1e-10);
        }

        #[test]
        fn series_and_eigen_inverse_sqrt_agree(seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let d = random_herm(3, 0.25, &mut rng);
            let s = &CMat::identity(3) + &d;
            prop_assume!(d.norm2_hermitian().unwrap() < 0.9);
            let a = inv_sqrt_psd(&s, InvSqrtMode::Eigen).unwrap();
            let b = inv_sqrt_psd(&s, InvSqrtMode::Series).unwrap();
            prop_assert!((&a - &b).max_abs() < 1e-11);
        }
    }
}
