//! Position-space products of Bloch frames: Wannier sets with decay
//! certificates, effective Hamiltonians and Fourier band interpolation.

use num_complex::Complex;
use num_traits::Zero;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{FrameError, Result};
use crate::families::ProjectionFamily;
use crate::kspace::{centred, inverse_bloch_floquet, plancherel_defect, torus_coefficients, BlochFrame, KGrid, LatticeBox, LatticeFunction};
use crate::linalg::CMat;
use crate::magkernel::{action_residual, interior_test_vectors, MagneticKernel};
use crate::scalar::{cis, two_pi, Real};

/// Shells whose maximum lies below `NOISE_FLOOR` times the peak are excluded
/// from decay fits (round-off, not decay).
pub const NOISE_FLOOR: f64 = 1e-12;

/// Exponential fit `max_{‖γ‖_∞ = r} |w(γ)| ≈ C e^{-β r}`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecayFit {
    pub rate: f64,
    pub prefactor: f64,
    pub r_squared: f64,
    /// Shells that entered the regression.
    pub points: usize,
    /// Largest radius considered.
    pub max_radius: usize,
    /// Everything beyond the origin is below the noise floor; `rate` is
    /// then the lower bound `ln(peak / floor)`.
    pub trivial: bool,
    /// The outermost available shell is far above the noise floor, so the
    /// function is cut by the box.
    pub boundary_polluted: bool,
}

impl DecayFit {
    /// Certified exponentially localized.
    pub fn localized(&self) -> bool {
        self.rate > 0.0 && self.rate.is_finite()
    }
}

/// Least-squares fit of `ln(shell[r])` against `r` over `1 ≤ r ≤ max_radius`,
/// skipping shells below the noise floor. The origin holds the core of the
/// function rather than its tail and is left out of the regression.
pub fn fit_shell_decay(shell: &[f64], max_radius: usize) -> DecayFit {
    let peak = shell.iter().copied().fold(0.0, f64::max);
    let outer = shell.last().copied().unwrap_or(0.0);
    let boundary_polluted = shell.len() > 1 && peak > 0.0 && outer > 1e-6 * peak;
    let floor = peak * NOISE_FLOOR;
    let rmax = max_radius.min(shell.len().saturating_sub(1));
    let pts: Vec<(f64, f64)> = (1..=rmax).filter(|&r| shell[r] > floor && shell[r] > 0.0).map(|r| (r as f64, shell[r].ln())).collect();
    if peak == 0.0 || pts.len() < 2 {
        return DecayFit {
            rate: if peak == 0.0 { f64::MAX } else { (1.0 / NOISE_FLOOR).ln() },
            prefactor: peak,
            r_squared: 1.0,
            points: pts.len(),
            max_radius: rmax,
            trivial: true,
            boundary_polluted,
        };
    }
    let (slope, intercept, r_squared) = linear_fit(&pts);
    DecayFit { rate: -slope, prefactor: intercept.exp(), r_squared, points: pts.len(), max_radius: rmax, trivial: false, boundary_polluted }
}

/// Ordinary least squares `y ≈ a x + b`; returns `(a, b, R²)`.
pub fn linear_fit(pts: &[(f64, f64)]) -> (f64, f64, f64) {
    let n = pts.len() as f64;
    let (sx, sy) = pts.iter().fold((0.0, 0.0), |(a, b), p| (a + p.0, b + p.1));
    let (mx, my) = (sx / n, sy / n);
    let (sxx, sxy, syy) = pts.iter().fold((0.0, 0.0, 0.0), |(a, b, c), p| {
        let (dx, dy) = (p.0 - mx, p.1 - my);
        (a + dx * dx, b + dx * dy, c + dy * dy)
    });
    let slope = sxy / sxx;
    let r2 = if syy == 0.0 { 1.0 } else { (sxy * sxy) / (sxx * syy) };
    (slope, my - slope * mx, r2)
}

/// Decay fit of a lattice function over `r ≤ L/2` of its box.
pub fn decay_fit<T: Real>(w: &LatticeFunction<T>) -> DecayFit {
    let shell: Vec<f64> = w.shell_max().into_iter().map(|x| x.to_f64_lossy()).collect();
    fit_shell_decay(&shell, w.lbox.radius / 2)
}

/// Wannier functions `w_a(γ) = ∫ e^{i2πk·γ} ξ_a(k) dk` of a frame.
#[derive(Clone, Debug)]
pub struct WannierSet<T> {
    pub lbox: LatticeBox,
    pub grid: KGrid,
    pub functions: Vec<LatticeFunction<T>>,
    pub decay: Vec<DecayFit>,
    pub plancherel_defect: f64,
}

/// Serializable summary of a Wannier set.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DecayCertificate {
    pub box_radius: usize,
    pub grid: Vec<usize>,
    pub count: usize,
    pub fiber: usize,
    pub plancherel_defect: f64,
    pub decay: Vec<DecayFit>,
    pub localized: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reconstruction_residual: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub translate_gram_defect: Option<f64>,
}

/// Largest box the grid resolves without aliasing.
pub fn max_box(grid: &KGrid) -> Result<LatticeBox> {
    LatticeBox::new(grid.dim(), grid.sizes().iter().copied().min().unwrap_or(0) / 2)
}

pub fn frame_to_wannier<T: Real>(frame: &BlochFrame<T>, lbox: LatticeBox) -> Result<WannierSet<T>> {
    let functions = inverse_bloch_floquet(frame, lbox)?;
    let decay = functions.iter().map(decay_fit).collect();
    Ok(WannierSet { lbox, grid: frame.grid.clone(), functions, decay, plancherel_defect: plancherel_defect(frame).to_f64_lossy() })
}

impl<T: Real> WannierSet<T> {
    pub fn fiber(&self) -> usize {
        self.functions.first().map(|f| f.fiber).unwrap_or(0)
    }

    pub fn localized(&self) -> bool {
        self.decay.iter().all(DecayFit::localized)
    }

    /// Translates of the functions as a covariant kernel at zero field.
    pub fn kernel(&self) -> Result<MagneticKernel<T>> {
        MagneticKernel::from_seeds(T::zero(), &self.functions)
    }

    /// `max ‖Σ_γ Σ_a ⟨T_γ w_a, v⟩ T_γ w_a - Π v‖` over `count` seeded unit
    /// vectors supported in the central half of the box (two dimensions only).
    pub fn reconstruction_residual(&self, family: &ProjectionFamily<T>, count: usize, seed: u64) -> Result<f64> {
        if self.lbox.dim != 2 {
            return Err(FrameError::InvalidInput("lattice reconstruction is implemented for two dimensions".into()));
        }
        let w = self.kernel()?;
        let r = 2 * w.radius;
        let frame_op = w.product(&w.adjoint(), r);
        let pi = MagneticKernel::from_samples(T::zero(), &family.grid, &family.mats, r.min(family.grid.size(0) / 2).min(family.grid.size(1) / 2))?;
        let outer = LatticeBox::new(2, self.lbox.radius + r)?;
        let tests = interior_test_vectors::<T>(outer, self.fiber(), self.lbox.radius / 2, count, seed);
        Ok(action_residual(&frame_op, &pi, &tests).to_f64_lossy())
    }

    /// `max |⟨T_γ w_a, w_b⟩ - δ_{γ0} δ_{ab}|` (two dimensions only).
    pub fn translate_gram_defect(&self) -> Result<f64> {
        if self.lbox.dim != 2 {
            return Err(FrameError::InvalidInput("translate Gram is implemented for two dimensions".into()));
        }
        let w = self.kernel()?;
        let g = w.adjoint().product(&w, 2 * w.radius);
        Ok(g.add_identity(-T::one()).max_abs().to_f64_lossy())
    }

    pub fn certificate(&self) -> DecayCertificate {
        DecayCertificate {
            box_radius: self.lbox.radius,
            grid: self.grid.sizes().to_vec(),
            count: self.functions.len(),
            fiber: self.fiber(),
            plancherel_defect: self.plancherel_defect,
            decay: self.decay.clone(),
            localized: self.localized(),
            reconstruction_residual: None,
            translate_gram_defect: None,
        }
    }
}

/// Relative threshold separating the redundant zero modes of `h_eff`.
pub const ZERO_MODE_THRESHOLD: f64 = 1e-6;

/// `h_eff(k) = Ξ(k)^* (h(k) + c) Ξ(k)` for a Parseval frame `Ξ` of the band
/// projection, with the shift `c ≥ 0` making `h + c ≥ 1`.
#[derive(Clone, Debug)]
pub struct EffectiveHamiltonian<T> {
    pub grid: KGrid,
    pub mats: Vec<CMat<T>>,
    pub shift: f64,
    /// Occupied bands `m`; the remaining `M - m` modes are redundant zeros.
    pub rank: usize,
}

pub fn effective_hamiltonian<T: Real>(frame: &BlochFrame<T>, hams: &[CMat<T>], family: &ProjectionFamily<T>) -> Result<EffectiveHamiltonian<T>> {
    if hams.len() != frame.grid.len() || family.grid != frame.grid {
        return Err(FrameError::InvalidInput("frame, Hamiltonians and projections must share a grid".into()));
    }
    let defect = frame.frame_operator_defect(family).to_f64_lossy();
    if defect > 1e-8 {
        return Err(FrameError::InvalidInput(format!("frame is not Parseval for the projection (defect {defect:.3e})")));
    }
    let lowest = hams
        .par_iter()
        .map(|h| T::eigvalsh_dense(h).map(|v| v[0].to_f64_lossy()))
        .collect::<Result<Vec<f64>>>()?
        .into_iter()
        .fold(f64::INFINITY, f64::min);
    let shift = (1.0 - lowest).max(0.0);
    let c = T::lit(shift);
    let mats = frame
        .vectors
        .par_iter()
        .zip(hams)
        .map(|(xi, h)| xi.adjoint_mul(&h.add_identity_scaled(c).matmul(xi)).hermitian_part())
        .collect();
    Ok(EffectiveHamiltonian { grid: frame.grid.clone(), mats, shift, rank: family.rank })
}

fn split_modes<T: Real>(h: &CMat<T>, rank: usize, shift: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    let e: Vec<f64> = T::eigvalsh_dense(h)?.into_iter().map(|x| x.to_f64_lossy()).collect();
    let zeros = e.len() - rank;
    Ok((e[..zeros].to_vec(), e[zeros..].iter().map(|x| x - shift).collect()))
}

impl<T: Real> EffectiveHamiltonian<T> {
    /// Nonzero spectrum minus the shift, per grid point.
    pub fn bands(&self) -> Result<Vec<Vec<f64>>> {
        self.mats.par_iter().map(|h| split_modes(h, self.rank, self.shift).map(|x| x.1)).collect()
    }

    /// Checks the split into `rank` nonzero and `M - rank` zero modes and
    /// returns the largest zero-mode modulus.
    pub fn zero_mode_defect(&self) -> Result<f64> {
        let mut worst = 0.0f64;
        for h in &self.mats {
            let (z, nz) = split_modes(h, self.rank, self.shift)?;
            let radius = nz.iter().map(|x| (x + self.shift).abs()).fold(0.0, f64::max);
            if nz.iter().any(|x| x + self.shift <= ZERO_MODE_THRESHOLD * radius) {
                return Err(FrameError::InvalidInput("effective Hamiltonian has fewer nonzero modes than bands".into()));
            }
            worst = z.iter().fold(worst, |w, x| w.max(x.abs()));
        }
        Ok(worst)
    }

    /// `max |E_j^{eff}(k) - E_j(k)|` against the occupied bands `lo..lo+rank` of `hams`.
    pub fn spectral_defect(&self, hams: &[CMat<T>], lo: usize) -> Result<f64> {
        let bands = self.bands()?;
        let mut worst = 0.0f64;
        for (b, h) in bands.iter().zip(hams) {
            let e = T::eigvalsh_dense(h)?;
            for (j, x) in b.iter().enumerate() {
                worst = worst.max((x - e[lo + j].to_f64_lossy()).abs());
            }
        }
        Ok(worst)
    }
}

trait AddIdentity<T> {
    fn add_identity_scaled(&self, c: T) -> Self;
}

impl<T: Real> AddIdentity<T> for CMat<T> {
    fn add_identity_scaled(&self, c: T) -> Self {
        let mut out = self.clone();
        for i in 0..self.nrows().min(self.ncols()) {
            out[(i, i)] = out[(i, i)] + c;
        }
        out
    }
}

/// Trigonometric interpolant of a sampled matrix field. Even-size Nyquist
/// modes are split symmetrically so real-symmetric data stay real.
#[derive(Clone, Debug)]
pub struct FourierInterpolant<T> {
    pub grid: KGrid,
    rows: usize,
    cols: usize,
    modes: Vec<(Vec<f64>, CMat<T>)>,
}

impl<T: Real> FourierInterpolant<T> {
    pub fn new(grid: &KGrid, mats: &[CMat<T>]) -> Result<Self> {
        if mats.len() != grid.len() || mats.is_empty() {
            return Err(FrameError::InvalidInput("one sample per grid point required".into()));
        }
        let (rows, cols) = (mats[0].nrows(), mats[0].ncols());
        let flat: Vec<Complex<T>> = mats.iter().flat_map(|m| m.as_slice().iter().copied()).collect();
        // c(n) = (1/|grid|) Σ_k e^{i2πk·n} f(k), so f(k) = Σ_n c(n) e^{-i2πk·n}.
        let coeff = torus_coefficients(grid, rows * cols, &flat);
        let mut modes = Vec::new();
        for t in 0..grid.len() {
            let c = CMat::from_vec(rows, cols, coeff[t * rows * cols..(t + 1) * rows * cols].to_vec());
            if c.as_slice().iter().all(|z| z.is_zero()) {
                continue;
            }
            let n: Vec<i64> = grid.multi(t).iter().zip(grid.sizes()).map(|(&i, &s)| centred(i, s)).collect();
            let nyq: Vec<usize> = (0..n.len()).filter(|&a| grid.size(a) % 2 == 0 && 2 * n[a] == grid.size(a) as i64).collect();
            let w = T::lit(0.5f64.powi(nyq.len() as i32));
            for mask in 0..(1usize << nyq.len()) {
                let mut m: Vec<f64> = n.iter().map(|&x| x as f64).collect();
                for (b, &a) in nyq.iter().enumerate() {
                    if mask >> b & 1 == 1 {
                        m[a] = -m[a];
                    }
                }
                modes.push((m, c.scale_real(w)));
            }
        }
        Ok(Self { grid: grid.clone(), rows, cols, modes })
    }

    pub fn eval(&self, k: &[T]) -> CMat<T> {
        let mut out = CMat::zeros(self.rows, self.cols);
        for (n, c) in &self.modes {
            let dot = n.iter().zip(k).fold(T::zero(), |s, (&a, &b)| s + T::lit(a) * b);
            out = &out + &c.scale(cis(-two_pi::<T>() * dot));
        }
        out
    }
}

/// Bands on `fine` from `h_eff` sampled on a coarse grid dividing it.
pub fn interpolate_bands<T: Real>(heff: &EffectiveHamiltonian<T>, fine: &KGrid) -> Result<Vec<Vec<f64>>> {
    if fine.dim() != heff.grid.dim() || fine.sizes().iter().zip(heff.grid.sizes()).any(|(f, c)| f % c != 0) {
        return Err(FrameError::InvalidInput("coarse grid must divide the fine grid".into()));
    }
    let interp = FourierInterpolant::new(&heff.grid, &heff.mats)?;
    (0..fine.len())
        .into_par_iter()
        .map(|f| split_modes(&interp.eval(&fine.k::<T>(f)).hermitian_part(), heff.rank, heff.shift).map(|x| x.1))
        .collect()
}

/// Samples of a fine-grid family at the points of a coarser grid dividing it.
pub fn subsample<T: Clone>(fine: &KGrid, data: &[T], coarse: &KGrid) -> Result<Vec<T>> {
    if fine.dim() != coarse.dim() || fine.sizes().iter().zip(coarse.sizes()).any(|(f, c)| f % c != 0) {
        return Err(FrameError::InvalidInput("coarse grid must divide the fine grid".into()));
    }
    Ok((0..coarse.len())
        .map(|c| {
            let idx: Vec<usize> = coarse.multi(c).iter().zip(fine.sizes().iter().zip(coarse.sizes())).map(|(&i, (&f, &s))| i * (f / s)).collect();
            data[fine.flat(&idx)].clone()
        })
        .collect())
}

/// Coarse-to-fine band interpolation measured against exact fine-grid bands.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct InterpolationReport {
    pub coarse: Vec<usize>,
    pub fine: Vec<usize>,
    /// `max |E_j^{interp} - E_j|` over the fine grid.
    pub error: f64,
    /// `max |E_j^{eff} - E_j|` on the coarse grid.
    pub spectral_defect: f64,
    pub shift: f64,
}

/// Samples a Parseval frame built on `fine` at the points of `coarse`, forms
/// `h_eff` there and interpolates back to `fine`. Bands `lo..lo+rank` of
/// `hams` are the reference. Returns the interpolated bands too.
pub fn interpolation_study<T: Real>(
    frame: &BlochFrame<T>,
    hams: &[CMat<T>],
    family: &ProjectionFamily<T>,
    lo: usize,
    coarse: &KGrid,
) -> Result<(InterpolationReport, Vec<Vec<f64>>)> {
    let fine = &frame.grid;
    let cframe = BlochFrame::new(coarse.clone(), subsample(fine, &frame.vectors, coarse)?)?;
    let chams = subsample(fine, hams, coarse)?;
    let cfam = ProjectionFamily::new(coarse.clone(), subsample(fine, &family.mats, coarse)?)?;
    let heff = effective_hamiltonian(&cframe, &chams, &cfam)?;
    let spectral_defect = heff.spectral_defect(&chams, lo)?;
    let bands = interpolate_bands(&heff, fine)?;
    let exact: Vec<Vec<f64>> = hams
        .par_iter()
        .map(|h| T::eigvalsh_dense(h).map(|e| e[lo..lo + family.rank].iter().map(|x| x.to_f64_lossy()).collect()))
        .collect::<Result<_>>()?;
    let report = InterpolationReport {
        coarse: coarse.sizes().to_vec(),
        fine: fine.sizes().to_vec(),
        error: band_distance(&bands, &exact),
        spectral_defect,
        shift: heff.shift,
    };
    Ok((report, bands))
}

/// `max |a - b|` over two band tables.
pub fn band_distance(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    a.iter().zip(b).flat_map(|(x, y)| x.iter().zip(y).map(|(p, q)| (p - q).abs())).fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::framesyn::{construct_frame, FrameKind, FrameOptions};
    use crate::hofstadter::HoppingModel;

    #[test]
    fn synthetic_exponential_rate_recovered() {
        let lbox = LatticeBox::new(2, 20).unwrap();
        let mut w = LatticeFunction::<f64>::zeros(lbox, 1);
        for (i, g) in lbox.sites().enumerate() {
            let r = g.iter().map(|x| x.abs()).max().unwrap() as f64;
            w.data[i] = Complex::new((-0.7 * r).exp(), 0.0);
        }
        let fit = decay_fit(&w);
        assert!((fit.rate - 0.7).abs() < 0.02 && fit.r_squared > 0.999, "{fit:?}");
        assert!(!fit.trivial && fit.localized());
    }

    #[test]
    fn delta_is_trivially_localized() {
        let lbox = LatticeBox::new(2, 6).unwrap();
        let mut w = LatticeFunction::<f64>::zeros(lbox, 2);
        w.at_mut(&[0, 0]).unwrap()[1] = Complex::new(1.0, 0.0);
        let fit = decay_fit(&w);
        assert!(fit.trivial && fit.localized() && !fit.boundary_polluted);
    }

    #[test]
    fn support_touching_the_cut_is_flagged() {
        let lbox = LatticeBox::new(1, 10).unwrap();
        let mut w = LatticeFunction::<f64>::zeros(lbox, 1);
        for (i, g) in lbox.sites().enumerate() {
            w.data[i] = Complex::new((-0.05 * g[0].abs() as f64).exp(), 0.0);
        }
        let fit = decay_fit(&w);
        assert!(fit.boundary_polluted && fit.max_radius == 5);
    }

    #[test]
    fn constant_frame_gives_delta_wannier() {
        let grid = KGrid::new(&[8, 8]).unwrap();
        let v = CMat::from_fn(2, 1, |i, _| Complex::new(if i == 0 { 1.0f64 } else { 0.0 }, 0.0));
        let frame = BlochFrame::new(grid.clone(), vec![v; 64]).unwrap();
        let set = frame_to_wannier(&frame, max_box(&grid).unwrap()).unwrap();
        let w = &set.functions[0];
        assert!((w.at(&[0, 0]).unwrap()[0].re - 1.0).abs() < 1e-14);
        assert!((w.norm_sqr() - 1.0).abs() < 1e-14);
        assert!(set.decay[0].trivial);
        assert!(set.translate_gram_defect().unwrap() < 1e-14);
    }

    fn chern_band(n: usize) -> (KGrid, Vec<CMat<f64>>, ProjectionFamily<f64>) {
        let m = HoppingModel::<f64>::two_band(1.0);
        let grid = KGrid::new(&[n, n]).unwrap();
        let hams = m.hamiltonians(&grid);
        let fam = m.band_projection(&grid, 0, 1).unwrap();
        (grid, hams, fam)
    }

    #[test]
    fn parseval_pair_reconstructs_range() {
        let (grid, _, fam) = chern_band(64);
        let (frame, _) = construct_frame(&fam, FrameKind::Parseval, &FrameOptions::default()).unwrap();
        let set = frame_to_wannier(&frame, max_box(&grid).unwrap()).unwrap();
        assert!(set.plancherel_defect < 1e-10);
        assert!(set.localized());
        // Truncation at the box edge bounds the residual, not round-off.
        let tail = set.functions.iter().map(|w| *w.shell_max().last().unwrap()).fold(0.0, f64::max);
        let res = set.reconstruction_residual(&fam, 5, 1).unwrap();
        assert!(res < 1e3 * tail && res < 1e-5, "residual {res:e}, tail {tail:e}");
    }

    #[test]
    fn effective_hamiltonian_of_parseval_pair() {
        let (grid, hams, fam) = chern_band(32);
        let (frame, _) = construct_frame(&fam, FrameKind::Parseval, &FrameOptions::default()).unwrap();
        let heff = effective_hamiltonian(&frame, &hams, &fam).unwrap();
        assert_eq!(heff.mats[0].nrows(), 2);
        assert!(heff.spectral_defect(&hams, 0).unwrap() < 1e-8);
        assert!(heff.zero_mode_defect().unwrap() < 1e-8);
        // Shifting h by c shifts the band by c.
        let shifted: Vec<CMat<f64>> = hams.iter().map(|h| h.add_identity_scaled(0.75)).collect();
        let h2 = effective_hamiltonian(&frame, &shifted, &fam).unwrap();
        let (b1, b2) = (heff.bands().unwrap(), h2.bands().unwrap());
        assert!(b1.iter().zip(&b2).all(|(x, y)| (y[0] - x[0] - 0.75).abs() < 1e-10));
        let _ = grid;
    }

    #[test]
    fn rejects_non_parseval_frame() {
        let (grid, hams, fam) = chern_band(8);
        let v = CMat::from_fn(2, 1, |i, _| Complex::new(if i == 0 { 1.0f64 } else { 0.0 }, 0.0));
        let frame = BlochFrame::new(grid, vec![v; 64]).unwrap();
        assert!(effective_hamiltonian(&frame, &hams, &fam).is_err());
    }

    #[test]
    fn cosine_band_interpolates_exactly() {
        let coarse = KGrid::new(&[8]).unwrap();
        let fine = KGrid::new(&[64]).unwrap();
        let mats: Vec<CMat<f64>> = (0..8).map(|f| CMat::from_real_diag(&[2.0 * (two_pi::<f64>() * coarse.k::<f64>(f)[0]).cos() + 3.0])).collect();
        let heff = EffectiveHamiltonian { grid: coarse.clone(), mats: mats.clone(), shift: 0.0, rank: 1 };
        let bands = interpolate_bands(&heff, &fine).unwrap();
        for (f, b) in bands.iter().enumerate() {
            let k = fine.k::<f64>(f)[0];
            assert!((b[0] - 2.0 * (two_pi::<f64>() * k).cos() - 3.0).abs() < 1e-12);
        }
        // Restricting the interpolant to the coarse grid is the identity.
        let back = interpolate_bands(&heff, &coarse).unwrap();
        assert!(back.iter().zip(&mats).all(|(b, m)| (b[0] - m[(0, 0)].re).abs() < 1e-12));
        // A pure Nyquist mode stays real.
        let nyq: Vec<CMat<f64>> = (0..8).map(|f| CMat::from_real_diag(&[if f % 2 == 0 { 2.0 } else { 1.0 }])).collect();
        let interp = FourierInterpolant::new(&coarse, &nyq).unwrap();
        assert!(interp.eval(&[0.1]).as_slice()[0].im.abs() < 1e-14);
    }

    #[test]
    fn interpolation_error_shrinks_with_the_coarse_grid() {
        let (grid, hams, fam) = chern_band(64);
        let (frame, _) = construct_frame(&fam, FrameKind::Parseval, &FrameOptions::default()).unwrap();
        let errs: Vec<f64> = [8, 16, 32]
            .iter()
            .map(|&n| interpolation_study(&frame, &hams, &fam, 0, &KGrid::new(&[n, n]).unwrap()).unwrap().0.error)
            .collect();
        assert!(errs[1] < errs[0] && errs[2] < errs[1], "{errs:?}");
        let _ = grid;
    }

    #[test]
    fn subsample_picks_coarse_points() {
        let fine = KGrid::new(&[8, 8]).unwrap();
        let coarse = KGrid::new(&[4, 4]).unwrap();
        let data: Vec<usize> = (0..fine.len()).collect();
        let sub = subsample(&fine, &data, &coarse).unwrap();
        for (c, v) in sub.iter().enumerate() {
            assert_eq!(fine.k::<f64>(*v), coarse.k::<f64>(c));
        }
    }
}
