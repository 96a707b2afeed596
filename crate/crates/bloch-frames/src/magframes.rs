//! Frames for weak magnetic perturbations of periodic operators.
//!
//! The spectral projection `Π` of `ℋ_ε` over an isolated energy window is a
//! covariant kernel. Periodic frames of the unperturbed band projection are
//! turned into seeds whose magnetic translates form a Parseval frame of
//! `Ran Π` (or an orthonormal basis when the band is topologically trivial).
//! Every step that can fail checks its hypothesis and reports the measured
//! quantity.

use std::collections::BTreeMap;

use num_complex::Complex;
use serde::{Deserialize, Serialize};

use crate::error::{FrameError, Result};
use crate::families::ProjectionFamily;
use crate::framesyn::{construct_bloch_basis, construct_subframe, FrameOptions};
use crate::hofstadter::{build_hofstadter, interior_spectrum, supercell_reduce, BandScan, HoppingModel, MagneticFlux, PhaseConvention};
use crate::kspace::{smooth_frame, BlochFrame, DEFAULT_FEJER_ORDER, KGrid, LatticeBox, LatticeFunction};
use crate::linalg::CMat;
use crate::magkernel::{covariance_residual, interior_test_vectors, kernel_inv_sqrt, kernel_inverse, kernel_sign, IterOptions, IterReport, MagneticKernel};
use crate::scalar::{re, Real};
use crate::wannier::{decay_fit, fit_shell_decay, frame_to_wannier, linear_fit, DecayFit};

/// Closed energy interval; infinite ends are allowed.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnergyWindow {
    pub lo: f64,
    pub hi: f64,
}

impl EnergyWindow {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if lo.is_nan() || hi.is_nan() || lo >= hi {
            return Err(FrameError::InvalidInput(format!("empty energy window [{lo}, {hi}]")));
        }
        Ok(Self { lo, hi })
    }

    /// Parses `"lo,hi"`.
    pub fn parse(s: &str) -> Result<Self> {
        let (a, b) = s.split_once(',').ok_or_else(|| FrameError::InvalidInput(format!("window {s:?} is not lo,hi")))?;
        let num = |x: &str| x.trim().parse::<f64>().map_err(|_| FrameError::InvalidInput(format!("bad energy {x:?}")));
        Self::new(num(a)?, num(b)?)
    }
}

fn sign_at<T: Real>(h: &MagneticKernel<T>, e: f64, opts: IterOptions) -> Result<(MagneticKernel<T>, Option<IterReport>)> {
    let bound = h.l1_norm().to_f64_lossy();
    let one = MagneticKernel::identity(h.eps, h.rows, opts.radius);
    if e <= -bound {
        return Ok((one, None));
    }
    if e >= bound {
        return Ok((one.scale_real(-T::one()), None));
    }
    let (s, rep) = kernel_sign(&h.add_identity(-T::lit(e)), opts)?;
    Ok((s, Some(rep)))
}

/// `Π = (sign(ℋ - E_-) - sign(ℋ - E_+))/2`, the spectral projection of a
/// Hermitian kernel whose spectrum avoids both window ends.
pub fn riesz_projection<T: Real>(h: &MagneticKernel<T>, window: EnergyWindow, opts: IterOptions) -> Result<(MagneticKernel<T>, Vec<IterReport>)> {
    let (lo, r1) = sign_at(h, window.lo, opts)?;
    let (hi, r2) = sign_at(h, window.hi, opts)?;
    let pi = lo.sub(&hi).scale_real(T::lit(0.5));
    Ok((pi, r1.into_iter().chain(r2).collect()))
}

/// Distance from the window ends to the bulk spectrum of `H_b` on a small
/// open box (bulk states only, see [`interior_spectrum`]).
pub fn window_gap<T: Real>(model: &HoppingModel<T>, b: T, window: EnergyWindow, box_radius: usize) -> Result<f64> {
    let op = build_hofstadter(model, b, LatticeBox::new(2, box_radius)?)?;
    let bulk = interior_spectrum(&op, box_radius / 2, 0.5)?;
    Ok([window.lo, window.hi]
        .iter()
        .filter(|e| e.is_finite())
        .flat_map(|e| bulk.iter().map(move |x| (x - e).abs()))
        .fold(f64::INFINITY, f64::min))
}

/// Projection close to an almost idempotent Hermitian kernel:
/// `𝔓 = T + (T - 1/2)((1 + 4Δ)^{-1/2} - 1)` with `Δ = T² - T`.
/// Returns `(𝔓, ‖Δ‖_1, report)`; needs `‖Δ‖_1 < 1/4`.
pub fn nenciu_projection<T: Real>(t: &MagneticKernel<T>, opts: IterOptions) -> Result<(MagneticKernel<T>, f64, IterReport)> {
    let delta = t.product(t, opts.radius).sub(t);
    let norm = delta.l1_norm().to_f64_lossy();
    if norm >= 0.25 {
        return Err(FrameError::Hypothesis(format!("‖T² - T‖ = {norm:.3e} is not below 1/4")));
    }
    let (x, rep) = kernel_inv_sqrt(&delta.scale_real(T::lit(4.0)).add_identity(T::one()), opts)?;
    let p = t.add(&t.add_identity(-T::lit(0.5)).product(&x.add_identity(-T::one()), opts.radius));
    // The two factors commute only up to truncation.
    let p = p.add(&p.adjoint()).scale_real(T::lit(0.5));
    Ok((p, norm, rep))
}

/// Kato–Nagy unitary `K = [1 - (Π - P)²]^{-1/2} (ΠP + (1 - Π)(1 - P))` with
/// `K P = Π K`. Returns `(K, ‖Π - P‖_1, report)`; needs `‖Π - P‖_1 ≤ 1/2`.
pub fn kato_nagy<T: Real>(target: &MagneticKernel<T>, source: &MagneticKernel<T>, opts: IterOptions) -> Result<(MagneticKernel<T>, f64, IterReport)> {
    let d = target.sub(source);
    let dist = d.l1_norm().to_f64_lossy();
    if dist > 0.5 {
        return Err(FrameError::Hypothesis(format!("‖Π - P‖ = {dist:.3e} exceeds 1/2")));
    }
    let r = opts.radius;
    let (s, rep) = kernel_inv_sqrt(&d.product(&d, r).scale_real(-T::one()).add_identity(T::one()), opts)?;
    // ΠP + (1 - Π)(1 - P) = 2ΠP - Π - P + 1
    let b = target.product(source, r).scale_real(T::lit(2.0)).sub(target).sub(source).add_identity(T::one());
    Ok((s.product(&b, r), dist, rep))
}

/// Dense counterpart of [`kato_nagy`] for two projections with `‖P - Q‖ < 1`,
/// mapping `Ran Q` onto `Ran P`.
pub fn kato_nagy_dense<T: Real>(p: &CMat<T>, q: &CMat<T>) -> Result<CMat<T>> {
    let d = p - q;
    let gap = d.norm2_hermitian()?;
    if gap >= T::one() {
        return Err(FrameError::Hypothesis(format!("‖P - Q‖ = {:.3e} is not below 1", gap.to_f64_lossy())));
    }
    let n = p.nrows();
    let one = CMat::identity(n);
    let s = (&one - &d.matmul(&d)).herm_fn(|x| re(T::one() / x.sqrt()))?;
    let b = &p.matmul(q) + &(&one - p).matmul(&(&one - q));
    Ok(s.matmul(&b))
}

/// `max_v ‖K S v - R K v‖` by successive application (no kernel truncation).
pub fn intertwining_residual<T: Real>(k: &MagneticKernel<T>, source: &MagneticKernel<T>, target: &MagneticKernel<T>, tests: &[LatticeFunction<T>]) -> f64 {
    tests
        .iter()
        .map(|v| {
            let a = k.apply(&source.apply(v));
            let b = target.apply(&k.apply(v));
            a.data.iter().zip(&b.data).map(|(x, y)| (*x - *y).norm_sqr().to_f64_lossy()).sum::<f64>().sqrt()
        })
        .fold(0.0, f64::max)
}

/// `Π 𝒮 M^{-1/2}` with `M = 𝒮^* Π 𝒮`: seeds whose translates are an
/// orthonormal system in `Ran Π`. Returns `(seeds, ‖M - 1‖_1, report)`.
pub fn lowdin_seeds<T: Real>(pi: &MagneticKernel<T>, seeds: &MagneticKernel<T>, opts: IterOptions) -> Result<(MagneticKernel<T>, f64, IterReport)> {
    let ps = pi.product(seeds, opts.radius);
    let m = seeds.adjoint().product(&ps, opts.radius);
    let dev = m.add_identity(-T::one()).l1_norm().to_f64_lossy();
    if dev >= 1.0 {
        return Err(FrameError::Hypothesis(format!("‖M - 1‖ = {dev:.3e} is not below 1")));
    }
    let (mi, rep) = kernel_inv_sqrt(&m, opts)?;
    Ok((ps.product(&mi, opts.radius), dev, rep))
}

/// Resolvent kernel `(ℋ - z)^{-1}`.
pub fn resolvent_kernel<T: Real>(h: &MagneticKernel<T>, z: Complex<T>, opts: IterOptions) -> Result<(MagneticKernel<T>, IterReport)> {
    let shifted = h.sub(&MagneticKernel::identity(h.eps, h.rows, 0).scale(z));
    kernel_inverse(&shifted, opts)
}

/// Exponential fit of the resolvent's shell maxima over `r ≤ radius/2`.
pub fn resolvent_decay<T: Real>(h: &MagneticKernel<T>, z: Complex<T>, opts: IterOptions) -> Result<DecayFit> {
    let (r, _) = resolvent_kernel(h, z, opts)?;
    let shell: Vec<f64> = r.shell_max().into_iter().map(|x| x.to_f64_lossy()).collect();
    Ok(fit_shell_decay(&shell, opts.radius / 2))
}

/// `D(ε) = max_δ |r_ε(δ) - r_0(δ)|` for the reduced resolvents, with its
/// straight-line fit in `ε`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EpsSweep {
    pub eps: Vec<f64>,
    pub difference: Vec<f64>,
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

pub fn combes_thomas_sweep<T: Real>(model: &HoppingModel<T>, flux: MagneticFlux, z: Complex<T>, eps: &[f64], opts: IterOptions) -> Result<EpsSweep> {
    let res = |e: f64| -> Result<MagneticKernel<T>> {
        let h = supercell_reduce(model, flux, e)?.lattice_operator(PhaseConvention::Unit);
        Ok(resolvent_kernel(&h, z, opts)?.0.with_eps(T::zero()))
    };
    let r0 = res(0.0)?;
    let mut difference = Vec::with_capacity(eps.len());
    for &e in eps {
        difference.push(if e == 0.0 { 0.0 } else { res(e)?.sub(&r0).max_abs().to_f64_lossy() });
    }
    let pts: Vec<(f64, f64)> = eps.iter().copied().zip(difference.iter().copied()).collect();
    let (slope, intercept, r_squared) = linear_fit(&pts);
    Ok(EpsSweep { eps: eps.to_vec(), difference, slope, intercept, r_squared })
}

/// Which frame the magnetic pipeline produces.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MagneticMode {
    /// Orthonormal basis of translates; needs vanishing Chern numbers.
    Basis,
    /// Parseval frame of `m + 1` seeds.
    Parseval,
}

#[derive(Clone, Debug)]
pub struct PipelineOptions {
    /// Points per axis of the Bloch grid used for the periodic frames.
    pub grid: usize,
    /// Kernel radius; `None` picks the smallest radius where the periodic
    /// projection and seeds fall below `tail_tol` (relative), capped by `radius_cap`.
    pub radius: Option<usize>,
    pub radius_cap: usize,
    pub tail_tol: f64,
    /// Fejér order for smoothing the periodic frames before reprojection.
    pub smoothing: Option<usize>,
    pub frame: FrameOptions,
    pub convention: PhaseConvention,
    pub tol: f64,
    /// Radius of the box carrying the test vectors.
    pub test_box: usize,
    pub test_vectors: usize,
    pub covariance_shift: i64,
    pub seed: u64,
}

impl Default for PipelineOptions {
    fn default() -> Self {
        Self {
            grid: 128,
            radius: None,
            radius_cap: 48,
            tail_tol: 2e-9,
            smoothing: Some(DEFAULT_FEJER_ORDER),
            frame: FrameOptions::default(),
            convention: PhaseConvention::Unit,
            tol: 1e-13,
            test_box: 40,
            test_vectors: 20,
            covariance_shift: 3,
            seed: 0x6d61_67,
        }
    }
}

/// Measured hypothesis quantities (all `l1` kernel norms, which bound the
/// operator norm).
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct Hypotheses {
    /// `‖M_1 - 1‖` of the orthonormal part.
    pub sub_overlap: Option<f64>,
    /// `‖M - 1‖` of the doubled seeds.
    pub overlap: Option<f64>,
    /// `max ‖T² - T‖` of the quantized doubled projections.
    pub idempotency: Option<f64>,
    /// `‖Π_2 - 𝔓_2‖`.
    pub projection_distance: Option<f64>,
}

impl Hypotheses {
    pub fn hold(&self) -> bool {
        self.sub_overlap.map_or(true, |x| x < 1.0)
            && self.overlap.map_or(true, |x| x < 1.0)
            && self.idempotency.map_or(true, |x| x < 0.25)
            && self.projection_distance.map_or(true, |x| x <= 0.5)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MagneticCertificate {
    pub flux: MagneticFlux,
    pub eps: f64,
    pub window: EnergyWindow,
    pub mode: MagneticMode,
    pub convention: PhaseConvention,
    /// Set when `q > 1` and the field enters without the supercell factor.
    pub reduced_phase: bool,
    pub radius: usize,
    pub grid: usize,
    pub fiber: usize,
    pub bands: (usize, usize),
    pub chern: BTreeMap<String, i64>,
    pub hypotheses: Hypotheses,
    pub iterations: BTreeMap<String, IterReport>,
    /// `max ‖Π - Π̂‖` and `‖Π - Π̂‖_1` against the quantized periodic projection.
    pub projection_deviation: (f64, f64),
    pub orthogonality: Option<f64>,
    pub reconstruction_residual: Option<f64>,
    pub covariance_residual: Option<f64>,
    pub decay: Vec<DecayFit>,
}

/// Output of [`magnetic_frame`]. `seeds` has one block column per seed.
#[derive(Clone, Debug)]
pub struct MagneticFrame<T> {
    pub pi: MagneticKernel<T>,
    pub pi1: Option<MagneticKernel<T>>,
    pub pi2: Option<MagneticKernel<T>>,
    /// Nenciu projection approximating `Π_2`.
    pub approx: Option<MagneticKernel<T>>,
    pub intertwiner: Option<MagneticKernel<T>>,
    pub seeds: MagneticKernel<T>,
    /// Seeds of the periodic construction the pipeline starts from.
    pub periodic_seeds: MagneticKernel<T>,
    pub certificate: MagneticCertificate,
}

fn smooth<T: Real>(frame: BlochFrame<T>, fam: &ProjectionFamily<T>, order: Option<usize>) -> Result<BlochFrame<T>> {
    match order {
        Some(o) => smooth_frame(&frame, fam, o),
        _ => Ok(frame),
    }
}

/// First radius where a shell profile drops below `tol` times its peak.
fn tail_radius(shell: &[f64], tol: f64) -> usize {
    let peak = shell.iter().copied().fold(0.0, f64::max);
    (0..shell.len()).find(|&r| shell[r..].iter().all(|&x| x <= tol * peak)).unwrap_or(shell.len())
}

fn seed_kernel<T: Real>(frame: &BlochFrame<T>, lbox: LatticeBox, eps: T, radius: usize) -> Result<(MagneticKernel<T>, usize)> {
    let set = frame_to_wannier(frame, lbox)?;
    let k = MagneticKernel::from_seeds(eps, &set.functions)?;
    let shell: Vec<f64> = k.shell_max().into_iter().map(|x| x.to_f64_lossy()).collect();
    Ok((k.with_radius(radius), tail_radius(&shell, 1.0)))
}

fn hstack<T: Real>(a: &MagneticKernel<T>, b: &MagneticKernel<T>) -> MagneticKernel<T> {
    let r = a.radius.max(b.radius);
    let (a, b) = (a.with_radius(r), b.with_radius(r));
    let mut out = MagneticKernel::zeros(a.eps, a.rows, a.cols + b.cols, r);
    let ds: Vec<[i64; 2]> = out.displacements().collect();
    for d in ds {
        out.set_block(d, &CMat::hstack(&a.block(d), &b.block(d)));
    }
    out
}

/// Builds magnetic seeds for the window of `ℋ_ε`, the reduction of `H_{b_0+ε}`
/// at rational `b_0`, following the periodic frame of the bands inside the window.
pub fn magnetic_frame<T: Real>(
    model: &HoppingModel<T>,
    flux: MagneticFlux,
    eps: f64,
    window: EnergyWindow,
    mode: MagneticMode,
    opts: &PipelineOptions,
) -> Result<MagneticFrame<T>> {
    let red0 = supercell_reduce(model, flux, 0.0)?;
    let red = supercell_reduce(model, flux, eps)?;
    let grid = KGrid::new(&[opts.grid, opts.grid])?;
    let hams0 = red0.reduced.hamiltonians(&grid);
    let scan = BandScan::from_hamiltonians(&grid, &hams0)?;
    let ranges = scan.ranges();
    if let Some((j, r)) = ranges.iter().enumerate().find(|(_, r)| r.1 >= window.lo && r.0 <= window.hi && (r.0 < window.lo || r.1 > window.hi)) {
        return Err(FrameError::InvalidInput(format!("band {j} spanning [{:.4}, {:.4}] straddles the window", r.0, r.1)));
    }
    let lo = ranges.iter().filter(|r| r.1 < window.lo).count();
    let hi = lo + ranges.iter().filter(|r| r.0 >= window.lo && r.1 <= window.hi).count();
    if hi == lo {
        return Err(FrameError::InvalidInput("no band lies inside the window".into()));
    }
    let p0 = ProjectionFamily::from_hamiltonians(grid.clone(), &hams0, lo, hi, T::lit(1e-6))?;
    let (n, m) = (p0.dim, p0.rank);
    let half = LatticeBox::new(2, opts.grid / 2)?;
    let e = T::lit(eps);

    // Periodic frames: orthonormal part S and, in Parseval mode, a basis Ψ of
    // the doubled complement P_2 ⊕ conj P_2(-k).
    let (sub, chern) = match mode {
        MagneticMode::Basis => {
            let (b, c) = construct_bloch_basis(&p0, &opts.frame)?;
            (b, c.chern)
        }
        MagneticMode::Parseval => {
            let (s, c) = construct_subframe(&p0, &opts.frame)?;
            (s, c.chern)
        }
    };
    let sub = smooth(sub, &p0, opts.smoothing)?;
    let doubled = match mode {
        MagneticMode::Basis => None,
        MagneticMode::Parseval => {
            let p2 = p0.remove(&sub)?;
            let p2t = p2.conjugate_reflection();
            let d = p2.direct_sum(&p2t)?;
            let (psi, _) = construct_bloch_basis(&d, &opts.frame)?;
            Some((smooth(psi, &d, opts.smoothing)?, p2, p2t))
        }
    };

    let pfull = MagneticKernel::from_samples(T::zero(), &grid, &p0.mats, opts.grid / 2)?;
    let radius = match opts.radius {
        Some(r) => r,
        None => {
            let mut shells = vec![pfull.shell_max().into_iter().map(|x| x.to_f64_lossy()).collect::<Vec<_>>()];
            if sub.count > 0 {
                shells.push(MagneticKernel::from_seeds(T::zero(), &frame_to_wannier(&sub, half)?.functions)?.shell_max().into_iter().map(|x| x.to_f64_lossy()).collect());
            }
            if let Some((psi, _, _)) = &doubled {
                shells.push(MagneticKernel::from_seeds(T::zero(), &frame_to_wannier(psi, half)?.functions)?.shell_max().into_iter().map(|x| x.to_f64_lossy()).collect());
            }
            shells.iter().map(|s| tail_radius(s, opts.tail_tol)).max().unwrap().clamp(4, opts.radius_cap.min(opts.grid / 2))
        }
    };
    let it = IterOptions { tol: opts.tol, ..IterOptions::new(radius) };
    let mut iterations = BTreeMap::new();
    let mut hyp = Hypotheses::default();

    let h = red.lattice_operator(opts.convention);
    let (pi, reps) = riesz_projection(&h, window, it)?;
    for (i, r) in reps.into_iter().enumerate() {
        iterations.insert(format!("sign_{i}"), r);
    }
    let pi_hat = pfull.with_radius(radius).with_eps(e);
    let dev = pi.sub(&pi_hat);
    let projection_deviation = (dev.max_abs().to_f64_lossy(), dev.l1_norm().to_f64_lossy());

    let mut periodic = None;
    let (mut pi1, mut f1) = (None, None);
    if sub.count > 0 {
        let (s, _) = seed_kernel(&sub, half, e, radius)?;
        periodic = Some(s.with_eps(T::zero()));
        let (f, dev, rep) = lowdin_seeds(&pi, &s, it)?;
        hyp.sub_overlap = Some(dev);
        iterations.insert("overlap_sub".into(), rep);
        pi1 = Some(f.product(&f.adjoint(), radius));
        f1 = Some(f);
    }

    let (mut pi2, mut approx, mut intertwiner, mut seeds) = (None, None, None, f1.clone());
    if let Some((psi, p2, p2t)) = &doubled {
        let (w, _) = seed_kernel(psi, half, e, radius)?;
        let (wt, wb) = (w.row_block(0, n), w.row_block(n, n));
        let top = wt.with_eps(T::zero());
        periodic = Some(match periodic {
            Some(s) => hstack(&s, &top),
            None => top,
        });
        let tt = MagneticKernel::from_samples(e, &grid, &p2.mats, radius)?;
        let tb = MagneticKernel::from_samples(e, &grid, &p2t.mats, radius)?;
        let (pt, dt, rt) = nenciu_projection(&tt, it)?;
        let (pb, db, rb) = nenciu_projection(&tb, it)?;
        hyp.idempotency = Some(dt.max(db));
        iterations.insert("nenciu_top".into(), rt);
        iterations.insert("nenciu_bottom".into(), rb);
        let (ptw, pbw) = (pt.product(&wt, radius), pb.product(&wb, radius));
        let mm = wt.adjoint().product(&ptw, radius).add(&wb.adjoint().product(&pbw, radius));
        let dev = mm.add_identity(-T::one()).l1_norm().to_f64_lossy();
        hyp.overlap = Some(dev);
        if dev >= 1.0 {
            return Err(FrameError::Hypothesis(format!("‖M - 1‖ = {dev:.3e} is not below 1")));
        }
        let (mi, rm) = kernel_inv_sqrt(&mm, it)?;
        iterations.insert("overlap".into(), rm);
        let g = ptw.product(&mi, radius);
        let p2e = match &pi1 {
            Some(p1) => pi.sub(p1),
            None => pi.clone(),
        };
        let (k, dist, rk) = kato_nagy(&p2e, &pt, it)?;
        hyp.projection_distance = Some(dist);
        iterations.insert("kato_nagy".into(), rk);
        let wr = k.product(&g, radius);
        seeds = Some(match seeds {
            Some(s) => hstack(&s, &wr),
            None => wr,
        });
        pi2 = Some(p2e);
        approx = Some(pt);
        intertwiner = Some(k);
    }
    let seeds = seeds.ok_or_else(|| FrameError::InvalidInput("window selects no seeds".into()))?;
    let periodic_seeds = periodic.expect("periodic seeds exist whenever seeds do");

    let certificate = MagneticCertificate {
        flux,
        eps,
        window,
        mode,
        convention: opts.convention,
        reduced_phase: flux.q > 1 && opts.convention == PhaseConvention::Unit,
        radius,
        grid: opts.grid,
        fiber: n,
        bands: (lo, hi),
        chern,
        hypotheses: hyp,
        iterations,
        projection_deviation,
        orthogonality: None,
        reconstruction_residual: None,
        covariance_residual: None,
        decay: Vec::new(),
    };
    let _ = m;
    Ok(MagneticFrame { pi, pi1, pi2, approx, intertwiner, seeds, periodic_seeds, certificate })
}

impl<T: Real> MagneticFrame<T> {
    pub fn seed_functions(&self) -> Vec<LatticeFunction<T>> {
        self.seeds.to_seeds()
    }

    /// Frame operator `Σ_η Σ_r |τ_η w_r⟩⟨τ_η w_r|` as a kernel.
    pub fn frame_operator(&self) -> MagneticKernel<T> {
        self.seeds.product(&self.seeds.adjoint(), self.seeds.radius)
    }

    pub fn test_vectors(&self, opts: &PipelineOptions) -> Result<Vec<LatticeFunction<T>>> {
        let lbox = LatticeBox::new(2, opts.test_box)?;
        Ok(interior_test_vectors(lbox, self.seeds.rows, opts.test_box / 4, opts.test_vectors, opts.seed))
    }

    /// Fills the residuals and decay fits of the certificate.
    pub fn certify(&mut self, opts: &PipelineOptions) -> Result<()> {
        let tests = self.test_vectors(opts)?;
        let norm = |f: &LatticeFunction<T>| f.norm_sqr().to_f64_lossy().sqrt();
        let diff = |a: &LatticeFunction<T>, b: &LatticeFunction<T>| a.data.iter().zip(&b.data).map(|(x, y)| (*x - *y).norm_sqr().to_f64_lossy()).sum::<f64>().sqrt();
        let w_adj = self.seeds.adjoint();
        // Room for every translate that overlaps the test vectors, so no coefficient is cut.
        let wide = LatticeBox::new(2, opts.test_box + self.seeds.radius)?;
        let mut recon = 0.0f64;
        for v in &tests {
            let v = v.rebox(wide);
            let back = self.seeds.apply(&w_adj.apply(&v));
            recon = recon.max(diff(&back, &self.pi.apply(&v)));
        }
        self.certificate.reconstruction_residual = Some(recon);
        self.certificate.orthogonality = match (&self.pi1, &self.pi2) {
            (Some(p1), Some(p2)) => Some(tests.iter().map(|v| norm(&p1.apply(&p2.apply(v)))).fold(0.0, f64::max)),
            _ => Some(0.0),
        };
        let frame_op = self.frame_operator();
        self.certificate.covariance_residual = Some(covariance_residual(&frame_op, &tests[..1], opts.covariance_shift, opts.covariance_shift as usize).to_f64_lossy());
        self.certificate.decay = self.seed_functions().iter().map(decay_fit).collect();
        Ok(())
    }

    /// `max |w_r(δ) - w_r^{per}(δ)|` against the periodic seeds.
    pub fn distance_to_periodic(&self) -> f64 {
        self.seeds.with_eps(T::zero()).sub(&self.periodic_seeds).max_abs().to_f64_lossy()
    }
}
