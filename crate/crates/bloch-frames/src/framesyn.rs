//! Construction of periodic Bloch frames: orthonormal bases for trivial
//! families, maximal orthonormal subframes of rank `m - 1`, and Parseval
//! frames of `m + 1` vectors.
//!
//! Every construction follows the same route. A basis of the face `k_0 = 0`
//! is parallel-transported along axis 0, which fails to close up by the
//! obstruction unitary `α`. A unitary correction `β(k_0)` interpolating
//! between `1` and `α^{-1} α_0` then turns the transported frame into one
//! with the prescribed jump `α_0` (the identity for a basis). The correction
//! comes from a two-step logarithm `α_1^{-1} α_0 = e^{i g_1} e^{i g_2}`.

use std::collections::BTreeMap;

use num_complex::Complex;
use num_traits::Zero;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{FrameError, Result};
use crate::families::{cayley_log_matrix, HermitianFamily, ProjectionFamily, UnitaryFamily};
use crate::kspace::{BlochFrame, KGrid};
use crate::linalg::{chord, eig_unitary, wrap_angle, CMat, Eigh};
use crate::scalar::{cis, two_pi, Real};
use crate::transport::{chern_numbers, obstruction_matrix, parallel_transport, winding_degrees, TransportLines};

/// Tuning knobs shared by the constructions.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FrameOptions {
    /// Eigenphase separation requested from the non-degenerate approximation.
    pub tol_gap: f64,
    /// Smallest separation accepted when `tol_gap` cannot be reached.
    pub min_gap: f64,
    /// Half-width of a spectral gap shared by all samples that allows a
    /// single logarithm instead of the two-step route.
    pub common_gap_margin: f64,
    /// Seed of the generic perturbation.
    pub seed: u64,
}

impl Default for FrameOptions {
    fn default() -> Self {
        Self { tol_gap: 0.25, min_gap: 1e-3, common_gap_margin: 0.05, seed: 0x5eed }
    }
}

/// Winding degrees of `det u` along every axis (empty on a point grid).
pub fn degrees<T: Real>(u: &UnitaryFamily<T>) -> Result<Vec<i64>> {
    let mut out = Vec::with_capacity(u.grid.dim());
    for axis in 0..u.grid.dim() {
        let all = winding_degrees(u, axis)?;
        if all.iter().any(|&d| d != all[0]) {
            return Err(FrameError::NotConverged(format!("degree varies across lines along axis {axis}: {all:?}")));
        }
        out.push(all[0]);
    }
    Ok(out)
}

fn circular_min_gap<T: Real>(phases: &[T]) -> T {
    if phases.len() < 2 {
        return two_pi();
    }
    let mut p = phases.to_vec();
    p.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut g = p[0] + two_pi::<T>() - p[p.len() - 1];
    for w in p.windows(2) {
        g = g.min(w[1] - w[0]);
    }
    g
}

/// Smallest eigenphase separation over the whole family.
pub fn min_phase_gap<T: Real>(u: &UnitaryFamily<T>) -> Result<T> {
    let mut g = two_pi::<T>();
    for m in &u.mats {
        g = g.min(circular_min_gap(&eig_unitary(m)?.0));
    }
    Ok(g)
}

/// Output of [`nondegenerate_approximation`].
#[derive(Clone, Debug)]
pub struct NondegenerateApprox<T> {
    pub alpha: UnitaryFamily<T>,
    /// Strength of the perturbation `α e^{iεK}` (zero if the input was kept).
    pub eps: f64,
    pub gap: f64,
}

/// Seeded Hermitian matrix with spectrum spread evenly over `[-1, 1]`.
fn generic_hermitian<T: Real>(m: usize, seed: u64) -> CMat<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let g = CMat::from_fn(m, m, |_, _| Complex::new(T::lit(rng.gen_range(-1.0..1.0)), T::lit(rng.gen_range(-1.0..1.0))));
    let v = g.orthonormalize_columns();
    let d: Vec<T> = (0..m).map(|j| if m == 1 { T::zero() } else { T::lit(-1.0 + 2.0 * j as f64 / (m - 1) as f64) }).collect();
    v.matmul(&CMat::from_real_diag(&d)).mul_adjoint(&v)
}

/// Zeroes the entries of `k` that would break commutation with diagonal twists.
fn mask_to_commutant<T: Real>(k: &CMat<T>, twist: &[CMat<T>]) -> Result<CMat<T>> {
    let m = k.nrows();
    let tol = T::lit(1e-12);
    for g in twist {
        for i in 0..m {
            for j in 0..m {
                if i != j && g[(i, j)].norm() > tol {
                    return Err(FrameError::InvalidInput("only diagonal twists are supported".into()));
                }
            }
        }
    }
    Ok(CMat::from_fn(m, m, |i, j| {
        if twist.iter().all(|g| (g[(i, i)] - g[(j, j)]).norm() <= T::lit(1e-10)) {
            k[(i, j)]
        } else {
            Complex::zero()
        }
    }))
}

/// Separates the eigenphases of `α` by right-multiplying with `e^{iεK}`.
///
/// `K` is a fixed seeded Hermitian matrix (restricted to the commutant of the
/// twist when there is one, so the twist rule survives). `ε` doubles from
/// `1e-3` while `ε‖K‖ < π`, which keeps `‖α' - α‖ < 2`.
pub fn nondegenerate_approximation<T: Real>(alpha: &UnitaryFamily<T>, tol_gap: f64, seed: u64) -> Result<NondegenerateApprox<T>> {
    let g0 = min_phase_gap(alpha)?.to_f64_lossy();
    if g0 >= tol_gap {
        return Ok(NondegenerateApprox { alpha: alpha.clone(), eps: 0.0, gap: g0 });
    }
    let mut k = generic_hermitian::<T>(alpha.size(), seed);
    if let Some(tw) = &alpha.twist {
        k = mask_to_commutant(&k, tw)?;
    }
    let kn = k.norm2_hermitian()?.to_f64_lossy();
    if kn == 0.0 {
        return Err(FrameError::NoGenericPerturbation { best_gap: g0, required: tol_gap });
    }
    let k = k.scale_real(T::lit(1.0 / kn));
    let kd = k.eigh()?;
    let mut best = g0;
    let mut eps = 1e-3;
    while eps < std::f64::consts::PI {
        let e = kd.apply(|x| cis(T::lit(eps) * x));
        let a = alpha.map(|m| m.matmul(&e));
        let g = min_phase_gap(&a)?.to_f64_lossy();
        if g >= tol_gap {
            return Ok(NondegenerateApprox { alpha: a, eps, gap: g });
        }
        best = best.max(g);
        eps *= 2.0;
    }
    Err(FrameError::NoGenericPerturbation { best_gap: best, required: tol_gap })
}

/// Continuous lifts of the eigenphases of a non-degenerate unitary family.
#[derive(Clone, Debug)]
pub struct PhaseFields<T> {
    pub grid: KGrid,
    /// `phases[k][branch]`, real-valued and periodic; branch 0 is the lowest at the origin.
    pub phases: Vec<Vec<T>>,
    pub min_gap: T,
}

struct Spectral<T> {
    phases: Vec<T>,
    vectors: CMat<T>,
}

/// Matches the eigenbranches of `to` against those of `from`; `labels[b]` is
/// the index of branch `b` in the sorted spectrum.
///
/// Eigenvalues of two unitaries can be paired within `‖U - V‖`, so when the
/// step is below half the gap, continuity preserves the cyclic order of the
/// sorted phases. The match is the cyclic shift with the smallest largest
/// chord; eigenvector overlaps only break ties.
fn match_branches<T: Real>(from: &Spectral<T>, labels: &[usize], lifts: &[T], to: &Spectral<T>, to_vecs: &CMat<T>) -> (Vec<usize>, Vec<T>) {
    let m = labels.len();
    let ov = from.vectors.adjoint_mul(to_vecs);
    let tie = T::lit(1e-12);
    let mut best: Option<(usize, T, T)> = None;
    for shift in 0..m {
        let worst = (0..m).map(|j| chord(from.phases[j], to.phases[(j + shift) % m])).fold(T::zero(), T::max);
        let overlap = (0..m).fold(T::zero(), |acc, j| acc + ov[(j, (j + shift) % m)].norm());
        let better = match best {
            None => true,
            Some((_, w, o)) => worst < w - tie || ((worst - w).abs() <= tie && overlap > o),
        };
        if better {
            best = Some((shift, worst, overlap));
        }
    }
    let shift = best.map_or(0, |b| b.0);
    let lab: Vec<usize> = labels.iter().map(|&j| (j + shift) % m).collect();
    let lift = (0..m).map(|b| lifts[b] + wrap_angle(to.phases[lab[b]] - from.phases[labels[b]])).collect();
    (lab, lift)
}

/// Tracks eigenphases by cyclic phase matching along a spanning tree of the
/// grid, then checks every edge, wraps included, for branch swaps and windings.
pub fn track_eigenphases<T: Real>(alpha: &UnitaryFamily<T>) -> Result<PhaseFields<T>> {
    let grid = &alpha.grid;
    let m = alpha.size();
    let eig: Vec<Spectral<T>> = alpha
        .mats
        .iter()
        .map(|u| eig_unitary(u).map(|(phases, vectors)| Spectral { phases, vectors }))
        .collect::<Result<_>>()?;
    let min_gap = eig.iter().map(|s| circular_min_gap(&s.phases)).fold(two_pi::<T>(), T::min);
    let n = grid.len();
    let mut labels = vec![Vec::new(); n];
    let mut lifts = vec![Vec::new(); n];
    labels[0] = (0..m).collect();
    lifts[0] = eig[0].phases.clone();
    for f in 1..n {
        let idx = grid.multi(f);
        let axis = (0..idx.len()).rev().find(|&a| idx[a] > 0).unwrap();
        let (p, _) = grid.shift(f, axis, -1);
        let (l, x) = match_branches(&eig[p], &labels[p], &lifts[p], &eig[f], &eig[f].vectors);
        labels[f] = l;
        lifts[f] = x;
    }
    let span = two_pi::<T>();
    for (f, x) in lifts.iter().enumerate() {
        let ordered = x.windows(2).all(|w| w[0] < w[1]);
        if !ordered || (m > 1 && x[m - 1] - x[0] >= span) {
            return Err(FrameError::NotConverged(format!(
                "eigenphase branches lost their order at k-index {:?}; grid too coarse for the gap",
                grid.multi(f)
            )));
        }
    }
    for f in 0..n {
        for axis in 0..grid.dim() {
            let (nb, wraps) = grid.shift(f, axis, 1);
            let vecs = match (axis == 0 && wraps != 0, alpha.twist_at(nb)) {
                (true, Some(g)) => g.matmul(&eig[nb].vectors),
                _ => eig[nb].vectors.clone(),
            };
            let (l, x) = match_branches(&eig[f], &labels[f], &lifts[f], &eig[nb], &vecs);
            for b in 0..m {
                let stored = labels[nb].iter().position(|&i| i == l[b]).unwrap();
                let winding = ((x[b] - lifts[nb][stored]).to_f64_lossy() / (2.0 * std::f64::consts::PI)).round() as i64;
                if stored != b || winding != 0 {
                    return Err(FrameError::BranchWinding { axis, branch: b, winding });
                }
            }
        }
    }
    Ok(PhaseFields { grid: grid.clone(), phases: lifts, min_gap })
}

/// How a [`TwoStepLog`] was obtained.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum LogRoute {
    /// All spectra avoid a common angle; `h_1` is a single logarithm cut there and `h_2 = 0`.
    CommonGap { cut: f64 },
    /// The generic two-step route through a non-degenerate approximant.
    TwoStep { eps: f64, gap: f64 },
}

/// `α = e^{i h_1} e^{i h_2}` with both factors continuous and (twisted-)periodic.
#[derive(Clone, Debug)]
pub struct TwoStepLog<T> {
    pub h1: HermitianFamily<T>,
    pub h2: HermitianFamily<T>,
    pub route: LogRoute,
}

impl<T: Real> TwoStepLog<T> {
    /// Largest `‖e^{i h_1} e^{i h_2} - α‖_max`.
    pub fn residual(&self, alpha: &UnitaryFamily<T>) -> Result<T> {
        let mut r = T::zero();
        for (f, a) in alpha.mats.iter().enumerate() {
            let u = self.h1.mats[f].exp_i(T::one())?.matmul(&self.h2.mats[f].exp_i(T::one())?);
            r = r.max((&u - a).max_abs());
        }
        Ok(r)
    }
}

/// Logarithm with its branch cut at angle `cut`: spectrum in `(cut - 2π, cut)`.
fn log_with_cut<T: Real>(u: &CMat<T>, cut: T) -> Result<CMat<T>> {
    let shift = cut - T::PI();
    let h = cayley_log_matrix(&u.scale(cis(-shift)))?;
    Ok(&h + &CMat::identity(u.nrows()).scale_real(shift))
}

/// Largest operator-norm step between neighbouring samples, twist included.
fn max_step<T: Real>(alpha: &UnitaryFamily<T>) -> Result<T> {
    let mut s = T::zero();
    for f in 0..alpha.grid.len() {
        for axis in 0..alpha.grid.dim() {
            let (_, nb) = alpha.neighbor(f, axis, 1);
            s = s.max((&nb - &alpha.mats[f]).norm2()?);
        }
    }
    Ok(s)
}

/// Centre of a gap shared by every spectrum, preferring `π`.
///
/// The gap must have half-width `hw ≥ margin` with `sin hw` above the largest
/// neighbour step. An eigenphase jumping over the gap moves by a chord of at
/// least `2 sin hw`, so the factor two keeps sampled crossings detectable.
fn common_cut<T: Real>(alpha: &UnitaryFamily<T>, margin: f64) -> Result<Option<T>> {
    let mut all = Vec::new();
    for u in &alpha.mats {
        all.extend(eig_unitary(u)?.0);
    }
    if all.is_empty() {
        return Ok(Some(T::PI()));
    }
    let step = max_step(alpha)?;
    let two = T::lit(2.0);
    let ok = |hw: T| hw >= T::lit(margin) && hw.min(T::FRAC_PI_2()).sin() > step;
    let dist_pi = all.iter().map(|&p| T::PI() - p.abs()).fold(T::infinity(), T::min);
    if ok(dist_pi) {
        return Ok(Some(T::PI()));
    }
    all.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut best = (all[0] + two_pi::<T>() - all[all.len() - 1], all[all.len() - 1]);
    for w in all.windows(2) {
        if w[1] - w[0] > best.0 {
            best = (w[1] - w[0], w[0]);
        }
    }
    if ok(best.0 / two) {
        Ok(Some(wrap_angle(best.1 + best.0 / two)))
    } else {
        Ok(None)
    }
}

fn require_zero_degrees<T: Real>(alpha: &UnitaryFamily<T>) -> Result<()> {
    for (axis, d) in degrees(alpha)?.into_iter().enumerate() {
        if d != 0 {
            return Err(FrameError::NonzeroDegree { axis, degree: d });
        }
    }
    Ok(())
}

/// Two-step logarithm of a null-homotopic unitary family on a grid of dimension at most 2.
///
/// When all spectra share a gap the result is a single logarithm. Otherwise
/// `α' = α e^{iεK}` is non-degenerate, `α' α^{-1} = e^{i h''}` by the Cayley
/// logarithm, and `α' = e^{i h'}` with the branch cut following the tracked
/// lowest eigenphase, so `α = e^{-i h''} e^{i h'}`.
pub fn two_step_log<T: Real>(alpha: &UnitaryFamily<T>, opts: &FrameOptions) -> Result<TwoStepLog<T>> {
    if alpha.grid.dim() > 2 {
        return Err(FrameError::InvalidInput("two-step logarithm needs a grid of dimension at most 2".into()));
    }
    require_zero_degrees(alpha)?;
    let zero = alpha.map(|m| CMat::zeros(m.nrows(), m.ncols()));
    if let Some(cut) = common_cut(alpha, opts.common_gap_margin)? {
        let h1 = alpha.try_map(|_, u| log_with_cut(u, cut))?;
        if max_step(&h1)? < T::FRAC_PI_2() {
            return Ok(TwoStepLog { h1, h2: zero, route: LogRoute::CommonGap { cut: cut.to_f64_lossy() } });
        }
    }
    let mut tol = opts.tol_gap;
    let approx = loop {
        match nondegenerate_approximation(alpha, tol, opts.seed) {
            Ok(a) => break a,
            Err(FrameError::NoGenericPerturbation { .. }) if tol / 2.0 >= opts.min_gap => tol /= 2.0,
            Err(e) => return Err(e),
        }
    };
    let ap = &approx.alpha;
    let hpp = ap.try_map(|f, u| cayley_log_matrix(&u.mul_adjoint(&alpha.mats[f])))?;
    let fields = track_eigenphases(ap)?;
    let g = fields.min_gap;
    let hp = ap.try_map(|f, u| {
        let cut = fields.phases[f][0] + g / T::lit(100.0) + T::PI();
        let h = cayley_log_matrix(&u.scale(cis(-cut)))?;
        Ok(&h + &CMat::identity(u.nrows()).scale_real(cut))
    })?;
    let h1 = hpp.map(|m| m.scale_real(-T::one()));
    Ok(TwoStepLog { h1, h2: hp, route: LogRoute::TwoStep { eps: approx.eps, gap: g.to_f64_lossy() } })
}

/// Unitary interpolant with `β(0) = 1` and `α_1 = β(k_0) α_0 β(k_0 + 1)^{-1}`.
///
/// On `[0, 1]` it is `e^{i k_0 g_1} e^{i k_0 g_2}` for a two-step logarithm of
/// `α_1^{-1} α_0`; beyond that it is continued by the matching rule.
#[derive(Clone, Debug)]
pub struct BetaInterpolant<T> {
    pub alpha0: UnitaryFamily<T>,
    pub alpha1: UnitaryFamily<T>,
    pub log: TwoStepLog<T>,
    g1: Vec<Eigh<T>>,
    g2: Vec<Eigh<T>>,
}

impl<T: Real> BetaInterpolant<T> {
    /// `β(t)` at face point `f` for `t ∈ [0, 1]`.
    pub fn at(&self, t: T, f: usize) -> CMat<T> {
        let a = self.g1[f].apply(|x| cis(t * x));
        let b = self.g2[f].apply(|x| cis(t * x));
        a.matmul(&b)
    }

    /// `β(t)` for any `t ≥ 0`, continued by `β(t + 1) = α_1^{-1} β(t) α_0`.
    pub fn at_extended(&self, t: T, f: usize) -> CMat<T> {
        let whole = t.floor().to_usize().unwrap_or(0);
        let mut b = self.at(t - T::from_usize(whole).unwrap(), f);
        for _ in 0..whole {
            b = self.alpha1.mats[f].adjoint_mul(&b).matmul(&self.alpha0.mats[f]);
        }
        b
    }

    /// Largest `‖α_1 - β(0) α_0 β(1)^{-1}‖_max`, with `β(1)` from the exponentials.
    pub fn matching_residual(&self) -> T {
        (0..self.alpha0.mats.len())
            .map(|f| (&self.alpha1.mats[f] - &self.alpha0.mats[f].mul_adjoint(&self.at(T::one(), f))).max_abs())
            .fold(T::zero(), T::max)
    }

    pub fn unitarity_defect(&self, samples: usize) -> T {
        let mut d = T::zero();
        for f in 0..self.alpha0.mats.len() {
            for j in 0..=samples {
                d = d.max(self.at(T::from_usize(j).unwrap() / T::from_usize(samples).unwrap(), f).unitarity_defect());
            }
        }
        d
    }
}

/// Builds `β` for `α_0, α_1` of equal degrees (and equal twists).
pub fn beta_interpolant<T: Real>(alpha0: &UnitaryFamily<T>, alpha1: &UnitaryFamily<T>, opts: &FrameOptions) -> Result<BetaInterpolant<T>> {
    if alpha0.grid != alpha1.grid || alpha0.size() != alpha1.size() {
        return Err(FrameError::InvalidInput("families live on different grids or fibers".into()));
    }
    let (d0, d1) = (degrees(alpha0)?, degrees(alpha1)?);
    for axis in 0..d0.len() {
        if d0[axis] != d1[axis] {
            return Err(FrameError::DegreeMismatch { axis, left: d0[axis], right: d1[axis] });
        }
    }
    let prod = alpha1.try_map(|f, a1| Ok(a1.adjoint_mul(&alpha0.mats[f])))?;
    let log = two_step_log(&prod, opts)?;
    let g1 = log.h1.mats.iter().map(|h| h.eigh()).collect::<Result<_>>()?;
    let g2 = log.h2.mats.iter().map(|h| h.eigh()).collect::<Result<_>>()?;
    Ok(BetaInterpolant { alpha0: alpha0.clone(), alpha1: alpha1.clone(), log, g1, g2 })
}

/// Which frame a construction produces.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FrameKind {
    Basis,
    Subframe,
    Parseval,
}

/// Residuals and invariants recorded while building a frame.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct FrameCertificate {
    pub kind: Option<FrameKind>,
    pub grid: Vec<usize>,
    pub fiber: usize,
    pub rank: usize,
    pub count: usize,
    /// Chern numbers keyed by the axis pair, e.g. `"01"`.
    pub chern: BTreeMap<String, i64>,
    /// `max |ξ^*ξ - 1|` over the orthonormal part.
    pub orthonormality_defect: f64,
    /// `max ‖Σ|ξ><ξ| - P‖` (for a subframe, against the projection onto its span).
    pub frame_operator_defect: f64,
    /// `max ‖(1 - P) ξ‖`.
    pub range_defect: f64,
    /// Largest residual of a prescribed jump across `k_0 = 1`.
    pub matching_residual: f64,
    /// Largest jump between neighbouring samples, wraps included.
    pub max_neighbor_jump: f64,
    /// Degrees of `det α` carried by the discarded column of a subframe.
    pub discarded_degrees: Vec<i64>,
    /// Chern numbers of the doubled family used for a Parseval frame.
    pub doubled_chern: BTreeMap<String, i64>,
    /// Logarithm routes taken by the β-interpolants (outermost first).
    pub log_routes: Vec<LogRoute>,
    pub transport_defect: f64,
}

fn chern_map<T: Real>(fam: &ProjectionFamily<T>) -> Result<BTreeMap<String, i64>> {
    if fam.grid.dim() < 2 {
        return Ok(BTreeMap::new());
    }
    Ok(chern_numbers(fam)?.into_iter().map(|((i, j), c)| (format!("{i}{j}"), c)).collect())
}

/// Transported frame corrected by `β`, with its jump `α_0` across `k_0 = 1`.
struct Reduced<T> {
    frame: BlochFrame<T>,
    alpha: UnitaryFamily<T>,
    alpha0: UnitaryFamily<T>,
}

fn reduced_frame<T: Real>(
    fam: &ProjectionFamily<T>,
    face_basis: &BlochFrame<T>,
    face_twist: Option<Vec<CMat<T>>>,
    reduce: bool,
    opts: &FrameOptions,
    cert: &mut FrameCertificate,
) -> Result<Reduced<T>> {
    let lines: TransportLines<T> = parallel_transport(fam, 0)?;
    cert.transport_defect = cert.transport_defect.max(lines.intertwining_defect(fam).to_f64_lossy());
    let alpha = obstruction_matrix(&lines, face_basis, face_twist)?;
    let m = alpha.size();
    let alpha0 = if reduce {
        alpha.map(|a| {
            let mut d = CMat::identity(m);
            if m > 0 {
                let det = a.det();
                d[(0, 0)] = det / det.norm();
            }
            d
        })
    } else {
        alpha.map(|_| CMat::identity(m))
    };
    let beta = beta_interpolant(&alpha0, &alpha, opts)?;
    cert.log_routes.push(beta.log.route.clone());
    let grid = &fam.grid;
    let n0 = grid.size(0);
    let mut vectors = vec![CMat::zeros(0, 0); grid.len()];
    for f in 0..grid.len() {
        let (j, face) = grid.split_axis(f, 0);
        let b = beta.at(T::from_usize(j).unwrap() / T::from_usize(n0).unwrap(), face);
        vectors[f] = lines.samples[f].matmul(&face_basis.vectors[face]).matmul(&b);
    }
    let mut res = T::zero();
    for face in 0..lines.holonomy.len() {
        let xi = &face_basis.vectors[face];
        let end = lines.holonomy[face].matmul(xi).matmul(&beta.at(T::one(), face));
        res = res.max((&end - &xi.matmul(&alpha0.mats[face])).max_abs());
    }
    cert.matching_residual = cert.matching_residual.max(res.to_f64_lossy());
    Ok(Reduced { frame: BlochFrame::new(grid.clone(), vectors)?, alpha, alpha0 })
}

fn point_basis<T: Real>(fam: &ProjectionFamily<T>) -> Result<BlochFrame<T>> {
    let face = fam.face();
    BlochFrame::new(face.grid.clone(), vec![face.range_basis(0)?])
}

fn basis_inner<T: Real>(fam: &ProjectionFamily<T>, opts: &FrameOptions, cert: &mut FrameCertificate) -> Result<BlochFrame<T>> {
    let face_basis = if fam.grid.dim() == 1 { point_basis(fam)? } else { basis_inner(&fam.face(), opts, cert)? };
    Ok(reduced_frame(fam, &face_basis, None, false, opts, cert)?.frame)
}

/// Largest jump between neighbouring samples of the first `cols` columns,
/// wraps included.
fn frame_jump<T: Real>(frame: &BlochFrame<T>, c0: usize) -> T {
    let grid = &frame.grid;
    let mut j = T::zero();
    for f in 0..grid.len() {
        for axis in 0..grid.dim() {
            let (nb, _) = grid.shift(f, axis, 1);
            let a = frame.vectors[f].columns(c0, frame.count - c0);
            let b = frame.vectors[nb].columns(c0, frame.count - c0);
            j = j.max((&a - &b).max_abs());
        }
    }
    j
}

fn finish_certificate<T: Real>(fam: &ProjectionFamily<T>, frame: &BlochFrame<T>, orth: usize, cert: &mut FrameCertificate) {
    cert.grid = fam.grid.sizes().to_vec();
    cert.fiber = fam.dim;
    cert.rank = fam.rank;
    cert.count = frame.count;
    cert.orthonormality_defect = frame.vectors.iter().map(|v| v.columns(0, orth).unitarity_defect()).fold(T::zero(), T::max).to_f64_lossy();
    let mut range = T::zero();
    for (v, p) in frame.vectors.iter().zip(&fam.mats) {
        range = range.max((&p.matmul(v) - v).max_abs());
    }
    cert.range_defect = range.to_f64_lossy();
    cert.max_neighbor_jump = frame_jump(frame, 0).to_f64_lossy();
}

fn require_trivial(chern: &BTreeMap<String, i64>) -> Result<()> {
    for (k, &c) in chern {
        if c != 0 {
            let b = k.as_bytes();
            return Err(FrameError::NonzeroChern { i: (b[0] - b'0') as usize, j: (b[1] - b'0') as usize, value: c });
        }
    }
    Ok(())
}

/// Periodic orthonormal Bloch basis of a family with vanishing Chern numbers.
pub fn construct_bloch_basis<T: Real>(fam: &ProjectionFamily<T>, opts: &FrameOptions) -> Result<(BlochFrame<T>, FrameCertificate)> {
    let mut cert = FrameCertificate { kind: Some(FrameKind::Basis), ..Default::default() };
    cert.chern = chern_map(fam)?;
    require_trivial(&cert.chern)?;
    let frame = basis_inner(fam, opts, &mut cert)?;
    finish_certificate(fam, &frame, frame.count, &mut cert);
    cert.frame_operator_defect = frame.frame_operator_defect(fam).to_f64_lossy();
    Ok((frame, cert))
}

/// Full frame whose first column jumps by `det α` across `k_0 = 1` while
/// the others are periodic; also returns the jump `α̃ = diag(det α, 1, …)`.
fn subframe_full<T: Real>(fam: &ProjectionFamily<T>, opts: &FrameOptions, cert: &mut FrameCertificate) -> Result<Reduced<T>> {
    match fam.grid.dim() {
        1 => reduced_frame(fam, &point_basis(fam)?, None, true, opts, cert),
        2 => {
            let face_basis = basis_inner(&fam.face(), opts, cert)?;
            reduced_frame(fam, &face_basis, None, true, opts, cert)
        }
        3 => {
            // The face frame jumps by α̃_face along k_1, so the obstruction is
            // twisted by its inverse.
            let face = subframe_full(&fam.face(), opts, cert)?;
            let twist = face.alpha0.mats.iter().map(|a| a.adjoint()).collect();
            reduced_frame(fam, &face.frame, Some(twist), true, opts, cert)
        }
        _ => Err(FrameError::InvalidInput("grid dimension must be 1, 2 or 3".into())),
    }
}

/// `m - 1` periodic orthonormal Bloch vectors for a rank-`m` family of any Chern class.
pub fn construct_subframe<T: Real>(fam: &ProjectionFamily<T>, opts: &FrameOptions) -> Result<(BlochFrame<T>, FrameCertificate)> {
    let mut cert = FrameCertificate { kind: Some(FrameKind::Subframe), ..Default::default() };
    cert.chern = chern_map(fam)?;
    if fam.rank == 0 {
        return Err(FrameError::InvalidInput("family of rank 0".into()));
    }
    let red = subframe_full(fam, opts, &mut cert)?;
    cert.discarded_degrees = degrees(&red.alpha)?;
    let frame = red.frame.select(1, fam.rank - 1);
    finish_certificate(fam, &frame, frame.count, &mut cert);
    // The subframe together with the discarded column resolves P.
    cert.frame_operator_defect = red.frame.frame_operator_defect(fam).to_f64_lossy();
    Ok((frame, cert))
}

/// Parseval frame of `m + 1` periodic vectors: a maximal orthonormal subframe
/// plus two vectors extracted from an orthonormal basis of the doubled
/// rank-one complement `P_1(k) ⊕ conj P_1(-k)`.
pub fn construct_parseval_frame<T: Real>(fam: &ProjectionFamily<T>, opts: &FrameOptions) -> Result<(BlochFrame<T>, FrameCertificate)> {
    let (sub, sub_cert) = construct_subframe(fam, opts)?;
    let mut cert = FrameCertificate { kind: Some(FrameKind::Parseval), ..sub_cert };
    let p1 = fam.remove(&sub)?;
    let doubled = p1.direct_sum(&p1.conjugate_reflection())?;
    cert.doubled_chern = chern_map(&doubled)?;
    require_trivial(&cert.doubled_chern)?;
    let mut inner = FrameCertificate::default();
    let psi = basis_inner(&doubled, opts, &mut inner)?;
    cert.log_routes.extend(inner.log_routes);
    cert.matching_residual = cert.matching_residual.max(inner.matching_residual);
    cert.transport_defect = cert.transport_defect.max(inner.transport_defect);
    let n = fam.dim;
    let vectors = sub
        .vectors
        .iter()
        .zip(&psi.vectors)
        .map(|(s, p)| CMat::hstack(s, &p.block(0, 0, n, 2)))
        .collect();
    let frame = BlochFrame::new(fam.grid.clone(), vectors)?;
    finish_certificate(fam, &frame, sub.count, &mut cert);
    cert.frame_operator_defect = frame.frame_operator_defect(fam).to_f64_lossy();
    Ok((frame, cert))
}

/// Dispatch on [`FrameKind`].
pub fn construct_frame<T: Real>(fam: &ProjectionFamily<T>, kind: FrameKind, opts: &FrameOptions) -> Result<(BlochFrame<T>, FrameCertificate)> {
    match kind {
        FrameKind::Basis => construct_bloch_basis(fam, opts),
        FrameKind::Subframe => construct_subframe(fam, opts),
        FrameKind::Parseval => construct_parseval_frame(fam, opts),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::families::exp_i_family;
    use crate::scalar::cis;

    const TP: f64 = 2.0 * std::f64::consts::PI;

    fn two_band_ham(mu: f64, k: &[f64]) -> CMat<f64> {
        let (x, y, z) = ((TP * k[0]).sin(), (TP * k[1]).sin(), mu - (TP * k[0]).cos() - (TP * k[1]).cos());
        CMat::from_fn(2, 2, |i, j| match (i, j) {
            (0, 0) => Complex::new(z, 0.0),
            (1, 1) => Complex::new(-z, 0.0),
            (0, 1) => Complex::new(x, -y),
            _ => Complex::new(x, y),
        })
    }

    fn two_band(mu: f64, n: usize) -> ProjectionFamily<f64> {
        ProjectionFamily::from_hamiltonian_fn(KGrid::new(&[n, n]).unwrap(), |k| two_band_ham(mu, k), 0, 1, 1e-6).unwrap()
    }

    fn herm(m: usize, f: impl Fn(usize, usize) -> Complex<f64>) -> CMat<f64> {
        CMat::from_fn(m, m, |i, j| if i <= j { f(i, j) } else { f(j, i).conj() }).hermitian_part()
    }

    #[test]
    fn nondegenerate_input_is_kept() {
        let g = KGrid::new(&[8]).unwrap();
        let a = UnitaryFamily::periodic(g, vec![CMat::from_diag(&[cis(0.3), cis(1.9)]); 8]);
        let out = nondegenerate_approximation(&a, 0.25, 1).unwrap();
        assert_eq!(out.eps, 0.0);
        assert_eq!(out.alpha.distance(&a), 0.0);
    }

    #[test]
    fn identity_is_split_by_generic_perturbation() {
        let g = KGrid::new(&[4, 4]).unwrap();
        let a = UnitaryFamily::periodic(g, vec![CMat::<f64>::identity(3); 16]);
        let out = nondegenerate_approximation(&a, 0.25, 7).unwrap();
        assert!(out.gap >= 0.25);
        // ‖K‖ = 1, so ‖α' - 1‖ ≤ ε.
        let d = (&out.alpha.mats[0] - &CMat::identity(3)).norm2().unwrap();
        assert!(d <= out.eps + 1e-12 && d < 2.0);
    }

    #[test]
    fn tracking_recovers_designed_phases() {
        let n = 64;
        let g = KGrid::new(&[n]).unwrap();
        let phase = |k: f64| [0.5 + 0.2 * (TP * k).sin(), 2.0 + 0.1 * (TP * k).cos()];
        // Conjugate by a fixed unitary so the eigenvectors are not the standard basis.
        let v = generic_hermitian::<f64>(2, 3).exp_i(0.7).unwrap();
        let mats = (0..n)
            .map(|i| {
                let p = phase(i as f64 / n as f64);
                v.matmul(&CMat::from_diag(&[cis(p[0]), cis(p[1])])).mul_adjoint(&v)
            })
            .collect();
        let fields = track_eigenphases(&UnitaryFamily::periodic(g, mats)).unwrap();
        for i in 0..n {
            let p = phase(i as f64 / n as f64);
            assert!((fields.phases[i][0] - p[0]).abs() < 1e-10);
            assert!((fields.phases[i][1] - p[1]).abs() < 1e-10);
        }
    }

    fn near_crossing(n: usize) -> UnitaryFamily<f64> {
        // Eigenphases ±sqrt(a² + δ²) with a = 0.02 sin 2πk, δ = 0.005 (gap 1e-2).
        let g = KGrid::new(&[n]).unwrap();
        let mats = (0..n)
            .map(|i| {
                let a = 0.02 * (TP * i as f64 / n as f64).sin();
                herm(2, |r, c| match (r, c) {
                    (0, 0) => Complex::new(a, 0.0),
                    (1, 1) => Complex::new(-a, 0.0),
                    _ => Complex::new(0.005, 0.0),
                })
                .exp_i(1.0)
                .unwrap()
            })
            .collect();
        UnitaryFamily::periodic(g, mats)
    }

    #[test]
    fn tracking_through_near_crossing_matches_dense_reference() {
        let coarse = track_eigenphases(&near_crossing(64)).unwrap();
        let fine = track_eigenphases(&near_crossing(1024)).unwrap();
        for i in 0..64 {
            for b in 0..2 {
                assert!((coarse.phases[i][b] - fine.phases[16 * i][b]).abs() < 1e-12);
            }
            assert!(coarse.phases[i][0] < 0.0 && coarse.phases[i][1] > 0.0);
        }
    }

    #[test]
    fn two_step_log_of_identity_is_zero() {
        let g = KGrid::new(&[8, 8]).unwrap();
        let a = UnitaryFamily::periodic(g, vec![CMat::<f64>::identity(2); 64]);
        let log = two_step_log(&a, &FrameOptions::default()).unwrap();
        assert!(log.h1.mats.iter().chain(&log.h2.mats).all(|h| h.max_abs() < 1e-14));
    }

    #[test]
    fn two_step_log_of_counter_winding_pair() {
        // diag(e^{2πik}, e^{-2πik}): degree 0 but the spectrum sweeps the whole circle.
        let n = 64;
        let g = KGrid::new(&[n]).unwrap();
        let mats = (0..n).map(|i| {
            let t = TP * i as f64 / n as f64;
            CMat::from_diag(&[cis(t), cis(-t)])
        });
        let a = UnitaryFamily::periodic(g, mats.collect());
        let log = two_step_log(&a, &FrameOptions::default()).unwrap();
        assert!(matches!(log.route, LogRoute::TwoStep { .. }));
        assert!(log.residual(&a).unwrap() < 1e-10);
        // Continuous on the grid: no jump comes near a 2π branch change.
        assert!(log.h1.max_neighbor_jump() < 0.1 && log.h2.max_neighbor_jump() < 2.5);
    }

    #[test]
    fn two_step_log_rejects_winding() {
        let n = 32;
        let g = KGrid::new(&[n]).unwrap();
        let mats = (0..n).map(|i| CMat::from_diag(&[cis(2.0 * TP * i as f64 / n as f64), cis(0.0)])).collect();
        let err = two_step_log(&UnitaryFamily::periodic(g, mats), &FrameOptions::default()).unwrap_err();
        assert!(matches!(err, FrameError::NonzeroDegree { axis: 0, degree: 2 }));
    }

    #[test]
    fn twisted_two_step_log_respects_twist() {
        // H(k2, k3) = g H0 g^{-1} with g = diag(e^{iθ(k3) k2}, 1) is twisted by γ = diag(e^{iθ}, 1).
        let n = 32;
        let grid = KGrid::new(&[n, n]).unwrap();
        let theta = |k3: f64| 0.8 + 0.3 * (TP * k3).cos();
        let twist: Vec<CMat<f64>> = (0..n).map(|j| CMat::from_diag(&[cis(theta(j as f64 / n as f64)), cis(0.0)])).collect();
        let mats: Vec<CMat<f64>> = (0..grid.len())
            .map(|f| {
                let k = grid.k::<f64>(f);
                let h0 = herm(2, |r, c| match (r, c) {
                    (0, 0) => Complex::new(2.5 * (TP * k[0]).cos(), 0.0),
                    (1, 1) => Complex::new(-2.5 * (TP * k[0]).cos() + 0.3 * (TP * k[1]).sin(), 0.0),
                    _ => Complex::new(0.4, 0.2 * (TP * k[1]).sin()),
                });
                let gm = CMat::from_diag(&[cis(theta(k[1]) * k[0]), cis(0.0)]);
                gm.matmul(&h0).mul_adjoint(&gm).exp_i(1.0).unwrap()
            })
            .collect();
        let a = UnitaryFamily::twisted(grid, mats, twist);
        assert!(a.max_neighbor_jump() < 1.5);
        // A huge margin disables the single-logarithm shortcut.
        let opts = FrameOptions { common_gap_margin: 10.0, ..Default::default() };
        let log = two_step_log(&a, &opts).unwrap();
        assert!(log.residual(&a).unwrap() < 1e-9);
        assert!(matches!(log.route, LogRoute::TwoStep { .. }));
        // Honouring the twist, wrapped neighbours are no farther apart than interior ones.
        for h in [&log.h1, &log.h2] {
            let (mut inner, mut wrapped) = (0.0f64, 0.0f64);
            for f in 0..h.grid.len() {
                let (nb, m) = h.neighbor(f, 0, 1);
                let j = (&m - &h.mats[f]).max_abs();
                if nb < f { wrapped = wrapped.max(j) } else { inner = inner.max(j) }
            }
            assert!(wrapped <= inner + 1e-12 && inner < std::f64::consts::PI, "{inner} {wrapped}");
        }
    }

    #[test]
    fn beta_of_equal_identities_is_identity() {
        let g = KGrid::new(&[8]).unwrap();
        let one = UnitaryFamily::periodic(g, vec![CMat::<f64>::identity(2); 8]);
        let b = beta_interpolant(&one, &one, &FrameOptions::default()).unwrap();
        assert!((&b.at(0.37, 3) - &CMat::identity(2)).max_abs() < 1e-15);
        assert!(b.matching_residual() < 1e-15);
    }

    #[test]
    fn beta_matches_small_exponential() {
        let n = 32;
        let g = KGrid::new(&[n]).unwrap();
        let h = HermitianFamily::periodic(
            g.clone(),
            (0..n)
                .map(|i| {
                    let t = TP * i as f64 / n as f64;
                    herm(3, |r, c| Complex::new(0.3 * ((r + 2 * c) as f64 + t).sin(), 0.2 * (t * (r as f64 + 1.0)).cos() * (r != c) as i32 as f64))
                })
                .collect(),
        );
        let a1 = exp_i_family(&h, 1.0).unwrap();
        let one = UnitaryFamily::periodic(g, vec![CMat::<f64>::identity(3); n]);
        let b = beta_interpolant(&one, &a1, &FrameOptions::default()).unwrap();
        assert!(b.matching_residual() < 1e-10);
        assert!(b.unitarity_defect(8) < 1e-12);
        // Continuation by the matching rule: β(1 + t) = α_1^{-1} β(t) α_0.
        let lhs = b.at_extended(1.25, 5);
        let rhs = a1.mats[5].adjoint_mul(&b.at(0.25, 5));
        assert!((&lhs - &rhs).max_abs() < 1e-14);
    }

    #[test]
    fn constant_family_basis_is_constant() {
        let g = KGrid::new(&[8, 8]).unwrap();
        let p = CMat::<f64>::from_real_diag(&[1.0, 0.0, 1.0]);
        let fam = ProjectionFamily::new(g, vec![p; 64]).unwrap();
        let (frame, cert) = construct_bloch_basis(&fam, &FrameOptions::default()).unwrap();
        assert_eq!(frame.count, 2);
        assert!(cert.max_neighbor_jump < 1e-14);
        assert!(cert.orthonormality_defect < 1e-14 && cert.frame_operator_defect < 1e-14);
    }

    #[test]
    fn basis_for_rank_two_loop() {
        // Rank-2 projection rotating inside C^4 along a loop.
        let n = 64;
        let g = KGrid::new(&[n]).unwrap();
        let fam = ProjectionFamily::from_hamiltonian_fn(
            g,
            |k| {
                let t = TP * k[0];
                herm(4, |r, c| {
                    if r == c {
                        Complex::new([-1.0, -0.8, 1.0, 1.2][r] + 0.3 * (t + r as f64).sin(), 0.0)
                    } else {
                        Complex::new(0.4 * (t * (r + c) as f64).cos(), 0.3 * (t + c as f64).sin())
                    }
                })
            },
            0,
            2,
            1e-3,
        )
        .unwrap();
        let (frame, cert) = construct_bloch_basis(&fam, &FrameOptions::default()).unwrap();
        assert_eq!(frame.count, 2);
        assert!(cert.orthonormality_defect < 1e-10 && cert.range_defect < 1e-10 && cert.frame_operator_defect < 1e-10);
        assert!(cert.matching_residual < 1e-10);
        assert!(cert.max_neighbor_jump < 0.5);
    }

    #[test]
    fn basis_for_trivial_two_band_and_rejection_for_chern() {
        let (frame, cert) = construct_bloch_basis(&two_band(3.0, 32), &FrameOptions::default()).unwrap();
        assert_eq!(frame.count, 1);
        assert!(cert.orthonormality_defect < 1e-10 && cert.frame_operator_defect < 1e-10);
        assert!(cert.max_neighbor_jump < 0.5);
        let err = construct_bloch_basis(&two_band(1.0, 32), &FrameOptions::default()).unwrap_err();
        assert!(matches!(err, FrameError::NonzeroChern { i: 0, j: 1, .. }));
    }

    #[test]
    fn subframe_of_rank_one_is_empty() {
        let (frame, cert) = construct_subframe(&two_band(1.0, 16), &FrameOptions::default()).unwrap();
        assert_eq!(frame.count, 0);
        assert_eq!(cert.discarded_degrees.len(), 1);
        assert_eq!(cert.discarded_degrees[0].abs(), 1);
    }

    #[test]
    fn subframe_of_stacked_chern_family() {
        let p = two_band(1.0, 32).direct_sum(&two_band(3.0, 32)).unwrap();
        let (frame, cert) = construct_subframe(&p, &FrameOptions::default()).unwrap();
        assert_eq!(frame.count, 1);
        assert!(cert.orthonormality_defect < 1e-10 && cert.range_defect < 1e-10);
        assert!(cert.frame_operator_defect < 1e-10 && cert.matching_residual < 1e-10);
        assert_eq!(cert.discarded_degrees[0], cert.chern["01"]);
        assert!(cert.max_neighbor_jump < 0.5);
    }

    #[test]
    fn parseval_frame_of_chern_band() {
        let p = two_band(1.0, 32);
        let (frame, cert) = construct_parseval_frame(&p, &FrameOptions::default()).unwrap();
        assert_eq!(frame.count, 2);
        assert!(cert.frame_operator_defect < 1e-10, "{cert:?}");
        assert!(cert.doubled_chern.values().all(|&c| c == 0));
        assert!(cert.max_neighbor_jump < 0.5);
    }
}
