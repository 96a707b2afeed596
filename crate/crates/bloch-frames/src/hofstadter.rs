//! Tight-binding models, Peierls-phase magnetic Hamiltonians, the
//! rational-flux supercell reduction and the algebra of magnetically
//! covariant lattice kernels.

use num_complex::Complex;
use num_traits::Zero;
use rayon::prelude::*;

use crate::error::{FrameError, Result};
use crate::families::ProjectionFamily;
use crate::kspace::{sup_norm, KGrid, LatticeBox};
use crate::linalg::CMat;
use crate::magkernel::{peierls_int, MagneticKernel};
use crate::scalar::{cis, two_pi, Real};

/// Peierls phase `φ(x, x') = (x'_1 x_2 - x'_2 x_1) / 2`.
pub fn peierls<T: Real>(x: [T; 2], xp: [T; 2]) -> T {
    (xp[0] * x[1] - xp[1] * x[0]) / T::lit(2.0)
}


/// Hopping block `𝒯(γ)` for one displacement.
#[derive(Clone, Debug, PartialEq)]
pub struct Hopping<T> {
    pub disp: Vec<i64>,
    pub block: CMat<T>,
}

/// Finite-range tight-binding model: sites of the unit cell and hopping blocks
/// by displacement, with Bloch Hamiltonian `h_k = Σ_γ e^{-i2πk·γ} 𝒯(γ)`.
#[derive(Clone, Debug, PartialEq)]
pub struct HoppingModel<T> {
    pub dim: usize,
    pub sites: Vec<Vec<f64>>,
    pub hoppings: Vec<Hopping<T>>,
}

fn pauli<T: Real>(j: usize) -> CMat<T> {
    let (o, z, i) = (Complex::new(T::one(), T::zero()), Complex::zero(), Complex::new(T::zero(), T::one()));
    match j {
        0 => CMat::from_vec(2, 2, vec![o, z, z, o]),
        1 => CMat::from_vec(2, 2, vec![z, o, o, z]),
        2 => CMat::from_vec(2, 2, vec![z, -i, i, z]),
        _ => CMat::from_vec(2, 2, vec![o, z, z, -o]),
    }
}

fn kron<T: Real>(a: &CMat<T>, b: &CMat<T>) -> CMat<T> {
    let (ra, ca, rb, cb) = (a.nrows(), a.ncols(), b.nrows(), b.ncols());
    CMat::from_fn(ra * rb, ca * cb, |i, j| a[(i / rb, j / cb)] * b[(i % rb, j % cb)])
}

fn unit(dim: usize, axis: usize, s: i64) -> Vec<i64> {
    let mut v = vec![0; dim];
    v[axis] = s;
    v
}

impl<T: Real> HoppingModel<T> {
    /// Validates shapes, duplicate displacements and `𝒯(-γ) = 𝒯(γ)^*`.
    pub fn new(dim: usize, sites: Vec<Vec<f64>>, hoppings: Vec<Hopping<T>>) -> Result<Self> {
        if !(1..=3).contains(&dim) {
            return Err(FrameError::InvalidInput(format!("model dimension {dim} not in 1..=3")));
        }
        let n = sites.len();
        if n == 0 {
            return Err(FrameError::InvalidInput("model without sites".into()));
        }
        for h in &hoppings {
            if h.disp.len() != dim || h.block.nrows() != n || h.block.ncols() != n {
                return Err(FrameError::InvalidInput(format!("hopping {:?} has the wrong shape", h.disp)));
            }
        }
        let model = Self { dim, sites, hoppings };
        for (i, h) in model.hoppings.iter().enumerate() {
            if model.hoppings[..i].iter().any(|o| o.disp == h.disp) {
                return Err(FrameError::InvalidInput(format!("duplicate hopping {:?}", h.disp)));
            }
            let neg: Vec<i64> = h.disp.iter().map(|x| -x).collect();
            let partner = model.block(&neg).map(|b| b.adjoint());
            let ok = match partner {
                Some(p) => (&p - &h.block).max_abs() <= T::lit(1e-12) * T::one().max(h.block.max_abs()),
                None => h.block.max_abs() == T::zero(),
            };
            if !ok {
                return Err(FrameError::NotHermitian { k: vec![], defect: h.block.max_abs().to_f64_lossy() });
            }
        }
        Ok(model)
    }

    pub fn fiber_dim(&self) -> usize {
        self.sites.len()
    }

    /// Largest `‖γ‖_∞` with a nonzero block.
    pub fn radius(&self) -> usize {
        self.hoppings.iter().map(|h| sup_norm(&h.disp)).max().unwrap_or(0)
    }

    pub fn block(&self, disp: &[i64]) -> Option<&CMat<T>> {
        self.hoppings.iter().find(|h| h.disp == disp).map(|h| &h.block)
    }

    pub fn bloch_hamiltonian(&self, k: &[T]) -> CMat<T> {
        let n = self.fiber_dim();
        let mut h = CMat::zeros(n, n);
        for hop in &self.hoppings {
            let dot = hop.disp.iter().zip(k).fold(T::zero(), |s, (&g, &kk)| s + T::lit(g as f64) * kk);
            h += &hop.block.scale(cis(-two_pi::<T>() * dot));
        }
        h.hermitian_part()
    }

    pub fn hamiltonians(&self, grid: &KGrid) -> Vec<CMat<T>> {
        (0..grid.len()).map(|f| self.bloch_hamiltonian(&grid.k::<T>(f))).collect()
    }

    /// Spectral projection onto bands `lo..hi` (counted from the bottom).
    pub fn band_projection(&self, grid: &KGrid, lo: usize, hi: usize) -> Result<ProjectionFamily<T>> {
        if grid.dim() != self.dim {
            return Err(FrameError::InvalidInput(format!("grid of dimension {} for a {}-dimensional model", grid.dim(), self.dim)));
        }
        ProjectionFamily::from_hamiltonians(grid.clone(), &self.hamiltonians(grid), lo, hi, T::lit(1e-6))
    }

    /// Adds `c` to every on-site energy.
    pub fn shifted(&self, c: T) -> Self {
        let mut out = self.clone();
        let n = self.fiber_dim();
        let zero = vec![0; self.dim];
        match out.hoppings.iter_mut().find(|h| h.disp == zero) {
            Some(h) => h.block = &h.block + &CMat::identity(n).scale_real(c),
            None => out.hoppings.push(Hopping { disp: zero, block: CMat::identity(n).scale_real(c) }),
        }
        out
    }

    /// Nearest-neighbour square lattice, `h_k = 2 cos 2πk_1 + 2 cos 2πk_2`.
    pub fn square_lattice() -> Self {
        let one = CMat::identity(1);
        let hoppings = (0..2)
            .flat_map(|a| [1, -1].map(|s| Hopping { disp: unit(2, a, s), block: one.clone() }))
            .collect();
        Self::new(2, vec![vec![0.0, 0.0]], hoppings).expect("valid model")
    }

    /// Two-band model `sin 2πk_1 σ_1 + sin 2πk_2 σ_2 + (μ - cos 2πk_1 - cos 2πk_2) σ_3`.
    pub fn two_band(mu: f64) -> Self {
        let gammas = [pauli::<T>(1), pauli::<T>(2)];
        Self::mass_model(2, mu, &gammas, &pauli::<T>(3), vec![vec![0.0, 0.0], vec![0.0, 0.0]])
    }

    /// Four-band Dirac-type model in `dim` dimensions,
    /// `Σ_j sin 2πk_j Γ_j + (μ - Σ_j cos 2πk_j) Γ_0`.
    pub fn dirac(dim: usize, mu: f64) -> Self {
        let s1 = pauli::<T>(1);
        let gammas: Vec<CMat<T>> = (1..=dim).map(|j| kron(&s1, &pauli::<T>(j))).collect();
        let g0 = kron(&pauli::<T>(3), &pauli::<T>(0));
        Self::mass_model(dim, mu, &gammas, &g0, vec![vec![0.0; dim]; 4])
    }

    fn mass_model(dim: usize, mu: f64, gammas: &[CMat<T>], g0: &CMat<T>, sites: Vec<Vec<f64>>) -> Self {
        let half = T::lit(0.5);
        let mut hoppings = vec![Hopping { disp: vec![0; dim], block: g0.scale_real(T::lit(mu)) }];
        for (a, g) in gammas.iter().enumerate() {
            for s in [1i64, -1] {
                let b = &g.scale(Complex::new(T::zero(), half * T::lit(s as f64))) - &g0.scale_real(half);
                hoppings.push(Hopping { disp: unit(dim, a, s), block: b });
            }
        }
        Self::new(dim, sites, hoppings).expect("valid model")
    }

    fn site2(&self, y: usize) -> [T; 2] {
        let s = &self.sites[y];
        [T::lit(s.first().copied().unwrap_or(0.0)), T::lit(s.get(1).copied().unwrap_or(0.0))]
    }

    /// Covariant kernel `e^{iεφ(γ,γ')} 𝒯(γ - γ')` of a two-dimensional model.
    pub fn kernel(&self, eps: T) -> MagneticKernel<T> {
        MagneticKernel::from_blocks(eps, self.fiber_dim(), self.hoppings.iter().map(|h| (h.disp.as_slice(), &h.block)))
    }

    /// `‖h_k^{(1)} - h_k^{(2)}‖_max` over a grid (for comparing two models).
    pub fn max_fiber_distance(&self, other: &Self, grid: &KGrid) -> T {
        (0..grid.len())
            .map(|f| {
                let k = grid.k::<T>(f);
                (&self.bloch_hamiltonian(&k) - &other.bloch_hamiltonian(&k)).max_abs()
            })
            .fold(T::zero(), T::max)
    }

    /// Realizes the periodic operator with these blocks on an `m × m` torus,
    /// applies the Bloch-Floquet transform and returns the largest entry of
    /// the off-diagonal `k`-blocks together with the largest deviation of the
    /// diagonal blocks from `h_k`.
    pub fn periodic_block_residual(&self, m: usize) -> Result<(T, T)> {
        if self.dim != 2 || m <= 2 * self.radius() {
            return Err(FrameError::InvalidInput("torus too small for the hopping range".into()));
        }
        let q = self.fiber_dim();
        let ncell = m * m;
        let size = ncell * q;
        let wrap = |x: i64| x.rem_euclid(m as i64) as usize;
        let mut h = CMat::zeros(size, size);
        for c in 0..ncell {
            let eta = [(c / m) as i64, (c % m) as i64];
            for hop in &self.hoppings {
                let c2 = wrap(eta[0] - hop.disp[0]) * m + wrap(eta[1] - hop.disp[1]);
                for i in 0..q {
                    for j in 0..q {
                        h[(c * q + i, c2 * q + j)] = h[(c * q + i, c2 * q + j)] + hop.block[(i, j)];
                    }
                }
            }
        }
        let norm = T::one() / T::from_usize(m).unwrap();
        let f = CMat::from_fn(size, size, |r, c| {
            if r % q != c % q {
                return Complex::zero();
            }
            let (k, eta) = (r / q, c / q);
            let ph = ((k / m) * (eta / m) + (k % m) * (eta % m)) as f64 / m as f64;
            cis(-two_pi::<T>() * T::lit(ph)) * norm
        });
        let t = f.matmul(&h).mul_adjoint(&f);
        let grid = KGrid::new(&[m, m])?;
        let (mut off, mut diag) = (T::zero(), T::zero());
        for kr in 0..ncell {
            for kc in 0..ncell {
                let b = t.block(kr * q, kc * q, q, q);
                if kr == kc {
                    diag = diag.max((&b - &self.bloch_hamiltonian(&grid.k::<T>(kr))).max_abs());
                } else {
                    off = off.max(b.max_abs());
                }
            }
        }
        Ok((off, diag))
    }
}

/// Rational flux `b_0 = 2π p / q` with `p, q` coprime and `q ≥ 1`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct MagneticFlux {
    pub p: i64,
    pub q: i64,
}

fn gcd(a: i64, b: i64) -> i64 {
    if b == 0 {
        a.abs()
    } else {
        gcd(b, a % b)
    }
}

impl MagneticFlux {
    pub fn new(p: i64, q: i64) -> Result<Self> {
        if q <= 0 {
            return Err(FrameError::InvalidInput(format!("flux denominator {q} must be positive")));
        }
        if gcd(p, q) != 1 {
            return Err(FrameError::InvalidInput(format!("flux {p}/{q} is not in lowest terms")));
        }
        Ok(Self { p, q })
    }

    /// Parses `"p/q"` (a bare integer means `q = 1`).
    pub fn parse(s: &str) -> Result<Self> {
        let bad = || FrameError::InvalidInput(format!("cannot parse flux {s:?}, expected p/q"));
        let (p, q) = match s.split_once('/') {
            Some((p, q)) => (p.trim().parse().map_err(|_| bad())?, q.trim().parse().map_err(|_| bad())?),
            None => (s.trim().parse().map_err(|_| bad())?, 1),
        };
        Self::new(p, q)
    }

    pub fn b0<T: Real>(&self) -> T {
        two_pi::<T>() * T::lit(self.p as f64) / T::lit(self.q as f64)
    }
}

/// Dense realization of a lattice operator on a box (sites major, fiber minor).
#[derive(Clone, Debug)]
pub struct DenseOperator<T> {
    pub lbox: LatticeBox,
    pub fiber: usize,
    pub matrix: CMat<T>,
}

/// `H_b(γ, y; γ', y') = e^{i b φ(γ + y, γ' + y')} 𝒯(γ - γ'; y, y')` on a box.
pub fn build_hofstadter<T: Real>(model: &HoppingModel<T>, b: T, lbox: LatticeBox) -> Result<DenseOperator<T>> {
    if model.dim != 2 || lbox.dim != 2 {
        return Err(FrameError::InvalidInput("magnetic Hamiltonians need a two-dimensional model".into()));
    }
    let n = model.fiber_dim();
    let size = lbox.len() * n;
    let mut m = CMat::zeros(size, size);
    for (i, g) in lbox.sites().enumerate() {
        for hop in &model.hoppings {
            let gp = [g[0] - hop.disp[0], g[1] - hop.disp[1]];
            let Some(j) = lbox.index(&gp) else { continue };
            for y in 0..n {
                let py = model.site2(y);
                let x = [T::lit(g[0] as f64) + py[0], T::lit(g[1] as f64) + py[1]];
                for yp in 0..n {
                    let pyp = model.site2(yp);
                    let xp = [T::lit(gp[0] as f64) + pyp[0], T::lit(gp[1] as f64) + pyp[1]];
                    m[(i * n + y, j * n + yp)] = cis(b * peierls(x, xp)) * hop.block[(y, yp)];
                }
            }
        }
    }
    Ok(DenseOperator { lbox, fiber: n, matrix: m })
}

/// Eigenvalues of bulk states of an open truncation: the weight an
/// eigenvector puts inside `‖γ‖_∞ ≤ inner`, divided by the share of sites
/// there, must reach `min_weight`. Extended states score about one, states
/// bound to the edge of the box about zero.
pub fn interior_spectrum<T: Real>(op: &DenseOperator<T>, inner: usize, min_weight: f64) -> Result<Vec<f64>> {
    let (vals, vecs) = T::eigh_dense(&op.matrix)?;
    let inside: Vec<bool> = op.lbox.sites().flat_map(|g| std::iter::repeat(sup_norm(&g) <= inner).take(op.fiber)).collect();
    let share = inside.iter().filter(|&&b| b).count() as f64 / inside.len().max(1) as f64;
    let mut out = Vec::new();
    for (j, &e) in vals.iter().enumerate() {
        let w: f64 = (0..vecs.nrows()).filter(|&r| inside[r]).map(|r| vecs[(r, j)].norm_sqr().to_f64_lossy()).sum();
        if w >= min_weight * share {
            out.push(e.to_f64_lossy());
        }
    }
    Ok(out)
}

/// Hausdorff distance between a finite point set and a union of closed intervals.
pub fn hausdorff_to_ranges(points: &[f64], ranges: &[(f64, f64)]) -> f64 {
    if points.is_empty() || ranges.is_empty() {
        return f64::INFINITY;
    }
    let mut pts = points.to_vec();
    pts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let dist_to_ranges = |x: f64| ranges.iter().map(|&(lo, hi)| if x < lo { lo - x } else if x > hi { x - hi } else { 0.0 }).fold(f64::INFINITY, f64::min);
    let dist_to_points = |x: f64| {
        let i = pts.partition_point(|&p| p < x);
        let mut d = f64::INFINITY;
        if i < pts.len() {
            d = d.min(pts[i] - x);
        }
        if i > 0 {
            d = d.min(x - pts[i - 1]);
        }
        d
    };
    let mut h = pts.iter().map(|&x| dist_to_ranges(x)).fold(0.0, f64::max);
    for &(lo, hi) in ranges {
        h = h.max(dist_to_points(lo)).max(dist_to_points(hi));
        // Inside an interval the farthest point from the set is a midpoint.
        for w in pts.windows(2) {
            let mid = 0.5 * (w[0] + w[1]);
            if mid > lo && mid < hi {
                h = h.max(0.5 * (w[1] - w[0]));
            }
        }
    }
    h
}

/// Sorted band energies of a sampled fiber Hamiltonian.
#[derive(Clone, Debug, serde::Serialize, serde::Deserialize)]
pub struct BandScan {
    pub grid: KGrid,
    /// `energies[k][j]`, ascending in `j`.
    pub energies: Vec<Vec<f64>>,
}

impl BandScan {
    pub fn from_hamiltonians<T: Real>(grid: &KGrid, hams: &[CMat<T>]) -> Result<Self> {
        let energies = hams
            .par_iter()
            .map(|h| T::eigvalsh_dense(h).map(|v| v.into_iter().map(|e| e.to_f64_lossy()).collect()))
            .collect::<Result<Vec<Vec<f64>>>>()?;
        Ok(Self { grid: grid.clone(), energies })
    }

    pub fn nbands(&self) -> usize {
        self.energies.first().map(|e| e.len()).unwrap_or(0)
    }

    /// `[min_k E_j, max_k E_j]` for every band.
    pub fn ranges(&self) -> Vec<(f64, f64)> {
        (0..self.nbands())
            .map(|j| self.energies.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), e| (lo.min(e[j]), hi.max(e[j]))))
            .collect()
    }

    /// Open gaps wider than `min_width` between the band ranges, with the
    /// number of bands below each gap.
    pub fn gaps(&self, min_width: f64) -> Vec<(usize, f64, f64)> {
        let r = self.ranges();
        let mut out = Vec::new();
        for j in 1..r.len() {
            let below = r[..j].iter().map(|x| x.1).fold(f64::NEG_INFINITY, f64::max);
            let above = r[j..].iter().map(|x| x.0).fold(f64::INFINITY, f64::min);
            if above - below > min_width {
                out.push((j, below, above));
            }
        }
        out
    }
}

/// Reduction of `H_{b_0 + ε}` at rational `b_0 = 2πp/q` to a magnetic
/// perturbation of a `Z^2`-periodic operator with fiber `C^{qN}`.
#[derive(Clone, Debug)]
pub struct SupercellReduction<T> {
    pub flux: MagneticFlux,
    pub eps: f64,
    pub base: HoppingModel<T>,
    /// Blocks `𝒯_ε(γ)` on the supercell lattice; sites `x + y`, index `x q`-major.
    pub reduced: HoppingModel<T>,
}

/// Builds the supercell model on `Γ_q = qZ × Z` with cell `{0,…,q-1} × 𝒴`:
/// `𝒯_ε(γ) = (-1)^{pγ_1γ_2} e^{i b γ_2 (x_1+x'_1+y_1+y'_1)/2} e^{-i q b γ_1 (x_2+x'_2+y_2+y'_2)/2}
/// e^{i b φ(x+y, x'+y')} 𝒯((qγ_1, γ_2) + x - x'; y, y')` with `b = b_0 + ε`.
pub fn supercell_reduce<T: Real>(model: &HoppingModel<T>, flux: MagneticFlux, eps: f64) -> Result<SupercellReduction<T>> {
    if model.dim != 2 {
        return Err(FrameError::InvalidInput("supercell reduction needs a two-dimensional model".into()));
    }
    let q = flux.q;
    let n = model.fiber_dim();
    let qn = q as usize * n;
    let b = flux.b0::<T>() + T::lit(eps);
    let half = T::lit(0.5);
    let pos = |xi: usize, y: usize| -> [T; 2] {
        let s = model.site2(y);
        [T::lit(xi as f64) + s[0], s[1]]
    };
    let r = model.radius() as i64;
    let r1 = (r + q) / q + 1;
    let mut hoppings = Vec::new();
    for g1 in -r1..=r1 {
        for g2 in -r..=r {
            let mut blk = CMat::zeros(qn, qn);
            let mut any = false;
            for xi in 0..q as usize {
                for xj in 0..q as usize {
                    let disp = [q * g1 + xi as i64 - xj as i64, g2];
                    let Some(t) = model.block(&disp) else { continue };
                    any = true;
                    let sign = if (flux.p * g1 * g2).rem_euclid(2) == 0 { T::one() } else { -T::one() };
                    for y in 0..n {
                        for yp in 0..n {
                            let (a, ap) = (pos(xi, y), pos(xj, yp));
                            let ph = b * half * T::lit(g2 as f64) * (a[0] + ap[0])
                                - T::lit(q as f64) * b * half * T::lit(g1 as f64) * (a[1] + ap[1])
                                + b * peierls(a, ap);
                            blk[(xi * n + y, xj * n + yp)] = cis(ph) * t[(y, yp)] * sign;
                        }
                    }
                }
            }
            if any {
                hoppings.push(Hopping { disp: vec![g1, g2], block: blk });
            }
        }
    }
    let sites = (0..q as usize)
        .flat_map(|xi| {
            (0..n).map(move |y| {
                let s = &model.sites[y];
                vec![xi as f64 + s.first().copied().unwrap_or(0.0), s.get(1).copied().unwrap_or(0.0)]
            })
        })
        .collect();
    let reduced = HoppingModel::new(2, sites, hoppings)?;
    Ok(SupercellReduction { flux, eps, base: model.clone(), reduced })
}

/// Which factor multiplies `ε` in the reduced magnetic phase `e^{iεqφ(γ,γ')}`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PhaseConvention {
    /// `e^{iεφ}`: the supercell factor `q` dropped.
    Unit,
    /// `e^{iεqφ}`: exact equivalence with `H_{b_0+ε}`.
    Supercell,
}

impl<T: Real> SupercellReduction<T> {
    pub fn fiber(&self, k: &[T]) -> CMat<T> {
        self.reduced.bloch_hamiltonian(k)
    }

    /// `e^{iε'φ(γ,γ')} 𝒯_ε(γ - γ')` with `ε'` fixed by the convention.
    pub fn lattice_operator(&self, convention: PhaseConvention) -> MagneticKernel<T> {
        let e = match convention {
            PhaseConvention::Unit => self.eps,
            PhaseConvention::Supercell => self.eps * self.flux.q as f64,
        };
        self.reduced.kernel(T::lit(e))
    }

    /// Value of the conjugating unitary `U_b` at reduced cell `η`, sublattice `x`, site `y`.
    pub fn conjugation_phase(&self, eta: [i64; 2], xi: usize, y: usize) -> Complex<T> {
        let q = self.flux.q;
        let b0 = self.flux.b0::<T>();
        let b = b0 + T::lit(self.eps);
        let et = [T::lit((q * eta[0]) as f64), T::lit(eta[1] as f64)];
        let s = self.base.site2(y);
        let xy = [T::lit(xi as f64) + s[0], s[1]];
        cis(b0 * et[0] * et[1] / T::lit(2.0) + b * peierls(et, xy))
    }

    /// Largest `|[U_b H_b U_b^*](s, s') - H̃_ε(s, s')|` over all pairs of
    /// reduced sites with cells in `‖η‖_∞ ≤ radius`, the exact reduced
    /// operator carrying the phase `e^{iεqφ}`.
    pub fn consistency_residual(&self, radius: i64) -> T {
        let q = self.flux.q;
        let n = self.base.fiber_dim();
        let b = self.flux.b0::<T>() + T::lit(self.eps);
        let eps_q = T::lit(self.eps * q as f64);
        let mut worst = T::zero();
        let rr = self.reduced.radius() as i64;
        for e1 in -radius..=radius {
            for e2 in -radius..=radius {
                for d1 in -rr..=rr {
                    for d2 in -rr..=rr {
                        let (f1, f2) = (e1 - d1, e2 - d2);
                        if f1.abs() > radius || f2.abs() > radius {
                            continue;
                        }
                        let red = self.reduced.block(&[d1, d2]);
                        for xi in 0..q as usize {
                            for xj in 0..q as usize {
                                let g = [q * e1 + xi as i64, e2];
                                let gp = [q * f1 + xj as i64, f2];
                                let disp = [g[0] - gp[0], g[1] - gp[1]];
                                let t = self.base.block(&disp);
                                for y in 0..n {
                                    for yp in 0..n {
                                        let lhs = match t {
                                            Some(t) => {
                                                let (sy, syp) = (self.base.site2(y), self.base.site2(yp));
                                                let x = [T::lit(g[0] as f64) + sy[0], T::lit(g[1] as f64) + sy[1]];
                                                let xp = [T::lit(gp[0] as f64) + syp[0], T::lit(gp[1] as f64) + syp[1]];
                                                self.conjugation_phase([e1, e2], xi, y)
                                                    * cis(b * peierls(x, xp))
                                                    * t[(y, yp)]
                                                    * self.conjugation_phase([f1, f2], xj, yp).conj()
                                            }
                                            None => Complex::zero(),
                                        };
                                        let rhs = match red {
                                            Some(blk) => cis(eps_q * peierls_int::<T>([e1, e2], [f1, f2])) * blk[(xi * n + y, xj * n + yp)],
                                            None => Complex::zero(),
                                        };
                                        worst = worst.max((lhs - rhs).norm());
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        worst
    }
}

/// Point of the flux-energy cloud.
#[derive(Clone, Copy, Debug, serde::Serialize, serde::Deserialize)]
pub struct ButterflyPoint {
    pub p: i64,
    pub q: i64,
    pub flux: f64,
    pub energy: f64,
}

/// Spectra of the reduced fibers on an `nk × nk` grid for every flux `p/q`
/// with `0 ≤ p < q ≤ q_max` in lowest terms.
pub fn butterfly<T: Real>(model: &HoppingModel<T>, q_max: i64, nk: usize) -> Result<Vec<ButterflyPoint>> {
    let grid = KGrid::new(&[nk, nk])?;
    let mut out = Vec::new();
    for q in 1..=q_max {
        for p in 0..q {
            if gcd(p, q) != 1 {
                continue;
            }
            let red = supercell_reduce(model, MagneticFlux::new(p, q)?, 0.0)?;
            let scan = BandScan::from_hamiltonians(&grid, &red.reduced.hamiltonians(&grid))?;
            for e in scan.energies.iter().flatten() {
                out.push(ButterflyPoint { p, q, flux: p as f64 / q as f64, energy: *e });
            }
        }
    }
    Ok(out)
}
