//! Discrete parallel transport and the topological invariants read off from it.

use std::collections::BTreeMap;

use num_complex::Complex;
use num_traits::Zero;

use crate::error::{FrameError, Result};
use crate::families::{ProjectionFamily, UnitaryFamily};
use crate::kspace::{spectral_derivative, BlochFrame, KGrid};
use crate::linalg::CMat;
use crate::scalar::{arg, two_pi, Real};

/// Parallel transport along one axis, started at `k_axis = 0` on every line.
#[derive(Clone, Debug)]
pub struct TransportLines<T> {
    pub grid: KGrid,
    pub axis: usize,
    /// `T(k)` at every grid point.
    pub samples: Vec<CMat<T>>,
    /// Full-loop transport `T(1, 0)` for every point of the face orthogonal to `axis`.
    pub holonomy: Vec<CMat<T>>,
}

/// Transports along `axis` with steps `U = polar(P' P + (1-P')(1-P))`.
///
/// Each step intertwines exactly, `U P U^* = P'`, whenever `‖P' - P‖ < 1`.
pub fn parallel_transport<T: Real>(fam: &ProjectionFamily<T>, axis: usize) -> Result<TransportLines<T>> {
    let grid = &fam.grid;
    let n = grid.size(axis);
    let face = grid.remove_axis(axis);
    let one = CMat::identity(fam.dim);
    let mut samples = vec![CMat::zeros(0, 0); grid.len()];
    let mut holonomy = Vec::with_capacity(face.len());
    for f in 0..face.len() {
        let mut t = one.clone();
        samples[grid.insert_axis(f, axis, 0)] = t.clone();
        for j in 0..n {
            let here = grid.insert_axis(f, axis, j);
            let next = grid.insert_axis(f, axis, (j + 1) % n);
            let p = &fam.mats[here];
            let pn = &fam.mats[next];
            let x = &pn.matmul(p) + &(&one - pn).matmul(&(&one - p));
            let u = x.polar_unitary().map_err(|e| match e {
                FrameError::NotPositive { min_eig, .. } => FrameError::NotPositive { k: grid.multi(here), min_eig },
                other => other,
            })?;
            t = u.matmul(&t);
            if j + 1 < n {
                samples[next] = t.clone();
            } else {
                holonomy.push(t.clone());
            }
        }
    }
    Ok(TransportLines { grid: grid.clone(), axis, samples, holonomy })
}

impl<T: Real> TransportLines<T> {
    /// Largest `‖T(k) P(k_0) T(k)^* - P(k)‖` including the closing holonomy.
    pub fn intertwining_defect(&self, fam: &ProjectionFamily<T>) -> T {
        let face = self.grid.remove_axis(self.axis);
        let mut d = T::zero();
        for f in 0..self.grid.len() {
            let (_, fi) = self.grid.split_axis(f, self.axis);
            let p0 = &fam.mats[self.grid.insert_axis(fi, self.axis, 0)];
            let t = &self.samples[f];
            d = d.max((&t.matmul(p0).mul_adjoint(t) - &fam.mats[f]).max_abs());
        }
        for fi in 0..face.len() {
            let p0 = &fam.mats[self.grid.insert_axis(fi, self.axis, 0)];
            let h = &self.holonomy[fi];
            d = d.max((&h.matmul(p0).mul_adjoint(h) - p0).max_abs());
        }
        d
    }

    pub fn unitarity_defect(&self) -> T {
        self.samples.iter().chain(&self.holonomy).map(|u| u.unitarity_defect()).fold(T::zero(), T::max)
    }
}

/// `α(k')_{ab} = <ξ_a(0,k'), T(1,0) ξ_b(0,k')>` for a basis of the face `k_axis = 0`.
///
/// `twist` is the twist of the result along the first face axis when the face
/// basis is only pseudo-periodic there.
pub fn obstruction_matrix<T: Real>(
    lines: &TransportLines<T>,
    face_basis: &BlochFrame<T>,
    twist: Option<Vec<CMat<T>>>,
) -> Result<UnitaryFamily<T>> {
    let face = lines.grid.remove_axis(lines.axis);
    if face_basis.grid != face {
        return Err(FrameError::InvalidInput("face basis lives on a different grid".into()));
    }
    let mats = face_basis.vectors.iter().zip(&lines.holonomy).map(|(xi, h)| xi.adjoint_mul(&h.matmul(xi))).collect();
    Ok(match twist {
        Some(tw) => UnitaryFamily::twisted(face, mats, tw),
        None => UnitaryFamily::periodic(face, mats),
    })
}

/// Chern number of the plane `(i, j)` from one sample slice.
#[derive(Clone, Debug)]
pub struct ChernSlices {
    pub i: usize,
    pub j: usize,
    /// Raw plaquette sum per slice of the transverse axis (one entry for `d = 2`).
    pub raw: Vec<f64>,
    pub value: i64,
}

fn range_frames<T: Real>(fam: &ProjectionFamily<T>) -> Result<Vec<CMat<T>>> {
    (0..fam.grid.len()).map(|f| fam.range_basis(f)).collect()
}

fn link<T: Real>(a: &CMat<T>, b: &CMat<T>) -> Complex<T> {
    let d = a.adjoint_mul(b).det();
    let n = d.norm();
    if n > T::zero() {
        d / n
    } else {
        Complex::new(T::one(), T::zero())
    }
}

/// Plaquette (link-variable) Chern number of the `(i, j)` plane,
/// `c = (1/2π) Σ arg(U_i(k) U_j(k+e_i) U_i(k+e_j)^* U_j(k)^*)`.
pub fn chern_plaquette<T: Real>(fam: &ProjectionFamily<T>, i: usize, j: usize) -> Result<ChernSlices> {
    chern_plaquette_with(fam, &range_frames(fam)?, i, j)
}

fn chern_plaquette_with<T: Real>(fam: &ProjectionFamily<T>, frames: &[CMat<T>], i: usize, j: usize) -> Result<ChernSlices> {
    let grid = &fam.grid;
    if i == j || i >= grid.dim() || j >= grid.dim() {
        return Err(FrameError::InvalidInput(format!("bad plane ({i}, {j})")));
    }
    let transverse: Vec<usize> = (0..grid.dim()).filter(|&a| a != i && a != j).collect();
    let nslices = transverse.first().map(|&a| grid.size(a)).unwrap_or(1);
    let mut raw = vec![0.0; nslices];
    for f in 0..grid.len() {
        let s = transverse.first().map(|&a| grid.multi(f)[a]).unwrap_or(0);
        let (fi, _) = grid.shift(f, i, 1);
        let (fj, _) = grid.shift(f, j, 1);
        let u1 = link(&frames[f], &frames[fi]);
        let u2 = link(&frames[fi], &frames[grid.shift(fi, j, 1).0]);
        let u3 = link(&frames[fj], &frames[grid.shift(fj, i, 1).0]);
        let u4 = link(&frames[f], &frames[fj]);
        let flux = arg(u1 * u2 * u3.conj() * u4.conj());
        raw[s] += flux.to_f64_lossy() / (2.0 * std::f64::consts::PI);
    }
    let value = raw[0].round() as i64;
    for &r in &raw {
        if (r - r.round()).abs() > 1e-6 || r.round() as i64 != value {
            return Err(FrameError::NotConverged(format!("plaquette Chern sum not quantized: {raw:?}")));
        }
    }
    Ok(ChernSlices { i, j, raw, value })
}

/// All Chern numbers `c_ij`, `i < j`, keyed by the axis pair.
pub fn chern_numbers<T: Real>(fam: &ProjectionFamily<T>) -> Result<BTreeMap<(usize, usize), i64>> {
    let frames = range_frames(fam)?;
    let d = fam.grid.dim();
    let mut out = BTreeMap::new();
    for i in 0..d {
        for j in (i + 1)..d {
            out.insert((i, j), chern_plaquette_with(fam, &frames, i, j)?.value);
        }
    }
    Ok(out)
}

/// Riemann sum of `(1/2πi) ∫ Tr(P [∂_i P, ∂_j P])` with spectral derivatives,
/// averaged over the transverse axis.
pub fn chern_riemann<T: Real>(fam: &ProjectionFamily<T>, i: usize, j: usize) -> f64 {
    let grid = &fam.grid;
    let n = fam.dim;
    let flat: Vec<Complex<T>> = fam.mats.iter().flat_map(|m| m.as_slice().iter().copied()).collect();
    let di = spectral_derivative(grid, n * n, &flat, i);
    let dj = spectral_derivative(grid, n * n, &flat, j);
    let mut sum = Complex::<T>::zero();
    for f in 0..grid.len() {
        let a = CMat::from_vec(n, n, di[f * n * n..(f + 1) * n * n].to_vec());
        let b = CMat::from_vec(n, n, dj[f * n * n..(f + 1) * n * n].to_vec());
        let comm = &a.matmul(&b) - &b.matmul(&a);
        sum = sum + fam.mats[f].matmul(&comm).trace();
    }
    let planes: usize = (0..grid.dim()).filter(|&a| a != i && a != j).map(|a| grid.size(a)).product();
    let area = T::from_usize(grid.len() / planes).unwrap();
    let val = sum / (Complex::new(T::zero(), two_pi::<T>()) * area * T::from_usize(planes).unwrap());
    val.re.to_f64_lossy()
}

/// Largest accepted phase step of `det α` between neighbours before the grid
/// is declared too coarse.
pub const MAX_PHASE_STEP: f64 = 0.75 * std::f64::consts::PI;

/// Winding of `det α` along `axis` for every line of the family.
pub fn winding_degrees<T: Real>(u: &UnitaryFamily<T>, axis: usize) -> Result<Vec<i64>> {
    let grid = &u.grid;
    let dets: Vec<Complex<T>> = u.mats.iter().map(|m| m.det()).collect();
    let face = grid.remove_axis(axis);
    let n = grid.size(axis);
    let mut out = Vec::with_capacity(face.len());
    for f in 0..face.len() {
        let mut total = 0.0f64;
        for j in 0..n {
            let a = grid.insert_axis(f, axis, j);
            let b = grid.insert_axis(f, axis, (j + 1) % n);
            // Conjugation by a twist leaves the determinant unchanged.
            let step = arg(dets[b] / dets[a]).to_f64_lossy();
            if step.abs() > MAX_PHASE_STEP {
                return Err(FrameError::GridTooCoarse { axis, k: grid.multi(a), step });
            }
            total += step;
        }
        out.push((total / (2.0 * std::f64::consts::PI)).round() as i64);
    }
    Ok(out)
}

/// Winding degree along `axis`, required to be the same on every line.
pub fn winding_degree<T: Real>(u: &UnitaryFamily<T>, axis: usize) -> Result<i64> {
    let all = winding_degrees(u, axis)?;
    let first = all[0];
    if all.iter().any(|&d| d != first) {
        return Err(FrameError::NotConverged(format!("degree varies across lines along axis {axis}: {all:?}")));
    }
    Ok(first)
}
