//! File formats.
//!
//! Binary container, all integers little-endian:
//!
//! | bytes | content |
//! |-------|---------|
//! | 4 | magic `BFC1` |
//! | 4 | `u32` number of axes `D` |
//! | 4 | `u32` number of leading grid axes (k or lattice) |
//! | 8·D | `u64` axis sizes |
//! | 8·Π sizes | complex64 payload, `f32` real then `f32` imaginary |
//!
//! The payload is row-major over the listed axes, so the grid axes are
//! outermost. Bloch frames use axes `[N_0, …, fiber, count]`, projection
//! families `[N_0, …, dim, dim]` and lattice-function sets
//! `[2R+1, …, count, fiber]`.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use num_complex::Complex;
use serde::{Deserialize, Serialize};

use crate::error::{FrameError, Result};
use crate::families::ProjectionFamily;
use crate::hofstadter::{Hopping, HoppingModel, MagneticFlux};
use crate::kspace::{BlochFrame, KGrid, LatticeFunction};
use crate::linalg::CMat;
use crate::scalar::Real;

const MAGIC: &[u8; 4] = b"BFC1";

/// Decoded container.
#[derive(Clone, Debug, PartialEq)]
pub struct Container {
    pub grid_axes: usize,
    pub sizes: Vec<usize>,
    pub data: Vec<Complex<f32>>,
}

impl Container {
    pub fn new<T: Real>(grid_axes: usize, sizes: Vec<usize>, data: &[Complex<T>]) -> Result<Self> {
        if grid_axes > sizes.len() || sizes.iter().product::<usize>() != data.len() {
            return Err(FrameError::Format(format!("payload of {} values does not match axes {sizes:?}", data.len())));
        }
        let data = data.iter().map(|z| Complex::new(z.re.to_f64_lossy() as f32, z.im.to_f64_lossy() as f32)).collect();
        Ok(Self { grid_axes, sizes, data })
    }

    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&(self.sizes.len() as u32).to_le_bytes())?;
        w.write_all(&(self.grid_axes as u32).to_le_bytes())?;
        for &s in &self.sizes {
            w.write_all(&(s as u64).to_le_bytes())?;
        }
        let mut buf = Vec::with_capacity(8 * self.data.len());
        for z in &self.data {
            buf.extend_from_slice(&z.re.to_le_bytes());
            buf.extend_from_slice(&z.im.to_le_bytes());
        }
        w.write_all(&buf)?;
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self> {
        let mut word = [0u8; 4];
        r.read_exact(&mut word)?;
        if &word != MAGIC {
            return Err(FrameError::Format("missing container magic".into()));
        }
        let mut u32_at = || -> Result<usize> {
            r.read_exact(&mut word)?;
            Ok(u32::from_le_bytes(word) as usize)
        };
        let (naxes, grid_axes) = (u32_at()?, u32_at()?);
        if grid_axes > naxes || naxes > 16 {
            return Err(FrameError::Format(format!("bad axis counts {naxes}/{grid_axes}")));
        }
        let mut sizes = Vec::with_capacity(naxes);
        let mut long = [0u8; 8];
        for _ in 0..naxes {
            r.read_exact(&mut long)?;
            sizes.push(u64::from_le_bytes(long) as usize);
        }
        let len = sizes.iter().try_fold(1usize, |a, &s| a.checked_mul(s)).ok_or_else(|| FrameError::Format("payload size overflows".into()))?;
        let mut raw = vec![0u8; 8 * len];
        r.read_exact(&mut raw)?;
        let data = raw.chunks_exact(8).map(|c| Complex::new(f32::from_le_bytes([c[0], c[1], c[2], c[3]]), f32::from_le_bytes([c[4], c[5], c[6], c[7]]))).collect();
        Ok(Self { grid_axes, sizes, data })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_to(&mut f)?;
        f.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_from(&mut std::io::BufReader::new(std::fs::File::open(path)?))
    }

    pub fn widen<T: Real>(&self) -> Vec<Complex<T>> {
        self.data.iter().map(|z| Complex::new(T::lit(z.re as f64), T::lit(z.im as f64))).collect()
    }
}

pub fn frame_container<T: Real>(frame: &BlochFrame<T>) -> Result<Container> {
    let mut sizes = frame.grid.sizes().to_vec();
    sizes.extend([frame.fiber, frame.count]);
    Container::new(frame.grid.dim(), sizes, &frame.to_flat())
}

pub fn frame_from_container<T: Real>(c: &Container) -> Result<BlochFrame<T>> {
    if c.sizes.len() != c.grid_axes + 2 {
        return Err(FrameError::Format("a frame container has two inner axes".into()));
    }
    let grid = KGrid::new(&c.sizes[..c.grid_axes])?;
    BlochFrame::from_flat(grid, c.sizes[c.grid_axes], c.sizes[c.grid_axes + 1], c.widen())
}

pub fn family_container<T: Real>(fam: &ProjectionFamily<T>) -> Result<Container> {
    let mut sizes = fam.grid.sizes().to_vec();
    sizes.extend([fam.dim, fam.dim]);
    let data: Vec<Complex<T>> = fam.mats.iter().flat_map(|m| m.as_slice().iter().copied()).collect();
    Container::new(fam.grid.dim(), sizes, &data)
}

/// JSON companion of a family container.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FamilySidecar {
    pub rank: usize,
    pub ambient_dim: usize,
    pub twist: bool,
}

/// Lattice functions sharing a box, with axes `[side; d] ++ [count, fiber]`.
pub fn lattice_container<T: Real>(funcs: &[LatticeFunction<T>]) -> Result<Container> {
    let first = funcs.first().ok_or_else(|| FrameError::InvalidInput("no functions to store".into()))?;
    if funcs.iter().any(|f| f.lbox != first.lbox || f.fiber != first.fiber) {
        return Err(FrameError::InvalidInput("functions must share box and fiber".into()));
    }
    let mut sizes = vec![first.lbox.side(); first.lbox.dim];
    sizes.extend([funcs.len(), first.fiber]);
    let q = first.fiber;
    let mut data = Vec::with_capacity(first.data.len() * funcs.len());
    for i in 0..first.lbox.len() {
        for f in funcs {
            data.extend_from_slice(&f.data[i * q..(i + 1) * q]);
        }
    }
    Container::new(first.lbox.dim, sizes, &data)
}

/// `k_0,…,k_{d-1},component,vector,re,im` rows of a frame.
pub fn frame_csv<T: Real>(frame: &BlochFrame<T>) -> String {
    let d = frame.grid.dim();
    let mut s: String = (0..d).map(|a| format!("k{a},")).collect();
    s.push_str("component,vector,re,im\n");
    for f in 0..frame.grid.len() {
        let k: String = frame.grid.k::<f64>(f).iter().map(|x| format!("{x},")).collect();
        let v = &frame.vectors[f];
        for i in 0..frame.fiber {
            for j in 0..frame.count {
                let z = v[(i, j)];
                s.push_str(&format!("{k}{i},{j},{:e},{:e}\n", z.re.to_f64_lossy(), z.im.to_f64_lossy()));
            }
        }
    }
    s
}

/// `k_0,…,E_1,…,E_M` rows.
pub fn bands_csv(grid: &KGrid, bands: &[Vec<f64>]) -> String {
    let d = grid.dim();
    let m = bands.first().map_or(0, Vec::len);
    let mut s: Vec<String> = (0..d).map(|a| format!("k{a}")).collect();
    s.extend((1..=m).map(|j| format!("E{j}")));
    let mut out = s.join(",") + "\n";
    for (f, b) in bands.iter().enumerate() {
        let row: Vec<String> = grid.k::<f64>(f).iter().map(|x| x.to_string()).chain(b.iter().map(|e| format!("{e:.15e}"))).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

/// Topological invariants and numerical defects of a construction.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct InvariantReport {
    pub chern: BTreeMap<String, i64>,
    pub degrees: Vec<i64>,
    pub defects: BTreeMap<String, f64>,
}

/// Complex matrix as separate real and imaginary row lists.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MatrixJson {
    pub re: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub im: Option<Vec<Vec<f64>>>,
}

impl MatrixJson {
    pub fn from_mat<T: Real>(m: &CMat<T>) -> Self {
        let rows = |f: &dyn Fn(Complex<T>) -> f64| (0..m.nrows()).map(|i| (0..m.ncols()).map(|j| f(m[(i, j)])).collect()).collect::<Vec<Vec<f64>>>();
        let im = rows(&|z| z.im.to_f64_lossy());
        let has_im = im.iter().flatten().any(|&x| x != 0.0);
        Self { re: rows(&|z| z.re.to_f64_lossy()), im: has_im.then_some(im) }
    }

    pub fn to_mat<T: Real>(&self) -> Result<CMat<T>> {
        let n = self.re.len();
        let c = self.re.first().map_or(0, Vec::len);
        let ragged = |rows: &Vec<Vec<f64>>| rows.len() != n || rows.iter().any(|r| r.len() != c);
        if ragged(&self.re) || self.im.as_ref().is_some_and(ragged) {
            return Err(FrameError::Format("matrix rows have unequal lengths".into()));
        }
        Ok(CMat::from_fn(n, c, |i, j| Complex::new(T::lit(self.re[i][j]), T::lit(self.im.as_ref().map_or(0.0, |m| m[i][j])))))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HoppingJson {
    pub disp: Vec<i64>,
    pub block: MatrixJson,
}

/// Lattice model plus magnetic parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub dim: usize,
    pub sites: Vec<Vec<f64>>,
    pub hoppings: Vec<HoppingJson>,
    #[serde(default)]
    pub p: i64,
    #[serde(default = "one")]
    pub q: i64,
    #[serde(default)]
    pub eps: f64,
    #[serde(default = "default_box")]
    pub box_radius: usize,
}

fn one() -> i64 {
    1
}

fn default_box() -> usize {
    20
}

impl ModelFile {
    pub fn from_model<T: Real>(model: &HoppingModel<T>, flux: MagneticFlux, eps: f64, box_radius: usize) -> Self {
        Self {
            dim: model.dim,
            sites: model.sites.clone(),
            hoppings: model.hoppings.iter().map(|h| HoppingJson { disp: h.disp.clone(), block: MatrixJson::from_mat(&h.block) }).collect(),
            p: flux.p,
            q: flux.q,
            eps,
            box_radius,
        }
    }

    pub fn model<T: Real>(&self) -> Result<HoppingModel<T>> {
        let hoppings = self.hoppings.iter().map(|h| Ok(Hopping { disp: h.disp.clone(), block: h.block.to_mat()? })).collect::<Result<Vec<_>>>()?;
        HoppingModel::new(self.dim, self.sites.clone(), hoppings)
    }

    pub fn flux(&self) -> Result<MagneticFlux> {
        MagneticFlux::new(self.p, self.q)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }
}

pub fn write_json<S: Serialize>(path: &Path, value: &S) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(value)?)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kspace::LatticeBox;

    #[test]
    fn container_round_trip_is_exact_in_single_precision() {
        let grid = KGrid::new(&[4, 6]).unwrap();
        let vectors = (0..24).map(|f| CMat::from_fn(3, 2, |i, j| Complex::new(f as f64 + 0.25 * i as f64, -(j as f64) * 0.5))).collect();
        let frame = BlochFrame::new(grid, vectors).unwrap();
        let c = frame_container(&frame).unwrap();
        let mut buf = Vec::new();
        c.write_to(&mut buf).unwrap();
        assert_eq!(buf.len(), 4 + 4 + 4 + 8 * 4 + 8 * 24 * 6);
        assert_eq!(&buf[..4], b"BFC1");
        let back: BlochFrame<f64> = frame_from_container(&Container::read_from(&mut buf.as_slice()).unwrap()).unwrap();
        assert_eq!(back.vectors, frame.vectors);
    }

    #[test]
    fn payload_is_row_major_with_grid_axes_outermost() {
        let grid = KGrid::new(&[4]).unwrap();
        let vectors = (0..4).map(|f| CMat::from_fn(2, 1, |i, _| Complex::new((10 * f + i) as f64, 0.0))).collect();
        let c = frame_container(&BlochFrame::new(grid, vectors).unwrap()).unwrap();
        let re: Vec<f32> = c.data.iter().map(|z| z.re).collect();
        assert_eq!(re, vec![0.0, 1.0, 10.0, 11.0, 20.0, 21.0, 30.0, 31.0]);
    }

    #[test]
    fn truncated_or_foreign_files_are_rejected() {
        assert!(Container::read_from(&mut &b"XXXX"[..]).is_err());
        let c = Container::new::<f64>(1, vec![4, 1], &[Complex::new(1.0, 0.0); 4]).unwrap();
        let mut buf = Vec::new();
        c.write_to(&mut buf).unwrap();
        assert!(Container::read_from(&mut &buf[..buf.len() - 1]).is_err());
        assert!(Container::new::<f64>(1, vec![4, 2], &[Complex::new(1.0, 0.0); 4]).is_err());
    }

    #[test]
    fn lattice_functions_interleave_by_site() {
        let lbox = LatticeBox::new(1, 1).unwrap();
        let mut a = LatticeFunction::<f64>::zeros(lbox, 1);
        let mut b = a.clone();
        for i in 0..3 {
            a.data[i] = Complex::new(i as f64, 0.0);
            b.data[i] = Complex::new(10.0 + i as f64, 0.0);
        }
        let c = lattice_container(&[a, b]).unwrap();
        assert_eq!(c.sizes, vec![3, 2, 1]);
        assert_eq!(c.data.iter().map(|z| z.re).collect::<Vec<_>>(), vec![0.0, 10.0, 1.0, 11.0, 2.0, 12.0]);
    }

    #[test]
    fn model_file_round_trip() {
        let m = HoppingModel::<f64>::two_band(1.0);
        let file = ModelFile::from_model(&m, MagneticFlux::new(1, 3).unwrap(), 0.05, 40);
        let text = serde_json::to_string(&file).unwrap();
        let back: ModelFile = serde_json::from_str(&text).unwrap();
        assert_eq!(back, file);
        let m2: HoppingModel<f64> = back.model().unwrap();
        let k = [0.3, 0.7];
        assert!((&m2.bloch_hamiltonian(&k) - &m.bloch_hamiltonian(&k)).max_abs() < 1e-15);
        let minimal: ModelFile = serde_json::from_str(r#"{"dim":1,"sites":[[0.0]],"hoppings":[{"disp":[1],"block":{"re":[[1.0]]}},{"disp":[-1],"block":{"re":[[1.0]]}}]}"#).unwrap();
        assert_eq!((minimal.p, minimal.q, minimal.box_radius), (0, 1, 20));
        assert!(minimal.model::<f64>().is_ok());
    }

    #[test]
    fn csv_headers() {
        let grid = KGrid::new(&[4]).unwrap();
        let csv = bands_csv(&grid, &vec![vec![1.0, 2.0]; 4]);
        assert!(csv.starts_with("k0,E1,E2\n0,"));
        assert_eq!(csv.lines().count(), 5);
        let frame = BlochFrame::new(grid, vec![CMat::<f64>::identity(2); 4]).unwrap();
        assert_eq!(frame_csv(&frame).lines().count(), 1 + 4 * 4);
    }
}
