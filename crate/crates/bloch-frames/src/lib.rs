//! Smooth Bloch frames for gapped lattice models.
//!
//! Given a family of band projections on a momentum grid the crate builds a
//! periodic orthonormal Bloch basis when the Chern numbers vanish, and a
//! Parseval frame with one redundant vector otherwise. Magnetic
//! perturbations of rational-flux models are handled through covariant
//! kernels, and frames are turned into exponentially localized lattice
//! functions with fitted decay certificates.
//!
//! Numerical code is generic over [`Real`] (`f32` or `f64`); the `*64`
//! aliases below fix double precision.

pub mod error;
pub mod families;
pub mod framesyn;
pub mod hofstadter;
pub mod io;
pub mod kspace;
pub mod linalg;
pub mod magframes;
pub mod magkernel;
pub mod scalar;
pub mod transport;
pub mod wannier;

pub use error::{FrameError, Result};
pub use linalg::CMat;
pub use scalar::Real;

pub type CMat64 = CMat<f64>;
pub type BlochFrame64 = kspace::BlochFrame<f64>;
pub type ProjectionFamily64 = families::ProjectionFamily<f64>;
pub type UnitaryFamily64 = families::UnitaryFamily<f64>;
pub type HoppingModel64 = hofstadter::HoppingModel<f64>;
pub type MagneticKernel64 = magkernel::MagneticKernel<f64>;
pub type LatticeFunction64 = kspace::LatticeFunction<f64>;
pub type WannierSet64 = wannier::WannierSet<f64>;
pub type MagneticFrame64 = magframes::MagneticFrame<f64>;
