//! Frequency-domain transfer functions between antenna groups embedded in a
//! scattering environment, and their decoupled (shell-reduced) forms.
//!
//! The vector potential obeys `(-Δ - k0²)A + W A = J` where `W` collects the
//! material perturbation of every region. Regions are discretised with a
//! point (cell) model; the resulting block system is solved either directly or
//! by a Born series, and the transmitter → receiver transfer matrix is
//! computed both from the full solution and from the reduced shell formulas.

// `!(x > 0.0)` style guards are deliberate: they reject NaN as well.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod channel;
pub mod decouple;
pub mod field;
pub mod greens;
pub mod linalg;
pub mod operators;
pub mod par;
pub mod quadrature;
pub mod report;
pub mod scatter;
pub mod scene;
pub mod spread;
pub mod sweep;
pub mod verify;

pub use num_complex::Complex64 as C64;

/// Real 3-vector.
pub type V3 = nalgebra::Vector3<f64>;
/// Complex 3-vector.
pub type V3c = nalgebra::Vector3<C64>;
/// Complex 3×3 matrix.
pub type M3c = nalgebra::Matrix3<C64>;

/// Vacuum permeability (H/m).
pub const MU0: f64 = 4.0e-7 * std::f64::consts::PI;
/// Speed of light in vacuum (m/s).
pub const C0: f64 = 299_792_458.0;
/// Vacuum permittivity (F/m).
pub const EPS0: f64 = 1.0 / (MU0 * C0 * C0);

pub(crate) const J: C64 = C64::new(0.0, 1.0);
pub(crate) const ZERO: C64 = C64::new(0.0, 0.0);
