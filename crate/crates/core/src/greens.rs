//! Free-space Helmholtz kernel `g(x, y) = e^{jκ|x-y|} / (4π|x-y|)` and its
//! derivatives, the cell self-term, and the far-field expansion.
//!
//! The vector kernel is `g·I`, so all evaluations are done on the scalar and
//! lifted to 3×3 blocks only at the public boundary.

use crate::{M3c, V3c, C64, V3};
use nalgebra::{Matrix3, Vector3};
use std::f64::consts::PI;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GreenError {
    #[error("coincident points: kernel is singular at x = y")]
    Coincident,
    #[error("near-field violation: |y - anchor| = {dist} must exceed 10 r = {limit}")]
    NearField { dist: f64, limit: f64 },
}

const J: C64 = C64::new(0.0, 1.0);

/// Scalar kernel value together with its first and second derivatives with
/// respect to the observation point `x`.
#[derive(Debug, Clone, Copy)]
pub struct ScalarGreen {
    pub value: C64,
    pub grad: V3c,
    pub hess: M3c,
}

/// Free kernel at a fixed complex wavenumber `κ` (`Im κ ≥ 0`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FreeKernel {
    pub kappa: C64,
}

impl FreeKernel {
    pub fn new(kappa: C64) -> Self {
        Self { kappa }
    }

    /// `g` at separation `d = x - y` (must be non-zero).
    #[inline]
    pub fn value(&self, d: &V3) -> C64 {
        let r = d.norm();
        (J * self.kappa * r).exp() / (4.0 * PI * r)
    }

    /// Value and gradient in `x`.
    #[inline]
    pub fn value_grad(&self, d: &V3) -> (C64, V3c) {
        let r = d.norm();
        let g = (J * self.kappa * r).exp() / (4.0 * PI * r);
        let gp = g * (J * self.kappa - 1.0 / r);
        let s = gp / r;
        (g, Vector3::new(s * d.x, s * d.y, s * d.z))
    }

    /// Value, gradient and Hessian in `x`.
    pub fn full(&self, d: &V3) -> ScalarGreen {
        let r = d.norm();
        let g = (J * self.kappa * r).exp() / (4.0 * PI * r);
        let a = J * self.kappa - 1.0 / r;
        let gp = g * a;
        let gpp = g * (a * a + 1.0 / (r * r));
        let u = d / r;
        let mut hess = Matrix3::zeros();
        for i in 0..3 {
            for k in 0..3 {
                let uu = u[i] * u[k];
                let delta = if i == k { 1.0 } else { 0.0 };
                hess[(i, k)] = gpp * uu + gp / r * (delta - uu);
            }
        }
        ScalarGreen { value: g, grad: (u * 1.0).map(|c| gp * c), hess }
    }
}

/// Matrix-valued evaluation `G0(x, y) = g·I` with optional derivatives in `x`:
/// `grad[k] = ∂_{x_k} G0`, `hess[k][l] = ∂_{x_k}∂_{x_l} G0`.
#[derive(Debug, Clone)]
pub struct GreenEval {
    pub value: M3c,
    pub grad: Option<[M3c; 3]>,
    pub hess: Option<[[M3c; 3]; 3]>,
}

/// Evaluates the free vector kernel up to derivative order `order` (0, 1 or 2).
pub fn g0(x: &V3, y: &V3, kappa: C64, order: u8) -> Result<GreenEval, GreenError> {
    let d = x - y;
    if d.norm() == 0.0 {
        return Err(GreenError::Coincident);
    }
    let s = FreeKernel::new(kappa).full(&d);
    let eye = |c: C64| M3c::identity() * c;
    Ok(GreenEval {
        value: eye(s.value),
        grad: (order >= 1).then(|| [eye(s.grad.x), eye(s.grad.y), eye(s.grad.z)]),
        hess: (order >= 2).then(|| {
            let h = |k: usize, l: usize| eye(s.hess[(k, l)]);
            [[h(0, 0), h(0, 1), h(0, 2)], [h(1, 0), h(1, 1), h(1, 2)], [h(2, 0), h(2, 1), h(2, 2)]]
        }),
    })
}

/// Radius of the ball whose volume equals the cell weight.
pub fn cell_radius(weight: f64) -> f64 {
    (3.0 * weight / (4.0 * PI)).cbrt()
}

/// Integral of the kernel over a ball of radius `a` centred on the observation
/// point: `(e^{jκa}(1 - jκa) - 1)/κ²`, tending to `a²/2` as `κ → 0`.
pub fn ball_self_term(kappa: C64, a: f64) -> C64 {
    let x = kappa * a;
    if x.norm() < 1e-2 {
        return C64::new(a * a / 2.0, 0.0) + J * kappa * a.powi(3) / 3.0 - kappa * kappa * a.powi(4) / 8.0;
    }
    ((J * x).exp() * (1.0 - J * x) - 1.0) / (kappa * kappa)
}

/// Self term for a cell of the given quadrature weight.
pub fn self_term(kappa: C64, weight: f64) -> C64 {
    ball_self_term(kappa, cell_radius(weight))
}

/// Potential of a uniform unit density on a ball of radius `a`, observed at
/// distance `s < a` from its centre, and the radial derivative of it.
/// Outside the ball the same potential is `(4πa³/3)·g(s)` up to `O((κa)²)`.
pub fn ball_potential(kappa: C64, a: f64, s: f64) -> (C64, C64) {
    let e = (J * kappa * a).exp() * (1.0 - J * kappa * a);
    let ks = kappa * s;
    let (f, fp) = if ks.norm() < 1e-3 {
        let k2 = kappa * kappa;
        (1.0 - ks * ks / 6.0, -k2 * s / 3.0 * (1.0 - ks * ks / 10.0))
    } else {
        (ks.sin() / ks, (ks * ks.cos() - ks.sin()) / (kappa * s * s))
    };
    let k2 = kappa * kappa;
    if (kappa * a).norm() < 1e-2 {
        // static limit with the leading dynamic correction
        let u = C64::new(a * a / 2.0 - s * s / 6.0, 0.0) + J * kappa * a.powi(3) / 3.0;
        return (u, C64::new(-s / 3.0, 0.0));
    }
    ((e * f - 1.0) / k2, e * fp / k2)
}

/// Far-field form of the kernel between the shell point `anchor + r·x̂` and a
/// distant point `y`, together with a bound on its deviation from the exact
/// kernel: `e^{jκ|y-a|} e^{-jκ r x̂·Ω} / (4π|y-a|)`, `Ω = (y-a)/|y-a|`.
pub fn g0_farfield(xhat: &V3, r: f64, y: &V3, anchor: &V3, kappa: C64) -> Result<(C64, f64), GreenError> {
    let v = y - anchor;
    let dist = v.norm();
    if dist <= 10.0 * r {
        return Err(GreenError::NearField { dist, limit: 10.0 * r });
    }
    let omega = v / dist;
    let val = (J * kappa * dist).exp() * (-J * kappa * r * xhat.dot(&omega)).exp() / (4.0 * PI * dist);
    let bound = (2.0 * r + kappa.norm() * r * r) / (4.0 * PI * dist * dist);
    Ok((val, bound))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn k() -> FreeKernel {
        FreeKernel::new(C64::new(2.0, 0.0))
    }

    #[test]
    fn unit_distance_static_value() {
        let g = FreeKernel::new(C64::new(0.0, 0.0)).value(&V3::new(1.0, 0.0, 0.0));
        assert!((g.re - 1.0 / (4.0 * PI)).abs() < 1e-15 && g.im == 0.0);
    }

    #[test]
    fn coincident_points_error() {
        let x = V3::new(0.1, 0.2, 0.3);
        assert_eq!(g0(&x, &x, C64::new(1.0, 0.0), 0).unwrap_err(), GreenError::Coincident);
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let d = V3::new(0.4, -0.7, 0.3);
        let s = k().full(&d);
        let h = 1e-5;
        for i in 0..3 {
            let mut e = V3::zeros();
            e[i] = h;
            let (gp, grp) = k().value_grad(&(d + e));
            let (gm, grm) = k().value_grad(&(d - e));
            assert!(((gp - gm) / (2.0 * h) - s.grad[i]).norm() < 1e-8);
            for l in 0..3 {
                assert!(((grp[l] - grm[l]) / (2.0 * h) - s.hess[(l, i)]).norm() < 1e-7);
            }
        }
    }

    #[test]
    fn helmholtz_equation_holds_pointwise() {
        // Δg + κ²g = 0 away from the source: trace of the analytic Hessian.
        let s = k().full(&V3::new(0.3, 0.5, -1.1));
        let lap = s.hess.trace();
        assert!((lap + 4.0 * s.value).norm() < 1e-12);
    }

    #[test]
    fn ball_self_term_matches_radial_quadrature() {
        let kappa = C64::new(2.0, 0.3);
        let a = 0.3;
        // ∫_B g dV = ∫_0^a e^{jκs} s ds, midpoint rule with many cells
        let n = 200_000;
        let h = a / n as f64;
        let num: C64 = (0..n)
            .map(|i| {
                let s = (i as f64 + 0.5) * h;
                (J * kappa * s).exp() * s * h
            })
            .sum();
        assert!((num - ball_self_term(kappa, a)).norm() < 1e-9);
        let small = ball_self_term(C64::new(1e-6, 0.0), a);
        assert!((small.re - a * a / 2.0).abs() < 1e-12);
    }

    #[test]
    fn ball_potential_continuous_with_exterior_potential() {
        // Outside a uniform ball the potential is w·g(s)·3j1(κa)/(κa).
        let kappa = C64::new(2.0, 0.0);
        let a: f64 = 0.05;
        let w = 4.0 / 3.0 * PI * a.powi(3);
        let (u0, _) = ball_potential(kappa, a, 0.0);
        assert!((u0 - ball_self_term(kappa, a)).norm() < 1e-14);
        let x = kappa * a;
        let form = (x.sin() - x * x.cos()) * 3.0 / (x * x * x);
        let (ua, dua) = ball_potential(kappa, a, a);
        let (g, gr) = k().value_grad(&V3::new(a, 0.0, 0.0));
        assert!((ua - w * g * form).norm() < 1e-10 * ua.norm());
        assert!((dua - w * gr.x * form).norm() < 1e-10 * dua.norm());
    }

    #[test]
    fn farfield_within_bound() {
        let anchor = V3::new(1.0, 0.0, 0.0);
        for dist in [12.0, 30.0, 100.0] {
            let y = anchor + V3::new(0.3, 0.8, -0.5).normalize() * dist;
            for xhat in [V3::x(), V3::y(), V3::new(1.0, 1.0, 1.0).normalize()] {
                let exact = k().value(&(anchor + xhat - y));
                let (ff, bound) = g0_farfield(&xhat, 1.0, &y, &anchor, k().kappa).unwrap();
                assert!((exact - ff).norm() <= bound);
            }
        }
        assert!(matches!(g0_farfield(&V3::x(), 1.0, &V3::new(5.0, 0.0, 0.0), &V3::zeros(), C64::new(1.0, 0.0)), Err(GreenError::NearField { .. })));
    }

    proptest! {
        #[test]
        fn kernel_is_symmetric(x in prop::array::uniform3(-2.0f64..2.0), y in prop::array::uniform3(-2.0f64..2.0)) {
            let (x, y) = (V3::from(x), V3::from(y));
            prop_assume!((x - y).norm() > 1e-3);
            let a = g0(&x, &y, C64::new(1.5, 0.0), 0).unwrap().value;
            let b = g0(&y, &x, C64::new(1.5, 0.0), 0).unwrap().value;
            prop_assert!((a - b).norm() == 0.0);
        }

        #[test]
        fn time_reversal_conjugates(d in prop::array::uniform3(-2.0f64..2.0), k0 in 0.1f64..5.0) {
            let d = V3::from(d);
            prop_assume!(d.norm() > 1e-3);
            let a = FreeKernel::new(C64::new(k0, 0.0)).value(&d);
            let b = FreeKernel::new(C64::new(-k0, 0.0)).value(&d);
            prop_assert!((a.conj() - b).norm() <= 1e-15 * a.norm());
        }
    }
}
