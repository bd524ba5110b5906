//! Perturbation operators, cutoff functions, commutators and the collocation
//! carriers they act on.

use crate::field::{Carrier, FieldSample};
use crate::quadrature::{annulus_rule, sample_ball};
use crate::scene::{Coefficients, Frequency, Role, Scene};
use crate::{M3c, V3c, C64, V3};
use std::sync::Arc;

/// Groups of regions entering a perturbation operator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub enum Group {
    /// Transmitters.
    T,
    /// Scatterers (the environment).
    M,
    /// Receivers.
    R,
    /// Every region.
    Total,
}

impl Group {
    pub fn members(&self, scene: &Scene) -> Vec<usize> {
        (0..scene.regions.len())
            .filter(|&i| {
                let role = scene.regions[i].role;
                match self {
                    Group::T => role == Role::Transmitter,
                    Group::R => role == Role::Receiver,
                    Group::M => role == Role::Scatterer,
                    Group::Total => true,
                }
            })
            .collect()
    }

    pub fn label(&self) -> &'static str {
        match self {
            Group::T => "T",
            Group::M => "M",
            Group::R => "R",
            Group::Total => "total",
        }
    }
}

/// Collocation carrier of one region.
pub fn sample_region(scene: &Scene, idx: usize, target: usize) -> Arc<Carrier> {
    let g = &scene.regions[idx];
    Carrier::new(sample_ball(&g.center, g.radius(), target), Some(idx))
}

/// Which shell a quantity lives on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Side {
    T,
    R,
}

impl Side {
    pub fn anchor(&self, scene: &Scene) -> V3 {
        match self {
            Side::T => scene.origin,
            Side::R => scene.e,
        }
    }
}

/// Quadrature carrier of the shell annulus `r - w ≤ |x - anchor| ≤ r`.
pub fn annulus_set(scene: &Scene, side: Side, grid: [usize; 3]) -> Arc<Carrier> {
    Carrier::new(annulus_rule(&side.anchor(scene), scene.r - scene.w, scene.r, grid), None)
}

/// Quintic smoothstep `6t⁵ - 15t⁴ + 10t³` on `[0, 1]` with first and second
/// derivatives, clamped outside.
fn smoothstep(t: f64) -> (f64, f64, f64) {
    if t <= 0.0 {
        (0.0, 0.0, 0.0)
    } else if t >= 1.0 {
        (1.0, 0.0, 0.0)
    } else {
        let t2 = t * t;
        (t2 * t * (10.0 - 15.0 * t + 6.0 * t2), 30.0 * t2 * (1.0 - t) * (1.0 - t), 60.0 * t * (1.0 - t) * (1.0 - 2.0 * t))
    }
}

/// Radial cutoff equal to 1 inside `outer - width` and 0 beyond `outer`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ramp {
    pub center: V3,
    pub outer: f64,
    pub width: f64,
}

/// Cutoff value, gradient and Laplacian at a point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CutoffSample {
    pub value: f64,
    pub grad: V3,
    pub laplacian: f64,
}

impl Ramp {
    pub fn eval(&self, x: &V3) -> CutoffSample {
        let d = x - self.center;
        let rho = d.norm();
        let t = (self.outer - rho) / self.width;
        let (s, s1, s2) = smoothstep(t);
        if s1 == 0.0 && s2 == 0.0 {
            return CutoffSample { value: s, grad: V3::zeros(), laplacian: 0.0 };
        }
        let dj = -s1 / self.width;
        let d2j = s2 / (self.width * self.width);
        CutoffSample { value: s, grad: d * (dj / rho), laplacian: d2j + 2.0 * dj / rho }
    }
}

/// Cutoff functions of the decomposition.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Cutoff {
    /// Equal to 1 on the transmitter ball, ramping down across the annulus.
    T(Ramp),
    /// Equal to 1 on the receiver ball, ramping down across the annulus.
    R(Ramp),
    /// `1 - ramp_T - ramp_R` with both ramps confined to the inner balls.
    M(Ramp, Ramp),
}

impl Cutoff {
    pub fn eval(&self, x: &V3) -> CutoffSample {
        match self {
            Cutoff::T(r) | Cutoff::R(r) => r.eval(x),
            Cutoff::M(a, b) => {
                let (sa, sb) = (a.eval(x), b.eval(x));
                CutoffSample { value: 1.0 - sa.value - sb.value, grad: -sa.grad - sb.grad, laplacian: -sa.laplacian - sb.laplacian }
            }
        }
    }
}

/// The cutoff attached to a group. `T`/`R` ramp across the shell annulus;
/// `M` ramps inside the inner balls between the antenna supports and the
/// annulus.
pub fn cutoff_function(group: Group, scene: &Scene) -> Cutoff {
    let shell = |c: V3| Ramp { center: c, outer: scene.r, width: scene.w };
    let inner = |c: V3, rho_in: f64| {
        let outer = 0.5 * (rho_in + scene.r - scene.w);
        Ramp { center: c, outer, width: outer - rho_in }
    };
    match group {
        Group::T => Cutoff::T(shell(scene.origin)),
        Group::R => Cutoff::R(shell(scene.e)),
        Group::M | Group::Total => Cutoff::M(inner(scene.origin, scene.rho_in_t), inner(scene.e, scene.rho_in_r)),
    }
}

/// Commutator `[-Δ, J]u = -(ΔJ)u - 2(∇J·∇)u` at a point.
pub fn commutator(c: &CutoffSample, s: &FieldSample) -> V3c {
    let gj = c.grad.map(|v| C64::new(v, 0.0));
    -(s.value * C64::new(c.laplacian, 0.0)) - s.grad * gj * C64::new(2.0, 0.0)
}

/// Coefficients of `W` at every node of a carrier (zero outside the group).
pub fn node_coefficients(scene: &Scene, carrier: &Carrier, f: &Frequency) -> Vec<Coefficients> {
    carrier
        .points
        .iter()
        .map(|x| match carrier.region.or_else(|| scene.region_at(x)) {
            Some(i) => scene.regions[i].coefficients(x, f),
            None => Coefficients { delta_k2: C64::new(0.0, 0.0), grad_log: V3c::zeros() },
        })
        .collect()
}

/// `W A = -δk² A + (∇·A) ∇ln k²`.
#[inline]
pub fn apply_w(c: &Coefficients, s: &FieldSample) -> V3c {
    -(s.value * c.delta_k2) + c.grad_log * s.div()
}

/// Coefficients of the companion operator `W̃A = -∇(ã·A) - δ̃ A` evaluated at
/// frequency `f`: `δ̃ = conj(δk²_f)`, `ã = ∇ ln conj(k²_f)`, with the Jacobian
/// of `ã` needed to apply it to a field.
#[derive(Debug, Clone, Copy)]
pub struct AdjointCoefficients {
    pub delta: C64,
    pub grad_log: V3c,
    pub hess_log: M3c,
}

pub fn adjoint_coefficients(scene: &Scene, x: &V3, region: Option<usize>, f: &Frequency) -> AdjointCoefficients {
    match region.or_else(|| scene.region_at(x)) {
        Some(i) => {
            let g = &scene.regions[i];
            let c = g.coefficients(x, f);
            AdjointCoefficients { delta: c.delta_k2.conj(), grad_log: c.grad_log.map(|v| v.conj()), hess_log: g.hess_log(x, f).map(|v| v.conj()) }
        }
        None => AdjointCoefficients { delta: C64::new(0.0, 0.0), grad_log: V3c::zeros(), hess_log: M3c::zeros() },
    }
}

/// `W̃A = -(∇ã)A - (∇A)ᵀã - δ̃A`.
pub fn apply_w_tilde(c: &AdjointCoefficients, s: &FieldSample) -> V3c {
    -(c.hess_log.transpose() * s.value) - s.grad.transpose() * c.grad_log - s.value * c.delta
}

/// Impressed current of a transmitter deposited on its carrier: the wire
/// volume is integrated with a fine product rule and every quadrature point
/// is assigned to the nearest node, so the total moment `∫J` is preserved.
pub fn deposit_source(scene: &Scene, region: usize, carrier: &Carrier) -> Vec<V3c> {
    let g = &scene.regions[region];
    let mut acc = vec![V3::zeros(); carrier.len()];
    for (p, w) in g.wire_volume_rule(6, 12, 10) {
        let j = g.source_density(&p);
        if j == V3::zeros() {
            continue;
        }
        let q = carrier.points.iter().enumerate().map(|(i, y)| (i, (y - p).norm_squared())).fold((0, f64::INFINITY), |a, b| if b.1 < a.1 { b } else { a }).0;
        acc[q] += j * w;
    }
    acc.iter().zip(&carrier.weights).map(|(m, w)| (m / *w).map(|v| C64::new(v, 0.0))).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{EvalPoint, Field, Source};
    use crate::scene::presets;

    #[test]
    fn smoothstep_derivatives() {
        let h = 1e-6;
        for t in [0.1, 0.37, 0.5, 0.9] {
            let (_, d1, d2) = smoothstep(t);
            assert!(((smoothstep(t + h).0 - smoothstep(t - h).0) / (2.0 * h) - d1).abs() < 1e-8);
            assert!(((smoothstep(t + h).1 - smoothstep(t - h).1) / (2.0 * h) - d2).abs() < 1e-6);
        }
    }

    #[test]
    fn cutoff_laplacian_matches_finite_differences() {
        let s = presets::desk();
        for g in [Group::T, Group::R, Group::M] {
            let c = cutoff_function(g, &s);
            let base = match g {
                Group::R => s.e,
                _ => s.origin,
            };
            for rho in [0.66, 0.8, 0.95] {
                let x = base + V3::new(0.3, -0.5, 0.6).normalize() * rho;
                let h = 1e-4;
                let mut lap = 0.0;
                for i in 0..3 {
                    let mut d = V3::zeros();
                    d[i] = h;
                    lap += (c.eval(&(x + d)).value - 2.0 * c.eval(&x).value + c.eval(&(x - d)).value) / (h * h);
                }
                assert!((lap - c.eval(&x).laplacian).abs() < 1e-4, "{g:?} {rho}");
            }
        }
    }

    #[test]
    fn cutoffs_partition_where_expected() {
        let s = presets::desk();
        let t = cutoff_function(Group::T, &s);
        let m = cutoff_function(Group::M, &s);
        for g in s.transmitters() {
            let x = s.regions[g].center;
            assert_eq!(t.eval(&x).value, 1.0);
            assert_eq!(m.eval(&x).value, 0.0);
        }
        for g in s.scatterers() {
            assert_eq!(m.eval(&s.regions[g].center).value, 1.0);
            assert_eq!(t.eval(&s.regions[g].center).value, 0.0);
        }
        // J_M vanishes on the annulus side where J_T ramps? No: it is 1 there.
        let x = s.origin + V3::new(0.0, 0.0, s.r - 0.5 * s.w);
        assert_eq!(m.eval(&x).value, 1.0);
    }

    #[test]
    fn commutator_of_constant_field() {
        let c = CutoffSample { value: 0.5, grad: V3::new(1.0, 2.0, 3.0), laplacian: -4.0 };
        let v = V3c::new(C64::new(1.0, 1.0), C64::new(0.0, 2.0), C64::new(3.0, 0.0));
        let out = commutator(&c, &FieldSample { value: v, grad: M3c::zeros() });
        assert_eq!(out, v * C64::new(4.0, 0.0));
    }

    #[test]
    fn commutator_equals_product_rule_by_finite_differences() {
        // [-Δ, J]u = -Δ(Ju) + JΔu for a smooth free field u.
        let s = presets::desk();
        let cut = cutoff_function(Group::T, &s);
        let kappa = C64::new(2.0, 0.0);
        let u = Field::new(kappa).with(Source::Point { at: V3::new(0.1, 0.2, 0.0), pol: V3c::new(C64::new(1.0, 0.0), C64::new(0.0, 1.0), C64::new(0.2, 0.0)) });
        let x = V3::new(0.5, 0.4, 0.55);
        let h = 1e-3;
        let ju = |p: V3| u.value_at(&p) * C64::new(cut.eval(&p).value, 0.0);
        let mut lap_ju = V3c::zeros();
        let mut lap_u = V3c::zeros();
        for i in 0..3 {
            let mut d = V3::zeros();
            d[i] = h;
            lap_ju += (ju(x + d) - ju(x) * C64::new(2.0, 0.0) + ju(x - d)) / C64::new(h * h, 0.0);
            lap_u += (u.value_at(&(x + d)) - u.value_at(&x) * C64::new(2.0, 0.0) + u.value_at(&(x - d))) / C64::new(h * h, 0.0);
        }
        let fd = -lap_ju + lap_u * C64::new(cut.eval(&x).value, 0.0);
        let an = commutator(&cut.eval(&x), &u.sample(&EvalPoint::free(x)));
        assert!((fd - an).norm() < 1e-4 * an.norm(), "{fd} {an}");
    }

    #[test]
    fn w_tilde_matches_divergence_form() {
        // W̃A = -∇(ã·A) - δ̃A, checked against finite differences of ã·A.
        let s = presets::desk();
        let f = s.frequency().unwrap();
        let g = s.transmitters()[0];
        let x = s.regions[g].center + V3::new(0.05, 0.03, -0.04);
        let u = Field::new(f.kappa()).with(Source::Point { at: V3::new(3.0, 1.0, 0.0), pol: V3c::new(C64::new(1.0, 0.0), C64::new(0.5, 0.5), C64::new(0.0, 1.0)) });
        let c = adjoint_coefficients(&s, &x, Some(g), &f);
        let dot = |p: V3| {
            let c = adjoint_coefficients(&s, &p, Some(g), &f);
            c.grad_log.dot(&u.value_at(&p))
        };
        let h = 1e-6;
        let mut grad = V3c::zeros();
        for i in 0..3 {
            let mut d = V3::zeros();
            d[i] = h;
            grad[i] = (dot(x + d) - dot(x - d)) / C64::new(2.0 * h, 0.0);
        }
        let fd = -grad - u.value_at(&x) * c.delta;
        let an = apply_w_tilde(&c, &u.sample(&EvalPoint::free(x)));
        assert!((fd - an).norm() < 1e-6 * an.norm());
    }

    #[test]
    fn lossless_real_material_has_self_conjugate_tilde() {
        let s = presets::desk().lossless().unwrap();
        let f = s.frequency().unwrap();
        let g = s.transmitters()[0];
        let x = s.regions[g].center + V3::new(0.05, 0.0, 0.02);
        let w = s.regions[g].coefficients(&x, &f);
        let t = adjoint_coefficients(&s, &x, Some(g), &f.negated());
        assert!((t.delta - w.delta_k2).norm() < 1e-12 && (t.grad_log - w.grad_log).norm() < 1e-12);
        let free = adjoint_coefficients(&s, &V3::new(3.0, -2.0, 0.0), None, &f);
        assert_eq!(free.delta, C64::new(0.0, 0.0));
    }

    #[test]
    fn deposited_source_preserves_moment() {
        let s = presets::desk();
        let g = s.transmitters()[0];
        let c = sample_region(&s, g, 64);
        let rho = deposit_source(&s, g, &c);
        let moment: V3c = rho.iter().zip(&c.weights).map(|(r, w)| r * C64::new(*w, 0.0)).sum();
        let exact: V3 = s.regions[g].wire_volume_rule(6, 12, 10).iter().map(|(p, w)| s.regions[g].source_density(p) * *w).sum();
        assert!((moment - exact.map(|v| C64::new(v, 0.0))).norm() < 1e-12);
        // flux 1 over length 2L with taper (1-(t/L)²)² integrates to 16L/15
        let w = s.regions[g].wire.unwrap();
        assert!((exact.z - 16.0 * w.half_length / 15.0).abs() < 1e-10);
    }
}
