//! Quadrature rules: Gauss–Legendre, spherical shells and annuli, polar discs
//! and clipped-lattice sampling of balls.

use crate::V3;
use std::f64::consts::PI;

/// Gauss–Legendre nodes and weights on `[-1, 1]` (Newton on `P_n`).
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n > 0, "at least one node");
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut z = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, z);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * z * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            let pn = if n == 1 { z } else { p1 };
            let pnm1 = if n == 1 { 1.0 } else { p0 };
            dp = n as f64 * (z * pn - pnm1) / (z * z - 1.0);
            let dz = pn / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        x[i] = -z;
        x[n - 1 - i] = z;
        let wi = 2.0 / ((1.0 - z * z) * dp * dp);
        w[i] = wi;
        w[n - 1 - i] = wi;
    }
    (x, w)
}

/// Gauss–Legendre rule mapped to `[a, b]`.
pub fn gauss_legendre_on(n: usize, a: f64, b: f64) -> (Vec<f64>, Vec<f64>) {
    let (x, w) = gauss_legendre(n);
    let h = 0.5 * (b - a);
    (x.iter().map(|t| a + h * (t + 1.0)).collect(), w.iter().map(|v| v * h).collect())
}

/// Weighted point set.
#[derive(Debug, Clone, Default)]
pub struct PointSet {
    pub points: Vec<V3>,
    pub weights: Vec<f64>,
}

impl PointSet {
    pub fn len(&self) -> usize {
        self.points.len()
    }
    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
    pub fn total_weight(&self) -> f64 {
        self.weights.iter().sum()
    }
}

/// Product rule on the unit sphere: Gauss–Legendre in `cos θ` times a uniform
/// (trapezoidal) rule in `φ`. Returns unit directions and solid-angle weights.
pub fn sphere_rule(n_theta: usize, n_phi: usize) -> (Vec<V3>, Vec<f64>) {
    let (ct, wt) = gauss_legendre(n_theta);
    let mut dirs = Vec::with_capacity(n_theta * n_phi);
    let mut ws = Vec::with_capacity(n_theta * n_phi);
    let dphi = 2.0 * PI / n_phi as f64;
    for (c, w) in ct.iter().zip(&wt) {
        let s = (1.0 - c * c).sqrt();
        for j in 0..n_phi {
            let phi = (j as f64 + 0.5) * dphi;
            dirs.push(V3::new(s * phi.cos(), s * phi.sin(), *c));
            ws.push(w * dphi);
        }
    }
    (dirs, ws)
}

/// Product rule on the spherical shell `r_in ≤ |x - c| ≤ r_out` with `(n_rho,
/// n_theta, n_phi)` nodes; weights include the `ρ²` Jacobian.
pub fn annulus_rule(center: &V3, r_in: f64, r_out: f64, n: [usize; 3]) -> PointSet {
    let (rho, wr) = gauss_legendre_on(n[0], r_in, r_out);
    let (dirs, wd) = sphere_rule(n[1], n[2]);
    let mut set = PointSet::default();
    for (r, w) in rho.iter().zip(&wr) {
        for (d, v) in dirs.iter().zip(&wd) {
            set.points.push(center + d * *r);
            set.weights.push(w * v * r * r);
        }
    }
    set
}

/// Polar rule on a disc of radius `radius` centred at `center` with unit
/// normal `normal`: Gauss–Legendre in the radius, uniform in the angle.
pub fn disc_rule(center: &V3, normal: &V3, radius: f64, n_r: usize, n_phi: usize) -> PointSet {
    let (t1, t2) = tangent_frame(normal);
    let (rs, wr) = gauss_legendre_on(n_r, 0.0, radius);
    let dphi = 2.0 * PI / n_phi as f64;
    let mut set = PointSet::default();
    for (r, w) in rs.iter().zip(&wr) {
        for j in 0..n_phi {
            let phi = (j as f64 + 0.5) * dphi;
            set.points.push(center + (t1 * phi.cos() + t2 * phi.sin()) * *r);
            set.weights.push(w * r * dphi);
        }
    }
    set
}

/// Two unit vectors completing `n` to a right-handed orthonormal frame.
pub fn tangent_frame(n: &V3) -> (V3, V3) {
    let a = if n.x.abs() < 0.9 { V3::x() } else { V3::y() };
    let t1 = n.cross(&a).normalize();
    let t2 = n.cross(&t1);
    (t1, t2)
}

/// Samples the ball `|x - c| < radius` on a cubic lattice aimed at `target`
/// cells. Each lattice cell that meets the ball yields one point at the
/// centroid of its inside part with weight equal to the inside volume
/// (estimated by sub-sampling at a resolution of `h/16`).
/// Cells less than a third inside are merged into the nearest kept point so
/// that no point carries a vanishing weight.
pub fn sample_ball(center: &V3, radius: f64, target: usize) -> PointSet {
    assert!(radius > 0.0 && target > 0);
    let vol = 4.0 / 3.0 * PI * radius.powi(3);
    let h = (vol / target as f64).cbrt();
    let m = (radius / h).ceil() as i64 + 1;
    let sub = 16usize;
    let hs = h / sub as f64;
    let mut kept: Vec<(V3, f64)> = Vec::new();
    let mut small: Vec<(V3, f64)> = Vec::new();
    for i in -m..=m {
        for j in -m..=m {
            for k in -m..=m {
                let c0 = V3::new(i as f64, j as f64, k as f64) * h;
                // quick reject: cell entirely outside
                if c0.norm() - 0.87 * h > radius {
                    continue;
                }
                let mut cnt = 0usize;
                let mut acc = V3::zeros();
                for a in 0..sub {
                    for b in 0..sub {
                        for c in 0..sub {
                            let p = c0 + V3::new((a as f64 + 0.5) * hs - 0.5 * h, (b as f64 + 0.5) * hs - 0.5 * h, (c as f64 + 0.5) * hs - 0.5 * h);
                            if p.norm() < radius {
                                cnt += 1;
                                acc += p;
                            }
                        }
                    }
                }
                if cnt == 0 {
                    continue;
                }
                let frac = cnt as f64 / (sub * sub * sub) as f64;
                let entry = (acc / cnt as f64, frac * h * h * h);
                if frac >= 1.0 / 3.0 {
                    kept.push(entry);
                } else {
                    small.push(entry);
                }
            }
        }
    }
    if kept.is_empty() {
        // degenerate request: a single point carrying the whole ball
        return PointSet { points: vec![*center], weights: vec![vol] };
    }
    for (p, w) in small {
        let idx = kept.iter().enumerate().map(|(i, (q, _))| (i, (q - p).norm())).fold((0, f64::INFINITY), |a, b| if b.1 < a.1 { b } else { a }).0;
        kept[idx].1 += w;
    }
    PointSet { points: kept.iter().map(|(p, _)| center + p).collect(), weights: kept.iter().map(|(_, w)| *w).collect() }
}
