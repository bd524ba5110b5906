//! Fields represented by their sources, evaluated through the free kernel.
//!
//! Every field in the solver is a superposition of free-kernel potentials:
//! densities sampled on a collocation carrier (cell model), oriented point
//! sources, or position derivatives of point sources. A field therefore has an
//! exact value and gradient at every point, and evaluation at a carrier node
//! uses the cell self-term for the node's own cell.

use crate::greens::{ball_potential, cell_radius, self_term, FreeKernel};
use crate::quadrature::PointSet;
use crate::{par, M3c, V3c, C64, V3, ZERO};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

static NEXT_UID: AtomicU64 = AtomicU64::new(1);

/// Weighted collocation nodes. Each node stands for a cell whose volume is its
/// weight; `radii` are the radii of the equal-volume balls.
#[derive(Debug)]
pub struct Carrier {
    uid: u64,
    /// Scene region the nodes discretise, if any.
    pub region: Option<usize>,
    pub points: Vec<V3>,
    pub weights: Vec<f64>,
    pub radii: Vec<f64>,
}

impl Carrier {
    pub fn new(set: PointSet, region: Option<usize>) -> Arc<Self> {
        let radii = set.weights.iter().map(|w| cell_radius(*w)).collect();
        Arc::new(Self { uid: NEXT_UID.fetch_add(1, Ordering::Relaxed), region, points: set.points, weights: set.weights, radii })
    }

    pub fn uid(&self) -> u64 {
        self.uid
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Evaluation points at the nodes, tagged so the self cell is recognised.
    pub fn eval_points(&self) -> Vec<EvalPoint> {
        (0..self.len()).map(|i| EvalPoint { x: self.points[i], tag: Some((self.uid, i)) }).collect()
    }

    /// Kernel of node `q` seen from `p`: value and gradient in the observation
    /// point. At the node itself this is the cell self-term with zero gradient;
    /// between distinct nodes it is the point kernel; at untagged points
    /// inside the cell the uniform-ball potential is used.
    #[inline]
    pub fn kernel(&self, k: &FreeKernel, q: usize, p: &EvalPoint) -> (C64, V3c) {
        let y = self.points[q];
        match p.tag {
            Some((uid, i)) if uid == self.uid && i == q => (self_term(k.kappa, self.weights[q]), V3c::zeros()),
            Some(_) => {
                let (g, gr) = k.value_grad(&(p.x - y));
                (g * self.weights[q], gr * C64::new(self.weights[q], 0.0))
            }
            None => {
                let d = p.x - y;
                let s = d.norm();
                let a = self.radii[q];
                if s < a {
                    let (u, du) = ball_potential(k.kappa, a, s);
                    let grad = if s > 0.0 { (d / s).map(|c| du * c) } else { V3c::zeros() };
                    (u, grad)
                } else {
                    let (g, gr) = k.value_grad(&d);
                    (g * self.weights[q], gr * C64::new(self.weights[q], 0.0))
                }
            }
        }
    }
}

/// An observation point, optionally identified as a carrier node.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalPoint {
    pub x: V3,
    pub tag: Option<(u64, usize)>,
}

impl EvalPoint {
    pub fn free(x: V3) -> Self {
        Self { x, tag: None }
    }
}

/// Field value and Jacobian `grad[(i, j)] = ∂_j u_i`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FieldSample {
    pub value: V3c,
    pub grad: M3c,
}

impl FieldSample {
    pub fn zero() -> Self {
        Self { value: V3c::zeros(), grad: M3c::zeros() }
    }
    pub fn div(&self) -> C64 {
        self.grad.trace()
    }
    fn add(&mut self, o: &FieldSample) {
        self.value += o.value;
        self.grad += o.grad;
    }
}

#[derive(Debug, Clone)]
pub enum Source {
    /// `Σ_q K_q(x) ρ_q` over the nodes of a carrier.
    Cells { carrier: Arc<Carrier>, density: Vec<V3c> },
    /// `g(x, at)·pol`.
    Point { at: V3, pol: V3c },
    /// `∂_t g(x, at + t·along)·pol` at `t = 0`.
    PointDeriv { at: V3, along: V3, pol: V3c },
}

impl Source {
    pub fn sample(&self, k: &FreeKernel, p: &EvalPoint) -> FieldSample {
        match self {
            Source::Cells { carrier, density } => {
                let mut out = FieldSample::zero();
                for (q, rho) in density.iter().enumerate() {
                    if rho.x == ZERO && rho.y == ZERO && rho.z == ZERO {
                        continue;
                    }
                    let (v, g) = carrier.kernel(k, q, p);
                    out.value += rho * v;
                    out.grad += rho * g.transpose();
                }
                out
            }
            Source::Point { at, pol } => {
                let (g, gr) = k.value_grad(&(p.x - at));
                FieldSample { value: pol * g, grad: pol * gr.transpose() }
            }
            Source::PointDeriv { at, along, pol } => {
                let s = k.full(&(p.x - at));
                let al = along.map(|c| C64::new(c, 0.0));
                let dv = -s.grad.dot(&al);
                let dg = -(s.hess * al);
                FieldSample { value: pol * dv, grad: pol * dg.transpose() }
            }
        }
    }
}

/// Superposition of sources at a fixed kernel wavenumber.
#[derive(Debug, Clone)]
pub struct Field {
    pub kernel: FreeKernel,
    pub sources: Vec<Source>,
}

impl Field {
    pub fn new(kappa: C64) -> Self {
        Self { kernel: FreeKernel::new(kappa), sources: Vec::new() }
    }

    pub fn with(mut self, s: Source) -> Self {
        self.sources.push(s);
        self
    }

    pub fn extend(&mut self, other: &Field) {
        self.sources.extend(other.sources.iter().cloned());
    }

    pub fn sample(&self, p: &EvalPoint) -> FieldSample {
        let mut out = FieldSample::zero();
        for s in &self.sources {
            out.add(&s.sample(&self.kernel, p));
        }
        out
    }

    pub fn sample_many(&self, pts: &[EvalPoint]) -> Vec<FieldSample> {
        par::map_range(pts.len(), |i| self.sample(&pts[i]))
    }

    pub fn value_at(&self, x: &V3) -> V3c {
        self.sample(&EvalPoint::free(*x)).value
    }
}

/// Linear functional `L(u) = Σ α_k·u(p_k) + β_k ∇·u(p_k)`.
#[derive(Debug, Clone, Default)]
pub struct LinearFunctional {
    pub terms: Vec<(EvalPoint, V3c, C64)>,
}

impl LinearFunctional {
    pub fn apply(&self, field: &Field) -> C64 {
        let parts = par::map_range(self.terms.len(), |i| {
            let (p, a, b) = &self.terms[i];
            let s = field.sample(p);
            a.dot(&s.value) + b * s.div()
        });
        parts.into_iter().sum()
    }

    /// The functional applied to the unit densities `e_t` at each node of a
    /// carrier, laid out as `[3q + t]`.
    pub fn carrier_row(&self, carrier: &Carrier, k: &FreeKernel) -> Vec<C64> {
        let rows = par::map_range(carrier.len(), |q| {
            let mut out = [ZERO; 3];
            for (p, a, b) in &self.terms {
                let (v, g) = carrier.kernel(k, q, p);
                for t in 0..3 {
                    out[t] += a[t] * v + b * g[t];
                }
            }
            out
        });
        rows.into_iter().flatten().collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quadrature::sample_ball;

    fn kappa() -> C64 {
        C64::new(2.0, 0.0)
    }

    #[test]
    fn cell_field_far_away_matches_point_sum() {
        let c = Carrier::new(sample_ball(&V3::zeros(), 0.3, 20), None);
        let rho: Vec<V3c> = (0..c.len()).map(|i| V3c::new(C64::new(1.0, i as f64), ZERO, ZERO)).collect();
        let f = Field::new(kappa()).with(Source::Cells { carrier: c.clone(), density: rho.clone() });
        let x = V3::new(2.0, 1.0, 0.5);
        let k = FreeKernel::new(kappa());
        let direct: C64 = (0..c.len()).map(|q| rho[q].x * k.value(&(x - c.points[q])) * c.weights[q]).sum();
        assert!((f.value_at(&x).x - direct).norm() < 1e-14 * direct.norm());
    }

    #[test]
    fn gradients_match_finite_differences_for_all_source_kinds() {
        let c = Carrier::new(sample_ball(&V3::zeros(), 0.3, 20), None);
        let dens = vec![V3c::new(ZERO, C64::new(1.0, 0.5), C64::new(0.0, 2.0)); c.len()];
        let pol = V3c::new(C64::new(1.0, 0.0), C64::new(0.0, 1.0), C64::new(0.5, 0.0));
        let f = Field::new(kappa()).with(Source::Cells { carrier: c, density: dens }).with(Source::Point { at: V3::new(1.0, 0.0, 0.0), pol }).with(Source::PointDeriv {
            at: V3::new(0.0, 1.0, 0.0),
            along: V3::new(0.6, 0.0, 0.8),
            pol,
        });
        let x = V3::new(0.5, 0.6, -0.7);
        let s = f.sample(&EvalPoint::free(x));
        let h = 1e-5;
        for j in 0..3 {
            let mut d = V3::zeros();
            d[j] = h;
            let fd = (f.value_at(&(x + d)) - f.value_at(&(x - d))) / C64::new(2.0 * h, 0.0);
            for i in 0..3 {
                assert!((fd[i] - s.grad[(i, j)]).norm() < 1e-6 * (1.0 + s.grad.norm()));
            }
        }
    }

    #[test]
    fn point_derivative_matches_moved_source() {
        let pol = V3c::new(C64::new(1.0, 0.0), ZERO, ZERO);
        let along = V3::new(0.0, 0.0, 1.0);
        let at = V3::new(0.2, 0.1, 0.0);
        let x = V3::new(1.0, 1.0, 1.0);
        let h = 1e-5;
        let d = Field::new(kappa()).with(Source::PointDeriv { at, along, pol }).value_at(&x).x;
        let p = Field::new(kappa()).with(Source::Point { at: at + along * h, pol }).value_at(&x).x;
        let m = Field::new(kappa()).with(Source::Point { at: at - along * h, pol }).value_at(&x).x;
        assert!(((p - m) / (2.0 * h) - d).norm() < 1e-8);
    }

    #[test]
    fn carrier_row_reproduces_functional() {
        let c = Carrier::new(sample_ball(&V3::zeros(), 0.3, 12), None);
        let lf = LinearFunctional {
            terms: vec![
                (EvalPoint::free(V3::new(1.0, 0.0, 0.0)), V3c::new(C64::new(1.0, 0.0), ZERO, C64::new(0.0, 1.0)), C64::new(0.3, 0.0)),
                (c.eval_points()[0], V3c::new(ZERO, C64::new(1.0, 0.0), ZERO), C64::new(0.0, -0.2)),
            ],
        };
        let k = FreeKernel::new(kappa());
        let row = lf.carrier_row(&c, &k);
        let dens: Vec<V3c> = (0..c.len()).map(|i| V3c::new(C64::new(i as f64, 1.0), C64::new(0.5, 0.0), C64::new(0.0, i as f64))).collect();
        let f = Field::new(kappa()).with(Source::Cells { carrier: c.clone(), density: dens.clone() });
        let via_row: C64 = dens.iter().enumerate().map(|(q, d)| (0..3).map(|t| row[3 * q + t] * d[t]).sum::<C64>()).sum();
        assert!((via_row - lf.apply(&f)).norm() < 1e-12 * via_row.norm());
    }
}
