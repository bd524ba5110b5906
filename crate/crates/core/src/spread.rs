//! Far-field reduction of the environment: the scattering kernel on the
//! scatterer nodes, the spread matrix between ray directions seen from the two
//! shell centres, and the directional `h` vectors of the shell traces.
//!
//! For `D_M ≫ r` the environment kernel between the shells factorises into
//! plane-wave phases across each shell times the scattering kernel between
//! the rays `Ω_R = (y - e)/|y - e|` and `Ω_T = (y' - origin)/|y' - origin|`,
//! so that `H^scatt ≈ Σ_{c,c'} h_R(Ω_c)ᵀ A_{cc'} h_T(Ω'_{c'})`.

use crate::channel::{TransferMatrix, TransferMode};
use crate::decouple::{DecoupleContext, GVector};
use crate::linalg::CMatrix;
use crate::{M3c, V3c, C64, J, V3, ZERO};
use serde::Serialize;
use std::f64::consts::PI;

/// Scattering kernel on the scatterer nodes:
/// `t(y_c, y_c') = e^{jκ(s_c + s'_c')} [(I + M)^{-1}]_{cc'} V_{c'} / w_{c'}`
/// with `V = -δk² I + jκ ∇ln k² Ω'ᵀ`. Its identity (single-scattering) part is
/// `θ`, the remainder `τ`.
#[derive(Debug, Clone)]
pub struct ScatteringKernel {
    pub kappa: C64,
    pub points: Vec<V3>,
    pub weights: Vec<f64>,
    /// `|y - e|` and `|y - origin|`.
    pub s_r: Vec<f64>,
    pub s_t: Vec<f64>,
    pub omega_r: Vec<V3>,
    pub omega_t: Vec<V3>,
    /// `(I + M)^{-1}` of the environment.
    pub inverse: CMatrix,
    pub v: Vec<M3c>,
}

impl ScatteringKernel {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    fn inv_block(&self, c: usize, cp: usize) -> M3c {
        M3c::from_fn(|s, t| self.inverse[(3 * c + s, 3 * cp + t)])
    }

    /// `t(y_c, y_c')`, optionally without the single-scattering part.
    pub fn t(&self, c: usize, cp: usize, multiple_only: bool) -> M3c {
        let mut b = self.inv_block(c, cp);
        if multiple_only && c == cp {
            b -= M3c::identity();
        }
        let phase = (J * self.kappa * (self.s_r[c] + self.s_t[cp])).exp();
        b * self.v[cp] * (phase / self.weights[cp])
    }

    /// Single-scattering density `θ(y_c)` (per unit volume, with phases).
    pub fn theta(&self, c: usize) -> M3c {
        let phase = (J * self.kappa * (self.s_r[c] + self.s_t[c])).exp();
        self.v[c] * phase
    }
}

/// Builds the scattering kernel from the environment solver.
pub fn scattering_kernel(ctx: &DecoupleContext) -> Option<ScatteringKernel> {
    let env = ctx.env.as_ref()?;
    let scene = &ctx.disc.scene;
    let kappa = ctx.f.kappa();
    let sys = &env.system;
    let mut k = ScatteringKernel {
        kappa,
        points: Vec::new(),
        weights: Vec::new(),
        s_r: Vec::new(),
        s_t: Vec::new(),
        omega_r: Vec::new(),
        omega_t: Vec::new(),
        inverse: env.lu.inverse(),
        v: Vec::new(),
    };
    for (p, (ci, q)) in sys.node_map.iter().enumerate() {
        let y = sys.carriers[*ci].points[*q];
        let (dr, dt) = (y - scene.e, y - scene.origin);
        let ot = dt / dt.norm();
        let c = &sys.coeffs[p];
        let v = M3c::identity() * (-c.delta_k2) + c.grad_log * ot.map(|x| J * kappa * x).transpose();
        k.points.push(y);
        k.weights.push(sys.carriers[*ci].weights[*q]);
        k.s_r.push(dr.norm());
        k.s_t.push(dt.norm());
        k.omega_r.push(dr / dr.norm());
        k.omega_t.push(ot);
        k.v.push(v);
    }
    Some(k)
}

/// Spread matrix: the 3×3 block `a_{cc'}` of
/// `A_{cc'} = -r⁴ w_c w_c' t_{cc'} / (16π² s_c s'_c')`, which fills all four
/// 3×3 blocks of the 6×6 spread matrix for the ray pair `(Ω_c, Ω'_c')`.
#[derive(Debug, Clone, Serialize)]
pub struct SpreadTable {
    pub r: f64,
    pub n: usize,
    #[serde(skip)]
    pub omega_r: Vec<V3>,
    #[serde(skip)]
    pub omega_t: Vec<V3>,
    #[serde(skip)]
    pub blocks: Vec<M3c>,
}

pub fn spread_matrix(kernel: &ScatteringKernel, r: f64, multiple_only: bool) -> SpreadTable {
    let n = kernel.len();
    let blocks = crate::par::map_range(n * n, |i| {
        let (c, cp) = (i / n, i % n);
        let scale = -r.powi(4) * kernel.weights[c] * kernel.weights[cp] / (16.0 * PI * PI * kernel.s_r[c] * kernel.s_t[cp]);
        kernel.t(c, cp, multiple_only) * C64::new(scale, 0.0)
    });
    SpreadTable { r, n, omega_r: kernel.omega_r.clone(), omega_t: kernel.omega_t.clone(), blocks }
}

impl SpreadTable {
    pub fn block(&self, c: usize, cp: usize) -> M3c {
        self.blocks[c * self.n + cp]
    }

    /// 6×6 spread matrix for a pair of ray directions: the sum of the node
    /// blocks whose rays match within `tol` (zero when no ray hits a
    /// scatterer node), replicated into the four 3×3 quadrants.
    pub fn lookup(&self, omega_r: &V3, omega_t: &V3, tol: f64) -> [[M3c; 2]; 2] {
        let mut a = M3c::zeros();
        for c in 0..self.n {
            if (self.omega_r[c] - omega_r).norm() > tol {
                continue;
            }
            for cp in 0..self.n {
                if (self.omega_t[cp] - omega_t).norm() <= tol {
                    a += self.block(c, cp);
                }
            }
        }
        [[a, a], [a, a]]
    }
}

/// Directional vectors of a shell trace:
/// `h1(Ω) = Σ w e^{-jκ r x̂·Ω} deriv`, `h2(Ω) = Σ w e^{-jκ r x̂·Ω} jκ(x̂·Ω) value`.
#[derive(Debug, Clone, Serialize)]
pub struct HVector {
    #[serde(skip)]
    pub dirs: Vec<V3>,
    pub h1: Vec<V3c>,
    pub h2: Vec<V3c>,
}

impl HVector {
    pub fn combined(&self, i: usize) -> V3c {
        self.h1[i] + self.h2[i]
    }
}

pub fn h_vectors(g: &GVector, kappa: C64, dirs: &[V3]) -> HVector {
    let rows = crate::par::map_range(dirs.len(), |i| {
        let om = dirs[i];
        let (mut h1, mut h2) = (V3c::zeros(), V3c::zeros());
        for k in 0..g.dirs.len() {
            let c = g.dirs[k].dot(&om);
            let ph = (-J * kappa * g.r * c).exp() * g.weights[k];
            h1 += g.deriv[k] * ph;
            h2 += g.value[k] * (ph * J * kappa * c);
        }
        (h1, h2)
    });
    let (h1, h2) = rows.into_iter().unzip();
    HVector { dirs: dirs.to_vec(), h1, h2 }
}

/// Far-field scattered transfer matrix `Σ_{c,c'} h_R(Ω_c)ᵀ A_{cc'} h_T(Ω'_c')`.
pub fn scatt_transfer(table: &SpreadTable, h_r: &[HVector], h_t: &[HVector], template: &TransferMatrix) -> TransferMatrix {
    let mut out = template.clone();
    out.mode = TransferMode::FarField;
    for (m, hr) in h_r.iter().enumerate() {
        for (n, ht) in h_t.iter().enumerate() {
            let mut acc = ZERO;
            for c in 0..table.n {
                let left = hr.combined(c);
                let mut inner = V3c::zeros();
                for cp in 0..table.n {
                    inner += table.block(c, cp) * ht.combined(cp);
                }
                acc += left.dot(&inner);
            }
            out.entries[m][n] = acc;
        }
    }
    out
}

/// Far-field transfer matrix of the scattered part for a context.
pub fn farfield_transfer(ctx: &DecoupleContext, grid: [usize; 2], template: &TransferMatrix) -> Result<Option<TransferMatrix>, crate::channel::ChannelError> {
    let Some(kernel) = scattering_kernel(ctx) else { return Ok(None) };
    let table = spread_matrix(&kernel, ctx.disc.scene.r, false);
    let scene = &ctx.disc.scene;
    let kappa = ctx.f.kappa();
    let h_t: Vec<HVector> = (0..scene.transmitters().len()).map(|n| h_vectors(&crate::decouple::gvector_t(ctx, n, grid), kappa, &kernel.omega_t)).collect();
    let mut h_r = Vec::new();
    for m in 0..scene.receivers().len() {
        h_r.push(h_vectors(&crate::decouple::gvector_r(ctx, m, grid)?, kappa, &kernel.omega_r));
    }
    Ok(Some(scatt_transfer(&table, &h_r, &h_t, template)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quadrature::sphere_rule;

    #[test]
    fn h_vector_of_constant_trace_is_spherical_bessel() {
        // ∫ e^{-jκ r x̂·Ω} dx̂ = 4π sin(κr)/(κr).
        let (dirs, weights) = sphere_rule(16, 32);
        let one = V3c::new(C64::new(1.0, 0.0), ZERO, ZERO);
        let g = GVector { side: crate::operators::Side::T, r: 1.0, deriv: vec![one; dirs.len()], value: vec![V3c::zeros(); dirs.len()], dirs, weights };
        let kappa = C64::new(2.0, 0.0);
        let h = h_vectors(&g, kappa, &[V3::new(0.3, 0.4, 0.866).normalize()]);
        let exact = 4.0 * PI * (2.0f64).sin() / 2.0;
        assert!((h.h1[0].x - exact).norm() < 1e-12);
        assert_eq!(h.h2[0], V3c::zeros());
    }

    #[test]
    fn lookup_returns_zero_for_missed_rays() {
        let t = SpreadTable { r: 1.0, n: 1, omega_r: vec![V3::x()], omega_t: vec![V3::y()], blocks: vec![M3c::identity()] };
        assert_eq!(t.lookup(&V3::z(), &V3::y(), 1e-6)[0][0], M3c::zeros());
        assert_eq!(t.lookup(&V3::x(), &V3::y(), 1e-6)[1][0], M3c::identity());
    }
}
