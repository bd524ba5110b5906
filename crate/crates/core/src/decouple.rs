//! Decoupling of transmitters, environment and receivers through the
//! enclosing shells.
//!
//! The receiver response factorises as
//! `u|_R = -R_R [-Δ, J_R] R_mid [-Δ, J_T] u_T`, where `u_T` is the field of
//! the transmitter subsystem alone, the commutators live on the shell
//! annuli, and `R_mid` is the complete resolvent (exact) or the environment
//! resolvent (small-antenna approximation). Shrinking the annuli to spheres
//! turns this into a double integral over the two shells of the
//! transmitter shell trace `g_T`, the receiver trace `g_R` and the
//! environment kernel between the shells.

use crate::channel::{receiver_functional, transmitter_source, ChannelError, TransferMatrix, TransferMode};
use crate::field::{Carrier, EvalPoint, Field, FieldSample, LinearFunctional, Source};
use crate::linalg::CMatrix;
use crate::operators::{adjoint_coefficients, annulus_set, commutator, cutoff_function, Group, Side};
use crate::quadrature::sphere_rule;
use crate::scatter::{BlockSystem, Discretization, ScatterError, Solver};
use crate::scene::Frequency;
use crate::{par, M3c, V3c, C64, V3, ZERO};
use serde::Serialize;
use std::sync::Arc;

/// Subsystem solvers shared by the decoupled computations.
pub struct DecoupleContext {
    pub disc: Discretization,
    pub f: Frequency,
    pub tx: Solver,
    pub rx: Solver,
    /// Environment solver (`None` without scatterers).
    pub env: Option<Solver>,
    full: std::sync::OnceLock<Result<Solver, String>>,
}

impl DecoupleContext {
    pub fn new(disc: Discretization, f: Frequency) -> Result<Self, ScatterError> {
        let tx = Solver::for_group(&disc, Group::T, &f)?;
        let rx = Solver::for_group(&disc, Group::R, &f)?;
        let env = if disc.scene.scatterers().is_empty() { None } else { Some(Solver::for_group(&disc, Group::M, &f)?) };
        Ok(Self { disc, f, tx, rx, env, full: std::sync::OnceLock::new() })
    }

    /// The complete solver, factorised on first use.
    pub fn full(&self) -> Result<&Solver, ScatterError> {
        match self.full.get_or_init(|| Solver::for_group(&self.disc, Group::Total, &self.f).map_err(|e| e.to_string())) {
            Ok(s) => Ok(s),
            Err(e) => Err(ScatterError::Scene(crate::scene::SceneError::Frequency(e.clone()))),
        }
    }

    fn middle(&self, which: Middle) -> Result<Option<&Solver>, ScatterError> {
        Ok(match which {
            Middle::Full => Some(self.full()?),
            Middle::Environment => self.env.as_ref(),
        })
    }

    /// Field of transmitter `n` (index into the transmitter list) in the
    /// transmitter subsystem.
    pub fn transmitter_field(&self, n: usize) -> Field {
        let t = self.disc.scene.transmitters()[n];
        self.tx.solve(&transmitter_source(&self.disc, t, &self.f))
    }

    /// Evaluation points at the receiver collocation nodes.
    pub fn receiver_nodes(&self) -> Vec<EvalPoint> {
        self.disc.group_carriers(Group::R).iter().flat_map(|c| c.eval_points()).collect()
    }
}

/// Resolvent used between the two shells.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Middle {
    Full,
    Environment,
}

/// Commutator `[-Δ, J_side]u` sampled on the side's annulus carrier.
pub fn annulus_commutator(ctx: &DecoupleContext, side: Side, u: &Field, grid: [usize; 3]) -> (Arc<Carrier>, Vec<V3c>) {
    let scene = &ctx.disc.scene;
    let carrier = annulus_set(scene, side, grid);
    let cut = cutoff_function(if side == Side::T { Group::T } else { Group::R }, scene);
    let pts: Vec<EvalPoint> = carrier.points.iter().map(|x| EvalPoint::free(*x)).collect();
    let samples = u.sample_many(&pts);
    let dens = carrier.points.iter().zip(&samples).map(|(x, s)| commutator(&cut.eval(x), s)).collect();
    (carrier, dens)
}

/// Receiver-node field of transmitter `n` through the annulus factorisation.
pub fn factorized_receiver_field(ctx: &DecoupleContext, n: usize, grid: [usize; 3], middle: Middle) -> Result<Vec<V3c>, ScatterError> {
    let u_t = ctx.transmitter_field(n);
    let (ca, f1) = annulus_commutator(ctx, Side::T, &u_t, grid);
    let psi = Field::new(ctx.f.kappa()).with(Source::Cells { carrier: ca, density: f1 });
    let v = match ctx.middle(middle)? {
        Some(s) => s.solve(&psi),
        None => psi,
    };
    let (cb, g) = annulus_commutator(ctx, Side::R, &v, grid);
    let w = ctx.rx.solve(&Field::new(ctx.f.kappa()).with(Source::Cells { carrier: cb, density: g }));
    Ok(w.sample_many(&ctx.receiver_nodes()).iter().map(|s| -s.value).collect())
}

/// Receiver-node field of transmitter `n` from the complete system.
pub fn direct_receiver_field(ctx: &DecoupleContext, n: usize) -> Result<Vec<V3c>, ScatterError> {
    let t = ctx.disc.scene.transmitters()[n];
    let u = ctx.full()?.solve(&transmitter_source(&ctx.disc, t, &ctx.f));
    Ok(u.sample_many(&ctx.receiver_nodes()).iter().map(|s| s.value).collect())
}

/// Max-norm of a nodal field.
pub fn max_norm(v: &[V3c]) -> f64 {
    v.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// Max-norm of a difference.
pub fn max_diff(a: &[V3c], b: &[V3c]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max)
}

/// Comparison of the direct and factorised receiver fields.
#[derive(Debug, Clone, Serialize)]
pub struct FactorizationReport {
    pub annulus: [usize; 3],
    pub middle: Middle,
    pub max_direct: f64,
    pub max_error: f64,
    pub rel_error: f64,
}

pub fn factorization_report(ctx: &DecoupleContext, n: usize, grid: [usize; 3], middle: Middle) -> Result<FactorizationReport, ScatterError> {
    let d = direct_receiver_field(ctx, n)?;
    let f = factorized_receiver_field(ctx, n, grid, middle)?;
    let (m, e) = (max_norm(&d), max_diff(&d, &f));
    Ok(FactorizationReport { annulus: grid, middle, max_direct: m, max_error: e, rel_error: e / m })
}

/// Trace of a field, or of a family of fields, on a shell of radius `r`:
/// `deriv` holds radial derivatives and `value` values at each direction.
#[derive(Debug, Clone, Serialize)]
pub struct GVector {
    pub side: Side,
    pub r: f64,
    #[serde(skip)]
    pub dirs: Vec<V3>,
    #[serde(skip)]
    pub weights: Vec<f64>,
    pub deriv: Vec<V3c>,
    pub value: Vec<V3c>,
}

impl GVector {
    /// Largest difference to another trace on the same grid.
    pub fn max_diff(&self, o: &GVector) -> f64 {
        let a = self.deriv.iter().zip(&o.deriv).chain(self.value.iter().zip(&o.value));
        a.map(|(x, y)| (x - y).norm()).fold(0.0, f64::max)
    }

    pub fn max_abs(&self) -> f64 {
        self.deriv.iter().chain(&self.value).map(|z| z.norm()).fold(0.0, f64::max)
    }
}

/// Transmitter trace `g_T = (∂_ρ u_T, u_T)` on the shell `|x - origin| = r`.
pub fn gvector_t(ctx: &DecoupleContext, n: usize, grid: [usize; 2]) -> GVector {
    let u = ctx.transmitter_field(n);
    let scene = &ctx.disc.scene;
    let (dirs, weights) = sphere_rule(grid[0], grid[1]);
    let pts: Vec<EvalPoint> = dirs.iter().map(|d| EvalPoint::free(scene.origin + d * scene.r)).collect();
    let s = u.sample_many(&pts);
    let deriv = s.iter().zip(&dirs).map(|(s, d)| s.grad * d.map(|v| C64::new(v, 0.0))).collect();
    let value = s.iter().map(|s| s.value).collect();
    GVector { side: Side::T, r: scene.r, dirs, weights, deriv, value }
}

/// `L` composed with a resolvent, as a functional of the incident field:
/// `L(Rφ) = L(φ) + λ·(W φ)` with `λ = (I + M)^{-T}ℓ`.
pub fn adjoint_functional(solver: &Solver, lf: &LinearFunctional) -> LinearFunctional {
    let lambda = solver.adjoint_weights(&solver.functional_row(lf));
    let mut terms = lf.terms.clone();
    for (p, (ep, c)) in solver.system.nodes.iter().zip(&solver.system.coeffs).enumerate() {
        let l = V3c::new(lambda[3 * p], lambda[3 * p + 1], lambda[3 * p + 2]);
        terms.push((*ep, -l * c.delta_k2, l.dot(&c.grad_log)));
    }
    LinearFunctional { terms }
}

/// Applies an effective functional to the point sources `g(·, y)e_j` and
/// `∂_ρ g(·, y(ρ))e_j`: returns `(deriv, value)` vectors indexed by `j`.
fn point_responses(lf: &LinearFunctional, kernel: &crate::greens::FreeKernel, y: &V3, radial: &V3) -> (V3c, V3c) {
    let mut deriv = V3c::zeros();
    let mut value = V3c::zeros();
    let rad = radial.map(|v| C64::new(v, 0.0));
    for (p, a, b) in &lf.terms {
        let s = kernel.full(&(p.x - y));
        value += a * s.value + s.grad * *b;
        let dv = -s.grad.dot(&rad);
        let dg = -(s.hess * rad);
        deriv += a * dv + dg * *b;
    }
    (deriv, value)
}

/// Receiver trace `g_R`: the receiver functional applied to the receiver
/// subsystem's response to unit point sources on the shell (`value`) and to
/// their radial position derivatives (`deriv`).
pub fn gvector_r(ctx: &DecoupleContext, m: usize, grid: [usize; 2]) -> Result<GVector, ChannelError> {
    let scene = &ctx.disc.scene;
    let rid = scene.receivers()[m];
    let lf = adjoint_functional(&ctx.rx, &receiver_functional(scene, &ctx.f, rid)?);
    let (dirs, weights) = sphere_rule(grid[0], grid[1]);
    let kernel = ctx.rx.system.kernel;
    let resp = par::map_range(dirs.len(), |i| point_responses(&lf, &kernel, &(scene.e + dirs[i] * scene.r), &dirs[i]));
    let (deriv, value) = resp.into_iter().unzip();
    Ok(GVector { side: Side::R, r: scene.r, dirs, weights, deriv, value })
}

/// Point-source field on the transmitter shell equivalent (in the sharp
/// cutoff limit) to `-[-Δ, J_T]u_T`: `Σ w (g F1 - ∂_ρ g F2)`.
pub fn shell_source(gt: &GVector, anchor: &V3, kappa: C64) -> Field {
    let mut f = Field::new(kappa);
    for ((d, w), (f1, f2)) in gt.dirs.iter().zip(&gt.weights).zip(gt.deriv.iter().zip(&gt.value)) {
        let y = anchor + d * gt.r;
        f.sources.push(Source::Point { at: y, pol: f1 * C64::new(*w, 0.0) });
        f.sources.push(Source::PointDeriv { at: y, along: *d, pol: -f2 * C64::new(*w, 0.0) });
    }
    f
}

/// `r⁴ Σ_R w (P·V - Q·∂_ρV)` for a field `V` and a receiver trace `(P, Q)`.
pub fn shell_pairing(gr: &GVector, v: &Field, anchor: &V3) -> C64 {
    let pts: Vec<EvalPoint> = gr.dirs.iter().map(|d| EvalPoint::free(anchor + d * gr.r)).collect();
    let s: Vec<FieldSample> = v.sample_many(&pts);
    let mut acc = ZERO;
    for (i, smp) in s.iter().enumerate() {
        let d = gr.dirs[i].map(|x| C64::new(x, 0.0));
        let dv = smp.grad * d;
        acc += (gr.deriv[i].dot(&smp.value) - gr.value[i].dot(&dv)) * gr.weights[i];
    }
    acc * gr.r.powi(4)
}

/// Which part of the environment kernel enters the shell pairing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum KernelPart {
    /// Free kernel plus scattering.
    Total,
    /// Scattering only.
    Scattered,
}

/// Transfer matrix from the shell reduction with the environment resolvent.
pub fn decoupled_transfer(ctx: &DecoupleContext, grid: [usize; 2], part: KernelPart) -> Result<TransferMatrix, ChannelError> {
    let scene = &ctx.disc.scene;
    let (tx, rx) = (scene.transmitters(), scene.receivers());
    let grs: Vec<GVector> = (0..rx.len()).map(|m| gvector_r(ctx, m, grid)).collect::<Result<_, _>>()?;
    let mut entries = vec![vec![ZERO; tx.len()]; rx.len()];
    for n in 0..tx.len() {
        let gt = gvector_t(ctx, n, grid);
        let psi = shell_source(&gt, &scene.origin, ctx.f.kappa());
        let v = match (&ctx.env, part) {
            (Some(env), KernelPart::Total) => env.solve(&psi),
            (Some(env), KernelPart::Scattered) => {
                let mut s = env.solve(&psi);
                s.sources.drain(..psi.sources.len());
                s
            }
            (None, KernelPart::Total) => psi,
            (None, KernelPart::Scattered) => Field::new(ctx.f.kappa()),
        };
        for (m, gr) in grs.iter().enumerate() {
            entries[m][n] = shell_pairing(gr, &v, &scene.e);
        }
    }
    Ok(TransferMatrix {
        f_hz: ctx.f.hz(),
        mode: TransferMode::Decoupled,
        rx_ids: rx.iter().map(|&i| scene.regions[i].id.clone()).collect(),
        tx_ids: tx.iter().map(|&i| scene.regions[i].id.clone()).collect(),
        entries,
    })
}

/// Shell traces of a side's Green kernel for one interior point `y`:
/// `deriv[k]`, `value[k]` are 3×3 (column `t` = unit source along `e_t`).
/// On the transmitter side the source sits at `y` and the trace is taken on
/// the shell; on the receiver side the sources sit on the shell and the
/// field is observed at `y`.
#[derive(Debug, Clone, Serialize)]
pub struct ShellTrace {
    pub side: Side,
    #[serde(skip)]
    pub dirs: Vec<V3>,
    pub deriv: Vec<M3c>,
    pub value: Vec<M3c>,
}

pub fn shell_traces(ctx: &DecoupleContext, side: Side, y: &V3, grid: [usize; 2]) -> ShellTrace {
    let scene = &ctx.disc.scene;
    let (dirs, _) = sphere_rule(grid[0], grid[1]);
    let unit = |t: usize| {
        let mut v = V3c::zeros();
        v[t] = C64::new(1.0, 0.0);
        v
    };
    let mut deriv = vec![M3c::zeros(); dirs.len()];
    let mut value = vec![M3c::zeros(); dirs.len()];
    match side {
        Side::T => {
            let pts: Vec<EvalPoint> = dirs.iter().map(|d| EvalPoint::free(scene.origin + d * scene.r)).collect();
            for t in 0..3 {
                let u = ctx.tx.solve(&Field::new(ctx.f.kappa()).with(Source::Point { at: *y, pol: unit(t) }));
                for (k, s) in u.sample_many(&pts).iter().enumerate() {
                    let d = dirs[k].map(|v| C64::new(v, 0.0));
                    value[k].set_column(t, &s.value);
                    deriv[k].set_column(t, &(s.grad * d));
                }
            }
        }
        Side::R => {
            let kernel = ctx.rx.system.kernel;
            for i in 0..3 {
                let lf = LinearFunctional { terms: vec![(EvalPoint::free(*y), unit(i), ZERO)] };
                let eff = adjoint_functional(&ctx.rx, &lf);
                let rows = par::map_range(dirs.len(), |k| point_responses(&eff, &kernel, &(scene.e + dirs[k] * scene.r), &dirs[k]));
                for (k, (dr, vl)) in rows.iter().enumerate() {
                    deriv[k].set_row(i, &dr.transpose());
                    value[k].set_row(i, &vl.transpose());
                }
            }
        }
    }
    ShellTrace { side, dirs, deriv, value }
}

/// Environment kernel between a receiver-shell point and a transmitter-shell
/// point as the 2×2 block `[[G, -∂_T G], [-∂_R G, ∂_R∂_T G]]` of 3×3 blocks.
pub fn mid_spread(ctx: &DecoupleContext, xhat_r: &V3, xhat_t: &V3) -> [[M3c; 2]; 2] {
    let scene = &ctx.disc.scene;
    let yt = scene.origin + xhat_t * scene.r;
    let yr = EvalPoint::free(scene.e + xhat_r * scene.r);
    let dr = xhat_r.map(|v| C64::new(v, 0.0));
    let mut out = [[M3c::zeros(); 2]; 2];
    for t in 0..3 {
        let mut pol = V3c::zeros();
        pol[t] = C64::new(1.0, 0.0);
        for (k, src) in [Source::Point { at: yt, pol }, Source::PointDeriv { at: yt, along: *xhat_t, pol }].into_iter().enumerate() {
            let psi = Field::new(ctx.f.kappa()).with(src);
            let v = match &ctx.env {
                Some(env) => env.solve(&psi),
                None => psi,
            };
            let s = v.sample(&yr);
            let sign = if k == 0 { 1.0 } else { -1.0 };
            out[0][k].set_column(t, &(s.value * C64::new(sign, 0.0)));
            out[1][k].set_column(t, &(s.grad * dr * C64::new(-sign, 0.0)));
        }
    }
    out
}

/// Reciprocity of a group's discrete resolvent under the quadrature pairing.
#[derive(Debug, Clone, Serialize)]
pub struct ReciprocityReport {
    pub group: Group,
    pub unknowns: usize,
    /// `‖D⁻¹ R̃ᵀ D - R‖_F / ‖R‖_F`.
    pub rel_error: f64,
}

/// Free-kernel matrix `G D` on the nodes (cell self-terms on the diagonal).
fn kernel_matrix(sys: &BlockSystem) -> CMatrix {
    let n = sys.dim();
    CMatrix::from_row_groups(n, n, 3, |p| {
        let mut rows = vec![ZERO; 3 * n];
        let mut col = 0;
        for c in &sys.carriers {
            for q in 0..c.len() {
                let (k, _) = c.kernel(&sys.kernel, q, &sys.nodes[p]);
                for s in 0..3 {
                    rows[s * n + 3 * (col + q) + s] = k;
                }
            }
            col += c.len();
        }
        rows
    })
}

/// `I + K̃` for the companion operator with coefficients evaluated at
/// `f_tilde`, in the integrated-by-parts form
/// `K̃_pq = -δ̃_q K_q(y_p) I - ∇K_q(y_p) ⊗ ã_q`.
fn tilde_matrix(disc: &Discretization, sys: &BlockSystem, f_tilde: &Frequency) -> CMatrix {
    let scene = &disc.scene;
    let coeffs: Vec<_> = sys.carriers.iter().flat_map(|c| c.points.iter().map(|x| adjoint_coefficients(scene, x, c.region, f_tilde)).collect::<Vec<_>>()).collect();
    let n = sys.dim();
    CMatrix::from_row_groups(n, n, 3, |p| {
        let mut rows = vec![ZERO; 3 * n];
        let mut col = 0;
        for c in &sys.carriers {
            for q in 0..c.len() {
                let (k, g) = c.kernel(&sys.kernel, q, &sys.nodes[p]);
                let ct = &coeffs[col + q];
                for s in 0..3 {
                    for t in 0..3 {
                        let mut v = -g[s] * ct.grad_log[t];
                        if s == t {
                            v -= ct.delta * k;
                            if col + q == p {
                                v += C64::new(1.0, 0.0);
                            }
                        }
                        rows[s * n + 3 * (col + q) + t] = v;
                    }
                }
            }
            col += c.len();
        }
        rows
    })
}

/// Checks `(H_ω - z)^{-1} = [(H̃_{-ω} - z)^{-1}]^‡` on a group's nodes, where
/// `‡` is the transpose under the quadrature pairing and the companion
/// operator's coefficients are evaluated at `-ω`.
pub fn reciprocity_check(disc: &Discretization, f: &Frequency, group: Group) -> Result<ReciprocityReport, ScatterError> {
    let sys = disc.system(group, f);
    let n = sys.dim();
    let gd = kernel_matrix(&sys);
    // R = G D (I + M)^{-1}, held transposed: Rᵀ = (I + M)^{-T} (G D)ᵀ.
    let r_t = sys.matrix().lu()?.solve_transpose_block(&gd.transpose());
    // R̃ = (I + K̃)^{-1} G D.
    let rt = tilde_matrix(disc, &sys, &f.negated()).lu()?.solve_block(&gd);
    let w: Vec<f64> = sys.carriers.iter().flat_map(|c| c.weights.iter().flat_map(|w| [*w; 3])).collect();
    let (mut num, mut den) = (0.0, 0.0);
    for i in 0..n {
        for j in 0..n {
            // (D⁻¹ R̃ᵀ D)_{ij} = R̃_{ji} w_j / w_i
            let t = rt[(j, i)] * (w[j] / w[i]);
            num += (t - r_t[(j, i)]).norm_sqr();
            den += r_t[(j, i)].norm_sqr();
        }
    }
    Ok(ReciprocityReport { group, unknowns: n, rel_error: (num / den).sqrt() })
}

/// Discrete check that `W` at `ω` is the pairing-transpose of the companion
/// operator's kernel block at `-ω`: `‖D⁻¹K̃ᵀD - M‖/‖M‖`.
pub fn adjoint_mismatch(disc: &Discretization, f: &Frequency, group: Group) -> f64 {
    let sys = disc.system(group, f);
    let n = sys.dim();
    let m = sys.matrix();
    let kt = tilde_matrix(disc, &sys, &f.negated());
    let w: Vec<f64> = sys.carriers.iter().flat_map(|c| c.weights.iter().flat_map(|w| [*w; 3])).collect();
    let (mut num, mut den) = (0.0, 0.0);
    for i in 0..n {
        for j in 0..n {
            let id = if i == j { 1.0 } else { 0.0 };
            let mij = m[(i, j)] - id;
            let t = (kt[(j, i)] - id) * (w[j] / w[i]);
            num += (t - mij).norm_sqr();
            den += mij.norm_sqr();
        }
    }
    (num / den.max(1e-300)).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::presets;

    fn ctx(target: usize) -> DecoupleContext {
        let s = presets::single_link();
        let f = s.frequency().unwrap();
        DecoupleContext::new(Discretization::with_target(&s, target), f).unwrap()
    }

    #[test]
    fn factorization_converges_with_annulus_refinement() {
        let c = ctx(16);
        let coarse = factorization_report(&c, 0, [2, 4, 8], Middle::Full).unwrap();
        let fine = factorization_report(&c, 0, [4, 8, 16], Middle::Full).unwrap();
        assert!(fine.rel_error < coarse.rel_error, "{coarse:?} {fine:?}");
        assert!(fine.rel_error < 1e-3, "{fine:?}");
    }

    #[test]
    fn shell_reduction_matches_factorized_transfer() {
        // With the environment resolvent in the middle, the sharp-shell form
        // equals the smooth-annulus form up to quadrature.
        let c = ctx(16);
        let dec = decoupled_transfer(&c, [12, 24], KernelPart::Total).unwrap();
        let m = c.disc.scene.receivers()[0];
        let lf = adjoint_functional(&c.rx, &receiver_functional(&c.disc.scene, &c.f, m).unwrap());
        // annulus route for the same functional
        let u_t = c.transmitter_field(0);
        let (ca, f1) = annulus_commutator(&c, Side::T, &u_t, [6, 12, 24]);
        let v = c.env.as_ref().unwrap().solve(&Field::new(c.f.kappa()).with(Source::Cells { carrier: ca, density: f1 }));
        let (cb, g) = annulus_commutator(&c, Side::R, &v, [6, 12, 24]);
        let via_annulus = -lf.apply(&Field::new(c.f.kappa()).with(Source::Cells { carrier: cb, density: g }));
        let z = dec.entries[0][0];
        assert!((z - via_annulus).norm() < 1e-4 * z.norm(), "{z} {via_annulus}");
    }

    #[test]
    fn transmitter_trace_without_material_is_free_kernel() {
        let s = presets::single_link();
        let mut regions = s.regions.clone();
        for g in regions.iter_mut() {
            g.profile.delta_eps = 0.0;
            g.profile.sigma = 0.0;
        }
        let s = s.rebuild(regions).unwrap();
        let f = s.frequency().unwrap();
        let c = DecoupleContext::new(Discretization::with_target(&s, 8), f).unwrap();
        let y = s.origin + V3::new(0.05, -0.02, 0.03);
        let tr = shell_traces(&c, Side::T, &y, [4, 8]);
        let k = crate::greens::FreeKernel::new(f.kappa());
        for (d, (v, dv)) in tr.dirs.iter().zip(tr.value.iter().zip(&tr.deriv)) {
            let x = s.origin + d * s.r;
            let (g, gr) = k.value_grad(&(x - y));
            let dg = gr.dot(&d.map(|v| C64::new(v, 0.0)));
            assert!((v - M3c::identity() * g).norm() < 1e-14);
            assert!((dv - M3c::identity() * dg).norm() < 1e-13);
        }
    }

    #[test]
    fn receiver_trace_radial_derivative_matches_finite_difference() {
        let c = ctx(12);
        let y = c.disc.scene.e + V3::new(0.02, 0.01, -0.03);
        let tr = shell_traces(&c, Side::R, &y, [3, 6]);
        let h = 1e-5;
        let k = 4;
        let d = tr.dirs[k];
        let val = |rho: f64| {
            let mut m = M3c::zeros();
            for t in 0..3 {
                let mut pol = V3c::zeros();
                pol[t] = C64::new(1.0, 0.0);
                let u = c.rx.solve(&Field::new(c.f.kappa()).with(Source::Point { at: c.disc.scene.e + d * rho, pol }));
                m.set_column(t, &u.value_at(&y));
            }
            m
        };
        let r = c.disc.scene.r;
        assert!((val(r) - tr.value[k]).norm() < 1e-12 * tr.value[k].norm());
        let fd = (val(r + h) - val(r - h)) / C64::new(2.0 * h, 0.0);
        assert!((fd - tr.deriv[k]).norm() < 1e-6 * tr.deriv[k].norm());
    }

    #[test]
    fn reciprocity_holds_for_lossy_groups() {
        let s = presets::single_link();
        let f = s.frequency().unwrap();
        let d = Discretization::with_target(&s, 10);
        for g in [Group::T, Group::M, Group::Total] {
            let r = reciprocity_check(&d, &f, g).unwrap();
            assert!(r.rel_error < 1e-10, "{r:?}");
        }
        assert!(adjoint_mismatch(&d, &f, Group::Total) < 1e-12);
    }

    #[test]
    fn mid_spread_free_part_matches_kernel() {
        let s = presets::single_link().without_scatterers().unwrap();
        let f = s.frequency().unwrap();
        let c = DecoupleContext::new(Discretization::with_target(&s, 8), f).unwrap();
        let (xr, xt) = (V3::new(-1.0, 0.0, 0.0), V3::new(0.0, 1.0, 0.0));
        let m = mid_spread(&c, &xr, &xt);
        let k = crate::greens::FreeKernel::new(f.kappa());
        let d = (s.e + xr * s.r) - (s.origin + xt * s.r);
        let full = k.full(&d);
        assert!((m[0][0][(1, 1)] - full.value).norm() < 1e-14);
        let dt = full.grad.dot(&xt.map(|v| C64::new(v, 0.0))); // -∂_T G = +∇g·x̂_T
        assert!((m[0][1][(0, 0)] - dt).norm() < 1e-14);
        let mixed = -(xr.map(|v| C64::new(v, 0.0)).transpose() * full.hess * xt.map(|v| C64::new(v, 0.0)))[(0, 0)];
        assert!((m[1][1][(2, 2)] - mixed).norm() < 1e-13 * mixed.norm());
    }
}
