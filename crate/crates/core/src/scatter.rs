//! Block systems for the regional perturbations and their solution, by
//! direct factorisation or by the Born (multiple-scattering) series.
//!
//! With the cell model, the unknown is `X = W u` at the collocation nodes and
//! the resolvent applied to an incident field `u0 = R0 φ` reads
//! `(I + M) X = W u0`, `u = u0 - Σ_c K_c X_c`, where `M` holds
//! `-δk²(y_p) K_q(y_p) + ∇ln k²(y_p) ⊗ ∇K_q(y_p)` for every node pair.

use crate::field::{Carrier, EvalPoint, Field, Source};
use crate::greens::FreeKernel;
use crate::linalg::{CMatrix, LinalgError, Lu};
use crate::operators::{apply_w, node_coefficients, sample_region, Group};
use crate::scene::{Coefficients, Frequency, Scene, SceneError};
use crate::{par, V3c, C64, ZERO};
use serde::Serialize;
use std::sync::Arc;
use thiserror::Error;

/// Condition number above which a frequency is treated as resonant.
pub const RESONANCE_CONDITION: f64 = 1e12;

/// Self-term magnitude above which the point rule is considered invalid.
pub const SELF_TERM_LIMIT: f64 = 0.5;

#[derive(Debug, Error)]
pub enum ScatterError {
    #[error("near resonance at {hz:.6e} Hz: condition estimate {cond:.3e}")]
    Resonance { hz: f64, cond: f64 },
    #[error("singular block system: {0}")]
    Linalg(#[from] LinalgError),
    #[error("Born series diverges: term norms grew for three consecutive orders (order {order})")]
    BornDivergence { order: usize },
    #[error("singularity rule failed: |self term| = {value:.3} at node {node} exceeds {SELF_TERM_LIMIT}")]
    SelfTerm { node: usize, value: f64 },
    #[error(transparent)]
    Scene(#[from] SceneError),
}

/// Scene with one collocation carrier per region, shared by every system
/// built from it so that sources and unknowns live on identical nodes.
#[derive(Debug, Clone)]
pub struct Discretization {
    pub scene: Scene,
    pub carriers: Vec<Arc<Carrier>>,
}

impl Discretization {
    pub fn new(scene: &Scene) -> Self {
        Self::with_target(scene, scene.solver.points_per_region)
    }

    pub fn with_target(scene: &Scene, target: usize) -> Self {
        let carriers = (0..scene.regions.len()).map(|i| sample_region(scene, i, target)).collect();
        Self { scene: scene.clone(), carriers }
    }

    pub fn group_carriers(&self, group: Group) -> Vec<Arc<Carrier>> {
        group.members(&self.scene).into_iter().map(|i| self.carriers[i].clone()).collect()
    }

    /// Block system of one group.
    pub fn system(&self, group: Group, f: &Frequency) -> BlockSystem {
        BlockSystem::new(&self.scene, self.group_carriers(group), f)
    }

    pub fn unknowns(&self) -> usize {
        3 * self.carriers.iter().map(|c| c.len()).sum::<usize>()
    }
}

/// Assembled-on-demand block system over a set of carriers.
#[derive(Debug, Clone)]
pub struct BlockSystem {
    pub freq: Frequency,
    pub kernel: FreeKernel,
    pub carriers: Vec<Arc<Carrier>>,
    /// First node index of each carrier.
    pub offsets: Vec<usize>,
    /// Carrier index and local index of each node.
    pub node_map: Vec<(usize, usize)>,
    pub coeffs: Vec<Coefficients>,
    pub nodes: Vec<EvalPoint>,
}

impl BlockSystem {
    pub fn new(scene: &Scene, carriers: Vec<Arc<Carrier>>, f: &Frequency) -> Self {
        let mut offsets = Vec::new();
        let mut node_map = Vec::new();
        let mut coeffs = Vec::new();
        let mut nodes = Vec::new();
        for (ci, c) in carriers.iter().enumerate() {
            offsets.push(node_map.len());
            node_map.extend((0..c.len()).map(|i| (ci, i)));
            coeffs.extend(node_coefficients(scene, c, f));
            nodes.extend(c.eval_points());
        }
        Self { freq: *f, kernel: FreeKernel::new(f.kappa()), carriers, offsets, node_map, coeffs, nodes }
    }

    pub fn n_nodes(&self) -> usize {
        self.node_map.len()
    }

    pub fn dim(&self) -> usize {
        3 * self.n_nodes()
    }

    /// The full matrix `I + M`.
    pub fn matrix(&self) -> CMatrix {
        let all: Vec<usize> = (0..self.carriers.len()).collect();
        let n = self.dim();
        CMatrix::from_row_groups(n, n, 3, |p| self.node_rows_wide(p, &all, n))
    }

    fn node_rows_wide(&self, p: usize, cols: &[usize], n: usize) -> Vec<C64> {
        let mut out = vec![ZERO; 3 * n];
        let c = &self.coeffs[p];
        let ep = &self.nodes[p];
        let mut col0 = 0;
        for &ck in cols {
            let carrier = &self.carriers[ck];
            for q in 0..carrier.len() {
                let (k, g) = carrier.kernel(&self.kernel, q, ep);
                let base = 3 * (col0 + q);
                let diag = self.offsets[ck] + q == p;
                for s in 0..3 {
                    for t in 0..3 {
                        let mut v = c.grad_log[s] * g[t];
                        if s == t {
                            v -= c.delta_k2 * k;
                            if diag {
                                v += C64::new(1.0, 0.0);
                            }
                        }
                        out[s * n + base + t] = v;
                    }
                }
            }
            col0 += carrier.len();
        }
        out
    }

    /// Block of `I + M` between the nodes of carrier sets `rows` and `cols`.
    pub fn block(&self, rows: &[usize], cols: &[usize]) -> CMatrix {
        let row_nodes: Vec<usize> = rows.iter().flat_map(|&c| self.offsets[c]..self.offsets[c] + self.carriers[c].len()).collect();
        let n_cols: usize = 3 * cols.iter().map(|&c| self.carriers[c].len()).sum::<usize>();
        CMatrix::from_row_groups(3 * row_nodes.len(), n_cols, 3, |i| self.node_rows_wide(row_nodes[i], cols, n_cols))
    }

    /// Largest self-term magnitude `|δk²·S|` over the nodes.
    pub fn check_self_terms(&self) -> Result<f64, ScatterError> {
        let mut worst: f64 = 0.0;
        for (p, (ci, q)) in self.node_map.iter().enumerate() {
            let s = crate::greens::self_term(self.kernel.kappa, self.carriers[*ci].weights[*q]);
            let v = (self.coeffs[p].delta_k2 * s).norm();
            if v > SELF_TERM_LIMIT {
                return Err(ScatterError::SelfTerm { node: p, value: v });
            }
            worst = worst.max(v);
        }
        Ok(worst)
    }

    /// Right-hand side `W u0` at the nodes.
    pub fn rhs(&self, incident: &Field) -> Vec<C64> {
        let samples = incident.sample_many(&self.nodes);
        samples.iter().zip(&self.coeffs).flat_map(|(s, c)| apply_w(c, s).iter().copied().collect::<Vec<_>>()).collect()
    }

    /// Induced sources `-Σ_c K_c X_c` for a solution vector.
    pub fn induced(&self, x: &[C64]) -> Vec<Source> {
        self.carriers
            .iter()
            .enumerate()
            .map(|(ci, c)| {
                let o = self.offsets[ci];
                let density = (0..c.len()).map(|q| -V3c::new(x[3 * (o + q)], x[3 * (o + q) + 1], x[3 * (o + q) + 2])).collect();
                Source::Cells { carrier: c.clone(), density }
            })
            .collect()
    }

    /// Node ranges of the carriers, in unknown (not node) indices.
    pub fn carrier_range(&self, ci: usize) -> std::ops::Range<usize> {
        3 * self.offsets[ci]..3 * (self.offsets[ci] + self.carriers[ci].len())
    }
}

/// Factorised block system.
#[derive(Debug, Clone)]
pub struct Solver {
    pub system: BlockSystem,
    pub lu: Lu,
    pub condition: f64,
}

impl Solver {
    pub fn new(system: BlockSystem) -> Result<Self, ScatterError> {
        system.check_self_terms()?;
        if system.dim() == 0 {
            return Ok(Self { lu: CMatrix::zeros(0, 0).lu()?, system, condition: 1.0 });
        }
        let lu = system.matrix().lu()?;
        let condition = lu.condition_estimate();
        if !(condition < RESONANCE_CONDITION) {
            return Err(ScatterError::Resonance { hz: system.freq.hz(), cond: condition });
        }
        Ok(Self { system, lu, condition })
    }

    pub fn for_group(disc: &Discretization, group: Group, f: &Frequency) -> Result<Self, ScatterError> {
        Self::new(disc.system(group, f))
    }

    pub fn solve_rhs(&self, b: &[C64]) -> Vec<C64> {
        if b.is_empty() {
            return Vec::new();
        }
        self.lu.solve(b)
    }

    /// Resolvent applied to an incident field: returns the total field.
    pub fn solve(&self, incident: &Field) -> Field {
        let x = self.solve_rhs(&self.system.rhs(incident));
        let mut out = incident.clone();
        out.sources.extend(self.system.induced(&x));
        out
    }

    /// Adjoint weights `λ = (I + M)^{-T} ℓ` turning a functional of the
    /// induced field into a functional of the right-hand side.
    pub fn adjoint_weights(&self, row: &[C64]) -> Vec<C64> {
        if row.is_empty() {
            return Vec::new();
        }
        self.lu.solve_transpose(row)
    }

    /// Functional row of `L` on the induced unknowns: `L(-Σ K_c X_c) = row·X`.
    pub fn functional_row(&self, lf: &crate::field::LinearFunctional) -> Vec<C64> {
        let mut row = Vec::with_capacity(self.system.dim());
        for c in &self.system.carriers {
            row.extend(lf.carrier_row(c, &self.system.kernel).into_iter().map(|v| -v));
        }
        row
    }

    /// Block `[(I + M)^{-1}]_{nm}` between two carriers.
    pub fn coupling_block(&self, n: usize, m: usize) -> CMatrix {
        let rn = self.system.carrier_range(n);
        let rm = self.system.carrier_range(m);
        let dim = self.system.dim();
        let cols = par::map_range(rm.len(), |j| {
            let mut e = vec![ZERO; dim];
            e[rm.start + j] = C64::new(1.0, 0.0);
            self.lu.solve(&e)
        });
        CMatrix::from_fn(rn.len(), rm.len(), |i, j| cols[j][rn.start + i])
    }
}

/// Outcome of a Born expansion.
#[derive(Debug, Clone, Serialize)]
pub struct BornResult {
    /// Partial sums `X_0, X_0 + X_1, …`.
    #[serde(skip)]
    pub partial_sums: Vec<Vec<C64>>,
    /// Norms of the individual terms `‖X_i‖`.
    pub term_norms: Vec<f64>,
    /// Spectral radius estimate of the inter-group operator.
    pub contraction: f64,
    /// Geometric decay rate per order fitted to the term norms.
    pub fitted_ratio: f64,
}

impl BornResult {
    pub fn solution(&self) -> &[C64] {
        self.partial_sums.last().map(|v| v.as_slice()).unwrap_or(&[])
    }
}

/// Born series over a partition of the system's carriers into groups:
/// `X = Σ_i (-1)^i (I + M_d)^{-1} (M_o (I + M_d)^{-1})^i b`, where `M_d` is
/// the block diagonal over the groups and `M_o` the coupling between them.
pub struct BornSeries {
    system: BlockSystem,
    groups: Vec<Vec<usize>>,
    diag: Vec<Lu>,
    off: Vec<Vec<(usize, CMatrix)>>,
}

impl BornSeries {
    pub fn new(system: BlockSystem, groups: Vec<Vec<usize>>) -> Result<Self, ScatterError> {
        system.check_self_terms()?;
        let mut diag = Vec::new();
        let mut off = Vec::new();
        for (gi, g) in groups.iter().enumerate() {
            diag.push(system.block(g, g).lu()?);
            let mut row = Vec::new();
            for (gj, h) in groups.iter().enumerate() {
                if gi != gj {
                    row.push((gj, system.block(g, h)));
                }
            }
            off.push(row);
        }
        Ok(Self { system, groups, diag, off })
    }

    fn split(&self, v: &[C64]) -> Vec<Vec<C64>> {
        self.groups.iter().map(|g| g.iter().flat_map(|&c| v[self.system.carrier_range(c)].to_vec()).collect()).collect()
    }

    fn join(&self, parts: &[Vec<C64>]) -> Vec<C64> {
        let mut out = vec![ZERO; self.system.dim()];
        for (g, part) in self.groups.iter().zip(parts) {
            let mut k = 0;
            for &c in g {
                for i in self.system.carrier_range(c) {
                    out[i] = part[k];
                    k += 1;
                }
            }
        }
        out
    }

    fn apply_diag_inv(&self, parts: &[Vec<C64>]) -> Vec<Vec<C64>> {
        parts.iter().zip(&self.diag).map(|(p, lu)| lu.solve(p)).collect()
    }

    fn apply_off(&self, parts: &[Vec<C64>]) -> Vec<Vec<C64>> {
        self.off
            .iter()
            .zip(parts)
            .map(|(row, own)| {
                let mut acc = vec![ZERO; own.len()];
                for (gj, blk) in row {
                    for (a, v) in acc.iter_mut().zip(blk.matvec(&parts[*gj])) {
                        *a += v;
                    }
                }
                acc
            })
            .collect()
    }

    /// Spectral radius of `(I + M_d)^{-1} M_o` from 20 power steps, using the
    /// growth over the last ten.
    pub fn contraction(&self) -> f64 {
        let dim = self.system.dim();
        let mut v: Vec<C64> = (0..dim).map(|i| C64::new(1.0 + (i % 7) as f64 * 0.1, 0.3 * ((i % 5) as f64 - 2.0))).collect();
        let mut log_growth = Vec::new();
        for _ in 0..20 {
            let parts = self.apply_diag_inv(&self.apply_off(&self.split(&v)));
            let w = self.join(&parts);
            let n = w.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
            let n0 = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
            if n == 0.0 {
                return 0.0;
            }
            log_growth.push((n / n0).ln());
            v = w.iter().map(|z| z / n).collect();
        }
        (log_growth[10..].iter().sum::<f64>() / 10.0).exp()
    }

    /// Expands up to `max_order` (inclusive) for the right-hand side `b`.
    pub fn run(&self, b: &[C64], max_order: usize) -> Result<BornResult, ScatterError> {
        let contraction = self.contraction();
        if contraction >= 1.0 {
            log::warn!("Born series contraction estimate {contraction:.3} ≥ 1: expansion is not expected to converge");
        }
        let mut term = self.apply_diag_inv(&self.split(b));
        let mut sum = self.join(&term);
        let norm = |p: &[Vec<C64>]| p.iter().flatten().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        let mut term_norms = vec![norm(&term)];
        let mut partial_sums = vec![sum.clone()];
        let mut growth = 0;
        for order in 1..=max_order {
            term = self.apply_diag_inv(&self.apply_off(&term)).into_iter().map(|p| p.into_iter().map(|z| -z).collect()).collect();
            let t = self.join(&term);
            for (s, v) in sum.iter_mut().zip(&t) {
                *s += v;
            }
            let n = norm(&term);
            growth = if n > *term_norms.last().unwrap() { growth + 1 } else { 0 };
            term_norms.push(n);
            partial_sums.push(sum.clone());
            if growth >= 3 {
                return Err(ScatterError::BornDivergence { order });
            }
        }
        let fitted_ratio = fit_ratio(&term_norms[1..]);
        Ok(BornResult { partial_sums, term_norms, contraction, fitted_ratio })
    }

    pub fn system(&self) -> &BlockSystem {
        &self.system
    }
}

/// Geometric ratio from a least-squares fit of `log ‖X_i‖` against `i`.
pub fn fit_ratio(norms: &[f64]) -> f64 {
    let pts: Vec<(f64, f64)> = norms.iter().enumerate().filter(|(_, n)| **n > 0.0).map(|(i, n)| (i as f64, n.ln())).collect();
    if pts.len() < 2 {
        return 0.0;
    }
    let m = pts.len() as f64;
    let (sx, sy) = pts.iter().fold((0.0, 0.0), |a, p| (a.0 + p.0, a.1 + p.1));
    let (mx, my) = (sx / m, sy / m);
    let num: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let den: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    (num / den).exp()
}
