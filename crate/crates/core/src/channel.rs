//! Electromagnetic fields recovered from the vector potential, receiver
//! functionals, transfer matrices, channel capacity and Maxwell residuals.
//!
//! With `H = ∇×A` and `E = -jμ0ωA + ∇(∇·A / (jεω + σ))`, a receiver's response
//! to a field is the quadrature of `σ E·n` over its wire disc.

use crate::field::{EvalPoint, Field, LinearFunctional, Source};
use crate::operators::{deposit_source, Group};
use crate::quadrature::disc_rule;
use crate::scatter::{Discretization, ScatterError, Solver};
use crate::scene::{Frequency, Scene};
use crate::{V3c, C64, EPS0, J, MU0, V3, ZERO};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ChannelError {
    #[error("finite-difference step {step:.3e} fell below 1e-6 of the cell size near {at:?}")]
    StepTooSmall { step: f64, at: [f64; 3] },
    #[error("receiver `{0}` has no wire section")]
    NoWire(String),
    #[error(transparent)]
    Scatter(#[from] ScatterError),
}

/// Admittivity `jεω + σ` at a point.
pub fn admittivity(scene: &Scene, f: &Frequency, x: &V3) -> C64 {
    let (eps_r, sigma) = scene.material_at(x);
    C64::new(sigma, eps_r * EPS0 * f.omega)
}

/// Shrinks `step` until all six stencil points lie in the same region as
/// `x` (or all outside), so the admittivity is smooth along the stencil.
pub fn stencil_step(scene: &Scene, x: &V3, step: f64, cell: f64) -> Result<f64, ChannelError> {
    let home = scene.region_at(x);
    let mut h = step;
    loop {
        let ok = (0..3).all(|i| {
            let mut d = V3::zeros();
            d[i] = h;
            scene.region_at(&(x + d)) == home && scene.region_at(&(x - d)) == home
        });
        if ok {
            return Ok(h);
        }
        h *= 0.5;
        if h < 1e-6 * cell {
            return Err(ChannelError::StepTooSmall { step: h, at: [x.x, x.y, x.z] });
        }
    }
}

/// Terms of `dir·E(x)` as a linear functional of `A`, with the outer gradient
/// of the scalar potential taken by central differences of step `h`.
pub fn e_functional_terms(scene: &Scene, f: &Frequency, x: &V3, dir: &V3c, h: f64, weight: C64) -> Vec<(EvalPoint, V3c, C64)> {
    let mut terms = vec![(EvalPoint::free(*x), dir * (-J * MU0 * f.omega) * weight, ZERO)];
    for i in 0..3 {
        let mut d = V3::zeros();
        d[i] = h;
        for (sgn, p) in [(1.0, x + d), (-1.0, x - d)] {
            let beta = dir[i] * weight * sgn / (admittivity(scene, f, &p) * 2.0 * h);
            terms.push((EvalPoint::free(p), V3c::zeros(), beta));
        }
    }
    terms
}

/// Electric field at points with stencil step `h` (auto-shrunk at region
/// boundaries).
pub fn e_field(field: &Field, scene: &Scene, f: &Frequency, points: &[V3], h: f64) -> Result<Vec<V3c>, ChannelError> {
    points
        .iter()
        .map(|x| {
            let hx = stencil_step(scene, x, h, h)?;
            let mut e = field.value_at(x) * (-J * MU0 * f.omega);
            for i in 0..3 {
                let mut d = V3::zeros();
                d[i] = hx;
                let phi = |p: V3| field.sample(&EvalPoint::free(p)).div() / admittivity(scene, f, &p);
                e[i] += (phi(x + d) - phi(x - d)) / (2.0 * hx);
            }
            Ok(e)
        })
        .collect()
}

/// Magnetic field `∇×A` from the analytic Jacobian.
pub fn h_field(field: &Field, points: &[V3]) -> Vec<V3c> {
    points
        .iter()
        .map(|x| {
            let g = field.sample(&EvalPoint::free(*x)).grad;
            V3c::new(g[(2, 1)] - g[(1, 2)], g[(0, 2)] - g[(2, 0)], g[(1, 0)] - g[(0, 1)])
        })
        .collect()
}

/// Receiver functional `L_m(A) = Σ_d w_d σ(x_d) E(x_d)·n` over the wire disc.
pub fn receiver_functional(scene: &Scene, f: &Frequency, region: usize) -> Result<LinearFunctional, ChannelError> {
    let g = &scene.regions[region];
    let w = g.wire.ok_or_else(|| ChannelError::NoWire(g.id.clone()))?;
    let [nr, nphi] = scene.solver.disc;
    let disc = disc_rule(&w.center, &w.normal, w.radius, nr, nphi);
    let cell = (g.radius().powi(3) * 4.18879 / scene.solver.points_per_region as f64).cbrt();
    let n = w.normal.map(|v| C64::new(v, 0.0));
    let mut terms = Vec::new();
    for (x, wt) in disc.points.iter().zip(&disc.weights) {
        let h = stencil_step(scene, x, 0.25 * cell, cell)?;
        terms.extend(e_functional_terms(scene, f, x, &n, h, C64::new(wt * g.sigma(x), 0.0)));
    }
    Ok(LinearFunctional { terms })
}

/// How a transfer matrix was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TransferMode {
    /// Direct solve of the complete system.
    Full,
    /// Shell reduction through the environment resolvent.
    Decoupled,
    /// Environment part from the far-field spread kernel.
    #[serde(rename = "spread-farfield")]
    FarField,
}

impl TransferMode {
    pub fn label(&self) -> &'static str {
        match self {
            TransferMode::Full => "full",
            TransferMode::Decoupled => "decoupled",
            TransferMode::FarField => "spread-farfield",
        }
    }
}

/// Receiver × transmitter transfer matrix at one frequency.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferMatrix {
    pub f_hz: f64,
    pub mode: TransferMode,
    pub rx_ids: Vec<String>,
    pub tx_ids: Vec<String>,
    /// `entries[m][n]`: receiver `m`, transmitter `n`.
    pub entries: Vec<Vec<C64>>,
}

impl TransferMatrix {
    pub fn to_dmatrix(&self) -> DMatrix<C64> {
        DMatrix::from_fn(self.entries.len(), self.tx_ids.len(), |m, n| self.entries[m][n])
    }

    /// CSV with one row per entry: `m,n,re,im`.
    pub fn to_csv(&self) -> String {
        use crate::report::{csv_string, field};
        let rows = self.entries.iter().enumerate().flat_map(|(m, row)| row.iter().enumerate().map(move |(n, z)| vec![m.to_string(), n.to_string(), field(z.re), field(z.im)]));
        csv_string(&["m", "n", "re", "im"], rows)
    }

    /// Frobenius norm of the difference relative to `self`.
    pub fn rel_diff(&self, other: &TransferMatrix) -> f64 {
        let (a, b) = (self.to_dmatrix(), other.to_dmatrix());
        (&a - &b).norm() / a.norm()
    }

    pub fn sub(&self, other: &TransferMatrix) -> TransferMatrix {
        let mut out = self.clone();
        for (r, o) in out.entries.iter_mut().zip(&other.entries) {
            for (a, b) in r.iter_mut().zip(o) {
                *a -= b;
            }
        }
        out
    }
}

/// Incident field of transmitter `n`: its impressed current on its carrier.
pub fn transmitter_source(disc: &Discretization, region: usize, f: &Frequency) -> Field {
    let c = disc.carriers[region].clone();
    let density = deposit_source(&disc.scene, region, &c);
    Field::new(f.kappa()).with(Source::Cells { carrier: c, density })
}

/// Full-wave transfer matrix from the complete block system.
pub fn transfer_matrix(disc: &Discretization, f: &Frequency) -> Result<TransferMatrix, ChannelError> {
    transfer_matrix_with(disc, f, &Solver::for_group(disc, Group::Total, f)?)
}

/// Transfer matrix from an already factorised complete solver.
pub fn transfer_matrix_with(disc: &Discretization, f: &Frequency, solver: &Solver) -> Result<TransferMatrix, ChannelError> {
    let scene = &disc.scene;
    let (tx, rx) = (scene.transmitters(), scene.receivers());
    let funcs: Vec<LinearFunctional> = rx.iter().map(|&m| receiver_functional(scene, f, m)).collect::<Result<_, _>>()?;
    let mut entries = vec![vec![ZERO; tx.len()]; rx.len()];
    for (n, &t) in tx.iter().enumerate() {
        let u = solver.solve(&transmitter_source(disc, t, f));
        for (m, l) in funcs.iter().enumerate() {
            entries[m][n] = l.apply(&u);
        }
    }
    Ok(TransferMatrix {
        f_hz: f.hz(),
        mode: TransferMode::Full,
        rx_ids: rx.iter().map(|&i| scene.regions[i].id.clone()).collect(),
        tx_ids: tx.iter().map(|&i| scene.regions[i].id.clone()).collect(),
        entries,
    })
}

/// Vector potential excited by transmitter `region` in the complete system.
pub fn vector_potential(disc: &Discretization, f: &Frequency, region: usize) -> Result<Field, ChannelError> {
    let solver = Solver::for_group(disc, Group::Total, f)?;
    Ok(solver.solve(&transmitter_source(disc, region, f)))
}

/// Capacity `Σ log2(1 + snr·λ_i / N_t)` (bits/s/Hz) with equal power over the
/// `N_t` transmitters, `λ_i` the eigenvalues of `HᴴH`.
pub fn capacity(h: &TransferMatrix, snr: f64) -> f64 {
    let m = h.to_dmatrix();
    let nt = m.ncols() as f64;
    let gram = m.adjoint() * &m;
    let eig = gram.symmetric_eigen();
    eig.eigenvalues.iter().map(|&l| (1.0 + snr * l.max(0.0) / nt).log2()).sum()
}

/// Relative residuals of the Maxwell equations at one probe.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Residuals {
    /// `∇·H = 0`
    pub gauss_magnetic: f64,
    /// `∇×H = J + (jεω + σ)E`
    pub ampere: f64,
    /// `∇×E = -jμ0ωH`
    pub faraday: f64,
    /// `∇·(εE) = ρ`, with `ρ` taken from charge conservation.
    pub gauss_electric: f64,
    /// `-jωρ = ∇·(J + σE)`, with `ρ` taken from Gauss's law.
    pub continuity: f64,
    /// `|∇_h·(Ampère residual) + ∇_h·(J + (jεω+σ)E)|`, zero by construction.
    pub consistency: f64,
}

impl Residuals {
    pub fn as_array(&self) -> [f64; 5] {
        [self.gauss_magnetic, self.ampere, self.faraday, self.gauss_electric, self.continuity]
    }
}

/// Maxwell residuals at free-space probes with step `h` for both the field
/// recovery and the outer differential operators. Residuals are scaled by
/// `k0·|H|` or `ωε0·|E|` so they are dimensionless.
pub fn maxwell_residuals(field: &Field, scene: &Scene, f: &Frequency, probe: &V3, h: f64) -> Result<Residuals, ChannelError> {
    if scene.region_at(probe).is_some() {
        return Err(ChannelError::StepTooSmall { step: 0.0, at: [probe.x, probe.y, probe.z] });
    }
    let k0 = f.k0();
    let w = f.omega;
    // lattice of offsets in units of h, E and H cached per offset
    let offsets: Vec<[i32; 3]> = {
        let mut v = Vec::new();
        for i in -1i32..=1 {
            for j in -1i32..=1 {
                for k in -1i32..=1 {
                    if i.abs() + j.abs() + k.abs() <= 2 {
                        v.push([i, j, k]);
                    }
                }
            }
        }
        v
    };
    let pts: Vec<V3> = offsets.iter().map(|o| probe + V3::new(o[0] as f64, o[1] as f64, o[2] as f64) * h).collect();
    let es = e_field(field, scene, f, &pts, h)?;
    let hs = h_field(field, &pts);
    let at = |o: [i32; 3]| offsets.iter().position(|p| *p == o).expect("offset in stencil");
    let unit = |i: usize, s: i32| {
        let mut o = [0i32; 3];
        o[i] = s;
        o
    };
    let add = |a: [i32; 3], b: [i32; 3]| [a[0] + b[0], a[1] + b[1], a[2] + b[2]];
    let d = |vals: &[V3c], base: [i32; 3], i: usize, comp: usize| (vals[at(add(base, unit(i, 1)))][comp] - vals[at(add(base, unit(i, -1)))][comp]) / (2.0 * h);
    let curl =
        |vals: &[V3c], base: [i32; 3]| V3c::new(d(vals, base, 1, 2) - d(vals, base, 2, 1), d(vals, base, 2, 0) - d(vals, base, 0, 2), d(vals, base, 0, 1) - d(vals, base, 1, 0));
    let div = |vals: &[V3c], base: [i32; 3]| (0..3).map(|i| d(vals, base, i, i)).sum::<C64>();
    let o = [0, 0, 0];
    let e0 = es[at(o)];
    let h0 = hs[at(o)];
    let adm = C64::new(0.0, EPS0 * w);
    let (he, hh) = (e0.norm().max(1e-300), h0.norm().max(1e-300));
    let div_e = div(&es, o);
    let rho_cont = ZERO; // -∇·(J + σE)/(jω) with J = σ = 0 at the probe
    let rho_gauss = div_e * EPS0;
    // consistency: divergence of the Ampère residual; component i at ±e_i
    // only needs derivatives transverse to e_i, which stay on the lattice
    let curl_comp = |vals: &[V3c], base: [i32; 3], i: usize| {
        let (a, b) = ((i + 1) % 3, (i + 2) % 3);
        d(vals, base, a, b) - d(vals, base, b, a)
    };
    let amp_comp = |b: [i32; 3], i: usize| curl_comp(&hs, b, i) - es[at(b)][i] * adm;
    let div_amp: C64 = (0..3).map(|i| (amp_comp(unit(i, 1), i) - amp_comp(unit(i, -1), i)) / (2.0 * h)).sum();
    let div_curl_free = div(&es.iter().map(|e| e * adm).collect::<Vec<_>>(), o);
    let consistency = (div_amp + div_curl_free).norm() / (hh / (h * h));
    Ok(Residuals {
        gauss_magnetic: div(&hs, o).norm() / (k0 * hh),
        ampere: (curl(&hs, o) - e0 * adm).norm() / (EPS0 * w * he),
        faraday: (curl(&es, o) + h0 * (J * MU0 * w)).norm() / (MU0 * w * hh),
        gauss_electric: (rho_gauss - rho_cont).norm() / (EPS0 * k0 * he),
        continuity: (-J * w * rho_gauss).norm() / (w * EPS0 * k0 * he),
        consistency,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::presets;

    #[test]
    fn capacity_of_identity_channel() {
        let h = TransferMatrix {
            f_hz: 1.0,
            mode: TransferMode::Full,
            rx_ids: vec!["a".into(), "b".into()],
            tx_ids: vec!["c".into(), "d".into()],
            entries: vec![vec![C64::new(1.0, 0.0), ZERO], vec![ZERO, C64::new(1.0, 0.0)]],
        };
        assert!((capacity(&h, 10.0) - 2.0 * 6f64.log2()).abs() < 1e-12);
    }

    #[test]
    fn capacity_of_rank_one_channel() {
        let z = C64::new(0.6, 0.8);
        let h = TransferMatrix {
            f_hz: 1.0,
            mode: TransferMode::Full,
            rx_ids: vec!["a".into(), "b".into()],
            tx_ids: vec!["c".into(), "d".into()],
            entries: vec![vec![z, z], vec![z, z]],
        };
        // HᴴH has the single non-zero eigenvalue 4|z|² = 4.
        assert!((capacity(&h, 3.0) - (1.0 + 3.0 * 4.0 / 2.0f64).log2()).abs() < 1e-12);
    }

    #[test]
    fn csv_layout() {
        let h = TransferMatrix { f_hz: 1.0, mode: TransferMode::Full, rx_ids: vec!["a".into()], tx_ids: vec!["b".into()], entries: vec![vec![C64::new(1.5, -2.0)]] };
        let csv = h.to_csv();
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some("m,n,re,im"));
        let row: Vec<&str> = lines.next().unwrap().split(',').collect();
        assert_eq!(row[0..2], ["0", "0"]);
        assert_eq!(row[2].parse::<f64>().unwrap(), 1.5);
    }

    #[test]
    fn free_plane_wave_fields() {
        // A = x̂ e^{jkz} in vacuum: H = ∇×A = jk e^{jkz} ŷ, E = -jμ0ω A (divergence free).
        // Reproduced here with a distant point source, checking E ⟂ and |E|/|H| = μ0 c.
        let s = presets::desk();
        let f = s.frequency().unwrap();
        let src = Field::new(f.kappa()).with(Source::Point { at: V3::new(0.0, 0.0, -400.0), pol: V3c::new(C64::new(1.0, 0.0), ZERO, ZERO) });
        let x = V3::new(3.0, -2.0, 0.0);
        let e = e_field(&src, &s, &f, &[x], 1e-3).unwrap()[0];
        let hf = h_field(&src, &[x])[0];
        let ratio = e.norm() / hf.norm();
        assert!((ratio / (MU0 * crate::C0) - 1.0).abs() < 1e-2, "{ratio}");
    }

    #[test]
    fn stencil_step_shrinks_at_boundaries() {
        let s = presets::desk();
        let g = &s.regions[0];
        let x = g.center + V3::new(g.radius() - 0.01, 0.0, 0.0);
        let h = stencil_step(&s, &x, 0.05, 0.05).unwrap();
        assert!(h < 0.01);
    }
}
