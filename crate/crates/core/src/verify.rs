//! The acceptance suite: nine checks, each with a pinned tolerance, run on
//! a scene (or on copies of it derived by scene surgery).

use crate::channel::{capacity, maxwell_residuals, transmitter_source, vector_potential, TransferMatrix, TransferMode};
use crate::decouple::{decoupled_transfer, factorization_report, gvector_r, gvector_t, reciprocity_check, DecoupleContext, GVector, KernelPart, Middle};
use crate::greens::FreeKernel;
use crate::operators::Group;
use crate::scatter::{BornSeries, Discretization, Solver};
use crate::scene::{self, Frequency, Profile, Role, Scene};
use crate::spread::farfield_transfer;
use crate::sweep::{self, loglog_fit, SweepGrids, SweepKind};
use crate::{C64, V3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::{json, Value};
use std::time::Instant;
use thiserror::Error;

/// Check names in criterion order.
pub const CHECKS: [&str; 9] =
    ["green-residual", "oracle-equivalence", "lemma1", "lemma2-scaling", "farfield-decay", "reciprocity", "gvector-independence", "closed-forms", "maxwell"];

pub const ORDER_TARGET: f64 = 2.0;
pub const ORDER_TOL: f64 = 0.3;
pub const BORN_TOL: f64 = 1e-6;
pub const BORN_CONTRACTION_MAX: f64 = 0.5;
pub const BORN_RATIO_TOL: f64 = 0.3;
pub const LEMMA1_FACTOR: f64 = 2.0;
pub const LEMMA2_SLOPE: f64 = 0.45;
pub const LEMMA2_R2: f64 = 0.9;
pub const FARFIELD_EXTRA_ORDER: f64 = 1.0;
pub const RECIPROCITY_TOL: f64 = 1e-8;
pub const GVECTOR_TOL: f64 = 1e-12;
pub const CAPACITY_TOL: f64 = 1e-12;
pub const FLUX_TOL: f64 = 1e-10;
pub const CONSISTENCY_TOL: f64 = 1e-12;

/// Annulus grids by refinement level.
pub const ANNULUS_LADDER: [[usize; 3]; 7] = [[2, 4, 8], [3, 6, 12], [4, 8, 16], [6, 12, 24], [8, 16, 32], [12, 24, 48], [16, 32, 64]];

/// Ladder level whose grid is closest to `grid` (by total node count).
pub fn annulus_level(grid: [usize; 3]) -> usize {
    let n = (grid[0] * grid[1] * grid[2]) as f64;
    (0..ANNULUS_LADDER.len())
        .min_by(|&a, &b| {
            let da = ((ANNULUS_LADDER[a].iter().product::<usize>() as f64) / n).ln().abs();
            let db = ((ANNULUS_LADDER[b].iter().product::<usize>() as f64) / n).ln().abs();
            da.total_cmp(&db)
        })
        .unwrap_or(2)
}

#[derive(Debug, Error)]
pub enum VerifyError {
    #[error("unknown check `{0}`; expected one of {CHECKS:?}")]
    UnknownCheck(String),
}

#[derive(Debug, Clone, Serialize)]
pub struct CheckReport {
    pub criterion: usize,
    pub name: &'static str,
    pub passed: bool,
    /// The headline quantity compared against the tolerance.
    pub measured: f64,
    pub tolerance: String,
    pub detail: Value,
}

/// Options shared by the checks.
#[derive(Debug, Clone, Copy)]
pub struct VerifyOptions {
    /// Base annulus refinement level (index into [`ANNULUS_LADDER`]).
    pub quad_level: usize,
    pub angular: [usize; 2],
    pub born_order: usize,
}

impl VerifyOptions {
    pub fn from_scene(scene: &Scene) -> Self {
        Self { quad_level: annulus_level(scene.solver.annulus), angular: scene.solver.angular, born_order: scene.solver.born_order }
    }

    fn annulus(&self, offset: isize) -> [usize; 3] {
        let l = (self.quad_level as isize + offset).clamp(0, ANNULUS_LADDER.len() as isize - 1);
        ANNULUS_LADDER[l as usize]
    }
}

type CheckError = Box<dyn std::error::Error + Send + Sync>;
type CheckResult = Result<(bool, f64, String, Value), CheckError>;

/// Runs one check by name. Failures inside the check (for example a
/// resonant system) are reported as a failed check, not an error.
pub fn run_check(name: &str, scene: &Scene, opts: &VerifyOptions) -> Result<CheckReport, VerifyError> {
    let criterion = CHECKS.iter().position(|c| *c == name).ok_or_else(|| VerifyError::UnknownCheck(name.into()))? + 1;
    let start = Instant::now();
    let out = match criterion {
        1 => green_residual(scene),
        2 => oracle_equivalence(scene, opts),
        3 => lemma1(scene, opts),
        4 => lemma2_scaling(scene, opts),
        5 => farfield_decay(scene, opts),
        6 => reciprocity(scene),
        7 => gvector_independence(scene, opts),
        8 => closed_forms(scene, opts),
        _ => maxwell(scene),
    };
    let name = CHECKS[criterion - 1];
    let report = match out {
        Ok((passed, measured, tolerance, detail)) => CheckReport { criterion, name, passed, measured, tolerance, detail },
        Err(e) => CheckReport { criterion, name, passed: false, measured: f64::NAN, tolerance: String::new(), detail: json!({ "error": e.to_string() }) },
    };
    log::info!("check {name}: passed={} measured={:.4e} ({:.2?})", report.passed, report.measured, start.elapsed());
    Ok(report)
}

/// Runs every check, or only `only`.
pub fn run_suite(scene: &Scene, opts: &VerifyOptions, only: Option<&str>) -> Result<Vec<CheckReport>, VerifyError> {
    match only {
        Some(name) => Ok(vec![run_check(name, scene, opts)?]),
        None => CHECKS.iter().map(|c| run_check(c, scene, opts)).collect(),
    }
}

fn order_ok(order: f64) -> bool {
    (order - ORDER_TARGET).abs() <= ORDER_TOL
}

/// 7-point finite-difference residual `|(-Δ_h - κ²) g(d)| / |g(d)|`.
fn helmholtz_residual(k: &FreeKernel, d: &V3, h: f64) -> f64 {
    let g0 = k.value(d);
    let mut lap = -6.0 * g0;
    for i in 0..3 {
        let mut e = V3::zeros();
        e[i] = h;
        lap += k.value(&(d + e)) + k.value(&(d - e));
    }
    lap /= h * h;
    (-lap - k.kappa * k.kappa * g0).norm() / g0.norm()
}

/// Criterion 1: the free kernel solves the Helmholtz equation away from the
/// source; its finite-difference residual falls like `h²`.
fn green_residual(scene: &Scene) -> CheckResult {
    let f = scene.frequency()?;
    let kernel = FreeKernel::new(f.kappa());
    let mut rng = ChaCha8Rng::seed_from_u64(0x6d696d6f);
    let steps = [0.04, 0.02, 0.01, 0.005];
    let mut orders = Vec::with_capacity(100);
    while orders.len() < 100 {
        let x = V3::from_fn(|_, _| rng.gen_range(-1.0..1.0)) * scene.r;
        let y = V3::from_fn(|_, _| rng.gen_range(-1.0..1.0)) * scene.r;
        let d = x - y;
        if d.norm() < 0.25 * scene.r {
            continue;
        }
        let res: Vec<f64> = steps.iter().map(|h| helmholtz_residual(&kernel, &d, h * d.norm())).collect();
        let fit = loglog_fit(&steps, &res).ok_or("degenerate residuals")?;
        orders.push(fit.slope);
    }
    let min = orders.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = orders.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mean = orders.iter().sum::<f64>() / orders.len() as f64;
    let passed = orders.iter().all(|o| order_ok(*o));
    Ok((passed, mean, format!("every point order in {ORDER_TARGET} ± {ORDER_TOL}"), json!({ "points": orders.len(), "min_order": min, "max_order": max, "relative_steps": steps })))
}

/// Criterion 2: the Born series over scatterers matches the direct block
/// solve, and its term norms decay at the estimated contraction rate.
fn oracle_equivalence(scene: &Scene, opts: &VerifyOptions) -> CheckResult {
    let f = scene.frequency()?;
    let disc = Discretization::new(scene);
    let group = if scene.scatterers().len() >= 2 { Group::M } else { Group::Total };
    let sys = disc.system(group, &f);
    let tx = *scene.transmitters().first().ok_or("scene has no transmitter")?;
    let b = sys.rhs(&transmitter_source(&disc, tx, &f));
    let direct = Solver::new(sys.clone())?.solve_rhs(&b);
    let groups = (0..sys.carriers.len()).map(|i| vec![i]).collect();
    let born = BornSeries::new(sys, groups)?.run(&b, opts.born_order)?;
    let err = born.solution().iter().zip(&direct).map(|(a, b)| (a - b).norm_sqr()).sum::<f64>().sqrt();
    let rel = err / direct.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    let ratio_dev = (born.fitted_ratio / born.contraction - 1.0).abs();
    let passed = born.contraction <= BORN_CONTRACTION_MAX && rel <= BORN_TOL && ratio_dev <= BORN_RATIO_TOL;
    Ok((
        passed,
        rel,
        format!("contraction ≤ {BORN_CONTRACTION_MAX}, relative error ≤ {BORN_TOL:e}, decay ratio within {}% of contraction", BORN_RATIO_TOL * 100.0),
        json!({
            "group": group.label(),
            "order": opts.born_order,
            "unknowns": direct.len(),
            "contraction": born.contraction,
            "fitted_ratio": born.fitted_ratio,
            "ratio_deviation": ratio_dev,
            "term_norms": born.term_norms,
        }),
    ))
}

/// Criterion 3: the factorised receiver field converges to the direct one
/// under annulus refinement.
fn lemma1(scene: &Scene, opts: &VerifyOptions) -> CheckResult {
    let f = scene.frequency()?;
    let ctx = DecoupleContext::new(Discretization::new(scene), f)?;
    // four consecutive ladder levels around the requested one, shifted to
    // stay on the ladder
    let start = (opts.quad_level.max(1) - 1).min(ANNULUS_LADDER.len() - 4);
    let grids: Vec<[usize; 3]> = ANNULUS_LADDER[start..start + 4].to_vec();
    let mut rel = Vec::new();
    for g in &grids {
        rel.push(factorization_report(&ctx, 0, *g, Middle::Full)?.rel_error);
    }
    let factors: Vec<f64> = rel.windows(2).map(|w| w[0] / w[1]).collect();
    let worst = factors.iter().cloned().fold(f64::INFINITY, f64::min);
    Ok((worst >= LEMMA1_FACTOR, worst, format!("discrepancy drops ≥ {LEMMA1_FACTOR}× per level"), json!({ "grids": grids, "relative_discrepancy": rel, "factors": factors })))
}

/// Criterion 4: the decoupling error vanishes like a power of the antenna
/// volume.
fn lemma2_scaling(scene: &Scene, opts: &VerifyOptions) -> CheckResult {
    let grids = SweepGrids { annulus: opts.annulus(1), angular: opts.angular };
    let rep = sweep::run(SweepKind::AntennaScale, scene, &[1.0, 0.5, 0.25, 0.125], grids)?;
    if let Some(p) = rep.points.iter().find(|p| p.error.is_some()) {
        return Err(format!("scale {}: {}", p.value, p.error.clone().unwrap_or_default()).into());
    }
    let fit = rep.fit("error").ok_or("fit failed")?;
    let passed = fit.slope >= LEMMA2_SLOPE && fit.r2 >= LEMMA2_R2;
    let errors: Vec<f64> = rep.points.iter().filter_map(|p| p.get("error")).collect();
    let x: Vec<f64> = rep.points.iter().map(|p| p.x).collect();
    Ok((passed, fit.slope, format!("slope ≥ {LEMMA2_SLOPE} with R² ≥ {LEMMA2_R2}"), json!({ "scales": [1.0, 0.5, 0.25, 0.125], "sqrt_volume": x, "error": errors, "r2": fit.r2 })))
}

/// Criterion 5: the far-field approximation of the scattered transfer
/// matrix improves one order faster than the matrix itself decays.
fn farfield_decay(scene: &Scene, opts: &VerifyOptions) -> CheckResult {
    let grids = SweepGrids { annulus: opts.annulus(0), angular: opts.angular };
    let rep = sweep::run(SweepKind::DmDistance, scene, &[1.0, 2.0, 4.0], grids)?;
    if let Some(p) = rep.points.iter().find(|p| p.error.is_some()) {
        return Err(format!("multiplier {}: {}", p.value, p.error.clone().unwrap_or_default()).into());
    }
    let hs = rep.fit("h_scatt").ok_or("fit failed")?;
    let gap = rep.fit("gap").ok_or("fit failed")?;
    let extra = hs.slope - gap.slope;
    Ok((
        extra >= FARFIELD_EXTRA_ORDER,
        extra,
        format!("gap slope ≥ {FARFIELD_EXTRA_ORDER} steeper than |H_scatt| slope"),
        json!({
            "d_m": rep.points.iter().map(|p| p.x).collect::<Vec<_>>(),
            "h_scatt": rep.points.iter().filter_map(|p| p.get("h_scatt")).collect::<Vec<_>>(),
            "gap": rep.points.iter().filter_map(|p| p.get("gap")).collect::<Vec<_>>(),
            "h_scatt_slope": hs.slope,
            "gap_slope": gap.slope,
            "h_scatt_r2": hs.r2,
            "gap_r2": gap.r2,
        }),
    ))
}

/// Criterion 6: discrete reciprocity of every resolvent, with and without
/// conductivity.
fn reciprocity(scene: &Scene) -> CheckResult {
    let f = scene.frequency()?;
    let mut worst: f64 = 0.0;
    let mut rows = Vec::new();
    for (label, s) in [("lossy", scene.clone()), ("lossless", scene.lossless()?)] {
        let disc = Discretization::new(&s);
        for g in [Group::T, Group::R, Group::M, Group::Total] {
            if disc.group_carriers(g).is_empty() {
                continue;
            }
            let r = reciprocity_check(&disc, &f, g)?;
            worst = worst.max(r.rel_error);
            rows.push(json!({ "scene": label, "group": g.label(), "unknowns": r.unknowns, "rel_error": r.rel_error }));
        }
    }
    Ok((worst <= RECIPROCITY_TOL, worst, format!("≤ {RECIPROCITY_TOL:e}"), json!({ "groups": rows })))
}

fn gvectors(s: &Scene, f: Frequency, grid: [usize; 2]) -> Result<Vec<GVector>, CheckError> {
    let ctx = DecoupleContext::new(Discretization::new(s), f)?;
    let mut out: Vec<GVector> = (0..s.transmitters().len()).map(|n| gvector_t(&ctx, n, grid)).collect();
    for m in 0..s.receivers().len() {
        out.push(gvector_r(&ctx, m, grid)?);
    }
    Ok(out)
}

/// Scene-surgery variants: scatterers removed, materials changed, moved; or
/// one scatterer added to an empty environment.
fn surgery(scene: &Scene) -> Vec<(&'static str, Result<Scene, scene::SceneError>)> {
    if scene.scatterers().is_empty() {
        let mid = (scene.origin + scene.e) / 2.0;
        let axis = (scene.e - scene.origin).normalize();
        let side = axis.cross(&V3::z()).try_normalize(1e-9).unwrap_or_else(|| axis.cross(&V3::x()).normalize());
        let at = mid + side * (0.5 * (scene.e - scene.origin).norm());
        let mut regions = scene.regions.clone();
        regions.push(scene::scatterer("added", at, Profile { radius: 0.5 * scene.r, delta_eps: 2.0, sigma: 0.01 }));
        return vec![("added", scene.rebuild(regions))];
    }
    let changed = scene.rebuild(
        scene
            .regions
            .iter()
            .map(|g| {
                let mut g = g.clone();
                if g.role == Role::Scatterer {
                    g.profile.delta_eps = 2.0 * g.profile.delta_eps + 1.0;
                    g.profile.sigma += 0.02;
                }
                g
            })
            .collect(),
    );
    let mid = (scene.origin + scene.e) / 2.0;
    vec![("removed", scene.without_scatterers()), ("material", changed), ("moved", scene.with_scatterers_moved(|c| mid + (c - mid) * 1.5))]
}

/// Criterion 7: shell traces depend only on their own antenna group.
fn gvector_independence(scene: &Scene, opts: &VerifyOptions) -> CheckResult {
    let f = scene.frequency()?;
    let base = gvectors(scene, f, opts.angular)?;
    let scale = base.iter().map(|g| g.max_abs()).fold(0.0, f64::max);
    let mut worst: f64 = 0.0;
    let mut rows = Vec::new();
    for (label, s) in surgery(scene) {
        let s = s?;
        let other = gvectors(&s, f, opts.angular)?;
        let d = base.iter().zip(&other).map(|(a, b)| a.max_diff(b)).fold(0.0, f64::max) / scale;
        worst = worst.max(d);
        rows.push(json!({ "variant": label, "rel_diff": d }));
    }
    Ok((worst <= GVECTOR_TOL, worst, format!("≤ {GVECTOR_TOL:e}"), json!({ "variants": rows, "traces": base.len() })))
}

/// Criterion 8: empty-environment scattering, a capacity closed form and
/// the normalisation of the feed currents.
fn closed_forms(scene: &Scene, opts: &VerifyOptions) -> CheckResult {
    let f = scene.frequency()?;
    let empty = scene.without_scatterers()?;
    let ctx = DecoupleContext::new(Discretization::new(&empty), f)?;
    let scatt = decoupled_transfer(&ctx, opts.angular, KernelPart::Scattered)?;
    let scatt_max = scatt.entries.iter().flatten().map(|z| z.norm()).fold(0.0, f64::max);
    let ff = farfield_transfer(&ctx, opts.angular, &scatt)?;
    let ff_max = ff.map(|m| m.entries.iter().flatten().map(|z| z.norm()).fold(0.0, f64::max)).unwrap_or(0.0);

    let one = C64::new(1.0, 0.0);
    let zero = C64::new(0.0, 0.0);
    let identity = TransferMatrix {
        f_hz: f.hz(),
        mode: TransferMode::Full,
        rx_ids: vec!["a".into(), "b".into()],
        tx_ids: vec!["a".into(), "b".into()],
        entries: vec![vec![one, zero], vec![zero, one]],
    };
    let cap_err = (capacity(&identity, 3.0) - 2.0 * 2.5f64.log2()).abs();

    let [n_r, n_phi] = scene.solver.disc;
    let fluxes: Vec<f64> = scene.regions.iter().filter(|g| g.wire.is_some()).map(|g| scene::source_flux(g, n_r, n_phi)).collect();
    let flux_err = fluxes.iter().map(|v| (v - 1.0).abs()).fold(0.0, f64::max);

    let passed = scatt_max == 0.0 && ff_max == 0.0 && cap_err <= CAPACITY_TOL && flux_err <= FLUX_TOL;
    // worst error in units of its own tolerance; the empty environment must be exact
    let exact = if scatt_max == 0.0 && ff_max == 0.0 { 0.0 } else { f64::INFINITY };
    let measured = [exact, cap_err / CAPACITY_TOL, flux_err / FLUX_TOL].into_iter().fold(0.0, f64::max);
    Ok((
        passed,
        measured,
        format!("normalised error ≤ 1: H_scatt = 0 exactly; capacity ± {CAPACITY_TOL:e}; flux ± {FLUX_TOL:e}"),
        json!({ "empty_h_scatt_max": scatt_max, "empty_farfield_max": ff_max, "capacity_error": cap_err, "flux": fluxes, "flux_error": flux_err }),
    ))
}

/// Probe points between the antenna groups that keep a stencil of radius
/// `margin` clear of every support.
fn probes(scene: &Scene, margin: f64) -> Vec<V3> {
    let axis = scene.e - scene.origin;
    let len = axis.norm();
    let dir = axis / len;
    let side = dir.cross(&V3::z()).try_normalize(1e-9).unwrap_or_else(|| dir.cross(&V3::x()).normalize());
    let up = dir.cross(&side);
    let mut out = Vec::new();
    for (t, a, b) in [(0.25, 0.6, 0.3), (0.5, 0.8, -0.2), (0.75, -0.5, 0.4), (0.5, -1.2, 0.1), (0.4, 1.5, -0.5), (0.6, 0.2, 1.0)] {
        let p = scene.origin + axis * t + side * (a * scene.r) + up * (b * scene.r);
        if scene.regions.iter().all(|g| (p - g.center).norm() > g.radius() + margin) {
            out.push(p);
        }
        if out.len() == 3 {
            break;
        }
    }
    out
}

/// Criterion 9: the recovered fields satisfy the five Maxwell equations with
/// second-order finite-difference residuals.
fn maxwell(scene: &Scene) -> CheckResult {
    let f = scene.frequency()?;
    let disc = Discretization::new(scene);
    let tx = *scene.transmitters().first().ok_or("scene has no transmitter")?;
    let field = vector_potential(&disc, &f, tx)?;
    let steps: Vec<f64> = [0.2, 0.1, 0.05, 0.025].iter().map(|h| h * scene.r).collect();
    let pts = probes(scene, 4.0 * steps[0]);
    if pts.is_empty() {
        return Err("no probe point clear of the supports".into());
    }
    let names = ["gauss_magnetic", "ampere", "faraday", "gauss_electric", "continuity"];
    let mut worst_dev: f64 = 0.0;
    let mut worst_cons: f64 = 0.0;
    let mut rows = Vec::new();
    for p in &pts {
        let res: Vec<crate::channel::Residuals> = steps.iter().map(|h| maxwell_residuals(&field, scene, &f, p, *h)).collect::<Result<_, _>>()?;
        let mut orders = Vec::new();
        for (k, name) in names.iter().enumerate() {
            let ys: Vec<f64> = res.iter().map(|r| r.as_array()[k]).collect();
            // residuals at round-off level are satisfied exactly
            let order = if ys[0] < 1e-13 { ORDER_TARGET } else { loglog_fit(&steps, &ys).ok_or("degenerate residuals")?.slope };
            worst_dev = worst_dev.max((order - ORDER_TARGET).abs());
            orders.push(json!({ "equation": name, "order": order, "finest": ys[ys.len() - 1] }));
        }
        let cons = res.iter().map(|r| r.consistency).fold(0.0, f64::max);
        worst_cons = worst_cons.max(cons);
        rows.push(json!({ "probe": [p.x, p.y, p.z], "equations": orders, "consistency": cons }));
    }
    let passed = worst_dev <= ORDER_TOL && worst_cons <= CONSISTENCY_TOL;
    Ok((
        passed,
        ORDER_TARGET + worst_dev,
        format!("every order within {ORDER_TARGET} ± {ORDER_TOL}; consistency ≤ {CONSISTENCY_TOL:e}"),
        json!({ "steps": steps, "probes": rows, "max_order_deviation": worst_dev }),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::presets;

    #[test]
    fn unknown_check_is_rejected() {
        let s = presets::single_link();
        assert!(run_check("nope", &s, &VerifyOptions::from_scene(&s)).is_err());
    }

    #[test]
    fn default_annulus_is_level_two() {
        assert_eq!(annulus_level([4, 8, 16]), 2);
        assert_eq!(annulus_level([2, 4, 8]), 0);
    }

    #[test]
    fn residual_of_kernel_is_second_order() {
        let k = FreeKernel::new(C64::new(2.0, 0.0));
        let d = V3::new(0.4, -0.3, 0.2);
        let (a, b) = (helmholtz_residual(&k, &d, 0.02), helmholtz_residual(&k, &d, 0.01));
        assert!(((a / b).log2() - 2.0).abs() < 0.05);
    }

    #[test]
    fn closed_forms_hold_on_single_link() {
        let s = presets::single_link();
        let r = run_check("closed-forms", &s, &VerifyOptions { angular: [8, 16], ..VerifyOptions::from_scene(&s) }).unwrap();
        assert!(r.passed, "{:?}", r.detail);
    }

    #[test]
    fn probes_stay_clear() {
        let s = presets::desk();
        let p = probes(&s, 0.8);
        assert_eq!(p.len(), 3);
        for x in p {
            assert!(s.region_at(&x).is_none());
        }
    }
}
