use anyhow::{anyhow, Context, Result};
use clap::{Args, Parser, Subcommand};
use mimo_scatter::channel::{capacity, transfer_matrix_with, TransferMatrix, TransferMode};
use mimo_scatter::decouple::{decoupled_transfer, DecoupleContext, KernelPart};
use mimo_scatter::operators::Group;
use mimo_scatter::par;
use mimo_scatter::report::{capacity_csv, csv_string, db_to_linear, field, snr_grid_db, stamped, write_atomic, write_json};
use mimo_scatter::scatter::{BornSeries, Discretization};
use mimo_scatter::scene::{tidy_hz, Frequency, FrequencySpec, Scene, SceneDoc};
use mimo_scatter::spread::farfield_transfer;
use mimo_scatter::sweep::{self, SweepGrids, SweepKind, SweepReport};
use mimo_scatter::verify::{self, VerifyOptions, ANNULUS_LADDER};
use serde::Serialize;
use serde_json::json;
use std::f64::consts::PI;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "mimo-scatter", version, about = "Transfer matrices of antenna arrays in scattering environments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check a scene's geometry, materials and quadrature (exit 2 if invalid).
    Validate(Common),
    /// Write full, decoupled and far-field transfer matrices and capacity curves.
    Transfer(TransferArgs),
    /// Run the acceptance checks (exit 1 if any fails).
    Verify(VerifyArgs),
    /// Sweep antenna scale, scatterer distance or frequency and fit log-log slopes.
    Sweep(SweepArgs),
}

#[derive(Args, Clone)]
struct Common {
    /// Scene file (JSON).
    #[arg(long)]
    scene: PathBuf,
    /// Frequencies in Hz, comma separated (default: the scene's).
    #[arg(long, value_delimiter = ',')]
    freq: Vec<f64>,
    /// Highest Born order.
    #[arg(long)]
    born_order: Option<usize>,
    /// Annulus quadrature level (0 = coarsest).
    #[arg(long)]
    quad_level: Option<usize>,
    /// Shell grid as `TxP` (polar × azimuthal nodes).
    #[arg(long, value_parser = parse_angular)]
    angular: Option<[usize; 2]>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct TransferArgs {
    #[command(flatten)]
    common: Common,
    /// SNR grid in dB as `lo:hi:step`.
    #[arg(long, default_value = "-10:30:5", value_parser = parse_snr, allow_hyphen_values = true)]
    snr_db: (f64, f64, f64),
}

#[derive(Args)]
struct VerifyArgs {
    #[command(flatten)]
    common: Common,
    /// Run a single check.
    #[arg(long)]
    only: Option<String>,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    common: Common,
    /// antenna-scale | dm-distance | frequency
    #[arg(long)]
    kind: SweepKind,
    /// Sweep values, comma separated (scales, D_M multipliers or Hz).
    #[arg(long, value_delimiter = ',')]
    values: Vec<f64>,
}

fn parse_angular(s: &str) -> Result<[usize; 2], String> {
    let (t, p) = s.split_once(['x', 'X']).ok_or("expected TxP, e.g. 16x32")?;
    let t: usize = t.trim().parse().map_err(|e| format!("{e}"))?;
    let p: usize = p.trim().parse().map_err(|e| format!("{e}"))?;
    if t == 0 || p == 0 {
        return Err("grid sizes must be positive".into());
    }
    Ok([t, p])
}

fn parse_snr(s: &str) -> Result<(f64, f64, f64), String> {
    let v: Vec<f64> = s.split(':').map(|x| x.trim().parse::<f64>().map_err(|e| e.to_string())).collect::<Result<_, _>>()?;
    match v.as_slice() {
        [lo, hi, step] if *step > 0.0 && hi >= lo => Ok((*lo, *hi, *step)),
        _ => Err("expected lo:hi:step with step > 0 and hi ≥ lo".into()),
    }
}

/// Errors that map to exit code 2.
#[derive(Debug)]
struct Invalid(String);

impl std::fmt::Display for Invalid {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Invalid {}

impl Common {
    /// The scene document with command-line overrides applied.
    fn document(&self) -> Result<SceneDoc> {
        let text = std::fs::read_to_string(&self.scene).map_err(|e| Invalid(format!("cannot read {}: {e}", self.scene.display())))?;
        let mut doc = SceneDoc::from_json(&text).map_err(|e| Invalid(format!("{}: {e}", self.scene.display())))?;
        if let Some(n) = self.born_order {
            doc.solver.born_order = n;
        }
        if let Some(l) = self.quad_level {
            doc.solver.annulus = *ANNULUS_LADDER.get(l).ok_or_else(|| Invalid(format!("--quad-level must be ≤ {}", ANNULUS_LADDER.len() - 1)))?;
        }
        if let Some(a) = self.angular {
            doc.solver.angular = a;
        }
        Ok(doc)
    }

    fn scene_at(&self, doc: &SceneDoc, hz: Option<f64>) -> Result<Scene> {
        let mut doc = doc.clone();
        if let Some(hz) = hz {
            doc.frequency = Some(FrequencySpec { omega: None, f_hz: Some(hz) });
        }
        Scene::from_doc(doc).map_err(|e| Invalid(format!("{}: {e}", self.scene.display())).into())
    }

    /// Frequencies to run: the command line's, else the scene's.
    fn frequencies(&self, doc: &SceneDoc) -> Result<Vec<f64>> {
        if !self.freq.is_empty() {
            if let Some(bad) = self.freq.iter().find(|f| !f.is_finite() || **f == 0.0) {
                return Err(Invalid(format!("invalid frequency {bad}")).into());
            }
            return Ok(self.freq.clone());
        }
        let scene = self.scene_at(doc, None)?;
        Ok(vec![tidy_hz(scene.frequency().map_err(|e| Invalid(e.to_string()))?.hz())])
    }

    fn out_dir(&self) -> PathBuf {
        self.out.clone().unwrap_or_else(|| PathBuf::from("."))
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).format_timestamp(None).init();
    if let Err(e) = configure_threads() {
        eprintln!("error: {e:#}");
        return ExitCode::from(2);
    }
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Validate(c) => validate(&c),
        Command::Transfer(a) => transfer(&a),
        Command::Verify(a) => verify_cmd(&a),
        Command::Sweep(a) => sweep_cmd(&a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<Invalid>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}

fn configure_threads() -> Result<()> {
    let Ok(v) = std::env::var("MIMO_SCATTER_THREADS") else { return Ok(()) };
    let n: usize = v.trim().parse().with_context(|| format!("MIMO_SCATTER_THREADS={v:?} is not a thread count"))?;
    if n == 0 {
        return Err(anyhow!("MIMO_SCATTER_THREADS must be at least 1"));
    }
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    if n == 1 {
        par::force_sequential(true);
    }
    Ok(())
}

fn print_json<T: Serialize>(v: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(v)?);
    Ok(())
}

#[derive(Serialize)]
struct RegionReport {
    id: String,
    role: String,
    center: [f64; 3],
    radius: f64,
    cells: usize,
    volume: f64,
    quadrature_volume: f64,
    volume_rel_error: f64,
}

fn validate(c: &Common) -> Result<ExitCode> {
    let doc = c.document()?;
    let freqs = c.frequencies(&doc)?;
    let scene = c.scene_at(&doc, Some(freqs[0]))?;
    let disc = Discretization::new(&scene);
    let regions: Vec<RegionReport> = scene
        .regions
        .iter()
        .zip(&disc.carriers)
        .map(|(g, car)| {
            let volume = 4.0 / 3.0 * PI * g.radius().powi(3);
            let q: f64 = car.weights.iter().sum();
            RegionReport {
                id: g.id.clone(),
                role: format!("{:?}", g.role).to_lowercase(),
                center: [g.center.x, g.center.y, g.center.z],
                radius: g.radius(),
                cells: car.len(),
                volume,
                quadrature_volume: q,
                volume_rel_error: (q - volume).abs() / volume,
            }
        })
        .collect();
    let mut violations = Vec::new();
    let mut per_freq = Vec::new();
    for &hz in &freqs {
        let f = Frequency::from_hz(hz, scene.solver.eta).map_err(|e| Invalid(e.to_string()))?;
        let mut materials = Vec::new();
        for g in &scene.regions {
            let ok = g.check_material(&f);
            if let Err(e) = &ok {
                violations.push(format!("{hz:e} Hz: {e}"));
            }
            let c = g.contrast(&f);
            materials.push(json!({ "id": g.id, "contrast": [c.re, c.im], "eps_r_peak": g.eps_r(&g.center), "sigma_peak": g.sigma(&g.center), "ok": ok.is_ok() }));
        }
        let self_term = disc.system(Group::Total, &f).check_self_terms();
        if let Err(e) = &self_term {
            violations.push(format!("{hz:e} Hz: {e}"));
        }
        per_freq.push(json!({ "f_hz": hz, "k0": f.k0(), "k0_r": f.k0() * scene.r, "max_self_term": self_term.ok(), "materials": materials }));
    }
    let report = json!({
        "scene": c.scene.display().to_string(),
        "status": if violations.is_empty() { "ok" } else { "invalid" },
        "violations": violations,
        "warnings": scene.warnings,
        "geometry": {
            "r": scene.r, "w": scene.w,
            "origin": [scene.origin.x, scene.origin.y, scene.origin.z],
            "e": [scene.e.x, scene.e.y, scene.e.z],
            "d_tr": scene.d_tr, "d_m": if scene.d_m.is_finite() { json!(scene.d_m) } else { json!(null) },
            "rho_in_t": scene.rho_in_t, "rho_in_r": scene.rho_in_r,
        },
        "regions": regions,
        "frequencies": per_freq,
    });
    print_json(&report)?;
    if let Some(dir) = &c.out {
        write_json(&dir.join("validate.json"), &report)?;
    }
    Ok(if violations.is_empty() { ExitCode::SUCCESS } else { ExitCode::from(2) })
}

#[derive(Serialize)]
struct FrequencyOutcome {
    f_hz: f64,
    ok: bool,
    error: Option<String>,
    condition: Option<f64>,
    born_contraction: Option<f64>,
    /// `‖H_mode - H_full‖_F / ‖H_full‖_F`.
    rel_diff_decoupled: Option<f64>,
    rel_diff_farfield: Option<f64>,
    files: Vec<String>,
}

struct Matrices {
    full: TransferMatrix,
    decoupled: TransferMatrix,
    farfield: TransferMatrix,
    condition: f64,
    contraction: f64,
}

fn matrices(scene: &Scene, angular: [usize; 2]) -> Result<Matrices> {
    let f = scene.frequency()?;
    let disc = Discretization::new(scene);
    let ctx = DecoupleContext::new(disc.clone(), f)?;
    let solver = ctx.full()?;
    log::info!("{:.6e} Hz: complete system {} unknowns, condition estimate {:.3e}", f.hz(), solver.system.dim(), solver.condition);
    let full = transfer_matrix_with(&disc, &f, solver)?;
    let groups = (0..solver.system.carriers.len()).map(|i| vec![i]).collect();
    let contraction = BornSeries::new(solver.system.clone(), groups)?.contraction();
    log::info!("{:.6e} Hz: Born contraction estimate over regions {contraction:.4}", f.hz());
    let decoupled = decoupled_transfer(&ctx, angular, KernelPart::Total)?;
    let scatt = decoupled_transfer(&ctx, angular, KernelPart::Scattered)?;
    // far-field mode: free-space part of the decoupled transfer plus the
    // spread-kernel approximation of the scattered part
    let mut farfield = decoupled.sub(&scatt);
    farfield.mode = TransferMode::FarField;
    if let Some(ff) = farfield_transfer(&ctx, angular, &scatt)? {
        for (row, add) in farfield.entries.iter_mut().zip(&ff.entries) {
            for (a, b) in row.iter_mut().zip(add) {
                *a += b;
            }
        }
    }
    log::info!("{:.6e} Hz: decoupled and far-field transfer matrices done", f.hz());
    Ok(Matrices { full, decoupled, farfield, condition: solver.condition, contraction })
}

fn transfer(a: &TransferArgs) -> Result<ExitCode> {
    let c = &a.common;
    let doc = c.document()?;
    let freqs = c.frequencies(&doc)?;
    let scenes: Vec<Scene> = freqs.iter().map(|hz| c.scene_at(&doc, Some(*hz))).collect::<Result<_>>()?;
    let angular = scenes[0].solver.angular;
    let out = c.out_dir();
    let snr = snr_grid_db(a.snr_db.0, a.snr_db.1, a.snr_db.2);
    // frequencies run on the worker pool; files are written afterwards in order
    let results = par::map_range(scenes.len(), |i| matrices(&scenes[i], angular).map_err(|e| format!("{e:#}")));
    let mut outcomes = Vec::new();
    for (hz, res) in freqs.iter().zip(results) {
        match res {
            Err(e) => {
                log::warn!("{hz:.6e} Hz failed: {e}");
                outcomes.push(FrequencyOutcome {
                    f_hz: *hz,
                    ok: false,
                    error: Some(e),
                    condition: None,
                    born_contraction: None,
                    rel_diff_decoupled: None,
                    rel_diff_farfield: None,
                    files: vec![],
                });
            }
            Ok(m) => {
                let mut files = Vec::new();
                let mut curves = Vec::new();
                for h in [&m.full, &m.decoupled, &m.farfield] {
                    let path = stamped(&out, "H", *hz, h.mode.label(), "csv");
                    write_atomic(&path, h.to_csv().as_bytes())?;
                    files.push(path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default());
                    curves.push((h.mode.label().to_string(), snr.iter().map(|s| capacity(h, db_to_linear(*s))).collect::<Vec<f64>>()));
                }
                let path = stamped(&out, "capacity", *hz, "modes", "csv");
                write_atomic(&path, capacity_csv(&snr, &curves).as_bytes())?;
                files.push(path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default());
                outcomes.push(FrequencyOutcome {
                    f_hz: *hz,
                    ok: true,
                    error: None,
                    condition: Some(m.condition),
                    born_contraction: Some(m.contraction),
                    rel_diff_decoupled: Some(m.full.rel_diff(&m.decoupled)),
                    rel_diff_farfield: Some(m.full.rel_diff(&m.farfield)),
                    files,
                });
            }
        }
    }
    let summary = json!({ "scene": c.scene.display().to_string(), "angular": angular, "snr_db": snr, "frequencies": outcomes });
    write_json(&out.join("transfer.json"), &summary)?;
    print_json(&summary)?;
    Ok(ExitCode::SUCCESS)
}

fn verify_cmd(a: &VerifyArgs) -> Result<ExitCode> {
    let c = &a.common;
    let doc = c.document()?;
    let freqs = c.frequencies(&doc)?;
    let mut all_passed = true;
    let mut runs = Vec::new();
    for hz in freqs {
        let scene = c.scene_at(&doc, Some(hz))?;
        let opts = VerifyOptions::from_scene(&scene);
        let reports = verify::run_suite(&scene, &opts, a.only.as_deref()).map_err(|e| Invalid(e.to_string()))?;
        for r in &reports {
            eprintln!("{:>2} {:<22} {} measured {:.6e} ({})", r.criterion, r.name, if r.passed { "PASS" } else { "FAIL" }, r.measured, r.tolerance);
            all_passed &= r.passed;
        }
        runs.push(json!({ "f_hz": hz, "checks": reports }));
    }
    let summary = json!({ "scene": c.scene.display().to_string(), "passed": all_passed, "runs": runs });
    if let Some(dir) = &c.out {
        write_json(&dir.join("verify.json"), &summary)?;
    }
    print_json(&summary)?;
    Ok(if all_passed { ExitCode::SUCCESS } else { ExitCode::from(1) })
}

fn sweep_csv(rep: &SweepReport) -> String {
    let keys: Vec<&str> = rep.fits.iter().map(|(k, _)| k.as_str()).collect();
    let header: Vec<&str> = ["value", rep.abscissa].into_iter().chain(keys.iter().copied()).chain(["status"]).collect();
    let rows = rep.points.iter().map(|p| {
        let status = if p.resonant {
            "skipped-resonant"
        } else if p.error.is_some() {
            "failed"
        } else {
            "ok"
        };
        [p.value.to_string(), field(p.x)].into_iter().chain(keys.iter().map(|k| p.get(k).map(field).unwrap_or_default())).chain([status.to_string()]).collect()
    });
    csv_string(&header, rows)
}

fn sweep_cmd(a: &SweepArgs) -> Result<ExitCode> {
    let c = &a.common;
    let doc = c.document()?;
    // the scene's (or the first requested) frequency anchors the non-frequency sweeps
    let base_hz = c.frequencies(&doc).ok().map(|f| f[0]);
    let scene = c.scene_at(&doc, base_hz)?;
    let values = if !a.values.is_empty() {
        a.values.clone()
    } else if a.kind == SweepKind::Frequency && c.freq.len() >= 3 {
        c.freq.clone()
    } else {
        a.kind.defaults(&scene)
    };
    let grids = SweepGrids { annulus: ANNULUS_LADDER[(verify::annulus_level(scene.solver.annulus) + 1).min(ANNULUS_LADDER.len() - 1)], angular: scene.solver.angular };
    let rep = sweep::run(a.kind, &scene, &values, grids)?;
    let out = c.out_dir();
    let stem = format!("sweep_{}", a.kind.label());
    write_json(&out.join(format!("{stem}.json")), &rep)?;
    write_atomic(&out.join(format!("{stem}.csv")), sweep_csv(&rep).as_bytes())?;
    for (k, fit) in &rep.fits {
        match fit {
            Some(f) => eprintln!("{k}: slope {:.4} (R² {:.4})", f.slope, f.r2),
            None => eprintln!("{k}: not enough successful points for a fit"),
        }
    }
    print_json(&rep)?;
    Ok(ExitCode::SUCCESS)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn angular_grid_parses() {
        assert_eq!(parse_angular("16x32"), Ok([16, 32]));
        assert_eq!(parse_angular("8X 12"), Ok([8, 12]));
        assert!(parse_angular("16").is_err());
        assert!(parse_angular("0x4").is_err());
    }

    #[test]
    fn snr_grid_parses() {
        assert_eq!(parse_snr("-10:30:5"), Ok((-10.0, 30.0, 5.0)));
        assert!(parse_snr("0:10:0").is_err());
        assert!(parse_snr("10:0:1").is_err());
        assert!(parse_snr("0:10").is_err());
    }

    #[test]
    fn cli_definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }
}
