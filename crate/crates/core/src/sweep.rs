//! Parameter sweeps with least-squares log-log fits.
//!
//! * antenna scale: error between the full and the decoupled receiver field
//!   against the square root of the antenna volume;
//! * scatterer distance: magnitude of the scattered transfer matrix and its
//!   gap to the far-field approximation against the antenna–scatterer gap;
//! * frequency: gap between the full and the decoupled transfer matrices,
//!   skipping near-resonant points.

use crate::channel::{transfer_matrix_with, ChannelError};
use crate::decouple::{decoupled_transfer, factorization_report, DecoupleContext, KernelPart, Middle};
use crate::par;
use crate::scatter::{Discretization, ScatterError};
use crate::scene::{Frequency, Role, Scene, SceneError};
use crate::spread::farfield_transfer;
use serde::Serialize;
use std::f64::consts::PI;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SweepError {
    #[error("a sweep needs at least 3 points, got {0}")]
    TooFewPoints(usize),
    #[error("sweep values must be positive and finite")]
    BadValue,
    #[error("the scene has no scatterers")]
    NoScatterers,
    #[error(transparent)]
    Scene(#[from] SceneError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum SweepKind {
    AntennaScale,
    DmDistance,
    Frequency,
}

impl SweepKind {
    pub fn label(&self) -> &'static str {
        match self {
            SweepKind::AntennaScale => "antenna-scale",
            SweepKind::DmDistance => "dm-distance",
            SweepKind::Frequency => "frequency",
        }
    }

    /// Default sweep values.
    pub fn defaults(&self, scene: &Scene) -> Vec<f64> {
        match self {
            SweepKind::AntennaScale => vec![1.0, 0.5, 0.25, 0.125],
            SweepKind::DmDistance => vec![1.0, 2.0, 4.0],
            SweepKind::Frequency => {
                let f0 = scene.frequency.map(|f| crate::scene::tidy_hz(f.hz())).unwrap_or(1.0e8);
                [0.5, 0.75, 1.0, 1.5, 2.0].iter().map(|s| crate::scene::tidy_hz(s * f0)).collect()
            }
        }
    }
}

impl std::str::FromStr for SweepKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "antenna-scale" => Ok(SweepKind::AntennaScale),
            "dm-distance" => Ok(SweepKind::DmDistance),
            "frequency" => Ok(SweepKind::Frequency),
            _ => Err(format!("unknown sweep kind `{s}` (antenna-scale | dm-distance | frequency)")),
        }
    }
}

/// Least-squares line through `(ln x, ln y)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LogLogFit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
}

/// Fits `ln y = slope·ln x + intercept`. Needs at least two points with
/// positive coordinates and distinct `x`.
pub fn loglog_fit(x: &[f64], y: &[f64]) -> Option<LogLogFit> {
    let pts: Vec<(f64, f64)> = x.iter().zip(y).filter(|(a, b)| **a > 0.0 && **b > 0.0).map(|(a, b)| (a.ln(), b.ln())).collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = pts.iter().map(|p| (p.1 - my).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let slope = sxy / sxx;
    let r2 = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    Some(LogLogFit { slope, intercept: my - slope * mx, r2 })
}

/// One sweep point: the swept value, the abscissa of the fits, the measured
/// quantities and the failure, if any.
#[derive(Debug, Clone, Serialize)]
pub struct SweepPoint {
    pub value: f64,
    pub x: f64,
    pub measured: Vec<(String, f64)>,
    pub error: Option<String>,
    /// The point was skipped because the system was flagged near-resonant.
    pub resonant: bool,
}

impl SweepPoint {
    pub fn get(&self, key: &str) -> Option<f64> {
        self.measured.iter().find(|(k, _)| k == key).map(|(_, v)| *v)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepReport {
    pub kind: SweepKind,
    /// Meaning of `SweepPoint::x`.
    pub abscissa: &'static str,
    pub points: Vec<SweepPoint>,
    /// Fit of each measured quantity against `x` over the successful points.
    pub fits: Vec<(String, Option<LogLogFit>)>,
}

impl SweepReport {
    pub fn fit(&self, key: &str) -> Option<LogLogFit> {
        self.fits.iter().find(|(k, _)| k == key).and_then(|(_, f)| *f)
    }
}

/// Grids used by the sweeps.
#[derive(Debug, Clone, Copy)]
pub struct SweepGrids {
    pub annulus: [usize; 3],
    pub angular: [usize; 2],
}

pub fn run(kind: SweepKind, scene: &Scene, values: &[f64], grids: SweepGrids) -> Result<SweepReport, SweepError> {
    if values.len() < 3 {
        return Err(SweepError::TooFewPoints(values.len()));
    }
    if values.iter().any(|v| !v.is_finite() || *v <= 0.0) {
        return Err(SweepError::BadValue);
    }
    let (abscissa, points) = match kind {
        SweepKind::AntennaScale => ("sqrt_antenna_volume_m^1.5", antenna_scale(scene, values, grids)),
        SweepKind::DmDistance => ("d_m_m", dm_distance(scene, values, grids)?),
        SweepKind::Frequency => ("f_hz", frequency(scene, values, grids)),
    };
    let keys: Vec<String> = points.iter().find(|p| p.error.is_none()).map(|p| p.measured.iter().map(|(k, _)| k.clone()).collect()).unwrap_or_default();
    let fits = keys
        .into_iter()
        .map(|k| {
            let ok: Vec<&SweepPoint> = points.iter().filter(|p| p.error.is_none()).collect();
            let xs: Vec<f64> = ok.iter().map(|p| p.x).collect();
            let ys: Vec<f64> = ok.iter().map(|p| p.get(&k).unwrap_or(0.0)).collect();
            let fit = if ok.len() >= 3 { loglog_fit(&xs, &ys) } else { None };
            (k, fit)
        })
        .collect();
    Ok(SweepReport { kind, abscissa, points, fits })
}

fn antenna_volume(scene: &Scene) -> f64 {
    scene.regions.iter().filter(|g| g.role != Role::Scatterer).map(|g| 4.0 / 3.0 * PI * g.radius().powi(3)).sum()
}

type PointError = Box<dyn std::error::Error + Send + Sync>;

fn failed(value: f64, x: f64, e: PointError) -> SweepPoint {
    let resonant = is_resonance(e.as_ref());
    log::warn!("sweep point {value:e} {}: {e}", if resonant { "skipped" } else { "failed" });
    SweepPoint { value, x, measured: Vec::new(), error: Some(e.to_string()), resonant }
}

fn ok(value: f64, x: f64, measured: Vec<(String, f64)>) -> SweepPoint {
    SweepPoint { value, x, measured, error: None, resonant: false }
}

fn antenna_scale(scene: &Scene, values: &[f64], grids: SweepGrids) -> Vec<SweepPoint> {
    par::map_range(values.len(), |i| {
        let s = values[i];
        let point = || -> Result<SweepPoint, PointError> {
            let scaled = scene.with_antennas_scaled(s)?;
            let x = antenna_volume(&scaled).sqrt();
            let ctx = DecoupleContext::new(Discretization::new(&scaled), scaled.frequency()?)?;
            let mut err: f64 = 0.0;
            let mut direct: f64 = 0.0;
            for n in 0..scaled.transmitters().len() {
                let r = factorization_report(&ctx, n, grids.annulus, Middle::Environment)?;
                err = err.max(r.max_error);
                direct = direct.max(r.max_direct);
            }
            Ok(ok(s, x, vec![("error".into(), err), ("direct".into(), direct)]))
        };
        point().unwrap_or_else(|e| failed(s, f64::NAN, e))
    })
}

/// Scene with the scatterers pushed radially away from the midpoint of the
/// two shell centres until the antenna–scatterer gap equals `target`.
pub fn scene_at_gap(scene: &Scene, target: f64) -> Result<Scene, SweepError> {
    let mid = (scene.origin + scene.e) / 2.0;
    let at = |lam: f64| scene.with_scatterers_moved(|c| mid + (c - mid) * lam);
    if (scene.d_m - target).abs() <= 1e-12 * target {
        return Ok(scene.clone());
    }
    let (mut lo, mut hi) = (1.0f64, 2.0f64);
    while at(hi)?.d_m < target {
        lo = hi;
        hi *= 2.0;
        if hi > 1e6 {
            return Err(SweepError::BadValue);
        }
    }
    for _ in 0..80 {
        let m = 0.5 * (lo + hi);
        if at(m)?.d_m < target {
            lo = m;
        } else {
            hi = m;
        }
    }
    Ok(at(0.5 * (lo + hi))?)
}

fn dm_distance(scene: &Scene, values: &[f64], grids: SweepGrids) -> Result<Vec<SweepPoint>, SweepError> {
    if scene.scatterers().is_empty() {
        return Err(SweepError::NoScatterers);
    }
    if values.iter().any(|v| *v < 1.0) {
        return Err(SweepError::BadValue);
    }
    let d0 = scene.d_m;
    Ok(par::map_range(values.len(), |i| {
        let k = values[i];
        let point = || -> Result<SweepPoint, PointError> {
            let moved = scene_at_gap(scene, k * d0)?;
            let ctx = DecoupleContext::new(Discretization::new(&moved), moved.frequency()?)?;
            let reference = decoupled_transfer(&ctx, grids.angular, KernelPart::Scattered)?;
            let ff = farfield_transfer(&ctx, grids.angular, &reference)?.ok_or("no scattering kernel")?;
            let hs = reference.to_dmatrix().norm();
            let gap = (ff.to_dmatrix() - reference.to_dmatrix()).norm();
            Ok(ok(k, moved.d_m, vec![("h_scatt".into(), hs), ("gap".into(), gap)]))
        };
        point().unwrap_or_else(|e| failed(k, f64::NAN, e))
    }))
}

fn frequency(scene: &Scene, values: &[f64], grids: SweepGrids) -> Vec<SweepPoint> {
    let eta = scene.solver.eta;
    par::map_range(values.len(), |i| {
        let hz = values[i];
        let point = || -> Result<SweepPoint, PointError> {
            let f = Frequency::from_hz(hz, eta)?;
            let disc = Discretization::new(scene);
            let ctx = DecoupleContext::new(disc.clone(), f)?;
            let full = transfer_matrix_with(&disc, &f, ctx.full()?)?;
            let dec = decoupled_transfer(&ctx, grids.angular, KernelPart::Total)?;
            let gap = (full.to_dmatrix() - dec.to_dmatrix()).norm();
            Ok(ok(hz, hz, vec![("h_full".into(), full.to_dmatrix().norm()), ("gap".into(), gap)]))
        };
        point().unwrap_or_else(|e| failed(hz, hz, e))
    })
}

/// Whether an error, or one of its sources, is a resonance flag.
pub fn is_resonance(e: &(dyn std::error::Error + 'static)) -> bool {
    let mut cur: Option<&(dyn std::error::Error + 'static)> = Some(e);
    while let Some(err) = cur {
        if let Some(ScatterError::Resonance { .. }) = err.downcast_ref::<ScatterError>() {
            return true;
        }
        if let Some(ChannelError::Scatter(ScatterError::Resonance { .. })) = err.downcast_ref::<ChannelError>() {
            return true;
        }
        cur = err.source();
    }
    false
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::presets;

    #[test]
    fn fit_recovers_power_law() {
        let x = [1.0, 2.0, 4.0, 8.0];
        let y: Vec<f64> = x.iter().map(|v: &f64| 3.0 * v.powf(-2.5)).collect();
        let f = loglog_fit(&x, &y).unwrap();
        assert!((f.slope + 2.5).abs() < 1e-12);
        assert!((f.intercept - 3f64.ln()).abs() < 1e-12);
        assert!((f.r2 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn fit_r2_drops_for_scatter() {
        let f = loglog_fit(&[1.0, 2.0, 3.0, 4.0], &[1.0, 3.0, 1.0, 3.0]).unwrap();
        assert!(f.r2 < 0.5);
    }

    #[test]
    fn fewer_than_three_points_is_an_error() {
        let s = presets::single_link();
        let g = SweepGrids { annulus: [4, 8, 16], angular: [8, 16] };
        assert!(matches!(run(SweepKind::AntennaScale, &s, &[1.0, 0.5], g), Err(SweepError::TooFewPoints(2))));
    }

    #[test]
    fn gap_targeting_hits_multiple() {
        let s = presets::desk();
        let moved = scene_at_gap(&s, 2.0 * s.d_m).unwrap();
        assert!((moved.d_m - 2.0 * s.d_m).abs() < 1e-9);
    }

    #[test]
    fn kind_round_trips() {
        for k in [SweepKind::AntennaScale, SweepKind::DmDistance, SweepKind::Frequency] {
            assert_eq!(k.label().parse::<SweepKind>().unwrap(), k);
        }
    }
}
