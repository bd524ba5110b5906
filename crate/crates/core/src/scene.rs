//! Scene description: regions with smooth material bumps, the antenna wire
//! sections, the shell geometry and the solver settings, plus the JSON
//! document format and its validation.

use crate::quadrature::gauss_legendre_on;
#[cfg(test)]
use crate::quadrature::tangent_frame;
#[cfg(test)]
use crate::J;
use crate::{V3c, C0, C64, MU0, V3};
use nalgebra::Matrix3;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SceneError {
    #[error("cannot read scene: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed scene document: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("unsupported schema version {0} (expected 1)")]
    Schema(u32),
    #[error("invalid region `{id}`: {reason}")]
    Region { id: String, reason: String },
    #[error("disjoint supports violated: `{a}` and `{b}` overlap")]
    Overlap { a: String, b: String },
    #[error("scene needs at least one transmitter and one receiver")]
    MissingAntennas,
    #[error("enclosure radius too large: r = {r} exceeds {limit} ({which})")]
    EnclosureTooLarge { r: f64, limit: f64, which: String },
    #[error("antenna `{id}` is not inside the inner shell radius r - w = {inner}")]
    NotEnclosed { id: String, inner: f64 },
    #[error("region `{id}` intersects the {side} shell annulus")]
    AnnulusHit { id: String, side: String },
    #[error("the two shell annuli intersect")]
    AnnuliOverlap,
    #[error("invalid frequency: {0}")]
    Frequency(String),
    #[error("degenerate material in `{id}`: |k²| falls below the floor")]
    DegenerateMaterial { id: String },
}

/// Angular frequency with its derived wavenumbers.
///
/// The kernel wavenumber carries the sign of `ω`, so that the problem at `-ω`
/// is the complex conjugate of the problem at `ω` for real data.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Frequency {
    pub omega: f64,
    /// Non-negative regularisation added to the spectral parameter.
    pub eta: f64,
}

impl Frequency {
    pub fn from_omega(omega: f64, eta: f64) -> Result<Self, SceneError> {
        if !omega.is_finite() || omega == 0.0 {
            return Err(SceneError::Frequency(format!("omega must be finite and non-zero, got {omega}")));
        }
        if !(eta >= 0.0) {
            return Err(SceneError::Frequency(format!("eta must be non-negative, got {eta}")));
        }
        Ok(Self { omega, eta })
    }

    pub fn from_hz(f_hz: f64, eta: f64) -> Result<Self, SceneError> {
        Self::from_omega(2.0 * PI * f_hz, eta)
    }

    pub fn hz(&self) -> f64 {
        self.omega / (2.0 * PI)
    }

    /// Free-space wavenumber `|ω|/c`.
    pub fn k0(&self) -> f64 {
        self.omega.abs() / C0
    }

    fn sign(&self) -> f64 {
        self.omega.signum()
    }

    /// Spectral parameter `z = k0² + j·sign(ω)·η`.
    pub fn z(&self) -> C64 {
        C64::new(self.k0().powi(2), self.sign() * self.eta)
    }

    /// Kernel wavenumber `κ` with `κ² = z` and `Im κ ≥ 0`.
    pub fn kappa(&self) -> C64 {
        self.sign() * self.z().sqrt()
    }

    /// The same frequency with the sign of `ω` flipped.
    pub fn negated(&self) -> Self {
        Self { omega: -self.omega, eta: self.eta }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Transmitter,
    Receiver,
    Scatterer,
}

/// Smooth radial bump `q(s) = (1 - s²)⁴`, `s = |x - c|/radius`, scaling the
/// permittivity contrast and the conductivity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Profile {
    pub radius: f64,
    #[serde(default)]
    pub delta_eps: f64,
    #[serde(default)]
    pub sigma: f64,
}

/// Cross-section of an antenna wire and the axial extent of its current.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WireSection {
    /// Disc centre; defaults to the region centre.
    #[serde(default)]
    pub center: Option<[f64; 3]>,
    pub normal: [f64; 3],
    pub radius: f64,
    /// Half length of the tapered current along the axis; defaults to twice
    /// the wire radius.
    #[serde(default)]
    pub half_length: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionSpec {
    pub id: String,
    pub role: Role,
    pub center: [f64; 3],
    pub profile: Profile,
    #[serde(default)]
    pub wire: Option<WireSection>,
}

/// Validated region.
#[derive(Debug, Clone, PartialEq)]
pub struct Region {
    pub id: String,
    pub role: Role,
    pub center: V3,
    pub profile: Profile,
    pub wire: Option<Wire>,
}

/// Validated wire section.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Wire {
    pub center: V3,
    pub normal: V3,
    pub radius: f64,
    pub half_length: f64,
}

/// Local coefficients of the perturbation at a point.
#[derive(Debug, Clone, Copy)]
pub struct Coefficients {
    /// `δk² = (ε_r - 1)k0² - jμ0ωσ`
    pub delta_k2: C64,
    /// `∇ ln k²`
    pub grad_log: V3c,
}

impl Region {
    pub fn radius(&self) -> f64 {
        self.profile.radius
    }

    pub fn contains(&self, x: &V3) -> bool {
        (x - self.center).norm() < self.profile.radius
    }

    /// Bump value, gradient and Hessian at `x` (zero outside the support).
    pub fn bump(&self, x: &V3) -> (f64, nalgebra::Vector3<f64>, Matrix3<f64>) {
        let a = self.profile.radius;
        let d = x - self.center;
        let s2 = d.norm_squared() / (a * a);
        if s2 >= 1.0 {
            return (0.0, V3::zeros(), Matrix3::zeros());
        }
        let t = 1.0 - s2;
        let q = t.powi(4);
        let grad = d * (-8.0 * t.powi(3) / (a * a));
        let hess = Matrix3::identity() * (-8.0 * t.powi(3) / (a * a)) + d * d.transpose() * (48.0 * t * t / a.powi(4));
        (q, grad, hess)
    }

    /// Peak of `δk²`, i.e. its value at the centre of the bump.
    pub fn contrast(&self, f: &Frequency) -> C64 {
        C64::new(self.profile.delta_eps * f.k0().powi(2), -MU0 * f.omega * self.profile.sigma)
    }

    pub fn eps_r(&self, x: &V3) -> f64 {
        1.0 + self.profile.delta_eps * self.bump(x).0
    }

    pub fn sigma(&self, x: &V3) -> f64 {
        self.profile.sigma * self.bump(x).0
    }

    pub fn k2(&self, x: &V3, f: &Frequency) -> C64 {
        C64::new(f.k0().powi(2), 0.0) + self.contrast(f) * self.bump(x).0
    }

    pub fn coefficients(&self, x: &V3, f: &Frequency) -> Coefficients {
        let (q, g, _) = self.bump(x);
        let c = self.contrast(f);
        let k2 = C64::new(f.k0().powi(2), 0.0) + c * q;
        Coefficients { delta_k2: c * q, grad_log: g.map(|v| c * v / k2) }
    }

    /// Jacobian of `∇ ln k²`: `c∇∇q/k² - c²∇q∇qᵀ/k⁴`.
    pub fn hess_log(&self, x: &V3, f: &Frequency) -> crate::M3c {
        let (q, g, h) = self.bump(x);
        let c = self.contrast(f);
        let k2 = C64::new(f.k0().powi(2), 0.0) + c * q;
        h.map(|v| c * v / k2) - (g * g.transpose()).map(|v| c * c * v / (k2 * k2))
    }

    /// Checks `|k²|` stays away from zero over the whole bump.
    pub fn check_material(&self, f: &Frequency) -> Result<(), SceneError> {
        let k02 = f.k0().powi(2);
        let c = self.contrast(f);
        // |k0² + c q| on q ∈ [0, 1]: minimise along the segment.
        let t = if c.norm_sqr() > 0.0 { (-(k02 * c.re) / c.norm_sqr()).clamp(0.0, 1.0) } else { 0.0 };
        let m = (C64::new(k02, 0.0) + c * t).norm();
        if m < 1e-9 * k02 {
            return Err(SceneError::DegenerateMaterial { id: self.id.clone() });
        }
        Ok(())
    }

    /// Impressed current density of a transmitter at `x`: axial, constant
    /// across the wire disc, tapered as `(1 - (t/L)²)²` along the axis, with
    /// unit flux through the disc.
    pub fn source_density(&self, x: &V3) -> V3 {
        let Some(w) = self.wire else { return V3::zeros() };
        let d = x - w.center;
        let t = d.dot(&w.normal);
        let perp = (d - w.normal * t).norm();
        if perp > w.radius || t.abs() >= w.half_length {
            return V3::zeros();
        }
        let taper = (1.0 - (t / w.half_length).powi(2)).powi(2);
        w.normal * (taper / (PI * w.radius * w.radius))
    }

    /// Quadrature of the wire volume `(points, weights)`: polar disc rule times
    /// Gauss–Legendre along the axis.
    pub fn wire_volume_rule(&self, n_r: usize, n_phi: usize, n_t: usize) -> Vec<(V3, f64)> {
        let Some(w) = self.wire else { return Vec::new() };
        let disc = crate::quadrature::disc_rule(&w.center, &w.normal, w.radius, n_r, n_phi);
        let (ts, wt) = gauss_legendre_on(n_t, -w.half_length, w.half_length);
        let mut out = Vec::with_capacity(disc.len() * ts.len());
        for (t, wt) in ts.iter().zip(&wt) {
            for (p, wd) in disc.points.iter().zip(&disc.weights) {
                out.push((p + w.normal * *t, wt * wd));
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrequencySpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub omega: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub f_hz: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnclosureSpec {
    pub r: f64,
    /// Width of the cutoff transition; defaults to `r/4`.
    #[serde(default)]
    pub w: Option<f64>,
    /// Transmitter anchor; defaults to the transmitter centroid.
    #[serde(default)]
    pub origin: Option<[f64; 3]>,
    /// Receiver anchor; defaults to the receiver centroid.
    #[serde(default)]
    pub e: Option<[f64; 3]>,
}

/// Discretisation and solver parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverSettings {
    /// Target number of collocation cells per region.
    pub points_per_region: usize,
    /// Annulus rule `(radial, polar, azimuthal)` nodes.
    pub annulus: [usize; 3],
    /// Shell rule `(polar, azimuthal)` nodes.
    pub angular: [usize; 2],
    /// Wire-disc rule `(radial, azimuthal)` nodes.
    pub disc: [usize; 2],
    /// Spectral regularisation `η ≥ 0`.
    pub eta: f64,
    /// Highest Born order.
    pub born_order: usize,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self { points_per_region: 64, annulus: [4, 8, 16], angular: [16, 32], disc: [8, 16], eta: 0.0, born_order: 8 }
    }
}

/// The JSON scene document (`"schema": 1`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneDoc {
    pub schema: u32,
    pub regions: Vec<RegionSpec>,
    pub enclosure: EnclosureSpec,
    #[serde(default)]
    pub frequency: Option<FrequencySpec>,
    #[serde(default)]
    pub solver: SolverSettings,
}

/// Validated scene with derived layout quantities.
#[derive(Debug, Clone)]
pub struct Scene {
    pub regions: Vec<Region>,
    pub origin: V3,
    pub e: V3,
    pub r: f64,
    pub w: f64,
    pub frequency: Option<Frequency>,
    pub solver: SolverSettings,
    /// Minimum gap between transmitter and receiver supports.
    pub d_tr: f64,
    /// Minimum gap between antenna and scatterer supports (`∞` without scatterers).
    pub d_m: f64,
    /// Largest extent of the transmitter supports about `origin`.
    pub rho_in_t: f64,
    /// Largest extent of the receiver supports about `e`.
    pub rho_in_r: f64,
    pub warnings: Vec<String>,
}

fn v3(a: [f64; 3]) -> V3 {
    V3::new(a[0], a[1], a[2])
}

impl SceneDoc {
    pub fn from_json(text: &str) -> Result<Self, SceneError> {
        Ok(serde_json::from_str(text)?)
    }
}

impl Scene {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, SceneError> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text)
    }

    pub fn from_json(text: &str) -> Result<Self, SceneError> {
        Self::from_doc(SceneDoc::from_json(text)?)
    }

    pub fn from_doc(doc: SceneDoc) -> Result<Self, SceneError> {
        if doc.schema != 1 {
            return Err(SceneError::Schema(doc.schema));
        }
        let mut regions = Vec::new();
        for spec in doc.regions {
            regions.push(validate_region(spec)?);
        }
        let frequency = match &doc.frequency {
            None => None,
            Some(FrequencySpec { omega: Some(w), f_hz: None }) => Some(Frequency::from_omega(*w, doc.solver.eta)?),
            Some(FrequencySpec { omega: None, f_hz: Some(f) }) => Some(Frequency::from_hz(*f, doc.solver.eta)?),
            Some(_) => return Err(SceneError::Frequency("give exactly one of omega and f_hz".into())),
        };
        let centroid = |role: Role| -> Option<V3> {
            let c: Vec<V3> = regions.iter().filter(|r| r.role == role).map(|r| r.center).collect();
            (!c.is_empty()).then(|| c.iter().sum::<V3>() / c.len() as f64)
        };
        let (Some(ct), Some(cr)) = (centroid(Role::Transmitter), centroid(Role::Receiver)) else {
            return Err(SceneError::MissingAntennas);
        };
        let origin = doc.enclosure.origin.map(v3).unwrap_or(ct);
        let e = doc.enclosure.e.map(v3).unwrap_or(cr);
        let r = doc.enclosure.r;
        let w = doc.enclosure.w.unwrap_or(r / 4.0);
        if !(r > 0.0 && w > 0.0 && w < r) {
            return Err(SceneError::Region { id: "enclosure".into(), reason: format!("need 0 < w < r, got r = {r}, w = {w}") });
        }
        let s = &doc.solver;
        if s.points_per_region == 0 || s.annulus.contains(&0) || s.angular.contains(&0) || s.disc.contains(&0) || !(s.eta >= 0.0) {
            return Err(SceneError::Region { id: "solver".into(), reason: "quadrature counts must be positive and eta non-negative".into() });
        }
        Self::assemble(regions, origin, e, r, w, frequency, doc.solver)
    }

    /// Builds and validates a scene from already constructed regions.
    pub fn assemble(regions: Vec<Region>, origin: V3, e: V3, r: f64, w: f64, frequency: Option<Frequency>, solver: SolverSettings) -> Result<Self, SceneError> {
        for (i, a) in regions.iter().enumerate() {
            for b in &regions[i + 1..] {
                if (a.center - b.center).norm() <= a.radius() + b.radius() {
                    return Err(SceneError::Overlap { a: a.id.clone(), b: b.id.clone() });
                }
            }
        }
        let gap = |a: &Region, b: &Region| (a.center - b.center).norm() - a.radius() - b.radius();
        let of = |role: Role| regions.iter().filter(move |r| r.role == role);
        if of(Role::Transmitter).count() == 0 || of(Role::Receiver).count() == 0 {
            return Err(SceneError::MissingAntennas);
        }
        let mut d_tr = f64::INFINITY;
        for a in of(Role::Transmitter) {
            for b in of(Role::Receiver) {
                d_tr = d_tr.min(gap(a, b));
            }
        }
        let mut d_m = f64::INFINITY;
        for a in regions.iter().filter(|r| r.role != Role::Scatterer) {
            for b in of(Role::Scatterer) {
                d_m = d_m.min(gap(a, b));
            }
        }
        if r > d_tr / 2.0 {
            return Err(SceneError::EnclosureTooLarge { r, limit: d_tr / 2.0, which: "D_TR/2".into() });
        }
        if r > d_m / 2.0 {
            return Err(SceneError::EnclosureTooLarge { r, limit: d_m / 2.0, which: "D_M/2".into() });
        }
        if (e - origin).norm() <= 2.0 * r {
            return Err(SceneError::AnnuliOverlap);
        }
        let extent = |role: Role, anchor: &V3| of(role).map(|g| (g.center - anchor).norm() + g.radius()).fold(0.0, f64::max);
        let rho_in_t = extent(Role::Transmitter, &origin);
        let rho_in_r = extent(Role::Receiver, &e);
        for (role, anchor, rho) in [(Role::Transmitter, origin, rho_in_t), (Role::Receiver, e, rho_in_r)] {
            if rho >= r - w {
                let id = of(role).find(|g| (g.center - anchor).norm() + g.radius() >= r - w).map(|g| g.id.clone()).unwrap_or_default();
                return Err(SceneError::NotEnclosed { id, inner: r - w });
            }
        }
        for g in &regions {
            for (anchor, side) in [(origin, "transmitter"), (e, "receiver")] {
                let dist = (g.center - anchor).norm();
                if dist - g.radius() <= r && dist + g.radius() >= r - w {
                    return Err(SceneError::AnnulusHit { id: g.id.clone(), side: side.into() });
                }
            }
        }
        if let Some(f) = &frequency {
            for g in &regions {
                g.check_material(f)?;
            }
        }
        let mut warnings = Vec::new();
        if d_m.is_finite() && d_m < 10.0 * r {
            warnings.push(format!("D_M = {d_m:.3} < 10 r = {:.3}: far-field assumption weak", 10.0 * r));
        }
        if d_tr < 10.0 * r {
            warnings.push(format!("D_TR = {d_tr:.3} < 10 r = {:.3}: far-field assumption weak", 10.0 * r));
        }
        for wmsg in &warnings {
            log::warn!("{wmsg}");
        }
        Ok(Self { regions, origin, e, r, w, frequency, solver, d_tr, d_m, rho_in_t, rho_in_r, warnings })
    }

    /// Re-validates after a geometry change (keeps anchors, shell and settings).
    pub fn rebuild(&self, regions: Vec<Region>) -> Result<Self, SceneError> {
        Self::assemble(regions, self.origin, self.e, self.r, self.w, self.frequency, self.solver.clone())
    }

    pub fn indices(&self, role: Role) -> Vec<usize> {
        (0..self.regions.len()).filter(|&i| self.regions[i].role == role).collect()
    }

    pub fn transmitters(&self) -> Vec<usize> {
        self.indices(Role::Transmitter)
    }

    pub fn receivers(&self) -> Vec<usize> {
        self.indices(Role::Receiver)
    }

    pub fn scatterers(&self) -> Vec<usize> {
        self.indices(Role::Scatterer)
    }

    /// Index of the region whose support contains `x`.
    pub fn region_at(&self, x: &V3) -> Option<usize> {
        self.regions.iter().position(|r| r.contains(x))
    }

    /// Relative permittivity and conductivity at `x` (free space outside).
    pub fn material_at(&self, x: &V3) -> (f64, f64) {
        match self.region_at(x) {
            Some(i) => (self.regions[i].eps_r(x), self.regions[i].sigma(x)),
            None => (1.0, 0.0),
        }
    }

    /// The frequency given in the document, or an error if there is none.
    pub fn frequency(&self) -> Result<Frequency, SceneError> {
        self.frequency.ok_or_else(|| SceneError::Frequency("scene has no frequency block".into()))
    }

    /// A copy with every antenna support, wire radius and current length
    /// scaled by `s` about the region centre (positions and shells fixed).
    pub fn with_antennas_scaled(&self, s: f64) -> Result<Self, SceneError> {
        let regions = self
            .regions
            .iter()
            .map(|g| {
                let mut g = g.clone();
                if g.role != Role::Scatterer {
                    g.profile.radius *= s;
                    if let Some(w) = g.wire.as_mut() {
                        w.center = g.center + (w.center - g.center) * s;
                        w.radius *= s;
                        w.half_length *= s;
                    }
                }
                g
            })
            .collect();
        self.rebuild(regions)
    }

    /// A copy without scatterers.
    pub fn without_scatterers(&self) -> Result<Self, SceneError> {
        self.rebuild(self.regions.iter().filter(|g| g.role != Role::Scatterer).cloned().collect())
    }

    /// A copy with scatterer centres moved by `f(centre)`.
    pub fn with_scatterers_moved(&self, f: impl Fn(&V3) -> V3) -> Result<Self, SceneError> {
        self.rebuild(
            self.regions
                .iter()
                .map(|g| {
                    let mut g = g.clone();
                    if g.role == Role::Scatterer {
                        g.center = f(&g.center);
                    }
                    g
                })
                .collect(),
        )
    }

    /// A copy with every conductivity set to zero.
    pub fn lossless(&self) -> Result<Self, SceneError> {
        self.rebuild(
            self.regions
                .iter()
                .map(|g| {
                    let mut g = g.clone();
                    g.profile.sigma = 0.0;
                    g
                })
                .collect(),
        )
    }

    /// Serialises back into a document.
    pub fn to_doc(&self) -> SceneDoc {
        let arr = |v: V3| [v.x, v.y, v.z];
        SceneDoc {
            schema: 1,
            regions: self
                .regions
                .iter()
                .map(|g| RegionSpec {
                    id: g.id.clone(),
                    role: g.role,
                    center: arr(g.center),
                    profile: g.profile,
                    wire: g.wire.map(|w| WireSection { center: Some(arr(w.center)), normal: arr(w.normal), radius: w.radius, half_length: Some(w.half_length) }),
                })
                .collect(),
            enclosure: EnclosureSpec { r: self.r, w: Some(self.w), origin: Some(arr(self.origin)), e: Some(arr(self.e)) },
            frequency: self.frequency.map(|f| FrequencySpec { omega: None, f_hz: Some(tidy_hz(f.hz())) }),
            solver: self.solver.clone(),
        }
    }
}

fn validate_region(spec: RegionSpec) -> Result<Region, SceneError> {
    let bad = |reason: String| SceneError::Region { id: spec.id.clone(), reason };
    let p = spec.profile;
    if !(p.radius > 0.0) || !p.radius.is_finite() {
        return Err(bad(format!("support radius must be positive, got {}", p.radius)));
    }
    if !(p.delta_eps > -1.0) {
        return Err(bad(format!("relative permittivity must stay positive (delta_eps = {})", p.delta_eps)));
    }
    if !(p.sigma >= 0.0) {
        return Err(bad(format!("conductivity must be non-negative, got {}", p.sigma)));
    }
    let center = v3(spec.center);
    let wire = match (spec.role, spec.wire) {
        (Role::Scatterer, Some(_)) => return Err(bad("scatterers carry no wire section".into())),
        (Role::Scatterer, None) => None,
        (_, None) => return Err(bad("antennas need a wire section".into())),
        (_, Some(ws)) => {
            let n = v3(ws.normal);
            if !(n.norm() > 0.0) {
                return Err(bad("wire normal must be non-zero".into()));
            }
            if !(ws.radius > 0.0) {
                return Err(bad("wire radius must be positive".into()));
            }
            let half_length = ws.half_length.unwrap_or(2.0 * ws.radius);
            if !(half_length > 0.0) {
                return Err(bad("wire half length must be positive".into()));
            }
            let wc = ws.center.map(v3).unwrap_or(center);
            if (wc - center).norm() + (ws.radius.powi(2) + half_length.powi(2)).sqrt() >= p.radius {
                return Err(bad("wire section is not inside the support".into()));
            }
            Some(Wire { center: wc, normal: n.normalize(), radius: ws.radius, half_length })
        }
    };
    Ok(Region { id: spec.id, role: spec.role, center, profile: p, wire })
}

/// Snaps a frequency that is a whole number of Hz up to rounding in `ω/2π`.
pub fn tidy_hz(hz: f64) -> f64 {
    let r = hz.round();
    if (hz - r).abs() <= 1e-12 * hz.abs().max(1.0) {
        r
    } else {
        hz
    }
}

/// Flux of the impressed current through the wire disc.
pub fn source_flux(region: &Region, n_r: usize, n_phi: usize) -> f64 {
    let Some(w) = region.wire else { return 0.0 };
    let disc = crate::quadrature::disc_rule(&w.center, &w.normal, w.radius * (1.0 - 1e-12), n_r, n_phi);
    disc.points.iter().zip(&disc.weights).map(|(p, wt)| wt * region.source_density(p).dot(&w.normal)).sum()
}

/// Helper for constructing regions in code.
pub fn antenna(id: &str, role: Role, center: V3, profile: Profile, normal: V3, wire_radius: f64, half_length: f64) -> Region {
    Region { id: id.into(), role, center, profile, wire: Some(Wire { center, normal: normal.normalize(), radius: wire_radius, half_length }) }
}

pub fn scatterer(id: &str, center: V3, profile: Profile) -> Region {
    Region { id: id.into(), role: Role::Scatterer, center, profile, wire: None }
}

/// Built-in scenes used by the checks, the examples and the benches.
pub mod presets {
    use super::*;

    fn antenna_profile() -> Profile {
        Profile { radius: 0.2, delta_eps: 3.0, sigma: 0.05 }
    }

    fn pair(prefix: &str, role: Role, anchor: V3, n: usize) -> Vec<Region> {
        let offsets: Vec<V3> = match n {
            1 => vec![V3::zeros()],
            _ => (0..n).map(|i| V3::new(0.0, 0.35 * (2.0 * i as f64 - (n - 1) as f64), 0.0)).collect(),
        };
        offsets.iter().enumerate().map(|(i, o)| antenna(&format!("{prefix}{i}"), role, anchor + o, antenna_profile(), V3::z(), 0.06, 0.1)).collect()
    }

    /// Two transmitters, two receivers 6 m apart and two dielectric
    /// scatterers off the axis; 100 MHz.
    pub fn desk() -> Scene {
        let e = V3::new(6.0, 0.0, 0.0);
        let mut regions = pair("tx", Role::Transmitter, V3::zeros(), 2);
        regions.extend(pair("rx", Role::Receiver, e, 2));
        regions.push(scatterer("wall0", V3::new(3.0, 3.2, 0.0), Profile { radius: 0.35, delta_eps: 4.0, sigma: 0.0 }));
        regions.push(scatterer("wall1", V3::new(3.0, 4.0, 0.3), Profile { radius: 0.35, delta_eps: 4.0, sigma: 0.0 }));
        let f = Frequency::from_hz(1.0e8, 0.0).ok();
        Scene::assemble(regions, V3::zeros(), e, 1.0, 0.25, f, SolverSettings::default()).expect("preset is valid")
    }

    /// One transmitter, one receiver and one scatterer.
    pub fn single_link() -> Scene {
        let e = V3::new(6.0, 0.0, 0.0);
        let mut regions = pair("tx", Role::Transmitter, V3::zeros(), 1);
        regions.extend(pair("rx", Role::Receiver, e, 1));
        regions.push(scatterer("wall0", V3::new(3.0, 3.0, 0.0), Profile { radius: 0.35, delta_eps: 4.0, sigma: 0.0 }));
        let f = Frequency::from_hz(1.0e8, 0.0).ok();
        Scene::assemble(regions, V3::zeros(), e, 1.0, 0.25, f, SolverSettings::default()).expect("preset is valid")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "schema": 1,
        "regions": [
            {"id": "t", "role": "transmitter", "center": [0,0,0],
             "profile": {"radius": 0.2, "delta_eps": 1.0, "sigma": 0.1},
             "wire": {"normal": [0,0,1], "radius": 0.05}},
            {"id": "r", "role": "receiver", "center": [10,0,0],
             "profile": {"radius": 0.2, "delta_eps": 1.0, "sigma": 0.1},
             "wire": {"normal": [0,0,1], "radius": 0.05}}
        ],
        "enclosure": {"r": 1.0},
        "frequency": {"f_hz": 1e8}
    }"#;

    #[test]
    fn minimal_document_layout() {
        let s = Scene::from_json(MINIMAL).unwrap();
        assert!((s.d_tr - 9.6).abs() < 1e-12);
        assert!(s.d_m.is_infinite());
        assert_eq!(s.w, 0.25);
        assert_eq!(s.e, V3::new(10.0, 0.0, 0.0));
    }

    #[test]
    fn overlapping_supports_rejected() {
        let doc = MINIMAL.replace("[10,0,0]", "[0.3,0,0]");
        match Scene::from_json(&doc) {
            Err(SceneError::Overlap { a, b }) => assert_eq!((a.as_str(), b.as_str()), ("t", "r")),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn oversized_enclosure_rejected() {
        let doc = MINIMAL.replace("\"r\": 1.0", "\"r\": 6.0");
        assert!(matches!(Scene::from_json(&doc), Err(SceneError::EnclosureTooLarge { .. })));
    }

    #[test]
    fn schema_and_frequency_checked() {
        assert!(matches!(Scene::from_json(&MINIMAL.replace("\"schema\": 1", "\"schema\": 2")), Err(SceneError::Schema(2))));
        assert!(matches!(Scene::from_json(&MINIMAL.replace("1e8", "0")), Err(SceneError::Frequency(_))));
    }

    #[test]
    fn frequency_conversions() {
        let f = Frequency::from_hz(1e8, 0.0).unwrap();
        assert!((f.k0() - 2.0 * PI * 1e8 / C0).abs() < 1e-15);
        assert!((f.kappa() - f.k0()).norm() == 0.0);
        let g = Frequency::from_hz(1e8, 0.5).unwrap();
        assert!((g.kappa() * g.kappa() - g.z()).norm() < 1e-14 && g.kappa().im > 0.0);
        let n = g.negated();
        assert!((n.kappa() + g.kappa().conj()).norm() < 1e-15);
        assert!((n.z() - g.z().conj()).norm() < 1e-15);
    }

    #[test]
    fn coefficients_match_finite_differences() {
        let s = Scene::from_json(MINIMAL).unwrap();
        let f = s.frequency().unwrap();
        let g = &s.regions[0];
        let x = V3::new(0.05, -0.03, 0.08);
        let h = 1e-6;
        let c = g.coefficients(&x, &f);
        let hl = g.hess_log(&x, &f);
        for i in 0..3 {
            let mut d = V3::zeros();
            d[i] = h;
            let fd = ((g.k2(&(x + d), &f)).ln() - (g.k2(&(x - d), &f)).ln()) / (2.0 * h);
            assert!((fd - c.grad_log[i]).norm() < 1e-6);
            let gp = g.coefficients(&(x + d), &f).grad_log;
            let gm = g.coefficients(&(x - d), &f).grad_log;
            for k in 0..3 {
                assert!(((gp[k] - gm[k]) / (2.0 * h) - hl[(k, i)]).norm() < 1e-5);
            }
        }
        let expect = C64::new(f.k0().powi(2), -MU0 * f.omega * 0.1);
        assert!((g.contrast(&f) - expect).norm() < 1e-12);
        let _ = J;
    }

    #[test]
    fn free_space_has_no_perturbation() {
        let s = Scene::from_json(MINIMAL).unwrap();
        let f = s.frequency().unwrap();
        let c = s.regions[0].coefficients(&V3::new(3.0, 0.0, 0.0), &f);
        assert_eq!(c.delta_k2, C64::new(0.0, 0.0));
        assert_eq!(s.material_at(&V3::new(3.0, 0.0, 0.0)), (1.0, 0.0));
    }

    #[test]
    fn source_flux_is_unity() {
        let s = Scene::from_json(MINIMAL).unwrap();
        assert!((source_flux(&s.regions[0], 8, 16) - 1.0).abs() < 1e-10);
    }

    #[test]
    fn presets_are_valid() {
        let s = presets::desk();
        assert_eq!(s.transmitters().len(), 2);
        assert_eq!(s.scatterers().len(), 2);
        assert!(s.d_m >= 2.0 * s.r);
        presets::single_link();
    }

    #[test]
    fn document_roundtrip() {
        let s = presets::desk();
        let text = serde_json::to_string(&s.to_doc()).unwrap();
        let t = Scene::from_json(&text).unwrap();
        assert_eq!(s.regions, t.regions);
        assert_eq!(s.frequency, t.frequency);
    }

    #[test]
    fn tangent_frame_is_orthonormal() {
        let n = V3::new(0.2, -0.5, 0.9).normalize();
        let (a, b) = tangent_frame(&n);
        assert!(a.dot(&n).abs() < 1e-15 && b.dot(&n).abs() < 1e-15 && a.dot(&b).abs() < 1e-15);
        assert!((a.cross(&b) - n).norm() < 1e-15);
    }
}
