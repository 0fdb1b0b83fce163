//! Physical data types shared by every stage of the pipeline.
//!
//! Units are SI throughout: angular frequencies in rad/s, lengths in m, the
//! pump field in V/m and the second-order susceptibility in m/V. Modal fields
//! are carried in whatever normalized units the exporting solver used; they
//! are treated as opaque but consistent.

use std::f64::consts::PI;
use std::fmt;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type C64 = Complex64;

/// Complex 3-vector of field components (x, y, z).
pub type Vec3c = [C64; 3];

/// Speed of light in vacuum (m/s).
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Vacuum magnetic permeability (N/A^2), CODATA 2018.
pub const MU_0: f64 = 1.256_637_062_12e-6;

pub fn wavelength_to_omega(wavelength: f64) -> f64 {
    2.0 * PI * SPEED_OF_LIGHT / wavelength
}

pub fn omega_to_wavelength(omega: f64) -> f64 {
    2.0 * PI * SPEED_OF_LIGHT / omega
}

/// Eigenvalue `omega - i*gamma` of a quasi-normal mode.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComplexFrequency {
    pub omega: f64,
    pub gamma: f64,
}

impl ComplexFrequency {
    pub const fn new(omega: f64, gamma: f64) -> Self {
        Self { omega, gamma }
    }

    /// Build from a complex value `omega - i*gamma`.
    pub fn from_complex(z: C64) -> Self {
        Self {
            omega: z.re,
            gamma: -z.im,
        }
    }

    pub fn value(&self) -> C64 {
        C64::new(self.omega, -self.gamma)
    }

    pub fn q_factor(&self) -> Result<f64> {
        q_factor(*self)
    }
}

/// Quality factor `omega / (2 gamma)`.
pub fn q_factor(ef: ComplexFrequency) -> Result<f64> {
    if !(ef.gamma > 0.0) || !ef.gamma.is_finite() {
        return Err(Error::domain(format!(
            "quality factor needs a positive leakage rate, got gamma = {}",
            ef.gamma
        )));
    }
    if !ef.omega.is_finite() || ef.omega <= 0.0 {
        return Err(Error::domain(format!(
            "quality factor needs a positive resonance frequency, got omega = {}",
            ef.omega
        )));
    }
    Ok(ef.omega / (2.0 * ef.gamma))
}

/// Regular Cartesian grid. `origin` is the position of node (0, 0, 0); each
/// node is the center of a cell of size `spacing`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridGeometry {
    pub origin: [f64; 3],
    pub spacing: [f64; 3],
    pub shape: [usize; 3],
}

impl GridGeometry {
    pub fn node_count(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn cell_volume(&self) -> f64 {
        self.spacing.iter().product()
    }

    /// Flat index, row-major with z fastest.
    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        (i * self.shape[1] + j) * self.shape[2] + k
    }

    #[inline]
    pub fn position(&self, i: usize, j: usize, k: usize) -> [f64; 3] {
        [
            self.origin[0] + i as f64 * self.spacing[0],
            self.origin[1] + j as f64 * self.spacing[1],
            self.origin[2] + k as f64 * self.spacing[2],
        ]
    }

    /// Position of the node with the given flat index.
    pub fn position_of(&self, flat: usize) -> [f64; 3] {
        let k = flat % self.shape[2];
        let j = (flat / self.shape[2]) % self.shape[1];
        let i = flat / (self.shape[1] * self.shape[2]);
        self.position(i, j, k)
    }

    fn check(&self) -> std::result::Result<(), String> {
        if self.shape.iter().any(|&n| n == 0) {
            return Err(format!("grid shape {:?} has a zero extent", self.shape));
        }
        if self.spacing.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(format!("grid spacing {:?} is not positive", self.spacing));
        }
        if self.origin.iter().any(|o| !o.is_finite()) {
            return Err(format!("grid origin {:?} is not finite", self.origin));
        }
        Ok(())
    }
}

/// Complex vector field sampled on a [`GridGeometry`].
#[derive(Clone, Debug, PartialEq)]
pub struct NearFieldGrid {
    pub geometry: GridGeometry,
    pub values: Vec<Vec3c>,
}

impl NearFieldGrid {
    pub fn new(geometry: GridGeometry, values: Vec<Vec3c>) -> Result<Self> {
        if values.len() != geometry.node_count() {
            return Err(Error::GridMismatch(format!(
                "{} values for a grid of {} nodes",
                values.len(),
                geometry.node_count()
            )));
        }
        Ok(Self { geometry, values })
    }

    /// Sample `f(position)` at every node.
    pub fn from_fn(geometry: GridGeometry, mut f: impl FnMut([f64; 3]) -> Vec3c) -> Self {
        let values = (0..geometry.node_count())
            .map(|n| f(geometry.position_of(n)))
            .collect();
        Self { geometry, values }
    }

    pub fn scaled(&self, factor: C64) -> Self {
        Self {
            geometry: self.geometry,
            values: self
                .values
                .iter()
                .map(|v| [v[0] * factor, v[1] * factor, v[2] * factor])
                .collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.values
            .iter()
            .flatten()
            .all(|z| z.re.is_finite() && z.im.is_finite())
    }
}

/// Radius-removed far-field amplitude `F = lim r e^{-ikr} E(r)` on a regular
/// (theta, phi) grid, expressed in the (theta-hat, phi-hat) basis.
///
/// Arrays are theta-major: entry `it * phi.len() + ip`. The phi axis is
/// treated as periodic with period 2 pi.
#[derive(Clone, Debug, PartialEq)]
pub struct FarFieldAmplitude {
    pub theta: Vec<f64>,
    pub phi: Vec<f64>,
    pub amp_theta: Vec<C64>,
    pub amp_phi: Vec<C64>,
}

impl FarFieldAmplitude {
    pub fn new(
        theta: Vec<f64>,
        phi: Vec<f64>,
        amp_theta: Vec<C64>,
        amp_phi: Vec<C64>,
    ) -> Result<Self> {
        let ff = Self {
            theta,
            phi,
            amp_theta,
            amp_phi,
        };
        ff.check().map_err(Error::domain)?;
        Ok(ff)
    }

    /// Sample `f(theta, phi) -> [F_theta, F_phi]` on the given axes.
    pub fn from_fn(
        theta: Vec<f64>,
        phi: Vec<f64>,
        mut f: impl FnMut(f64, f64) -> [C64; 2],
    ) -> Self {
        let mut amp_theta = Vec::with_capacity(theta.len() * phi.len());
        let mut amp_phi = Vec::with_capacity(theta.len() * phi.len());
        for &t in &theta {
            for &p in &phi {
                let [a, b] = f(t, p);
                amp_theta.push(a);
                amp_phi.push(b);
            }
        }
        Self {
            theta,
            phi,
            amp_theta,
            amp_phi,
        }
    }

    pub fn theta_coverage(&self) -> (f64, f64) {
        (self.theta[0], *self.theta.last().unwrap())
    }

    fn check(&self) -> std::result::Result<(), String> {
        let (nt, np) = (self.theta.len(), self.phi.len());
        if nt == 0 || np == 0 {
            return Err("far-field grid is empty".into());
        }
        if self.amp_theta.len() != nt * np || self.amp_phi.len() != nt * np {
            return Err(format!(
                "far-field arrays hold {}/{} values for a {}x{} grid",
                self.amp_theta.len(),
                self.amp_phi.len(),
                nt,
                np
            ));
        }
        if !strictly_increasing(&self.theta) || !strictly_increasing(&self.phi) {
            return Err("far-field angle grids must be strictly increasing".into());
        }
        if self.theta[0] < 0.0 || self.theta[nt - 1] > PI {
            return Err("theta nodes must lie in [0, pi]".into());
        }
        if self.phi[0] < 0.0 || self.phi[np - 1] >= 2.0 * PI {
            return Err("phi nodes must lie in [0, 2 pi)".into());
        }
        if self
            .amp_theta
            .iter()
            .chain(&self.amp_phi)
            .any(|z| !(z.re.is_finite() && z.im.is_finite()))
        {
            return Err("far-field amplitude has non-finite values".into());
        }
        Ok(())
    }

    /// Piecewise-cubic Hermite interpolation of `[F_theta, F_phi]` at
    /// `(theta, phi)`. Node derivatives come from the three-point parabola
    /// (one-sided at the theta ends), so the interpolant is C1 and exact for
    /// quadratics. Phi wraps periodically.
    pub fn sample(&self, theta: f64, phi: f64) -> Result<[C64; 2]> {
        let (t0, t1) = self.theta_coverage();
        let slack = 1e-12 * (1.0 + t1.abs());
        if !(theta >= t0 - slack && theta <= t1 + slack) {
            return Err(Error::OutsideCoverage { theta, phi });
        }
        let np = self.phi.len();
        let wt = Axis {
            nodes: &self.theta,
            periodic: false,
        }
        .stencil(theta.clamp(t0, t1));
        let wp = Axis {
            nodes: &self.phi,
            periodic: true,
        }
        .stencil(phi.rem_euclid(2.0 * PI));
        let interp = |arr: &[C64]| {
            let mut acc = C64::new(0.0, 0.0);
            for &(it, a) in &wt {
                for &(ip, b) in &wp {
                    acc += arr[it * np + ip] * (a * b);
                }
            }
            acc
        };
        Ok([interp(&self.amp_theta), interp(&self.amp_phi)])
    }

    pub fn scaled(&self, factor: C64) -> Self {
        Self {
            theta: self.theta.clone(),
            phi: self.phi.clone(),
            amp_theta: self.amp_theta.iter().map(|z| z * factor).collect(),
            amp_phi: self.amp_phi.iter().map(|z| z * factor).collect(),
        }
    }
}

fn strictly_increasing(xs: &[f64]) -> bool {
    xs.iter().all(|x| x.is_finite()) && xs.windows(2).all(|w| w[0] < w[1])
}

/// One interpolation axis; a periodic axis has period 2 pi.
struct Axis<'a> {
    nodes: &'a [f64],
    periodic: bool,
}

impl Axis<'_> {
    fn len(&self) -> isize {
        self.nodes.len() as isize
    }

    fn pos(&self, k: isize) -> f64 {
        let n = self.len();
        self.nodes[k.rem_euclid(n) as usize] + 2.0 * PI * k.div_euclid(n) as f64
    }

    fn idx(&self, k: isize) -> usize {
        k.rem_euclid(self.len()) as usize
    }

    /// Weights of the derivative estimate at node `k`.
    fn derivative(&self, k: isize) -> [(isize, f64); 3] {
        let n = self.len();
        if !self.periodic && n == 2 {
            let s = 1.0 / (self.pos(1) - self.pos(0));
            return [(0, -s), (1, s), (1, 0.0)];
        }
        if !self.periodic && k == 0 {
            let (h1, h2) = (self.pos(1) - self.pos(0), self.pos(2) - self.pos(1));
            return [
                (0, -(2.0 * h1 + h2) / (h1 * (h1 + h2))),
                (1, (h1 + h2) / (h1 * h2)),
                (2, -h1 / (h2 * (h1 + h2))),
            ];
        }
        if !self.periodic && k == n - 1 {
            let (ha, hb) = (
                self.pos(n - 2) - self.pos(n - 3),
                self.pos(n - 1) - self.pos(n - 2),
            );
            return [
                (n - 3, hb / (ha * (ha + hb))),
                (n - 2, -(ha + hb) / (ha * hb)),
                (n - 1, (2.0 * hb + ha) / (hb * (ha + hb))),
            ];
        }
        let (h0, h1) = (self.pos(k) - self.pos(k - 1), self.pos(k + 1) - self.pos(k));
        [
            (k - 1, -h1 / (h0 * (h0 + h1))),
            (k, (h1 - h0) / (h0 * h1)),
            (k + 1, h0 / (h1 * (h0 + h1))),
        ]
    }

    /// Node indices and weights whose combination interpolates at `x`.
    fn stencil(&self, x: f64) -> Vec<(usize, f64)> {
        let n = self.len();
        if n == 1 {
            return vec![(0, 1.0)];
        }
        let i = if self.periodic {
            // interval [pos(i), pos(i + 1)] containing x, possibly the wrap one
            let p = self.nodes.partition_point(|&v| v <= x) as isize;
            p - 1
        } else {
            match self.nodes.partition_point(|&v| v <= x) as isize {
                0 => 0,
                p => (p - 1).min(n - 2),
            }
        };
        let (xa, xb) = (self.pos(i), self.pos(i + 1));
        let h = xb - xa;
        let t = ((x - xa) / h).clamp(0.0, 1.0);
        let (t2, t3) = (t * t, t * t * t);
        let h00 = 2.0 * t3 - 3.0 * t2 + 1.0;
        let h10 = t3 - 2.0 * t2 + t;
        let h01 = -2.0 * t3 + 3.0 * t2;
        let h11 = t3 - t2;
        let mut out = vec![(self.idx(i), h00), (self.idx(i + 1), h01)];
        for (k, w) in self.derivative(i) {
            out.push((self.idx(k), h * h10 * w));
        }
        for (k, w) in self.derivative(i + 1) {
            out.push((self.idx(k), h * h11 * w));
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct QnmMode {
    pub label: String,
    pub eigenfrequency: ComplexFrequency,
    pub near_field: NearFieldGrid,
    pub far_field: FarFieldAmplitude,
}

/// Second-order susceptibility tensor `chi[a][b][c]` (m/V), stored flat as
/// `a * 9 + b * 3 + c`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Chi2Tensor(pub [f64; 27]);

impl Chi2Tensor {
    pub fn zero() -> Self {
        Self([0.0; 27])
    }

    /// Tensor with only the `zzz` element set.
    pub fn zzz(value: f64) -> Self {
        let mut t = [0.0; 27];
        t[26] = value;
        Self(t)
    }

    #[inline]
    pub fn get(&self, a: usize, b: usize, c: usize) -> f64 {
        self.0[a * 9 + b * 3 + c]
    }

    pub fn set(&mut self, a: usize, b: usize, c: usize, value: f64) {
        self.0[a * 9 + b * 3 + c] = value;
    }

    /// True when `chi[a][b][c] == chi[b][a][c]` for every index triple.
    pub fn is_first_pair_symmetric(&self) -> bool {
        (0..3).all(|a| (0..3).all(|b| (0..3).all(|c| self.get(a, b, c) == self.get(b, a, c))))
    }
}

/// Piecewise-constant susceptibility: `mask[node] == 0` is linear material,
/// `mask[node] == r` selects `regions[r - 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Chi2Map {
    pub geometry: GridGeometry,
    pub regions: Vec<Chi2Tensor>,
    pub mask: Vec<u32>,
}

impl Chi2Map {
    /// A single region covering every node.
    pub fn uniform(geometry: GridGeometry, tensor: Chi2Tensor) -> Self {
        Self {
            geometry,
            regions: vec![tensor],
            mask: vec![1; geometry.node_count()],
        }
    }

    pub fn tensor_at(&self, node: usize) -> Option<&Chi2Tensor> {
        match self.mask[node] {
            0 => None,
            r => self.regions.get(r as usize - 1),
        }
    }

    pub fn active_nodes(&self) -> usize {
        self.mask.iter().filter(|&&m| m != 0).count()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Scenario {
    pub pump_omega: f64,
    pub pump_field: NearFieldGrid,
    /// Pump intensity (W/m^2); metadata only.
    pub pump_intensity: f64,
    pub modes: Vec<QnmMode>,
    pub chi2: Chi2Map,
    pub n_idler: f64,
    pub n_signal: f64,
    /// Resonator volume (m^3).
    pub volume: f64,
}

impl Scenario {
    pub fn omega_deg(&self) -> f64 {
        self.pump_omega / 2.0
    }

    pub fn mode_index(&self, label: &str) -> Option<usize> {
        self.modes.iter().position(|m| m.label == label)
    }

    /// Fails with [`Error::InvalidScenario`] unless the validation report is clean.
    pub fn ensure_valid(&self) -> Result<()> {
        let report = validate_scenario(self);
        if report.is_clean() {
            Ok(())
        } else {
            Err(Error::InvalidScenario(report))
        }
    }

    /// Copy of the scenario with the pump field multiplied by `factor`.
    pub fn with_pump_scaled(&self, factor: C64) -> Self {
        Self {
            pump_field: self.pump_field.scaled(factor),
            ..self.clone()
        }
    }

    /// Copy restricted to the modes with the given labels (in that order).
    pub fn restricted_to(&self, labels: &[&str]) -> Result<Self> {
        let modes = labels
            .iter()
            .map(|l| {
                self.mode_index(l)
                    .map(|i| self.modes[i].clone())
                    .ok_or_else(|| Error::domain(format!("no mode labeled {l:?}")))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            modes,
            ..self.clone()
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ViolationKind {
    GridMismatch,
    NonPositiveLeakage,
    EmptyModeList,
    NonFinite,
    InvalidParameter,
    InvalidFarField,
    InvalidChi2,
    DuplicateLabel,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub kind: ViolationKind,
    pub message: String,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn has(&self, kind: ViolationKind) -> bool {
        self.violations.iter().any(|v| v.kind == kind)
    }

    fn push(&mut self, kind: ViolationKind, message: impl Into<String>) {
        self.violations.push(Violation {
            kind,
            message: message.into(),
        });
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.violations.is_empty() {
            return write!(f, "clean");
        }
        let msgs: Vec<&str> = self.violations.iter().map(|v| v.message.as_str()).collect();
        write!(f, "{}", msgs.join("; "))
    }
}

/// Collect every invariant breach of a scenario.
pub fn validate_scenario(s: &Scenario) -> ValidationReport {
    use ViolationKind::*;
    let mut r = ValidationReport::default();

    if !(s.pump_omega.is_finite() && s.pump_omega > 0.0) {
        r.push(
            InvalidParameter,
            format!("pump frequency {} is not positive", s.pump_omega),
        );
    }
    if !(s.n_idler >= 1.0 && s.n_idler.is_finite())
        || !(s.n_signal >= 1.0 && s.n_signal.is_finite())
    {
        r.push(
            InvalidParameter,
            format!(
                "refractive indices ({}, {}) must be >= 1",
                s.n_idler, s.n_signal
            ),
        );
    }
    if !(s.volume.is_finite() && s.volume > 0.0) {
        r.push(
            InvalidParameter,
            format!("resonator volume {} is not positive", s.volume),
        );
    }

    let pump_geo = s.pump_field.geometry;
    if let Err(e) = pump_geo.check() {
        r.push(InvalidParameter, format!("pump grid: {e}"));
    }
    if s.pump_field.values.len() != pump_geo.node_count() {
        r.push(
            GridMismatch,
            "grid mismatch: pump values do not fill the pump grid",
        );
    }
    if !s.pump_field.is_finite() {
        r.push(NonFinite, "pump field has non-finite values");
    }

    if s.modes.is_empty() {
        r.push(EmptyModeList, "empty mode list");
    }
    for (i, m) in s.modes.iter().enumerate() {
        if s.modes[..i].iter().any(|o| o.label == m.label) {
            r.push(
                DuplicateLabel,
                format!("duplicate mode label {:?}", m.label),
            );
        }
        let ef = m.eigenfrequency;
        if !(ef.gamma > 0.0) {
            r.push(
                NonPositiveLeakage,
                format!(
                    "mode {:?}: non-positive leakage rate (gamma = {})",
                    m.label, ef.gamma
                ),
            );
        }
        if !(ef.omega.is_finite() && ef.omega > 0.0 && ef.gamma.is_finite()) {
            r.push(
                NonFinite,
                format!("mode {:?}: invalid eigenfrequency {:?}", m.label, ef),
            );
        }
        if m.near_field.geometry != pump_geo {
            r.push(
                GridMismatch,
                format!("mode {:?}: grid mismatch with the pump grid", m.label),
            );
        } else if m.near_field.values.len() != pump_geo.node_count() {
            r.push(
                GridMismatch,
                format!("mode {:?}: grid mismatch (value count)", m.label),
            );
        }
        if !m.near_field.is_finite() {
            r.push(
                NonFinite,
                format!("mode {:?}: near field has non-finite values", m.label),
            );
        }
        if let Err(e) = m.far_field.check() {
            r.push(InvalidFarField, format!("mode {:?}: {e}", m.label));
        }
    }

    if s.chi2.geometry != pump_geo {
        r.push(
            GridMismatch,
            "grid mismatch: susceptibility map and pump grid differ",
        );
    } else if s.chi2.mask.len() != pump_geo.node_count() {
        r.push(GridMismatch, "grid mismatch: susceptibility mask length");
    }
    if s.chi2
        .mask
        .iter()
        .any(|&m| m as usize > s.chi2.regions.len())
    {
        r.push(
            InvalidChi2,
            "susceptibility mask references an undefined region",
        );
    }
    if s.chi2
        .regions
        .iter()
        .flat_map(|t| t.0.iter())
        .any(|v| !v.is_finite())
    {
        r.push(NonFinite, "susceptibility tensor has non-finite values");
    }
    r
}

/// Spectral window `[omega_min, omega_max]` with hard edges.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectralWindow {
    pub omega_min: f64,
    pub omega_max: f64,
}

impl SpectralWindow {
    pub fn from_wavelengths(lambda_a: f64, lambda_b: f64) -> Self {
        let (a, b) = (wavelength_to_omega(lambda_a), wavelength_to_omega(lambda_b));
        Self {
            omega_min: a.min(b),
            omega_max: a.max(b),
        }
    }

    pub fn contains(&self, omega: f64) -> bool {
        omega >= self.omega_min && omega <= self.omega_max
    }

    /// Signal band whose idler partner `omega_p - omega_s` also lies in the
    /// window; `None` when the two do not overlap.
    pub fn pair_window(&self, omega_p: f64) -> Option<SpectralWindow> {
        let lo = self.omega_min.max(omega_p - self.omega_max);
        let hi = self.omega_max.min(omega_p - self.omega_min);
        (lo < hi).then_some(SpectralWindow {
            omega_min: lo,
            omega_max: hi,
        })
    }

    /// Transmission factor for a signal at `omega_s` and its idler partner.
    pub fn pair_transmission(&self, omega_p: f64, omega_s: f64) -> f64 {
        if self.contains(omega_s) && self.contains(omega_p - omega_s) {
            1.0
        } else {
            0.0
        }
    }
}

/// Gaussian single-mode fiber profile, evaluated in the mapped fiber plane.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FiberMode {
    pub sigma: f64,
    #[serde(default)]
    pub offset: [f64; 2],
}

impl FiberMode {
    /// Amplitude profile `exp(-|r|^2 / sigma^2) / (sigma sqrt(pi))`.
    pub fn amplitude(&self, r: [f64; 2]) -> f64 {
        let rr = r[0] * r[0] + r[1] * r[1];
        (-rr / (self.sigma * self.sigma)).exp() / (self.sigma * PI.sqrt())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BlockedSide {
    /// Blocks mapped x-coordinates greater than the edge position.
    Above,
    /// Blocks mapped x-coordinates smaller than the edge position.
    Below,
}

/// Opaque edge cutting the collimated beam along the mapped x axis.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KnifeState {
    pub position: f64,
    pub blocks: BlockedSide,
}

impl KnifeState {
    pub fn passes(&self, x: f64) -> bool {
        match self.blocks {
            BlockedSide::Above => x <= self.position,
            BlockedSide::Below => x >= self.position,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case", tag = "mode")]
pub enum Polarization {
    /// Incoherent sum over both (theta-hat, phi-hat) components for each photon.
    #[default]
    SumOverBasis,
    /// Fixed detection polarizations, given as complex unit vectors in the
    /// (theta-hat, phi-hat) basis.
    Fixed { idler: [C64; 2], signal: [C64; 2] },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectionConfig {
    pub na: f64,
    pub focal_length: f64,
    pub magnification: f64,
    pub fiber: Option<FiberMode>,
    pub filter: Option<SpectralWindow>,
    pub knife: Option<KnifeState>,
    #[serde(default)]
    pub polarization: Polarization,
}

/// Objective numerical aperture of the collection lens.
pub const DEFAULT_NA: f64 = 0.7;
/// Collection lens focal length (m).
pub const DEFAULT_FOCAL_LENGTH: f64 = 3.1e-3;
/// Fiber mode radius back-projected into the collimated plane (m). The
/// fiber and coupling lens are not fully specified, so this is a tunable
/// default rather than a derived value.
pub const DEFAULT_FIBER_SIGMA: f64 = 1.0e-3;
/// Broadband collection window (m).
pub const BROADBAND_WINDOW: (f64, f64) = (1340e-9, 1580e-9);
/// Continuous-wave pump wavelength (m).
pub const PUMP_WAVELENGTH: f64 = 725e-9;

impl Default for DetectionConfig {
    fn default() -> Self {
        Self {
            na: DEFAULT_NA,
            focal_length: DEFAULT_FOCAL_LENGTH,
            magnification: 1.0,
            fiber: Some(FiberMode {
                sigma: DEFAULT_FIBER_SIGMA,
                offset: [0.0, 0.0],
            }),
            filter: Some(SpectralWindow::from_wavelengths(
                BROADBAND_WINDOW.0,
                BROADBAND_WINDOW.1,
            )),
            knife: None,
            polarization: Polarization::SumOverBasis,
        }
    }
}

impl DetectionConfig {
    /// Bare collection cone: no fiber, no filter, no knife.
    pub fn cone(na: f64) -> Self {
        Self {
            na,
            fiber: None,
            filter: None,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.na > 0.0 && self.na <= 1.0) {
            return Err(Error::domain(format!(
                "numerical aperture {} not in (0, 1]",
                self.na
            )));
        }
        if !(self.focal_length > 0.0 && self.focal_length.is_finite()) {
            return Err(Error::domain("focal length must be positive"));
        }
        if !(self.magnification > 0.0 && self.magnification.is_finite()) {
            return Err(Error::domain("magnification must be positive"));
        }
        if let Some(f) = &self.fiber {
            if !(f.sigma > 0.0 && f.sigma.is_finite()) {
                return Err(Error::domain("fiber mode radius must be positive"));
            }
        }
        if let Some(w) = &self.filter {
            if !(w.omega_min < w.omega_max && w.omega_min > 0.0) {
                return Err(Error::domain("spectral window must satisfy 0 < min < max"));
            }
        }
        if let Polarization::Fixed { idler, signal } = &self.polarization {
            for d in [idler, signal] {
                let n = d[0].norm_sqr() + d[1].norm_sqr();
                if (n - 1.0).abs() > 1e-9 {
                    return Err(Error::domain(
                        "fixed polarization vectors must be unit length",
                    ));
                }
            }
        }
        Ok(())
    }

    pub fn theta_max(&self) -> f64 {
        self.na.clamp(0.0, 1.0).asin()
    }

    /// Lateral scale `f * M` of the sine-condition mapping.
    pub fn plane_scale(&self) -> f64 {
        self.focal_length * self.magnification
    }

    /// Sine-condition image of a direction in the collimated plane (no fiber offset).
    pub fn mapped_point(&self, theta: f64, phi: f64) -> [f64; 2] {
        let r = self.plane_scale() * theta.sin();
        [r * phi.cos(), r * phi.sin()]
    }

    /// Fiber amplitude weight for a direction; 1 without a fiber.
    pub fn fiber_weight(&self, theta: f64, phi: f64) -> f64 {
        match &self.fiber {
            None => 1.0,
            Some(f) => {
                let p = self.mapped_point(theta, phi);
                f.amplitude([p[0] - f.offset[0], p[1] - f.offset[1]])
            }
        }
    }

    pub fn knife_passes(&self, theta: f64, phi: f64) -> bool {
        match &self.knife {
            None => true,
            Some(k) => k.passes(self.mapped_point(theta, phi)[0]),
        }
    }

    pub fn filter_transmission(&self, omega_p: f64, omega_s: f64) -> f64 {
        self.filter
            .map_or(1.0, |w| w.pair_transmission(omega_p, omega_s))
    }
}

/// Position in the fiber plane reached by a photon emitted along `(theta, phi)`,
/// relative to the fiber-mode center.
pub fn direction_to_fiber_plane(theta: f64, phi: f64, det: &DetectionConfig) -> Result<[f64; 2]> {
    let tmax = det.theta_max();
    if !(theta >= 0.0 && theta <= tmax * (1.0 + 1e-12)) {
        return Err(Error::domain(format!(
            "theta = {theta} outside the collection cone (theta_max = {tmax})"
        )));
    }
    let p = det.mapped_point(theta, phi);
    let off = det.fiber.map_or([0.0, 0.0], |f| f.offset);
    Ok([p[0] - off[0], p[1] - off[1]])
}
