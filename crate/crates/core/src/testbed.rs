//! Analytic synthetic resonators and brute-force oracles.
//!
//! Synthetic modes have separable Gaussian near fields and dipole far
//! fields `F ~ (r x d) x r`, optionally narrowed by a Gaussian lobe
//! envelope in `sin(theta)`. Together with the Monte Carlo estimator they let
//! every stage of the pipeline be checked without solver data.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::emission::differential_pair_rate;
use crate::error::{Error, Result};
use crate::model::{
    wavelength_to_omega, Chi2Map, Chi2Tensor, ComplexFrequency, DetectionConfig, FarFieldAmplitude,
    GridGeometry, NearFieldGrid, QnmMode, Scenario, Vec3c, C64, PUMP_WAVELENGTH, SPEED_OF_LIGHT,
};
use crate::observables::SweepMember;
use crate::overlap::OverlapTable;
use crate::quadrature::{cone_solid_angle, linspace};

fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

fn real3(v: [f64; 3]) -> Vec3c {
    [c(v[0], 0.0), c(v[1], 0.0), c(v[2], 0.0)]
}

/// Gaussian envelope `amplitude * exp(-sum ((x - center) / width)^2) * polarization`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NearEnvelope {
    pub center: [f64; 3],
    pub widths: [f64; 3],
    pub polarization: Vec3c,
    pub amplitude: C64,
}

impl NearEnvelope {
    pub fn eval(&self, p: [f64; 3]) -> Vec3c {
        let mut arg = 0.0;
        for k in 0..3 {
            let d = (p[k] - self.center[k]) / self.widths[k];
            arg += d * d;
        }
        let a = self.amplitude * (-arg).exp();
        [
            self.polarization[0] * a,
            self.polarization[1] * a,
            self.polarization[2] * a,
        ]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FarPattern {
    /// Dipole orientation (complex unit vector).
    pub dipole: Vec3c,
    pub scale: C64,
    /// Width `w` of an extra lobe envelope `exp(-sin^2(theta) / w^2)`.
    pub lobe_width: Option<f64>,
}

impl FarPattern {
    /// `[F_theta, F_phi]` at one direction.
    pub fn eval(&self, theta: f64, phi: f64) -> [C64; 2] {
        let (st, ct) = theta.sin_cos();
        let (sp, cp) = phi.sin_cos();
        let th = [ct * cp, ct * sp, -st];
        let ph = [-sp, cp, 0.0];
        let d = &self.dipole;
        let env = self
            .lobe_width
            .map_or(1.0, |w| (-(st * st) / (w * w)).exp());
        let a = self.scale * env;
        let ft = (d[0] * th[0] + d[1] * th[1] + d[2] * th[2]) * a;
        let fp = (d[0] * ph[0] + d[1] * ph[1]) * a;
        [ft, fp]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FarGridSpec {
    pub n_theta: usize,
    pub n_phi: usize,
    /// Upper end of the sampled theta range (the grid starts at 0).
    pub theta_max: f64,
}

impl Default for FarGridSpec {
    fn default() -> Self {
        Self {
            n_theta: 361,
            n_phi: 720,
            theta_max: PI / 2.0,
        }
    }
}

impl FarGridSpec {
    pub fn axes(&self) -> (Vec<f64>, Vec<f64>) {
        let theta = linspace(0.0, self.theta_max, self.n_theta);
        let phi = (0..self.n_phi)
            .map(|j| 2.0 * PI * j as f64 / self.n_phi as f64)
            .collect();
        (theta, phi)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticModeSpec {
    pub label: String,
    pub eigenfrequency: ComplexFrequency,
    pub near: NearEnvelope,
    pub far: FarPattern,
    pub grid: GridGeometry,
    pub far_grid: FarGridSpec,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PumpSpec {
    pub omega: f64,
    pub grid: GridGeometry,
    /// Field profile (V/m).
    pub field: NearEnvelope,
    pub intensity: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Chi2Spec {
    pub tensor: Chi2Tensor,
    /// Nonlinear region as an axis-aligned box `(min, max)`; `None` fills the grid.
    pub region: Option<([f64; 3], [f64; 3])>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MediumSpec {
    pub n_idler: f64,
    pub n_signal: f64,
    pub volume: f64,
}

impl Default for MediumSpec {
    fn default() -> Self {
        Self {
            n_idler: 1.45,
            n_signal: 1.45,
            volume: 1.75e-18,
        }
    }
}

pub fn make_synthetic_scenario(
    specs: &[SyntheticModeSpec],
    pump: &PumpSpec,
    chi2: &Chi2Spec,
    medium: &MediumSpec,
) -> Result<Scenario> {
    if specs.is_empty() {
        return Err(Error::domain("at least one synthetic mode is required"));
    }
    let grid = pump.grid;
    if let Some(bad) = specs.iter().find(|s| s.grid != grid) {
        return Err(Error::GridMismatch(format!(
            "mode {:?} grid differs from the pump grid",
            bad.label
        )));
    }
    let modes = specs
        .par_iter()
        .map(|s| {
            let (theta, phi) = s.far_grid.axes();
            QnmMode {
                label: s.label.clone(),
                eigenfrequency: s.eigenfrequency,
                near_field: NearFieldGrid::from_fn(grid, |p| s.near.eval(p)),
                far_field: FarFieldAmplitude::from_fn(theta, phi, |t, p| s.far.eval(t, p)),
            }
        })
        .collect();

    let mut chi_map = Chi2Map::uniform(grid, chi2.tensor);
    if let Some((lo, hi)) = chi2.region {
        for (node, m) in chi_map.mask.iter_mut().enumerate() {
            let p = grid.position_of(node);
            if !(0..3).all(|k| p[k] >= lo[k] && p[k] <= hi[k]) {
                *m = 0;
            }
        }
    }

    let scenario = Scenario {
        pump_omega: pump.omega,
        pump_field: NearFieldGrid::from_fn(grid, |p| pump.field.eval(p)),
        pump_intensity: pump.intensity,
        modes,
        chi2: chi_map,
        n_idler: medium.n_idler,
        n_signal: medium.n_signal,
        volume: medium.volume,
    };
    scenario.ensure_valid()?;
    Ok(scenario)
}

/// Effective chi2_zzz of lithium niobate (m/V).
pub const LN_CHI2_ZZZ: f64 = 5.0e-11;
/// Pump intensity used by the presets (W/m^2).
pub const PRESET_INTENSITY: f64 = 1e9;

/// Cube of `n^3` nodes and side `side` centered on the origin.
pub fn centered_grid(n: usize, side: f64) -> GridGeometry {
    let h = side / n as f64;
    let o = -side / 2.0 + h / 2.0;
    GridGeometry {
        origin: [o; 3],
        spacing: [h; 3],
        shape: [n; 3],
    }
}

/// Plane-wave pump amplitude `sqrt(2 I / (c eps0))` for intensity `I`.
pub fn plane_wave_amplitude(intensity: f64) -> f64 {
    let eps0 = 1.0 / (crate::model::MU_0 * SPEED_OF_LIGHT * SPEED_OF_LIGHT);
    (2.0 * intensity / (SPEED_OF_LIGHT * eps0)).sqrt()
}

/// Builder for the named presets: z-polarized pump and near fields on a
/// 1.2 um cube with the zzz susceptibility of lithium niobate.
#[derive(Clone, Debug)]
pub struct PresetBuilder {
    pub grid: GridGeometry,
    pub far_grid: FarGridSpec,
    pub pump_omega: f64,
    pub modes: Vec<SyntheticModeSpec>,
    pub medium: MediumSpec,
}

impl PresetBuilder {
    pub fn new() -> Self {
        Self {
            grid: centered_grid(12, 1.2e-6),
            far_grid: FarGridSpec::default(),
            pump_omega: wavelength_to_omega(PUMP_WAVELENGTH),
            modes: Vec::new(),
            medium: MediumSpec::default(),
        }
    }

    pub fn omega_deg(&self) -> f64 {
        self.pump_omega / 2.0
    }

    /// Add a z-polarized Gaussian mode with quality factor `q`.
    pub fn mode(mut self, label: &str, omega: f64, q: f64, near_amp: C64, far: FarPattern) -> Self {
        self.modes.push(SyntheticModeSpec {
            label: label.into(),
            eigenfrequency: ComplexFrequency::new(omega, omega / (2.0 * q)),
            near: NearEnvelope {
                center: [0.0; 3],
                widths: [0.4e-6; 3],
                polarization: real3([0.0, 0.0, 1.0]),
                amplitude: near_amp,
            },
            far,
            grid: self.grid,
            far_grid: self.far_grid,
        });
        self
    }

    pub fn build(&self) -> Result<Scenario> {
        let pump = PumpSpec {
            omega: self.pump_omega,
            grid: self.grid,
            field: NearEnvelope {
                center: [0.0; 3],
                widths: [f64::INFINITY; 3],
                polarization: real3([0.0, 0.0, 1.0]),
                amplitude: c(plane_wave_amplitude(PRESET_INTENSITY), 0.0),
            },
            intensity: PRESET_INTENSITY,
        };
        let chi2 = Chi2Spec {
            tensor: Chi2Tensor::zzz(LN_CHI2_ZZZ),
            region: None,
        };
        make_synthetic_scenario(&self.modes, &pump, &chi2, &self.medium)
    }
}

impl Default for PresetBuilder {
    fn default() -> Self {
        Self::new()
    }
}

pub fn dipole(d: [f64; 3], lobe_width: Option<f64>) -> FarPattern {
    FarPattern {
        dipole: real3(d),
        scale: c(1.0, 0.0),
        lobe_width,
    }
}

/// Angular lobe width (in `sin(theta)`) of the degenerate mode in the
/// two-mode preset; the detuned mode is 1.5x wider.
pub const TWO_MODE_LOBE: f64 = 0.2;

pub const PRESETS: &[&str] = &["single-dipole", "z-dipole", "two-mode", "three-mode-random"];

/// Named synthetic scenarios.
///
/// * `single-dipole`: one x-dipole mode at the degenerate frequency, Q = 10.
/// * `z-dipole`: as above with a z-oriented dipole (azimuthally symmetric).
/// * `two-mode`: a narrow-lobe mode at degeneracy (Q = 20) and a 1.5x wider
///   mode detuned to 1540 nm (Q = 15).
/// * `three-mode-random`: three random modes near degeneracy with a random
///   susceptibility symmetric in its first two indices.
pub fn preset(name: &str, seed: u64) -> Result<Scenario> {
    let b = PresetBuilder::new();
    let wd = b.omega_deg();
    match name {
        "single-dipole" => b
            .mode("1", wd, 10.0, c(1.0, 0.0), dipole([1.0, 0.0, 0.0], None))
            .build(),
        "z-dipole" => b
            .mode("1", wd, 10.0, c(1.0, 0.0), dipole([0.0, 0.0, 1.0], None))
            .build(),
        "two-mode" => b
            .mode(
                "1",
                wd,
                20.0,
                c(1.0, 0.0),
                dipole([1.0, 0.0, 0.0], Some(TWO_MODE_LOBE)),
            )
            .mode(
                "2",
                wavelength_to_omega(1540e-9),
                15.0,
                c(1.0, 0.0),
                dipole([1.0, 0.0, 0.0], Some(1.5 * TWO_MODE_LOBE)),
            )
            .build(),
        "three-mode-random" => {
            random_scenario(seed, 3, centered_grid(6, 1.2e-6), FarGridSpec::default())
        }
        other => Err(Error::domain(format!(
            "unknown preset {other:?} (expected one of {})",
            PRESETS.join(", ")
        ))),
    }
}

/// Geometry scale factors of the default sweep family; `fs = 1` is the
/// zero-detuning member.
pub fn default_sweep_scales() -> Vec<f64> {
    (-6..=6).map(|k| 1.0 + 0.005 * k as f64).collect()
}

/// Quality factor of the swept mode.
pub const SWEEP_Q: f64 = 20.0;

/// Single-mode family whose resonance wavelength scales with the geometry
/// factor, `lambda_1 = fs * lambda_deg`, at constant Q, volume and near-field
/// shape. `near_amp` sets the overlap magnitude: |G_11| scales as its square.
pub fn sweep_family(scales: &[f64], near_amp: C64) -> Result<Vec<SweepMember>> {
    scales
        .iter()
        .map(|&fs| {
            if !(fs > 0.0 && fs.is_finite()) {
                return Err(Error::domain(format!(
                    "geometry scale must be positive, got {fs}"
                )));
            }
            let b = PresetBuilder::new();
            let omega = b.omega_deg() / fs;
            let scenario = b
                .mode("1", omega, SWEEP_Q, near_amp, dipole([1.0, 0.0, 0.0], None))
                .build()?;
            Ok(SweepMember { fs, scenario })
        })
        .collect()
}

/// Random scenario with `n_modes` modes near the degenerate frequency and a
/// random susceptibility symmetric in its first two indices.
pub fn random_scenario(
    seed: u64,
    n_modes: usize,
    grid: GridGeometry,
    far_grid: FarGridSpec,
) -> Result<Scenario> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let omega_p = wavelength_to_omega(PUMP_WAVELENGTH);
    let wd = omega_p / 2.0;
    let rc = |rng: &mut ChaCha8Rng| c(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
    let mut specs = Vec::with_capacity(n_modes);
    for k in 0..n_modes {
        let omega = wd * rng.random_range(0.85..1.15);
        let q = rng.random_range(5.0..40.0);
        let pol = [rc(&mut rng), rc(&mut rng), rc(&mut rng)];
        let half = 0.6e-6;
        let center = [
            rng.random_range(-half / 3.0..half / 3.0),
            rng.random_range(-half / 3.0..half / 3.0),
            rng.random_range(-half / 3.0..half / 3.0),
        ];
        let widths = [
            rng.random_range(0.2e-6..0.6e-6),
            rng.random_range(0.2e-6..0.6e-6),
            rng.random_range(0.2e-6..0.6e-6),
        ];
        let d = [rc(&mut rng), rc(&mut rng), rc(&mut rng)];
        let norm = d.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        specs.push(SyntheticModeSpec {
            label: (k + 1).to_string(),
            eigenfrequency: ComplexFrequency::new(omega, omega / (2.0 * q)),
            near: NearEnvelope {
                center,
                widths,
                polarization: pol,
                amplitude: c(1.0, 0.0),
            },
            far: FarPattern {
                dipole: [d[0] / norm, d[1] / norm, d[2] / norm],
                scale: rc(&mut rng),
                lobe_width: Some(rng.random_range(0.2..0.8)),
            },
            grid,
            far_grid,
        });
    }
    let mut tensor = Chi2Tensor::zero();
    for a in 0..3 {
        for b in a..3 {
            for g in 0..3 {
                let v = LN_CHI2_ZZZ * rng.random_range(-1.0..1.0);
                tensor.set(a, b, g, v);
                tensor.set(b, a, g, v);
            }
        }
    }
    let pump = PumpSpec {
        omega: omega_p,
        grid,
        field: NearEnvelope {
            center: [0.0; 3],
            widths: [1.0e-6; 3],
            polarization: [rc(&mut rng), rc(&mut rng), rc(&mut rng)],
            amplitude: c(plane_wave_amplitude(PRESET_INTENSITY), 0.0),
        },
        intensity: PRESET_INTENSITY,
    };
    make_synthetic_scenario(
        &specs,
        &pump,
        &Chi2Spec {
            tensor,
            region: None,
        },
        &MediumSpec::default(),
    )
}

/// QNM eigenfrequencies of a dielectric slab of index `n` and thickness `l`
/// in vacuum, for light speed `c_light`.
pub fn slab_eigenfrequencies_with(
    c_light: f64,
    n: f64,
    l: f64,
    count: usize,
) -> Result<Vec<ComplexFrequency>> {
    if !(n > 1.0) {
        return Err(Error::domain(format!(
            "slab index {n} gives no confinement (need n > 1)"
        )));
    }
    if !(l > 0.0) {
        return Err(Error::domain("slab thickness must be positive"));
    }
    let r = (n - 1.0) / (n + 1.0);
    Ok((1..=count)
        .map(|q| {
            let z = C64::new(q as f64 * PI, r.ln()) * (c_light / (n * l));
            ComplexFrequency::from_complex(z)
        })
        .collect())
}

pub fn slab_eigenfrequencies(n: f64, l: f64, count: usize) -> Result<Vec<ComplexFrequency>> {
    slab_eigenfrequencies_with(SPEED_OF_LIGHT, n, l, count)
}

/// Integration domain of the Monte Carlo oracle: a signal-frequency interval
/// and the collection cone for each photon.
#[derive(Clone, Copy, Debug)]
pub struct McDomain {
    pub omega_min: f64,
    pub omega_max: f64,
    pub theta_max: f64,
}

impl McDomain {
    pub fn measure(&self) -> f64 {
        let cone = cone_solid_angle(self.theta_max);
        (self.omega_max - self.omega_min) * cone * cone
    }
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct McEstimate {
    pub estimate: f64,
    pub stderr: f64,
    pub samples: usize,
    pub seed: u64,
}

/// Independent seeded streams. Fixed so that estimates do not depend on the
/// thread count.
pub const MC_STREAMS: usize = 16;

#[derive(Clone, Copy, Default)]
struct Welford {
    n: f64,
    mean: f64,
    m2: f64,
}

impl Welford {
    fn push(&mut self, x: f64) {
        self.n += 1.0;
        let d = x - self.mean;
        self.mean += d / self.n;
        self.m2 += d * (x - self.mean);
    }

    fn merge(self, o: Welford) -> Welford {
        if o.n == 0.0 {
            return self;
        }
        if self.n == 0.0 {
            return o;
        }
        let n = self.n + o.n;
        let d = o.mean - self.mean;
        Welford {
            n,
            mean: self.mean + d * o.n / n,
            m2: self.m2 + o.m2 + d * d * self.n * o.n / n,
        }
    }
}

/// Plain Monte Carlo over `domain` with uniform sampling of the frequency and
/// of `cos(theta)`, `phi` for both photons. `integrand(omega_s, dir_i, dir_s)`
/// is evaluated pointwise.
pub fn monte_carlo_integrate<F>(
    domain: &McDomain,
    seed: u64,
    samples: usize,
    integrand: F,
) -> Result<McEstimate>
where
    F: Fn(f64, (f64, f64), (f64, f64)) -> Result<f64> + Sync,
{
    let measure = domain.measure();
    if !(measure > 0.0 && measure.is_finite()) {
        return Err(Error::domain("Monte Carlo domain has zero measure"));
    }
    if samples < 2 {
        return Err(Error::domain("Monte Carlo needs at least two samples"));
    }
    let u_min = domain.theta_max.cos();
    let per = samples / MC_STREAMS;
    let extra = samples % MC_STREAMS;
    let stats: Vec<Welford> = (0..MC_STREAMS)
        .into_par_iter()
        .map(|k| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(k as u64);
            let count = per + usize::from(k < extra);
            let dir = |rng: &mut ChaCha8Rng| {
                let u: f64 = rng.random_range(u_min..=1.0);
                let phi: f64 = rng.random_range(0.0..2.0 * PI);
                (u.clamp(-1.0, 1.0).acos(), phi)
            };
            let mut w = Welford::default();
            for _ in 0..count {
                let omega = rng.random_range(domain.omega_min..domain.omega_max);
                let di = dir(&mut rng);
                let ds = dir(&mut rng);
                w.push(integrand(omega, di, ds)?);
            }
            Ok(w)
        })
        .collect::<Result<_>>()?;
    let total = stats.into_iter().fold(Welford::default(), Welford::merge);
    let var = total.m2 / (total.n - 1.0);
    Ok(McEstimate {
        estimate: measure * total.mean,
        stderr: measure * (var / total.n).sqrt(),
        samples,
        seed,
    })
}

/// Monte Carlo estimate of the detected pair rate over `omega_range`.
pub fn monte_carlo_rate(
    scenario: &Scenario,
    det: &DetectionConfig,
    table: &OverlapTable,
    omega_range: (f64, f64),
    seed: u64,
    samples: usize,
) -> Result<McEstimate> {
    if samples < 10_000 {
        return Err(Error::domain("Monte Carlo rate needs at least 1e4 samples"));
    }
    det.validate()?;
    scenario.ensure_valid()?;
    let domain = McDomain {
        omega_min: omega_range.0,
        omega_max: omega_range.1,
        theta_max: det.theta_max(),
    };
    let omega_p = scenario.pump_omega;
    monte_carlo_integrate(&domain, seed, samples, |omega, di, ds| {
        if !det.knife_passes(di.0, di.1) || !det.knife_passes(ds.0, ds.1) {
            return Ok(0.0);
        }
        let filt = det.filter_transmission(omega_p, omega);
        if filt == 0.0 {
            return Ok(0.0);
        }
        let w = det.fiber_weight(di.0, di.1) * det.fiber_weight(ds.0, ds.1);
        Ok(filt * w * differential_pair_rate(scenario, di, ds, omega, det, table)?)
    })
}
