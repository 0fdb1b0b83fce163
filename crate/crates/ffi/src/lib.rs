//! C ABI over `spdc-core`.
//!
//! Every call returns an [`SpdcStatus`]; on failure the thread-local message
//! from [`spdc_last_error_message`] says why. Scenarios live behind an opaque
//! [`SpdcScenario`] handle released with [`spdc_scenario_free`]. Output
//! pointers are written only on success.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use spdc_core::emission::{detected_pair_rate_with, RateOptions};
use spdc_core::fit::fit_erf_points;
use spdc_core::io::{read_scenario, write_scenario};
use spdc_core::model::{
    q_factor, BlockedSide, ComplexFrequency, DetectionConfig, FiberMode, KnifeState, Polarization,
    Scenario, SpectralWindow, BROADBAND_WINDOW,
};
use spdc_core::observables::spectrum;
use spdc_core::overlap::xi_table;
use spdc_core::quadrature::linspace;
use spdc_core::testbed::preset;
use spdc_core::Error;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SpdcStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidArgument = 2,
    InvalidScenario = 3,
    Io = 4,
    Format = 5,
    Numeric = 6,
    FitFailed = 7,
    BufferTooSmall = 8,
    Panic = 9,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SpdcBlockedSide {
    /// Blocks mapped x greater than the knife position.
    Above = 0,
    /// Blocks mapped x smaller than the knife position.
    Below = 1,
}

/// Opaque scenario handle.
pub struct SpdcScenario(Scenario);

/// Detection setup. Lengths in meters. Polarization is always summed over
/// the (theta-hat, phi-hat) basis.
#[repr(C)]
#[derive(Clone, Copy, Debug)]
pub struct SpdcDetection {
    pub na: f64,
    pub focal_length: f64,
    pub magnification: f64,
    /// Fiber mode radius in the collimated plane; 0 disables the fiber.
    pub fiber_sigma: f64,
    pub fiber_offset_x: f64,
    pub fiber_offset_y: f64,
    /// Filter passband as two wavelengths; both 0 disables the filter.
    pub filter_wavelength_a: f64,
    pub filter_wavelength_b: f64,
    pub knife_enabled: bool,
    pub knife_position: f64,
    pub knife_blocks: SpdcBlockedSide,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, Default)]
pub struct SpdcRate {
    pub rate: f64,
    pub error_estimate: f64,
    pub converged: bool,
    /// No direction passes the detection; `rate` is 0.
    pub empty_domain: bool,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, Default)]
pub struct SpdcErfFit {
    pub m: f64,
    pub x0: f64,
    pub amplitude: f64,
    pub offset: f64,
    /// 95% half-widths for m, x0, amplitude, offset.
    pub ci95: [f64; 4],
    pub residual_norm: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

struct Failure(SpdcStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::Domain(_) | Error::GridMismatch(_) => SpdcStatus::InvalidArgument,
            Error::InvalidScenario(_) => SpdcStatus::InvalidScenario,
            Error::Singularity | Error::OutsideCoverage { .. } => SpdcStatus::Numeric,
            Error::DegenerateFit(_) | Error::NonConvergence { .. } => SpdcStatus::FitFailed,
            Error::Version { .. } | Error::Parse { .. } => SpdcStatus::Format,
            Error::Io { .. } => SpdcStatus::Io,
        };
        Failure(status, e.to_string())
    }
}

fn fail<T>(status: SpdcStatus, msg: impl Into<String>) -> Result<T, Failure> {
    Err(Failure(status, msg.into()))
}

/// Run `f`, translating errors and panics into a status code.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> SpdcStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            SpdcStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            SpdcStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return fail(SpdcStatus::NullArgument, format!("{what} is null"));
    }
    CStr::from_ptr(p).to_str().or_else(|_| {
        fail(
            SpdcStatus::InvalidArgument,
            format!("{what} is not valid UTF-8"),
        )
    })
}

unsafe fn ref_arg<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().map_or_else(
        || fail(SpdcStatus::NullArgument, format!("{what} is null")),
        Ok,
    )
}

fn out_arg<T>(p: *mut T, what: &str) -> Result<(), Failure> {
    if p.is_null() {
        return fail(SpdcStatus::NullArgument, format!("{what} is null"));
    }
    Ok(())
}

impl SpdcDetection {
    fn to_config(self) -> DetectionConfig {
        let filter = if self.filter_wavelength_a == 0.0 && self.filter_wavelength_b == 0.0 {
            None
        } else {
            Some(SpectralWindow::from_wavelengths(
                self.filter_wavelength_a,
                self.filter_wavelength_b,
            ))
        };
        DetectionConfig {
            na: self.na,
            focal_length: self.focal_length,
            magnification: self.magnification,
            fiber: (self.fiber_sigma != 0.0).then_some(FiberMode {
                sigma: self.fiber_sigma,
                offset: [self.fiber_offset_x, self.fiber_offset_y],
            }),
            filter,
            knife: self.knife_enabled.then_some(KnifeState {
                position: self.knife_position,
                blocks: match self.knife_blocks {
                    SpdcBlockedSide::Above => BlockedSide::Above,
                    SpdcBlockedSide::Below => BlockedSide::Below,
                },
            }),
            polarization: Polarization::SumOverBasis,
        }
    }

    fn from_config(d: &DetectionConfig) -> Self {
        let (fa, fb) = d.filter.map_or((0.0, 0.0), |w| {
            (
                spdc_core::model::omega_to_wavelength(w.omega_max),
                spdc_core::model::omega_to_wavelength(w.omega_min),
            )
        });
        Self {
            na: d.na,
            focal_length: d.focal_length,
            magnification: d.magnification,
            fiber_sigma: d.fiber.map_or(0.0, |f| f.sigma),
            fiber_offset_x: d.fiber.map_or(0.0, |f| f.offset[0]),
            fiber_offset_y: d.fiber.map_or(0.0, |f| f.offset[1]),
            filter_wavelength_a: fa,
            filter_wavelength_b: fb,
            knife_enabled: d.knife.is_some(),
            knife_position: d.knife.map_or(0.0, |k| k.position),
            knife_blocks: match d.knife.map(|k| k.blocks) {
                Some(BlockedSide::Below) => SpdcBlockedSide::Below,
                _ => SpdcBlockedSide::Above,
            },
        }
    }
}

/// Signal grid over the band where both photons pass the filter.
fn pair_grid(s: &Scenario, det: &DetectionConfig, points: usize) -> Result<Vec<f64>, Failure> {
    if points < 3 {
        return fail(
            SpdcStatus::InvalidArgument,
            "need at least 3 frequency points",
        );
    }
    let band = det.filter.unwrap_or(SpectralWindow::from_wavelengths(
        BROADBAND_WINDOW.0,
        BROADBAND_WINDOW.1,
    ));
    match band.pair_window(s.pump_omega) {
        Some(w) => Ok(linspace(w.omega_min, w.omega_max, points)),
        None => fail(
            SpdcStatus::InvalidArgument,
            "filter passes no signal/idler pair",
        ),
    }
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn spdc_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failed call on this thread, or NULL. Valid until
/// the next call into the library on the same thread.
#[no_mangle]
pub extern "C" fn spdc_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Read a scenario manifest (and its blobs) from `path`.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn spdc_scenario_read(
    path: *const c_char,
    out: *mut *mut SpdcScenario,
) -> SpdcStatus {
    guard(|| {
        let path = str_arg(path, "path")?;
        out_arg(out, "out")?;
        let s = read_scenario(Path::new(path))?;
        *out = Box::into_raw(Box::new(SpdcScenario(s)));
        Ok(())
    })
}

/// Build a named synthetic scenario ("single-dipole", "z-dipole",
/// "two-mode", "three-mode-random").
///
/// # Safety
/// `name` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn spdc_scenario_preset(
    name: *const c_char,
    seed: u64,
    out: *mut *mut SpdcScenario,
) -> SpdcStatus {
    guard(|| {
        let name = str_arg(name, "name")?;
        out_arg(out, "out")?;
        let s = preset(name, seed)?;
        *out = Box::into_raw(Box::new(SpdcScenario(s)));
        Ok(())
    })
}

/// Write the scenario as a manifest at `path` plus binary blobs beside it.
///
/// # Safety
/// `scenario` must come from this library; `path` must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn spdc_scenario_write(
    scenario: *const SpdcScenario,
    path: *const c_char,
) -> SpdcStatus {
    guard(|| {
        let s = ref_arg(scenario, "scenario")?;
        let path = str_arg(path, "path")?;
        write_scenario(&s.0, Path::new(path))?;
        Ok(())
    })
}

/// Release a scenario. NULL is a no-op.
///
/// # Safety
/// `scenario` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn spdc_scenario_free(scenario: *mut SpdcScenario) {
    if !scenario.is_null() {
        drop(Box::from_raw(scenario));
    }
}

/// # Safety
/// `scenario` must come from this library; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn spdc_scenario_mode_count(
    scenario: *const SpdcScenario,
    out: *mut usize,
) -> SpdcStatus {
    guard(|| {
        let s = ref_arg(scenario, "scenario")?;
        out_arg(out, "out")?;
        *out = s.0.modes.len();
        Ok(())
    })
}

/// Complex eigenfrequency `omega - i gamma` of mode `index` (0-based).
///
/// # Safety
/// `scenario` must come from this library; `omega` and `gamma` must be writable.
#[no_mangle]
pub unsafe extern "C" fn spdc_scenario_mode_eigenfrequency(
    scenario: *const SpdcScenario,
    index: usize,
    omega: *mut f64,
    gamma: *mut f64,
) -> SpdcStatus {
    guard(|| {
        let s = ref_arg(scenario, "scenario")?;
        out_arg(omega, "omega")?;
        out_arg(gamma, "gamma")?;
        let Some(m) = s.0.modes.get(index) else {
            return fail(
                SpdcStatus::InvalidArgument,
                format!(
                    "mode index {index} out of range (scenario has {})",
                    s.0.modes.len()
                ),
            );
        };
        *omega = m.eigenfrequency.omega;
        *gamma = m.eigenfrequency.gamma;
        Ok(())
    })
}

/// Quality factor `omega / (2 gamma)`.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn spdc_q_factor(omega: f64, gamma: f64, out: *mut f64) -> SpdcStatus {
    guard(|| {
        out_arg(out, "out")?;
        *out = q_factor(ComplexFrequency::new(omega, gamma))?;
        Ok(())
    })
}

/// Fill `out` with the default detection setup.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn spdc_detection_default(out: *mut SpdcDetection) -> SpdcStatus {
    guard(|| {
        out_arg(out, "out")?;
        *out = SpdcDetection::from_config(&DetectionConfig::default());
        Ok(())
    })
}

/// Detected pair rate integrated over `omega_points` signal frequencies
/// spanning the pair band of the filter (or the broadband window).
///
/// # Safety
/// `scenario` must come from this library; `det` must be readable and
/// `out` writable.
#[no_mangle]
pub unsafe extern "C" fn spdc_detected_rate(
    scenario: *const SpdcScenario,
    det: *const SpdcDetection,
    omega_points: usize,
    out: *mut SpdcRate,
) -> SpdcStatus {
    guard(|| {
        let s = &ref_arg(scenario, "scenario")?.0;
        let det = ref_arg(det, "det")?.to_config();
        out_arg(out, "out")?;
        det.validate()?;
        let grid = pair_grid(s, &det, omega_points)?;
        let table = xi_table(s, &grid, 9)?;
        let r = detected_pair_rate_with(s, &det, &grid, &table, &RateOptions::default())?;
        *out = SpdcRate {
            rate: r.rate,
            error_estimate: r.quadrature.error_estimate,
            converged: r.quadrature.converged,
            empty_domain: r.quadrature.empty_domain,
        };
        Ok(())
    })
}

/// Detected rate per unit signal angular frequency on `omega_points`
/// frequencies over the pair band. Writes `omega_points` values to each of
/// `omega_s` and `density`, whose capacity is `capacity`.
///
/// # Safety
/// `scenario` must come from this library; `det` must be readable; the
/// output arrays must hold `capacity` doubles.
#[no_mangle]
pub unsafe extern "C" fn spdc_spectrum(
    scenario: *const SpdcScenario,
    det: *const SpdcDetection,
    omega_points: usize,
    omega_s: *mut f64,
    density: *mut f64,
    capacity: usize,
) -> SpdcStatus {
    guard(|| {
        let s = &ref_arg(scenario, "scenario")?.0;
        let det = ref_arg(det, "det")?.to_config();
        out_arg(omega_s, "omega_s")?;
        out_arg(density, "density")?;
        if capacity < omega_points {
            return fail(
                SpdcStatus::BufferTooSmall,
                format!("capacity {capacity} is smaller than omega_points {omega_points}"),
            );
        }
        det.validate()?;
        let grid = pair_grid(s, &det, omega_points)?;
        let table = xi_table(s, &grid, 9)?;
        let curve = spectrum(s, &det, &grid, &table)?;
        std::slice::from_raw_parts_mut(omega_s, omega_points).copy_from_slice(&curve.omega_s);
        std::slice::from_raw_parts_mut(density, omega_points).copy_from_slice(&curve.density);
        Ok(())
    })
}

/// Fit `offset + amplitude * erf((x - x0) / m)` to `n` samples.
///
/// # Safety
/// `x` and `y` must hold `n` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn spdc_fit_erf(
    x: *const f64,
    y: *const f64,
    n: usize,
    out: *mut SpdcErfFit,
) -> SpdcStatus {
    guard(|| {
        ref_arg(x, "x")?;
        ref_arg(y, "y")?;
        out_arg(out, "out")?;
        let xs = std::slice::from_raw_parts(x, n);
        let ys = std::slice::from_raw_parts(y, n);
        let f = fit_erf_points(xs, ys)?;
        *out = SpdcErfFit {
            m: f.m,
            x0: f.x0,
            amplitude: f.amplitude,
            offset: f.offset,
            ci95: f.ci95,
            residual_norm: f.residual_norm,
        };
        Ok(())
    })
}
