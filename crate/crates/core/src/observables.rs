//! Derived measurements: spectra, far-field coincidence maps, knife-edge
//! scans, geometry sweeps and smoothing.

use rayon::prelude::*;
use serde::Serialize;

use crate::emission::{
    check_frequency_grid, density_on_grid, far_amplitudes, rate_from_kernel, CollectionKernel,
    DetectorPol, RateOptions,
};
use crate::error::{Error, Result};
use crate::fit::{fit_erf_points, ErfFit};
use crate::model::{
    omega_to_wavelength, BlockedSide, ComplexFrequency, DetectionConfig, KnifeState, Polarization,
    Scenario, C64,
};
use crate::overlap::{xi_table_with, OverlapTable, TableOptions};
use crate::quadrature::{linspace, simpson};

#[derive(Clone, Debug, Serialize)]
pub struct SpectrumCurve {
    pub omega_s: Vec<f64>,
    /// Signal wavelength `2 pi c / omega_s` (m).
    pub wavelength: Vec<f64>,
    /// Detected rate per unit signal angular frequency.
    pub density: Vec<f64>,
}

impl SpectrumCurve {
    pub fn integral(&self) -> f64 {
        simpson(&self.omega_s, &self.density)
    }
}

pub fn spectrum(
    scenario: &Scenario,
    det: &DetectionConfig,
    omega_grid: &[f64],
    table: &OverlapTable,
) -> Result<SpectrumCurve> {
    spectrum_with(scenario, det, omega_grid, table, &RateOptions::default())
}

pub fn spectrum_with(
    scenario: &Scenario,
    det: &DetectionConfig,
    omega_grid: &[f64],
    table: &OverlapTable,
    opts: &RateOptions,
) -> Result<SpectrumCurve> {
    scenario.ensure_valid()?;
    let kernel = CollectionKernel::new(scenario, det, opts.order)?;
    let density = density_on_grid(scenario, det, omega_grid, table, &kernel)?
        .into_iter()
        .map(|(d, _)| d)
        .collect();
    Ok(SpectrumCurve {
        omega_s: omega_grid.to_vec(),
        wavelength: omega_grid.iter().map(|&w| omega_to_wavelength(w)).collect(),
        density,
    })
}

/// Signal-direction coincidence density, theta-major over `theta` x `phi`.
#[derive(Clone, Debug, Serialize)]
pub struct FarFieldMap {
    pub theta: Vec<f64>,
    pub phi: Vec<f64>,
    pub density: Vec<f64>,
}

impl FarFieldMap {
    pub fn at(&self, it: usize, ip: usize) -> f64 {
        self.density[it * self.phi.len() + ip]
    }
}

/// Default map resolution: 1 degree in theta over [0, pi], 1 degree in phi.
pub const DEFAULT_MAP_RESOLUTION: (usize, usize) = (181, 360);

/// For each signal direction, the rate density integrated over idler
/// directions in the cone and over signal frequency. Both photons carry the
/// fiber weight; directions outside the cone or behind the knife are zero.
pub fn farfield_map(
    scenario: &Scenario,
    det: &DetectionConfig,
    omega_grid: &[f64],
    resolution: (usize, usize),
    table: &OverlapTable,
    opts: &RateOptions,
) -> Result<FarFieldMap> {
    scenario.ensure_valid()?;
    check_frequency_grid(scenario, omega_grid)?;
    let (n_theta, n_phi) = resolution;
    if n_theta < 2 || n_phi < 1 {
        return Err(Error::domain("far-field map needs at least 2 x 1 nodes"));
    }
    let kernel = CollectionKernel::new(scenario, det, opts.order)?;
    let nm = kernel.n_modes;
    let omega_p = scenario.pump_omega;

    // K_nn' integrated over frequency with the prefactor and filter
    let per_omega: Vec<Vec<C64>> = omega_grid
        .par_iter()
        .map(|&w| {
            let filt = det.filter_transmission(omega_p, w);
            if filt == 0.0 {
                return Ok(vec![C64::new(0.0, 0.0); nm * nm]);
            }
            let c = crate::emission::prefactor_c(omega_p, w, scenario.n_idler, scenario.n_signal)?;
            Ok(kernel
                .signal_kernel(table, w)?
                .into_iter()
                .map(|z| z * (c * filt))
                .collect())
        })
        .collect::<Result<_>>()?;
    let kmat: Vec<C64> = (0..nm * nm)
        .map(|k| {
            let re: Vec<f64> = per_omega.iter().map(|v| v[k].re).collect();
            let im: Vec<f64> = per_omega.iter().map(|v| v[k].im).collect();
            C64::new(simpson(omega_grid, &re), simpson(omega_grid, &im))
        })
        .collect();

    let pols: Vec<DetectorPol> = match &det.polarization {
        Polarization::SumOverBasis => vec![DetectorPol::Theta, DetectorPol::Phi],
        Polarization::Fixed { signal, .. } => vec![DetectorPol::Vector(*signal)],
    };
    let theta = linspace(0.0, std::f64::consts::PI, n_theta);
    let phi: Vec<f64> = (0..n_phi)
        .map(|j| 2.0 * std::f64::consts::PI * j as f64 / n_phi as f64)
        .collect();
    let theta_max = det.theta_max();
    let rows: Vec<Vec<f64>> = theta
        .par_iter()
        .map(|&t| {
            phi.iter()
                .map(|&p| {
                    if t > theta_max || !det.knife_passes(t, p) {
                        return Ok(0.0);
                    }
                    let f = far_amplitudes(scenario, t, p)?;
                    let mut acc = 0.0;
                    for pol in &pols {
                        let proj: Vec<C64> = f.iter().map(|fm| pol.project(fm)).collect();
                        for n in 0..nm {
                            for np in 0..nm {
                                acc += (proj[n] * proj[np].conj() * kmat[n * nm + np]).re;
                            }
                        }
                    }
                    Ok((acc * det.fiber_weight(t, p)).max(0.0))
                })
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<_>>()?;
    Ok(FarFieldMap {
        theta,
        phi,
        density: rows.into_iter().flatten().collect(),
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct KnifeScan {
    pub positions: Vec<f64>,
    pub rates: Vec<f64>,
    pub blocks: BlockedSide,
    pub fit: Option<ErfFit>,
}

/// Detected rate with the knife at each position. The blocked side comes
/// from `det.knife` when set, otherwise the knife blocks `x > position`.
pub fn knife_scan(
    scenario: &Scenario,
    det: &DetectionConfig,
    positions: &[f64],
    omega_grid: &[f64],
    table: &OverlapTable,
    opts: &RateOptions,
) -> Result<KnifeScan> {
    scenario.ensure_valid()?;
    if positions.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::domain("knife positions must be sorted ascending"));
    }
    let blocks = det.knife.map_or(BlockedSide::Above, |k| k.blocks);
    let rates = positions
        .iter()
        .map(|&x| {
            let mut d = *det;
            d.knife = Some(KnifeState {
                position: x,
                blocks,
            });
            let kernel = CollectionKernel::new(scenario, &d, opts.order)?;
            Ok(rate_from_kernel(scenario, &d, omega_grid, table, &kernel, opts)?.rate)
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(KnifeScan {
        positions: positions.to_vec(),
        rates,
        blocks,
        fit: None,
    })
}

pub fn fit_erf(scan: &KnifeScan) -> Result<ErfFit> {
    fit_erf_points(&scan.positions, &scan.rates)
}

/// One member of a geometry-scaling family.
#[derive(Clone, Debug)]
pub struct SweepMember {
    pub fs: f64,
    pub scenario: Scenario,
}

#[derive(Clone, Debug, Serialize)]
pub struct SweepPoint {
    pub fs: f64,
    pub eigenfrequency_1: ComplexFrequency,
    /// `(omega_1 - omega_deg) / (2 pi)` in Hz.
    pub detuning: f64,
    pub g11_abs: f64,
    pub volume: f64,
    pub rate: f64,
    pub normalized_rate: f64,
}

#[derive(Clone, Copy, Debug, Default)]
pub struct SweepOptions {
    pub rate: RateOptions,
    /// Use every mode pair instead of only the (1, 1) pair.
    pub full_sum: bool,
}

/// Label of the mode whose self-pair drives the sweep.
pub const SWEEP_MODE: &str = "1";

pub fn scaling_sweep(
    members: &[SweepMember],
    det: &DetectionConfig,
    omega_grid: &[f64],
    opts: &SweepOptions,
) -> Result<Vec<SweepPoint>> {
    members
        .iter()
        .map(|mb| {
            let s = &mb.scenario;
            s.ensure_valid()?;
            let idx = s.mode_index(SWEEP_MODE).ok_or_else(|| {
                Error::domain(format!(
                    "sweep member fs = {} has no mode labeled \"1\"",
                    mb.fs
                ))
            })?;
            let table_opts = TableOptions {
                top_k: 1,
                drop_threshold: 0.0,
            };
            let table = xi_table_with(s, omega_grid, &table_opts)?;
            let table = if opts.full_sum {
                table
            } else {
                table.restricted(&[(idx, idx)])
            };
            let kernel = CollectionKernel::new(s, det, opts.rate.order)?;
            let rate = rate_from_kernel(s, det, omega_grid, &table, &kernel, &opts.rate)?.rate;
            let ef = s.modes[idx].eigenfrequency;
            Ok(SweepPoint {
                fs: mb.fs,
                eigenfrequency_1: ef,
                detuning: (ef.omega - s.omega_deg()) / (2.0 * std::f64::consts::PI),
                g11_abs: table.g(idx, idx).norm(),
                volume: s.volume,
                rate,
                normalized_rate: rate / s.volume,
            })
        })
        .collect()
}

/// Centered moving mean with truncated windows at the ends. An even window
/// takes one more point on the right than on the left.
pub fn moving_average(series: &[f64], window: usize) -> Result<Vec<f64>> {
    if series.is_empty() {
        return Err(Error::domain("cannot smooth an empty series"));
    }
    if window == 0 || window > series.len() {
        return Err(Error::domain(format!(
            "window {window} must lie in 1..={}",
            series.len()
        )));
    }
    let left = (window - 1) / 2;
    let right = window - 1 - left;
    let n = series.len();
    Ok((0..n)
        .map(|i| {
            let a = i.saturating_sub(left);
            let b = (i + right).min(n - 1);
            if b == a {
                series[a]
            } else {
                series[a..=b].iter().sum::<f64>() / (b - a + 1) as f64
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn moving_average_examples() {
        let s = [1.0, 4.0, -2.0, 7.5];
        assert_eq!(moving_average(&s, 1).unwrap(), s.to_vec());
        let c = vec![3.25; 20];
        for w in [1, 3, 14, 20] {
            assert_eq!(moving_average(&c, w).unwrap(), c);
        }
        let ramp: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let sm = moving_average(&ramp, 3).unwrap();
        for i in 1..9 {
            assert!((sm[i] - i as f64).abs() < 1e-15);
        }
        assert_eq!(sm[0], 0.5);
        assert!(moving_average(&[], 1).is_err());
        assert!(moving_average(&s, 5).is_err());
        assert!(moving_average(&s, 0).is_err());
    }
}
