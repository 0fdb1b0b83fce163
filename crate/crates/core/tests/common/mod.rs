#![allow(dead_code)]

use spdc_core::model::{DetectionConfig, Scenario, SpectralWindow, BROADBAND_WINDOW};
use spdc_core::overlap::{xi_table, OverlapTable};
use spdc_core::quadrature::linspace;

/// Uniform signal grid over the band where both photons pass the filter
/// (broadband window when there is no filter).
pub fn pair_band(s: &Scenario, det: &DetectionConfig, n: usize) -> Vec<f64> {
    let band = det.filter.unwrap_or(SpectralWindow::from_wavelengths(
        BROADBAND_WINDOW.0,
        BROADBAND_WINDOW.1,
    ));
    let w = band.pair_window(s.pump_omega).expect("non-empty pair band");
    linspace(w.omega_min, w.omega_max, n)
}

pub fn table(s: &Scenario, grid: &[f64]) -> OverlapTable {
    xi_table(s, grid, 9).unwrap()
}

pub fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs())
}
