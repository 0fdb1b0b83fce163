//! Two-photon amplitude and photon-pair rates.
//!
//! The detected rate integrates `phi(r_i) phi(r_s) C |T|^2` over both
//! collection cones and the signal frequency. Because the fiber weight, the
//! knife mask and the polarization projection act on each photon separately,
//! the double angular integral of `|sum_mn xi_mn F_m(i) F_n(s)|^2` collapses
//! onto per-photon Gram matrices
//! `M_mm' = sum_nodes w (P F_m)(P F_m')^*`, evaluated once per detection setup:
//! `sum_{mn,m'n'} xi_mn xi*_m'n' M^i_mm' M^s_nn'`.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{DetectionConfig, Polarization, Scenario, C64, MU_0, SPEED_OF_LIGHT};
use crate::overlap::OverlapTable;
use crate::quadrature::{simpson_with_estimate, AngularQuadrature, QuadratureOrder};

/// Nodes per parallel tile when accumulating Gram matrices. Fixed so that
/// results do not depend on the thread count.
const TILE: usize = 256;

/// Prefactor `8/(pi mu0^2) n_i n_s (omega_p - omega_s)^3 omega_s^3 / c^6` with
/// the far-field radii absorbed into the radius-removed amplitudes.
pub fn prefactor_c(omega_p: f64, omega_s: f64, n_i: f64, n_s: f64) -> Result<f64> {
    if !(omega_s > 0.0 && omega_s < omega_p) {
        return Err(Error::domain(format!(
            "signal frequency {omega_s} outside (0, omega_p = {omega_p})"
        )));
    }
    let omega_i = omega_p - omega_s;
    let ki = omega_i / SPEED_OF_LIGHT;
    let ks = omega_s / SPEED_OF_LIGHT;
    Ok(8.0 / (std::f64::consts::PI * MU_0 * MU_0) * n_i * n_s * (ki * ki * ki) * (ks * ks * ks))
}

/// Detection polarization of one photon, in the (theta-hat, phi-hat) basis.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum DetectorPol {
    Theta,
    Phi,
    /// Complex unit vector `d`; the detected component is `d^* . F`.
    Vector([C64; 2]),
}

impl DetectorPol {
    #[inline]
    pub fn project(&self, f: &[C64; 2]) -> C64 {
        match self {
            DetectorPol::Theta => f[0],
            DetectorPol::Phi => f[1],
            DetectorPol::Vector(d) => d[0].conj() * f[0] + d[1].conj() * f[1],
        }
    }
}

/// Far-field amplitudes `[F_theta, F_phi]` of every mode along one direction.
pub fn far_amplitudes(scenario: &Scenario, theta: f64, phi: f64) -> Result<Vec<[C64; 2]>> {
    scenario
        .modes
        .iter()
        .map(|m| m.far_field.sample(theta, phi))
        .collect()
}

fn check_signal_frequency(scenario: &Scenario, omega_s: f64) -> Result<()> {
    if !(omega_s > 0.0 && omega_s < scenario.pump_omega) {
        return Err(Error::domain(format!(
            "signal frequency {omega_s} outside (0, omega_p = {})",
            scenario.pump_omega
        )));
    }
    Ok(())
}

/// Two-photon amplitude `sum_mn xi_mn(omega_s) F_m,d_i(r_i) F_n,d_s(r_s)`.
///
/// `table` must come from [`crate::overlap::xi_table`] on the same scenario;
/// the scenario is not re-validated here.
pub fn two_photon_amplitude(
    scenario: &Scenario,
    dir_i: (f64, f64),
    pol_i: DetectorPol,
    dir_s: (f64, f64),
    pol_s: DetectorPol,
    omega_s: f64,
    table: &OverlapTable,
) -> Result<C64> {
    check_signal_frequency(scenario, omega_s)?;
    let fi = far_amplitudes(scenario, dir_i.0, dir_i.1)?;
    let fs = far_amplitudes(scenario, dir_s.0, dir_s.1)?;
    amplitude_from(&fi, pol_i, &fs, pol_s, omega_s, table)
}

fn amplitude_from(
    fi: &[[C64; 2]],
    pol_i: DetectorPol,
    fs: &[[C64; 2]],
    pol_s: DetectorPol,
    omega_s: f64,
    table: &OverlapTable,
) -> Result<C64> {
    let mut t = C64::new(0.0, 0.0);
    for &(m, n) in &table.active {
        t += table.xi(m, n, omega_s)? * pol_i.project(&fi[m]) * pol_s.project(&fs[n]);
    }
    Ok(t)
}

fn polarization_pairs(pol: &Polarization) -> Vec<(DetectorPol, DetectorPol)> {
    match pol {
        Polarization::SumOverBasis => vec![
            (DetectorPol::Theta, DetectorPol::Theta),
            (DetectorPol::Theta, DetectorPol::Phi),
            (DetectorPol::Phi, DetectorPol::Theta),
            (DetectorPol::Phi, DetectorPol::Phi),
        ],
        Polarization::Fixed { idler, signal } => {
            vec![(DetectorPol::Vector(*idler), DetectorPol::Vector(*signal))]
        }
    }
}

/// Differential rate per unit solid angle of both photons and per unit
/// signal frequency, for an ideal detector.
pub fn differential_pair_rate(
    scenario: &Scenario,
    dir_i: (f64, f64),
    dir_s: (f64, f64),
    omega_s: f64,
    det: &DetectionConfig,
    table: &OverlapTable,
) -> Result<f64> {
    check_signal_frequency(scenario, omega_s)?;
    let c = prefactor_c(
        scenario.pump_omega,
        omega_s,
        scenario.n_idler,
        scenario.n_signal,
    )?;
    let fi = far_amplitudes(scenario, dir_i.0, dir_i.1)?;
    let fs = far_amplitudes(scenario, dir_s.0, dir_s.1)?;
    let mut sum = 0.0;
    for (pi, ps) in polarization_pairs(&det.polarization) {
        sum += amplitude_from(&fi, pi, &fs, ps, omega_s, table)?.norm_sqr();
    }
    Ok(c * sum)
}

#[derive(Clone, Debug, Serialize)]
pub struct PairContribution {
    pub m: usize,
    pub n: usize,
    pub label_m: String,
    pub label_n: String,
    /// Interference-inclusive share `Re[xi_mn sum_m'n' xi*_m'n' M M]`, so
    /// that contributions add up to the total.
    pub rate: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct QuadratureMetadata {
    pub n_theta: usize,
    pub n_phi: usize,
    pub angular_nodes: usize,
    pub omega_points: usize,
    /// Richardson estimate of the frequency-integration error.
    pub error_estimate: f64,
    pub converged: bool,
    /// No direction survives the NA cone and knife.
    pub empty_domain: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct RateResult {
    pub rate: f64,
    pub breakdown: Vec<PairContribution>,
    pub quadrature: QuadratureMetadata,
}

#[derive(Clone, Copy, Debug)]
pub struct RateOptions {
    pub order: QuadratureOrder,
    /// Relative tolerance on the frequency-integration error estimate.
    pub tolerance: f64,
}

impl Default for RateOptions {
    fn default() -> Self {
        Self {
            order: QuadratureOrder::default(),
            tolerance: 1e-3,
        }
    }
}

/// Collection-weighted Gram matrices of the far fields for one detection setup.
#[derive(Clone, Debug)]
pub struct CollectionKernel {
    pub n_modes: usize,
    pub gram_idler: Vec<C64>,
    pub gram_signal: Vec<C64>,
    pub quadrature: AngularQuadrature,
}

impl CollectionKernel {
    pub fn new(scenario: &Scenario, det: &DetectionConfig, order: QuadratureOrder) -> Result<Self> {
        det.validate()?;
        let quadrature = AngularQuadrature::for_detection(det, order);
        let nm = scenario.modes.len();
        let (pols_i, pols_s): (Vec<DetectorPol>, Vec<DetectorPol>) = match &det.polarization {
            Polarization::SumOverBasis => (
                vec![DetectorPol::Theta, DetectorPol::Phi],
                vec![DetectorPol::Theta, DetectorPol::Phi],
            ),
            Polarization::Fixed { idler, signal } => (
                vec![DetectorPol::Vector(*idler)],
                vec![DetectorPol::Vector(*signal)],
            ),
        };

        let tiles: Vec<(Vec<C64>, Vec<C64>)> = quadrature
            .nodes
            .par_chunks(TILE)
            .map(|chunk| {
                let mut gi = vec![C64::new(0.0, 0.0); nm * nm];
                let mut gs = vec![C64::new(0.0, 0.0); nm * nm];
                for node in chunk {
                    let w = node.weight * det.fiber_weight(node.theta, node.phi);
                    if w == 0.0 {
                        continue;
                    }
                    let f = far_amplitudes(scenario, node.theta, node.phi)?;
                    accumulate_gram(&mut gi, &f, &pols_i, w);
                    accumulate_gram(&mut gs, &f, &pols_s, w);
                }
                Ok((gi, gs))
            })
            .collect::<Result<_>>()?;

        let mut gram_idler = vec![C64::new(0.0, 0.0); nm * nm];
        let mut gram_signal = vec![C64::new(0.0, 0.0); nm * nm];
        for (gi, gs) in tiles {
            for k in 0..nm * nm {
                gram_idler[k] += gi[k];
                gram_signal[k] += gs[k];
            }
        }
        Ok(Self {
            n_modes: nm,
            gram_idler,
            gram_signal,
            quadrature,
        })
    }

    /// Angular-integrated coherent sum
    /// `sum_{mn,m'n'} xi_mn xi*_m'n' M^i_mm' M^s_nn'` and the per-pair shares.
    fn contract(&self, xi: &[C64]) -> (f64, Vec<f64>) {
        let nm = self.n_modes;
        let (mi, ms) = (&self.gram_idler, &self.gram_signal);
        // A_mn = sum_m'n' xi*_m'n' M^i_mm' M^s_nn'
        // first B_m'n = sum_n' xi*_m'n' M^s_nn'
        let mut b = vec![C64::new(0.0, 0.0); nm * nm];
        for mp in 0..nm {
            for n in 0..nm {
                let mut acc = C64::new(0.0, 0.0);
                for np in 0..nm {
                    acc += xi[mp * nm + np].conj() * ms[n * nm + np];
                }
                b[mp * nm + n] = acc;
            }
        }
        let mut shares = vec![0.0; nm * nm];
        let mut total = 0.0;
        for m in 0..nm {
            for n in 0..nm {
                let x = xi[m * nm + n];
                if x == C64::new(0.0, 0.0) {
                    continue;
                }
                let mut a = C64::new(0.0, 0.0);
                for mp in 0..nm {
                    a += mi[m * nm + mp] * b[mp * nm + n];
                }
                let share = (x * a).re;
                shares[m * nm + n] = share;
                total += share;
            }
        }
        (total, shares)
    }

    /// Detected rate density per unit signal frequency at `omega_s`, plus the
    /// per-pair shares (row-major over mode pairs).
    pub fn density(
        &self,
        scenario: &Scenario,
        det: &DetectionConfig,
        table: &OverlapTable,
        omega_s: f64,
    ) -> Result<(f64, Vec<f64>)> {
        let nm = self.n_modes;
        let filt = det.filter_transmission(scenario.pump_omega, omega_s);
        if filt == 0.0 || self.quadrature.is_empty() {
            return Ok((0.0, vec![0.0; nm * nm]));
        }
        let c = prefactor_c(
            scenario.pump_omega,
            omega_s,
            scenario.n_idler,
            scenario.n_signal,
        )?;
        let xi = table.xi_matrix(omega_s)?;
        let (total, mut shares) = self.contract(&xi);
        let scale = c * filt;
        shares.iter_mut().for_each(|s| *s *= scale);
        Ok(((total * scale).max(0.0), shares))
    }

    /// Signal-photon kernel `K_nn' = sum_mm' xi_mn xi*_m'n' M^i_mm'` at one frequency.
    pub fn signal_kernel(&self, table: &OverlapTable, omega_s: f64) -> Result<Vec<C64>> {
        let nm = self.n_modes;
        let xi = table.xi_matrix(omega_s)?;
        let mi = &self.gram_idler;
        let mut k = vec![C64::new(0.0, 0.0); nm * nm];
        for n in 0..nm {
            for np in 0..nm {
                let mut acc = C64::new(0.0, 0.0);
                for m in 0..nm {
                    for mp in 0..nm {
                        acc += xi[m * nm + n] * xi[mp * nm + np].conj() * mi[m * nm + mp];
                    }
                }
                k[n * nm + np] = acc;
            }
        }
        Ok(k)
    }
}

fn accumulate_gram(g: &mut [C64], f: &[[C64; 2]], pols: &[DetectorPol], w: f64) {
    let nm = f.len();
    for pol in pols {
        let p: Vec<C64> = f.iter().map(|fm| pol.project(fm)).collect();
        for m in 0..nm {
            for mp in 0..nm {
                g[m * nm + mp] += p[m] * p[mp].conj() * w;
            }
        }
    }
}

/// Check that `grid` is strictly increasing inside `(0, omega_p)`.
pub fn check_frequency_grid(scenario: &Scenario, grid: &[f64]) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::domain("empty frequency grid"));
    }
    if grid.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::domain("frequency grid must be strictly increasing"));
    }
    if !(grid[0] > 0.0 && grid[grid.len() - 1] < scenario.pump_omega) {
        return Err(Error::domain("frequency grid must lie inside (0, omega_p)"));
    }
    Ok(())
}

/// Per-frequency detected density and per-pair shares on `omega_grid`.
pub fn density_on_grid(
    scenario: &Scenario,
    det: &DetectionConfig,
    omega_grid: &[f64],
    table: &OverlapTable,
    kernel: &CollectionKernel,
) -> Result<Vec<(f64, Vec<f64>)>> {
    check_frequency_grid(scenario, omega_grid)?;
    omega_grid
        .par_iter()
        .map(|&w| kernel.density(scenario, det, table, w))
        .collect()
}

pub fn detected_pair_rate(
    scenario: &Scenario,
    det: &DetectionConfig,
    omega_grid: &[f64],
    table: &OverlapTable,
) -> Result<RateResult> {
    detected_pair_rate_with(scenario, det, omega_grid, table, &RateOptions::default())
}

pub fn detected_pair_rate_with(
    scenario: &Scenario,
    det: &DetectionConfig,
    omega_grid: &[f64],
    table: &OverlapTable,
    opts: &RateOptions,
) -> Result<RateResult> {
    scenario.ensure_valid()?;
    let kernel = CollectionKernel::new(scenario, det, opts.order)?;
    rate_from_kernel(scenario, det, omega_grid, table, &kernel, opts)
}

pub fn rate_from_kernel(
    scenario: &Scenario,
    det: &DetectionConfig,
    omega_grid: &[f64],
    table: &OverlapTable,
    kernel: &CollectionKernel,
    opts: &RateOptions,
) -> Result<RateResult> {
    let per_omega = density_on_grid(scenario, det, omega_grid, table, kernel)?;
    let nm = kernel.n_modes;
    let density: Vec<f64> = per_omega.iter().map(|(d, _)| *d).collect();
    let total = simpson_with_estimate(omega_grid, &density);

    let mut breakdown = Vec::new();
    for &(m, n) in &table.active {
        let ys: Vec<f64> = per_omega.iter().map(|(_, s)| s[m * nm + n]).collect();
        breakdown.push(PairContribution {
            m,
            n,
            label_m: table.labels[m].clone(),
            label_n: table.labels[n].clone(),
            rate: simpson_with_estimate(omega_grid, &ys).value,
        });
    }

    let rate = total.value.max(0.0);
    let converged = total.error_estimate <= opts.tolerance * rate.abs() || rate == 0.0;
    Ok(RateResult {
        rate,
        breakdown,
        quadrature: QuadratureMetadata {
            n_theta: opts.order.n_theta,
            n_phi: opts.order.n_phi,
            angular_nodes: kernel.quadrature.nodes.len(),
            omega_points: omega_grid.len(),
            error_estimate: total.error_estimate,
            converged,
            empty_domain: kernel.quadrature.is_empty(),
        },
    })
}
