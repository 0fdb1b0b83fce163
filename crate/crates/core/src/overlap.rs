//! Nonlinear spatial overlap, complex detuning factor and the dispersive
//! modal-overlap coefficients built from them.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{Chi2Map, ComplexFrequency, NearFieldGrid, QnmMode, Scenario, C64};

/// Default relative threshold below which a mode pair is dropped from the
/// amplitude sum.
pub const DEFAULT_DROP_THRESHOLD: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SpatialOverlap {
    pub value: C64,
    /// Set when the susceptibility mask selects no node at all.
    pub empty_support: bool,
}

fn check_congruent(a: &NearFieldGrid, b: &NearFieldGrid, what: &str) -> Result<()> {
    if a.geometry != b.geometry || a.values.len() != b.values.len() {
        return Err(Error::GridMismatch(format!("{what}: grids differ")));
    }
    Ok(())
}

/// Midpoint-rule overlap `sum_abc int chi_abc E_m,a E_n,b E_p,c dr`.
///
/// Fields are paired bilinearly; nothing is conjugated.
pub fn spatial_overlap(
    mode_m: &QnmMode,
    mode_n: &QnmMode,
    chi2: &Chi2Map,
    pump: &NearFieldGrid,
) -> Result<SpatialOverlap> {
    check_congruent(&mode_m.near_field, pump, "mode/pump")?;
    check_congruent(&mode_n.near_field, pump, "mode/pump")?;
    if chi2.geometry != pump.geometry || chi2.mask.len() != pump.values.len() {
        return Err(Error::GridMismatch(
            "susceptibility/pump: grids differ".into(),
        ));
    }
    let em = &mode_m.near_field.values;
    let en = &mode_n.near_field.values;
    let ep = &pump.values;

    let mut sum = C64::new(0.0, 0.0);
    let mut touched = false;
    for node in 0..ep.len() {
        let Some(chi) = chi2.tensor_at(node) else {
            continue;
        };
        touched = true;
        let (a_vec, b_vec, p_vec) = (&em[node], &en[node], &ep[node]);
        for a in 0..3 {
            for b in 0..3 {
                let ab = a_vec[a] * b_vec[b];
                let mut inner = C64::new(0.0, 0.0);
                for c in 0..3 {
                    let x = chi.get(a, b, c);
                    if x != 0.0 {
                        inner += p_vec[c] * x;
                    }
                }
                sum += ab * inner;
            }
        }
    }
    Ok(SpatialOverlap {
        value: sum * pump.geometry.cell_volume(),
        empty_support: !touched,
    })
}

/// Complex detuning factor
/// `(omega_p - omega_s - w_m) w_m (omega_s - w_n) w_n`.
pub fn spectral_factor(
    ef_m: ComplexFrequency,
    ef_n: ComplexFrequency,
    omega_p: f64,
    omega_s: f64,
) -> C64 {
    let wm = ef_m.value();
    let wn = ef_n.value();
    (omega_p - omega_s - wm) * wm * (omega_s - wn) * wn
}

pub fn modal_overlap_coefficient(g: C64, s: C64) -> Result<C64> {
    if s.norm_sqr() == 0.0 {
        return Err(Error::Singularity);
    }
    Ok(g / s)
}

/// One reported coefficient curve.
#[derive(Clone, Debug, Serialize)]
pub struct XiCurve {
    pub m: usize,
    pub n: usize,
    pub label_m: String,
    pub label_n: String,
    /// `max |xi|` over the frequency grid; the ranking key.
    pub peak: f64,
    pub values: Vec<C64>,
}

#[derive(Clone, Debug)]
pub struct TableOptions {
    pub top_k: usize,
    /// Pairs whose peak `|xi|` falls below this fraction of the leading
    /// pair are left out of the amplitude sum. Zero keeps every pair.
    pub drop_threshold: f64,
}

impl Default for TableOptions {
    fn default() -> Self {
        Self {
            top_k: 9,
            drop_threshold: DEFAULT_DROP_THRESHOLD,
        }
    }
}

/// Spatial overlaps for every ordered mode pair plus ranked coefficient curves.
#[derive(Clone, Debug)]
pub struct OverlapTable {
    pub labels: Vec<String>,
    pub eigenfrequencies: Vec<ComplexFrequency>,
    pub omega_p: f64,
    /// Row-major `G[m * n_modes + n]`.
    pub g: Vec<C64>,
    /// Ordered pairs retained in the amplitude sum.
    pub active: Vec<(usize, usize)>,
    pub omega_s: Vec<f64>,
    pub curves: Vec<XiCurve>,
    /// Set when the susceptibility mask is empty (every overlap is zero).
    pub empty_support: bool,
}

impl OverlapTable {
    pub fn n_modes(&self) -> usize {
        self.labels.len()
    }

    pub fn g(&self, m: usize, n: usize) -> C64 {
        self.g[m * self.n_modes() + n]
    }

    pub fn spectral_factor(&self, m: usize, n: usize, omega_s: f64) -> C64 {
        spectral_factor(
            self.eigenfrequencies[m],
            self.eigenfrequencies[n],
            self.omega_p,
            omega_s,
        )
    }

    pub fn xi(&self, m: usize, n: usize, omega_s: f64) -> Result<C64> {
        modal_overlap_coefficient(self.g(m, n), self.spectral_factor(m, n, omega_s))
    }

    /// Dense `xi[m * n_modes + n]` at `omega_s`; inactive pairs are zero.
    pub fn xi_matrix(&self, omega_s: f64) -> Result<Vec<C64>> {
        let nm = self.n_modes();
        let mut out = vec![C64::new(0.0, 0.0); nm * nm];
        for &(m, n) in &self.active {
            out[m * nm + n] = self.xi(m, n, omega_s)?;
        }
        Ok(out)
    }

    /// Copy of the table whose amplitude sum keeps only the listed pairs.
    pub fn restricted(&self, pairs: &[(usize, usize)]) -> Self {
        Self {
            active: self
                .active
                .iter()
                .copied()
                .filter(|p| pairs.contains(p))
                .collect(),
            ..self.clone()
        }
    }
}

/// All pair overlaps of a scenario. With a susceptibility symmetric in its
/// first two indices only `m <= n` is computed and mirrored.
pub fn overlap_matrix(scenario: &Scenario) -> Result<(Vec<C64>, bool)> {
    let modes = &scenario.modes;
    let nm = modes.len();
    let symmetric = scenario
        .chi2
        .regions
        .iter()
        .all(|t| t.is_first_pair_symmetric());
    let pairs: Vec<(usize, usize)> = (0..nm)
        .flat_map(|m| (0..nm).map(move |n| (m, n)))
        .filter(|&(m, n)| !symmetric || m <= n)
        .collect();
    let values: Vec<SpatialOverlap> = pairs
        .par_iter()
        .map(|&(m, n)| spatial_overlap(&modes[m], &modes[n], &scenario.chi2, &scenario.pump_field))
        .collect::<Result<_>>()?;

    let mut g = vec![C64::new(0.0, 0.0); nm * nm];
    let mut empty = false;
    for (&(m, n), v) in pairs.iter().zip(&values) {
        g[m * nm + n] = v.value;
        if symmetric {
            g[n * nm + m] = v.value;
        }
        empty |= v.empty_support;
    }
    Ok((g, empty))
}

pub fn xi_table(scenario: &Scenario, omega_s_grid: &[f64], top_k: usize) -> Result<OverlapTable> {
    xi_table_with(
        scenario,
        omega_s_grid,
        &TableOptions {
            top_k,
            ..TableOptions::default()
        },
    )
}

pub fn xi_table_with(
    scenario: &Scenario,
    omega_s_grid: &[f64],
    opts: &TableOptions,
) -> Result<OverlapTable> {
    scenario.ensure_valid()?;
    if omega_s_grid.is_empty() {
        return Err(Error::domain("empty frequency grid"));
    }
    if opts.top_k == 0 {
        return Err(Error::domain("top_k must be at least 1"));
    }
    let (g, empty_support) = overlap_matrix(scenario)?;
    let nm = scenario.modes.len();
    let mut table = OverlapTable {
        labels: scenario.modes.iter().map(|m| m.label.clone()).collect(),
        eigenfrequencies: scenario.modes.iter().map(|m| m.eigenfrequency).collect(),
        omega_p: scenario.pump_omega,
        g,
        active: Vec::new(),
        omega_s: omega_s_grid.to_vec(),
        curves: Vec::new(),
        empty_support,
    };

    let ordered: Vec<(usize, usize)> = (0..nm).flat_map(|m| (0..nm).map(move |n| (m, n))).collect();
    let curves: Vec<Vec<C64>> = ordered
        .par_iter()
        .map(|&(m, n)| omega_s_grid.iter().map(|&w| table.xi(m, n, w)).collect())
        .collect::<Result<_>>()?;
    let peaks: Vec<f64> = curves
        .iter()
        .map(|c| c.iter().map(|z| z.norm()).fold(0.0, f64::max))
        .collect();

    let lead = peaks.iter().copied().fold(0.0, f64::max);
    let unordered_peak = |m: usize, n: usize| peaks[m * nm + n].max(peaks[n * nm + m]);
    table.active = ordered
        .iter()
        .copied()
        .filter(|&(m, n)| {
            opts.drop_threshold <= 0.0 || unordered_peak(m, n) >= opts.drop_threshold * lead
        })
        .collect();

    // one curve per unordered pair when exchange-symmetric, else both orderings
    let mut reported: Vec<usize> = ordered
        .iter()
        .enumerate()
        .filter(|&(_, &(m, n))| m <= n || table.g(m, n) != table.g(n, m))
        .map(|(i, _)| i)
        .collect();
    reported.sort_by(|&a, &b| peaks[b].total_cmp(&peaks[a]).then(a.cmp(&b)));
    reported.truncate(opts.top_k);

    table.curves = reported
        .into_iter()
        .map(|i| {
            let (m, n) = ordered[i];
            XiCurve {
                m,
                n,
                label_m: table.labels[m].clone(),
                label_n: table.labels[n].clone(),
                peak: peaks[i],
                values: curves[i].clone(),
            }
        })
        .collect();
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Chi2Tensor, FarFieldAmplitude, GridGeometry};
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn zero() -> C64 {
        C64::new(0.0, 0.0)
    }

    fn unit_cube(n: usize) -> GridGeometry {
        let h = 1.0 / n as f64;
        GridGeometry {
            origin: [h / 2.0; 3],
            spacing: [h; 3],
            shape: [n; 3],
        }
    }

    fn mode_from(geo: GridGeometry, f: impl FnMut([f64; 3]) -> [C64; 3]) -> QnmMode {
        QnmMode {
            label: "m".into(),
            eigenfrequency: ComplexFrequency::new(1.0, 0.1),
            near_field: NearFieldGrid::from_fn(geo, f),
            far_field: FarFieldAmplitude::from_fn(vec![0.0], vec![0.0], |_, _| [zero(), zero()]),
        }
    }

    fn z_const(v: f64) -> impl FnMut([f64; 3]) -> [C64; 3] {
        move |_| [zero(), zero(), C64::new(v, 0.0)]
    }

    #[test]
    fn constant_integrand_unit_volume() {
        let geo = unit_cube(4);
        let m = mode_from(geo, z_const(1.0));
        let pump = NearFieldGrid::from_fn(geo, z_const(1.0));
        let chi = Chi2Map::uniform(geo, Chi2Tensor::zzz(1.0));
        let g = spatial_overlap(&m, &m, &chi, &pump).unwrap();
        assert_relative_eq!(g.value.re, 1.0, epsilon = 1e-14);
        assert_eq!(g.value.im, 0.0);
        assert!(!g.empty_support);
    }

    #[test]
    fn orthogonal_pump_gives_zero() {
        let geo = unit_cube(3);
        let m = mode_from(geo, z_const(1.0));
        let pump = NearFieldGrid::from_fn(geo, |_| [C64::new(1.0, 0.0), zero(), zero()]);
        let chi = Chi2Map::uniform(geo, Chi2Tensor::zzz(1.0));
        assert_eq!(spatial_overlap(&m, &m, &chi, &pump).unwrap().value, zero());
    }

    #[test]
    fn linear_profile_midpoint_exact() {
        let geo = unit_cube(5);
        let m = mode_from(geo, |p| [zero(), zero(), C64::new(p[2], 0.0)]);
        let n = mode_from(geo, z_const(1.0));
        let pump = NearFieldGrid::from_fn(geo, z_const(1.0));
        let chi = Chi2Map::uniform(geo, Chi2Tensor::zzz(1.0));
        let g = spatial_overlap(&m, &n, &chi, &pump).unwrap();
        assert_relative_eq!(g.value.re, 0.5, epsilon = 1e-14);
    }

    #[test]
    fn empty_mask_flags_and_returns_zero() {
        let geo = unit_cube(3);
        let m = mode_from(geo, z_const(1.0));
        let pump = NearFieldGrid::from_fn(geo, z_const(1.0));
        let mut chi = Chi2Map::uniform(geo, Chi2Tensor::zzz(1.0));
        chi.mask.iter_mut().for_each(|v| *v = 0);
        let g = spatial_overlap(&m, &m, &chi, &pump).unwrap();
        assert_eq!(g.value, zero());
        assert!(g.empty_support);
    }

    #[test]
    fn mismatched_grid_rejected() {
        let m = mode_from(unit_cube(3), z_const(1.0));
        let pump = NearFieldGrid::from_fn(unit_cube(4), z_const(1.0));
        let chi = Chi2Map::uniform(unit_cube(4), Chi2Tensor::zzz(1.0));
        assert!(matches!(
            spatial_overlap(&m, &m, &chi, &pump),
            Err(Error::GridMismatch(_))
        ));
    }

    #[test]
    fn mask_locality() {
        let geo = unit_cube(6);
        let mut chi = Chi2Map::uniform(geo, Chi2Tensor::zzz(2.0));
        let inside = |p: [f64; 3]| p.iter().all(|&x| x > 0.3 && x < 0.7);
        for (i, v) in chi.mask.iter_mut().enumerate() {
            if !inside(geo.position_of(i)) {
                *v = 0;
            }
        }
        let pump = NearFieldGrid::from_fn(geo, z_const(1.5));
        let m = mode_from(geo, |p| [zero(), zero(), C64::new(p[0] + 1.0, p[1])]);
        let base = spatial_overlap(&m, &m, &chi, &pump).unwrap().value;
        let m2 = mode_from(geo, |p| {
            if inside(p) {
                [zero(), zero(), C64::new(p[0] + 1.0, p[1])]
            } else {
                [C64::new(9.0, -3.0), C64::new(1.0, 1.0), C64::new(-4.0, 2.0)]
            }
        });
        assert_eq!(spatial_overlap(&m2, &m2, &chi, &pump).unwrap().value, base);
    }

    #[test]
    fn midpoint_second_order() {
        // integrand sin(pi x) sin(pi y) sin(pi z) on the unit cube
        let exact = (2.0 / PI).powi(3);
        let err = |n: usize| {
            let geo = unit_cube(n);
            let m = mode_from(geo, |p| {
                let v = (PI * p[0]).sin() * (PI * p[1]).sin() * (PI * p[2]).sin();
                [zero(), zero(), C64::new(v, 0.0)]
            });
            let one = mode_from(geo, z_const(1.0));
            let pump = NearFieldGrid::from_fn(geo, z_const(1.0));
            let chi = Chi2Map::uniform(geo, Chi2Tensor::zzz(1.0));
            (spatial_overlap(&m, &one, &chi, &pump).unwrap().value.re - exact).abs()
        };
        for n in [8, 16] {
            let ratio = err(n) / err(2 * n);
            assert!((3.8..=4.2).contains(&ratio), "ratio {ratio}");
        }
    }

    #[test]
    fn spectral_factor_examples() {
        let w = ComplexFrequency::new(1.0, 0.1);
        let s = spectral_factor(w, w, 2.0, 1.0);
        assert_relative_eq!(s.re, -0.0099, epsilon = 1e-15);
        assert_relative_eq!(s.im, 0.002, epsilon = 1e-15);

        let s = spectral_factor(
            ComplexFrequency::new(1.2, 0.05),
            ComplexFrequency::new(0.8, 0.02),
            2.0,
            0.8,
        );
        assert_relative_eq!(s.re, -0.000959, epsilon = 1e-15);
        assert_relative_eq!(s.im, 0.000064, epsilon = 1e-15);

        let real = ComplexFrequency::new(1.0, 0.0);
        assert_eq!(spectral_factor(real, real, 2.0, 1.0), zero());
        assert!(matches!(
            modal_overlap_coefficient(C64::new(1.0, 0.0), spectral_factor(real, real, 2.0, 1.0)),
            Err(Error::Singularity)
        ));
    }

    #[test]
    fn coefficient_examples() {
        let c = |re, im| C64::new(re, im);
        assert_eq!(
            modal_overlap_coefficient(c(1.0, 0.0), c(2.0, 0.0)).unwrap(),
            c(0.5, 0.0)
        );
        assert_eq!(
            modal_overlap_coefficient(c(0.0, 0.0), c(0.3, -2.0)).unwrap(),
            c(0.0, 0.0)
        );
        assert_eq!(
            modal_overlap_coefficient(c(1.0, 1.0), c(0.0, 1.0)).unwrap(),
            c(1.0, -1.0)
        );
    }

    proptest! {
        #[test]
        fn exchange_identity(
            wm in 0.5f64..1.5, qm in 2.0f64..200.0,
            wn in 0.5f64..1.5, qn in 2.0f64..200.0,
            wp in 1.5f64..2.5, ws in 0.2f64..2.3,
        ) {
            let m = ComplexFrequency::new(wm, wm / (2.0 * qm));
            let n = ComplexFrequency::new(wn, wn / (2.0 * qn));
            let a = spectral_factor(n, m, wp, wp - ws);
            let b = spectral_factor(m, n, wp, ws);
            prop_assert!((a - b).norm() <= 1e-12 * b.norm());
        }
    }
}
