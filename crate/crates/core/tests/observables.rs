mod common;

use common::{pair_band, rel, table};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use spdc_core::emission::{detected_pair_rate, RateOptions};
use spdc_core::fit::fit_erf_points;
use spdc_core::model::{DetectionConfig, FiberMode, C64};
use spdc_core::observables::{
    farfield_map, fit_erf, knife_scan, scaling_sweep, spectrum, SweepOptions,
};
use spdc_core::quadrature::linspace;
use spdc_core::testbed::{default_sweep_scales, preset, sweep_family};
use statrs::function::erf::erf;

#[test]
fn spectrum_integrates_to_rate() {
    let s = preset("two-mode", 0).unwrap();
    let det = DetectionConfig::default();
    let grid = pair_band(&s, &det, 201);
    let t = table(&s, &grid);
    let sp = spectrum(&s, &det, &grid, &t).unwrap();
    assert!(sp.density.iter().all(|d| *d >= 0.0));
    let r = detected_pair_rate(&s, &det, &grid, &t).unwrap().rate;
    assert!(rel(sp.integral(), r) < 1e-8);
    let peak = sp.density.iter().cloned().fold(0.0, f64::max);
    let at = sp.density.iter().position(|&d| d == peak).unwrap();
    assert!((sp.wavelength[at] - 1450e-9).abs() < 1e-9);
}

fn peak_to_background(offset: f64) -> f64 {
    let s = preset("two-mode", 0).unwrap();
    // fiber-face coordinates: short effective focal length, small mode field
    let det = DetectionConfig {
        focal_length: 12.5e-6,
        magnification: 2.0,
        fiber: Some(FiberMode {
            sigma: 5.2e-6,
            offset: [offset, 0.0],
        }),
        ..DetectionConfig::default()
    };
    let grid = pair_band(&s, &det, 401);
    let sp = spectrum(&s, &det, &grid, &table(&s, &grid)).unwrap();
    let max = sp.density.iter().cloned().fold(0.0, f64::max);
    let mean = sp.density.iter().sum::<f64>() / sp.density.len() as f64;
    max / mean
}

#[test]
fn fiber_offset_lowers_peak_to_background() {
    let centered = peak_to_background(0.0);
    let shifted = peak_to_background(2e-6);
    assert!(shifted < centered, "{shifted} vs {centered}");
}

#[test]
fn z_dipole_map_follows_sin_squared() {
    let s = preset("z-dipole", 0).unwrap();
    let det = DetectionConfig::cone(0.7);
    let grid = pair_band(&s, &det, 101);
    let t = table(&s, &grid);
    let map = farfield_map(&s, &det, &grid, (91, 24), &t, &RateOptions::default()).unwrap();
    let theta_max = det.theta_max();
    let mut k_ref = None;
    for (it, &th) in map.theta.iter().enumerate() {
        for ip in 0..map.phi.len() {
            let v = map.at(it, ip);
            if th > theta_max {
                assert_eq!(v, 0.0);
            } else if th > 0.05 {
                let k = v / th.sin().powi(2);
                let k0 = *k_ref.get_or_insert(k);
                assert!(rel(k, k0) < 1e-8, "theta {th}: {k:e} vs {k0:e}");
            }
        }
    }
}

#[test]
fn symmetric_scenario_map_independent_of_phi() {
    let s = preset("z-dipole", 0).unwrap();
    let det = DetectionConfig::default();
    let grid = pair_band(&s, &det, 101);
    let t = table(&s, &grid);
    let map = farfield_map(&s, &det, &grid, (46, 36), &t, &RateOptions::default()).unwrap();
    for it in 0..map.theta.len() {
        let v0 = map.at(it, 0);
        for ip in 1..map.phi.len() {
            let v = map.at(it, ip);
            assert!(v == v0 || rel(v, v0) < 1e-8);
        }
    }
}

#[test]
fn tiny_cone_map_supported_near_axis() {
    let s = preset("single-dipole", 0).unwrap();
    let det = DetectionConfig::cone(0.05);
    let grid = pair_band(&s, &det, 51);
    let map = farfield_map(
        &s,
        &det,
        &grid,
        (181, 8),
        &table(&s, &grid),
        &RateOptions::default(),
    )
    .unwrap();
    for (it, &th) in map.theta.iter().enumerate() {
        for ip in 0..map.phi.len() {
            if th > 0.05_f64.asin() {
                assert_eq!(map.at(it, ip), 0.0);
            }
        }
    }
    assert!(map.at(0, 0) > 0.0);
}

#[test]
fn knife_scan_is_monotone_and_erf_shaped() {
    let s = preset("single-dipole", 0).unwrap();
    let det = DetectionConfig::default();
    let grid = pair_band(&s, &det, 101);
    let t = table(&s, &grid);
    let pos = linspace(-2.5e-3, 2.5e-3, 41);
    let scan = knife_scan(&s, &det, &pos, &grid, &t, &RateOptions::default()).unwrap();
    let top = scan.rates.iter().cloned().fold(0.0, f64::max);
    // the blocked region shrinks as the edge moves toward +x
    for w in scan.rates.windows(2) {
        assert!(w[1] >= w[0] - 1e-9 * top);
    }
    let open = detected_pair_rate(&s, &det, &grid, &t).unwrap().rate;
    assert!(rel(scan.rates[40], open) < 1e-12);
    assert_eq!(scan.rates[0], 0.0);
    let f = fit_erf(&scan).unwrap();
    assert!(f.m > 0.0 && f.ci95.iter().all(|c| *c >= 0.0));
    assert!(f.residual_norm < 0.01 * f.amplitude.abs(), "{f:?}");
}

#[test]
fn fit_recovers_its_own_model() {
    let x = linspace(-3.0, 3.0, 41);
    let y: Vec<f64> = x
        .iter()
        .map(|&v| 0.5 + 0.5 * erf((v - 0.1) / 0.7))
        .collect();
    let f = fit_erf_points(&x, &y).unwrap();
    assert!((f.m / 0.7 - 1.0).abs() < 1e-6 && (f.x0 / 0.1 - 1.0).abs() < 1e-6);
}

/// Fraction of `reps` noisy fits (1% additive noise) whose 95% interval on
/// `m` covers the true value.
fn coverage(seed: u64, reps: usize) -> f64 {
    let x = linspace(-3.0, 3.0, 41);
    let noise = Normal::new(0.0, 0.01).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut covered = 0;
    for _ in 0..reps {
        let y: Vec<f64> = x
            .iter()
            .map(|&v| 0.5 + 0.5 * erf((v - 0.1) / 0.7) + noise.sample(&mut rng))
            .collect();
        let f = fit_erf_points(&x, &y).unwrap();
        if (f.m - 0.7).abs() <= f.ci95[0] {
            covered += 1;
        }
    }
    covered as f64 / reps as f64
}

#[test]
fn fit_confidence_interval_coverage() {
    let c = coverage(1, 100);
    assert!(c >= 0.90, "covered {c}");
}

#[test]
fn fit_confidence_interval_is_calibrated() {
    let c = coverage(99, 2000);
    assert!((0.93..=0.97).contains(&c), "coverage {c}");
}

#[test]
fn sweep_peaks_at_zero_detuning_and_scales_with_overlap() {
    let det = DetectionConfig::default();
    let family = sweep_family(&default_sweep_scales(), C64::new(1.0, 0.0)).unwrap();
    let grid = pair_band(&family[0].scenario, &det, 401);
    let pts = scaling_sweep(&family, &det, &grid, &SweepOptions::default()).unwrap();
    let best = pts
        .iter()
        .max_by(|a, b| a.normalized_rate.total_cmp(&b.normalized_rate))
        .unwrap();
    assert_eq!(best.fs, 1.0);
    assert_eq!(best.detuning, 0.0);
    let g0 = pts[0].g11_abs;
    assert!(pts.iter().all(|p| rel(p.g11_abs, g0) < 1e-12));

    let doubled = sweep_family(&[1.01], C64::new(2f64.sqrt(), 0.0)).unwrap();
    let single = sweep_family(&[1.01], C64::new(1.0, 0.0)).unwrap();
    let a = scaling_sweep(&single, &det, &grid, &SweepOptions::default())
        .unwrap()
        .remove(0);
    let b = scaling_sweep(&doubled, &det, &grid, &SweepOptions::default())
        .unwrap()
        .remove(0);
    assert!(rel(b.g11_abs, 2.0 * a.g11_abs) < 1e-12);
    assert!(rel(b.normalized_rate, 4.0 * a.normalized_rate) < 1e-10);
}
