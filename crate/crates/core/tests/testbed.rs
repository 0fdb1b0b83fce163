mod common;

use common::{pair_band, rel, table};
use spdc_core::emission::detected_pair_rate;
use spdc_core::model::{DetectionConfig, C64};
use spdc_core::testbed::{monte_carlo_integrate, monte_carlo_rate, preset, McDomain};

/// Rate after scaling the single mode's near and far fields by `k`.
fn scaled_rate(k: f64) -> f64 {
    let mut s = preset("single-dipole", 0).unwrap();
    let m = &mut s.modes[0];
    m.near_field = m.near_field.scaled(C64::new(k, 0.0));
    m.far_field = m.far_field.scaled(C64::new(k, 0.0));
    let det = DetectionConfig::default();
    let grid = pair_band(&s, &det, 101);
    detected_pair_rate(&s, &det, &grid, &table(&s, &grid))
        .unwrap()
        .rate
}

#[test]
fn joint_field_scaling_exponent_is_eight() {
    let r1 = scaled_rate(1.0);
    for k in [2.0, 3.0] {
        let p = (scaled_rate(k) / r1).ln() / f64::ln(k);
        assert!((p - 8.0).abs() < 1e-9, "exponent {p}");
    }
}

#[test]
fn monte_carlo_agrees_with_quadrature() {
    let s = preset("single-dipole", 0).unwrap();
    let det = DetectionConfig::cone(0.7);
    let grid = pair_band(&s, &det, 201);
    let t = table(&s, &grid);
    let q = detected_pair_rate(&s, &det, &grid, &t).unwrap().rate;
    let mc = monte_carlo_rate(&s, &det, &t, (grid[0], grid[200]), 3, 200_000).unwrap();
    assert!((q - mc.estimate).abs() < 3.0 * mc.stderr, "{q:e} vs {mc:?}");
    assert!(monte_carlo_rate(&s, &det, &t, (grid[0], grid[200]), 3, 999).is_err());
}

#[test]
fn monte_carlo_is_seed_deterministic() {
    let d = McDomain {
        omega_min: 1.0,
        omega_max: 2.0,
        theta_max: 0.5,
    };
    let f = |w: f64, a: (f64, f64), b: (f64, f64)| Ok(w * a.0.cos() + b.1.sin());
    let a = monte_carlo_integrate(&d, 42, 20_000, f).unwrap();
    let b = monte_carlo_integrate(&d, 42, 20_000, f).unwrap();
    assert_eq!(a.estimate, b.estimate);
    assert_eq!(a.stderr, b.stderr);
    let c = monte_carlo_integrate(&d, 43, 20_000, f).unwrap();
    assert_ne!(a.estimate, c.estimate);
    assert!(rel(a.estimate, c.estimate) < 0.05);
}
