//! Least-squares fit of `offset + amplitude * erf((x - x0) / m)` by damped
//! Gauss-Newton (Levenberg-Marquardt) iteration, with 95% confidence
//! half-widths from the linearized covariance at the optimum.

use nalgebra::{Matrix4, Vector4};
use serde::Serialize;
use statrs::function::erf::erf;

use crate::error::{Error, Result};

const MAX_ITER: usize = 200;
const STEP_TOL: f64 = 1e-10;
const Z95: f64 = 1.96;
const TWO_OVER_SQRT_PI: f64 = std::f64::consts::FRAC_2_SQRT_PI;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ErfFit {
    /// Slope parameter; always positive (the sign lives in `amplitude`).
    pub m: f64,
    pub x0: f64,
    pub amplitude: f64,
    pub offset: f64,
    /// 95% half-widths for `[m, x0, amplitude, offset]`.
    pub ci95: [f64; 4],
    /// Root-mean-square residual.
    pub residual_norm: f64,
    pub iterations: usize,
}

impl ErfFit {
    pub fn eval(&self, x: f64) -> f64 {
        erf_model(&[self.offset, self.amplitude, self.x0, self.m], x)
    }
}

/// `p = [offset, amplitude, x0, m]`.
fn erf_model(p: &[f64; 4], x: f64) -> f64 {
    p[0] + p[1] * erf((x - p[2]) / p[3])
}

fn jacobian_row(p: &[f64; 4], x: f64) -> Vector4<f64> {
    let z = (x - p[2]) / p[3];
    let g = TWO_OVER_SQRT_PI * (-z * z).exp();
    Vector4::new(1.0, erf(z), -p[1] * g / p[3], -p[1] * g * z / p[3])
}

fn cost(p: &[f64; 4], x: &[f64], y: &[f64]) -> f64 {
    x.iter()
        .zip(y)
        .map(|(&xi, &yi)| {
            let r = erf_model(p, xi) - yi;
            r * r
        })
        .sum()
}

fn normal_equations(p: &[f64; 4], x: &[f64], y: &[f64]) -> (Matrix4<f64>, Vector4<f64>) {
    let mut jtj = Matrix4::zeros();
    let mut jtr = Vector4::zeros();
    for (&xi, &yi) in x.iter().zip(y) {
        let j = jacobian_row(p, xi);
        let r = erf_model(p, xi) - yi;
        jtj += j * j.transpose();
        jtr += j * r;
    }
    (jtj, jtr)
}

/// First `x` where the piecewise-linear data crosses `level`.
fn crossing(x: &[f64], y: &[f64], level: f64) -> Option<f64> {
    x.windows(2).zip(y.windows(2)).find_map(|(xw, yw)| {
        let (a, b) = (yw[0] - level, yw[1] - level);
        if a == 0.0 {
            Some(xw[0])
        } else if a * b < 0.0 {
            Some(xw[0] + (xw[1] - xw[0]) * a / (a - b))
        } else {
            None
        }
    })
}

/// Fit the erf model to samples `(x, y)`; `x` must be sorted ascending.
pub fn fit_erf_points(x: &[f64], y: &[f64]) -> Result<ErfFit> {
    if x.len() != y.len() {
        return Err(Error::domain("fit input arrays differ in length"));
    }
    let n = x.len();
    if n < 5 {
        return Err(Error::domain("erf fit needs at least 5 points"));
    }
    if x.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::domain("scan positions must be strictly increasing"));
    }
    let (y_min, y_max) = y
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| {
            (a.min(v), b.max(v))
        });
    if !(y_max - y_min > 0.0) || !(y_max - y_min).is_finite() {
        return Err(Error::DegenerateFit("data shows no transition".into()));
    }

    // work in normalized coordinates
    let x_mid = 0.5 * (x[0] + x[n - 1]);
    let x_scale = 0.5 * (x[n - 1] - x[0]);
    let y_scale = y_max - y_min;
    let xs: Vec<f64> = x.iter().map(|v| (v - x_mid) / x_scale).collect();
    let ys: Vec<f64> = y.iter().map(|v| (v - y_min) / y_scale).collect();

    let k = (n / 4).max(1);
    let head = ys[..k].iter().sum::<f64>() / k as f64;
    let tail = ys[n - k..].iter().sum::<f64>() / k as f64;
    let sign = if tail >= head { 1.0 } else { -1.0 };
    let oriented: Vec<f64> = ys
        .iter()
        .map(|v| if sign > 0.0 { *v } else { 1.0 - v })
        .collect();
    let x0 = crossing(&xs, &oriented, 0.5).unwrap_or(0.0);
    let m = match (
        crossing(&xs, &oriented, 0.24),
        crossing(&xs, &oriented, 0.76),
    ) {
        (Some(a), Some(b)) if b > a => (b - a) / (2.0 * 0.4769),
        _ => 0.5,
    };
    let mut p = [0.5, 0.5 * sign, x0, m.max(1e-3)];

    let mut lambda = 1e-3;
    let mut c = cost(&p, &xs, &ys);
    let mut trace = vec![p];
    let mut converged = false;
    let mut iterations = 0;
    while iterations < MAX_ITER {
        iterations += 1;
        let (jtj, jtr) = normal_equations(&p, &xs, &ys);
        let mut accepted = false;
        let mut step_rel = f64::INFINITY;
        while lambda < 1e20 {
            let mut a = jtj;
            for d in 0..4 {
                a[(d, d)] += lambda * jtj[(d, d)].max(1e-12);
            }
            let Some(delta) = a.lu().solve(&(-jtr)) else {
                lambda *= 10.0;
                continue;
            };
            let trial = [
                p[0] + delta[0],
                p[1] + delta[1],
                p[2] + delta[2],
                p[3] + delta[3],
            ];
            let tc = cost(&trial, &xs, &ys);
            if tc.is_finite() && tc <= c {
                let pn = Vector4::from(p).norm();
                step_rel = delta.norm() / pn.max(1e-300);
                p = trial;
                c = tc;
                lambda = (lambda / 10.0).max(1e-12);
                accepted = true;
                break;
            }
            lambda *= 10.0;
        }
        trace.push(p);
        if !accepted {
            // no descent direction left: stationary if the gradient vanishes
            let (_, g) = normal_equations(&p, &xs, &ys);
            converged = g.norm() <= 1e-10 * (1.0 + c.sqrt());
            break;
        }
        if step_rel < STEP_TOL {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::NonConvergence { iterations, trace });
    }

    let (jtj, _) = normal_equations(&p, &xs, &ys);
    let s2 = c / (n as f64 - 4.0).max(1.0);
    let cov = jtj
        .try_inverse()
        .ok_or_else(|| Error::DegenerateFit("singular normal matrix at the optimum".into()))?;
    let se: Vec<f64> = (0..4).map(|d| (s2 * cov[(d, d)]).max(0.0).sqrt()).collect();

    let (mut amp, mut m) = (p[1], p[3]);
    if m < 0.0 {
        m = -m;
        amp = -amp;
    }
    let fit = ErfFit {
        m: m * x_scale,
        x0: x_mid + p[2] * x_scale,
        amplitude: amp * y_scale,
        offset: y_min + p[0] * y_scale,
        ci95: [
            Z95 * se[3] * x_scale,
            Z95 * se[2] * x_scale,
            Z95 * se[1] * y_scale,
            Z95 * se[0] * y_scale,
        ],
        residual_norm: (c / n as f64).sqrt() * y_scale,
        iterations,
    };
    if !(fit.amplitude.abs() > fit.ci95[2]) {
        return Err(Error::DegenerateFit(format!(
            "amplitude {} not distinguishable from zero (95% half-width {})",
            fit.amplitude, fit.ci95[2]
        )));
    }
    Ok(fit)
}
