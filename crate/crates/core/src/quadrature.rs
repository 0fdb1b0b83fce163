//! Integration rules: Gauss-Legendre in cos(theta) times trapezoid in phi over
//! the collection cone, and composite Simpson over frequency.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::model::{BlockedSide, DetectionConfig};

/// Gauss-Legendre nodes and weights on [-1, 1].
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n > 0, "Gauss-Legendre order must be positive");
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre_with_derivative(n, x);
        if d != 0.0 {
            dp = d;
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let (mut p0, mut p1) = (1.0, x);
    for k in 2..=n {
        let k = k as f64;
        let p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = p2;
    }
    if n == 0 {
        return (1.0, 0.0);
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// Gauss-Legendre rule mapped onto `[a, b]`.
fn gl_interval(n: usize, a: f64, b: f64) -> impl Iterator<Item = (f64, f64)> {
    let (x, w) = gauss_legendre(n);
    let half = 0.5 * (b - a);
    let mid = 0.5 * (a + b);
    x.into_iter()
        .zip(w)
        .map(move |(x, w)| (mid + half * x, half * w))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuadratureOrder {
    pub n_theta: usize,
    pub n_phi: usize,
}

impl Default for QuadratureOrder {
    fn default() -> Self {
        Self {
            n_theta: 32,
            n_phi: 64,
        }
    }
}

impl QuadratureOrder {
    pub fn doubled(&self) -> Self {
        Self {
            n_theta: 2 * self.n_theta,
            n_phi: 2 * self.n_phi,
        }
    }
}

impl std::str::FromStr for QuadratureOrder {
    type Err = String;

    /// Parses `"32x64"` (theta x phi).
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (a, b) = s
            .split_once(['x', 'X'])
            .ok_or_else(|| format!("quadrature order {s:?} is not of the form NTHETAxNPHI"))?;
        let parse = |v: &str| {
            v.trim()
                .parse::<usize>()
                .ok()
                .filter(|&n| n > 0)
                .ok_or_else(|| format!("invalid quadrature order component {v:?}"))
        };
        Ok(Self {
            n_theta: parse(a)?,
            n_phi: parse(b)?,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AngularNode {
    pub theta: f64,
    pub phi: f64,
    /// Solid-angle weight (sr).
    pub weight: f64,
}

/// Solid-angle rule over the collection cone, restricted to the directions
/// that clear the knife edge when one is present.
#[derive(Clone, Debug)]
pub struct AngularQuadrature {
    pub theta_max: f64,
    pub order: QuadratureOrder,
    pub nodes: Vec<AngularNode>,
}

impl AngularQuadrature {
    /// Full cone `0 <= theta <= theta_max`.
    pub fn cone(theta_max: f64, order: QuadratureOrder) -> Self {
        let mut nodes = Vec::with_capacity(order.n_theta * order.n_phi);
        let u_min = theta_max.cos();
        for (u, wu) in gl_interval(order.n_theta, u_min, 1.0) {
            push_full_circle(&mut nodes, u.acos(), wu, order.n_phi);
        }
        Self {
            theta_max,
            order,
            nodes,
        }
    }

    /// Rule for the cone of `det`, clipped by its knife edge.
    ///
    /// Knife clipping is done exactly: each theta ring integrates phi only
    /// over its unblocked arc, and the theta range is split where the edge
    /// starts cutting rings, so the integrand stays smooth on every panel.
    pub fn for_detection(det: &DetectionConfig, order: QuadratureOrder) -> Self {
        let theta_max = det.theta_max();
        let Some(knife) = det.knife else {
            return Self::cone(theta_max, order);
        };
        let scale = det.plane_scale();
        let rel = knife.position / scale;

        let mut panels = vec![(theta_max.cos(), 1.0)];
        if rel.abs() > 0.0 && rel.abs() < theta_max.sin() {
            let u_split = rel.abs().asin().cos();
            panels = vec![(theta_max.cos(), u_split), (u_split, 1.0)];
        }

        let n_arc = (order.n_phi / 2).max(8);
        let mut nodes = Vec::new();
        for (ua, ub) in panels {
            for (u, wu) in gl_interval(order.n_theta, ua, ub) {
                let theta = u.acos();
                let rho = theta.sin();
                // passing condition on cos(phi) is c >= lo (Below) or c <= hi (Above)
                match arc(knife.blocks, rel, rho) {
                    Arc::Full => push_full_circle(&mut nodes, theta, wu, order.n_phi),
                    Arc::Empty => {}
                    Arc::Span(a, b) => {
                        for (phi, wp) in gl_interval(n_arc, a, b) {
                            nodes.push(AngularNode {
                                theta,
                                phi: phi.rem_euclid(2.0 * PI),
                                weight: wu * wp,
                            });
                        }
                    }
                }
            }
        }
        Self {
            theta_max,
            order,
            nodes,
        }
    }

    pub fn total_weight(&self) -> f64 {
        self.nodes.iter().map(|n| n.weight).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
}

/// Solid angle of a cone of half-angle `theta_max`.
pub fn cone_solid_angle(theta_max: f64) -> f64 {
    2.0 * PI * (1.0 - theta_max.cos())
}

fn push_full_circle(nodes: &mut Vec<AngularNode>, theta: f64, wu: f64, n_phi: usize) {
    let wp = 2.0 * PI / n_phi as f64;
    for j in 0..n_phi {
        nodes.push(AngularNode {
            theta,
            phi: j as f64 * wp,
            weight: wu * wp,
        });
    }
}

enum Arc {
    Full,
    Empty,
    Span(f64, f64),
}

/// Unblocked phi arc on a ring of normalized radius `rho` for an edge at
/// normalized position `rel`.
fn arc(side: BlockedSide, rel: f64, rho: f64) -> Arc {
    match side {
        BlockedSide::Above => {
            if rho <= rel {
                Arc::Full
            } else if rel < -rho || (rho == 0.0 && rel < 0.0) {
                Arc::Empty
            } else {
                let a = (rel / rho).clamp(-1.0, 1.0).acos();
                Arc::Span(a, 2.0 * PI - a)
            }
        }
        BlockedSide::Below => {
            if rho <= -rel {
                Arc::Full
            } else if rel > rho {
                Arc::Empty
            } else {
                let a = (rel / rho).clamp(-1.0, 1.0).acos();
                Arc::Span(-a, a)
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SimpsonResult {
    pub value: f64,
    /// Richardson estimate of the absolute error.
    pub error_estimate: f64,
}

/// Composite Simpson over possibly non-uniform, strictly increasing nodes.
/// An odd number of intervals closes with the quadratic through the last
/// three nodes.
pub fn simpson(x: &[f64], y: &[f64]) -> f64 {
    assert_eq!(x.len(), y.len());
    let n = x.len();
    match n {
        0 | 1 => return 0.0,
        2 => return 0.5 * (x[1] - x[0]) * (y[0] + y[1]),
        _ => {}
    }
    let intervals = n - 1;
    let paired = intervals - intervals % 2;
    let mut total = 0.0;
    let mut i = 0;
    while i < paired {
        let h0 = x[i + 1] - x[i];
        let h1 = x[i + 2] - x[i + 1];
        let hs = h0 + h1;
        total += hs / 6.0
            * ((2.0 - h1 / h0) * y[i]
                + hs * hs / (h0 * h1) * y[i + 1]
                + (2.0 - h0 / h1) * y[i + 2]);
        i += 2;
    }
    if paired < intervals {
        let (x0, x1, x2) = (x[n - 3], x[n - 2], x[n - 1]);
        let (y0, y1, y2) = (y[n - 3], y[n - 2], y[n - 1]);
        let lagrange = |t: f64| {
            y0 * (t - x1) * (t - x2) / ((x0 - x1) * (x0 - x2))
                + y1 * (t - x0) * (t - x2) / ((x1 - x0) * (x1 - x2))
                + y2 * (t - x0) * (t - x1) / ((x2 - x0) * (x2 - x1))
        };
        total += gl_interval(2, x1, x2)
            .map(|(t, w)| w * lagrange(t))
            .sum::<f64>();
    }
    total
}

/// Simpson value plus a Richardson error estimate from the half-resolution
/// rule (or the trapezoid rule when the grid cannot be halved).
pub fn simpson_with_estimate(x: &[f64], y: &[f64]) -> SimpsonResult {
    let value = simpson(x, y);
    let n = x.len();
    let error_estimate = if n >= 5 && (n - 1).is_multiple_of(4) {
        let xs: Vec<f64> = x.iter().step_by(2).copied().collect();
        let ys: Vec<f64> = y.iter().step_by(2).copied().collect();
        (value - simpson(&xs, &ys)).abs() / 15.0
    } else if n >= 3 {
        let trap: f64 = x
            .windows(2)
            .zip(y.windows(2))
            .map(|(xw, yw)| 0.5 * (xw[1] - xw[0]) * (yw[0] + yw[1]))
            .sum();
        (value - trap).abs()
    } else {
        0.0
    };
    SimpsonResult {
        value,
        error_estimate,
    }
}

/// `n` uniformly spaced points covering `[a, b]`.
pub fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    match n {
        0 => vec![],
        1 => vec![0.5 * (a + b)],
        _ => (0..n)
            .map(|i| a + (b - a) * i as f64 / (n - 1) as f64)
            .collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::KnifeState;
    use approx::assert_relative_eq;

    #[test]
    fn gauss_legendre_exact_for_polynomials() {
        for n in [1, 2, 5, 16, 32, 64] {
            let (x, w) = gauss_legendre(n);
            assert_relative_eq!(w.iter().sum::<f64>(), 2.0, epsilon = 1e-13);
            for deg in 0..(2 * n) {
                let q: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(deg as i32)).sum();
                let exact = if deg % 2 == 1 {
                    0.0
                } else {
                    2.0 / (deg as f64 + 1.0)
                };
                assert!((q - exact).abs() < 1e-13, "n={n} deg={deg}");
            }
        }
    }

    #[test]
    fn cone_weights_sum_to_solid_angle() {
        for na in [0.05, 0.3, 0.7, 1.0] {
            let q = AngularQuadrature::cone(f64::asin(na), QuadratureOrder::default());
            assert_relative_eq!(
                q.total_weight(),
                cone_solid_angle(na.asin()),
                max_relative = 1e-10
            );
        }
    }

    #[test]
    fn knife_clipped_cone_measures_half_plane() {
        // edge through the axis removes exactly half the cone
        let mut det = DetectionConfig::cone(0.7);
        det.knife = Some(KnifeState {
            position: 0.0,
            blocks: BlockedSide::Above,
        });
        let q = AngularQuadrature::for_detection(&det, QuadratureOrder::default());
        assert_relative_eq!(
            q.total_weight(),
            0.5 * cone_solid_angle(0.7f64.asin()),
            max_relative = 1e-12
        );
        assert!(q.nodes.iter().all(|n| det.knife_passes(n.theta, n.phi)));

        det.knife = Some(KnifeState {
            position: -1.0,
            blocks: BlockedSide::Above,
        });
        assert!(AngularQuadrature::for_detection(&det, QuadratureOrder::default()).is_empty());

        det.knife = Some(KnifeState {
            position: 1.0,
            blocks: BlockedSide::Above,
        });
        let full = AngularQuadrature::for_detection(&det, QuadratureOrder::default());
        assert_relative_eq!(
            full.total_weight(),
            cone_solid_angle(0.7f64.asin()),
            max_relative = 1e-12
        );
    }

    #[test]
    fn knife_clipped_measure_against_direct_sum() {
        // solid angle of {theta < tmax, f sin(theta) cos(phi) <= x} by brute force
        let mut det = DetectionConfig::cone(0.7);
        let x = 0.4 * det.plane_scale();
        det.knife = Some(KnifeState {
            position: x,
            blocks: BlockedSide::Below,
        });
        let q = AngularQuadrature::for_detection(&det, QuadratureOrder::default());
        let tmax = det.theta_max();
        let (nu, np) = (2000, 2000);
        let mut brute = 0.0;
        let umin = tmax.cos();
        for i in 0..nu {
            let u = umin + (1.0 - umin) * (i as f64 + 0.5) / nu as f64;
            for j in 0..np {
                let phi = 2.0 * PI * (j as f64 + 0.5) / np as f64;
                if det.knife_passes(u.acos(), phi) {
                    brute += (1.0 - umin) / nu as f64 * 2.0 * PI / np as f64;
                }
            }
        }
        assert_relative_eq!(q.total_weight(), brute, max_relative = 1e-4);
    }

    #[test]
    fn simpson_exact_for_cubics_nonuniform() {
        let x = [0.0, 0.3, 0.5, 1.1, 1.4, 2.0];
        let f = |t: f64| 1.0 - 2.0 * t + 3.0 * t * t;
        let y: Vec<f64> = x.iter().map(|&t| f(t)).collect();
        let exact = 2.0 - 4.0 + 8.0;
        assert_relative_eq!(simpson(&x, &y), exact, epsilon = 1e-12);

        let x = linspace(0.0, 1.0, 9);
        let y: Vec<f64> = x.iter().map(|t| t * t * t).collect();
        let r = simpson_with_estimate(&x, &y);
        assert_relative_eq!(r.value, 0.25, epsilon = 1e-14);
        assert!(r.error_estimate < 1e-14);
    }

    #[test]
    fn order_parsing() {
        assert_eq!(
            "16x48".parse::<QuadratureOrder>().unwrap(),
            QuadratureOrder {
                n_theta: 16,
                n_phi: 48
            }
        );
        assert!("16".parse::<QuadratureOrder>().is_err());
        assert!("0x4".parse::<QuadratureOrder>().is_err());
    }
}
