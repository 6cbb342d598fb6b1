//! Quadrature rules and grids.

use crate::error::{invalid, Result};
use gauss_quad::{GaussHermite, GaussLegendre};

/// `n` evenly spaced points from `a` to `b` inclusive.
pub fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![a],
        _ => {
            let h = (b - a) / (n - 1) as f64;
            (0..n).map(|i| if i == n - 1 { b } else { a + h * i as f64 }).collect()
        }
    }
}

/// Composite trapezoid rule over tabulated values on an arbitrary grid.
pub fn trapezoid(xs: &[f64], ys: &[f64]) -> f64 {
    xs.windows(2).zip(ys.windows(2)).map(|(x, y)| 0.5 * (x[1] - x[0]) * (y[0] + y[1])).sum()
}

/// Composite trapezoid rule for `f` on `[a, b]` with `n` nodes.
pub fn trapezoid_fn(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
    let xs = linspace(a, b, n);
    let ys: Vec<f64> = xs.iter().map(|&x| f(x)).collect();
    trapezoid(&xs, &ys)
}

/// Gauss–Hermite rule for expectations under the standard normal.
#[derive(Debug, Clone)]
pub struct NormalRule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl NormalRule {
    /// Rule with `n` nodes; exact for polynomials of degree `2n - 1`.
    pub fn new(n: usize) -> Result<Self> {
        let gh = GaussHermite::new(n).map_err(|e| invalid(e.to_string()))?;
        let norm = std::f64::consts::PI.sqrt();
        let (nodes, weights) = gh.into_node_weight_pairs().into_iter().map(|(x, w)| (std::f64::consts::SQRT_2 * x, w / norm)).unzip();
        Ok(Self { nodes, weights })
    }

    /// `E[f(u)]` for `u ~ N(0, 1)`.
    pub fn expect(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.nodes.iter().zip(&self.weights).map(|(&u, &w)| w * f(u)).sum()
    }
}

/// Composite Gauss–Legendre rule with a fixed number of nodes per cell.
#[derive(Debug, Clone)]
pub struct LegendreRule {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl LegendreRule {
    pub fn new(n: usize) -> Result<Self> {
        let gl = GaussLegendre::new(n).map_err(|e| invalid(e.to_string()))?;
        let (nodes, weights) = gl.into_node_weight_pairs().into_iter().unzip();
        Ok(Self { nodes, weights })
    }

    /// Points and weights mapping the reference rule onto `[a, b]`.
    pub fn points(&self, a: f64, b: f64) -> impl Iterator<Item = (f64, f64)> + '_ {
        let (c, h) = (0.5 * (a + b), 0.5 * (b - a));
        self.nodes.iter().zip(&self.weights).map(move |(&x, &w)| (c + h * x, h * w))
    }

    pub fn integrate(&self, a: f64, b: f64, f: impl Fn(f64) -> f64) -> f64 {
        self.points(a, b).map(|(x, w)| w * f(x)).sum()
    }

    /// Integral over `[a, b]` split into `cells` equal cells.
    pub fn integrate_composite(&self, a: f64, b: f64, cells: usize, f: impl Fn(f64) -> f64) -> f64 {
        let edges = linspace(a, b, cells + 1);
        edges.windows(2).map(|e| self.integrate(e[0], e[1], &f)).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linspace_endpoints_exact() {
        let g = linspace(-20.0, 20.0, 5);
        assert_eq!(g, vec![-20.0, -10.0, 0.0, 10.0, 20.0]);
        assert!(linspace(0.0, 1.0, 0).is_empty());
    }

    #[test]
    fn normal_rule_moments() {
        let r = NormalRule::new(129).unwrap();
        assert!((r.expect(|_| 1.0) - 1.0).abs() < 1e-13);
        assert!(r.expect(|u| u).abs() < 1e-13);
        assert!((r.expect(|u| u * u) - 1.0).abs() < 1e-12);
        assert!((r.expect(|u| u.powi(4)) - 3.0).abs() < 1e-11);
        // E[e^u] = e^{1/2}
        assert!((r.expect(f64::exp) - 0.5f64.exp()).abs() < 1e-12);
    }

    #[test]
    fn legendre_exact_for_polynomials() {
        let r = LegendreRule::new(8).unwrap();
        let v = r.integrate(-1.0, 3.0, |x| x.powi(15));
        assert!((v - (3f64.powi(16) - 1.0) / 16.0).abs() < 1e-6 * v);
        let s = r.integrate_composite(0.0, std::f64::consts::PI, 10, f64::sin);
        assert!((s - 2.0).abs() < 1e-14);
    }

    #[test]
    fn trapezoid_linear_exact() {
        assert!((trapezoid_fn(|x| 3.0 * x + 1.0, 0.0, 2.0, 7) - 8.0).abs() < 1e-14);
    }
}
