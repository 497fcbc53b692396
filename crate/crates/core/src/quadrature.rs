//! Quadrature rules and integration of pointwise algebra against `dμ_g`.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::metric::{MetricField, Point3};

/// Points with weights for the coordinate measure. The Riemannian measure is
/// `√det g` times the coordinate weight.
#[derive(Clone, Debug, PartialEq)]
pub struct Quadrature {
    pub points: Vec<Point3>,
    pub weights: Vec<f64>,
    pub shape: Vec<usize>,
}

impl Quadrature {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Coordinate volume `Σ w`.
    pub fn volume(&self) -> f64 {
        self.weights.iter().sum()
    }

    /// Uniform `m x m x m` grid on the box with the given lengths. Exact for
    /// trigonometric polynomials of degree `< m` in each variable.
    pub fn torus_grid(m: usize, lengths: [f64; 3]) -> Self {
        let w = lengths.iter().product::<f64>() / (m * m * m) as f64;
        let mut points = Vec::with_capacity(m * m * m);
        for i in 0..m {
            for j in 0..m {
                for k in 0..m {
                    points.push([
                        lengths[0] * i as f64 / m as f64,
                        lengths[1] * j as f64 / m as f64,
                        lengths[2] * k as f64 / m as f64,
                    ]);
                }
            }
        }
        Self {
            weights: vec![w; points.len()],
            points,
            shape: vec![m, m, m],
        }
    }

    /// `∫ F dμ_g = Σ_i w_i √det g_i F_i`, summed in index order.
    pub fn integrate(&self, g: &MetricField, values: &[f64]) -> Result<f64> {
        if g.len() != self.len() {
            return Err(Error::GridMismatch {
                left: self.len(),
                right: g.len(),
            });
        }
        if values.len() != self.len() {
            return Err(Error::GridMismatch {
                left: self.len(),
                right: values.len(),
            });
        }
        Ok(self
            .weights
            .iter()
            .zip(g.samples())
            .zip(values)
            .map(|((w, s), f)| w * s.det().sqrt() * f)
            .sum())
    }
}

/// Gauss–Legendre nodes and weights on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre(n, x);
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

fn legendre(n: usize, x: f64) -> (f64, f64) {
    let (mut p0, mut p1) = (1.0, x);
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
        p0 = p1;
        p1 = p2;
    }
    (p1, n as f64 * (x * p1 - p0) / (x * x - 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metric::{Domain, Sym3};

    #[test]
    fn gauss_legendre_integrates_polynomials_exactly() {
        for n in 1..12 {
            let (x, w) = gauss_legendre(n);
            for deg in 0..2 * n {
                let got: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(deg as i32)).sum();
                let exact = if deg % 2 == 1 { 0.0 } else { 2.0 / (deg as f64 + 1.0) };
                assert!((got - exact).abs() < 1e-14, "n={n} deg={deg}");
            }
        }
    }

    #[test]
    fn torus_grid_volume_and_measure() {
        let q = Quadrature::torus_grid(4, [2.0 * PI; 3]);
        assert!((q.volume() - 8.0 * PI.powi(3)).abs() < 1e-12);
        let g = MetricField::constant(Domain::standard_torus(), q.len(), Sym3::identity() * 4.0).unwrap();
        let ones = vec![1.0; q.len()];
        // √det(4I) = 8
        assert!((q.integrate(&g, &ones).unwrap() - 64.0 * PI.powi(3)).abs() < 1e-10);
    }

    #[test]
    fn torus_grid_is_exact_for_low_modes() {
        let q = Quadrature::torus_grid(4, [2.0 * PI; 3]);
        let g = MetricField::constant(Domain::standard_torus(), q.len(), Sym3::identity()).unwrap();
        let f: Vec<f64> = q.points.iter().map(|p| (p[0] + 2.0 * p[1]).cos().powi(2)).collect();
        let got = q.integrate(&g, &f).unwrap();
        assert!((got - 4.0 * PI.powi(3)).abs() < 1e-10);
    }
}
