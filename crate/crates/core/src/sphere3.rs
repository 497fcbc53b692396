//! The round unit 3-sphere in its left-invariant orthonormal coframe
//! `θ¹, θ², θ³`, with `dθ¹ = 2 θ²∧θ³` and cyclic, and orientation
//! `θ¹∧θ²∧θ³`. With this convention `∗dθ^k = 2 θ^k`, so the left-invariant
//! (positively oriented) Hopf form has Beltrami eigenvalue `+2`.
//!
//! Frame components may depend on the flow time `x` of the first frame
//! field; they enter the exterior derivative as `da = a′(x) θ¹`, so
//! `∗d(a_i θ^i) = (2a₁, 2a₂ − a₃′, 2a₃ + a₂′)`. The negatively oriented
//! field `cos(4x) θ² + sin(4x) θ³` rotates against the frame fast enough
//! to have eigenvalue `−2`.
//!
//! Integrals use Hopf coordinates `z₁ = sin η e^{iξ₁}`, `z₂ = cos η e^{iξ₂}`
//! with `dμ = sin η cos η dη dξ₁ dξ₂`, and `x = (ξ₁ − ξ₂)/2`.

use std::f64::consts::PI;

use serde::Serialize;

use crate::error::Result;
use crate::metric::{Covector, Domain, MetricField, OneFormField, Sym3, SymTensorField};
use crate::perturbation::{beltrami_eigenvalue_derivative, variation_density};
use crate::quadrature::{gauss_legendre, Quadrature};

/// `vol(S³)` of the unit sphere.
pub const VOLUME: f64 = 2.0 * PI * PI;

/// `c + Σ (a_r cos(r x) + b_r sin(r x))`.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct TrigPoly {
    pub constant: f64,
    /// `(rate, cos coefficient, sin coefficient)`.
    pub terms: Vec<(f64, f64, f64)>,
}

impl TrigPoly {
    pub fn constant(c: f64) -> Self {
        Self {
            constant: c,
            terms: Vec::new(),
        }
    }

    pub fn cos(rate: f64) -> Self {
        Self {
            constant: 0.0,
            terms: vec![(rate, 1.0, 0.0)],
        }
    }

    pub fn sin(rate: f64) -> Self {
        Self {
            constant: 0.0,
            terms: vec![(rate, 0.0, 1.0)],
        }
    }

    pub fn eval(&self, x: f64) -> f64 {
        self.constant
            + self
                .terms
                .iter()
                .map(|&(r, a, b)| a * (r * x).cos() + b * (r * x).sin())
                .sum::<f64>()
    }

    pub fn derivative(&self) -> Self {
        Self {
            constant: 0.0,
            terms: self.terms.iter().map(|&(r, a, b)| (r, r * b, -r * a)).collect(),
        }
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self {
            constant: c * self.constant,
            terms: self.terms.iter().map(|&(r, a, b)| (r, c * a, c * b)).collect(),
        }
    }

    pub fn add(&self, other: &Self) -> Self {
        let mut terms = self.terms.clone();
        terms.extend_from_slice(&other.terms);
        Self {
            constant: self.constant + other.constant,
            terms,
        }
    }
}

/// A 1-form `a₁(x) θ¹ + a₂(x) θ² + a₃(x) θ³`.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct InvariantFrameField {
    pub components: [TrigPoly; 3],
}

impl InvariantFrameField {
    pub fn eval(&self, x: f64) -> Covector {
        Covector::from(std::array::from_fn::<f64, 3, _>(|i| self.components[i].eval(x)))
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self {
            components: std::array::from_fn(|i| self.components[i].scaled(c)),
        }
    }

    pub fn add(&self, other: &Self) -> Self {
        Self {
            components: std::array::from_fn(|i| self.components[i].add(&other.components[i])),
        }
    }

    /// Samples at the nodes of a sphere quadrature.
    pub fn sample(&self, quad: &SphereQuadrature) -> OneFormField {
        OneFormField::from_samples(quad.flow_times().iter().map(|&x| self.eval(x)).collect())
    }
}

/// A Hopf form with its Beltrami eigenvalue.
#[derive(Clone, Debug)]
pub struct HopfField {
    pub field: InvariantFrameField,
    pub eigenvalue: f64,
}

/// `α = θ¹` with eigenvalue `2` and `β = cos(4x) θ² + sin(4x) θ³` with
/// eigenvalue `−2`.
pub fn hopf_fields() -> (HopfField, HopfField) {
    let alpha = InvariantFrameField {
        components: [TrigPoly::constant(1.0), TrigPoly::default(), TrigPoly::default()],
    };
    let beta = InvariantFrameField {
        components: [TrigPoly::default(), TrigPoly::cos(4.0), TrigPoly::sin(4.0)],
    };
    (
        HopfField {
            field: alpha,
            eigenvalue: 2.0,
        },
        HopfField {
            field: beta,
            eigenvalue: -2.0,
        },
    )
}

/// `∗_g d u` in the same coframe.
pub fn curl_invariant(u: &InvariantFrameField) -> InvariantFrameField {
    let [a1, a2, a3] = &u.components;
    InvariantFrameField {
        components: [
            a1.scaled(2.0),
            a2.scaled(2.0).add(&a3.derivative().scaled(-1.0)),
            a3.scaled(2.0).add(&a2.derivative()),
        ],
    }
}

/// Product Gauss grid in Hopf coordinates `(η, ξ₁, ξ₂)`.
#[derive(Clone, Debug)]
pub struct SphereQuadrature {
    pub quadrature: Quadrature,
}

impl SphereQuadrature {
    /// `n` Gauss–Legendre nodes in `η ∈ [0, π/2]` and `m` uniform nodes in
    /// each angle.
    pub fn gauss(n: usize, m: usize) -> Self {
        let (nodes, weights) = gauss_legendre(n);
        let half = PI / 4.0;
        let dxi = 2.0 * PI / m as f64;
        let mut points = Vec::with_capacity(n * m * m);
        let mut w = Vec::with_capacity(n * m * m);
        for (t, wt) in nodes.iter().zip(&weights) {
            let eta = half * (t + 1.0);
            let radial = wt * half * eta.sin() * eta.cos();
            for i in 0..m {
                for j in 0..m {
                    points.push([eta, i as f64 * dxi, j as f64 * dxi]);
                    w.push(radial * dxi * dxi);
                }
            }
        }
        Self {
            quadrature: Quadrature {
                points,
                weights: w,
                shape: vec![n, m, m],
            },
        }
    }

    pub fn len(&self) -> usize {
        self.quadrature.len()
    }

    pub fn is_empty(&self) -> bool {
        self.quadrature.is_empty()
    }

    /// Flow time `x = (ξ₁ − ξ₂)/2` of the first frame field at each node.
    pub fn flow_times(&self) -> Vec<f64> {
        self.quadrature.points.iter().map(|p| 0.5 * (p[1] - p[2])).collect()
    }

    /// The round metric in the orthonormal coframe.
    pub fn metric(&self) -> MetricField {
        MetricField::constant(Domain::Sphere3Frame, self.len(), Sym3::identity()).expect("identity is SPD")
    }

    pub fn integrate(&self, values: &[f64]) -> Result<f64> {
        self.quadrature.integrate(&self.metric(), values)
    }
}

impl Default for SphereQuadrature {
    fn default() -> Self {
        Self::gauss(16, 16)
    }
}

/// Largest coefficient-wise deviation of `curl(u) − λ u` over the nodes.
pub fn eigen_residual(u: &InvariantFrameField, lambda: f64, quad: &SphereQuadrature) -> f64 {
    let c = curl_invariant(u);
    quad.flow_times()
        .iter()
        .map(|&x| (c.eval(x) - u.eval(x) * lambda).amax())
        .fold(0.0, f64::max)
}

/// The crossing direction `h = α⊙α − β⊙β`.
pub fn crossing_direction(quad: &SphereQuadrature) -> Result<SymTensorField> {
    let (a, b) = hopf_fields();
    let (a, b) = (a.field.sample(quad), b.field.sample(quad));
    let aa = crate::metric::sym_product(&a, &a)?;
    let bb = crate::metric::sym_product(&b, &b)?;
    aa.axpy(-1.0, &bb)
}

#[derive(Clone, Debug, Serialize)]
pub struct CrossingCertificate {
    pub dmu: f64,
    pub dnu: f64,
    pub residual_alpha: f64,
    pub residual_beta: f64,
    pub vol: f64,
    /// Deviation of the integrals from `2 vol(S³)`.
    pub quadrature_residual: f64,
    pub flagged: bool,
}

/// Residual above which the certificate is flagged.
pub const CERTIFICATE_TOL: f64 = 1e-8;

/// Variation of the eigenvalues `2` (field `α`) and `−2` (field `β`) in
/// direction `α⊙α − β⊙β`; both equal `2 vol(S³)`.
pub fn crossing_derivatives(quad: &SphereQuadrature) -> Result<CrossingCertificate> {
    let (a, b) = hopf_fields();
    let g = quad.metric();
    let h = crossing_direction(quad)?;
    let dmu = beltrami_eigenvalue_derivative(&quad.quadrature, &g, a.eigenvalue, &a.field.sample(quad), &h)?;
    let dnu = beltrami_eigenvalue_derivative(&quad.quadrature, &g, b.eigenvalue, &b.field.sample(quad), &h)?;
    let vol = quad.integrate(&vec![1.0; quad.len()])?;
    let quadrature_residual = (dmu - 2.0 * VOLUME).abs().max((dnu - 2.0 * VOLUME).abs());
    Ok(CrossingCertificate {
        dmu,
        dnu,
        residual_alpha: eigen_residual(&a.field, a.eigenvalue, quad),
        residual_beta: eigen_residual(&b.field, b.eigenvalue, quad),
        vol,
        quadrature_residual,
        flagged: quadrature_residual > CERTIFICATE_TOL,
    })
}

/// Largest pointwise deviation of each identity used in the crossing
/// computation.
#[derive(Clone, Debug, Serialize)]
pub struct IdentityReport {
    /// `‖α‖ = ‖β‖ = 1`.
    pub unit_norms: f64,
    /// `g(α, β) = 0`.
    pub orthogonality: f64,
    /// `h(α, α) = 1`.
    pub h_alpha: f64,
    /// `h(β, β) = −1`.
    pub h_beta: f64,
    /// `tr_g(h) = 0`.
    pub trace: f64,
    /// `h(α,α) − ½ tr_g(h) ‖α‖² = 1` and the same for `−h` and `β`.
    pub integrands: f64,
}

impl IdentityReport {
    pub fn max(&self) -> f64 {
        [
            self.unit_norms,
            self.orthogonality,
            self.h_alpha,
            self.h_beta,
            self.trace,
            self.integrands,
        ]
        .into_iter()
        .fold(0.0, f64::max)
    }
}

pub fn pointwise_identities_check(quad: &SphereQuadrature) -> Result<IdentityReport> {
    use crate::metric::{metric_pairing, tensor_on_sharps, trace_g};
    let (a, b) = hopf_fields();
    let (a, b) = (a.field.sample(quad), b.field.sample(quad));
    let g = quad.metric();
    let h = crossing_direction(quad)?;
    let dev = |v: &[f64], target: f64| v.iter().map(|x| (x - target).abs()).fold(0.0, f64::max);
    let aa = metric_pairing(&a, &a, &g)?;
    let bb = metric_pairing(&b, &b, &g)?;
    let minus_h = h.scaled(-1.0);
    Ok(IdentityReport {
        unit_norms: dev(&aa, 1.0).max(dev(&bb, 1.0)),
        orthogonality: dev(&metric_pairing(&a, &b, &g)?, 0.0),
        h_alpha: dev(&tensor_on_sharps(&h, &a, &a, &g)?, 1.0),
        h_beta: dev(&tensor_on_sharps(&h, &b, &b, &g)?, -1.0),
        trace: dev(&trace_g(&h, &g)?, 0.0),
        integrands: dev(&variation_density(&g, &a, &a, &h)?, 1.0)
            .max(dev(&variation_density(&g, &b, &b, &minus_h)?, 1.0)),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadrature_measures_the_volume() {
        let v = SphereQuadrature::default().integrate(&vec![1.0; 16 * 16 * 16]).unwrap();
        assert!((v - VOLUME).abs() < 1e-10);
        let coarse = SphereQuadrature::gauss(8, 8);
        let fine = SphereQuadrature::gauss(16, 16);
        let f = |q: &SphereQuadrature| {
            let vals: Vec<f64> = q
                .quadrature
                .points
                .iter()
                .map(|p| (p[0].sin() * (p[1] - p[2]).cos()).powi(2))
                .collect();
            q.integrate(&vals).unwrap()
        };
        assert!((f(&coarse) - f(&fine)).abs() < 1e-12);
    }

    #[test]
    fn hopf_fields_are_eigenforms() {
        let q = SphereQuadrature::default();
        let (a, b) = hopf_fields();
        assert!(eigen_residual(&a.field, 2.0, &q) < 1e-12);
        assert!(eigen_residual(&b.field, -2.0, &q) < 1e-12);
        // curl(s α + t β) = 2 s α − 2 t β
        let (s, t) = (0.7, -1.3);
        let mix = a.field.scaled(s).add(&b.field.scaled(t));
        let c = curl_invariant(&mix);
        let expect = a.field.scaled(2.0 * s).add(&b.field.scaled(-2.0 * t));
        for x in q.flow_times() {
            assert!((c.eval(x) - expect.eval(x)).amax() < 1e-12);
        }
    }

    #[test]
    fn hopf_fields_are_orthonormal() {
        let q = SphereQuadrature::default();
        let (a, b) = hopf_fields();
        let (a, b) = (a.field.sample(&q), b.field.sample(&q));
        let g = q.metric();
        let ab = crate::metric::metric_pairing(&a, &b, &g).unwrap();
        assert!(q.integrate(&ab).unwrap().abs() < 1e-10);
        let report = pointwise_identities_check(&q).unwrap();
        assert!(report.max() < 1e-12, "{report:?}");
    }

    #[test]
    fn crossing_derivatives_equal_twice_the_volume() {
        let q = SphereQuadrature::default();
        let c = crossing_derivatives(&q).unwrap();
        let target = 4.0 * PI * PI;
        assert!((c.dmu - target).abs() < 1e-8, "{c:?}");
        assert!((c.dnu - target).abs() < 1e-8, "{c:?}");
        assert!(!c.flagged);
        assert!((c.vol - VOLUME).abs() < 1e-10);
    }

    #[test]
    fn reversed_direction_flips_both_rates() {
        let q = SphereQuadrature::default();
        let (a, b) = hopf_fields();
        let g = q.metric();
        let h = crossing_direction(&q).unwrap().scaled(-1.0);
        let dmu = beltrami_eigenvalue_derivative(&q.quadrature, &g, 2.0, &a.field.sample(&q), &h).unwrap();
        let dnu = beltrami_eigenvalue_derivative(&q.quadrature, &g, -2.0, &b.field.sample(&q), &h).unwrap();
        assert!((dmu + 4.0 * PI * PI).abs() < 1e-8);
        assert!((dnu + 4.0 * PI * PI).abs() < 1e-8);
    }

    #[test]
    fn trig_derivative_is_exact() {
        let p = TrigPoly::cos(3.0).add(&TrigPoly::sin(2.0).scaled(0.5));
        let d = p.derivative();
        for x in [0.0f64, 0.3, 1.7] {
            let expect = -3.0 * (3.0 * x).sin() + (2.0 * x).cos();
            assert!((d.eval(x) - expect).abs() < 1e-14);
        }
    }
}
