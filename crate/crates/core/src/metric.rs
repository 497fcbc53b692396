//! Pointwise tensor algebra for Riemannian metrics, symmetric 2-tensors and
//! 1-form fields, plus one-parameter metric families.
//!
//! Every field is a collection of samples taken at the points of some
//! [`Quadrature`](crate::quadrature::Quadrature): the mesh quadrature of the
//! discrete solver, a uniform grid on the flat torus, or the Hopf-coordinate
//! grid on the round 3-sphere. All integrals downstream are weighted sums of
//! pointwise algebra over those samples.

use std::f64::consts::PI;
use std::ops::{Add, Mul, Neg, Sub};

use nalgebra::{Matrix3, Vector3};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Covector = Vector3<f64>;
pub type Point3 = [f64; 3];

/// Smallest admissible Cholesky pivot of a metric sample.
pub const SPD_PIVOT_TOL: f64 = 1e-12;

/// Symmetric 3x3 matrix stored as its six independent components
/// `(xx, xy, xz, yy, yz, zz)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sym3(pub [f64; 6]);

impl Sym3 {
    pub const ZERO: Sym3 = Sym3([0.0; 6]);

    pub fn identity() -> Self {
        Sym3([1.0, 0.0, 0.0, 1.0, 0.0, 1.0])
    }

    pub fn diag(a: f64, b: f64, c: f64) -> Self {
        Sym3([a, 0.0, 0.0, b, 0.0, c])
    }

    pub fn from_matrix(m: &Matrix3<f64>) -> Self {
        Sym3([
            m[(0, 0)],
            0.5 * (m[(0, 1)] + m[(1, 0)]),
            0.5 * (m[(0, 2)] + m[(2, 0)]),
            m[(1, 1)],
            0.5 * (m[(1, 2)] + m[(2, 1)]),
            m[(2, 2)],
        ])
    }

    pub fn to_matrix(&self) -> Matrix3<f64> {
        let [xx, xy, xz, yy, yz, zz] = self.0;
        Matrix3::new(xx, xy, xz, xy, yy, yz, xz, yz, zz)
    }

    /// `u v^T + v u^T` halved.
    pub fn sym_outer(u: &Covector, v: &Covector) -> Self {
        Sym3([
            u[0] * v[0],
            0.5 * (u[0] * v[1] + u[1] * v[0]),
            0.5 * (u[0] * v[2] + u[2] * v[0]),
            u[1] * v[1],
            0.5 * (u[1] * v[2] + u[2] * v[1]),
            u[2] * v[2],
        ])
    }

    pub fn trace(&self) -> f64 {
        self.0[0] + self.0[3] + self.0[5]
    }

    pub fn det(&self) -> f64 {
        self.to_matrix().determinant()
    }

    pub fn apply(&self, v: &Covector) -> Covector {
        self.to_matrix() * v
    }

    /// Bilinear form `u^T S v`.
    pub fn bilinear(&self, u: &Covector, v: &Covector) -> f64 {
        u.dot(&self.apply(v))
    }

    /// Smallest pivot of an unpivoted Cholesky factorization; non-positive
    /// (or NaN) when the matrix is not positive definite.
    pub fn min_cholesky_pivot(&self) -> f64 {
        let [a00, a01, a02, a11, a12, a22] = self.0;
        let d0 = a00;
        if !(d0 > 0.0) {
            return d0;
        }
        let l10 = a01 / d0.sqrt();
        let l20 = a02 / d0.sqrt();
        let d1 = a11 - l10 * l10;
        if !(d1 > 0.0) {
            return d1;
        }
        let l21 = (a12 - l20 * l10) / d1.sqrt();
        let d2 = a22 - l20 * l20 - l21 * l21;
        d0.min(d1).min(d2)
    }

    pub fn inverse(&self) -> Option<Sym3> {
        self.to_matrix().try_inverse().map(|m| Sym3::from_matrix(&m))
    }

    pub fn max_abs(&self) -> f64 {
        self.0.iter().fold(0.0f64, |m, x| m.max(x.abs()))
    }

    /// Largest eigenvalue magnitude.
    pub fn spectral_norm(&self) -> f64 {
        self.to_matrix()
            .symmetric_eigenvalues()
            .iter()
            .fold(0.0f64, |m, x| m.max(x.abs()))
    }
}

impl Add for Sym3 {
    type Output = Sym3;
    fn add(self, o: Sym3) -> Sym3 {
        let mut r = self.0;
        r.iter_mut().zip(o.0).for_each(|(a, b)| *a += b);
        Sym3(r)
    }
}

impl Sub for Sym3 {
    type Output = Sym3;
    fn sub(self, o: Sym3) -> Sym3 {
        let mut r = self.0;
        r.iter_mut().zip(o.0).for_each(|(a, b)| *a -= b);
        Sym3(r)
    }
}

impl Mul<f64> for Sym3 {
    type Output = Sym3;
    fn mul(self, c: f64) -> Sym3 {
        Sym3(self.0.map(|a| a * c))
    }
}

impl Neg for Sym3 {
    type Output = Sym3;
    fn neg(self) -> Sym3 {
        self * -1.0
    }
}

/// Where the samples of a field live.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Domain {
    /// Flat periodic box `[0, L_x) x [0, L_y) x [0, L_z)`.
    Torus { lengths: [f64; 3] },
    /// Components with respect to the left-invariant orthonormal coframe of
    /// the round unit 3-sphere.
    Sphere3Frame,
}

impl Domain {
    pub fn standard_torus() -> Self {
        Domain::Torus {
            lengths: [2.0 * PI; 3],
        }
    }
}

/// A Riemannian metric sampled at quadrature points.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricField {
    domain: Domain,
    shape: Vec<usize>,
    samples: Vec<Sym3>,
}

impl MetricField {
    /// Validates positive definiteness at every sample.
    pub fn new(domain: Domain, shape: Vec<usize>, samples: Vec<Sym3>) -> Result<Self> {
        check_shape(&shape, samples.len())?;
        for (index, s) in samples.iter().enumerate() {
            let min_pivot = s.min_cholesky_pivot();
            if !(min_pivot > SPD_PIVOT_TOL) {
                return Err(Error::NotPositiveDefinite { index, min_pivot });
            }
        }
        Ok(Self {
            domain,
            shape,
            samples,
        })
    }

    pub fn constant(domain: Domain, count: usize, g: Sym3) -> Result<Self> {
        Self::new(domain, vec![count], vec![g; count])
    }

    /// Samples an analytic metric at the given points.
    pub fn sample(domain: Domain, field: &SmoothSym3, points: &[Point3]) -> Result<Self> {
        Self::new(
            domain,
            vec![points.len()],
            points.iter().map(|p| field.eval(p)).collect(),
        )
    }

    pub fn domain(&self) -> &Domain {
        &self.domain
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn samples(&self) -> &[Sym3] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// True when every sample equals the first one.
    pub fn is_constant(&self) -> bool {
        self.samples.iter().all(|s| *s == self.samples[0])
    }

    pub fn scaled(&self, c: f64) -> Result<Self> {
        Self::new(
            self.domain.clone(),
            self.shape.clone(),
            self.samples.iter().map(|s| *s * c).collect(),
        )
    }

    /// `g + s h`, rejected if the result leaves the positive cone.
    pub fn perturbed(&self, h: &SymTensorField, s: f64) -> Result<Self> {
        same_len(self.len(), h.len())?;
        Self::new(
            self.domain.clone(),
            self.shape.clone(),
            self.samples
                .iter()
                .zip(&h.samples)
                .map(|(g, h)| *g + *h * s)
                .collect(),
        )
    }

    pub fn as_tensor(&self) -> SymTensorField {
        SymTensorField::new(self.shape.clone(), self.samples.clone())
    }

    /// Per-sample inverse `g^{ab}`.
    pub fn inverse_samples(&self) -> Vec<Sym3> {
        self.samples
            .iter()
            .map(|g| g.inverse().expect("validated SPD sample"))
            .collect()
    }

    pub fn to_json(&self) -> MetricFieldJson {
        MetricFieldJson {
            domain: self.domain.clone(),
            shape: self.shape.clone(),
            components: self.samples.iter().flat_map(|s| s.0).collect(),
        }
    }

    pub fn from_json(j: &MetricFieldJson) -> Result<Self> {
        if j.components.len() % 6 != 0 {
            return Err(Error::InvalidConfig(format!(
                "metric component array has length {}, not a multiple of 6",
                j.components.len()
            )));
        }
        let samples = j
            .components
            .chunks_exact(6)
            .map(|c| Sym3([c[0], c[1], c[2], c[3], c[4], c[5]]))
            .collect();
        Self::new(j.domain.clone(), j.shape.clone(), samples)
    }
}

/// On-disk layout of a sampled metric: domain, grid shape, and a row-major
/// array with the six components `(xx, xy, xz, yy, yz, zz)` of each sample.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricFieldJson {
    pub domain: Domain,
    pub shape: Vec<usize>,
    pub components: Vec<f64>,
}

fn check_shape(shape: &[usize], count: usize) -> Result<()> {
    let product: usize = shape.iter().product();
    if product != count {
        return Err(Error::GridMismatch {
            left: product,
            right: count,
        });
    }
    Ok(())
}

fn same_len(a: usize, b: usize) -> Result<()> {
    if a != b {
        Err(Error::GridMismatch { left: a, right: b })
    } else {
        Ok(())
    }
}

/// A symmetric (0,2)-tensor field; metric perturbation directions.
#[derive(Clone, Debug, PartialEq)]
pub struct SymTensorField {
    pub shape: Vec<usize>,
    pub samples: Vec<Sym3>,
}

impl SymTensorField {
    pub fn new(shape: Vec<usize>, samples: Vec<Sym3>) -> Self {
        Self { shape, samples }
    }

    pub fn constant(count: usize, h: Sym3) -> Self {
        Self::new(vec![count], vec![h; count])
    }

    pub fn zeros(count: usize) -> Self {
        Self::constant(count, Sym3::ZERO)
    }

    pub fn sample(field: &SmoothSym3, points: &[Point3]) -> Self {
        Self::new(vec![points.len()], points.iter().map(|p| field.eval(p)).collect())
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self::new(self.shape.clone(), self.samples.iter().map(|s| *s * c).collect())
    }

    pub fn axpy(&self, c: f64, other: &SymTensorField) -> Result<Self> {
        same_len(self.len(), other.len())?;
        Ok(Self::new(
            self.shape.clone(),
            self.samples
                .iter()
                .zip(&other.samples)
                .map(|(a, b)| *a + *b * c)
                .collect(),
        ))
    }

    pub fn max_abs(&self) -> f64 {
        self.samples.iter().fold(0.0f64, |m, s| m.max(s.max_abs()))
    }
}

/// Covector components of a 1-form at each sample.
#[derive(Clone, Debug, PartialEq)]
pub struct OneFormField {
    pub shape: Vec<usize>,
    pub samples: Vec<Covector>,
}

impl OneFormField {
    pub fn new(shape: Vec<usize>, samples: Vec<Covector>) -> Self {
        Self { shape, samples }
    }

    pub fn from_samples(samples: Vec<Covector>) -> Self {
        Self::new(vec![samples.len()], samples)
    }

    pub fn constant(count: usize, u: Covector) -> Self {
        Self::from_samples(vec![u; count])
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self::new(self.shape.clone(), self.samples.iter().map(|u| u * c).collect())
    }

    pub fn is_finite(&self) -> bool {
        self.samples.iter().all(|u| u.iter().all(|x| x.is_finite()))
    }
}

/// `u ⊙ v = (u ⊗ v + v ⊗ u) / 2` at every sample.
pub fn sym_product(u: &OneFormField, v: &OneFormField) -> Result<SymTensorField> {
    same_len(u.len(), v.len())?;
    Ok(SymTensorField::new(
        u.shape.clone(),
        u.samples
            .iter()
            .zip(&v.samples)
            .map(|(a, b)| Sym3::sym_outer(a, b))
            .collect(),
    ))
}

/// The covector `h(♯_g u, -)`, i.e. `h_ab g^{bc} u_c`.
pub fn sharp_pair(h: &SymTensorField, u: &OneFormField, g: &MetricField) -> Result<OneFormField> {
    same_len(h.len(), u.len())?;
    same_len(h.len(), g.len())?;
    let ginv = g.inverse_samples();
    Ok(OneFormField::new(
        u.shape.clone(),
        h.samples
            .iter()
            .zip(&u.samples)
            .zip(&ginv)
            .map(|((h, u), gi)| h.apply(&gi.apply(u)))
            .collect(),
    ))
}

/// `g^{ab} h_ab` at every sample.
pub fn trace_g(h: &SymTensorField, g: &MetricField) -> Result<Vec<f64>> {
    same_len(h.len(), g.len())?;
    Ok(h.samples
        .iter()
        .zip(g.inverse_samples())
        .map(|(h, gi)| (gi.to_matrix() * h.to_matrix()).trace())
        .collect())
}

/// Pointwise metric pairing of covectors `g(u, v) = g^{ab} u_a v_b`.
pub fn metric_pairing(u: &OneFormField, v: &OneFormField, g: &MetricField) -> Result<Vec<f64>> {
    same_len(u.len(), v.len())?;
    same_len(u.len(), g.len())?;
    Ok(g.inverse_samples()
        .iter()
        .zip(u.samples.iter().zip(&v.samples))
        .map(|(gi, (a, b))| gi.bilinear(a, b))
        .collect())
}

/// Pointwise `h(♯u, ♯v)`.
pub fn tensor_on_sharps(
    h: &SymTensorField,
    u: &OneFormField,
    v: &OneFormField,
    g: &MetricField,
) -> Result<Vec<f64>> {
    same_len(h.len(), u.len())?;
    same_len(u.len(), v.len())?;
    same_len(u.len(), g.len())?;
    Ok(g.inverse_samples()
        .iter()
        .zip(&h.samples)
        .zip(u.samples.iter().zip(&v.samples))
        .map(|((gi, h), (a, b))| h.bilinear(&gi.apply(a), &gi.apply(b)))
        .collect())
}

/// An analytic symmetric 2-tensor field on the flat torus: a constant part
/// plus a finite sum of plane-wave modes `cos(k·x + phase) S_k`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SmoothSym3 {
    pub base: Sym3,
    #[serde(default)]
    pub modes: Vec<TrigMode>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrigMode {
    pub k: [i32; 3],
    pub phase: f64,
    pub amplitude: Sym3,
}

impl SmoothSym3 {
    pub fn constant(base: Sym3) -> Self {
        Self {
            base,
            modes: Vec::new(),
        }
    }

    pub fn eval(&self, x: &Point3) -> Sym3 {
        self.modes.iter().fold(self.base, |acc, m| {
            let arg = m.k[0] as f64 * x[0] + m.k[1] as f64 * x[1] + m.k[2] as f64 * x[2] + m.phase;
            acc + m.amplitude * arg.cos()
        })
    }

    /// Upper bound of `sup_x |S(x) - base|` in spectral norm.
    pub fn oscillation_bound(&self) -> f64 {
        self.modes.iter().map(|m| m.amplitude.spectral_norm()).sum()
    }

    /// A smooth random field: `base` plus `modes` random low-frequency
    /// terms (|k|_inf <= 1) whose summed spectral norms equal `amplitude`.
    pub fn random(base: Sym3, amplitude: f64, modes: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut terms = Vec::with_capacity(modes);
        for _ in 0..modes {
            let k = loop {
                let k = [
                    rng.gen_range(-1..=1),
                    rng.gen_range(-1..=1),
                    rng.gen_range(-1..=1),
                ];
                if k != [0, 0, 0] {
                    break k;
                }
            };
            let s = Sym3(std::array::from_fn(|_| rng.gen_range(-1.0..1.0)));
            terms.push(TrigMode {
                k,
                phase: rng.gen_range(0.0..2.0 * PI),
                amplitude: s,
            });
        }
        let total: f64 = terms.iter().map(|m| m.amplitude.spectral_norm()).sum();
        if total > 0.0 {
            for m in &mut terms {
                m.amplitude = m.amplitude * (amplitude / total);
            }
        }
        Self { base, modes: terms }
    }

    /// Random metric `I + perturbation` that is uniformly positive definite
    /// whenever `amplitude < 1`.
    pub fn random_metric(amplitude: f64, modes: usize, seed: u64) -> Self {
        Self::random(Sym3::identity(), amplitude, modes, seed)
    }
}

/// Scalar profile multiplying a path perturbation term.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Profile {
    /// `amplitude * exp(-((t - center) / width)^2)`
    Bump {
        center: f64,
        width: f64,
        amplitude: f64,
    },
    /// `amplitude * sin(pi * frequency * t)`
    Sine { amplitude: f64, frequency: f64 },
    /// `amplitude * t`
    Linear { amplitude: f64 },
    /// `amplitude * t²`
    Quadratic { amplitude: f64 },
}

impl Profile {
    pub fn value(&self, t: f64) -> f64 {
        match *self {
            Profile::Bump {
                center,
                width,
                amplitude,
            } => amplitude * (-((t - center) / width).powi(2)).exp(),
            Profile::Sine {
                amplitude,
                frequency,
            } => amplitude * (PI * frequency * t).sin(),
            Profile::Linear { amplitude } => amplitude * t,
            Profile::Quadratic { amplitude } => amplitude * t * t,
        }
    }

    pub fn derivative(&self, t: f64) -> f64 {
        match *self {
            Profile::Bump {
                center,
                width,
                amplitude,
            } => {
                let z = (t - center) / width;
                -2.0 * z / width * amplitude * (-z * z).exp()
            }
            Profile::Sine {
                amplitude,
                frequency,
            } => amplitude * PI * frequency * (PI * frequency * t).cos(),
            Profile::Linear { amplitude } => amplitude,
            Profile::Quadratic { amplitude } => 2.0 * amplitude * t,
        }
    }

    /// Bound on `|profile'(t)|` over [0, 1].
    pub fn lipschitz(&self) -> f64 {
        match *self {
            Profile::Bump {
                width, amplitude, ..
            } => amplitude.abs() * (2.0f64).sqrt() / width * (-0.5f64).exp(),
            Profile::Sine {
                amplitude,
                frequency,
            } => (amplitude * PI * frequency).abs(),
            Profile::Linear { amplitude } => amplitude.abs(),
            Profile::Quadratic { amplitude } => 2.0 * amplitude.abs(),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Interpolation {
    /// `g0 + t (g1 - g0)`
    #[default]
    Linear,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PathTerm {
    pub direction: SymTensorField,
    pub profile: Profile,
}

/// One-parameter family of metrics `t -> g(t)`, `t ∈ [0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricPath {
    pub g0: MetricField,
    pub g1: MetricField,
    pub rule: Interpolation,
    pub terms: Vec<PathTerm>,
}

impl MetricPath {
    pub fn linear(g0: MetricField, g1: MetricField) -> Result<Self> {
        same_len(g0.len(), g1.len())?;
        Ok(Self {
            g0,
            g1,
            rule: Interpolation::Linear,
            terms: Vec::new(),
        })
    }

    pub fn with_term(mut self, direction: SymTensorField, profile: Profile) -> Result<Self> {
        same_len(self.g0.len(), direction.len())?;
        self.terms.push(PathTerm { direction, profile });
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.g0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.g0.is_empty()
    }

    /// `w(t)`; errors with the offending sample if positivity fails.
    pub fn eval(&self, t: f64) -> Result<MetricField> {
        if !(0.0..=1.0).contains(&t) {
            return Err(Error::ParameterOutOfRange(t));
        }
        let weights: Vec<f64> = self.terms.iter().map(|term| term.profile.value(t)).collect();
        let samples = (0..self.len())
            .map(|i| {
                let a = self.g0.samples[i];
                let b = self.g1.samples[i];
                let mut g = match self.rule {
                    Interpolation::Linear => a + (b - a) * t,
                };
                for (term, w) in self.terms.iter().zip(&weights) {
                    g = g + term.direction.samples[i] * *w;
                }
                g
            })
            .collect();
        MetricField::new(self.g0.domain.clone(), self.g0.shape.clone(), samples)
    }

    /// `w'(t)`.
    pub fn velocity(&self, t: f64) -> SymTensorField {
        let rates: Vec<f64> = self
            .terms
            .iter()
            .map(|term| term.profile.derivative(t))
            .collect();
        SymTensorField::new(
            self.g0.shape.clone(),
            (0..self.len())
                .map(|i| {
                    let mut v = match self.rule {
                        Interpolation::Linear => self.g1.samples[i] - self.g0.samples[i],
                    };
                    for (term, r) in self.terms.iter().zip(&rates) {
                        v = v + term.direction.samples[i] * *r;
                    }
                    v
                })
                .collect(),
        )
    }

    /// Bound on `max_i |w(t)_i - w(s)_i|_max / |t - s|`.
    pub fn lipschitz(&self) -> f64 {
        let base = self
            .g0
            .samples
            .iter()
            .zip(&self.g1.samples)
            .fold(0.0f64, |m, (a, b)| m.max((*b - *a).max_abs()));
        base + self
            .terms
            .iter()
            .map(|term| term.direction.max_abs() * term.profile.lipschitz())
            .sum::<f64>()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn spd_from(a: [f64; 9]) -> Sym3 {
        let m = Matrix3::from_row_slice(&a);
        Sym3::from_matrix(&(m * m.transpose() + Matrix3::identity() * 0.5))
    }

    fn field1(v: Covector) -> OneFormField {
        OneFormField::constant(1, v)
    }

    fn metric1(g: Sym3) -> MetricField {
        MetricField::constant(Domain::standard_torus(), 1, g).unwrap()
    }

    fn arr9() -> impl Strategy<Value = [f64; 9]> {
        prop::array::uniform9(-1.0f64..1.0)
    }

    fn vec3() -> impl Strategy<Value = Covector> {
        prop::array::uniform3(-2.0f64..2.0).prop_map(Covector::from)
    }

    proptest! {
        #[test]
        fn sym_product_contraction_identity(a in arr9(), u in vec3(), v in vec3(), w in vec3()) {
            let g = metric1(spd_from(a));
            let h = sym_product(&field1(u), &field1(v)).unwrap();
            let lhs = sharp_pair(&h, &field1(w), &g).unwrap().samples[0];
            let gi = g.inverse_samples()[0];
            let rhs = (v * gi.bilinear(&u, &w) + u * gi.bilinear(&v, &w)) * 0.5;
            prop_assert!((lhs - rhs).amax() < 1e-12 * (1.0 + rhs.amax()));
            let tr = trace_g(&h, &g).unwrap()[0];
            prop_assert!((tr - gi.bilinear(&u, &v)).abs() < 1e-12 * (1.0 + tr.abs()));
        }

        #[test]
        fn sym_product_commutes(u in vec3(), v in vec3()) {
            let a = sym_product(&field1(u), &field1(v)).unwrap();
            let b = sym_product(&field1(v), &field1(u)).unwrap();
            prop_assert_eq!(a, b);
        }
    }

    #[test]
    fn sharp_pair_matches_index_notation() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let g = spd_from(std::array::from_fn(|_| rng.gen_range(-1.0..1.0)));
            let h = Sym3(std::array::from_fn(|_| rng.gen_range(-1.0..1.0)));
            let u = Covector::from_fn(|_, _| rng.gen_range(-1.0..1.0));
            let gm = g.to_matrix().try_inverse().unwrap();
            let hm = h.to_matrix();
            let mut expect = [0.0; 3];
            let mut trace = 0.0;
            for a in 0..3 {
                for b in 0..3 {
                    trace += gm[(a, b)] * hm[(a, b)];
                    for c in 0..3 {
                        expect[a] += hm[(a, b)] * gm[(b, c)] * u[c];
                    }
                }
            }
            let g1 = metric1(g);
            let h1 = SymTensorField::constant(1, h);
            let got = sharp_pair(&h1, &field1(u), &g1).unwrap().samples[0];
            for a in 0..3 {
                assert!((got[a] - expect[a]).abs() < 1e-12);
            }
            assert!((trace_g(&h1, &g1).unwrap()[0] - trace).abs() < 1e-12);
        }
    }

    #[test]
    fn sharp_pair_trivial_cases() {
        let g = metric1(spd_from([0.3, 0.1, 0.0, -0.2, 0.5, 0.1, 0.0, 0.4, 0.9]));
        let u = field1(Covector::new(0.3, -1.0, 2.0));
        let back = sharp_pair(&g.as_tensor(), &u, &g).unwrap();
        assert!((back.samples[0] - u.samples[0]).amax() < 1e-12);
        let zero = sharp_pair(&SymTensorField::zeros(1), &u, &g).unwrap();
        assert_eq!(zero.samples[0], Covector::zeros());
        assert!((trace_g(&g.as_tensor(), &g).unwrap()[0] - 3.0).abs() < 1e-12);
    }

    #[test]
    fn unit_covector_has_unit_trace() {
        let g = MetricField::constant(Domain::standard_torus(), 8, Sym3::identity()).unwrap();
        let u = OneFormField::constant(8, Covector::new(0.0, 1.0, 0.0));
        let h = sym_product(&u, &u).unwrap();
        assert!(trace_g(&h, &g).unwrap().iter().all(|t| (t - 1.0).abs() < 1e-15));
    }

    #[test]
    fn rejects_non_spd_and_mismatched_grids() {
        let bad = Sym3::diag(1.0, -1.0, 1.0);
        let err = MetricField::new(Domain::standard_torus(), vec![2], vec![Sym3::identity(), bad]);
        assert!(matches!(err, Err(Error::NotPositiveDefinite { index: 1, .. })));
        let a = OneFormField::constant(2, Covector::x());
        let b = OneFormField::constant(3, Covector::x());
        assert!(matches!(sym_product(&a, &b), Err(Error::GridMismatch { .. })));
    }

    #[test]
    fn path_endpoints_and_linearity() {
        let d = Domain::standard_torus();
        let g0 = MetricField::constant(d.clone(), 4, Sym3::identity()).unwrap();
        let g1 = MetricField::constant(d, 4, Sym3::identity() * 4.0).unwrap();
        let path = MetricPath::linear(g0.clone(), g1.clone()).unwrap();
        assert_eq!(path.eval(0.0).unwrap(), g0);
        assert_eq!(path.eval(1.0).unwrap(), g1);
        let mid = path.eval(0.5).unwrap();
        assert!(mid.samples().iter().all(|s| (*s - Sym3::identity() * 2.5).max_abs() < 1e-15));
        assert!(matches!(path.eval(1.5), Err(Error::ParameterOutOfRange(_))));
    }

    #[test]
    fn large_indefinite_bump_is_rejected() {
        let d = Domain::standard_torus();
        let g0 = MetricField::constant(d.clone(), 3, Sym3::identity()).unwrap();
        // smallest eigenvalue along the path is 1, so an amplitude of 2 on an
        // indefinite direction pushes one eigenvalue to -1 at the peak
        let h = SymTensorField::constant(3, Sym3::diag(1.0, -1.0, 0.0));
        let path = MetricPath::linear(g0.clone(), g0)
            .unwrap()
            .with_term(
                h,
                Profile::Bump {
                    center: 0.5,
                    width: 0.1,
                    amplitude: 2.0,
                },
            )
            .unwrap();
        assert!(path.eval(0.0).is_ok());
        assert!(matches!(path.eval(0.5), Err(Error::NotPositiveDefinite { index: 0, .. })));
    }

    #[test]
    fn path_is_lipschitz() {
        let pts: Vec<Point3> = (0..20).map(|i| [0.3 * i as f64, 0.1, -0.2 * i as f64]).collect();
        let d = Domain::standard_torus();
        let a = MetricField::sample(d.clone(), &SmoothSym3::random_metric(0.4, 4, 1), &pts).unwrap();
        let b = MetricField::sample(d, &SmoothSym3::random_metric(0.4, 4, 2), &pts).unwrap();
        let h = SymTensorField::sample(&SmoothSym3::random(Sym3::ZERO, 0.1, 3, 5), &pts);
        let path = MetricPath::linear(a, b)
            .unwrap()
            .with_term(h, Profile::Sine { amplitude: 1.0, frequency: 1.0 })
            .unwrap();
        let lip = path.lipschitz();
        for i in 0..50 {
            let t = i as f64 / 50.0;
            let dt = 1e-3;
            let ga = path.eval(t).unwrap();
            let gb = path.eval(t + dt).unwrap();
            let diff = ga
                .samples()
                .iter()
                .zip(gb.samples())
                .fold(0.0f64, |m, (x, y)| m.max((*x - *y).max_abs()));
            assert!(diff <= lip * dt * (1.0 + 1e-9));
        }
    }

    #[test]
    fn path_velocity_matches_finite_difference() {
        let pts: Vec<Point3> = (0..10).map(|i| [0.5 * i as f64, 0.2 * i as f64, 1.0]).collect();
        let d = Domain::standard_torus();
        let a = MetricField::sample(d.clone(), &SmoothSym3::random_metric(0.3, 3, 7), &pts).unwrap();
        let b = MetricField::sample(d, &SmoothSym3::random_metric(0.3, 3, 8), &pts).unwrap();
        let h = SymTensorField::sample(&SmoothSym3::random(Sym3::ZERO, 0.2, 2, 9), &pts);
        let path = MetricPath::linear(a, b)
            .unwrap()
            .with_term(h, Profile::Bump { center: 0.4, width: 0.3, amplitude: 1.0 })
            .unwrap();
        let t = 0.37;
        let eps = 1e-6;
        let v = path.velocity(t);
        let p = path.eval(t + eps).unwrap();
        let m = path.eval(t - eps).unwrap();
        for i in 0..pts.len() {
            let fd = (p.samples()[i] - m.samples()[i]) * (0.5 / eps);
            assert!((fd - v.samples[i]).max_abs() < 1e-8);
        }
    }

    #[test]
    fn json_layout_roundtrip() {
        let pts: Vec<Point3> = (0..3).map(|i| [i as f64, 0.0, 0.0]).collect();
        let g = MetricField::sample(Domain::standard_torus(), &SmoothSym3::random_metric(0.3, 2, 4), &pts)
            .unwrap();
        let j = g.to_json();
        assert_eq!(j.components.len(), 18);
        let text = serde_json::to_string(&j).unwrap();
        let back: MetricFieldJson = serde_json::from_str(&text).unwrap();
        assert_eq!(MetricField::from_json(&back).unwrap(), g);
    }
}
