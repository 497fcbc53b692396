//! Plane-wave oracle for `∗_G d` and `Δ⁰` on the flat torus with a constant
//! metric `G`.
//!
//! For constant `G` each span `{c e^{i k·x} : c ∈ C³}` is invariant, and on it
//! `∗_G d` acts as the 3x3 matrix `c ↦ (i/√det G) G (k × c)`, self-adjoint
//! for the Gram form `c^H G⁻¹ c √det G`. Wavevectors are taken from the half
//! space `k > 0` (first nonzero component positive); the real and imaginary
//! parts of each complex eigenmode give two real eigenforms, which accounts
//! for the `±k` pairing.

use std::f64::consts::PI;

use nalgebra::{Complex, Matrix3, SymmetricEigen, Vector3};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::metric::{Covector, Point3, Sym3};

pub type C64 = Complex<f64>;

/// Relative tolerance for grouping oracle eigenvalues.
const CLUSTER_TOL: f64 = 1e-9;

/// One complex eigenmode of `∗_G d`. The real fields `Re(c e^{ik·x})` and
/// `Im(c e^{ik·x})` are both eigenforms and have unit `L²_G` norm on the
/// `(2π)³` box.
#[derive(Clone, Debug)]
pub struct OracleMode {
    pub k: [i32; 3],
    pub lambda: f64,
    pub coeff: Vector3<C64>,
}

impl OracleMode {
    pub fn phase(&self, x: &Point3) -> C64 {
        let arg = self.k[0] as f64 * x[0] + self.k[1] as f64 * x[1] + self.k[2] as f64 * x[2];
        C64::new(arg.cos(), arg.sin())
    }

    pub fn real_field(&self, x: &Point3) -> Covector {
        let e = self.phase(x);
        self.coeff.map(|c| (c * e).re)
    }

    pub fn imag_field(&self, x: &Point3) -> Covector {
        let e = self.phase(x);
        self.coeff.map(|c| (c * e).im)
    }

    pub fn sign(&self) -> i8 {
        if self.lambda > 0.0 {
            1
        } else {
            -1
        }
    }
}

/// Group of equal oracle eigenvalues.
#[derive(Clone, Debug, Serialize)]
pub struct OracleCluster {
    pub lambda: f64,
    pub multiplicity: usize,
    pub k_representatives: Vec<[i32; 3]>,
}

/// A scalar Laplace–Beltrami mode `cos(k·x)`, `sin(k·x)` with eigenvalue
/// `kᵀ G⁻¹ k`.
#[derive(Clone, Debug)]
pub struct ClosedMode {
    pub k: [i32; 3],
    pub rho: f64,
}

#[derive(Clone, Debug)]
pub struct FourierOracle {
    pub metric: Sym3,
    pub truncation: usize,
    pub modes: Vec<OracleMode>,
    pub closed: Vec<ClosedMode>,
}

/// Wavevectors with `0 < |k|_∞ ≤ K` and `k > 0` lexicographically.
pub fn half_space(truncation: usize) -> Vec<[i32; 3]> {
    let k = truncation as i32;
    let mut out = Vec::new();
    for a in -k..=k {
        for b in -k..=k {
            for c in -k..=k {
                let v = [a, b, c];
                if v.iter().find(|&&x| x != 0).is_some_and(|&x| x > 0) {
                    out.push(v);
                }
            }
        }
    }
    out
}

fn kvec(k: [i32; 3]) -> Vector3<f64> {
    Vector3::new(k[0] as f64, k[1] as f64, k[2] as f64)
}

fn cross_matrix(k: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -k[2], k[1], k[2], 0.0, -k[0], -k[1], k[0], 0.0)
}

/// `∗_G d` on the wavevector-`k` block and the Gram matrix of `⟨·,·⟩_G` on
/// the `(2π)³` box.
pub fn block(g: &Sym3, k: [i32; 3]) -> (Matrix3<C64>, Matrix3<C64>) {
    let gm = g.to_matrix();
    let sq = gm.determinant().sqrt();
    let a = (gm * cross_matrix(&kvec(k))) / sq;
    let a = a.map(|x| C64::new(0.0, x));
    let w = gm.try_inverse().expect("SPD metric") * (sq * (2.0 * PI).powi(3));
    (a, w.map(|x| C64::new(x, 0.0)))
}

/// Eigenpairs of one block, sorted by eigenvalue, with coefficients
/// normalized so `c^H W c = 2`.
pub fn block_eigen(g: &Sym3, k: [i32; 3]) -> Vec<(f64, Vector3<C64>)> {
    let (a, w) = block(g, k);
    let l = w.cholesky().expect("Gram matrix is SPD").l();
    let linv = l.try_inverse().expect("invertible factor");
    // L^H A L^{-H} is Hermitian because W A = A^H W
    let herm = l.adjoint() * a * linv.adjoint();
    let herm = (herm + herm.adjoint()) * C64::new(0.5, 0.0);
    let eig = SymmetricEigen::new(herm);
    let mut pairs: Vec<(f64, Vector3<C64>)> = (0..3)
        .map(|i| {
            let y: Vector3<C64> = eig.eigenvectors.column(i).into();
            let c = linv.adjoint() * y;
            let n2 = (c.adjoint() * w * c)[(0, 0)].re;
            (eig.eigenvalues[i], c * C64::new((2.0 / n2).sqrt(), 0.0))
        })
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    pairs
}

/// Eigenvalue of the `(k, sign)` branch: the largest (`sign > 0`) or the
/// smallest (`sign < 0`) eigenvalue of the block.
pub fn branch_eigenvalue(g: &Sym3, k: [i32; 3], sign: i8) -> f64 {
    let e = block_eigen(g, k);
    if sign > 0 {
        e[2].0
    } else {
        e[0].0
    }
}

impl FourierOracle {
    pub fn new(metric: Sym3, truncation: usize) -> Result<Self> {
        let pivot = metric.min_cholesky_pivot();
        if !(pivot > crate::metric::SPD_PIVOT_TOL) {
            return Err(Error::NotPositiveDefinite {
                index: 0,
                min_pivot: pivot,
            });
        }
        if truncation == 0 {
            return Err(Error::InvalidConfig("oracle truncation must be at least 1".into()));
        }
        let ks = half_space(truncation);
        let ginv = metric.inverse().expect("SPD metric");
        let blocks: Vec<Vec<OracleMode>> = ks
            .par_iter()
            .map(|&k| {
                let e = block_eigen(&metric, k);
                // the middle eigenvalue is the gradient direction c ∥ k
                [0usize, 2]
                    .iter()
                    .map(|&i| OracleMode {
                        k,
                        lambda: e[i].0,
                        coeff: e[i].1,
                    })
                    .collect()
            })
            .collect();
        let mut modes: Vec<OracleMode> = blocks.into_iter().flatten().collect();
        // group numerically equal eigenvalues first so rounding noise cannot
        // interleave +λ and −λ when ordering by |λ|
        modes.sort_by(|a, b| a.lambda.total_cmp(&b.lambda));
        let mut groups: Vec<Vec<OracleMode>> = Vec::new();
        for m in modes {
            match groups.last_mut() {
                Some(g) if (g[0].lambda - m.lambda).abs() <= CLUSTER_TOL * m.lambda.abs().max(1.0) => {
                    g.push(m)
                }
                _ => groups.push(vec![m]),
            }
        }
        for g in &mut groups {
            g.sort_by(|a, b| a.k.cmp(&b.k));
        }
        groups.sort_by(|a, b| {
            let (x, y) = (a[0].lambda, b[0].lambda);
            if (x.abs() - y.abs()).abs() <= CLUSTER_TOL * x.abs().max(1.0) {
                x.total_cmp(&y)
            } else {
                x.abs().total_cmp(&y.abs())
            }
        });
        let modes: Vec<OracleMode> = groups.into_iter().flatten().collect();
        let mut closed: Vec<ClosedMode> = ks
            .iter()
            .map(|&k| ClosedMode {
                k,
                rho: ginv.bilinear(&kvec(k), &kvec(k)),
            })
            .collect();
        closed.sort_by(|a, b| a.rho.total_cmp(&b.rho).then(a.k.cmp(&b.k)));
        Ok(Self {
            metric,
            truncation,
            modes,
            closed,
        })
    }

    /// Nonzero eigenvalues with real multiplicity, ascending in `|λ|` then `λ`.
    pub fn eigenvalues(&self) -> Vec<f64> {
        self.modes.iter().flat_map(|m| [m.lambda, m.lambda]).collect()
    }

    /// Nonzero closed eigenvalues `ρ` with real multiplicity.
    pub fn closed_eigenvalues(&self) -> Vec<f64> {
        self.closed.iter().flat_map(|m| [m.rho, m.rho]).collect()
    }

    pub fn clusters(&self) -> Vec<OracleCluster> {
        let mut out: Vec<OracleCluster> = Vec::new();
        for m in &self.modes {
            match out.last_mut() {
                Some(c) if (c.lambda - m.lambda).abs() <= CLUSTER_TOL * m.lambda.abs().max(1.0) => {
                    c.multiplicity += 2;
                    c.k_representatives.push(m.k);
                }
                _ => out.push(OracleCluster {
                    lambda: m.lambda,
                    multiplicity: 2,
                    k_representatives: vec![m.k],
                }),
            }
        }
        out
    }

    pub fn closed_clusters(&self) -> Vec<OracleCluster> {
        let mut out: Vec<OracleCluster> = Vec::new();
        for m in &self.closed {
            match out.last_mut() {
                Some(c) if (c.lambda - m.rho).abs() <= CLUSTER_TOL * m.rho.max(1.0) => {
                    c.multiplicity += 2;
                    c.k_representatives.push(m.k);
                }
                _ => out.push(OracleCluster {
                    lambda: m.rho,
                    multiplicity: 2,
                    k_representatives: vec![m.k],
                }),
            }
        }
        out
    }

    /// All real eigenforms with eigenvalue within `tol` of `lambda`, as
    /// evaluators of unit-norm covector fields.
    pub fn cluster_fields(&self, lambda: f64, tol: f64) -> Vec<OracleField> {
        self.modes
            .iter()
            .filter(|m| (m.lambda - lambda).abs() <= tol)
            .flat_map(|m| {
                [
                    OracleField {
                        mode: m.clone(),
                        imaginary: false,
                    },
                    OracleField {
                        mode: m.clone(),
                        imaginary: true,
                    },
                ]
            })
            .collect()
    }
}

/// A real eigenform of the oracle.
#[derive(Clone, Debug)]
pub struct OracleField {
    pub mode: OracleMode,
    pub imaginary: bool,
}

impl OracleField {
    pub fn eval(&self, x: &Point3) -> Covector {
        if self.imaginary {
            self.mode.imag_field(x)
        } else {
            self.mode.real_field(x)
        }
    }
}

/// Fourth-order central difference of a scalar function at 0.
pub fn central_difference<F: Fn(f64) -> f64>(f: F, delta: f64) -> f64 {
    (-f(2.0 * delta) + 8.0 * f(delta) - 8.0 * f(-delta) + f(-2.0 * delta)) / (12.0 * delta)
}

/// Which eigenvalue a derivative refers to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Quantity {
    /// `λ` of `∗_G d`.
    Beltrami,
    /// `λ²` on coclosed forms.
    CoclosedSquared,
    /// `ρ` of `Δ⁰`.
    Closed,
}

/// Variation formula against a finite difference of the exact eigenvalue.
#[derive(Clone, Debug, Serialize)]
pub struct OracleDerivative {
    pub quantity: Quantity,
    pub k: [i32; 3],
    pub sign: i8,
    pub value: f64,
    pub formula: f64,
    pub finite_difference: f64,
    pub rel_error: f64,
}

/// Derivative in the constant direction `H` of the `(k, sign)` branch
/// (`sign` ignored for `Closed`). The formula is integrated on a grid that is
/// exact for the mode; the finite difference is fourth order in `G + sH`.
pub fn oracle_derivative(g: &Sym3, k: [i32; 3], sign: i8, h: &Sym3, quantity: Quantity, delta: f64) -> Result<OracleDerivative> {
    use crate::metric::{MetricField, OneFormField, SymTensorField};
    use crate::perturbation::{beltrami_eigenvalue_derivative, closed_eigenvalue_derivative, coclosed_sq_derivative};

    let kmax = k.iter().map(|c| c.unsigned_abs() as usize).max().unwrap_or(0);
    let quad = crate::quadrature::Quadrature::torus_grid(2 * kmax + 2, [2.0 * PI; 3]);
    let gf = MetricField::constant(crate::metric::Domain::standard_torus(), quad.len(), *g)?;
    let hf = SymTensorField::constant(quad.len(), *h);
    let (value, formula, fd) = match quantity {
        Quantity::Beltrami | Quantity::CoclosedSquared => {
            let e = block_eigen(g, k);
            let (lambda, coeff) = if sign > 0 { e[2] } else { e[0] };
            let mode = OracleMode { k, lambda, coeff };
            let u = OneFormField::from_samples(quad.points.iter().map(|x| mode.real_field(x)).collect());
            let branch = |s: f64| branch_eigenvalue(&(*g + *h * s), k, sign);
            if quantity == Quantity::Beltrami {
                let f = beltrami_eigenvalue_derivative(&quad, &gf, lambda, &u, &hf)?;
                (lambda, f, central_difference(branch, delta))
            } else {
                let f = coclosed_sq_derivative(&quad, &gf, lambda, &u, &hf)?;
                (lambda * lambda, f, central_difference(|s| branch(s).powi(2), delta))
            }
        }
        Quantity::Closed => {
            let kv = kvec(k);
            let rho_at = |s: f64| {
                let gi = (*g + *h * s).inverse().expect("SPD metric");
                gi.bilinear(&kv, &kv)
            };
            let vol = (2.0 * PI).powi(3) * g.det().sqrt();
            let amp = (2.0 / vol).sqrt();
            let f: Vec<f64> = quad.points.iter().map(|x| amp * kv.dot(&Vector3::from(*x)).cos()).collect();
            let grad = OneFormField::from_samples(
                quad.points.iter().map(|x| -amp * kv.dot(&Vector3::from(*x)).sin() * kv).collect(),
            );
            // constant h has constant trace, so its Laplacian vanishes
            let zero = vec![0.0; quad.len()];
            let formula = closed_eigenvalue_derivative(&quad, &gf, &f, &grad, &zero, &hf)?;
            (rho_at(0.0), formula, central_difference(rho_at, delta))
        }
    };
    Ok(OracleDerivative {
        quantity,
        k,
        sign,
        value,
        formula,
        finite_difference: fd,
        rel_error: (formula - fd).abs() / formula.abs().max(f64::MIN_POSITIVE),
    })
}

/// First-order rates of all branches of the cluster at `lambda` in the
/// constant direction `H`.
pub fn cluster_rates(oracle: &FourierOracle, lambda: f64, h: &Sym3) -> Result<Vec<f64>> {
    use crate::metric::{MetricField, OneFormField, SymTensorField};

    let fields = oracle.cluster_fields(lambda, CLUSTER_TOL * lambda.abs().max(1.0));
    let quad = crate::quadrature::Quadrature::torus_grid(2 * oracle.truncation + 2, [2.0 * PI; 3]);
    let gf = MetricField::constant(crate::metric::Domain::standard_torus(), quad.len(), oracle.metric)?;
    let basis: Vec<OneFormField> = fields
        .iter()
        .map(|f| OneFormField::from_samples(quad.points.iter().map(|x| f.eval(x)).collect()))
        .collect();
    let hf = SymTensorField::constant(quad.len(), *h);
    crate::perturbation::degenerate_directional_derivatives(&quad, &gf, lambda, &basis, &hf)
}
