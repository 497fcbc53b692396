//! First-order variation of Beltrami, coclosed and closed eigenvalues under a
//! metric perturbation `h`, the matrix of the operator derivative on an
//! eigenspace, and the transversality test for double eigenvalues.
//!
//! Pointwise formulas take fields sampled at quadrature points. The `dec_*`
//! functions evaluate the same formulas for mesh eigenpairs and are the
//! exact derivatives of the discrete eigenvalues: for `C x = λ² M x` they
//! use `v = ∗_g d u` from the curl rather than `λ u`, which agree in the
//! continuum, and for the scalar problem the `Δ⁰ tr_g(h)` term is taken in
//! weak form.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::metric::{metric_pairing, sym_product, tensor_on_sharps, trace_g, MetricField, OneFormField, SymTensorField};
use crate::quadrature::Quadrature;
use crate::solver::{ClosedSpectrum, CoclosedSpectrum, Discretization};

/// Relative determinant threshold of the span test.
pub const DET_TOL: f64 = 1e-8;

/// Largest Gram deviation accepted for an orthonormal basis.
pub const ORTHONORMAL_TOL: f64 = 1e-8;

/// `{−2, −1.5, …, 2}` without `a = 1`, where the modified direction
/// degenerates.
pub fn default_a_grid() -> Vec<f64> {
    (0..=8).map(|i| -2.0 + 0.5 * i as f64).filter(|&a| a != 1.0).collect()
}

/// Pointwise `h(♯u, ♯v) − ½ tr_g(h) g(u, v)`.
pub fn variation_density(g: &MetricField, u: &OneFormField, v: &OneFormField, h: &SymTensorField) -> Result<Vec<f64>> {
    let huv = tensor_on_sharps(h, u, v, g)?;
    let tr = trace_g(h, g)?;
    let guv = metric_pairing(u, v, g)?;
    Ok(huv.iter().zip(&tr).zip(&guv).map(|((a, t), b)| a - 0.5 * t * b).collect())
}

/// `∫ (h(♯u, ♯v) − ½ tr_g(h) g(u, v)) dμ_g`.
pub fn energy_variation(
    quad: &Quadrature,
    g: &MetricField,
    u: &OneFormField,
    v: &OneFormField,
    h: &SymTensorField,
) -> Result<f64> {
    quad.integrate(g, &variation_density(g, u, v, h)?)
}

/// `λ ∫ (h(u, u) − ½ tr_g(h) g(u, u)) dμ_g` for a normalized eigenform `u`.
pub fn beltrami_eigenvalue_derivative(
    quad: &Quadrature,
    g: &MetricField,
    lambda: f64,
    u: &OneFormField,
    h: &SymTensorField,
) -> Result<f64> {
    Ok(lambda * energy_variation(quad, g, u, u, h)?)
}

/// `2 λ² ∫ (h(u, u) − ½ tr_g(h) g(u, u)) dμ_g`, the derivative of `λ²`.
pub fn coclosed_sq_derivative(
    quad: &Quadrature,
    g: &MetricField,
    lambda: f64,
    u: &OneFormField,
    h: &SymTensorField,
) -> Result<f64> {
    Ok(2.0 * lambda * lambda * energy_variation(quad, g, u, u, h)?)
}

/// `−∫ ((Δ⁰_g tr_g(h) / 4) f² + h(∇f, ∇f)) dμ_g` for a normalized scalar
/// eigenfunction; `laplacian_trace` is `Δ⁰_g tr_g(h)` at the samples.
pub fn closed_eigenvalue_derivative(
    quad: &Quadrature,
    g: &MetricField,
    f: &[f64],
    grad_f: &OneFormField,
    laplacian_trace: &[f64],
    h: &SymTensorField,
) -> Result<f64> {
    let hff = tensor_on_sharps(h, grad_f, grad_f, g)?;
    if f.len() != hff.len() || laplacian_trace.len() != hff.len() {
        return Err(Error::GridMismatch {
            left: hff.len(),
            right: f.len().min(laplacian_trace.len()),
        });
    }
    let dens: Vec<f64> = hff
        .iter()
        .zip(f)
        .zip(laplacian_trace)
        .map(|((a, f), l)| -(0.25 * l * f * f + a))
        .collect();
    quad.integrate(g, &dens)
}

/// Matrix of `⟨A′_g[h] v_i, v_j⟩_g` on an eigenspace.
#[derive(Clone, Debug)]
pub struct APrimeMatrix {
    pub lambda: f64,
    pub matrix: DMatrix<f64>,
}

impl APrimeMatrix {
    /// `max |m_ij − m_ji|`.
    pub fn asymmetry(&self) -> f64 {
        (&self.matrix - self.matrix.transpose()).abs().max()
    }

    /// First-order rates of the eigenvalue branches, ascending.
    pub fn rates(&self) -> Vec<f64> {
        let sym = (&self.matrix + self.matrix.transpose()) * 0.5;
        let mut r: Vec<f64> = SymmetricEigen::new(sym).eigenvalues.iter().cloned().collect();
        r.sort_by(f64::total_cmp);
        r
    }

    /// Entries `(m₁₁, m₂₂, m₁₂)` of the leading 2x2 block.
    fn vectorized(&self) -> [f64; 3] {
        let m = &self.matrix;
        [m[(0, 0)], m[(1, 1)], 0.5 * (m[(0, 1)] + m[(1, 0)])]
    }
}

/// `L²_g` Gram matrix of a list of fields.
pub fn gram_matrix(quad: &Quadrature, g: &MetricField, basis: &[OneFormField]) -> Result<DMatrix<f64>> {
    let m = basis.len();
    let mut out = DMatrix::zeros(m, m);
    for i in 0..m {
        for j in i..m {
            let v = quad.integrate(g, &metric_pairing(&basis[i], &basis[j], g)?)?;
            out[(i, j)] = v;
            out[(j, i)] = v;
        }
    }
    Ok(out)
}

fn check_orthonormal(gram: &DMatrix<f64>) -> Result<()> {
    let dev = (gram - DMatrix::identity(gram.nrows(), gram.ncols())).abs().max();
    if dev > ORTHONORMAL_TOL {
        return Err(Error::NotOrthonormal(dev));
    }
    Ok(())
}

fn aprime_entries(
    quad: &Quadrature,
    g: &MetricField,
    lambda: f64,
    basis: &[OneFormField],
    h: &SymTensorField,
) -> Result<APrimeMatrix> {
    let m = basis.len();
    let mut out = DMatrix::zeros(m, m);
    for i in 0..m {
        for j in 0..m {
            out[(i, j)] = lambda * energy_variation(quad, g, &basis[i], &basis[j], h)?;
        }
    }
    Ok(APrimeMatrix { lambda, matrix: out })
}

/// `⟨A′_g[h] v_i, v_j⟩_g = λ ∫ (h(♯v_i, ♯v_j) − ½ tr_g(h) g(v_i, v_j)) dμ_g`
/// for an `L²_g`-orthonormal basis.
pub fn aprime_matrix(
    quad: &Quadrature,
    g: &MetricField,
    lambda: f64,
    basis: &[OneFormField],
    h: &SymTensorField,
) -> Result<APrimeMatrix> {
    check_orthonormal(&gram_matrix(quad, g, basis)?)?;
    aprime_entries(quad, g, lambda, basis, h)
}

/// The same matrix for `h = v_k ⊙ v_l` from the closed form
/// `(λ/2) ∫ (g(v_i,v_k) g(v_j,v_l) + g(v_j,v_k) g(v_i,v_l) − g(v_i,v_j) g(v_k,v_l)) dμ_g`.
pub fn aprime_product_matrix(
    quad: &Quadrature,
    g: &MetricField,
    lambda: f64,
    basis: &[OneFormField],
    k: &OneFormField,
    l: &OneFormField,
) -> Result<APrimeMatrix> {
    let m = basis.len();
    let with_k: Vec<Vec<f64>> = basis.iter().map(|v| metric_pairing(v, k, g)).collect::<Result<_>>()?;
    let with_l: Vec<Vec<f64>> = basis.iter().map(|v| metric_pairing(v, l, g)).collect::<Result<_>>()?;
    let kl = metric_pairing(k, l, g)?;
    let mut out = DMatrix::zeros(m, m);
    for i in 0..m {
        for j in 0..m {
            let gij = metric_pairing(&basis[i], &basis[j], g)?;
            let dens: Vec<f64> = (0..kl.len())
                .map(|p| with_k[i][p] * with_l[j][p] + with_k[j][p] * with_l[i][p] - gij[p] * kl[p])
                .collect();
            out[(i, j)] = 0.5 * lambda * quad.integrate(g, &dens)?;
        }
    }
    Ok(APrimeMatrix { lambda, matrix: out })
}

/// First-order rates of the branches of a degenerate eigenvalue in
/// direction `h`: the eigenvalues of the `A′` matrix, ascending.
pub fn degenerate_directional_derivatives(
    quad: &Quadrature,
    g: &MetricField,
    lambda: f64,
    basis: &[OneFormField],
    h: &SymTensorField,
) -> Result<Vec<f64>> {
    Ok(aprime_matrix(quad, g, lambda, basis, h)?.rates())
}

#[derive(Clone, Debug, Serialize)]
pub struct DetEntry {
    pub a: f64,
    pub det: f64,
    /// `|det|` divided by the product of the row norms.
    pub relative: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct SpanReport {
    pub spanning: bool,
    pub witness_a: Option<f64>,
    pub determinants: Vec<DetEntry>,
}

/// Whether `Id`, `A′[h̃_a]` and `A′[v₁ ⊙ v₂]` span the symmetric 2x2
/// matrices, with `h̃_a = v₁⊙v₁ + a tr_g(v₁⊙v₁) g`. Each row is vectorized
/// as `(m₁₁, m₂₂, m₁₂)` and the 3x3 determinant is reported for every `a`.
pub fn sah2_span_test(
    quad: &Quadrature,
    g: &MetricField,
    lambda: f64,
    v1: &OneFormField,
    v2: &OneFormField,
    a_grid: &[f64],
) -> Result<SpanReport> {
    let basis = [v1.clone(), v2.clone()];
    let p11 = sym_product(v1, v1)?;
    let p12 = sym_product(v1, v2)?;
    let tr11 = trace_g(&p11, g)?;
    let scaled_metric = SymTensorField::new(
        p11.shape.clone(),
        g.samples().iter().zip(&tr11).map(|(s, t)| *s * *t).collect(),
    );
    let identity = [1.0, 1.0, 0.0];
    let cross = aprime_entries(quad, g, lambda, &basis, &p12)?.vectorized();
    let determinants: Vec<DetEntry> = a_grid
        .iter()
        .map(|&a| {
            let h = p11.axpy(a, &scaled_metric)?;
            let row = aprime_entries(quad, g, lambda, &basis, &h)?.vectorized();
            let m = nalgebra::Matrix3::from_rows(&[
                nalgebra::RowVector3::from(identity),
                nalgebra::RowVector3::from(row),
                nalgebra::RowVector3::from(cross),
            ]);
            let det = m.determinant();
            let scale: f64 = m.row_iter().map(|r| r.norm()).product();
            let relative = if scale > 0.0 { det.abs() / scale } else { 0.0 };
            Ok(DetEntry { a, det, relative })
        })
        .collect::<Result<_>>()?;
    let witness_a = determinants.iter().find(|d| d.relative > DET_TOL).map(|d| d.a);
    Ok(SpanReport {
        spanning: witness_a.is_some(),
        witness_a,
        determinants,
    })
}

fn dec_energy(disc: &Discretization, h: &SymTensorField, x: &[f64], y: &[f64]) -> Result<(f64, f64)> {
    let quad = disc.mesh.quadrature();
    let g = &disc.metric;
    let (ux, uy) = (disc.mesh.whitney_field(x), disc.mesh.whitney_field(y));
    let (vx, vy) = (disc.mesh.hodge_curl_field(g, x)?, disc.mesh.hodge_curl_field(g, y)?);
    Ok((
        energy_variation(&quad, g, &vx, &vy, h)?,
        energy_variation(&quad, g, &ux, &uy, h)?,
    ))
}

/// Derivative of a simple mesh eigenvalue `λ` of `∗_g d` with `M_g`-normalized
/// cochain `x`: `(1/2λ) ∫ (h(v,v) − ½τ|v|²) + (λ/2) ∫ (h(u,u) − ½τ|u|²)`
/// with `v = ∗_g d u` and `τ = tr_g(h)`.
pub fn dec_beltrami_derivative(disc: &Discretization, lambda: f64, x: &[f64], h: &SymTensorField) -> Result<f64> {
    let (curl, plain) = dec_energy(disc, h, x, x)?;
    Ok(0.5 * curl / lambda + 0.5 * lambda * plain)
}

/// Derivative of `λ²` for a simple mesh eigenpair.
pub fn dec_coclosed_sq_derivative(disc: &Discretization, lambda: f64, x: &[f64], h: &SymTensorField) -> Result<f64> {
    Ok(2.0 * lambda * dec_beltrami_derivative(disc, lambda, x, h)?)
}

/// Derivative of a simple scalar mesh eigenvalue `ρ` with `M⁰_g`-normalized
/// vertex cochain `f`: `−∫ h(∇f, ∇f) + ½ ∫ τ (|∇f|² − ρ f²)`, the weak form
/// of `−∫ ((Δ⁰τ/4) f² + h(∇f, ∇f))`.
pub fn dec_closed_derivative(disc: &Discretization, rho: f64, f: &[f64], h: &SymTensorField) -> Result<f64> {
    let quad = disc.mesh.quadrature();
    let g = &disc.metric;
    let grad = disc.mesh.p1_gradient(f);
    let vals = disc.mesh.p1_values(f);
    let hff = tensor_on_sharps(h, &grad, &grad, g)?;
    let gff = metric_pairing(&grad, &grad, g)?;
    let tr = trace_g(h, g)?;
    let dens: Vec<f64> = (0..vals.len())
        .map(|p| -hff[p] + 0.5 * tr[p] * (gff[p] - rho * vals[p] * vals[p]))
        .collect();
    quad.integrate(g, &dens)
}

/// Mesh version of the `A′` matrix on an `M_g`-orthonormal cluster:
/// entries `(1/2λ) ∫ (h(v_i,v_j) − ½τ g(v_i,v_j)) + (λ/2) ∫ (h(u_i,u_j) − ½τ g(u_i,u_j))`.
pub fn dec_aprime_matrix(disc: &Discretization, lambda: f64, vectors: &[&[f64]], h: &SymTensorField) -> Result<APrimeMatrix> {
    let m = vectors.len();
    let mut gram = DMatrix::zeros(m, m);
    for i in 0..m {
        for j in 0..m {
            gram[(i, j)] = disc.mass.form(vectors[i], vectors[j]);
        }
    }
    check_orthonormal(&gram)?;
    let mut out = DMatrix::zeros(m, m);
    for i in 0..m {
        for j in i..m {
            let (curl, plain) = dec_energy(disc, h, vectors[i], vectors[j])?;
            let v = 0.5 * curl / lambda + 0.5 * lambda * plain;
            out[(i, j)] = v;
            out[(j, i)] = v;
        }
    }
    Ok(APrimeMatrix { lambda, matrix: out })
}

/// Derivative of the coclosed eigenvalue at `index`; refuses clusters.
pub fn coclosed_derivative(
    disc: &Discretization,
    spectrum: &CoclosedSpectrum,
    index: usize,
    h: &SymTensorField,
) -> Result<f64> {
    let p = &spectrum.pairs[index];
    let size = spectrum.clusters[p.cluster_id].size();
    if size > 1 {
        return Err(Error::DegenerateCluster(size));
    }
    dec_beltrami_derivative(disc, p.lambda, &p.vector, h)
}

/// Derivative of the closed eigenvalue at `index`; refuses clusters.
pub fn closed_derivative(disc: &Discretization, spectrum: &ClosedSpectrum, index: usize, h: &SymTensorField) -> Result<f64> {
    let p = &spectrum.pairs[index];
    let size = spectrum.clusters[p.cluster_id].size();
    if size > 1 {
        return Err(Error::DegenerateCluster(size));
    }
    dec_closed_derivative(disc, p.rho, &p.vector, h)
}

/// Rates of every branch of a coclosed cluster, ascending.
pub fn coclosed_cluster_rates(
    disc: &Discretization,
    spectrum: &CoclosedSpectrum,
    cluster: usize,
    h: &SymTensorField,
) -> Result<Vec<f64>> {
    let c = &spectrum.clusters[cluster];
    let vectors = spectrum.cluster_vectors(cluster);
    Ok(dec_aprime_matrix(disc, c.value, &vectors, h)?.rates())
}

#[cfg(test)]
mod tests {
    use std::f64::consts::PI;

    use proptest::prelude::*;

    use super::*;
    use crate::mesh::PeriodicMesh;
    use crate::metric::{Covector, Domain, SmoothSym3, Sym3};
    use crate::oracle::{central_difference, FourierOracle, OracleField};
    use crate::solver::{closed_spectrum, coclosed_spectrum, SolverOptions, Window};

    const TWO_PI: [f64; 3] = [2.0 * PI; 3];

    fn grid(m: usize) -> Quadrature {
        Quadrature::torus_grid(m, TWO_PI)
    }

    fn constant_metric(quad: &Quadrature, g: Sym3) -> MetricField {
        MetricField::constant(Domain::standard_torus(), quad.len(), g).unwrap()
    }

    fn sample(quad: &Quadrature, f: &OracleField) -> OneFormField {
        OneFormField::from_samples(quad.points.iter().map(|x| f.eval(x)).collect())
    }

    fn spd() -> impl Strategy<Value = Sym3> {
        prop::array::uniform6(-0.3f64..0.3).prop_map(|a| Sym3::identity() + Sym3(a))
    }

    fn covectors(n: usize) -> impl Strategy<Value = OneFormField> {
        prop::collection::vec(prop::array::uniform3(-1.0f64..1.0), n)
            .prop_map(|v| OneFormField::from_samples(v.into_iter().map(Covector::from).collect()))
    }

    fn tensors(n: usize) -> impl Strategy<Value = SymTensorField> {
        prop::collection::vec(prop::array::uniform6(-1.0f64..1.0), n)
            .prop_map(|v| SymTensorField::new(vec![v.len()], v.into_iter().map(Sym3).collect()))
    }

    #[test]
    fn conformal_direction_gives_scaling_rates() {
        let g = Sym3([1.2, 0.1, -0.05, 0.9, 0.2, 1.1]);
        let quad = grid(6);
        let gf = constant_metric(&quad, g);
        let h = gf.as_tensor();
        let oracle = FourierOracle::new(g, 1).unwrap();
        for mode in oracle.modes.iter().take(6) {
            let f = OracleField {
                mode: mode.clone(),
                imaginary: false,
            };
            let u = sample(&quad, &f);
            let l = mode.lambda;
            let d = beltrami_eigenvalue_derivative(&quad, &gf, l, &u, &h).unwrap();
            assert!((d + l / 2.0).abs() < 1e-12, "{d} vs {}", -l / 2.0);
            let d2 = coclosed_sq_derivative(&quad, &gf, l, &u, &h).unwrap();
            assert!((d2 + l * l).abs() < 1e-12);
        }
        let ginv = g.inverse().unwrap();
        let vol = (2.0 * PI).powi(3) * g.det().sqrt();
        for c in oracle.closed.iter().take(4) {
            let kv = Covector::new(c.k[0] as f64, c.k[1] as f64, c.k[2] as f64);
            // cos(k·x) normalized in L²_g
            let amp = (2.0 / vol).sqrt();
            let phase = |x: &[f64; 3]| kv[0] * x[0] + kv[1] * x[1] + kv[2] * x[2];
            let f: Vec<f64> = quad.points.iter().map(|x| amp * phase(x).cos()).collect();
            let grad = OneFormField::from_samples(quad.points.iter().map(|x| -amp * phase(x).sin() * kv).collect());
            let zero = vec![0.0; quad.len()];
            let d = closed_eigenvalue_derivative(&quad, &gf, &f, &grad, &zero, &h).unwrap();
            assert!((d + c.rho).abs() < 1e-12, "{d} vs {}", c.rho);
            assert!((c.rho - ginv.bilinear(&kv, &kv)).abs() < 1e-14);
            let none = closed_eigenvalue_derivative(&quad, &gf, &f, &grad, &zero, &h.scaled(0.0)).unwrap();
            assert_eq!(none, 0.0);
        }
    }

    #[test]
    fn orthonormal_constant_pair_has_hand_computed_matrices() {
        let quad = grid(2);
        let gf = constant_metric(&quad, Sym3::identity());
        let vol = (2.0 * PI).powi(3);
        let lambda = 1.0;
        let v1 = OneFormField::constant(quad.len(), Covector::x());
        let v2 = OneFormField::constant(quad.len(), Covector::y());
        let basis = [v1.clone(), v2.clone()];
        let c = lambda * vol / 2.0;
        let m = aprime_matrix(&quad, &gf, lambda, &basis.clone().map(|b| b.scaled(vol.powf(-0.5))), &sym_product(&v1, &v1).unwrap())
            .unwrap();
        // the basis is normalized, the direction is not
        let expect = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]) * (lambda / 2.0);
        assert!((&m.matrix - expect).abs().max() < 1e-12);
        let a = aprime_entries(&quad, &gf, lambda, &basis, &sym_product(&v1, &v1).unwrap()).unwrap();
        assert!((a.matrix - DMatrix::from_row_slice(2, 2, &[c, 0.0, 0.0, -c])).abs().max() < 1e-9);
        let b = aprime_entries(&quad, &gf, lambda, &basis, &sym_product(&v1, &v2).unwrap()).unwrap();
        assert!((b.matrix - DMatrix::from_row_slice(2, 2, &[0.0, c, c, 0.0])).abs().max() < 1e-9);

        let report = sah2_span_test(&quad, &gf, lambda, &v1, &v2, &[0.0]).unwrap();
        assert!(report.spanning);
        let det = report.determinants[0].det;
        assert!((det + 2.0 * c * c).abs() < 1e-9 * c * c, "{det} vs {}", -2.0 * c * c);
    }

    #[test]
    fn parallel_pair_never_spans() {
        let quad = grid(4);
        let g = Sym3([1.1, 0.2, 0.0, 0.8, -0.1, 1.3]);
        let gf = constant_metric(&quad, g);
        let f = OracleField {
            mode: FourierOracle::new(g, 1).unwrap().modes[0].clone(),
            imaginary: false,
        };
        let v1 = sample(&quad, &f);
        let v2 = v1.scaled(-1.7);
        let report = sah2_span_test(&quad, &gf, 1.0, &v1, &v2, &default_a_grid()).unwrap();
        assert!(!report.spanning);
        assert_eq!(report.determinants.len(), 8);
        assert!(report.determinants.iter().all(|d| d.relative < DET_TOL));
    }

    #[test]
    fn genuine_unit_cluster_has_a_witness() {
        let quad = grid(6);
        let gf = constant_metric(&quad, Sym3::identity());
        let oracle = FourierOracle::new(Sym3::identity(), 1).unwrap();
        let fields = oracle.cluster_fields(1.0, 1e-9);
        assert_eq!(fields.len(), 6);
        let v1 = sample(&quad, &fields[0]);
        let v2 = sample(&quad, &fields[2]);
        let report = sah2_span_test(&quad, &gf, 1.0, &v1, &v2, &default_a_grid()).unwrap();
        assert!(report.spanning, "{report:?}");
    }

    #[test]
    fn default_grid_skips_one() {
        let a = default_a_grid();
        assert_eq!(a, vec![-2.0, -1.5, -1.0, -0.5, 0.0, 0.5, 1.5, 2.0]);
    }

    #[test]
    fn conformal_cluster_matrix_is_scalar() {
        let quad = grid(6);
        let gf = constant_metric(&quad, Sym3::identity());
        let oracle = FourierOracle::new(Sym3::identity(), 1).unwrap();
        let basis: Vec<OneFormField> = oracle.cluster_fields(-1.0, 1e-9).iter().map(|f| sample(&quad, f)).collect();
        let m = aprime_matrix(&quad, &gf, -1.0, &basis, &gf.as_tensor()).unwrap();
        let expect = DMatrix::identity(6, 6) * 0.5;
        assert!((m.matrix - expect).abs().max() < 1e-12);
    }

    #[test]
    fn non_orthonormal_basis_is_rejected() {
        let quad = grid(2);
        let gf = constant_metric(&quad, Sym3::identity());
        let v = OneFormField::constant(quad.len(), Covector::x());
        let err = aprime_matrix(&quad, &gf, 1.0, &[v.clone(), v], &gf.as_tensor()).unwrap_err();
        assert!(matches!(err, Error::NotOrthonormal(_)));
    }

    #[test]
    fn cluster_rates_match_branch_slopes() {
        let quad = grid(6);
        let g = Sym3::identity();
        let gf = constant_metric(&quad, g);
        let hm = Sym3([0.3, 0.1, -0.2, -0.1, 0.25, 0.05]);
        let h = SymTensorField::constant(quad.len(), hm);
        let oracle = FourierOracle::new(g, 1).unwrap();
        let fields = oracle.cluster_fields(1.0, 1e-9);
        let basis: Vec<OneFormField> = fields.iter().map(|f| sample(&quad, f)).collect();
        let rates = degenerate_directional_derivatives(&quad, &gf, 1.0, &basis, &h).unwrap();
        let mut fd: Vec<f64> = fields
            .iter()
            .map(|f| central_difference(|s| crate::oracle::branch_eigenvalue(&(g + hm * s), f.mode.k, 1), 1e-3))
            .collect();
        fd.sort_by(f64::total_cmp);
        for (r, f) in rates.iter().zip(&fd) {
            assert!((r - f).abs() < 1e-8, "{r} vs {f}");
        }
        // rates differ between wavevector directions
        assert!(rates[5] - rates[0] > 1e-2);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn chain_rule_and_linearity(
            g in prop::collection::vec(spd(), 8),
            u in covectors(8),
            h1 in tensors(8),
            h2 in tensors(8),
            lambda in -3.0f64..3.0,
        ) {
            let quad = grid(2);
            let gf = MetricField::new(Domain::standard_torus(), vec![8], g).unwrap();
            let d = beltrami_eigenvalue_derivative(&quad, &gf, lambda, &u, &h1).unwrap();
            let d2 = coclosed_sq_derivative(&quad, &gf, lambda, &u, &h1).unwrap();
            prop_assert!((d2 - 2.0 * lambda * d).abs() <= 1e-12 * d2.abs().max(1.0));
            let sum = h1.axpy(1.0, &h2).unwrap();
            let a = beltrami_eigenvalue_derivative(&quad, &gf, lambda, &u, &sum).unwrap();
            let b = beltrami_eigenvalue_derivative(&quad, &gf, lambda, &u, &h2).unwrap();
            prop_assert!((a - d - b).abs() <= 1e-12 * a.abs().max(1.0));
        }

        #[test]
        fn operator_and_closed_forms_agree(
            g in prop::collection::vec(spd(), 8),
            b in prop::collection::vec(covectors(8), 3),
            k in covectors(8),
            l in covectors(8),
            lambda in -3.0f64..3.0,
        ) {
            let quad = grid(2);
            let gf = MetricField::new(Domain::standard_torus(), vec![8], g).unwrap();
            let h = sym_product(&k, &l).unwrap();
            let op = aprime_entries(&quad, &gf, lambda, &b, &h).unwrap();
            let closed = aprime_product_matrix(&quad, &gf, lambda, &b, &k, &l).unwrap();
            let scale = op.matrix.abs().max().max(1.0);
            prop_assert!((&op.matrix - &closed.matrix).abs().max() <= 1e-10 * scale);
            prop_assert!(op.asymmetry() <= 1e-10 * scale);
        }
    }

    fn random_disc(n: usize, seed: u64) -> (PeriodicMesh, MetricField, SymTensorField) {
        let mesh = PeriodicMesh::new(n).unwrap();
        let g = mesh.sample_metric(&SmoothSym3::random_metric(0.3, 6, seed)).unwrap();
        let h = mesh.sample_tensor(&SmoothSym3::random(Sym3::diag(0.2, -0.1, 0.3), 0.4, 6, seed + 100));
        (mesh, g, h)
    }

    #[test]
    fn mesh_derivatives_match_finite_differences() {
        let (mesh, g, h) = random_disc(4, 3);
        let opts = SolverOptions {
            polarization: 0.0,
            ..SolverOptions::default().with_backend(crate::solver::Backend::Sparse)
        };
        let disc = Discretization::new(&mesh, &g).unwrap();
        let spec = coclosed_spectrum(&disc, Window::Count(6), &opts).unwrap();
        let closed = closed_spectrum(&disc, 6, &opts).unwrap();
        let at = |s: f64| Discretization::new(&mesh, &g.perturbed(&h, s).unwrap()).unwrap();
        for i in 0..spec.pairs.len() {
            let p = &spec.pairs[i];
            if spec.clusters[p.cluster_id].size() > 1 {
                continue;
            }
            let d = coclosed_derivative(&disc, &spec, i, &h).unwrap();
            let fd = central_difference(
                |s| coclosed_spectrum(&at(s), Window::Count(6), &opts).unwrap().pairs[i].lambda,
                1e-4,
            );
            assert!((d - fd).abs() <= 1e-5 * d.abs().max(1e-2), "coclosed {i}: {d} vs {fd}");
        }
        for i in 0..closed.pairs.len() {
            if closed.clusters[closed.pairs[i].cluster_id].size() > 1 {
                continue;
            }
            let d = closed_derivative(&disc, &closed, i, &h).unwrap();
            let fd = central_difference(|s| closed_spectrum(&at(s), 6, &opts).unwrap().pairs[i].rho, 1e-4);
            assert!((d - fd).abs() <= 1e-5 * d.abs().max(1e-2), "closed {i}: {d} vs {fd}");
        }
    }

    #[test]
    fn mesh_conformal_rates_are_exact() {
        let (mesh, g, _) = random_disc(4, 8);
        let disc = Discretization::new(&mesh, &g).unwrap();
        let opts = SolverOptions {
            polarization: 0.0,
            ..SolverOptions::default()
        };
        let spec = coclosed_spectrum(&disc, Window::Count(4), &opts).unwrap();
        let h = g.as_tensor();
        for p in &spec.pairs {
            let d = dec_beltrami_derivative(&disc, p.lambda, &p.vector, &h).unwrap();
            assert!((d + p.lambda / 2.0).abs() < 1e-8, "{d} vs {}", -p.lambda / 2.0);
        }
        let closed = closed_spectrum(&disc, 4, &opts).unwrap();
        for p in &closed.pairs {
            let d = dec_closed_derivative(&disc, p.rho, &p.vector, &h).unwrap();
            assert!((d + p.rho).abs() < 1e-8, "{d} vs {}", -p.rho);
        }
    }

    #[test]
    fn degenerate_clusters_are_refused() {
        let mesh = PeriodicMesh::new(4).unwrap();
        let g = mesh.constant_metric(Sym3::identity()).unwrap();
        let disc = Discretization::new(&mesh, &g).unwrap();
        let spec = coclosed_spectrum(&disc, Window::Count(2), &SolverOptions::default()).unwrap();
        let h = g.as_tensor();
        assert!(matches!(
            coclosed_derivative(&disc, &spec, 0, &h),
            Err(Error::DegenerateCluster(_))
        ));
        let rates = coclosed_cluster_rates(&disc, &spec, 0, &h).unwrap();
        let l = spec.clusters[0].value;
        assert!(rates.iter().all(|r| (r + l / 2.0).abs() < 1e-8));
    }
}
