//! Discrete Beltrami and scalar eigenproblems on the periodic mesh.
//!
//! The coclosed spectrum is computed from the curl-curl pencil
//! `C u = λ² M_g u` on the `M_g`-orthogonal complement of the closed
//! cochains (gradients and the three parallel forms). The first-order
//! Galerkin pencil `(B, M_g)` is not used directly: on Whitney forms it has
//! a large spurious kernel and spurious eigenvalues between the true ones,
//! while the curl-curl pencil has exactly the closed cochains as kernel.
//!
//! Signs come from the helicity form `B`. The mesh splits the two
//! polarizations of a plane wave by a relative `O((|λ| h)²)`, so where the
//! continuum has `±λ` (nearly) degenerate the curl-curl eigenvectors are
//! linear polarizations with no helicity. The helicity Gram matrix of the
//! computed modes is therefore weighted by a steep bump in the gap between
//! modes, of width the polarization tolerance, and split into its positive
//! and negative subspaces; the curl-curl energy is diagonalized inside
//! each. A mode far from all others keeps its curl-curl eigenvector up to
//! negligible mixing and gets `λ = sign(uᵀ B u) · sqrt(λ²)`.
//!
//! The closed spectrum solves `S f = ρ M⁰_g f` with the constants removed. Constant metrics can use the translation-invariant
//! [`bloch`](crate::bloch) backend instead of the sparse one.

use nalgebra::{ComplexField, DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;
use serde::Serialize;

use crate::bloch;
use crate::error::{Error, Result};
use crate::krylov::{closest_to_shift, relative_residual, KrylovOptions, ShiftInvert};
use crate::mesh::PeriodicMesh;
use crate::metric::MetricField;
use crate::sparse::{dot, Csr, Factor};

/// Assembled operators for one mesh and metric.
#[derive(Clone, Debug)]
pub struct Discretization {
    pub mesh: PeriodicMesh,
    pub metric: MetricField,
    pub helicity: Csr,
    pub curl_curl: Csr,
    pub mass: Csr,
    pub d0: Csr,
    pub stiffness: Csr,
    pub mass0: Csr,
}

impl Discretization {
    pub fn new(mesh: &PeriodicMesh, metric: &MetricField) -> Result<Self> {
        let helicity = mesh.assemble_helicity();
        let curl_curl = mesh.assemble_curl_curl(metric)?;
        let mass = mesh.assemble_mass_1forms(metric)?;
        let (stiffness, mass0) = mesh.assemble_scalar(metric)?;
        Ok(Self {
            mesh: mesh.clone(),
            metric: metric.clone(),
            helicity,
            curl_curl,
            mass,
            d0: mesh.d0(),
            stiffness,
            mass0,
        })
    }

    /// `1/sqrt(largest eigenvalue of g)`: a lower estimate of the smallest
    /// nonzero `|λ|` on the `(2π)³` box, used to place shifts.
    pub fn spectral_scale(&self) -> f64 {
        let lmax = self.metric_max_eigenvalue();
        let l = self.mesh.lengths.iter().cloned().fold(0.0f64, f64::max);
        2.0 * std::f64::consts::PI / l / lmax.sqrt()
    }

    /// Largest eigenvalue of the metric over all samples.
    pub fn metric_max_eigenvalue(&self) -> f64 {
        self.metric
            .samples()
            .iter()
            .map(|s| s.to_matrix().symmetric_eigenvalues().max())
            .fold(0.0f64, f64::max)
    }

    /// `M_g`-orthogonal projector onto coclosed cochains.
    pub fn coclosed_projector(&self) -> Result<CoclosedProjector> {
        CoclosedProjector::new(self)
    }
}

/// Removes gradients and discrete harmonic forms in the `M_g` inner product.
pub struct CoclosedProjector {
    d0: Csr,
    mass: Csr,
    pinned: Factor,
    harmonic: Vec<Vec<f64>>,
    harmonic_mass: Vec<Vec<f64>>,
}

impl CoclosedProjector {
    fn new(disc: &Discretization) -> Result<Self> {
        let nv = disc.mesh.num_vertices();
        let s = &disc.stiffness;
        // vertex 0 pinned: drop its row and column
        let trip = s
            .triplets()
            .into_iter()
            .filter(|&(i, j, _)| i > 0 && j > 0)
            .map(|(i, j, v)| (i - 1, j - 1, v))
            .collect();
        let pinned = Factor::cholesky(&Csr::from_triplets(nv - 1, nv - 1, trip))?;
        let mut p = Self {
            d0: disc.d0.clone(),
            mass: disc.mass.clone(),
            pinned,
            harmonic: Vec::new(),
            harmonic_mass: Vec::new(),
        };
        for mut h in disc.mesh.parallel_cochains() {
            p.remove_gradient(&mut h);
            for (q, mq) in p.harmonic.iter().zip(&p.harmonic_mass) {
                let c = dot(mq, &h);
                h.iter_mut().zip(q).for_each(|(h, q)| *h -= c * q);
            }
            let mh = p.mass.matvec(&h);
            let nrm = dot(&h, &mh).sqrt();
            p.harmonic.push(h.iter().map(|x| x / nrm).collect());
            p.harmonic_mass.push(mh.iter().map(|x| x / nrm).collect());
        }
        Ok(p)
    }

    /// Solves `S φ = d0ᵀ M u` (up to constants) and returns `φ`.
    pub fn gradient_potential(&self, u: &[f64]) -> Vec<f64> {
        let rhs = self.d0.tmatvec(&self.mass.matvec(u));
        let sol = self.pinned.solve(&rhs[1..]);
        let mut phi = Vec::with_capacity(rhs.len());
        phi.push(0.0);
        phi.extend(sol);
        phi
    }

    fn remove_gradient(&self, u: &mut [f64]) {
        let phi = self.gradient_potential(u);
        let g = self.d0.matvec(&phi);
        u.iter_mut().zip(&g).for_each(|(u, g)| *u -= g);
    }

    pub fn apply(&self, u: &mut [f64]) {
        self.remove_gradient(u);
        for (q, mq) in self.harmonic.iter().zip(&self.harmonic_mass) {
            let c = dot(mq, u);
            u.iter_mut().zip(q).for_each(|(u, q)| *u -= c * q);
        }
    }

    /// `M_g`-orthonormal basis of the discrete harmonic 1-forms.
    pub fn harmonic_basis(&self) -> &[Vec<f64>] {
        &self.harmonic
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Backend {
    /// Bloch backend for constant metrics, sparse otherwise.
    #[default]
    Auto,
    Sparse,
    Bloch,
}

#[derive(Clone, Debug)]
pub struct SolverOptions {
    pub krylov: KrylovOptions,
    pub backend: Backend,
    /// Relative gap below which eigenvalues form one cluster.
    pub gap_tol: f64,
    /// Whether the Bloch backend should build eigenvectors.
    pub vectors: bool,
    /// Coefficient `κ` of the polarization tolerance `κ (|λ| h)² λ_max(g)`,
    /// `h` the largest mesh spacing. Curl-curl modes closer than this are
    /// regrouped by helicity sign; it bounds the splitting the mesh itself
    /// introduces between the two polarizations of a plane wave.
    pub polarization: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            krylov: KrylovOptions::default(),
            backend: Backend::Auto,
            gap_tol: 1e-6,
            vectors: true,
            polarization: 0.06,
        }
    }
}

impl SolverOptions {
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.krylov.seed = seed;
        self
    }

    pub fn with_backend(mut self, backend: Backend) -> Self {
        self.backend = backend;
        self
    }

    pub fn values_only(mut self) -> Self {
        self.vectors = false;
        self
    }
}

/// Which part of the coclosed spectrum to return.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Window {
    /// The `k` eigenvalues of smallest `|λ|`, extended to whole clusters.
    Count(usize),
    /// All eigenvalues with `|λ| ≤ Λ`.
    Radius(f64),
}

#[derive(Clone, Debug)]
pub struct BeltramiEigenpair {
    pub lambda: f64,
    /// `M_g`-normalized edge cochain; empty when vectors were not requested.
    pub vector: Vec<f64>,
    pub residual: f64,
    pub cluster_id: usize,
}

impl BeltramiEigenpair {
    pub fn sign(&self) -> i8 {
        if self.lambda > 0.0 {
            1
        } else {
            -1
        }
    }
}

#[derive(Clone, Debug)]
pub struct ClosedEigenpair {
    pub rho: f64,
    /// `M⁰_g`-normalized vertex cochain; its coboundary is the eigenform.
    pub vector: Vec<f64>,
    pub residual: f64,
    pub cluster_id: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct Cluster {
    pub id: usize,
    pub value: f64,
    pub members: Vec<usize>,
    /// Set when the nearest outside gap is within ten times the cluster
    /// tolerance.
    pub borderline: bool,
}

impl Cluster {
    pub fn size(&self) -> usize {
        self.members.len()
    }
}

#[derive(Clone, Debug)]
pub struct CoclosedSpectrum {
    pub pairs: Vec<BeltramiEigenpair>,
    pub clusters: Vec<Cluster>,
    pub seed: u64,
    pub backend: Backend,
}

#[derive(Clone, Debug)]
pub struct ClosedSpectrum {
    pub pairs: Vec<ClosedEigenpair>,
    pub clusters: Vec<Cluster>,
    pub seed: u64,
    pub backend: Backend,
}

/// One output record per eigenpair.
#[derive(Clone, Debug, Serialize, PartialEq)]
pub struct EigenpairRecord {
    pub lambda: f64,
    pub sign: i8,
    pub residual: f64,
    pub cluster_id: usize,
    pub seed: u64,
}

impl CoclosedSpectrum {
    pub fn values(&self) -> Vec<f64> {
        self.pairs.iter().map(|p| p.lambda).collect()
    }

    pub fn records(&self) -> Vec<EigenpairRecord> {
        self.pairs
            .iter()
            .map(|p| EigenpairRecord {
                lambda: p.lambda,
                sign: p.sign(),
                residual: p.residual,
                cluster_id: p.cluster_id,
                seed: self.seed,
            })
            .collect()
    }

    /// Cochains of one cluster.
    pub fn cluster_vectors(&self, id: usize) -> Vec<&[f64]> {
        self.clusters[id]
            .members
            .iter()
            .map(|&i| self.pairs[i].vector.as_slice())
            .collect()
    }
}

impl ClosedSpectrum {
    pub fn values(&self) -> Vec<f64> {
        self.pairs.iter().map(|p| p.rho).collect()
    }
}

/// Groups sorted values; returns cluster ids per value and the clusters.
pub fn cluster_values(values: &[f64], gap_tol: f64) -> (Vec<usize>, Vec<Cluster>) {
    let mut ids = vec![0; values.len()];
    let mut clusters: Vec<Cluster> = Vec::new();
    for (i, &v) in values.iter().enumerate() {
        let tol = gap_tol * v.abs().max(1.0);
        match clusters.last_mut() {
            Some(c) if (values[*c.members.last().unwrap()] - v).abs() <= tol => c.members.push(i),
            _ => clusters.push(Cluster {
                id: clusters.len(),
                value: 0.0,
                members: vec![i],
                borderline: false,
            }),
        }
        ids[i] = clusters.len() - 1;
    }
    let n = clusters.len();
    for k in 0..n {
        let members = clusters[k].members.clone();
        let mean = members.iter().map(|&i| values[i]).sum::<f64>() / members.len() as f64;
        clusters[k].value = mean;
        let tol = gap_tol * mean.abs().max(1.0);
        let lo = members[0];
        let hi = *members.last().unwrap();
        let below = (lo > 0).then(|| values[lo] - values[lo - 1]);
        let above = (hi + 1 < values.len()).then(|| values[hi + 1] - values[hi]);
        clusters[k].borderline = [below, above].into_iter().flatten().any(|g| g.abs() < 10.0 * tol);
    }
    (ids, clusters)
}

fn use_bloch(disc: &Discretization, backend: Backend) -> Result<bool> {
    match backend {
        Backend::Sparse => Ok(false),
        Backend::Bloch => {
            if disc.metric.is_constant() {
                Ok(true)
            } else {
                Err(Error::InvalidConfig("the Bloch backend needs a constant metric".into()))
            }
        }
        Backend::Auto => Ok(disc.metric.is_constant()),
    }
}

/// Beyond this relative splitting the mesh no longer resolves the mode.
const MAX_POLARIZATION_TOL: f64 = 0.05;

pub(crate) fn polarization_tol(kappa: f64, lambda: f64, mesh: &PeriodicMesh, gmax: f64) -> f64 {
    let h = mesh.spacing().into_iter().fold(0.0f64, f64::max);
    (kappa * (lambda * h).powi(2) * gmax).min(MAX_POLARIZATION_TOL)
}

/// Weight of the helicity coupling between modes with roots `a` and `b`:
/// `exp(−(gap/width)⁴)` with the polarization tolerance as width, flat for
/// mesh-split polarization pairs and negligible past two widths.
pub(crate) fn coupling_weight(a: f64, b: f64, tol: &impl Fn(f64) -> f64) -> f64 {
    let mid = 0.5 * (a + b);
    let width = tol(mid) * mid;
    if width <= 0.0 {
        return if a == b { 1.0 } else { 0.0 };
    }
    (-((a - b) / width).powi(4)).exp()
}

/// Couplings below this weight are dropped.
pub(crate) const MIN_WEIGHT: f64 = 1e-16;

/// Splits orthonormal curl-curl eigenvectors (eigenvalues `mu`, helicity
/// Gram matrix `h`, already weighted) into signed Beltrami pairs: the
/// helicity fixes the positive and negative subspaces, and the curl-curl
/// energy is diagonalized inside each. Returns `(λ, coefficients)`.
pub(crate) fn split_group<T>(mu: &[f64], h: &DMatrix<T>) -> Vec<(f64, DVector<T>)>
where
    T: ComplexField<RealField = f64>,
{
    let m = mu.len();
    let h = (h + h.adjoint()) * T::from_real(0.5);
    let eig = SymmetricEigen::new(h);
    let mut out = Vec::with_capacity(m);
    for negative in [true, false] {
        let cols: Vec<usize> = (0..m).filter(|&j| (eig.eigenvalues[j] < 0.0) == negative).collect();
        if cols.is_empty() {
            continue;
        }
        let y = DMatrix::from_fn(m, cols.len(), |i, j| eig.eigenvectors[(i, cols[j])].clone());
        let d = DMatrix::from_fn(m, m, |i, j| if i == j { T::from_real(mu[i]) } else { T::zero() });
        let energy = y.adjoint() * d * &y;
        let inner = SymmetricEigen::new((&energy + energy.adjoint()) * T::from_real(0.5));
        let sign = if negative { -1.0 } else { 1.0 };
        for j in 0..cols.len() {
            let z = &y * inner.eigenvectors.column(j);
            out.push((sign * inner.eigenvalues[j].max(0.0).sqrt(), z));
        }
    }
    out
}

/// Coclosed eigenpairs, smallest `|λ|` first.
pub fn coclosed_spectrum(disc: &Discretization, window: Window, opts: &SolverOptions) -> Result<CoclosedSpectrum> {
    if use_bloch(disc, opts.backend)? {
        return bloch::coclosed_spectrum(&disc.mesh, &disc.metric.samples()[0], window, opts);
    }
    let scale = disc.spectral_scale();
    let sigma = -0.5 * scale * scale;
    let system = disc.curl_curl.add_scaled(-sigma, &disc.mass);
    let factor = Factor::cholesky(&system)?;
    let projector = disc.coclosed_projector()?;
    let project = |u: &mut [f64]| projector.apply(u);
    let problem = ShiftInvert {
        sigma,
        stiffness: &disc.curl_curl,
        mass: &disc.mass,
        factor: &factor,
        project: &project,
    };
    let gmax = disc.metric_max_eigenvalue();
    let tol = |r: f64| polarization_tol(opts.polarization, r, &disc.mesh, gmax);
    // converge past the window edge by a guard band in which the helicity
    // coupling to modes inside the window has decayed
    let guard = |r: f64| r * (1.0 + GUARD_WIDTHS * tol(r));
    let initial = match window {
        Window::Count(k) => k + opts.krylov.block,
        Window::Radius(_) => 2 * opts.krylov.block,
    };
    let (pairs, _) = converge_until(&problem, initial, opts, |pairs| {
        let roots: Vec<f64> = pairs.iter().map(|p| p.value.max(0.0).sqrt()).collect();
        let edge = match window {
            Window::Count(k) if roots.len() >= k => roots[k - 1],
            Window::Count(_) => return false,
            Window::Radius(r) => r,
        };
        roots.last().is_some_and(|&top| top > guard(edge))
    })?;
    let mut values = split_by_helicity(disc, &pairs, &tol);
    values.sort_by(|a, b| a.0.abs().total_cmp(&b.0.abs()));
    let values = apply_window(values, window, opts.gap_tol)?;
    Ok(finish_coclosed(values, opts, Backend::Sparse))
}

/// Width of the guard band in units of the polarization tolerance.
pub(crate) const GUARD_WIDTHS: f64 = 3.0;

/// Keeps the window of signed values sorted by `|λ|`, completing the last
/// cluster for count windows; returns them sorted by `λ`.
pub(crate) fn apply_window(mut values: Vec<(f64, Vec<f64>, f64)>, window: Window, gap_tol: f64) -> Result<Vec<(f64, Vec<f64>, f64)>> {
    match window {
        Window::Count(k) => {
            if values.len() > k {
                let edge = values[k - 1].0.abs();
                let mut end = k;
                while end < values.len() && values[end].0.abs() - edge <= gap_tol * edge.max(1.0) {
                    end += 1;
                }
                values.truncate(end);
            }
        }
        Window::Radius(r) => values.retain(|v| v.0.abs() <= r),
    }
    if values.is_empty() {
        return Err(Error::EmptyWindow);
    }
    values.sort_by(|a, b| a.0.total_cmp(&b.0));
    Ok(values)
}

/// Signed pairs from `M_g`-orthonormal curl-curl eigenvectors sorted by
/// eigenvalue.
fn split_by_helicity(disc: &Discretization, pairs: &[crate::krylov::RitzPair], tol: &impl Fn(f64) -> f64) -> Vec<(f64, Vec<f64>, f64)> {
    let m = pairs.len();
    let roots: Vec<f64> = pairs.iter().map(|p| p.value.max(0.0).sqrt()).collect();
    let bv: Vec<Vec<f64>> = pairs.par_iter().map(|p| disc.helicity.matvec(&p.vector)).collect();
    let mut h = DMatrix::zeros(m, m);
    for i in 0..m {
        for j in i..m {
            let w = coupling_weight(roots[i], roots[j], tol);
            if w > MIN_WEIGHT {
                let v = w * dot(&pairs[i].vector, &bv[j]);
                h[(i, j)] = v;
                h[(j, i)] = v;
            }
        }
    }
    let mu: Vec<f64> = pairs.iter().map(|p| p.value).collect();
    split_group(&mu, &h)
        .into_par_iter()
        .map(|(lambda, z)| {
            let mut v = vec![0.0; pairs[0].vector.len()];
            for (p, a) in pairs.iter().zip(z.iter()) {
                if a.abs() > 1e-15 {
                    v.iter_mut().zip(&p.vector).for_each(|(v, u)| *v += a * u);
                }
            }
            let residual = relative_residual(&disc.curl_curl, &disc.mass, lambda * lambda, &v);
            (lambda, v, residual)
        })
        .collect()
}

pub(crate) fn finish_coclosed(values: Vec<(f64, Vec<f64>, f64)>, opts: &SolverOptions, backend: Backend) -> CoclosedSpectrum {
    let lambdas: Vec<f64> = values.iter().map(|v| v.0).collect();
    let (ids, clusters) = cluster_values(&lambdas, opts.gap_tol);
    let pairs = values
        .into_iter()
        .zip(ids)
        .map(|((lambda, vector, residual), cluster_id)| BeltramiEigenpair {
            lambda,
            vector,
            residual,
            cluster_id,
        })
        .collect();
    CoclosedSpectrum {
        pairs,
        clusters,
        seed: opts.krylov.seed,
        backend,
    }
}

/// Converges eigenpairs nearest the shift until `done` accepts the set of
/// pairs known to be complete (sorted by value, all values below the
/// covered radius). Also reports whether the whole spectrum was exhausted.
fn converge_until(
    problem: &ShiftInvert<'_>,
    initial: usize,
    opts: &SolverOptions,
    done: impl Fn(&[crate::krylov::RitzPair]) -> bool,
) -> Result<(Vec<crate::krylov::RitzPair>, bool)> {
    let sigma = problem.sigma;
    let mut want = if problem.mass.rows <= crate::krylov::DENSE_LIMIT {
        problem.mass.rows
    } else {
        initial
    };
    loop {
        let mut kopts = opts.krylov.clone();
        kopts.max_dim = kopts.max_dim.max(want + 4 * kopts.block);
        let mut pairs = closest_to_shift(problem, want, &kopts)?;
        let exhausted = pairs.len() < want;
        // everything with |λ − σ| < radius has been found
        let radius = pairs.iter().map(|p| (p.value - sigma).abs()).fold(0.0, f64::max);
        let covered = if exhausted { f64::INFINITY } else { radius + sigma };
        pairs.retain(|p| p.value < covered);
        pairs.sort_by(|a, b| a.value.total_cmp(&b.value));
        if exhausted || done(&pairs) {
            return Ok((pairs, exhausted));
        }
        want += 2 * opts.krylov.block;
        if want > problem.mass.rows / 2 {
            return Err(Error::NoConvergence {
                iterations: 0,
                converged: pairs.len(),
                requested: want,
            });
        }
    }
}

/// Lowest `k` nonzero eigenvalues of `S f = ρ M⁰ f`, extended to whole
/// clusters.
pub fn closed_spectrum(disc: &Discretization, k: usize, opts: &SolverOptions) -> Result<ClosedSpectrum> {
    if use_bloch(disc, opts.backend)? {
        return bloch::closed_spectrum(&disc.mesh, &disc.metric.samples()[0], k, opts);
    }
    let scale = disc.spectral_scale();
    let sigma = -0.5 * scale * scale;
    let system = disc.stiffness.add_scaled(-sigma, &disc.mass0);
    let factor = Factor::cholesky(&system)?;
    let ones = vec![1.0; disc.mesh.num_vertices()];
    let m1 = disc.mass0.matvec(&ones);
    let vol = dot(&ones, &m1);
    let project = |f: &mut [f64]| {
        let c = dot(&m1, f) / vol;
        f.iter_mut().for_each(|x| *x -= c);
    };
    let problem = ShiftInvert {
        sigma,
        stiffness: &disc.stiffness,
        mass: &disc.mass0,
        factor: &factor,
        project: &project,
    };
    let gap = |v: f64| opts.gap_tol * v.abs().max(1.0);
    let (pairs, _) = converge_until(&problem, k + opts.krylov.block, opts, |pairs| {
        pairs.len() > k && pairs[pairs.len() - 1].value - pairs[k - 1].value > gap(pairs[k - 1].value)
    })?;
    let values: Vec<(f64, Vec<f64>, f64)> = pairs.into_iter().map(|p| (p.value, p.vector, p.residual)).collect();
    let values = apply_window(values, Window::Count(k), opts.gap_tol)?;
    Ok(finish_closed(values, opts, Backend::Sparse))
}

pub(crate) fn finish_closed(values: Vec<(f64, Vec<f64>, f64)>, opts: &SolverOptions, backend: Backend) -> ClosedSpectrum {
    let rhos: Vec<f64> = values.iter().map(|v| v.0).collect();
    let (ids, clusters) = cluster_values(&rhos, opts.gap_tol);
    let pairs = values
        .into_iter()
        .zip(ids)
        .map(|((rho, vector, residual), cluster_id)| ClosedEigenpair {
            rho,
            vector,
            residual,
            cluster_id,
        })
        .collect();
    ClosedSpectrum {
        pairs,
        clusters,
        seed: opts.krylov.seed,
        backend,
    }
}

/// Helicity `uᵀ B u`.
pub fn helicity_of(disc: &Discretization, u: &[f64]) -> f64 {
    disc.helicity.form(u, u)
}

/// Residual `‖C u − λ² M_g u‖ / ‖λ² M_g u‖` of a coclosed eigenpair.
pub fn coclosed_residual(disc: &Discretization, lambda: f64, u: &[f64]) -> f64 {
    relative_residual(&disc.curl_curl, &disc.mass, lambda * lambda, u)
}

/// All generalized eigenvalues of a small pencil `(A, M)` by dense
/// Cholesky reduction. Intended for coarse meshes and cross-checks.
pub fn dense_pencil_eigenvalues(a: &Csr, m: &Csr) -> Vec<f64> {
    let n = a.rows;
    let am = DMatrix::from_fn(n, n, |i, j| a.get(i, j));
    let mm = DMatrix::from_fn(n, n, |i, j| m.get(i, j));
    let l = mm.cholesky().expect("mass matrix is SPD").l();
    let linv = l.try_inverse().expect("invertible factor");
    let c = &linv * am * linv.transpose();
    let c = (&c + c.transpose()) * 0.5;
    let mut v: Vec<f64> = SymmetricEigen::new(c).eigenvalues.iter().cloned().collect();
    v.sort_by(f64::total_cmp);
    v
}
