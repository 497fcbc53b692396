//! Finite-dimensional families `q ↦ A(q)` that are self-adjoint for a
//! parameter-dependent inner product `⟨x, y⟩_q = yᵀ G(q) x`: resolvents,
//! contour spectral projectors, transfer maps, the defining function of a
//! multiple eigenvalue and its first-order entries, and a degeneracy scan
//! over two-parameter slices.
//!
//! Contour integrals are computed in complex arithmetic and their real part
//! is returned.

use nalgebra::{Complex, DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

type C64 = Complex<f64>;

/// Default number of trapezoid nodes on a contour.
pub const DEFAULT_NODES: usize = 64;

/// Eigenvalues may not come closer to the contour than this fraction of the
/// radius.
pub const CONTOUR_MARGIN: f64 = 0.05;

/// Transfer maps with a larger condition number are rejected.
pub const MAX_TRANSFER_CONDITION: f64 = 1e6;

/// Resolvent singularity threshold.
pub const RESOLVENT_TOL: f64 = 1e-12;

/// A family with value and directional derivative evaluators.
pub trait OperatorFamily: Sync {
    fn dim(&self) -> usize;
    fn params(&self) -> usize;
    fn operator(&self, q: &[f64]) -> DMatrix<f64>;
    fn gram(&self, q: &[f64]) -> DMatrix<f64>;
    fn operator_derivative(&self, q: &[f64], h: &[f64]) -> DMatrix<f64>;
    fn gram_derivative(&self, q: &[f64], h: &[f64]) -> DMatrix<f64>;
}

/// `A(q) = G(q)⁻¹ S(q)` with `S(q) = S₀ + Σ q_i S_i` symmetric and
/// `G(q) = G₀ + Σ q_i G_i` positive definite, so `G A = Aᵀ G`.
#[derive(Clone, Debug)]
pub struct AffineFamily {
    pub s0: DMatrix<f64>,
    pub s: Vec<DMatrix<f64>>,
    pub g0: DMatrix<f64>,
    pub g: Vec<DMatrix<f64>>,
}

impl AffineFamily {
    fn combine(base: &DMatrix<f64>, terms: &[DMatrix<f64>], q: &[f64]) -> DMatrix<f64> {
        terms.iter().zip(q).fold(base.clone(), |acc, (m, c)| acc + m * *c)
    }

    fn direction(terms: &[DMatrix<f64>], h: &[f64], n: usize) -> DMatrix<f64> {
        terms.iter().zip(h).fold(DMatrix::zeros(n, n), |acc, (m, c)| acc + m * *c)
    }

    pub fn symmetric_part(&self, q: &[f64]) -> DMatrix<f64> {
        Self::combine(&self.s0, &self.s, q)
    }
}

impl OperatorFamily for AffineFamily {
    fn dim(&self) -> usize {
        self.s0.nrows()
    }

    fn params(&self) -> usize {
        self.s.len()
    }

    fn operator(&self, q: &[f64]) -> DMatrix<f64> {
        let g = self.gram(q);
        g.cholesky().expect("Gram matrix is SPD").solve(&self.symmetric_part(q))
    }

    fn gram(&self, q: &[f64]) -> DMatrix<f64> {
        Self::combine(&self.g0, &self.g, q)
    }

    fn operator_derivative(&self, q: &[f64], h: &[f64]) -> DMatrix<f64> {
        // G A = S  ⇒  G A′ = S′ − G′ A
        let n = self.dim();
        let rhs = Self::direction(&self.s, h, n) - Self::direction(&self.g, h, n) * self.operator(q);
        self.gram(q).cholesky().expect("Gram matrix is SPD").solve(&rhs)
    }

    fn gram_derivative(&self, _q: &[f64], h: &[f64]) -> DMatrix<f64> {
        Self::direction(&self.g, h, self.dim())
    }
}

/// Named demonstration families.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    /// `q₁σ_z + q₂σ_x ⊕ (3)` with `G = I`: a conic degeneracy at the origin.
    Conic,
    /// The conic family with a smoothly varying inner product.
    ConicMetric,
    /// `q₂ Id ⊕ (3) + q₁ σ_z ⊕ 0`: no off-diagonal coupling, so the pair is
    /// degenerate along the line `q₁ = 0`.
    ScalarBlock,
    /// A dense six-dimensional family with varying inner product.
    Random,
}

impl Preset {
    pub const ALL: [Preset; 4] = [Preset::Conic, Preset::ConicMetric, Preset::ScalarBlock, Preset::Random];

    pub fn id(&self) -> &'static str {
        match self {
            Preset::Conic => "conic",
            Preset::ConicMetric => "conic_metric",
            Preset::ScalarBlock => "scalar_block",
            Preset::Random => "random",
        }
    }

    pub fn from_id(id: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|p| p.id() == id)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown family preset `{id}`")))
    }

    pub fn family(&self) -> AffineFamily {
        let embed = |m: [[f64; 2]; 2]| {
            DMatrix::from_fn(3, 3, |i, j| if i < 2 && j < 2 { m[i][j] } else { 0.0 })
        };
        let sz = embed([[1.0, 0.0], [0.0, -1.0]]);
        let sx = embed([[0.0, 1.0], [1.0, 0.0]]);
        let id2 = embed([[1.0, 0.0], [0.0, 1.0]]);
        let offset = DMatrix::from_diagonal(&DVector::from_vec(vec![0.0, 0.0, 3.0]));
        match self {
            Preset::Conic => AffineFamily {
                s0: offset,
                s: vec![sz, sx],
                g0: DMatrix::identity(3, 3),
                g: vec![DMatrix::zeros(3, 3); 2],
            },
            Preset::ConicMetric => {
                let k1 = DMatrix::from_row_slice(3, 3, &[0.3, 0.1, 0.0, 0.1, -0.2, 0.1, 0.0, 0.1, 0.2]);
                let k2 = DMatrix::from_row_slice(3, 3, &[-0.1, 0.2, 0.1, 0.2, 0.3, 0.0, 0.1, 0.0, -0.1]);
                AffineFamily {
                    s0: offset,
                    s: vec![sz, sx],
                    g0: DMatrix::identity(3, 3),
                    g: vec![k1, k2],
                }
            }
            Preset::ScalarBlock => AffineFamily {
                s0: offset,
                s: vec![sz, id2],
                g0: DMatrix::identity(3, 3),
                g: vec![DMatrix::zeros(3, 3); 2],
            },
            Preset::Random => random_family(6, 2, 7),
        }
    }
}

/// Deterministic dense family with `G(q)` positive definite for `|q|_∞ ≤ 1`.
pub fn random_family(n: usize, params: usize, seed: u64) -> AffineFamily {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut sym = |scale: f64| {
        let m = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
        (&m + m.transpose()) * (0.5 * scale)
    };
    let s0 = sym(2.0);
    let s = (0..params).map(|_| sym(1.0)).collect();
    // each term has spectral norm below 0.5 / params after scaling
    let g: Vec<DMatrix<f64>> = (0..params)
        .map(|_| {
            let m = sym(1.0);
            let norm = SymmetricEigen::new(m.clone()).eigenvalues.amax();
            m * (0.4 / params as f64 / norm)
        })
        .collect();
    AffineFamily {
        s0,
        s,
        g0: DMatrix::identity(n, n),
        g,
    }
}

/// Eigenvalues ascending with `G`-orthonormal eigenvectors as columns.
pub fn eigen(family: &dyn OperatorFamily, q: &[f64]) -> (Vec<f64>, DMatrix<f64>) {
    let g = family.gram(q);
    let a = family.operator(q);
    let n = g.nrows();
    let l = g.cholesky().expect("Gram matrix is SPD").l();
    let linv = l.clone().try_inverse().expect("invertible factor");
    // Lᵀ A L⁻ᵀ is symmetric because G A = Aᵀ G
    let c = l.transpose() * a * linv.transpose();
    let c = (&c + c.transpose()) * 0.5;
    let e = SymmetricEigen::new(c);
    let mut order: Vec<usize> = (0..e.eigenvalues.len()).collect();
    order.sort_by(|&i, &j| e.eigenvalues[i].total_cmp(&e.eigenvalues[j]));
    let values = order.iter().map(|&i| e.eigenvalues[i]).collect();
    let vecs = DMatrix::from_fn(n, order.len(), |r, c| e.eigenvectors[(r, order[c])]);
    (values, linv.transpose() * vecs)
}

/// `max |G A − Aᵀ G|`.
pub fn self_adjointness_defect(family: &dyn OperatorFamily, q: &[f64]) -> f64 {
    let g = family.gram(q);
    let a = family.operator(q);
    (&g * &a - a.transpose() * &g).abs().max()
}

fn complex(m: &DMatrix<f64>) -> DMatrix<C64> {
    m.map(|x| C64::new(x, 0.0))
}

fn complex_resolvent(a: &DMatrix<f64>, z: C64) -> DMatrix<C64> {
    let n = a.nrows();
    let m = DMatrix::<C64>::identity(n, n) * z - complex(a);
    m.lu().try_inverse().expect("shift off the spectrum")
}

/// `R(μ) = (μ − A(q))⁻¹`.
pub fn resolvent(family: &dyn OperatorFamily, q: &[f64], mu: f64) -> Result<DMatrix<f64>> {
    let (values, _) = eigen(family, q);
    let distance = values.iter().map(|l| (mu - l).abs()).fold(f64::INFINITY, f64::min);
    if distance <= RESOLVENT_TOL {
        return Err(Error::SingularResolvent { shift: mu, distance });
    }
    let n = family.dim();
    let m = DMatrix::identity(n, n) * mu - family.operator(q);
    Ok(m.lu().try_inverse().expect("checked distance to the spectrum"))
}

/// Circle `λ₀ + ε e^{it}` sampled at `nodes` equispaced points.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Contour {
    pub center: f64,
    pub radius: f64,
    pub nodes: usize,
}

impl Contour {
    pub fn new(center: f64, radius: f64) -> Self {
        Self {
            center,
            radius,
            nodes: DEFAULT_NODES,
        }
    }

    pub fn with_nodes(mut self, nodes: usize) -> Self {
        self.nodes = nodes;
        self
    }

    /// Rejects contours passing within the margin of an eigenvalue.
    pub fn check(&self, values: &[f64]) -> Result<()> {
        for &l in values {
            let d = ((l - self.center).abs() - self.radius).abs();
            if d < CONTOUR_MARGIN * self.radius {
                return Err(Error::ContourTooClose {
                    eigenvalue: l,
                    distance: d,
                });
            }
        }
        Ok(())
    }

    /// `(1/2πi) ∮ F(z) dz` by the trapezoid rule, real part; nodes are
    /// evaluated in parallel and summed in index order.
    fn integrate<F>(&self, f: F) -> DMatrix<f64>
    where
        F: Fn(C64) -> DMatrix<C64> + Sync,
    {
        let terms: Vec<DMatrix<C64>> = (0..self.nodes)
            .into_par_iter()
            .map(|k| {
                let t = 2.0 * std::f64::consts::PI * k as f64 / self.nodes as f64;
                let e = C64::new(t.cos(), t.sin());
                let z = C64::new(self.center, 0.0) + e * self.radius;
                // dz / (2πi) = ε e^{it} dt / 2π
                f(z) * (e * self.radius / self.nodes as f64)
            })
            .collect();
        let mut sum = terms[0].clone();
        for t in &terms[1..] {
            sum += t;
        }
        sum.map(|c| c.re)
    }
}

/// Resolvent shift between the contour and the nearest excluded eigenvalue
/// when the radius is [`isolating_radius`].
pub fn default_shift(contour: &Contour) -> f64 {
    contour.center + 1.5 * contour.radius
}

/// Half the distance from `center` to the nearest eigenvalue outside the
/// cluster `|λ − center| ≤ cluster_tol`.
pub fn isolating_radius(values: &[f64], center: f64, cluster_tol: f64) -> f64 {
    0.5 * values
        .iter()
        .map(|l| (l - center).abs())
        .filter(|&d| d > cluster_tol)
        .fold(f64::INFINITY, f64::min)
}

#[derive(Clone, Debug)]
pub struct SpectralProjector {
    pub matrix: DMatrix<f64>,
    pub contour: Contour,
}

impl SpectralProjector {
    pub fn idempotency_defect(&self) -> f64 {
        (&self.matrix * &self.matrix - &self.matrix).abs().max()
    }

    pub fn trace(&self) -> f64 {
        self.matrix.trace()
    }

    /// Multiplicity inside the contour.
    pub fn rank(&self) -> usize {
        self.trace().round().max(0.0) as usize
    }

    pub fn commutator_defect(&self, a: &DMatrix<f64>) -> f64 {
        (a * &self.matrix - &self.matrix * a).abs().max()
    }
}

/// `P(q) = (1/2πi) ∮ R_{A(q)}(z) dz`.
pub fn spectral_projector(family: &dyn OperatorFamily, q: &[f64], contour: Contour) -> Result<SpectralProjector> {
    let (values, _) = eigen(family, q);
    contour.check(&values)?;
    let a = family.operator(q);
    Ok(SpectralProjector {
        matrix: contour.integrate(|z| complex_resolvent(&a, z)),
        contour,
    })
}

/// `P′(q)[h] = (1/2πi) ∮ R(z) A′[h] R(z) dz`.
pub fn projector_derivative(family: &dyn OperatorFamily, q: &[f64], h: &[f64], contour: Contour) -> Result<DMatrix<f64>> {
    let (values, _) = eigen(family, q);
    contour.check(&values)?;
    let a = family.operator(q);
    let da = complex(&family.operator_derivative(q, h));
    Ok(contour.integrate(|z| {
        let r = complex_resolvent(&a, z);
        &r * &da * &r
    }))
}

/// Eigenpairs of `A(q₀)` inside the contour.
#[derive(Clone, Debug)]
pub struct Eigenspace {
    pub values: Vec<f64>,
    /// `⟨·,·⟩_{q₀}`-orthonormal basis as columns.
    pub basis: DMatrix<f64>,
}

pub fn eigenspace(family: &dyn OperatorFamily, q0: &[f64], contour: &Contour) -> Result<Eigenspace> {
    let (values, vecs) = eigen(family, q0);
    contour.check(&values)?;
    let inside: Vec<usize> = (0..values.len())
        .filter(|&i| (values[i] - contour.center).abs() < contour.radius)
        .collect();
    if inside.is_empty() {
        return Err(Error::EmptyWindow);
    }
    Ok(Eigenspace {
        values: inside.iter().map(|&i| values[i]).collect(),
        basis: DMatrix::from_fn(vecs.nrows(), inside.len(), |r, c| vecs[(r, inside[c])]),
    })
}

/// The defining function in the basis of `E(q₀)`.
#[derive(Clone, Debug)]
pub struct DefiningFunction {
    /// `m x m` matrix `F` with `f(q) v_i = Σ_j F_ji v_j`.
    pub matrix: DMatrix<f64>,
    pub shift: f64,
    pub transfer_condition: f64,
}

impl DefiningFunction {
    /// Entries `⟨f(q) v_i, v_j⟩_{q₀}`.
    pub fn entries(&self) -> DMatrix<f64> {
        self.matrix.transpose()
    }

    pub fn eigenvalues(&self) -> Vec<f64> {
        let mut e: Vec<f64> = self.matrix.clone().complex_eigenvalues().iter().map(|c| c.re).collect();
        e.sort_by(f64::total_cmp);
        e
    }

    /// Distance to the nearest multiple of the identity.
    pub fn scalar_defect(&self) -> f64 {
        let m = self.matrix.nrows();
        let c = self.matrix.trace() / m as f64;
        (&self.matrix - DMatrix::identity(m, m) * c).abs().max()
    }
}

/// `f(q) = S(q)⁻¹ R_{A(q)}(μ) S(q)` on `E(q₀)` with `S(q) = P(q) ∘ P(q₀)`.
pub fn defining_function(
    family: &dyn OperatorFamily,
    q0: &[f64],
    q: &[f64],
    contour: Contour,
    shift: f64,
) -> Result<DefiningFunction> {
    let e0 = eigenspace(family, q0, &contour)?;
    let p = spectral_projector(family, q, contour)?;
    let r = resolvent(family, q, shift)?;
    // S v_i = P(q) v_i since P(q₀) v_i = v_i
    let x = &p.matrix * &e0.basis;
    let y = &r * &x;
    // condition number measured in ⟨·,·⟩_q
    let l = family.gram(q).cholesky().expect("Gram matrix is SPD").l();
    let svd = (l.transpose() * &x).svd(false, false);
    // the base basis is orthonormal, so a well-behaved transfer map has
    // singular values near one
    let smax = svd.singular_values.max().max(1.0);
    let smin = svd.singular_values.min();
    let cond = if smin > 0.0 { smax / smin } else { f64::INFINITY };
    if !(cond < MAX_TRANSFER_CONDITION) {
        return Err(Error::SingularTransfer(cond));
    }
    let matrix = x.svd(true, true).solve(&y, 0.0).expect("full SVD");
    Ok(DefiningFunction {
        matrix,
        shift,
        transfer_condition: cond,
    })
}

/// First-order entries of the defining function at `q₀`.
#[derive(Clone, Debug)]
pub struct FPrime {
    /// `⟨R′_A(q₀)[h] v_i, v_j⟩_{q₀}`.
    pub entries: DMatrix<f64>,
    /// Largest entry of `⟨[S′(q₀), R_A(q₀)][h] v_i, v_j⟩_{q₀}`.
    pub commutator: f64,
}

impl FPrime {
    /// `max |f′_ij − f′_ji|`. Zero when `E(q₀)` is a single eigenspace; with
    /// a varying inner product and several eigenvalues in the window it
    /// need not vanish, and is reported rather than assumed.
    pub fn asymmetry(&self) -> f64 {
        (&self.entries - self.entries.transpose()).abs().max()
    }
}

/// Entries of `f′(q₀)[h]` for a `⟨·,·⟩_{q₀}`-orthonormal eigenbasis of
/// `E(q₀)`, with `R′ = R A′ R`.
pub fn f_prime_entries(
    family: &dyn OperatorFamily,
    q0: &[f64],
    h: &[f64],
    basis: &DMatrix<f64>,
    contour: Contour,
    shift: f64,
) -> Result<FPrime> {
    let g = family.gram(q0);
    let m = basis.ncols();
    let gram = basis.transpose() * &g * basis;
    let dev = (gram - DMatrix::identity(m, m)).abs().max();
    if dev > crate::perturbation::ORTHONORMAL_TOL {
        return Err(Error::NotOrthonormal(dev));
    }
    let r = resolvent(family, q0, shift)?;
    let da = family.operator_derivative(q0, h);
    let dr = &r * da * &r;
    let p0 = spectral_projector(family, q0, contour)?.matrix;
    let ds = projector_derivative(family, q0, h, contour)? * &p0;
    let comm = &ds * &r - &r * &ds;
    // ⟨M v_i, v_j⟩ = (Vᵀ G M V)_ji
    let pair = |mat: &DMatrix<f64>| (basis.transpose() * &g * mat * basis).transpose();
    Ok(FPrime {
        entries: pair(&dr),
        commutator: pair(&comm).abs().max(),
    })
}

/// Connected set of slice points where the selected gap is small.
#[derive(Clone, Debug, Serialize)]
pub struct DegeneracyComponent {
    pub points: usize,
    pub centroid: [f64; 2],
    pub diameter: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct SliceScan {
    pub spacing: f64,
    pub tolerance: f64,
    pub lipschitz: f64,
    pub components: Vec<DegeneracyComponent>,
}

impl SliceScan {
    pub fn max_diameter(&self) -> f64 {
        self.components.iter().map(|c| c.diameter).fold(0.0, f64::max)
    }
}

/// A two-parameter slice `q = base + s e₁ + t e₂`, `s, t ∈ [−w, w]`.
#[derive(Clone, Debug)]
pub struct Slice {
    pub base: Vec<f64>,
    pub e1: Vec<f64>,
    pub e2: Vec<f64>,
    pub half_width: f64,
}

impl Slice {
    /// The coordinate plane of the first two parameters.
    pub fn coordinate(params: usize, half_width: f64) -> Self {
        let unit = |i: usize| (0..params).map(|j| if i == j { 1.0 } else { 0.0 }).collect();
        Self {
            base: vec![0.0; params],
            e1: unit(0),
            e2: unit(1),
            half_width,
        }
    }

    fn point(&self, s: f64, t: f64) -> Vec<f64> {
        (0..self.base.len())
            .map(|i| self.base[i] + s * self.e1[i] + t * self.e2[i])
            .collect()
    }
}

/// Scans the gap `λ_{k+1} − λ_k` on an `n x n` grid and returns the
/// connected components where it falls below `L · spacing`, with `L` the
/// largest gap change between grid neighbours per unit length.
pub fn codim2_slice_scan(family: &dyn OperatorFamily, slice: &Slice, k: usize, n: usize) -> SliceScan {
    let w = slice.half_width;
    let spacing = 2.0 * w / (n - 1) as f64;
    let coord = |i: usize| -w + spacing * i as f64;
    let gaps: Vec<f64> = (0..n * n)
        .into_par_iter()
        .map(|idx| {
            let (values, _) = eigen(family, &slice.point(coord(idx / n), coord(idx % n)));
            values[k + 1] - values[k]
        })
        .collect();
    let mut lipschitz = 0.0f64;
    for i in 0..n {
        for j in 0..n {
            let g = gaps[i * n + j];
            if i + 1 < n {
                lipschitz = lipschitz.max((gaps[(i + 1) * n + j] - g).abs() / spacing);
            }
            if j + 1 < n {
                lipschitz = lipschitz.max((gaps[i * n + j + 1] - g).abs() / spacing);
            }
        }
    }
    let tolerance = lipschitz * spacing;
    let mut label = vec![usize::MAX; n * n];
    let mut components = Vec::new();
    for start in 0..n * n {
        if gaps[start] >= tolerance || label[start] != usize::MAX {
            continue;
        }
        let id = components.len();
        let mut stack = vec![start];
        label[start] = id;
        let mut members = Vec::new();
        while let Some(p) = stack.pop() {
            members.push(p);
            let (i, j) = (p / n, p % n);
            let mut nb = Vec::with_capacity(4);
            if i > 0 {
                nb.push(p - n);
            }
            if i + 1 < n {
                nb.push(p + n);
            }
            if j > 0 {
                nb.push(p - 1);
            }
            if j + 1 < n {
                nb.push(p + 1);
            }
            for q in nb {
                if gaps[q] < tolerance && label[q] == usize::MAX {
                    label[q] = id;
                    stack.push(q);
                }
            }
        }
        let pts: Vec<[f64; 2]> = members.iter().map(|&p| [coord(p / n), coord(p % n)]).collect();
        let centroid = [
            pts.iter().map(|p| p[0]).sum::<f64>() / pts.len() as f64,
            pts.iter().map(|p| p[1]).sum::<f64>() / pts.len() as f64,
        ];
        let mut diameter = 0.0f64;
        for a in &pts {
            for b in &pts {
                diameter = diameter.max(((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt());
            }
        }
        components.push(DegeneracyComponent {
            points: pts.len(),
            centroid,
            diameter,
        });
    }
    SliceScan {
        spacing,
        tolerance,
        lipschitz,
        components,
    }
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    fn central<F: Fn(f64) -> DMatrix<f64>>(f: F, d: f64) -> DMatrix<f64> {
        (f(-2.0 * d) - f(2.0 * d) + (f(d) - f(-d)) * 8.0) / (12.0 * d)
    }

    fn diag_family(d: &[f64]) -> AffineFamily {
        let n = d.len();
        AffineFamily {
            s0: DMatrix::from_diagonal(&DVector::from_row_slice(d)),
            s: vec![],
            g0: DMatrix::identity(n, n),
            g: vec![],
        }
    }

    #[test]
    fn resolvent_of_diagonal_operator() {
        let f = diag_family(&[1.0, 3.0]);
        let r = resolvent(&f, &[], 2.0).unwrap();
        assert!((r - DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0])).abs().max() < 1e-15);
        assert!(matches!(resolvent(&f, &[], 3.0), Err(Error::SingularResolvent { .. })));
    }

    #[test]
    fn resolvent_inverts_and_has_shifted_spectrum() {
        let f = Preset::Random.family();
        let q = [0.3, -0.2];
        let mu = 0.37;
        let r = resolvent(&f, &q, mu).unwrap();
        let n = f.dim();
        let id = (DMatrix::identity(n, n) * mu - f.operator(&q)) * &r;
        assert!((id - DMatrix::identity(n, n)).abs().max() < 1e-12);
        let (values, _) = eigen(&f, &q);
        let mut expect: Vec<f64> = values.iter().map(|l| 1.0 / (mu - l)).collect();
        expect.sort_by(f64::total_cmp);
        let mut got: Vec<f64> = r.complex_eigenvalues().iter().map(|c| c.re).collect();
        got.sort_by(f64::total_cmp);
        for (a, b) in got.iter().zip(&expect) {
            assert!((a - b).abs() < 1e-9 * b.abs().max(1.0), "{a} vs {b}");
        }
    }

    #[test]
    fn projector_of_isolated_eigenvalue() {
        let f = diag_family(&[1.0, 3.0]);
        let p = spectral_projector(&f, &[], Contour::new(1.0, 0.5)).unwrap();
        assert!((p.matrix - DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0])).abs().max() < 1e-12);
    }

    #[test]
    fn projector_of_multiple_eigenvalue_is_orthogonal_eigenprojector() {
        let mut f = diag_family(&[2.0, 2.0, 2.0, 5.0]);
        // conjugate into a non-diagonal form with a non-trivial inner product
        let g = DMatrix::from_row_slice(4, 4, &[2.0, 0.3, 0.0, 0.1, 0.3, 1.5, 0.2, 0.0, 0.0, 0.2, 1.0, 0.1, 0.1, 0.0, 0.1, 1.2]);
        // S = G D is symmetric when D is constant on the blocks where G couples
        f.s0 = DMatrix::from_row_slice(4, 4, &[4.0, 0.6, 0.0, 0.35, 0.6, 3.0, 0.4, 0.0, 0.0, 0.4, 2.0, 0.35, 0.35, 0.0, 0.35, 6.0]);
        f.g0 = g.clone();
        let (values, vecs) = eigen(&f, &[]);
        let contour = Contour::new(values[1], isolating_radius(&values, values[1], 1e-6));
        let p = spectral_projector(&f, &[], contour).unwrap();
        assert!(p.idempotency_defect() < 1e-10);
        let inside: Vec<usize> = (0..4).filter(|&i| (values[i] - values[1]).abs() < contour.radius).collect();
        assert!((p.trace() - inside.len() as f64).abs() < 1e-10);
        let v = DMatrix::from_fn(4, inside.len(), |r, c| vecs[(r, inside[c])]);
        let expect = &v * v.transpose() * &g;
        assert!((&p.matrix - expect).abs().max() < 1e-10);
        assert!(p.commutator_defect(&f.operator(&[])) < 1e-10);
    }

    #[test]
    fn contour_near_eigenvalue_is_rejected() {
        let f = diag_family(&[1.0, 1.52]);
        let err = spectral_projector(&f, &[], Contour::new(1.0, 0.5)).unwrap_err();
        assert!(matches!(err, Error::ContourTooClose { .. }));
    }

    #[test]
    fn projector_error_decays_exponentially_in_nodes() {
        let f = Preset::Random.family();
        let q = [0.1, 0.2];
        let (values, vecs) = eigen(&f, &q);
        let center = values[2];
        let contour = Contour::new(center, isolating_radius(&values, center, 1e-9));
        let g = f.gram(&q);
        let v = vecs.column(2);
        let exact = &v * v.transpose() * &g;
        let err = |n: usize| (spectral_projector(&f, &q, contour.with_nodes(n)).unwrap().matrix - &exact).abs().max();
        let (e8, e16) = (err(8), err(16));
        assert!(e8 > 1e-13 && e8 / e16.max(1e-300) > 10.0, "{e8:e} {e16:e}");
    }

    #[test]
    fn projector_derivative_matches_finite_differences() {
        let f = Preset::Random.family();
        let q = [0.1, -0.1];
        let h = [0.6, -0.8];
        let (values, _) = eigen(&f, &q);
        let contour = Contour::new(values[3], isolating_radius(&values, values[3], 1e-9));
        let dp = projector_derivative(&f, &q, &h, contour).unwrap();
        let fd = central(
            |s| spectral_projector(&f, &[q[0] + s * h[0], q[1] + s * h[1]], contour).unwrap().matrix,
            1e-3,
        );
        let rel = (&dp - &fd).abs().max() / dp.abs().max();
        assert!(rel < 1e-6, "{rel:e}");
    }

    #[test]
    fn defining_function_at_base_point_is_diagonal() {
        let f = Preset::Random.family();
        let q0 = [0.0, 0.0];
        let (values, _) = eigen(&f, &q0);
        let contour = Contour::new(values[2], isolating_radius(&values, values[2], 1e-9));
        let mu = default_shift(&contour);
        let df = defining_function(&f, &q0, &q0, contour, mu).unwrap();
        assert!((df.matrix[(0, 0)] - 1.0 / (mu - values[2])).abs() < 1e-10);
    }

    #[test]
    fn single_eigenvalue_gives_scalar_defining_function() {
        let f = Preset::ScalarBlock.family();
        let q0 = [0.0, 0.0];
        let contour = Contour::new(0.0, 1.0);
        let mu = 2.0;
        // q₁ = 0 keeps the pair degenerate at q₂
        let df = defining_function(&f, &q0, &[0.0, 0.2], contour, mu).unwrap();
        assert!(df.scalar_defect() < 1e-8);
        assert!((df.matrix[(0, 0)] - 1.0 / (mu - 0.2)).abs() < 1e-8);
        let split = defining_function(&f, &q0, &[0.2, 0.0], contour, mu).unwrap();
        assert!(split.scalar_defect() > 1e-3);
    }

    #[test]
    fn defining_function_spectrum_matches_resolvent() {
        let f = Preset::ConicMetric.family();
        let q0 = [0.0, 0.0];
        let contour = Contour::new(0.0, 1.0);
        let mu = 2.0;
        for q in [[0.05, -0.03], [-0.1, 0.08], [0.02, 0.11]] {
            let df = defining_function(&f, &q0, &q, contour, mu).unwrap();
            let (values, _) = eigen(&f, &q);
            let mut expect: Vec<f64> = values.iter().filter(|l| l.abs() < 1.0).map(|l| 1.0 / (mu - l)).collect();
            expect.sort_by(f64::total_cmp);
            let got = df.eigenvalues();
            assert_eq!(got.len(), expect.len());
            for (a, b) in got.iter().zip(&expect) {
                assert!((a - b).abs() < 1e-8, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn transfer_map_far_from_base_is_rejected() {
        let f = Preset::Conic.family();
        // at q₁ = 2.5 both conic branches have left the window, so the
        // transfer map annihilates the base eigenspace
        let err = defining_function(&f, &[0.0, 0.0], &[0.0, 1e-3], Contour::new(0.0, 1.0), 2.0);
        assert!(err.is_ok());
        let far = defining_function(&f, &[0.0, 0.0], &[2.5, 0.0], Contour::new(0.0, 1.0), 2.0);
        assert!(matches!(far, Err(Error::SingularTransfer(_))), "{far:?}");
    }

    #[test]
    fn constant_metric_entries_have_chain_rule_factor() {
        let f = Preset::Conic.family();
        let q0 = [0.0, 0.0];
        let contour = Contour::new(0.0, 1.0);
        let mu = 2.0;
        let e = eigenspace(&f, &q0, &contour).unwrap();
        let h = [0.3, 0.7];
        let fp = f_prime_entries(&f, &q0, &h, &e.basis, contour, mu).unwrap();
        let hm = f.operator_derivative(&q0, &h);
        let expect = e.basis.transpose() * hm * &e.basis / (mu * mu);
        assert!((&fp.entries - expect).abs().max() < 1e-12);
        assert!(fp.commutator < 1e-8);
    }

    #[test]
    fn entries_match_finite_differences_of_defining_function() {
        for preset in [Preset::ConicMetric, Preset::Random] {
            let f = preset.family();
            // the conic family is degenerate at the origin
            let q0 = if preset == Preset::Random { [0.05, -0.02] } else { [0.0, 0.0] };
            let (values, _) = eigen(&f, &q0);
            let contour = if preset == Preset::Random {
                Contour::new(values[2], isolating_radius(&values, values[2], 1e-9))
            } else {
                Contour::new(0.0, 1.0)
            };
            let mu = default_shift(&contour);
            let e = eigenspace(&f, &q0, &contour).unwrap();
            let h = [0.8, 0.6];
            let fp = f_prime_entries(&f, &q0, &h, &e.basis, contour, mu).unwrap();
            let fd = central(
                |s| {
                    defining_function(&f, &q0, &[q0[0] + s * h[0], q0[1] + s * h[1]], contour, mu)
                        .unwrap()
                        .entries()
                },
                1e-3,
            );
            let rel = (&fp.entries - &fd).abs().max() / fp.entries.abs().max();
            assert!(rel < 1e-5, "{preset:?}: {rel:e}");
            assert!(fp.commutator < 1e-8, "{preset:?}: {:e}", fp.commutator);
            assert!(fp.asymmetry() < 1e-10);
        }
    }

    #[test]
    fn split_window_with_varying_metric_reports_asymmetry() {
        let f = Preset::ConicMetric.family();
        let q0 = [0.2, -0.1];
        let contour = Contour::new(0.0, 1.0);
        let e = eigenspace(&f, &q0, &contour).unwrap();
        assert_eq!(e.values.len(), 2);
        let fp = f_prime_entries(&f, &q0, &[1.0, 0.0], &e.basis, contour, 2.0).unwrap();
        assert!(fp.asymmetry() > 1e-6);
        assert!(fp.commutator < 1e-8);
    }

    #[test]
    fn conic_degeneracy_is_a_shrinking_point() {
        for preset in [Preset::Conic, Preset::ConicMetric] {
            let f = preset.family();
            let slice = Slice::coordinate(2, 0.5);
            let coarse = codim2_slice_scan(&f, &slice, 0, 21);
            let fine = codim2_slice_scan(&f, &slice, 0, 41);
            assert_eq!(coarse.components.len(), 1, "{preset:?}");
            assert_eq!(fine.components.len(), 1, "{preset:?}");
            let c = &fine.components[0];
            assert!(c.centroid[0].abs() < 2.0 * fine.spacing && c.centroid[1].abs() < 2.0 * fine.spacing);
            let ratio = coarse.max_diameter() / fine.max_diameter();
            assert!(ratio > 1.5, "{preset:?}: {} -> {}", coarse.max_diameter(), fine.max_diameter());
            assert!(fine.max_diameter() <= 4.0 * fine.spacing);
        }
    }

    #[test]
    fn scalar_block_degeneracy_is_a_curve() {
        let f = Preset::ScalarBlock.family();
        let slice = Slice::coordinate(2, 0.5);
        let coarse = codim2_slice_scan(&f, &slice, 0, 21);
        let fine = codim2_slice_scan(&f, &slice, 0, 41);
        assert!(fine.max_diameter() >= 0.9 * coarse.max_diameter());
        assert!(fine.max_diameter() > 0.9);
    }

    #[test]
    fn presets_round_trip_ids() {
        for p in Preset::ALL {
            assert_eq!(Preset::from_id(p.id()).unwrap(), p);
        }
        assert!(Preset::from_id("nope").is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]

        #[test]
        fn projectors_are_idempotent_with_integer_trace(q1 in -1.0f64..1.0, q2 in -1.0f64..1.0, k in 0usize..6) {
            let f = Preset::Random.family();
            let q = [q1, q2];
            prop_assert!(self_adjointness_defect(&f, &q) < 1e-12);
            let (values, _) = eigen(&f, &q);
            let radius = isolating_radius(&values, values[k], 1e-9);
            prop_assume!(radius > 1e-3);
            let p = spectral_projector(&f, &q, Contour::new(values[k], radius)).unwrap();
            prop_assert!(p.idempotency_defect() < 1e-10);
            prop_assert!((p.trace() - p.rank() as f64).abs() < 1e-10);
            prop_assert!(p.commutator_defect(&f.operator(&q)) < 1e-10);
        }
    }
}
