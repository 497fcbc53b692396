//! Periodic tetrahedral mesh of the flat 3-torus with lowest-order Whitney
//! forms.
//!
//! Each of the `n³` cubes is split into six tetrahedra along its main
//! diagonal (Kuhn triangulation), so every simplex is a chain
//! `v → v + e_σ1 → v + e_σ1 + e_σ2 → v + (1,1,1)`. Entities are indexed
//! from their base vertex:
//!
//! * vertex `(i, j, k)` has index `(i n + j) n + k`;
//! * edge `7 v + d` runs from `v` to `v + D[d]` with `D` listed in
//!   [`EDGE_DIRS`];
//! * face `12 v + f` is the chain `v → v + A → v + B`, `A ⊊ B`;
//! * tetrahedron `6 v + s` follows permutation `PERMS[s]`.
//!
//! The helicity matrix `B_ef = ∫ w_e · curl w_f dx` does not depend on the
//! metric; all metric dependence sits in the mass matrices.

use nalgebra::{Matrix3, Vector3};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::metric::{Covector, Domain, MetricField, OneFormField, Point3, SmoothSym3, Sym3, SymTensorField};
use crate::quadrature::{gauss_legendre, Quadrature};
use crate::sparse::Csr;

/// Edge direction offsets as bit masks over the axes (bit 0 = x).
pub const EDGE_DIRS: [u8; 7] = [0b001, 0b010, 0b100, 0b011, 0b101, 0b110, 0b111];

const PERMS: [[usize; 3]; 6] = [
    [0, 1, 2],
    [0, 2, 1],
    [1, 0, 2],
    [1, 2, 0],
    [2, 0, 1],
    [2, 1, 0],
];

/// Local edges of a tetrahedron as ordered vertex pairs.
pub const TET_EDGES: [(usize, usize); 6] = [(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)];

/// Symmetric 4-point rule exact for quadratics on a tetrahedron.
const QUAD_A: f64 = 0.585_410_196_624_968_5;
const QUAD_B: f64 = 0.138_196_601_125_010_5;
pub const QUAD_BARY: [[f64; 4]; 4] = [
    [QUAD_A, QUAD_B, QUAD_B, QUAD_B],
    [QUAD_B, QUAD_A, QUAD_B, QUAD_B],
    [QUAD_B, QUAD_B, QUAD_A, QUAD_B],
    [QUAD_B, QUAD_B, QUAD_B, QUAD_A],
];

fn dir_index(mask: u8) -> usize {
    EDGE_DIRS.iter().position(|&m| m == mask).expect("nonzero mask")
}

pub(crate) fn mask_vec(mask: u8) -> [i64; 3] {
    [(mask & 1) as i64, ((mask >> 1) & 1) as i64, ((mask >> 2) & 1) as i64]
}

/// Geometry shared by all tetrahedra of one permutation type.
#[derive(Clone, Debug)]
pub struct TetShape {
    /// Offsets of the four vertices from the base vertex, as axis masks.
    pub masks: [u8; 4],
    pub grads: [Vector3<f64>; 4],
    pub volume: f64,
    /// Whitney basis values `λ_i ∇λ_j − λ_j ∇λ_i` at the four quadrature
    /// points, `[point][local edge]`.
    pub whitney: [[Vector3<f64>; 6]; 4],
    /// `curl w_ij = 2 ∇λ_i × ∇λ_j`.
    pub curls: [Vector3<f64>; 6],
    /// Integer direction index of each local edge.
    pub edge_dirs: [usize; 6],
}

#[derive(Clone, Debug)]
pub struct PeriodicMesh {
    pub n: usize,
    pub lengths: [f64; 3],
    shapes: [TetShape; 6],
}

impl PeriodicMesh {
    /// Mesh of the standard `(2π)³` box.
    pub fn new(n: usize) -> Result<Self> {
        Self::with_lengths(n, [2.0 * std::f64::consts::PI; 3])
    }

    pub fn with_lengths(n: usize, lengths: [f64; 3]) -> Result<Self> {
        if n < 2 {
            return Err(Error::InvalidResolution(n));
        }
        let h = lengths.map(|l| l / n as f64);
        let shapes = std::array::from_fn(|s| tet_shape(PERMS[s], h));
        Ok(Self { n, lengths, shapes })
    }

    pub fn domain(&self) -> Domain {
        Domain::Torus {
            lengths: self.lengths,
        }
    }

    pub fn spacing(&self) -> [f64; 3] {
        self.lengths.map(|l| l / self.n as f64)
    }

    pub fn num_vertices(&self) -> usize {
        self.n.pow(3)
    }

    pub fn num_edges(&self) -> usize {
        7 * self.num_vertices()
    }

    pub fn num_faces(&self) -> usize {
        12 * self.num_vertices()
    }

    pub fn num_tets(&self) -> usize {
        6 * self.num_vertices()
    }

    pub fn euler_characteristic(&self) -> i64 {
        self.num_vertices() as i64 - self.num_edges() as i64 + self.num_faces() as i64
            - self.num_tets() as i64
    }

    pub fn volume(&self) -> f64 {
        self.lengths.iter().product()
    }

    pub fn shapes(&self) -> &[TetShape; 6] {
        &self.shapes
    }

    pub fn vertex_coords(&self, v: usize) -> [usize; 3] {
        let n = self.n;
        [v / (n * n), (v / n) % n, v % n]
    }

    pub fn vertex_index(&self, c: [i64; 3]) -> usize {
        let n = self.n as i64;
        let w = c.map(|x| x.rem_euclid(n) as usize);
        (w[0] * self.n + w[1]) * self.n + w[2]
    }

    pub fn offset_vertex(&self, v: usize, mask: u8) -> usize {
        let c = self.vertex_coords(v);
        let m = mask_vec(mask);
        self.vertex_index([c[0] as i64 + m[0], c[1] as i64 + m[1], c[2] as i64 + m[2]])
    }

    pub fn vertex_position(&self, v: usize) -> Point3 {
        let c = self.vertex_coords(v);
        let h = self.spacing();
        [c[0] as f64 * h[0], c[1] as f64 * h[1], c[2] as f64 * h[2]]
    }

    /// Endpoints of an edge.
    pub fn edge_vertices(&self, e: usize) -> (usize, usize) {
        let v = e / 7;
        (v, self.offset_vertex(v, EDGE_DIRS[e % 7]))
    }

    /// Edge vector in box coordinates.
    pub fn edge_vector(&self, e: usize) -> Vector3<f64> {
        let m = mask_vec(EDGE_DIRS[e % 7]);
        let h = self.spacing();
        Vector3::new(m[0] as f64 * h[0], m[1] as f64 * h[1], m[2] as f64 * h[2])
    }

    /// Global edge ids of the six local edges of tetrahedron `t`.
    pub fn tet_edges(&self, t: usize) -> [usize; 6] {
        let v = t / 6;
        let shape = &self.shapes[t % 6];
        std::array::from_fn(|a| {
            let (i, _) = TET_EDGES[a];
            7 * self.offset_vertex(v, shape.masks[i]) + shape.edge_dirs[a]
        })
    }

    pub fn tet_vertices(&self, t: usize) -> [usize; 4] {
        let v = t / 6;
        let shape = &self.shapes[t % 6];
        shape.masks.map(|m| self.offset_vertex(v, m))
    }

    /// Boundary of face `f` as `(edge, sign)` triples.
    pub fn face_boundary(&self, f: usize) -> [(usize, f64); 3] {
        let v = f / 12;
        let (a, b) = face_masks()[f % 12];
        let va = self.offset_vertex(v, a);
        [
            (7 * v + dir_index(a), 1.0),
            (7 * va + dir_index(b & !a), 1.0),
            (7 * v + dir_index(b), -1.0),
        ]
    }

    /// Coboundary on 0-cochains (edges x vertices).
    pub fn d0(&self) -> Csr {
        let mut t = Vec::with_capacity(2 * self.num_edges());
        for e in 0..self.num_edges() {
            let (a, b) = self.edge_vertices(e);
            t.push((e, a, -1.0));
            t.push((e, b, 1.0));
        }
        Csr::from_triplets(self.num_edges(), self.num_vertices(), t)
    }

    /// Coboundary on 1-cochains (faces x edges).
    pub fn d1(&self) -> Csr {
        let mut t = Vec::with_capacity(3 * self.num_faces());
        for f in 0..self.num_faces() {
            for (e, s) in self.face_boundary(f) {
                t.push((f, e, s));
            }
        }
        Csr::from_triplets(self.num_faces(), self.num_edges(), t)
    }

    /// The mesh quadrature: four points per tetrahedron, point `4 t + q`.
    pub fn quadrature(&self) -> Quadrature {
        let mut points = Vec::with_capacity(4 * self.num_tets());
        let mut weights = Vec::with_capacity(4 * self.num_tets());
        for t in 0..self.num_tets() {
            let shape = &self.shapes[t % 6];
            let base = self.vertex_position(t / 6);
            let h = self.spacing();
            for bary in &QUAD_BARY {
                let mut p = base;
                for (i, &l) in bary.iter().enumerate() {
                    let m = mask_vec(shape.masks[i]);
                    for d in 0..3 {
                        p[d] += l * m[d] as f64 * h[d];
                    }
                }
                points.push(p);
                weights.push(shape.volume / 4.0);
            }
        }
        Quadrature {
            points,
            weights,
            shape: vec![self.num_tets(), 4],
        }
    }

    pub fn sample_metric(&self, field: &SmoothSym3) -> Result<MetricField> {
        let q = self.quadrature();
        let mut g = MetricField::sample(self.domain(), field, &q.points)?;
        g = MetricField::new(self.domain(), q.shape.clone(), g.samples().to_vec())?;
        Ok(g)
    }

    pub fn constant_metric(&self, g: Sym3) -> Result<MetricField> {
        MetricField::new(self.domain(), vec![self.num_tets(), 4], vec![g; 4 * self.num_tets()])
    }

    pub fn sample_tensor(&self, field: &SmoothSym3) -> SymTensorField {
        let q = self.quadrature();
        SymTensorField::new(q.shape.clone(), q.points.iter().map(|p| field.eval(p)).collect())
    }

    pub fn constant_tensor(&self, h: Sym3) -> SymTensorField {
        SymTensorField::new(vec![self.num_tets(), 4], vec![h; 4 * self.num_tets()])
    }

    fn check_metric(&self, g: &MetricField) -> Result<()> {
        if g.len() != 4 * self.num_tets() {
            return Err(Error::GridMismatch {
                left: 4 * self.num_tets(),
                right: g.len(),
            });
        }
        Ok(())
    }

    /// Metric-independent helicity matrix, symmetrized.
    pub fn assemble_helicity(&self) -> Csr {
        let locals: Vec<[[f64; 6]; 6]> = self.shapes.iter().map(local_helicity).collect();
        let mut t = Vec::with_capacity(72 * self.num_tets());
        for tet in 0..self.num_tets() {
            let edges = self.tet_edges(tet);
            let local = &locals[tet % 6];
            for a in 0..6 {
                for b in 0..6 {
                    t.push((edges[a], edges[b], 0.5 * local[a][b]));
                    t.push((edges[b], edges[a], 0.5 * local[a][b]));
                }
            }
        }
        Csr::from_triplets(self.num_edges(), self.num_edges(), t)
    }

    /// Curl-curl matrix `C_ef = ∫ g(∗_g dw_e, ∗_g dw_f) dμ_g`, i.e. the
    /// metric 2-form inner product of the coboundaries. Its kernel is
    /// exactly the closed cochains.
    pub fn assemble_curl_curl(&self, g: &MetricField) -> Result<Csr> {
        self.check_metric(g)?;
        let kernels: Vec<Matrix3<f64>> = g
            .samples()
            .iter()
            .map(|s| s.to_matrix() / s.det().sqrt())
            .collect();
        Ok(self.assemble_curl_form(&kernels))
    }

    /// Derivative of [`assemble_curl_curl`](Self::assemble_curl_curl) along
    /// the metric variation `h`.
    pub fn assemble_curl_curl_derivative(&self, g: &MetricField, h: &SymTensorField) -> Result<Csr> {
        self.check_metric(g)?;
        let kernels = curl_derivative_kernels(g, h)?;
        Ok(self.assemble_curl_form(&kernels))
    }

    fn assemble_curl_form(&self, kernels: &[Matrix3<f64>]) -> Csr {
        let mut trip = Vec::with_capacity(36 * self.num_tets());
        for t in 0..self.num_tets() {
            let s = &self.shapes[t % 6];
            let k: Matrix3<f64> = (0..4).map(|q| kernels[4 * t + q]).sum::<Matrix3<f64>>() * (s.volume / 4.0);
            let edges = self.tet_edges(t);
            for a in 0..6 {
                let kc = k * s.curls[a];
                for b in 0..6 {
                    trip.push((edges[b], edges[a], s.curls[b].dot(&kc)));
                }
            }
        }
        Csr::from_triplets(self.num_edges(), self.num_edges(), trip)
    }

    /// The 1-form `∗_g dx` of a Whitney cochain at the quadrature points.
    pub fn hodge_curl_field(&self, g: &MetricField, x: &[f64]) -> Result<OneFormField> {
        self.check_metric(g)?;
        assert_eq!(x.len(), self.num_edges());
        let samples = (0..self.num_tets())
            .flat_map(|t| {
                let s = &self.shapes[t % 6];
                let edges = self.tet_edges(t);
                let curl = (0..6).fold(Vector3::zeros(), |acc, a| acc + s.curls[a] * x[edges[a]]);
                (0..4).map(move |q| (t, q, curl))
            })
            .map(|(t, q, curl)| {
                let gs = &g.samples()[4 * t + q];
                gs.to_matrix() * curl / gs.det().sqrt()
            })
            .collect();
        Ok(OneFormField::new(vec![self.num_tets(), 4], samples))
    }

    /// `M_ef = ∫ g^{ab} (w_e)_a (w_f)_b √det g dx`.
    pub fn assemble_mass_1forms(&self, g: &MetricField) -> Result<Csr> {
        self.check_metric(g)?;
        let ginv = g.inverse_samples();
        let dens: Vec<f64> = g.samples().iter().map(|s| s.det().sqrt()).collect();
        let kernels: Vec<Matrix3<f64>> = ginv
            .iter()
            .zip(&dens)
            .map(|(gi, d)| gi.to_matrix() * *d)
            .collect();
        Ok(self.assemble_edge_form(&kernels))
    }

    /// Derivative of the 1-form mass matrix in direction `h`:
    /// `∫ (−h^{ab} + ½ tr_g(h) g^{ab}) (w_e)_a (w_f)_b √det g dx`.
    pub fn assemble_mass_derivative(&self, g: &MetricField, h: &SymTensorField) -> Result<Csr> {
        self.check_metric(g)?;
        let kernels = mass_derivative_kernels(g, h, 1.0)?;
        Ok(self.assemble_edge_form(&kernels))
    }

    fn assemble_edge_form(&self, kernels: &[Matrix3<f64>]) -> Csr {
        let locals: Vec<[[f64; 6]; 6]> = (0..self.num_tets())
            .into_par_iter()
            .map(|t| {
                let s = &self.shapes[t % 6];
                let mut m = [[0.0; 6]; 6];
                for q in 0..4 {
                    let k = &kernels[4 * t + q];
                    let w = s.volume / 4.0;
                    let kw: [Vector3<f64>; 6] = std::array::from_fn(|b| k * s.whitney[q][b]);
                    for a in 0..6 {
                        for b in a..6 {
                            m[a][b] += w * s.whitney[q][a].dot(&kw[b]);
                        }
                    }
                }
                for a in 0..6 {
                    for b in 0..a {
                        m[a][b] = m[b][a];
                    }
                }
                m
            })
            .collect();
        let mut trip = Vec::with_capacity(36 * self.num_tets());
        for (t, m) in locals.iter().enumerate() {
            let edges = self.tet_edges(t);
            for a in 0..6 {
                for b in 0..6 {
                    trip.push((edges[a], edges[b], m[a][b]));
                }
            }
        }
        Csr::from_triplets(self.num_edges(), self.num_edges(), trip)
    }

    /// P1 stiffness `∫ g^{ab} ∂_a φ_i ∂_b φ_j dμ_g` and mass `∫ φ_i φ_j dμ_g`.
    pub fn assemble_scalar(&self, g: &MetricField) -> Result<(Csr, Csr)> {
        self.check_metric(g)?;
        let ginv = g.inverse_samples();
        let dens: Vec<f64> = g.samples().iter().map(|s| s.det().sqrt()).collect();
        let locals: Vec<([[f64; 4]; 4], [[f64; 4]; 4])> = (0..self.num_tets())
            .into_par_iter()
            .map(|t| {
                let s = &self.shapes[t % 6];
                let mut k = [[0.0; 4]; 4];
                let mut m = [[0.0; 4]; 4];
                for q in 0..4 {
                    let w = s.volume / 4.0 * dens[4 * t + q];
                    let gi = ginv[4 * t + q].to_matrix();
                    for i in 0..4 {
                        let gg = gi * s.grads[i];
                        for j in 0..4 {
                            k[i][j] += w * s.grads[j].dot(&gg);
                            m[i][j] += w * QUAD_BARY[q][i] * QUAD_BARY[q][j];
                        }
                    }
                }
                (k, m)
            })
            .collect();
        let mut ks = Vec::with_capacity(16 * self.num_tets());
        let mut ms = Vec::with_capacity(16 * self.num_tets());
        for (t, (k, m)) in locals.iter().enumerate() {
            let verts = self.tet_vertices(t);
            for i in 0..4 {
                for j in 0..4 {
                    ks.push((verts[i], verts[j], k[i][j]));
                    ms.push((verts[i], verts[j], m[i][j]));
                }
            }
        }
        let nv = self.num_vertices();
        Ok((Csr::from_triplets(nv, nv, ks), Csr::from_triplets(nv, nv, ms)))
    }

    /// De Rham map: line integrals of a covector field along every edge,
    /// with an 8-point Gauss rule.
    pub fn interpolate_one_form<F>(&self, field: F) -> Vec<f64>
    where
        F: Fn(&Point3) -> Covector + Sync,
    {
        let (x, w) = gauss_legendre(8);
        (0..self.num_edges())
            .into_par_iter()
            .map(|e| {
                let p0 = self.vertex_position(e / 7);
                let d = self.edge_vector(e);
                let mut s = 0.0;
                for (x, w) in x.iter().zip(&w) {
                    let t = 0.5 * (x + 1.0);
                    let p = [p0[0] + t * d[0], p0[1] + t * d[1], p0[2] + t * d[2]];
                    s += 0.5 * w * field(&p).dot(&d);
                }
                s
            })
            .collect()
    }

    pub fn interpolate_scalar<F>(&self, f: F) -> Vec<f64>
    where
        F: Fn(&Point3) -> f64 + Sync,
    {
        (0..self.num_vertices())
            .into_par_iter()
            .map(|v| f(&self.vertex_position(v)))
            .collect()
    }

    /// Cochains of the three parallel forms `dx`, `dy`, `dz`.
    pub fn parallel_cochains(&self) -> [Vec<f64>; 3] {
        std::array::from_fn(|a| (0..self.num_edges()).map(|e| self.edge_vector(e)[a]).collect())
    }

    /// Whitney reconstruction of a 1-cochain at the mesh quadrature points.
    pub fn whitney_field(&self, x: &[f64]) -> OneFormField {
        assert_eq!(x.len(), self.num_edges());
        let per_tet: Vec<[Covector; 4]> = (0..self.num_tets())
            .into_par_iter()
            .map(|t| {
                let s = &self.shapes[t % 6];
                let edges = self.tet_edges(t);
                std::array::from_fn(|q| {
                    (0..6).fold(Covector::zeros(), |acc, a| acc + s.whitney[q][a] * x[edges[a]])
                })
            })
            .collect();
        OneFormField::new(
            vec![self.num_tets(), 4],
            per_tet.into_iter().flatten().collect(),
        )
    }

    /// Values of a P1 function at the quadrature points.
    pub fn p1_values(&self, f: &[f64]) -> Vec<f64> {
        assert_eq!(f.len(), self.num_vertices());
        let mut out = Vec::with_capacity(4 * self.num_tets());
        for t in 0..self.num_tets() {
            let verts = self.tet_vertices(t);
            for bary in &QUAD_BARY {
                out.push((0..4).map(|i| bary[i] * f[verts[i]]).sum());
            }
        }
        out
    }

    /// Gradient of a P1 function at the quadrature points.
    pub fn p1_gradient(&self, f: &[f64]) -> OneFormField {
        assert_eq!(f.len(), self.num_vertices());
        let mut out = Vec::with_capacity(4 * self.num_tets());
        for t in 0..self.num_tets() {
            let s = &self.shapes[t % 6];
            let verts = self.tet_vertices(t);
            let g = (0..4).fold(Covector::zeros(), |acc, i| acc + s.grads[i] * f[verts[i]]);
            out.extend([g; 4]);
        }
        OneFormField::new(vec![self.num_tets(), 4], out)
    }

    /// Helicity `x^T B x` of a cochain.
    pub fn helicity_of(&self, b: &Csr, x: &[f64]) -> f64 {
        b.form(x, x)
    }
}

/// Integrand kernel of the mass-matrix derivative, `c·(−g⁻¹hg⁻¹ + ½ tr_g(h) g⁻¹)√det g`.
pub(crate) fn mass_derivative_kernels(g: &MetricField, h: &SymTensorField, c: f64) -> Result<Vec<Matrix3<f64>>> {
    if g.len() != h.len() {
        return Err(Error::GridMismatch {
            left: g.len(),
            right: h.len(),
        });
    }
    Ok(g.samples()
        .iter()
        .zip(&h.samples)
        .map(|(gs, hs)| {
            let gi = gs.inverse().expect("validated SPD sample").to_matrix();
            let hm = hs.to_matrix();
            let tr = (gi * hm).trace();
            (-(gi * hm * gi) + gi * (0.5 * tr)) * (gs.det().sqrt() * c)
        })
        .collect())
}

/// Unsymmetrized local helicity `∫_T w_a · curl w_b dx`, using `∫_T λ_i = |T|/4`.
pub(crate) fn curl_derivative_kernels(g: &MetricField, h: &SymTensorField) -> Result<Vec<Matrix3<f64>>> {
    if g.len() != h.len() {
        return Err(Error::GridMismatch {
            left: g.len(),
            right: h.len(),
        });
    }
    Ok(g.samples()
        .iter()
        .zip(&h.samples)
        .map(|(gs, hs)| {
            let gm = gs.to_matrix();
            let hm = hs.to_matrix();
            let tr = (gs.inverse().expect("validated SPD sample").to_matrix() * hm).trace();
            (hm - gm * (0.5 * tr)) / gs.det().sqrt()
        })
        .collect())
}

pub(crate) fn local_helicity(s: &TetShape) -> [[f64; 6]; 6] {
    let mean: [Vector3<f64>; 6] = std::array::from_fn(|a| {
        let (i, j) = TET_EDGES[a];
        (s.grads[j] - s.grads[i]) * (s.volume / 4.0)
    });
    std::array::from_fn(|a| std::array::from_fn(|b| mean[a].dot(&s.curls[b])))
}

fn face_masks() -> [(u8, u8); 12] {
    let mut out = [(0u8, 0u8); 12];
    let mut k = 0;
    for b in 1u8..8 {
        for a in 1u8..8 {
            if a != b && a & b == a {
                out[k] = (a, b);
                k += 1;
            }
        }
    }
    debug_assert_eq!(k, 12);
    out
}

fn tet_shape(perm: [usize; 3], h: [f64; 3]) -> TetShape {
    let mut masks = [0u8; 4];
    for i in 0..3 {
        masks[i + 1] = masks[i] | (1 << perm[i]);
    }
    let pos: [Vector3<f64>; 4] = masks.map(|m| {
        let v = mask_vec(m);
        Vector3::new(v[0] as f64 * h[0], v[1] as f64 * h[1], v[2] as f64 * h[2])
    });
    let jac = Matrix3::from_columns(&[pos[1] - pos[0], pos[2] - pos[0], pos[3] - pos[0]]);
    let volume = jac.determinant().abs() / 6.0;
    // rows of J^{-1} are the gradients of λ1, λ2, λ3
    let inv = jac.try_inverse().expect("nondegenerate tetrahedron");
    let g1 = inv.row(0).transpose();
    let g2 = inv.row(1).transpose();
    let g3 = inv.row(2).transpose();
    let grads = [-(g1 + g2 + g3), g1, g2, g3];
    let whitney = std::array::from_fn(|q| {
        let l = QUAD_BARY[q];
        std::array::from_fn(|a| {
            let (i, j) = TET_EDGES[a];
            grads[j] * l[i] - grads[i] * l[j]
        })
    });
    let curls = std::array::from_fn(|a| {
        let (i, j) = TET_EDGES[a];
        grads[i].cross(&grads[j]) * 2.0
    });
    let edge_dirs = std::array::from_fn(|a| {
        let (i, j) = TET_EDGES[a];
        dir_index(masks[j] & !masks[i])
    });
    TetShape {
        masks,
        grads,
        volume,
        whitney,
        curls,
        edge_dirs,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sparse::{dot, Factor};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    #[test]
    fn counts_and_euler_characteristic() {
        let m = PeriodicMesh::new(2).unwrap();
        assert_eq!(m.num_vertices(), 8);
        assert_eq!(m.num_tets(), 48);
        for n in 2..6 {
            assert_eq!(PeriodicMesh::new(n).unwrap().euler_characteristic(), 0);
        }
        assert!(matches!(PeriodicMesh::new(1), Err(Error::InvalidResolution(1))));
    }

    #[test]
    fn tets_fill_the_box() {
        let m = PeriodicMesh::new(3).unwrap();
        let vol: f64 = (0..m.num_tets()).map(|t| m.shapes()[t % 6].volume).sum();
        assert!((vol - 8.0 * PI.powi(3)).abs() < 1e-10);
    }

    #[test]
    fn every_edge_is_shared_and_closed() {
        let m = PeriodicMesh::new(3).unwrap();
        let mut count = vec![0usize; m.num_edges()];
        for t in 0..m.num_tets() {
            for e in m.tet_edges(t) {
                count[e] += 1;
            }
        }
        assert!(count.iter().all(|&c| c >= 3));
        // every face is shared by exactly two tetrahedra
        let mut faces = std::collections::HashMap::new();
        for t in 0..m.num_tets() {
            let v = m.tet_vertices(t);
            for skip in 0..4 {
                let mut f: Vec<usize> = (0..4).filter(|&i| i != skip).map(|i| v[i]).collect();
                f.sort();
                *faces.entry(f).or_insert(0usize) += 1;
            }
        }
        assert_eq!(faces.len(), m.num_faces());
        assert!(faces.values().all(|&c| c == 2));
    }

    #[test]
    fn coboundaries_compose_to_zero() {
        let m = PeriodicMesh::new(3).unwrap();
        let dd = m.d1().matmul(&m.d0());
        assert!(dd.max_abs() == 0.0);
    }

    #[test]
    fn helicity_is_symmetric_and_kills_gradients() {
        let m = PeriodicMesh::new(4).unwrap();
        let b = m.assemble_helicity();
        assert_eq!(b.asymmetry(), 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let phi: Vec<f64> = (0..m.num_vertices()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let r = b.matvec(&m.d0().matvec(&phi));
        assert!(r.iter().all(|x| x.abs() < 1e-12));
        for c in m.parallel_cochains() {
            assert!(b.matvec(&c).iter().all(|x| x.abs() < 1e-12));
        }
    }

    #[test]
    fn helicity_of_beltrami_interpolant() {
        // (0, sin x, cos x) has curl equal to itself on the flat torus
        let mut prev = f64::INFINITY;
        for n in [6, 12] {
            let m = PeriodicMesh::new(n).unwrap();
            let b = m.assemble_helicity();
            let x = m.interpolate_one_form(|p| Covector::new(0.0, p[0].sin(), p[0].cos()));
            let norm2 = 8.0 * PI.powi(3);
            let err = (m.helicity_of(&b, &x) - norm2).abs() / norm2;
            assert!(err < prev);
            prev = err;
        }
        assert!(prev < 0.05);
    }

    #[test]
    fn unit_covector_mass_is_box_volume() {
        let m = PeriodicMesh::new(3).unwrap();
        let g = m.constant_metric(Sym3::identity()).unwrap();
        let mass = m.assemble_mass_1forms(&g).unwrap();
        let [dx, _, _] = m.parallel_cochains();
        assert!((mass.form(&dx, &dx) - 8.0 * PI.powi(3)).abs() < 1e-10);
    }

    #[test]
    fn mass_homogeneity() {
        let m = PeriodicMesh::new(3).unwrap();
        let f = SmoothSym3::random_metric(0.4, 3, 11);
        let g = m.sample_metric(&f).unwrap();
        let m1 = m.assemble_mass_1forms(&g).unwrap();
        let m4 = m.assemble_mass_1forms(&g.scaled(4.0).unwrap()).unwrap();
        let diff = m4.add_scaled(-2.0, &m1).max_abs();
        assert!(diff < 1e-13 * m1.max_abs());
    }

    #[test]
    fn mass_is_positive_definite_and_symmetric() {
        let m = PeriodicMesh::new(3).unwrap();
        let g = m.sample_metric(&SmoothSym3::random_metric(0.5, 4, 2)).unwrap();
        let mass = m.assemble_mass_1forms(&g).unwrap();
        assert_eq!(mass.asymmetry(), 0.0);
        assert!(Factor::cholesky(&mass).is_ok());
    }

    #[test]
    fn mass_derivative_matches_finite_difference() {
        let m = PeriodicMesh::new(3).unwrap();
        let g = m.sample_metric(&SmoothSym3::random_metric(0.3, 3, 5)).unwrap();
        let h = m.sample_tensor(&SmoothSym3::random(Sym3::diag(0.2, -0.1, 0.3), 0.2, 3, 6));
        let dm = m.assemble_mass_derivative(&g, &h).unwrap();
        let m0 = m.assemble_mass_1forms(&g).unwrap();
        let mut prev = f64::INFINITY;
        for s in [1e-2, 5e-3] {
            let ms = m.assemble_mass_1forms(&g.perturbed(&h, s).unwrap()).unwrap();
            let rem = ms.add_scaled(-1.0, &m0).add_scaled(-s, &dm).max_abs();
            // second-order remainder: halves twice when s halves
            assert!(rem < prev / 3.0);
            prev = rem;
        }
    }

    #[test]
    fn stiffness_is_gradient_mass() {
        let m = PeriodicMesh::new(3).unwrap();
        let g = m.sample_metric(&SmoothSym3::random_metric(0.4, 3, 8)).unwrap();
        let (k, _) = m.assemble_scalar(&g).unwrap();
        let d0 = m.d0();
        let k2 = d0.transpose().matmul(&m.assemble_mass_1forms(&g).unwrap()).matmul(&d0);
        assert!(k.add_scaled(-1.0, &k2).max_abs() < 1e-12 * k.max_abs());
        let ones = vec![1.0; m.num_vertices()];
        assert!(k.matvec(&ones).iter().all(|x| x.abs() < 1e-12));
    }

    #[test]
    fn whitney_reconstruction_of_parallel_forms() {
        let m = PeriodicMesh::new(3).unwrap();
        let [_, dy, _] = m.parallel_cochains();
        let f = m.whitney_field(&dy);
        assert!(f.samples.iter().all(|u| (u - Covector::y()).amax() < 1e-12));
        let phi: Vec<f64> = (0..m.num_vertices()).map(|v| (v as f64).sin()).collect();
        let a = m.whitney_field(&m.d0().matvec(&phi));
        let b = m.p1_gradient(&phi);
        for (x, y) in a.samples.iter().zip(&b.samples) {
            assert!((x - y).amax() < 1e-12);
        }
        let ones = m.p1_values(&vec![2.0; m.num_vertices()]);
        assert!(ones.iter().all(|v| (v - 2.0).abs() < 1e-14));
    }

    #[test]
    fn quadrature_weights_match_volume() {
        let m = PeriodicMesh::new(2).unwrap();
        let q = m.quadrature();
        assert_eq!(q.len(), 4 * m.num_tets());
        assert!((q.volume() - m.volume()).abs() < 1e-10);
        let g = m.constant_metric(Sym3::identity()).unwrap();
        let (_, m0) = m.assemble_scalar(&g).unwrap();
        let ones = vec![1.0; m.num_vertices()];
        assert!((dot(&ones, &m0.matvec(&ones)) - m.volume()).abs() < 1e-10);
    }
}
