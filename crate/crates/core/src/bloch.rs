//! Translation-invariant solver for constant metrics on the uniform mesh.
//!
//! With a constant metric every assembled matrix commutes with the lattice
//! shifts, so the pencils block-diagonalize over wavevectors
//! `θ = 2π k / n`, `k ∈ Z_n³`: the edge pencils into 7x7 Hermitian blocks
//! (one unknown per edge direction) and the scalar pencil into 1x1 blocks.
//! The resulting eigenvalues are those of the sparse discretization up to
//! rounding, at a cost linear in the number of vertices.

use nalgebra::{Complex, DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::mesh::{local_helicity, mask_vec, PeriodicMesh, QUAD_BARY, TET_EDGES};
use crate::metric::Sym3;
use crate::solver::{
    coupling_weight, finish_closed, finish_coclosed, polarization_tol, split_group, MIN_WEIGHT, Backend, ClosedSpectrum, CoclosedSpectrum,
    SolverOptions, Window,
};

type C64 = Complex<f64>;

/// Local element matrices of the six tetrahedron types for a constant metric.
struct Locals {
    helicity: Vec<[[f64; 6]; 6]>,
    curl_curl: Vec<[[f64; 6]; 6]>,
    mass: Vec<[[f64; 6]; 6]>,
    stiffness: Vec<[[f64; 4]; 4]>,
    mass0: Vec<[[f64; 4]; 4]>,
}

fn locals(mesh: &PeriodicMesh, g: &Sym3) -> Locals {
    let gi = g.inverse().expect("SPD metric").to_matrix();
    let dens = g.det().sqrt();
    let kc = g.to_matrix() / dens;
    let mut out = Locals {
        helicity: Vec::new(),
        curl_curl: Vec::new(),
        mass: Vec::new(),
        stiffness: Vec::new(),
        mass0: Vec::new(),
    };
    for s in mesh.shapes() {
        out.helicity.push(local_helicity(s));
        out.curl_curl.push(std::array::from_fn(|a| {
            std::array::from_fn(|b| s.volume * s.curls[a].dot(&(kc * s.curls[b])))
        }));
        let w = s.volume / 4.0 * dens;
        let mut m = [[0.0; 6]; 6];
        for q in 0..4 {
            for a in 0..6 {
                let ka = gi * s.whitney[q][a];
                for b in 0..6 {
                    m[a][b] += w * s.whitney[q][b].dot(&ka);
                }
            }
        }
        out.mass.push(m);
        let mut k = [[0.0; 4]; 4];
        let mut m0 = [[0.0; 4]; 4];
        for i in 0..4 {
            for j in 0..4 {
                k[i][j] = 4.0 * w * s.grads[j].dot(&(gi * s.grads[i]));
                m0[i][j] = (0..4).map(|q| w * QUAD_BARY[q][i] * QUAD_BARY[q][j]).sum();
            }
        }
        out.stiffness.push(k);
        out.mass0.push(m0);
    }
    out
}

fn phase(theta: [f64; 3], mask: u8) -> C64 {
    let m = mask_vec(mask);
    let arg = theta[0] * m[0] as f64 + theta[1] * m[1] as f64 + theta[2] * m[2] as f64;
    C64::new(arg.cos(), arg.sin())
}

fn theta_of(mesh: &PeriodicMesh, k: [usize; 3]) -> [f64; 3] {
    let c = 2.0 * std::f64::consts::PI / mesh.n as f64;
    [c * k[0] as f64, c * k[1] as f64, c * k[2] as f64]
}

struct EdgeSymbols {
    helicity: DMatrix<C64>,
    curl_curl: DMatrix<C64>,
    mass: DMatrix<C64>,
}

/// 7x7 helicity, curl-curl and mass symbols at wavevector index `k`.
fn edge_symbols(mesh: &PeriodicMesh, loc: &Locals, k: [usize; 3]) -> EdgeSymbols {
    let theta = theta_of(mesh, k);
    let mut b = DMatrix::<C64>::zeros(7, 7);
    let mut c2 = DMatrix::<C64>::zeros(7, 7);
    let mut m = DMatrix::<C64>::zeros(7, 7);
    for (s, shape) in mesh.shapes().iter().enumerate() {
        let ph: [C64; 6] = std::array::from_fn(|a| phase(theta, shape.masks[TET_EDGES[a].0]));
        for a in 0..6 {
            for c in 0..6 {
                let f = ph[a].conj() * ph[c];
                let (da, dc) = (shape.edge_dirs[a], shape.edge_dirs[c]);
                b[(da, dc)] += f * (0.5 * (loc.helicity[s][a][c] + loc.helicity[s][c][a]));
                c2[(da, dc)] += f * loc.curl_curl[s][a][c];
                m[(da, dc)] += f * loc.mass[s][a][c];
            }
        }
    }
    EdgeSymbols {
        helicity: b,
        curl_curl: c2,
        mass: m,
    }
}

fn scalar_symbols(mesh: &PeriodicMesh, loc: &Locals, k: [usize; 3]) -> (f64, f64) {
    let theta = theta_of(mesh, k);
    let mut sk = C64::new(0.0, 0.0);
    let mut mk = C64::new(0.0, 0.0);
    for (s, shape) in mesh.shapes().iter().enumerate() {
        let ph: [C64; 4] = std::array::from_fn(|i| phase(theta, shape.masks[i]));
        for i in 0..4 {
            for j in 0..4 {
                let f = ph[i].conj() * ph[j];
                sk += f * loc.stiffness[s][i][j];
                mk += f * loc.mass0[s][i][j];
            }
        }
    }
    (sk.re, mk.re)
}

/// Hermitian generalized eigenpairs with `xᴴ M x = 1`.
fn hermitian_pencil(b: &DMatrix<C64>, m: &DMatrix<C64>) -> Vec<(f64, DVector<C64>)> {
    let l = m.clone().cholesky().expect("mass symbol is positive definite").l();
    let linv = l.try_inverse().expect("invertible factor");
    let c = &linv * b * linv.adjoint();
    let c = (&c + c.adjoint()) * C64::new(0.5, 0.0);
    let eig = SymmetricEigen::new(c);
    (0..b.nrows())
        .map(|i| {
            let y = eig.eigenvectors.column(i).into_owned();
            (eig.eigenvalues[i], linv.adjoint() * y)
        })
        .collect()
}

fn real_pencil(b: &DMatrix<C64>, m: &DMatrix<C64>) -> Vec<(f64, DVector<C64>)> {
    let br = b.map(|z| z.re);
    let mr = m.map(|z| z.re);
    let br = (&br + br.transpose()) * 0.5;
    let mr = (&mr + mr.transpose()) * 0.5;
    let l = mr.cholesky().expect("mass symbol is positive definite").l();
    let linv = l.try_inverse().expect("invertible factor");
    let c = &linv * br * linv.transpose();
    let c = (&c + c.transpose()) * 0.5;
    let eig = SymmetricEigen::new(c);
    (0..b.nrows())
        .map(|i| {
            let y = eig.eigenvectors.column(i).into_owned();
            (eig.eigenvalues[i], (linv.transpose() * y).map(|x| C64::new(x, 0.0)))
        })
        .collect()
}

fn neg(mesh: &PeriodicMesh, k: [usize; 3]) -> [usize; 3] {
    k.map(|x| (mesh.n - x) % mesh.n)
}

/// Wavevector indices with one representative per `±k` pair.
fn representatives(mesh: &PeriodicMesh) -> Vec<[usize; 3]> {
    let n = mesh.n;
    let mut out = Vec::new();
    for a in 0..n {
        for b in 0..n {
            for c in 0..n {
                let k = [a, b, c];
                if k <= neg(mesh, k) {
                    out.push(k);
                }
            }
        }
    }
    out
}

struct Mode {
    value: f64,
    k: [usize; 3],
    coeff: DVector<C64>,
    residual: f64,
    /// Real modes contributed: 1 for self-conjugate `k`, 2 otherwise.
    copies: usize,
}

fn select(mut modes: Vec<Mode>, window: Window, gap_tol: f64, key: impl Fn(f64) -> f64) -> Result<Vec<Mode>> {
    modes.sort_by(|a, b| key(a.value).total_cmp(&key(b.value)).then(a.k.cmp(&b.k)));
    let mut out = Vec::new();
    let mut count = 0;
    let mut edge: Option<f64> = None;
    for m in modes {
        let v = key(m.value);
        match window {
            Window::Count(k) => {
                if let Some(e) = edge {
                    if (v - e).abs() > gap_tol * e.max(1.0) {
                        break;
                    }
                } else if count >= k {
                    break;
                }
                count += m.copies;
                if count >= k && edge.is_none() {
                    edge = Some(v);
                }
            }
            Window::Radius(r) => {
                if v > r {
                    break;
                }
            }
        }
        out.push(m);
    }
    if out.is_empty() {
        return Err(Error::EmptyWindow);
    }
    Ok(out)
}

/// Real cochain(s) `Re/Im (x̂_d e^{iθ·v})` for the entity layout with
/// `per_vertex` unknowns.
fn expand(mesh: &PeriodicMesh, m: &Mode, per_vertex: usize) -> Vec<Vec<f64>> {
    let nv = mesh.num_vertices();
    let theta = theta_of(mesh, m.k);
    let scale = if m.copies == 2 {
        (2.0 / nv as f64).sqrt()
    } else {
        (1.0 / nv as f64).sqrt()
    };
    let mut re = vec![0.0; per_vertex * nv];
    let mut im = vec![0.0; per_vertex * nv];
    for v in 0..nv {
        let c = mesh.vertex_coords(v);
        let arg = theta[0] * c[0] as f64 + theta[1] * c[1] as f64 + theta[2] * c[2] as f64;
        let e = C64::new(arg.cos(), arg.sin());
        for d in 0..per_vertex {
            let z = m.coeff[d] * e * scale;
            re[per_vertex * v + d] = z.re;
            im[per_vertex * v + d] = z.im;
        }
    }
    if m.copies == 2 {
        vec![re, im]
    } else {
        vec![re]
    }
}

fn residual(b: &DMatrix<C64>, m: &DMatrix<C64>, lambda: f64, x: &DVector<C64>) -> f64 {
    let mx = m * x;
    let r = b * x - &mx * C64::new(lambda, 0.0);
    r.norm() / (lambda.abs() * mx.norm()).max(f64::MIN_POSITIVE)
}

/// Coclosed spectrum of the uniform mesh with constant metric `g`.
pub fn coclosed_spectrum(mesh: &PeriodicMesh, g: &Sym3, window: Window, opts: &SolverOptions) -> Result<CoclosedSpectrum> {
    let loc = locals(mesh, g);
    let ks = representatives(mesh);
    let gmax = g.to_matrix().symmetric_eigenvalues().max();
    let zero_tol = 1e-8 / gmax;
    // nonzero curl-curl modes at every wavevector
    let blocks: Vec<(EdgeSymbols, Vec<(f64, DVector<C64>)>)> = ks
        .par_iter()
        .map(|&k| {
            let sym = edge_symbols(mesh, &loc, k);
            let pencil = if neg(mesh, k) == k { real_pencil } else { hermitian_pencil };
            let pairs = pencil(&sym.curl_curl, &sym.mass)
                .into_iter()
                .filter(|(mu, _)| *mu > zero_tol)
                .collect();
            (sym, pairs)
        })
        .collect();
    let tol = |r: f64| polarization_tol(opts.polarization, r, mesh, gmax);
    // the weighted helicity coupling is block diagonal over wavevectors
    let modes: Vec<Mode> = blocks
        .par_iter()
        .zip(&ks)
        .flat_map_iter(|((sym, pairs), &k)| {
            let m = pairs.len();
            let xs: Vec<&DVector<C64>> = pairs.iter().map(|p| &p.1).collect();
            let roots: Vec<f64> = pairs.iter().map(|p| p.0.sqrt()).collect();
            let bx: Vec<DVector<C64>> = xs.iter().map(|x| &sym.helicity * *x).collect();
            let h = DMatrix::from_fn(m, m, |i, j| {
                let w = coupling_weight(roots[i], roots[j], &tol);
                if w > MIN_WEIGHT {
                    xs[i].dotc(&bx[j]) * w
                } else {
                    C64::new(0.0, 0.0)
                }
            });
            let mus: Vec<f64> = pairs.iter().map(|p| p.0).collect();
            let self_conj = neg(mesh, k) == k;
            let split: Vec<(f64, DVector<C64>)> = if self_conj {
                split_group(&mus, &h.map(|z| z.re))
                    .into_iter()
                    .map(|(l, z)| (l, z.map(|x| C64::new(x, 0.0))))
                    .collect()
            } else {
                split_group(&mus, &h)
            };
            split
                .into_iter()
                .map(|(value, z)| {
                    let coeff = xs.iter().zip(z.iter()).fold(DVector::<C64>::zeros(7), |acc, (x, a)| acc + *x * *a);
                    Mode {
                        value,
                        k,
                        residual: residual(&sym.curl_curl, &sym.mass, value * value, &coeff),
                        coeff,
                        copies: if self_conj { 1 } else { 2 },
                    }
                })
                .collect::<Vec<_>>()
        })
        .collect();
    let chosen = select(modes, window, opts.gap_tol, f64::abs)?;
    let mut values: Vec<(f64, Vec<f64>, f64)> = Vec::new();
    for m in &chosen {
        if opts.vectors {
            for v in expand(mesh, m, 7) {
                values.push((m.value, v, m.residual));
            }
        } else {
            for _ in 0..m.copies {
                values.push((m.value, Vec::new(), m.residual));
            }
        }
    }
    values.sort_by(|a, b| a.0.total_cmp(&b.0));
    Ok(finish_coclosed(values, opts, Backend::Bloch))
}

/// Lowest `k` nonzero scalar eigenvalues for a constant metric.
pub fn closed_spectrum(mesh: &PeriodicMesh, g: &Sym3, k: usize, opts: &SolverOptions) -> Result<ClosedSpectrum> {
    let loc = locals(mesh, g);
    let modes: Vec<Mode> = representatives(mesh)
        .par_iter()
        .filter(|&&k| k != [0, 0, 0])
        .map(|&k| {
            let (s, m) = scalar_symbols(mesh, &loc, k);
            Mode {
                value: s / m,
                k,
                coeff: DVector::from_element(1, C64::new(1.0 / m.sqrt(), 0.0)),
                residual: 0.0,
                copies: if neg(mesh, k) == k { 1 } else { 2 },
            }
        })
        .collect();
    let chosen = select(modes, Window::Count(k), opts.gap_tol, |v| v)?;
    let mut values: Vec<(f64, Vec<f64>, f64)> = Vec::new();
    for m in &chosen {
        if opts.vectors {
            for v in expand(mesh, m, 1) {
                values.push((m.value, v, m.residual));
            }
        } else {
            for _ in 0..m.copies {
                values.push((m.value, Vec::new(), m.residual));
            }
        }
    }
    values.sort_by(|a, b| a.0.total_cmp(&b.0));
    Ok(finish_closed(values, opts, Backend::Bloch))
}
