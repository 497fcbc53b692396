//! Shift-invert block Krylov iteration for symmetric pencils `(A, M)` with
//! `M` positive definite and `A` possibly indefinite and singular.
//!
//! The iteration runs on `T = P (A − σM)⁻¹ M`, where `P` is an
//! `M`-orthogonal projector onto an invariant subspace (used to remove the
//! kernel of `A`). Rayleigh–Ritz is done on `Qᵀ M T Q`, whose eigenvalues
//! `θ` approximate `1/(λ − σ)`, so the eigenvalues closest to `σ` converge
//! first. Thick restarts keep the leading Ritz vectors.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::sparse::{dot, norm, Csr, Factor};

pub struct ShiftInvert<'a> {
    pub sigma: f64,
    pub stiffness: &'a Csr,
    pub mass: &'a Csr,
    /// Factorization of `stiffness − σ mass`.
    pub factor: &'a Factor,
    pub project: &'a (dyn Fn(&mut [f64]) + Sync),
}

#[derive(Clone, Debug)]
pub struct KrylovOptions {
    pub block: usize,
    pub max_dim: usize,
    pub tol: f64,
    pub seed: u64,
    pub max_restarts: usize,
}

impl Default for KrylovOptions {
    fn default() -> Self {
        Self {
            block: 8,
            max_dim: 160,
            tol: 1e-9,
            seed: 0,
            max_restarts: 40,
        }
    }
}

#[derive(Clone, Debug)]
pub struct RitzPair {
    pub value: f64,
    pub vector: Vec<f64>,
    pub residual: f64,
}

/// Relative residual `‖A x − λ M x‖ / ‖λ M x‖`.
pub fn relative_residual(a: &Csr, m: &Csr, lambda: f64, x: &[f64]) -> f64 {
    let ax = a.matvec(x);
    let mx = m.matvec(x);
    let r: Vec<f64> = ax.iter().zip(&mx).map(|(a, b)| a - lambda * b).collect();
    norm(&r) / (lambda.abs() * norm(&mx)).max(f64::MIN_POSITIVE)
}

struct Basis {
    q: Vec<Vec<f64>>,
    mq: Vec<Vec<f64>>,
    w: Vec<Vec<f64>>,
    h: Vec<Vec<f64>>,
}

impl Basis {
    fn dim(&self) -> usize {
        self.q.len()
    }

    /// `M`-orthogonalizes `v` against the basis twice; returns the
    /// normalized vector and its mass product, or `None` if `v` collapsed.
    fn orthonormalize(&self, mass: &Csr, mut v: Vec<f64>) -> Option<(Vec<f64>, Vec<f64>)> {
        let mv0 = mass.matvec(&v);
        let n0 = dot(&v, &mv0).max(0.0).sqrt();
        if n0 == 0.0 {
            return None;
        }
        for _ in 0..2 {
            let coeffs: Vec<f64> = self.mq.par_iter().map(|mq| dot(mq, &v)).collect();
            for (c, q) in coeffs.iter().zip(&self.q) {
                v.iter_mut().zip(q).for_each(|(v, q)| *v -= c * q);
            }
        }
        let mv = mass.matvec(&v);
        let nv = dot(&v, &mv).max(0.0).sqrt();
        if nv < 1e-10 * n0 {
            return None;
        }
        let inv = 1.0 / nv;
        Some((
            v.iter().map(|x| x * inv).collect(),
            mv.iter().map(|x| x * inv).collect(),
        ))
    }

    /// Appends operator images for the trailing basis vectors that do not
    /// have one yet, extending the projected matrix symmetrically.
    fn attach_images(&mut self, ws: Vec<Vec<f64>>) {
        for w in ws {
            let m = self.w.len();
            let col: Vec<f64> = (0..=m).into_par_iter().map(|i| dot(&self.mq[i], &w)).collect();
            let sym: Vec<f64> = (0..m).into_par_iter().map(|i| dot(&self.mq[m], &self.w[i])).collect();
            for i in 0..m {
                let v = 0.5 * (col[i] + sym[i]);
                self.h[i].push(v);
            }
            let mut row: Vec<f64> = (0..m).map(|i| self.h[i][m]).collect();
            row.push(col[m]);
            self.h.push(row);
            self.w.push(w);
        }
    }

    /// Ritz pairs sorted by decreasing `|θ|`.
    fn ritz(&self) -> (Vec<f64>, DMatrix<f64>) {
        let m = self.dim();
        let h = DMatrix::from_fn(m, m, |i, j| self.h[i][j]);
        let eig = SymmetricEigen::new(h);
        let mut order: Vec<usize> = (0..m).collect();
        order.sort_by(|&a, &b| {
            eig.eigenvalues[b]
                .abs()
                .total_cmp(&eig.eigenvalues[a].abs())
                .then(a.cmp(&b))
        });
        let theta = order.iter().map(|&i| eig.eigenvalues[i]).collect();
        let y = DMatrix::from_fn(m, m, |i, j| eig.eigenvectors[(i, order[j])]);
        (theta, y)
    }

    fn combine(cols: &[Vec<f64>], y: &DMatrix<f64>, j: usize) -> Vec<f64> {
        let n = cols[0].len();
        let mut out = vec![0.0; n];
        for (i, c) in cols.iter().enumerate() {
            let a = y[(i, j)];
            if a != 0.0 {
                out.iter_mut().zip(c).for_each(|(o, c)| *o += a * c);
            }
        }
        out
    }
}

/// Relative change of a Ritz value between steps below which its residual
/// is checked.
const SETTLED: f64 = 1e-7;

/// Problems up to this size are solved densely.
pub const DENSE_LIMIT: usize = 600;

/// Dense solve on an orthonormal basis of the projector range.
fn dense_closest(problem: &ShiftInvert<'_>, want: usize) -> Result<Vec<RitzPair>> {
    let n = problem.mass.rows;
    let a = DMatrix::from_fn(n, n, |i, j| problem.stiffness.get(i, j));
    let m = DMatrix::from_fn(n, n, |i, j| problem.mass.get(i, j));
    let l = m
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Factorization("mass matrix is not positive definite".into()))?
        .l();
    let linv = l.clone().try_inverse().ok_or_else(|| Error::Factorization("singular mass factor".into()))?;
    // range of the projector, in the Cholesky-whitened coordinates
    let mut p = DMatrix::zeros(n, n);
    for j in 0..n {
        let mut e = vec![0.0; n];
        e[j] = 1.0;
        (problem.project)(&mut e);
        p.set_column(j, &nalgebra::DVector::from_vec(e));
    }
    let pw = l.transpose() * p * linv.transpose();
    let pw = (&pw + pw.transpose()) * 0.5;
    let range = SymmetricEigen::new(pw);
    let cols: Vec<usize> = (0..n).filter(|&i| range.eigenvalues[i] > 0.5).collect();
    let q = DMatrix::from_fn(n, cols.len(), |i, j| range.eigenvectors[(i, cols[j])]);
    let c = &linv * a * linv.transpose();
    let c = (&c + c.transpose()) * 0.5;
    let reduced = q.transpose() * c * &q;
    let eig = SymmetricEigen::new((&reduced + reduced.transpose()) * 0.5);
    let mut order: Vec<usize> = (0..cols.len()).collect();
    order.sort_by(|&i, &j| {
        (eig.eigenvalues[i] - problem.sigma)
            .abs()
            .total_cmp(&(eig.eigenvalues[j] - problem.sigma).abs())
            .then(i.cmp(&j))
    });
    let back = linv.transpose() * q;
    Ok(order
        .into_iter()
        .take(want)
        .map(|i| {
            let value = eig.eigenvalues[i];
            let vector: Vec<f64> = (&back * eig.eigenvectors.column(i)).iter().cloned().collect();
            let residual = relative_residual(problem.stiffness, problem.mass, value, &vector);
            RitzPair {
                value,
                vector,
                residual,
            }
        })
        .collect())
}

/// The `want` eigenpairs of `(A, M)` closest to the shift, restricted to the
/// range of the projector.
pub fn closest_to_shift(problem: &ShiftInvert<'_>, want: usize, opts: &KrylovOptions) -> Result<Vec<RitzPair>> {
    let n = problem.mass.rows;
    if n <= DENSE_LIMIT {
        return dense_closest(problem, want);
    }
    let block = opts.block.max(1);
    let max_dim = opts.max_dim.max(want + 2 * block).min(n);
    let project = |mut v: Vec<f64>| {
        (problem.project)(&mut v);
        v
    };
    // images are projected too, otherwise roundoff in the removed subspace
    // is amplified by every application and eventually dominates
    let apply = |vs: &[Vec<f64>]| -> Vec<Vec<f64>> {
        let rhs: Vec<Vec<f64>> = vs.par_iter().map(|v| problem.mass.matvec(v)).collect();
        problem.factor.solve_many(&rhs).into_par_iter().map(project).collect()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut random = |n: usize| -> Vec<f64> { (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect() };

    let mut basis = Basis {
        q: Vec::new(),
        mq: Vec::new(),
        w: Vec::new(),
        h: Vec::new(),
    };
    let mut candidates: Vec<Vec<f64>> = (0..block).map(|_| project(random(n))).collect();
    let mut restarts = 0;
    let mut steps = 0;
    let mut previous: Vec<f64> = Vec::new();
    loop {
        // orthonormalize the candidate block and apply the operator
        let start = basis.dim();
        for c in candidates.drain(..) {
            let mut c = Some(c);
            for _ in 0..3 {
                let v = c.take().unwrap_or_else(|| project(random(n)));
                if let Some((q, mq)) = basis.orthonormalize(problem.mass, v) {
                    basis.q.push(q);
                    basis.mq.push(mq);
                    break;
                }
            }
        }
        let added = basis.dim() - start;
        let ws = apply(&basis.q[start..]);
        basis.attach_images(ws);
        steps += 1;

        let (theta, y) = basis.ritz();
        let check = (want + block / 2).min(basis.dim());
        let mut pairs = Vec::with_capacity(check);
        let mut all_converged = basis.dim() >= want;
        for j in 0..check {
            let value = problem.sigma + 1.0 / theta[j];
            // a Ritz value settles long before its vector, so residuals are
            // only formed for values that stopped moving; the others count
            // as unconverged and are never returned
            let settled = previous.get(j).is_some_and(|&p| (theta[j] - p).abs() <= SETTLED * theta[j].abs());
            let (vector, residual) = if settled {
                let vector = Basis::combine(&basis.q, &y, j);
                let residual = relative_residual(problem.stiffness, problem.mass, value, &vector);
                (vector, residual)
            } else {
                (Vec::new(), f64::INFINITY)
            };
            if j < want && !(residual <= opts.tol) {
                all_converged = false;
            }
            pairs.push(RitzPair {
                value,
                vector,
                residual,
            });
        }
        previous = theta.clone();
        if all_converged && check >= want {
            pairs.truncate(want);
            return Ok(pairs);
        }
        if basis.dim() + block > max_dim {
            if restarts == opts.max_restarts {
                let converged = pairs.iter().take(want).filter(|p| p.residual <= opts.tol).count();
                return Err(Error::NoConvergence {
                    iterations: steps,
                    converged,
                    requested: want,
                });
            }
            restarts += 1;
            let keep = (want + block).min(max_dim - block).min(basis.dim());
            let q: Vec<Vec<f64>> = (0..keep).map(|j| Basis::combine(&basis.q, &y, j)).collect();
            let mq: Vec<Vec<f64>> = (0..keep).map(|j| Basis::combine(&basis.mq, &y, j)).collect();
            let w: Vec<Vec<f64>> = (0..keep).map(|j| Basis::combine(&basis.w, &y, j)).collect();
            let mut h = vec![vec![0.0; keep]; keep];
            for (j, row) in h.iter_mut().enumerate() {
                row[j] = theta[j];
            }
            candidates = (0..keep)
                .filter(|&j| j >= pairs.len() || pairs[j].residual > opts.tol)
                .take(block)
                .map(|j| w[j].clone())
                .collect();
            basis = Basis { q, mq, w, h };
        } else {
            let m = basis.dim();
            candidates = basis.w[m - added..].to_vec();
        }
        while candidates.len() < block {
            candidates.push(project(random(n)));
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn diagonal_pencil_interior_eigenvalues() {
        let values: Vec<f64> = (0..1000).map(|i| (i as f64 - 499.5) * 0.1).collect();
        let n = values.len();
        let a = Csr::from_triplets(n, n, values.iter().enumerate().map(|(i, &v)| (i, i, v)).collect());
        let m = Csr::identity(n);
        let sigma = 0.01;
        let factor = Factor::lu(&a.add_scaled(-sigma, &m)).unwrap();
        let project = |_: &mut [f64]| {};
        let problem = ShiftInvert {
            sigma,
            stiffness: &a,
            mass: &m,
            factor: &factor,
            project: &project,
        };
        let pairs = closest_to_shift(&problem, 6, &KrylovOptions::default()).unwrap();
        let mut got: Vec<f64> = pairs.iter().map(|p| p.value).collect();
        got.sort_by(f64::total_cmp);
        let expect = [-0.25, -0.15, -0.05, 0.05, 0.15, 0.25];
        for (g, e) in got.iter().zip(expect) {
            assert!((g - e).abs() < 1e-10);
        }
    }

    #[test]
    fn repeated_eigenvalues_are_all_found() {
        let mut values = vec![1.0; 5];
        values.extend([2.0, 2.0, -1.0, -1.0, -1.0]);
        values.extend((0..1000).map(|i| 3.0 + i as f64 * 0.05));
        let n = values.len();
        let m = Csr::from_triplets(n, n, (0..n).map(|i| (i, i, 1.0 + 0.01 * i as f64)).collect());
        let am = Csr::from_triplets(
            n,
            n,
            values.iter().enumerate().map(|(i, &v)| (i, i, v * (1.0 + 0.01 * i as f64))).collect(),
        );
        let sigma = 0.05;
        let factor = Factor::lu(&am.add_scaled(-sigma, &m)).unwrap();
        let project = |_: &mut [f64]| {};
        let problem = ShiftInvert {
            sigma,
            stiffness: &am,
            mass: &m,
            factor: &factor,
            project: &project,
        };
        let pairs = closest_to_shift(&problem, 8, &KrylovOptions::default()).unwrap();
        let mut got: Vec<f64> = pairs.iter().map(|p| p.value).collect();
        got.sort_by(f64::total_cmp);
        assert!(got[..3].iter().all(|v| (v + 1.0).abs() < 1e-9));
        assert!(got[3..].iter().all(|v| (v - 1.0).abs() < 1e-9));
    }

    #[test]
    fn dense_path_respects_projector() {
        let n = 50;
        let a = Csr::from_triplets(n, n, (0..n).map(|i| (i, i, i as f64)).collect());
        let m = Csr::identity(n);
        let factor = Factor::lu(&a.add_scaled(0.5, &m)).unwrap();
        // removes the first two coordinates
        let project = |v: &mut [f64]| {
            v[0] = 0.0;
            v[1] = 0.0;
        };
        let problem = ShiftInvert {
            sigma: -0.5,
            stiffness: &a,
            mass: &m,
            factor: &factor,
            project: &project,
        };
        let pairs = closest_to_shift(&problem, 3, &KrylovOptions::default()).unwrap();
        let got: Vec<f64> = pairs.iter().map(|p| p.value).collect();
        for (g, e) in got.iter().zip([2.0, 3.0, 4.0]) {
            assert!((g - e).abs() < 1e-10);
        }
        assert!(pairs.iter().all(|p| p.residual < 1e-12));
    }
}
