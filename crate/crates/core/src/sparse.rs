//! Compressed sparse row matrices with deterministic assembly, plus thin
//! wrappers over faer's sparse LU and Cholesky factorizations.

use std::io::Write;

use faer::linalg::solvers::Solve;
use faer::sparse::linalg::solvers::{Llt, Lu};
use faer::sparse::{SparseColMat, Triplet};
use faer::{Mat, Side};
use rayon::prelude::*;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Csr {
    pub rows: usize,
    pub cols: usize,
    pub row_ptr: Vec<usize>,
    pub col_idx: Vec<usize>,
    pub values: Vec<f64>,
}

impl Csr {
    /// Duplicate entries are summed in their input order, so the result is
    /// bit-identical for identical input sequences.
    pub fn from_triplets(rows: usize, cols: usize, mut triplets: Vec<(usize, usize, f64)>) -> Self {
        triplets.sort_by_key(|&(i, j, _)| (i, j));
        let mut row_ptr = vec![0usize; rows + 1];
        let mut col_idx = Vec::with_capacity(triplets.len());
        let mut values: Vec<f64> = Vec::with_capacity(triplets.len());
        let mut last: Option<(usize, usize)> = None;
        for (i, j, v) in triplets {
            debug_assert!(i < rows && j < cols);
            if last == Some((i, j)) {
                *values.last_mut().unwrap() += v;
            } else {
                col_idx.push(j);
                values.push(v);
                row_ptr[i + 1] += 1;
                last = Some((i, j));
            }
        }
        for i in 0..rows {
            row_ptr[i + 1] += row_ptr[i];
        }
        Self {
            rows,
            cols,
            row_ptr,
            col_idx,
            values,
        }
    }

    pub fn identity(n: usize) -> Self {
        Self::from_triplets(n, n, (0..n).map(|i| (i, i, 1.0)).collect())
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn triplets(&self) -> Vec<(usize, usize, f64)> {
        let mut out = Vec::with_capacity(self.nnz());
        for i in 0..self.rows {
            for p in self.row_ptr[i]..self.row_ptr[i + 1] {
                out.push((i, self.col_idx[p], self.values[p]));
            }
        }
        out
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let range = self.row_ptr[i]..self.row_ptr[i + 1];
        match self.col_idx[range.clone()].binary_search(&j) {
            Ok(p) => self.values[range.start + p],
            Err(_) => 0.0,
        }
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.cols);
        (0..self.rows)
            .into_par_iter()
            .with_min_len(1024)
            .map(|i| {
                let range = self.row_ptr[i]..self.row_ptr[i + 1];
                self.values[range.clone()]
                    .iter()
                    .zip(&self.col_idx[range])
                    .map(|(v, &j)| v * x[j])
                    .sum()
            })
            .collect()
    }

    pub fn transpose(&self) -> Csr {
        let t = self.triplets().into_iter().map(|(i, j, v)| (j, i, v)).collect();
        Csr::from_triplets(self.cols, self.rows, t)
    }

    pub fn tmatvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.rows);
        let mut y = vec![0.0; self.cols];
        for i in 0..self.rows {
            for p in self.row_ptr[i]..self.row_ptr[i + 1] {
                y[self.col_idx[p]] += self.values[p] * x[i];
            }
        }
        y
    }

    /// `u^T A v`.
    pub fn form(&self, u: &[f64], v: &[f64]) -> f64 {
        dot(u, &self.matvec(v))
    }

    pub fn scaled(&self, c: f64) -> Csr {
        Csr {
            values: self.values.iter().map(|v| v * c).collect(),
            ..self.clone()
        }
    }

    /// `self + c * other`.
    pub fn add_scaled(&self, c: f64, other: &Csr) -> Csr {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        let mut t = self.triplets();
        t.extend(other.triplets().into_iter().map(|(i, j, v)| (i, j, c * v)));
        Csr::from_triplets(self.rows, self.cols, t)
    }

    pub fn matmul(&self, other: &Csr) -> Csr {
        assert_eq!(self.cols, other.rows);
        let mut t = Vec::new();
        for i in 0..self.rows {
            for p in self.row_ptr[i]..self.row_ptr[i + 1] {
                let k = self.col_idx[p];
                for q in other.row_ptr[k]..other.row_ptr[k + 1] {
                    t.push((i, other.col_idx[q], self.values[p] * other.values[q]));
                }
            }
        }
        Csr::from_triplets(self.rows, other.cols, t)
    }

    /// `max |A_ij - A_ji|`.
    pub fn asymmetry(&self) -> f64 {
        self.triplets()
            .iter()
            .map(|&(i, j, v)| (v - self.get(j, i)).abs())
            .fold(0.0, f64::max)
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    /// Coordinate text format: `rows cols nnz` then one `i j value` line per
    /// stored entry.
    pub fn write_coo<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "{} {} {}", self.rows, self.cols, self.nnz())?;
        for (i, j, v) in self.triplets() {
            writeln!(w, "{i} {j} {v:.17e}")?;
        }
        Ok(())
    }

    pub fn read_coo(text: &str) -> Result<Csr> {
        let bad = |m: &str| Error::InvalidConfig(format!("COO parse error: {m}"));
        let mut lines = text.lines();
        let header: Vec<usize> = lines
            .next()
            .ok_or_else(|| bad("missing header"))?
            .split_whitespace()
            .map(|s| s.parse().map_err(|_| bad("header")))
            .collect::<Result<_>>()?;
        if header.len() != 3 {
            return Err(bad("header needs rows cols nnz"));
        }
        let mut t = Vec::with_capacity(header[2]);
        for line in lines.filter(|l| !l.trim().is_empty()) {
            let f: Vec<&str> = line.split_whitespace().collect();
            if f.len() != 3 {
                return Err(bad(line));
            }
            t.push((
                f[0].parse().map_err(|_| bad(line))?,
                f[1].parse().map_err(|_| bad(line))?,
                f[2].parse().map_err(|_| bad(line))?,
            ));
        }
        if t.len() != header[2] {
            return Err(bad("entry count differs from header"));
        }
        Ok(Csr::from_triplets(header[0], header[1], t))
    }

    fn to_faer(&self) -> Result<SparseColMat<usize, f64>> {
        let t: Vec<Triplet<usize, usize, f64>> = self
            .triplets()
            .into_iter()
            .map(|(i, j, v)| Triplet::new(i, j, v))
            .collect();
        SparseColMat::try_new_from_triplets(self.rows, self.cols, &t)
            .map_err(|e| Error::Factorization(format!("{e:?}")))
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn axpy(y: &mut [f64], c: f64, x: &[f64]) {
    y.iter_mut().zip(x).for_each(|(y, x)| *y += c * x);
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Direct solver for a fixed sparse matrix.
pub enum Factor {
    Lu(Lu<usize, f64>),
    Cholesky(Llt<usize, f64>),
}

impl Factor {
    pub fn lu(a: &Csr) -> Result<Self> {
        let m = a.to_faer()?;
        m.sp_lu()
            .map(Factor::Lu)
            .map_err(|e| Error::Factorization(format!("{e:?}")))
    }

    /// Fails unless the matrix is symmetric positive definite.
    pub fn cholesky(a: &Csr) -> Result<Self> {
        let m = a.to_faer()?;
        m.sp_cholesky(Side::Lower)
            .map(Factor::Cholesky)
            .map_err(|e| Error::Factorization(format!("{e:?}")))
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut x = Mat::from_fn(b.len(), 1, |i, _| b[i]);
        match self {
            Factor::Lu(f) => f.solve_in_place(x.as_mut()),
            Factor::Cholesky(f) => f.solve_in_place(x.as_mut()),
        }
        (0..b.len()).map(|i| x[(i, 0)]).collect()
    }

    /// Solves for several right-hand sides at once.
    pub fn solve_many(&self, bs: &[Vec<f64>]) -> Vec<Vec<f64>> {
        if bs.is_empty() {
            return Vec::new();
        }
        let n = bs[0].len();
        let mut x = Mat::from_fn(n, bs.len(), |i, j| bs[j][i]);
        match self {
            Factor::Lu(f) => f.solve_in_place(x.as_mut()),
            Factor::Cholesky(f) => f.solve_in_place(x.as_mut()),
        }
        (0..bs.len())
            .map(|j| (0..n).map(|i| x[(i, j)]).collect())
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn laplacian_1d(n: usize) -> Csr {
        let mut t = Vec::new();
        for i in 0..n {
            t.push((i, i, 2.0));
            if i > 0 {
                t.push((i, i - 1, -1.0));
                t.push((i - 1, i, -1.0));
            }
        }
        Csr::from_triplets(n, n, t)
    }

    #[test]
    fn duplicates_are_summed() {
        let a = Csr::from_triplets(2, 2, vec![(1, 0, 1.0), (0, 0, 2.0), (1, 0, 3.0)]);
        assert_eq!(a.nnz(), 2);
        assert_eq!(a.get(1, 0), 4.0);
        assert_eq!(a.get(0, 1), 0.0);
        assert_eq!(a.matvec(&[1.0, 1.0]), vec![2.0, 4.0]);
        assert_eq!(a.tmatvec(&[1.0, 1.0]), vec![6.0, 0.0]);
    }

    #[test]
    fn coo_roundtrip() {
        let a = laplacian_1d(5);
        let mut buf = Vec::new();
        a.write_coo(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("5 5 13\n"));
        assert_eq!(Csr::read_coo(&text).unwrap(), a);
    }

    #[test]
    fn factorizations_solve() {
        let a = laplacian_1d(30);
        let b: Vec<f64> = (0..30).map(|i| (i as f64).sin()).collect();
        for f in [Factor::lu(&a).unwrap(), Factor::cholesky(&a).unwrap()] {
            let x = f.solve(&b);
            let r = a.matvec(&x);
            assert!(r.iter().zip(&b).all(|(r, b)| (r - b).abs() < 1e-12));
        }
        assert!(Factor::cholesky(&a.scaled(-1.0)).is_err());
    }

    #[test]
    fn matmul_and_transpose() {
        let a = Csr::from_triplets(2, 3, vec![(0, 0, 1.0), (0, 2, 2.0), (1, 1, 3.0)]);
        let ata = a.transpose().matmul(&a);
        assert_eq!(ata.get(2, 2), 4.0);
        assert_eq!(ata.get(0, 2), 2.0);
        assert_eq!(ata.asymmetry(), 0.0);
    }
}
