//! Sparse matrices and the linear solvers used by the elliptic and
//! time-stepping layers.
//!
//! Direct factorizations are the default: banded LU with partial pivoting
//! for cylinder systems, dense LU for small periodic systems. A
//! BiCGSTAB/ILU(0) Krylov path is available for larger systems and as a
//! cross-check.

mod banded;
mod krylov;

pub use banded::BandedLu;
pub use krylov::{bicgstab, Ilu0, KrylovReport};

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Which linear solver to use.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum LinearSolver {
    /// Banded or dense LU, picked from the sparsity pattern.
    Direct,
    /// Preconditioned BiCGSTAB.
    Krylov { rel_tol: f64, max_iter: usize },
}

impl Default for LinearSolver {
    fn default() -> Self {
        LinearSolver::Direct
    }
}

impl LinearSolver {
    pub fn krylov() -> Self {
        LinearSolver::Krylov {
            rel_tol: 1e-10,
            max_iter: 2000,
        }
    }
}

/// Square sparse matrix assembled from `(row, col, value)` triplets.
#[derive(Clone, Debug, Default)]
pub struct Triplets {
    n: usize,
    entries: Vec<(usize, usize, f64)>,
}

impl Triplets {
    pub fn new(n: usize) -> Self {
        Self {
            n,
            entries: Vec::new(),
        }
    }

    pub fn with_capacity(n: usize, cap: usize) -> Self {
        Self {
            n,
            entries: Vec::with_capacity(cap),
        }
    }

    #[inline]
    pub fn add(&mut self, r: usize, c: usize, v: f64) {
        debug_assert!(r < self.n && c < self.n);
        self.entries.push((r, c, v));
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Drops every entry of row `r`.
    pub fn clear_row(&mut self, r: usize) {
        self.entries.retain(|e| e.0 != r);
    }

    pub fn to_csr(&self) -> CsrMatrix {
        CsrMatrix::from_triplets(self.n, &self.entries)
    }
}

/// Compressed sparse row matrix with sorted, de-duplicated columns.
#[derive(Clone, Debug)]
pub struct CsrMatrix {
    n: usize,
    row_ptr: Vec<usize>,
    col: Vec<usize>,
    val: Vec<f64>,
}

impl CsrMatrix {
    pub fn from_triplets(n: usize, entries: &[(usize, usize, f64)]) -> Self {
        let mut sorted = entries.to_vec();
        sorted.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        let mut row_ptr = vec![0usize; n + 1];
        let mut col = Vec::with_capacity(sorted.len());
        let mut val: Vec<f64> = Vec::with_capacity(sorted.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in sorted {
            if last == Some((r, c)) {
                *val.last_mut().unwrap() += v;
                continue;
            }
            col.push(c);
            val.push(v);
            row_ptr[r + 1] += 1;
            last = Some((r, c));
        }
        for r in 0..n {
            row_ptr[r + 1] += row_ptr[r];
        }
        Self {
            n,
            row_ptr,
            col,
            val,
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.val.len()
    }

    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let (a, b) = (self.row_ptr[r], self.row_ptr[r + 1]);
        self.col[a..b]
            .iter()
            .copied()
            .zip(self.val[a..b].iter().copied())
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        let (a, b) = (self.row_ptr[r], self.row_ptr[r + 1]);
        match self.col[a..b].binary_search(&c) {
            Ok(k) => self.val[a + k],
            Err(_) => 0.0,
        }
    }

    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        for r in 0..self.n {
            let mut s = 0.0;
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                s += self.val[k] * x[self.col[k]];
            }
            y[r] = s;
        }
    }

    pub fn mul(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        self.matvec(x, &mut y);
        y
    }

    /// Lower and upper bandwidths.
    pub fn bandwidth(&self) -> (usize, usize) {
        let (mut kl, mut ku) = (0, 0);
        for r in 0..self.n {
            for (c, _) in self.row(r) {
                if c < r {
                    kl = kl.max(r - c);
                } else {
                    ku = ku.max(c - r);
                }
            }
        }
        (kl, ku)
    }

    pub fn max_abs(&self) -> f64 {
        self.val.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.n, self.n);
        for r in 0..self.n {
            for (c, v) in self.row(r) {
                m[(r, c)] = v;
            }
        }
        m
    }

    pub(crate) fn parts(&self) -> (&[usize], &[usize], &[f64]) {
        (&self.row_ptr, &self.col, &self.val)
    }
}

/// Dense LU factorization for systems without exploitable band structure.
pub struct DenseLu {
    lu: nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
}

impl DenseLu {
    pub fn factor(a: &CsrMatrix) -> Result<Self> {
        let dense = a.to_dense();
        let scale = a.max_abs().max(f64::MIN_POSITIVE);
        let lu = dense.lu();
        let u = lu.u();
        for k in 0..a.n() {
            if !(u[(k, k)].abs() > 1e-18 * scale) {
                return Err(Error::Singular(k));
            }
        }
        Ok(Self { lu })
    }

    pub fn solve(&self, b: &mut [f64]) -> Result<()> {
        let mut v = nalgebra::DVector::from_column_slice(b);
        if !self.lu.solve_mut(&mut v) {
            return Err(Error::Singular(0));
        }
        b.copy_from_slice(v.as_slice());
        Ok(())
    }
}

/// A reusable direct factorization.
pub enum Factorization {
    Banded(BandedLu),
    Dense(DenseLu),
}

/// Largest system handed to the dense LU.
const DENSE_LIMIT: usize = 2500;

impl Factorization {
    /// Banded LU when the band is narrow, dense LU otherwise.
    pub fn new(a: &CsrMatrix) -> Result<Self> {
        let (kl, ku) = a.bandwidth();
        let n = a.n();
        let band_cost = n as f64 * (kl as f64) * (kl + ku) as f64;
        let dense_cost = (n as f64).powi(3) / 3.0;
        if band_cost < dense_cost || n > DENSE_LIMIT {
            Ok(Factorization::Banded(BandedLu::factor(a)?))
        } else {
            Ok(Factorization::Dense(DenseLu::factor(a)?))
        }
    }

    pub fn solve_in_place(&self, b: &mut [f64]) -> Result<()> {
        match self {
            Factorization::Banded(f) => {
                f.solve(b);
                Ok(())
            }
            Factorization::Dense(f) => f.solve(b),
        }
    }

    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        let mut x = b.to_vec();
        self.solve_in_place(&mut x)?;
        Ok(x)
    }
}

/// A matrix prepared for repeated solves with either solver family.
pub enum Prepared {
    Direct(Factorization),
    Krylov {
        a: CsrMatrix,
        pre: Ilu0,
        rel_tol: f64,
        max_iter: usize,
    },
}

impl Prepared {
    pub fn new(a: CsrMatrix, solver: LinearSolver) -> Result<Self> {
        match solver {
            LinearSolver::Direct => Ok(Prepared::Direct(Factorization::new(&a)?)),
            LinearSolver::Krylov { rel_tol, max_iter } => {
                let pre = Ilu0::new(&a)?;
                Ok(Prepared::Krylov {
                    a,
                    pre,
                    rel_tol,
                    max_iter,
                })
            }
        }
    }

    /// Solution and Krylov iteration count (zero for direct solves).
    pub fn solve(&self, b: &[f64]) -> Result<(Vec<f64>, usize)> {
        match self {
            Prepared::Direct(f) => Ok((f.solve(b)?, 0)),
            Prepared::Krylov {
                a,
                pre,
                rel_tol,
                max_iter,
            } => {
                let rep = bicgstab(a, b, None, pre, *rel_tol, *max_iter)?;
                Ok((rep.x, rep.iterations))
            }
        }
    }
}

/// One-shot solve of `A x = b`.
pub fn solve(a: &CsrMatrix, b: &[f64], solver: LinearSolver) -> Result<Vec<f64>> {
    Ok(Prepared::new(a.clone(), solver)?.solve(b)?.0)
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}
