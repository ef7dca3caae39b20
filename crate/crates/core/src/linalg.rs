//! Linear-algebra plumbing shared by the solvers: a row-wise sparse matrix,
//! a direct solver for it, null spaces and nonnegative least squares.

use faer::linalg::solvers::Solve;
use faer::sparse::{SparseColMat, Triplet};
use nalgebra::{DMatrix, DVector};
use thiserror::Error;

/// Systems up to this size go through a dense full-pivoting LU.
const DENSE_CUTOFF: usize = 64;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinalgError {
    #[error("linear system of size {0} is singular")]
    Singular(usize),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("sparse factorization failed: {0}")]
    Factorization(String),
}

/// Sparse matrix stored as one list of `(column, value)` pairs per row.
///
/// Rows are the unit of work for the complementarity solvers (an active
/// bound replaces a whole row), so this layout keeps row surgery trivial.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    n_cols: usize,
    rows: Vec<Vec<(usize, f64)>>,
}

impl SparseMatrix {
    pub fn zeros(n_rows: usize, n_cols: usize) -> Self {
        Self {
            n_cols,
            rows: vec![Vec::new(); n_rows],
        }
    }

    pub fn from_dense(m: &DMatrix<f64>) -> Self {
        let mut out = Self::zeros(m.nrows(), m.ncols());
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                let v = m[(i, j)];
                if v != 0.0 {
                    out.rows[i].push((j, v));
                }
            }
        }
        out
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    /// Adds `value` to entry `(row, col)`. Duplicates are summed on use.
    pub fn add(&mut self, row: usize, col: usize, value: f64) {
        debug_assert!(col < self.n_cols);
        if value != 0.0 {
            self.rows[row].push((col, value));
        }
    }

    pub fn row(&self, i: usize) -> &[(usize, f64)] {
        &self.rows[i]
    }

    pub fn set_row(&mut self, i: usize, entries: Vec<(usize, f64)>) {
        self.rows[i] = entries;
    }

    /// Replaces row `i` by the unit row `e_i`.
    pub fn set_unit_row(&mut self, i: usize) {
        self.rows[i] = vec![(i, 1.0)];
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        self.rows
            .iter()
            .map(|r| r.iter().map(|&(j, v)| v * x[j]).sum())
            .collect()
    }

    pub fn row_dot(&self, i: usize, x: &[f64]) -> f64 {
        self.rows[i].iter().map(|&(j, v)| v * x[j]).sum()
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.n_rows(), self.n_cols);
        for (i, r) in self.rows.iter().enumerate() {
            for &(j, v) in r {
                m[(i, j)] += v;
            }
        }
        m
    }

    pub fn nnz(&self) -> usize {
        self.rows.iter().map(Vec::len).sum()
    }
}

/// Solves `a x = b` for square `a`.
///
/// The result is verified: a non-finite solution or a relative residual
/// above `1e-8` is reported as [`LinalgError::Singular`].
pub fn solve(a: &SparseMatrix, b: &[f64]) -> Result<Vec<f64>, LinalgError> {
    let n = a.n_rows();
    if a.n_cols() != n {
        return Err(LinalgError::Dimension {
            expected: n,
            got: a.n_cols(),
        });
    }
    if b.len() != n {
        return Err(LinalgError::Dimension {
            expected: n,
            got: b.len(),
        });
    }
    if n == 0 {
        return Ok(Vec::new());
    }
    let x = if n <= DENSE_CUTOFF {
        let lu = a.to_dense().full_piv_lu();
        lu.solve(&DVector::from_column_slice(b))
            .ok_or(LinalgError::Singular(n))?
            .as_slice()
            .to_vec()
    } else {
        solve_sparse(a, b)?
    };
    if x.iter().any(|v| !v.is_finite()) {
        return Err(LinalgError::Singular(n));
    }
    let ax = a.mul_vec(&x);
    let res = ax
        .iter()
        .zip(b)
        .map(|(p, q)| (p - q) * (p - q))
        .sum::<f64>()
        .sqrt();
    let scale = 1.0 + b.iter().map(|v| v * v).sum::<f64>().sqrt();
    if res > 1e-8 * scale {
        return Err(LinalgError::Singular(n));
    }
    Ok(x)
}

fn solve_sparse(a: &SparseMatrix, b: &[f64]) -> Result<Vec<f64>, LinalgError> {
    let n = a.n_rows();
    let mut triplets = Vec::with_capacity(a.nnz());
    for (i, r) in a.rows.iter().enumerate() {
        for &(j, v) in r {
            triplets.push(Triplet::new(i, j, v));
        }
    }
    let mat = SparseColMat::<usize, f64>::try_new_from_triplets(n, n, &triplets)
        .map_err(|e| LinalgError::Factorization(format!("{e:?}")))?;
    let lu = mat.sp_lu().map_err(|_| LinalgError::Singular(n))?;
    let mut rhs = faer::Mat::<f64>::from_fn(n, 1, |i, _| b[i]);
    lu.solve_in_place(rhs.as_mut());
    Ok((0..n).map(|i| rhs[(i, 0)]).collect())
}

/// Orthonormal basis (as columns) of the null space of `a`.
///
/// Singular values below `tol * max(1, sigma_max)` count as zero.
pub fn null_space(a: &DMatrix<f64>, n_cols: usize, tol: f64) -> DMatrix<f64> {
    if a.nrows() == 0 {
        return DMatrix::identity(n_cols, n_cols);
    }
    // Pad to a square-or-tall matrix so that the SVD exposes every right
    // singular vector.
    let rows = a.nrows().max(n_cols);
    let mut padded = DMatrix::zeros(rows, n_cols);
    padded.view_mut((0, 0), (a.nrows(), n_cols)).copy_from(a);
    let svd = padded.svd(false, true);
    let v_t = svd.v_t.expect("requested V^T");
    let s_max = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    let cut = tol * s_max.max(1.0);
    let keep: Vec<usize> = (0..n_cols)
        .filter(|&i| svd.singular_values[i] <= cut)
        .collect();
    let mut basis = DMatrix::zeros(n_cols, keep.len());
    for (c, &i) in keep.iter().enumerate() {
        basis.set_column(c, &v_t.row(i).transpose());
    }
    basis
}

/// Numerical rank of `a`.
pub fn rank(a: &DMatrix<f64>, tol: f64) -> usize {
    if a.nrows() == 0 || a.ncols() == 0 {
        return 0;
    }
    let s = a.clone().svd(false, false).singular_values;
    let s_max = s.iter().cloned().fold(0.0, f64::max);
    s.iter().filter(|&&v| v > tol * s_max.max(1.0)).count()
}

/// Lawson–Hanson nonnegative least squares: `min |a c - b|` over `c >= 0`.
pub fn nnls(a: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    let n = a.ncols();
    let mut c = DVector::zeros(n);
    let mut passive = vec![false; n];
    let tol = 1e-12 * (1.0 + a.amax()) * (1.0 + b.amax());
    for _outer in 0..(3 * n + 10) {
        let w = a.transpose() * (b - a * &c);
        let candidate = (0..n)
            .filter(|&j| !passive[j] && w[j] > tol)
            .max_by(|&i, &j| w[i].total_cmp(&w[j]));
        let Some(j) = candidate else { break };
        passive[j] = true;
        loop {
            let idx: Vec<usize> = (0..n).filter(|&k| passive[k]).collect();
            let sub = a.select_columns(&idx);
            let z_sub = sub
                .clone()
                .svd(true, true)
                .solve(b, 1e-14)
                .unwrap_or_else(|_| DVector::zeros(idx.len()));
            if z_sub.iter().all(|&v| v > 0.0) {
                for (k, &i) in idx.iter().enumerate() {
                    c[i] = z_sub[k];
                }
                break;
            }
            let mut alpha = f64::INFINITY;
            for (k, &i) in idx.iter().enumerate() {
                if z_sub[k] <= 0.0 {
                    let step = c[i] / (c[i] - z_sub[k]);
                    alpha = alpha.min(step);
                }
            }
            for (k, &i) in idx.iter().enumerate() {
                c[i] += alpha * (z_sub[k] - c[i]);
                if c[i] <= 1e-15 {
                    c[i] = 0.0;
                    passive[i] = false;
                }
            }
            if !passive.iter().any(|&p| p) {
                break;
            }
        }
    }
    c
}

pub fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
