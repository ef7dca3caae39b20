//! Grid functions on uniform time meshes and the discrete trajectories
//! built from them.

use std::fmt::Write as _;

use crate::geneq::{eval_grid_norm, GeneqError, MetricSpec};

/// Samples of a vector-valued function: `rows` samples of length `dim`,
/// stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct GridFn {
    rows: usize,
    dim: usize,
    data: Vec<f64>,
}

impl GridFn {
    pub fn zeros(rows: usize, dim: usize) -> Self {
        Self {
            rows,
            dim,
            data: vec![0.0; rows * dim],
        }
    }

    pub fn constant(rows: usize, value: &[f64]) -> Self {
        Self {
            rows,
            dim: value.len(),
            data: value.repeat(rows),
        }
    }

    pub fn from_fn(rows: usize, dim: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * dim);
        for j in 0..rows {
            for i in 0..dim {
                data.push(f(j, i));
            }
        }
        Self { rows, dim, data }
    }

    pub fn from_vec(rows: usize, dim: usize, data: Vec<f64>) -> Result<Self, GeneqError> {
        if data.len() != rows * dim {
            return Err(GeneqError::Dimension {
                what: "grid data",
                expected: rows * dim,
                got: data.len(),
            });
        }
        Ok(Self { rows, dim, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, j: usize) -> &[f64] {
        &self.data[j * self.dim..(j + 1) * self.dim]
    }

    pub fn row_mut(&mut self, j: usize) -> &mut [f64] {
        &mut self.data[j * self.dim..(j + 1) * self.dim]
    }

    pub fn get(&self, j: usize, i: usize) -> f64 {
        self.data[j * self.dim + i]
    }

    pub fn set(&mut self, j: usize, i: usize, v: f64) {
        self.data[j * self.dim + i] = v;
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn sub(&self, other: &Self) -> Self {
        debug_assert_eq!((self.rows, self.dim), (other.rows, other.dim));
        Self {
            rows: self.rows,
            dim: self.dim,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect(),
        }
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self {
            rows: self.rows,
            dim: self.dim,
            data: self.data.iter().map(|a| a * s).collect(),
        }
    }

    /// Norm of the grid function; an empty grid has norm 0.
    pub fn norm(&self, spec: &MetricSpec) -> f64 {
        if self.data.is_empty() {
            return 0.0;
        }
        eval_grid_norm(&self.data, self.dim, spec).expect("grid shape is consistent")
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Discrete state, control, adjoint and multiplier on a uniform mesh of
/// `N` cells with step `h`: `x`, `p` are nodal (`N + 1` rows), `u`, `lam`
/// are cellwise (`N` rows).
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteQuadruple {
    pub h: f64,
    pub x: GridFn,
    pub u: GridFn,
    pub p: GridFn,
    pub lam: GridFn,
}

impl DiscreteQuadruple {
    pub fn cells(&self) -> usize {
        self.u.rows()
    }

    /// CSV with columns `t, x…, u…, p…, lam…`; the cellwise columns are
    /// empty on the final node.
    pub fn to_csv(&self, t0: f64) -> String {
        let mut out = String::from("t");
        for (name, g) in [("x", &self.x), ("u", &self.u), ("p", &self.p), ("lam", &self.lam)] {
            for i in 0..g.dim() {
                let _ = write!(out, ",{name}{i}");
            }
        }
        out.push('\n');
        for j in 0..self.x.rows() {
            let _ = write!(out, "{:.16e}", t0 + j as f64 * self.h);
            for g in [&self.x, &self.u, &self.p, &self.lam] {
                for i in 0..g.dim() {
                    if j < g.rows() {
                        let _ = write!(out, ",{:.16e}", g.get(j, i));
                    } else {
                        out.push(',');
                    }
                }
            }
            out.push('\n');
        }
        out
    }
}
