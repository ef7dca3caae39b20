//! Generalized equations `rhs ∈ φ(z) + N_C(z_B)` and the Josephy–Newton
//! method: linearize `φ` at the current iterate, keep the normal cone, solve
//! the resulting affine variational inequality exactly, repeat.
//!
//! Cone blocks act on the variables with the same indices as their rows,
//! so every equation handled here is square.

use std::collections::HashSet;

use super::cone::{cone_residual, ConeSpec};
use super::GeneqError;
use crate::linalg::{self, LinalgError, SparseMatrix};

/// The single-valued part of a generalized equation.
pub trait SmoothMap: Sync {
    fn dim(&self) -> usize;
    fn eval(&self, z: &[f64]) -> Result<Vec<f64>, GeneqError>;
    fn jacobian(&self, z: &[f64]) -> Result<SparseMatrix, GeneqError>;
}

/// A smooth map given by two closures.
pub struct FnMap<F, J> {
    dim: usize,
    f: F,
    jac: J,
}

impl<F, J> FnMap<F, J>
where
    F: Fn(&[f64]) -> Vec<f64> + Sync,
    J: Fn(&[f64]) -> SparseMatrix + Sync,
{
    pub fn new(dim: usize, f: F, jac: J) -> Self {
        Self { dim, f, jac }
    }
}

impl<F, J> SmoothMap for FnMap<F, J>
where
    F: Fn(&[f64]) -> Vec<f64> + Sync,
    J: Fn(&[f64]) -> SparseMatrix + Sync,
{
    fn dim(&self) -> usize {
        self.dim
    }

    fn eval(&self, z: &[f64]) -> Result<Vec<f64>, GeneqError> {
        Ok((self.f)(z))
    }

    fn jacobian(&self, z: &[f64]) -> Result<SparseMatrix, GeneqError> {
        Ok((self.jac)(z))
    }
}

/// A cone acting on the variables (and rows) `offset .. offset + cone.dim()`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConeBlock {
    pub offset: usize,
    pub cone: ConeSpec,
}

pub struct GeneralizedEquation<M> {
    smooth: M,
    blocks: Vec<ConeBlock>,
}

impl<M: SmoothMap> GeneralizedEquation<M> {
    pub fn new(smooth: M, mut blocks: Vec<ConeBlock>) -> Result<Self, GeneqError> {
        let n = smooth.dim();
        if n == 0 {
            return Err(GeneqError::EmptyInput);
        }
        blocks.sort_by_key(|b| b.offset);
        let mut end = 0;
        for b in &blocks {
            b.cone.validate()?;
            if b.offset < end {
                return Err(GeneqError::InvalidCone("cone blocks overlap".into()));
            }
            end = b.offset + b.cone.dim();
            if end > n {
                return Err(GeneqError::Dimension {
                    what: "cone block end",
                    expected: n,
                    got: end,
                });
            }
        }
        Ok(Self { smooth, blocks })
    }

    pub fn smooth(&self) -> &M {
        &self.smooth
    }

    pub fn blocks(&self) -> &[ConeBlock] {
        &self.blocks
    }

    pub fn dim(&self) -> usize {
        self.smooth.dim()
    }

    fn eval_checked(&self, z: &[f64]) -> Result<Vec<f64>, GeneqError> {
        let n = self.dim();
        if z.len() != n {
            return Err(GeneqError::Dimension {
                what: "point",
                expected: n,
                got: z.len(),
            });
        }
        let phi = self.smooth.eval(z)?;
        if phi.len() != n {
            return Err(GeneqError::Dimension {
                what: "smooth image",
                expected: n,
                got: phi.len(),
            });
        }
        Ok(phi)
    }

    /// Euclidean residual of `rhs ∈ φ(z) + N(z_B)`: the equation defect on
    /// free rows combined with the normal-cone distance on cone rows.
    /// `+inf` when some block of `z` lies outside its set.
    pub fn residual(&self, z: &[f64], rhs: &[f64]) -> Result<f64, GeneqError> {
        let phi = self.eval_checked(z)?;
        if rhs.len() != phi.len() {
            return Err(GeneqError::Dimension {
                what: "right-hand side",
                expected: phi.len(),
                got: rhs.len(),
            });
        }
        let defect: Vec<f64> = rhs.iter().zip(&phi).map(|(r, p)| r - p).collect();
        let mut covered = vec![false; z.len()];
        let mut sq = 0.0;
        for b in &self.blocks {
            let range = b.offset..b.offset + b.cone.dim();
            let d = cone_residual(&b.cone, &z[range.clone()], &defect[range.clone()])?.value();
            if !d.is_finite() {
                return Ok(f64::INFINITY);
            }
            sq += d * d;
            covered[range].iter_mut().for_each(|c| *c = true);
        }
        sq += defect
            .iter()
            .zip(&covered)
            .filter(|(_, &c)| !c)
            .map(|(d, _)| d * d)
            .sum::<f64>();
        Ok(sq.sqrt())
    }

    /// Per-variable bounds induced by the cone blocks (`None` = equation row).
    fn bounds(&self) -> Result<Vec<Option<(f64, f64)>>, GeneqError> {
        let mut out = vec![None; self.dim()];
        for b in &self.blocks {
            match &b.cone {
                ConeSpec::Zero(_) => {}
                ConeSpec::NonnegOrthantNormal(k) => {
                    for i in 0..*k {
                        out[b.offset + i] = Some((0.0, f64::INFINITY));
                    }
                }
                ConeSpec::BoxNormal { lo, hi } => {
                    for i in 0..lo.len() {
                        out[b.offset + i] = Some((lo[i], hi[i]));
                    }
                }
                ConeSpec::PolytopeNormal { .. } => {
                    return Err(GeneqError::UnsupportedCone(
                        "polytope blocks cannot be linearized by the Newton solver".into(),
                    ))
                }
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NewtonOptions {
    pub tol: f64,
    pub max_iter: usize,
    /// Iteration cap for the active-set solver of each linearized problem.
    pub inner_max_iter: usize,
}

impl NewtonOptions {
    pub fn new(tol: f64, max_iter: usize) -> Self {
        Self {
            tol,
            max_iter,
            inner_max_iter: 200,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NewtonReport {
    /// The final iterate when converged, otherwise the best iterate seen.
    pub solution: Vec<f64>,
    /// Residual of the start point followed by one entry per iteration.
    pub history: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
}

impl NewtonReport {
    pub fn final_residual(&self) -> f64 {
        *self.history.last().expect("history starts with the initial residual")
    }
}

pub fn josephy_newton<M: SmoothMap>(
    geq: &GeneralizedEquation<M>,
    rhs: &[f64],
    start: &[f64],
    opts: &NewtonOptions,
) -> Result<NewtonReport, GeneqError> {
    if !(opts.tol > 0.0) {
        return Err(GeneqError::InvalidOption(format!(
            "tolerance must be positive, got {}",
            opts.tol
        )));
    }
    let bounds = geq.bounds()?;
    let mut z = start.to_vec();
    let mut r = geq.residual(&z, rhs)?;
    let mut history = vec![r];
    let mut best = (r, z.clone());
    let mut iterations = 0;
    while !(r <= opts.tol) && iterations < opts.max_iter {
        let phi = geq.eval_checked(&z)?;
        let jac = geq.smooth.jacobian(&z)?;
        if jac.n_rows() != z.len() || jac.n_cols() != z.len() {
            return Err(GeneqError::Dimension {
                what: "jacobian",
                expected: z.len(),
                got: jac.n_rows(),
            });
        }
        let base: Vec<f64> = phi.iter().zip(rhs).map(|(p, q)| p - q).collect();
        let next = match solve_affine_vi(&jac, &base, &z, &bounds, opts.inner_max_iter) {
            Ok(next) => next,
            Err(InnerFailure::Singular) => {
                return Err(GeneqError::SingularSubproblem {
                    iterate: iterations,
                })
            }
            Err(InnerFailure::NoConvergence) => break,
        };
        iterations += 1;
        z = next;
        r = geq.residual(&z, rhs)?;
        history.push(r);
        if r < best.0 || !best.0.is_finite() {
            best = (r, z.clone());
        }
    }
    let converged = r <= opts.tol;
    Ok(NewtonReport {
        solution: if converged { z } else { best.1 },
        history,
        converged,
        iterations,
    })
}

enum InnerFailure {
    Singular,
    NoConvergence,
}

#[derive(Clone, Copy, PartialEq, Eq, Hash)]
enum Face {
    Free,
    Lower,
    Upper,
}

/// Solves `0 ∈ base + J (z - zk) + N(z_B)` for box/orthant blocks by the
/// primal-dual active-set (semismooth Newton) method on
/// `z_i - mid(lo_i, z_i - w_i, hi_i) = 0`. Full steps are taken while they
/// visit new active sets; revisited sets trigger an Armijo backtrack on the
/// Euclidean norm of that mid-function residual.
fn solve_affine_vi(
    jac: &SparseMatrix,
    base: &[f64],
    zk: &[f64],
    bounds: &[Option<(f64, f64)>],
    max_iter: usize,
) -> Result<Vec<f64>, InnerFailure> {
    let n = zk.len();
    let jzk = jac.mul_vec(zk);
    let affine = |z: &[f64]| -> Vec<f64> {
        let jz = jac.mul_vec(z);
        (0..n).map(|i| base[i] + jz[i] - jzk[i]).collect()
    };
    let faces = |z: &[f64], w: &[f64]| -> Vec<Face> {
        (0..n)
            .map(|i| match bounds[i] {
                None => Face::Free,
                Some((lo, hi)) => {
                    let c = z[i] - w[i];
                    if c <= lo {
                        Face::Lower
                    } else if c >= hi {
                        Face::Upper
                    } else {
                        Face::Free
                    }
                }
            })
            .collect()
    };
    let merit = |z: &[f64]| -> f64 {
        let w = affine(z);
        (0..n)
            .map(|i| match bounds[i] {
                None => w[i] * w[i],
                Some((lo, hi)) => (z[i] - (z[i] - w[i]).clamp(lo, hi)).powi(2),
            })
            .sum::<f64>()
            .sqrt()
    };

    // Warm start: the active set predicted by the current iterate.
    let mut z = zk.to_vec();
    let mut face = faces(&z, base);
    let mut seen = HashSet::new();
    for _ in 0..max_iter {
        let mut m = jac.clone();
        let mut b = vec![0.0; n];
        for i in 0..n {
            match (face[i], bounds[i]) {
                (Face::Lower, Some((lo, _))) => {
                    m.set_unit_row(i);
                    b[i] = lo;
                }
                (Face::Upper, Some((_, hi))) => {
                    m.set_unit_row(i);
                    b[i] = hi;
                }
                _ => b[i] = jzk[i] - base[i],
            }
        }
        let z_full = match linalg::solve(&m, &b) {
            Ok(v) => v,
            Err(LinalgError::Singular(_)) => return Err(InnerFailure::Singular),
            Err(_) => return Err(InnerFailure::Singular),
        };
        let w_full = affine(&z_full);
        let face_full = faces(&z_full, &w_full);
        if face_full == face {
            return Ok(z_full);
        }
        seen.insert(face.clone());
        let m_now = merit(&z);
        let m_full = merit(&z_full);
        if m_full < m_now || !seen.contains(&face_full) {
            z = z_full;
            face = face_full;
            continue;
        }
        let mut t = 0.5;
        let mut accepted = false;
        while t > 1e-10 {
            let trial: Vec<f64> = z
                .iter()
                .zip(&z_full)
                .map(|(a, b)| a + t * (b - a))
                .collect();
            if merit(&trial) <= (1.0 - 1e-4 * t) * m_now {
                z = trial;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            return Err(InnerFailure::NoConvergence);
        }
        let w = affine(&z);
        face = faces(&z, &w);
    }
    Err(InnerFailure::NoConvergence)
}
