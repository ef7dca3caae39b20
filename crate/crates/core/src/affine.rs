//! Control-affine problems
//!
//! ```text
//!   min ∫₀ᵀ w(t, x) + ⟨d(t, x), u⟩ dt,   ẋ = a(t, x) + B(t, x) u,   x(0) = x⁰,   u(t) ∈ U
//! ```
//!
//! with `U` a box or a polytope. With `H = w + ⟨d, u⟩ + ⟨p, a + Bu⟩` the
//! disturbed optimality system is
//!
//! ```text
//!   ξ = −ẋ + a + Bu,   π = ṗ + H_x,   ρ ∈ σ + N_U(u),   σ = Bᵀp + d,   p(T) = 0,
//! ```
//!
//! discretized by explicit Euler with the exact discrete adjoint. Optimal
//! controls are bang-bang: pointwise minimizers of `⟨σ − ρ, ·⟩` over `U`.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::geneq::{
    cone_residual, linear_fit, run_samples, ConeSpec, GeneqError, MetricSpec, PerturbationRecord,
};
use crate::grid::{DiscreteQuadruple, GridFn};
use crate::rng::SampleRng;

/// Inner products within this (relative) distance of the minimum count as
/// ties in the pointwise minimization.
pub const TIE_TOL: f64 = 1e-12;

/// Growth samples flip the control on at least this many cells (fewer if
/// the L¹ budget does not allow it).
pub const MIN_NEEDLE_CELLS: usize = 10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AffineError {
    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("invalid control set: {0}")]
    InvalidControlSet(String),
    #[error("control is not admissible in cell {cell}")]
    Inadmissible { cell: usize },
    #[error("dynamics returned a non-finite value in cell {cell}")]
    Integration { cell: usize },
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("sampling failed: {0}")]
    Sampling(String),
    #[error("invalid option: {0}")]
    InvalidOption(String),
    #[error("reference solve failed: {0}")]
    Reference(String),
    #[error(transparent)]
    Geneq(#[from] GeneqError),
}

/// The control constraint set.
#[derive(Debug, Clone, PartialEq)]
pub enum ControlSet {
    Box { lo: Vec<f64>, hi: Vec<f64> },
    /// Convex hull of `vertices`; `edges` are unit vectors parallel to the
    /// edges (needed only by the switching-function growth check).
    Polytope {
        vertices: Vec<Vec<f64>>,
        edges: Vec<Vec<f64>>,
    },
}

impl ControlSet {
    pub fn interval(lo: f64, hi: f64) -> Self {
        Self::Box {
            lo: vec![lo],
            hi: vec![hi],
        }
    }

    /// Polytope with normalized edge directions.
    pub fn polytope(vertices: Vec<Vec<f64>>, edges: Vec<Vec<f64>>) -> Result<Self, AffineError> {
        let edges = edges
            .into_iter()
            .map(|e| {
                let len = e.iter().map(|v| v * v).sum::<f64>().sqrt();
                if len > 0.0 {
                    Ok(e.iter().map(|v| v / len).collect())
                } else {
                    Err(AffineError::InvalidControlSet("zero edge direction".into()))
                }
            })
            .collect::<Result<Vec<Vec<f64>>, _>>()?;
        let set = Self::Polytope { vertices, edges };
        set.validate()?;
        Ok(set)
    }

    pub fn dim(&self) -> usize {
        match self {
            Self::Box { lo, .. } => lo.len(),
            Self::Polytope { vertices, .. } => vertices.first().map_or(0, Vec::len),
        }
    }

    pub fn validate(&self) -> Result<(), AffineError> {
        self.cone().validate()?;
        match self {
            Self::Box { lo, .. } if lo.len() > 16 => Err(AffineError::InvalidControlSet(
                "boxes are limited to 16 dimensions".into(),
            )),
            Self::Polytope { edges, .. } if edges.iter().any(|e| e.len() != self.dim()) => {
                Err(AffineError::InvalidControlSet("edge dimension mismatch".into()))
            }
            _ => Ok(()),
        }
    }

    fn cone(&self) -> ConeSpec {
        match self {
            Self::Box { lo, hi } => ConeSpec::BoxNormal {
                lo: lo.clone(),
                hi: hi.clone(),
            },
            Self::Polytope { vertices, .. } => ConeSpec::PolytopeNormal {
                vertices: vertices.clone(),
            },
        }
    }

    /// Vertex list; box vertices are ordered with bit `i` of the index
    /// selecting `hi[i]`, so index 0 is the lower corner.
    pub fn vertices(&self) -> Vec<Vec<f64>> {
        match self {
            Self::Box { lo, hi } => (0..1usize << lo.len())
                .map(|mask| {
                    (0..lo.len())
                        .map(|i| if mask >> i & 1 == 1 { hi[i] } else { lo[i] })
                        .collect()
                })
                .collect(),
            Self::Polytope { vertices, .. } => vertices.clone(),
        }
    }

    /// Unit vectors parallel to the edges.
    pub fn edge_directions(&self) -> Vec<Vec<f64>> {
        match self {
            Self::Box { lo, .. } => (0..lo.len())
                .map(|i| (0..lo.len()).map(|k| if k == i { 1.0 } else { 0.0 }).collect())
                .collect(),
            Self::Polytope { edges, .. } => edges.clone(),
        }
    }

    /// Minimizer of `⟨sigma, ·⟩` over the set. Boxes follow the sign rule
    /// componentwise, with a tie resolved to `prev` (the previous cell's
    /// value) or to the lower bound; polytopes return the lowest-index
    /// minimizing vertex.
    pub fn minimizer(&self, sigma: &[f64], prev: Option<&[f64]>) -> Vec<f64> {
        match self {
            Self::Box { lo, hi } => (0..lo.len())
                .map(|i| {
                    if sigma[i] > TIE_TOL {
                        lo[i]
                    } else if sigma[i] < -TIE_TOL {
                        hi[i]
                    } else {
                        prev.map_or(lo[i], |p| p[i])
                    }
                })
                .collect(),
            Self::Polytope { vertices, .. } => {
                let vals: Vec<f64> = vertices
                    .iter()
                    .map(|v| v.iter().zip(sigma).map(|(a, b)| a * b).sum())
                    .collect();
                let min = vals.iter().copied().fold(f64::INFINITY, f64::min);
                let idx = vals
                    .iter()
                    .position(|&v| v - min <= TIE_TOL * (1.0 + min.abs()))
                    .unwrap_or(0);
                vertices[idx].clone()
            }
        }
    }

    /// Distance from `v` to the normal cone at `u` (`+inf` if `u ∉ U`).
    pub fn normal_distance(&self, u: &[f64], v: &[f64]) -> f64 {
        cone_residual(&self.cone(), u, v).map_or(f64::INFINITY, |r| r.value())
    }

    pub fn contains(&self, u: &[f64]) -> bool {
        self.normal_distance(u, &vec![0.0; u.len()]).is_finite()
    }
}

/// Problem data. Derivative defaults are zero, matching `B` and `d`
/// independent of `x`; override them otherwise.
pub trait AffineOcp: Sync {
    fn n(&self) -> usize;
    fn m(&self) -> usize;
    fn horizon(&self) -> f64 {
        1.0
    }
    fn x0(&self) -> Vec<f64>;
    fn control_set(&self) -> ControlSet;
    /// The a-priori bound `M̄` on `|x|, |ẋ|, |p|, |ṗ|`.
    fn state_bound(&self) -> f64;
    /// Whether the problem is linear-quadratic (required for Hölder-type
    /// growth exponents below 2).
    fn linear_quadratic(&self) -> bool {
        false
    }
    fn a(&self, t: f64, x: &[f64]) -> Vec<f64>;
    fn a_x(&self, t: f64, x: &[f64]) -> DMatrix<f64>;
    fn b(&self, t: f64, x: &[f64]) -> DMatrix<f64>;
    /// Jacobian in `x` of `B(t, x) u`.
    fn bu_x(&self, _t: f64, _x: &[f64], _u: &[f64]) -> DMatrix<f64> {
        DMatrix::zeros(self.n(), self.n())
    }
    fn w(&self, t: f64, x: &[f64]) -> f64;
    fn w_x(&self, t: f64, x: &[f64]) -> Vec<f64>;
    fn d(&self, t: f64, x: &[f64]) -> Vec<f64>;
    /// `m × n` Jacobian of `d`.
    fn d_x(&self, _t: f64, _x: &[f64]) -> DMatrix<f64> {
        DMatrix::zeros(self.m(), self.n())
    }
    /// `H_xx(t, x, u, p)`.
    fn h_xx(&self, t: f64, x: &[f64], u: &[f64], p: &[f64]) -> DMatrix<f64>;
    /// `H_ux(t, x, p)`, an `m × n` matrix.
    fn h_ux(&self, _t: f64, _x: &[f64], _p: &[f64]) -> DMatrix<f64> {
        DMatrix::zeros(self.m(), self.n())
    }
}

fn h_x(ocp: &dyn AffineOcp, t: f64, x: &[f64], u: &[f64], p: &[f64]) -> DVector<f64> {
    let pv = DVector::from_column_slice(p);
    let uv = DVector::from_column_slice(u);
    DVector::from_vec(ocp.w_x(t, x))
        + ocp.d_x(t, x).transpose() * uv
        + ocp.a_x(t, x).transpose() * &pv
        + ocp.bu_x(t, x, u).transpose() * &pv
}

fn sigma_at(ocp: &dyn AffineOcp, t: f64, x: &[f64], p: &[f64]) -> Vec<f64> {
    let s = ocp.b(t, x).transpose() * DVector::from_column_slice(p)
        + DVector::from_vec(ocp.d(t, x));
    s.as_slice().to_vec()
}

/// Disturbance `(ξ, π, ρ)`: `ξ, π` cellwise, `ρ` nodal and read as the
/// continuous piecewise-linear interpolant.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineDisturbance {
    pub xi: GridFn,
    pub pi: GridFn,
    pub rho: GridFn,
}

impl AffineDisturbance {
    pub fn zero(ocp: &dyn AffineOcp, cells: usize) -> Self {
        Self {
            xi: GridFn::zeros(cells, ocp.n()),
            pi: GridFn::zeros(cells, ocp.n()),
            rho: GridFn::zeros(cells + 1, ocp.m()),
        }
    }

    /// Constant `ρ ≡ value`.
    pub fn constant_rho(ocp: &dyn AffineOcp, cells: usize, value: &[f64]) -> Self {
        Self {
            rho: GridFn::constant(cells + 1, value),
            ..Self::zero(ocp, cells)
        }
    }

    /// `‖ξ‖_∞ + ‖π‖_∞ + ‖ρ‖_{1,∞}`.
    pub fn strong_norm(&self, h: f64) -> f64 {
        self.xi.norm(&MetricSpec::linf())
            + self.pi.norm(&MetricSpec::linf())
            + self.rho.norm(&MetricSpec::w1inf(h))
    }

    /// `‖ξ‖₁ + ‖π‖₁ + ‖ρ‖_∞`.
    pub fn weak_norm(&self, h: f64) -> f64 {
        self.xi.norm(&MetricSpec::l1(h))
            + self.pi.norm(&MetricSpec::l1(h))
            + self.rho.norm(&MetricSpec::linf())
    }

    pub fn sub(&self, other: &Self) -> Self {
        Self {
            xi: self.xi.sub(&other.xi),
            pi: self.pi.sub(&other.pi),
            rho: self.rho.sub(&other.rho),
        }
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self {
            xi: self.xi.scaled(s),
            pi: self.pi.scaled(s),
            rho: self.rho.scaled(s),
        }
    }
}

/// `σ = Bᵀp + d` on the nodes; cell `j` uses `p_{j+1}` (the discrete
/// gradient of the cost in `u_j` is `h σ_j`), the final node `p_N`.
#[derive(Debug, Clone, PartialEq)]
pub struct SwitchingFunction {
    pub h: f64,
    pub values: GridFn,
    /// Forward differences, one row per cell.
    pub slopes: GridFn,
}

impl SwitchingFunction {
    pub fn from_values(h: f64, values: GridFn) -> Self {
        let cells = values.rows().saturating_sub(1);
        let slopes = GridFn::from_fn(cells, values.dim(), |j, i| {
            (values.get(j + 1, i) - values.get(j, i)) / h
        });
        Self { h, values, slopes }
    }

    /// Samples `f(t)` on `cells + 1` nodes of `[0, horizon]`.
    pub fn from_fn(cells: usize, horizon: f64, dim: usize, f: impl Fn(f64) -> Vec<f64>) -> Self {
        let h = horizon / cells as f64;
        let mut values = GridFn::zeros(cells + 1, dim);
        for j in 0..=cells {
            values.row_mut(j).copy_from_slice(&f(j as f64 * h));
        }
        Self::from_values(h, values)
    }

    pub fn cells(&self) -> usize {
        self.values.rows() - 1
    }

    /// CSV with columns `t, sigma…, u…`; `u` is empty on the final node.
    pub fn to_csv(&self, u: &GridFn) -> String {
        let mut out = String::from("t");
        for i in 0..self.values.dim() {
            let _ = write!(out, ",sigma{i}");
        }
        for i in 0..u.dim() {
            let _ = write!(out, ",u{i}");
        }
        out.push('\n');
        for j in 0..self.values.rows() {
            let _ = write!(out, "{:.16e}", j as f64 * self.h);
            for v in self.values.row(j) {
                let _ = write!(out, ",{v:.16e}");
            }
            for i in 0..u.dim() {
                if j < u.rows() {
                    let _ = write!(out, ",{:.16e}", u.get(j, i));
                } else {
                    out.push(',');
                }
            }
            out.push('\n');
        }
        out
    }
}

fn check_control(ocp: &dyn AffineOcp, u: &GridFn) -> Result<(), AffineError> {
    if u.rows() == 0 {
        return Err(AffineError::Dimension {
            what: "cells",
            expected: 1,
            got: 0,
        });
    }
    if u.dim() != ocp.m() {
        return Err(AffineError::Dimension {
            what: "control dim",
            expected: ocp.m(),
            got: u.dim(),
        });
    }
    Ok(())
}

/// State and adjoint for the control `u` under the disturbance `d`:
/// `x_{j+1} = x_j + h(a + Bu − ξ_j)`, `p_j = p_{j+1} + h(H_x − π_j)`,
/// `p_N = 0`.
pub fn trajectory(
    ocp: &dyn AffineOcp,
    u: &GridFn,
    d: Option<&AffineDisturbance>,
) -> Result<DiscreteQuadruple, AffineError> {
    check_control(ocp, u)?;
    let (n, cells) = (ocp.n(), u.rows());
    let h = ocp.horizon() / cells as f64;
    let mut x = GridFn::zeros(cells + 1, n);
    x.row_mut(0).copy_from_slice(&ocp.x0());
    for j in 0..cells {
        let t = j as f64 * h;
        let xj = x.row(j).to_vec();
        let f = DVector::from_vec(ocp.a(t, &xj)) + ocp.b(t, &xj) * DVector::from_column_slice(u.row(j));
        for i in 0..n {
            let xi = d.map_or(0.0, |d| d.xi.get(j, i));
            let v = xj[i] + h * (f[i] - xi);
            if !v.is_finite() {
                return Err(AffineError::Integration { cell: j });
            }
            x.set(j + 1, i, v);
        }
    }
    let mut p = GridFn::zeros(cells + 1, n);
    for j in (0..cells).rev() {
        let t = j as f64 * h;
        let hx = h_x(ocp, t, x.row(j), u.row(j), p.row(j + 1));
        for i in 0..n {
            let pi = d.map_or(0.0, |d| d.pi.get(j, i));
            let v = p.get(j + 1, i) + h * (hx[i] - pi);
            if !v.is_finite() {
                return Err(AffineError::Integration { cell: j });
            }
            p.set(j, i, v);
        }
    }
    Ok(DiscreteQuadruple {
        h,
        x,
        u: u.clone(),
        p,
        lam: GridFn::zeros(cells, 0),
    })
}

pub fn switching_function(ocp: &dyn AffineOcp, s: &DiscreteQuadruple) -> Result<SwitchingFunction, AffineError> {
    check_control(ocp, &s.u)?;
    let cells = s.cells();
    for (what, g) in [("state", &s.x), ("adjoint", &s.p)] {
        if g.rows() != cells + 1 || g.dim() != ocp.n() {
            return Err(AffineError::Dimension {
                what,
                expected: (cells + 1) * ocp.n(),
                got: g.rows() * g.dim(),
            });
        }
    }
    let mut values = GridFn::zeros(cells + 1, ocp.m());
    for j in 0..=cells {
        let pj = s.p.row((j + 1).min(cells));
        values
            .row_mut(j)
            .copy_from_slice(&sigma_at(ocp, j as f64 * s.h, s.x.row(j), pj));
    }
    Ok(SwitchingFunction::from_values(s.h, values))
}

/// Cellwise pointwise minimizers of `⟨σ_j − ρ_j, ·⟩` with the tie rule
/// chaining along the cells.
fn bang_control(set: &ControlSet, sigma: &SwitchingFunction, rho: Option<&GridFn>) -> GridFn {
    let cells = sigma.cells();
    let m = sigma.values.dim();
    let mut u = GridFn::zeros(cells, m);
    for j in 0..cells {
        let s: Vec<f64> = (0..m)
            .map(|i| sigma.values.get(j, i) - rho.map_or(0.0, |r| r.get(j, i)))
            .collect();
        let prev = if j > 0 { Some(u.row(j - 1).to_vec()) } else { None };
        let v = set.minimizer(&s, prev.as_deref());
        u.row_mut(j).copy_from_slice(&v);
    }
    u
}

#[derive(Debug, Clone, PartialEq)]
pub struct AffineResidual {
    pub xi: GridFn,
    pub pi: GridFn,
    /// Cellwise distance of `ρ_j − σ_j` to `N_U(u_j)`.
    pub rho: GridFn,
    pub strong: f64,
    pub weak: f64,
}

/// Residual of the disturbed system at `s` (zero disturbance if `None`).
pub fn affine_residual(
    ocp: &dyn AffineOcp,
    s: &DiscreteQuadruple,
    d: Option<&AffineDisturbance>,
) -> Result<AffineResidual, AffineError> {
    let sigma = switching_function(ocp, s)?;
    let set = ocp.control_set();
    let (n, m, cells, h) = (ocp.n(), ocp.m(), s.cells(), s.h);
    let mut xi = GridFn::zeros(cells, n);
    let mut pi = GridFn::zeros(cells, n);
    let mut rho = GridFn::zeros(cells, 1);
    for j in 0..cells {
        let t = j as f64 * h;
        let xj = s.x.row(j);
        let f = DVector::from_vec(ocp.a(t, xj)) + ocp.b(t, xj) * DVector::from_column_slice(s.u.row(j));
        let hx = h_x(ocp, t, xj, s.u.row(j), s.p.row(j + 1));
        for i in 0..n {
            let dx = d.map_or(0.0, |d| d.xi.get(j, i));
            let dp = d.map_or(0.0, |d| d.pi.get(j, i));
            xi.set(j, i, -(s.x.get(j + 1, i) - xj[i]) / h + f[i] - dx);
            pi.set(j, i, (s.p.get(j + 1, i) - s.p.get(j, i)) / h + hx[i] - dp);
        }
        let v: Vec<f64> = (0..m)
            .map(|i| d.map_or(0.0, |d| d.rho.get(j, i)) - sigma.values.get(j, i))
            .collect();
        rho.set(j, 0, set.normal_distance(s.u.row(j), &v));
    }
    let terminal = s.p.row(cells).iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let initial = s
        .x
        .row(0)
        .iter()
        .zip(ocp.x0())
        .fold(0.0f64, |a, (v, w)| a.max((v - w).abs()));
    let strong = xi.norm(&MetricSpec::linf())
        + pi.norm(&MetricSpec::linf())
        + rho.norm(&MetricSpec::w1inf(h))
        + terminal
        + initial;
    let weak = xi.norm(&MetricSpec::l1(h))
        + pi.norm(&MetricSpec::l1(h))
        + rho.norm(&MetricSpec::linf())
        + terminal
        + initial;
    Ok(AffineResidual {
        xi,
        pi,
        rho,
        strong,
        weak,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct AffineSolve {
    /// Accepted quadruple when converged, lowest-residual one otherwise.
    pub solution: DiscreteQuadruple,
    pub sigma: SwitchingFunction,
    pub converged: bool,
    pub sweeps: usize,
    /// Strong residual of `solution`.
    pub residual: f64,
    /// Whether `|x|, |ẋ|, |p|, |ṗ|` stayed below the problem's bound.
    pub within_bound: bool,
}

fn within_bound(ocp: &dyn AffineOcp, s: &DiscreteQuadruple) -> bool {
    let bound = ocp.state_bound();
    let rate = |g: &GridFn| {
        (0..s.cells())
            .flat_map(|j| (0..g.dim()).map(move |i| (j, i)))
            .fold(0.0f64, |a, (j, i)| a.max(((g.get(j + 1, i) - g.get(j, i)) / s.h).abs()))
    };
    s.x.max_abs() <= bound && s.p.max_abs() <= bound && rate(&s.x) <= bound && rate(&s.p) <= bound
}

/// Averaged fixed-point sweeps: state forward, adjoint backward, pointwise
/// minimization. Each candidate bang control is accepted as soon as its own
/// residual is at most `tol`; otherwise the iterate moves a fraction `θ`
/// towards it. `θ` starts at 1 and is halved whenever a candidate repeats
/// the one from two sweeps before (cycling), at most ten times.
pub fn solve_perturbed_affine(
    ocp: &dyn AffineOcp,
    d: &AffineDisturbance,
    start_u: &GridFn,
    tol: f64,
    max_sweeps: usize,
) -> Result<AffineSolve, AffineError> {
    check_control(ocp, start_u)?;
    let set = ocp.control_set();
    set.validate()?;
    if let Some(cell) = (0..start_u.rows()).find(|&j| !set.contains(start_u.row(j))) {
        return Err(AffineError::Inadmissible { cell });
    }
    let mut u = start_u.clone();
    let mut theta = 1.0;
    let mut halvings = 0;
    let mut recent: Vec<GridFn> = Vec::new();
    let mut sweeps = 0;

    // The start itself may already solve the system.
    let s0 = trajectory(ocp, &u, Some(d))?;
    let r0 = affine_residual(ocp, &s0, Some(d))?.strong;
    if r0 <= tol {
        return finish(ocp, s0, r0, true, 0);
    }
    let mut best = (r0, s0.clone());
    let mut current = s0;

    while sweeps < max_sweeps {
        sweeps += 1;
        let sigma = switching_function(ocp, &current)?;
        let cand = bang_control(&set, &sigma, Some(&d.rho));
        let sc = trajectory(ocp, &cand, Some(d))?;
        let rc = affine_residual(ocp, &sc, Some(d))?.strong;
        if rc <= tol {
            return finish(ocp, sc, rc, true, sweeps);
        }
        if rc < best.0 {
            best = (rc, sc.clone());
        }
        if recent.len() >= 2 && recent[recent.len() - 2] == cand && recent[recent.len() - 1] != cand {
            halvings += 1;
            if halvings > 10 {
                break;
            }
            theta *= 0.5;
        }
        recent.push(cand.clone());
        if recent.len() > 2 {
            recent.remove(0);
        }
        u = GridFn::from_fn(u.rows(), u.dim(), |j, i| {
            u.get(j, i) + theta * (cand.get(j, i) - u.get(j, i))
        });
        current = trajectory(ocp, &u, Some(d))?;
    }
    finish(ocp, best.1, best.0, false, sweeps)
}

fn finish(
    ocp: &dyn AffineOcp,
    s: DiscreteQuadruple,
    residual: f64,
    converged: bool,
    sweeps: usize,
) -> Result<AffineSolve, AffineError> {
    Ok(AffineSolve {
        sigma: switching_function(ocp, &s)?,
        within_bound: within_bound(ocp, &s),
        solution: s,
        converged,
        sweeps,
        residual,
    })
}

pub fn solve_affine_pmp(
    ocp: &dyn AffineOcp,
    start_u: &GridFn,
    tol: f64,
    max_sweeps: usize,
) -> Result<AffineSolve, AffineError> {
    solve_perturbed_affine(ocp, &AffineDisturbance::zero(ocp, start_u.rows()), start_u, tol, max_sweeps)
}

/// Solve from the lower corner of `U` (box) or the first vertex.
pub fn solve_from_default_start(
    ocp: &dyn AffineOcp,
    cells: usize,
    tol: f64,
) -> Result<AffineSolve, AffineError> {
    let v0 = ocp.control_set().vertices()[0].clone();
    solve_affine_pmp(ocp, &GridFn::constant(cells, &v0), tol, 200)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AbCheck {
    pub holds: bool,
    /// Smallest local slope at a zero of `⟨σ, e⟩`; `+inf` without zeros.
    pub kappa_est: f64,
    /// Located zeros (times) over all edge directions.
    pub zeros: Vec<f64>,
}

/// Switching-function growth check. For each edge direction `e` the zeros
/// of `g = ⟨σ, e⟩` are located (sign changes, interpolated, and exact
/// zeros), the slope of `g` is fitted by least squares over
/// `[s − τ, s + τ]`, and `kappa_est` is the smallest slope magnitude. The
/// check fails if a slope is below `threshold`, or if `|g| < threshold·τ` on
/// a stretch longer than `2h` more than `τ` away from every located zero.
pub fn check_assumption_ab(
    sigma: &SwitchingFunction,
    set: &ControlSet,
    tau: f64,
    threshold: f64,
) -> Result<AbCheck, AffineError> {
    if !(tau > 0.0) || !(threshold > 0.0) {
        return Err(AffineError::InvalidOption(
            "tau and threshold must be positive".into(),
        ));
    }
    let h = sigma.h;
    if !(h < tau / 10.0) {
        return Err(AffineError::Precondition(format!(
            "grid step {h} is not below tau/10 = {}",
            tau / 10.0
        )));
    }
    if sigma.values.dim() != set.dim() {
        return Err(AffineError::Dimension {
            what: "switching function",
            expected: set.dim(),
            got: sigma.values.dim(),
        });
    }
    let nodes = sigma.values.rows();
    let times: Vec<f64> = (0..nodes).map(|j| j as f64 * h).collect();
    let mut kappa = f64::INFINITY;
    let mut flat = false;
    let mut all_zeros = Vec::new();
    for e in set.edge_directions() {
        let g: Vec<f64> = (0..nodes)
            .map(|j| sigma.values.row(j).iter().zip(&e).map(|(a, b)| a * b).sum())
            .collect();
        let mut zeros = Vec::new();
        for j in 0..nodes {
            let zero_here = g[j].abs() <= TIE_TOL;
            if zero_here {
                if j == 0 || g[j - 1].abs() > TIE_TOL {
                    zeros.push(times[j]);
                }
            } else if j + 1 < nodes && g[j + 1].abs() > TIE_TOL && g[j] * g[j + 1] < 0.0 {
                zeros.push(times[j] + h * g[j] / (g[j] - g[j + 1]));
            }
        }
        for &s in &zeros {
            let (ts, gs): (Vec<f64>, Vec<f64>) = times
                .iter()
                .zip(&g)
                .filter(|(t, _)| (*t - s).abs() <= tau)
                .map(|(t, v)| (*t, *v))
                .unzip();
            let slope = if ts.len() >= 2 {
                linear_fit(&ts, &gs).map_or(0.0, |(b, _, _)| b.abs())
            } else {
                0.0
            };
            kappa = kappa.min(slope);
        }
        let mut run_start: Option<f64> = None;
        for j in 0..nodes {
            let small = g[j].abs() < threshold * tau && zeros.iter().all(|s| (times[j] - s).abs() > tau);
            match (small, run_start) {
                (true, None) => run_start = Some(times[j]),
                (false, Some(t0)) => {
                    flat |= times[j - 1] - t0 > 2.0 * h;
                    run_start = None;
                }
                _ => {}
            }
        }
        if let Some(t0) = run_start {
            flat |= times[nodes - 1] - t0 > 2.0 * h;
        }
        all_zeros.extend(zeros);
    }
    all_zeros.sort_by(f64::total_cmp);
    Ok(AbCheck {
        holds: kappa >= threshold && !flat,
        kappa_est: kappa,
        zeros: all_zeros,
    })
}

/// `Γ(v) = ∫ ⟨Ĥ_xx z, z⟩ + 2⟨Ĥ_ux z, v⟩ dt` with `ż = Âz + B̂v`, `z(0) = 0`,
/// by the same Euler scheme and left-rectangle quadrature.
pub fn gamma_functional(ocp: &dyn AffineOcp, s: &DiscreteQuadruple, v: &GridFn) -> f64 {
    let n = ocp.n();
    let mut z = DVector::zeros(n);
    let mut total = 0.0;
    for j in 0..s.cells() {
        let t = j as f64 * s.h;
        let (xj, uj, pj) = (s.x.row(j), s.u.row(j), s.p.row(j + 1));
        let vj = DVector::from_column_slice(v.row(j));
        let hxx = ocp.h_xx(t, xj, uj, pj);
        let hux = ocp.h_ux(t, xj, pj);
        total += s.h * (z.dot(&(&hxx * &z)) + 2.0 * vj.dot(&(&hux * &z)));
        let a = ocp.a_x(t, xj) + ocp.bu_x(t, xj, uj);
        z = &z + (&a * &z + ocp.b(t, xj) * &vj) * s.h;
    }
    total
}

/// Whether `Ĥ_ux B̂` is symmetric along the reference (to `1e-10`).
pub fn symmetric_hypothesis(ocp: &dyn AffineOcp, s: &DiscreteQuadruple) -> bool {
    (0..s.cells()).all(|j| {
        let t = j as f64 * s.h;
        let m = ocp.h_ux(t, s.x.row(j), s.p.row(j + 1)) * ocp.b(t, s.x.row(j));
        (&m - m.transpose()).amax() <= 1e-10 * (1.0 + m.amax())
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GrowthVariant {
    /// `∫⟨σ, u − u'⟩ + Γ(u − u')`, `σ` in the `W^{1,∞}` ball around `σ̂` and
    /// `u'` minimizing `⟨σ, ·⟩`.
    AA2,
    /// `∫|⟨σ, v⟩| + Γ(v)`, `σ` in the ball, `v ∈ U − U`.
    AA2Prime,
    /// `∫⟨σ̂, u − û⟩ + Γ(u − û)`.
    AA2p,
    /// `∫|⟨σ, v⟩|` alone, `σ` in the ball.
    PB,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GrowthOptions {
    pub c0: f64,
    pub alpha0: f64,
    pub gamma0: f64,
    pub seed: u64,
    pub n_samples: usize,
    /// Exponent of `‖v‖₁` on the right-hand side, in `(1, 2]`.
    pub kappa_exp: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GrowthCheckResult {
    pub holds: bool,
    pub c0_empirical: f64,
    /// The sampled control attaining `c0_empirical`.
    pub worst_control: GridFn,
    /// Number of evaluated (nonzero) variations.
    pub n_samples: usize,
}

/// Variation of `base` on a random window: each cell is moved to another
/// vertex of `U`. With probability ½ the window straddles a switching cell
/// of `base` (the extremal case for bang-bang growth); the window length
/// is at least [`MIN_NEEDLE_CELLS`] cells when the budget `alpha0` allows.
fn needle_variation(
    base: &GridFn,
    vertices: &[Vec<f64>],
    switches: &[usize],
    h: f64,
    alpha0: f64,
    rng: &mut SampleRng,
) -> Option<GridFn> {
    let cells = base.rows();
    let diam = vertices
        .iter()
        .flat_map(|a| vertices.iter().map(move |b| crate::linalg::norm2(&sub(a, b))))
        .fold(0.0f64, f64::max);
    if diam == 0.0 || vertices.len() < 2 {
        return None;
    }
    let max_len = ((alpha0 / (h * diam)).floor() as usize).min(cells);
    if max_len == 0 {
        return None;
    }
    let min_len = MIN_NEEDLE_CELLS.min(max_len);
    let len = min_len + rng.index(max_len - min_len + 1);
    let start = if !switches.is_empty() && rng.uniform() < 0.5 {
        let s = switches[rng.index(switches.len())];
        let back = rng.index(len + 1);
        s.saturating_sub(back).min(cells - len)
    } else {
        rng.index(cells - len + 1)
    };
    let shift = 1 + rng.index(vertices.len() - 1);
    let mut u = base.clone();
    for j in start..start + len {
        let here = nearest_vertex(vertices, base.row(j));
        u.row_mut(j).copy_from_slice(&vertices[(here + shift) % vertices.len()]);
    }
    Some(u)
}

fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

fn nearest_vertex(vertices: &[Vec<f64>], u: &[f64]) -> usize {
    (0..vertices.len())
        .min_by(|&a, &b| {
            crate::linalg::norm2(&sub(&vertices[a], u)).total_cmp(&crate::linalg::norm2(&sub(&vertices[b], u)))
        })
        .unwrap_or(0)
}

fn switch_cells(u: &GridFn) -> Vec<usize> {
    (1..u.rows()).filter(|&j| u.row(j) != u.row(j - 1)).collect()
}

/// `∫⟨σ, v⟩` (or `∫|⟨σ, v⟩|`) with `σ` linear on each cell.
fn sigma_integral(sigma: &GridFn, v: &GridFn, h: f64, absolute: bool) -> f64 {
    (0..v.rows())
        .map(|j| {
            let ip: f64 = (0..v.dim())
                .map(|i| 0.5 * (sigma.get(j, i) + sigma.get(j + 1, i)) * v.get(j, i))
                .sum();
            h * if absolute { ip.abs() } else { ip }
        })
        .sum()
}

/// `σ̂` plus a seeded affine-in-time perturbation of `W^{1,∞}` size at most
/// `gamma0`.
fn perturbed_sigma(sigma: &SwitchingFunction, horizon: f64, gamma0: f64, rng: &mut SampleRng) -> GridFn {
    let m = sigma.values.dim();
    let c0 = rng.symmetric_vec(m);
    let c1 = rng.symmetric_vec(m);
    let pert = GridFn::from_fn(sigma.values.rows(), m, |j, i| {
        c0[i] + c1[i] * (j as f64 * sigma.h / horizon - 0.5)
    });
    let size = pert.norm(&MetricSpec::w1inf(sigma.h));
    let r = gamma0 * rng.uniform() / size.max(f64::MIN_POSITIVE);
    GridFn::from_fn(sigma.values.rows(), m, |j, i| sigma.values.get(j, i) + r * pert.get(j, i))
}

/// Sampled growth check. `c0_empirical` is the smallest ratio of the left
/// side to `‖v‖₁^kappa_exp` over the samples; the check holds when it is at
/// least `c0`.
pub fn check_growth(
    ocp: &dyn AffineOcp,
    s: &DiscreteQuadruple,
    variant: GrowthVariant,
    opts: &GrowthOptions,
) -> Result<GrowthCheckResult, AffineError> {
    if !(opts.kappa_exp > 1.0 && opts.kappa_exp <= 2.0) {
        return Err(AffineError::InvalidOption(format!(
            "growth exponent {} outside (1, 2]",
            opts.kappa_exp
        )));
    }
    if opts.kappa_exp < 2.0 && !ocp.linear_quadratic() {
        return Err(AffineError::InvalidOption(
            "growth exponents below 2 require a linear-quadratic problem".into(),
        ));
    }
    let set = ocp.control_set();
    let vertices = set.vertices();
    let sigma_hat = switching_function(ocp, s)?;
    let h = s.h;
    let uhat = &s.u;
    let switches = switch_cells(uhat);
    let l1 = MetricSpec::l1(h);
    let evaluated = run_samples(opts.n_samples, |idx| {
        let mut rng = SampleRng::new(opts.seed, idx as u64);
        let (sigma, base, absolute, with_gamma) = match variant {
            GrowthVariant::AA2p => (sigma_hat.values.clone(), uhat.clone(), false, true),
            GrowthVariant::AA2 => {
                let sig = perturbed_sigma(&sigma_hat, ocp.horizon(), opts.gamma0, &mut rng);
                let sf = SwitchingFunction::from_values(h, sig.clone());
                let base = bang_control(&set, &sf, None);
                if base.sub(uhat).norm(&l1) > opts.alpha0 {
                    return None;
                }
                (sig, base, false, true)
            }
            GrowthVariant::AA2Prime | GrowthVariant::PB => (
                perturbed_sigma(&sigma_hat, ocp.horizon(), opts.gamma0, &mut rng),
                uhat.clone(),
                true,
                variant == GrowthVariant::AA2Prime,
            ),
        };
        let u = needle_variation(&base, &vertices, &switches, h, opts.alpha0, &mut rng)?;
        let v = u.sub(&base);
        let size = v.norm(&l1);
        if size == 0.0 || size > opts.alpha0 * (1.0 + 1e-12) {
            return None;
        }
        if variant == GrowthVariant::AA2 && u.sub(uhat).norm(&l1) > opts.alpha0 {
            return None;
        }
        let mut left = sigma_integral(&sigma, &v, h, absolute);
        if with_gamma {
            left += gamma_functional(ocp, s, &v);
        }
        Some((left / size.powf(opts.kappa_exp), u))
    });
    let mut count = 0;
    let mut worst: Option<(f64, GridFn)> = None;
    for (ratio, u) in evaluated.into_iter().flatten() {
        count += 1;
        if worst.as_ref().is_none_or(|(r, _)| ratio < *r) {
            worst = Some((ratio, u));
        }
    }
    let Some((c0_empirical, worst_control)) = worst else {
        return Err(AffineError::Sampling(format!(
            "no admissible variation with ||v||_1 <= {}",
            opts.alpha0
        )));
    };
    Ok(GrowthCheckResult {
        holds: c0_empirical >= opts.c0,
        c0_empirical,
        worst_control,
        n_samples: count,
    })
}

/// Which disturbance blocks a sweep draws.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AffineBlocks {
    pub xi: bool,
    pub pi: bool,
    pub rho: bool,
}

impl AffineBlocks {
    pub const ALL: Self = Self {
        xi: true,
        pi: true,
        rho: true,
    };
    pub const RHO: Self = Self {
        xi: false,
        pi: false,
        rho: true,
    };
}

/// Seeded disturbance with constant `ξ, π` and affine-in-time `ρ`, scaled
/// to strong norm `magnitude`.
pub fn draw_affine_disturbance(
    ocp: &dyn AffineOcp,
    cells: usize,
    blocks: AffineBlocks,
    seed: u64,
    sample: u64,
    magnitude: f64,
) -> AffineDisturbance {
    let mut rng = SampleRng::new(seed, sample);
    let (n, m) = (ocp.n(), ocp.m());
    let h = ocp.horizon() / cells as f64;
    let mut d = AffineDisturbance::zero(ocp, cells);
    let cx = rng.symmetric_vec(n);
    let cp = rng.symmetric_vec(n);
    let r0 = rng.symmetric_vec(m);
    let r1 = rng.symmetric_vec(m);
    if blocks.xi {
        d.xi = GridFn::constant(cells, &cx);
    }
    if blocks.pi {
        d.pi = GridFn::constant(cells, &cp);
    }
    if blocks.rho {
        d.rho = GridFn::from_fn(cells + 1, m, |j, i| r0[i] + r1[i] * (j as f64 * h / ocp.horizon() - 0.5));
    }
    let size = d.strong_norm(h);
    if size > 0.0 {
        d.scaled(magnitude / size)
    } else {
        d
    }
}

/// `‖Δx‖_{1,1} + ‖Δp‖_{1,1} + ‖Δu‖₁`.
pub fn affine_domain_distance(a: &DiscreteQuadruple, b: &DiscreteQuadruple) -> f64 {
    let h = a.h;
    a.x.sub(&b.x).norm(&MetricSpec::w11(h))
        + a.p.sub(&b.p).norm(&MetricSpec::w11(h))
        + a.u.sub(&b.u).norm(&MetricSpec::l1(h))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RegularityMode {
    /// Perturbed solutions against the reference.
    Smsr,
    /// Pairs of perturbed solutions against each other.
    Smr,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AffineSweepOptions {
    pub directions: usize,
    pub blocks: AffineBlocks,
    pub tol: f64,
    pub max_sweeps: usize,
}

impl Default for AffineSweepOptions {
    fn default() -> Self {
        Self {
            directions: 20,
            blocks: AffineBlocks::ALL,
            tol: 1e-10,
            max_sweeps: 200,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AffineExperiment {
    pub records: Vec<PerturbationRecord>,
    /// Whether `Ĥ_ux B̂` is symmetric; the strong-regularity statement
    /// assumes it, the experiment runs either way.
    pub symmetric_hypothesis: bool,
}

/// Records of the SMsR (`mode = Smsr`) or SMR (`mode = Smr`) experiment.
/// Image distances are the weak (`‖ξ‖₁ + ‖π‖₁ + ‖ρ‖_∞`) and strong norms of
/// the disturbance, or of the difference of the paired disturbances.
pub fn regularity_experiment(
    ocp: &dyn AffineOcp,
    s: &DiscreteQuadruple,
    mode: RegularityMode,
    seed: u64,
    magnitudes: &[f64],
    opts: &AffineSweepOptions,
) -> Result<AffineExperiment, AffineError> {
    let reference = affine_residual(ocp, s, None)?;
    if !(reference.strong <= opts.tol.max(1e-10)) {
        return Err(AffineError::Precondition(format!(
            "reference residual {:e} exceeds the tolerance",
            reference.strong
        )));
    }
    let cells = s.cells();
    let h = s.h;
    let dirs = opts.directions;
    let solve = |d: &AffineDisturbance| {
        solve_perturbed_affine(ocp, d, &s.u, opts.tol, opts.max_sweeps)
            .ok()
            .filter(|r| r.converged)
            .map(|r| r.solution)
    };
    let records = run_samples(magnitudes.len() * dirs, |idx| {
        let magnitude = magnitudes[idx / dirs];
        let (image, other) = match mode {
            RegularityMode::Smsr => {
                let d = draw_affine_disturbance(ocp, cells, opts.blocks, seed, (idx % dirs) as u64, magnitude);
                (d.clone(), solve(&d).map(|sol| (sol, s.clone())))
            }
            RegularityMode::Smr => {
                let a = draw_affine_disturbance(ocp, cells, opts.blocks, seed, (idx % dirs) as u64, magnitude);
                let b = draw_affine_disturbance(ocp, cells, opts.blocks, seed, (dirs + idx % dirs) as u64, magnitude);
                (a.sub(&b), solve(&a).zip(solve(&b)))
            }
        };
        let (dist, ok) = match other {
            Some((x, y)) => (affine_domain_distance(&x, &y), true),
            None => (f64::NAN, false),
        };
        PerturbationRecord {
            sample_index: idx as u64,
            magnitude,
            weak_image_dist: image.weak_norm(h),
            weak_domain_dist: dist,
            strong_image_dist: image.strong_norm(h),
            solver_converged: ok,
        }
    });
    Ok(AffineExperiment {
        records,
        symmetric_hypothesis: symmetric_hypothesis(ocp, s),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceRow {
    pub h: f64,
    pub err_u_l1: f64,
    pub err_x_linf: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EulerStudy {
    pub rows: Vec<ConvergenceRow>,
    /// Log-log slopes of the control and state errors against `h`.
    pub slope_u: f64,
    pub slope_x: f64,
}

impl EulerStudy {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("h,err_u_L1,err_x_Linf\n");
        for r in &self.rows {
            let _ = writeln!(out, "{:.16e},{:.16e},{:.16e}", r.h, r.err_u_l1, r.err_x_linf);
        }
        out
    }
}

/// Error table against a reference on `reference_cells` cells, which must
/// be a multiple of every grid count and at least 8 times the finest.
/// `solve(N)` returns the control (N rows) and state (N + 1 rows).
pub fn convergence_table(
    grid_counts: &[usize],
    reference_cells: usize,
    horizon: f64,
    solve: impl Fn(usize) -> Result<(GridFn, GridFn), AffineError> + Sync,
) -> Result<EulerStudy, AffineError> {
    let finest = grid_counts.iter().copied().max().unwrap_or(0);
    if grid_counts.len() < 2 {
        return Err(AffineError::Precondition("need at least two grids".into()));
    }
    if reference_cells < 8 * finest {
        return Err(AffineError::Precondition(format!(
            "reference grid {reference_cells} is not at least 8x the finest grid {finest}"
        )));
    }
    if let Some(&n) = grid_counts.iter().find(|&&n| n == 0 || reference_cells % n != 0) {
        return Err(AffineError::Precondition(format!(
            "reference grid {reference_cells} is not a multiple of {n}"
        )));
    }
    let (u_ref, x_ref) = solve(reference_cells).map_err(|e| AffineError::Reference(e.to_string()))?;
    let h_ref = horizon / reference_cells as f64;
    let rows = run_samples(grid_counts.len(), |k| -> Result<ConvergenceRow, AffineError> {
        let n = grid_counts[k];
        let (u, x) = solve(n)?;
        let ratio = reference_cells / n;
        let err_u = h_ref
            * (0..reference_cells)
                .map(|jr| crate::linalg::norm2(&sub(u.row(jr / ratio), u_ref.row(jr))))
                .sum::<f64>();
        let err_x = (0..=n)
            .map(|j| crate::linalg::norm2(&sub(x.row(j), x_ref.row(j * ratio))))
            .fold(0.0, f64::max);
        Ok(ConvergenceRow {
            h: horizon / n as f64,
            err_u_l1: err_u,
            err_x_linf: err_x,
        })
    })
    .into_iter()
    .collect::<Result<Vec<_>, _>>()?;
    if rows.iter().any(|r| r.err_u_l1 == 0.0 && r.err_x_linf == 0.0) {
        return Err(AffineError::Precondition(
            "zero error row: the reference does not resolve the test grids".into(),
        ));
    }
    let logs = |f: fn(&ConvergenceRow) -> f64| -> Result<f64, AffineError> {
        let pts: Vec<(f64, f64)> = rows
            .iter()
            .filter(|r| f(r) > 0.0)
            .map(|r| (r.h.ln(), f(r).ln()))
            .collect();
        if pts.len() < 2 {
            return Ok(f64::NAN);
        }
        let (xs, ys): (Vec<f64>, Vec<f64>) = pts.into_iter().unzip();
        Ok(linear_fit(&xs, &ys)?.0)
    };
    Ok(EulerStudy {
        slope_u: logs(|r| r.err_u_l1)?,
        slope_x: logs(|r| r.err_x_linf)?,
        rows,
    })
}

/// Euler error study for an affine problem; every grid is solved from the
/// default start.
pub fn euler_error_study(
    ocp: &dyn AffineOcp,
    grid_counts: &[usize],
    reference_cells: usize,
    tol: f64,
) -> Result<EulerStudy, AffineError> {
    convergence_table(grid_counts, reference_cells, ocp.horizon(), |n| {
        let r = solve_from_default_start(ocp, n, tol)?;
        if !r.converged {
            return Err(AffineError::Precondition(format!("solve on {n} cells did not converge")));
        }
        Ok((r.solution.u, r.solution.x))
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geneq::{fit_regularity, DEFAULT_MIN_DIST};
    use crate::mayer::{solve_pmp, MayerOcp};
    use crate::problems::{Integrator, LqMayer};
    use proptest::prelude::*;

    fn p3_solution(cells: usize) -> AffineSolve {
        solve_from_default_start(&Integrator::p3(), cells, 1e-10).unwrap()
    }

    #[test]
    fn switching_function_examples() {
        let s = p3_solution(100);
        assert!(s.solution.p.max_abs() == 0.0);
        for j in 0..=100 {
            assert!((s.sigma.values.get(j, 0) - (j as f64 / 100.0 - 0.5)).abs() < 1e-15);
        }
        let rev = Integrator::reversed();
        let sr = switching_function(&rev, &s.solution).unwrap();
        for j in 0..=100 {
            assert_eq!(sr.values.get(j, 0), -s.sigma.values.get(j, 0));
        }
        let zero = Integrator::zero_cost();
        assert_eq!(switching_function(&zero, &s.solution).unwrap().values.max_abs(), 0.0);
    }

    #[test]
    fn pointwise_minimizer_examples() {
        let box1 = ControlSet::interval(-1.0, 1.0);
        assert_eq!(box1.minimizer(&[0.3], None), vec![-1.0]);
        assert_eq!(box1.minimizer(&[0.0], Some(&[1.0])), vec![1.0]);
        assert_eq!(box1.minimizer(&[0.0], None), vec![-1.0]);
        let tri = ControlSet::polytope(
            vec![vec![0.0, 0.0], vec![1.0, 0.0], vec![0.0, 1.0]],
            vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, -1.0]],
        )
        .unwrap();
        assert_eq!(tri.minimizer(&[-1.0, -2.0], None), vec![0.0, 1.0]);
        assert_eq!(tri.minimizer(&[0.0, 0.0], None), vec![0.0, 0.0]);
    }

    proptest! {
        #[test]
        fn minimizer_is_a_minimizing_vertex(s0 in -2.0f64..2.0, s1 in -2.0f64..2.0, s2 in -2.0f64..2.0) {
            let sets = [
                ControlSet::Box { lo: vec![-1.0, 0.0, -2.0], hi: vec![1.0, 3.0, 0.5] },
                ControlSet::polytope(
                    vec![vec![0.0, 0.0, 0.0], vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0]],
                    vec![vec![1.0, 0.0, 0.0]],
                ).unwrap(),
            ];
            let sigma = [s0, s1, s2];
            for set in sets {
                let u = set.minimizer(&sigma, None);
                let verts = set.vertices();
                prop_assert!(verts.contains(&u));
                let val = |v: &[f64]| v.iter().zip(&sigma).map(|(a, b)| a * b).sum::<f64>();
                let best = verts.iter().map(|v| val(v)).fold(f64::INFINITY, f64::min);
                prop_assert!(val(&u) <= best + 1e-12);
            }
        }

        #[test]
        fn gamma_is_quadratic(alpha in -3.0f64..3.0, seed in 0u64..1000) {
            let ocp = Integrator::with_state_cost(1.0);
            let s = trajectory(&ocp, &GridFn::constant(50, &[1.0]), None).unwrap();
            let mut rng = SampleRng::new(seed, 0);
            let v = GridFn::from_fn(50, 1, |_, _| rng.uniform_in(-1.0, 1.0));
            let w = GridFn::from_fn(50, 1, |_, _| rng.uniform_in(-1.0, 1.0));
            let g = |v: &GridFn| gamma_functional(&ocp, &s, v);
            let gv = g(&v);
            prop_assert!((g(&v.scaled(alpha)) - alpha * alpha * gv).abs() <= 1e-10 * (1.0 + gv.abs()) * (1.0 + alpha * alpha));
            // Polarization: Γ(v+w) + Γ(v−w) = 2Γ(v) + 2Γ(w).
            let plus = GridFn::from_fn(50, 1, |j, i| v.get(j, i) + w.get(j, i));
            let minus = v.sub(&w);
            let lhs = g(&plus) + g(&minus);
            let rhs = 2.0 * gv + 2.0 * g(&w);
            prop_assert!((lhs - rhs).abs() <= 1e-10 * (1.0 + rhs.abs()));
        }
    }

    #[test]
    fn p3_solution_is_bang_bang_with_switch_near_half() {
        let r = p3_solution(1000);
        assert!(r.converged && r.residual <= 1e-10 && r.within_bound);
        let u = &r.solution.u;
        let sw = switch_cells(u);
        assert_eq!(sw.len(), 1);
        assert!((sw[0] as f64 * 1e-3 - 0.5).abs() <= 1.5e-3);
        assert!((0..sw[0]).all(|j| u.get(j, 0) == 1.0));
        assert!((sw[0]..1000).all(|j| u.get(j, 0) == -1.0));
        // Bang-bang wherever the switching function has a clear sign.
        for j in 0..1000 {
            if r.sigma.values.get(j, 0).abs() > 1e-8 {
                assert!(u.get(j, 0).abs() == 1.0);
            }
        }
        let again = solve_affine_pmp(&Integrator::p3(), u, 1e-10, 5).unwrap();
        assert!(again.converged && again.sweeps == 0);
    }

    /// `ẋ = 0`, cost `u₁ + u₂` on `[−1, 1]²`.
    struct ConstantCost;

    impl AffineOcp for ConstantCost {
        fn n(&self) -> usize {
            1
        }
        fn m(&self) -> usize {
            2
        }
        fn x0(&self) -> Vec<f64> {
            vec![0.0]
        }
        fn control_set(&self) -> ControlSet {
            ControlSet::Box {
                lo: vec![-1.0, -1.0],
                hi: vec![1.0, 1.0],
            }
        }
        fn state_bound(&self) -> f64 {
            10.0
        }
        fn a(&self, _t: f64, _x: &[f64]) -> Vec<f64> {
            vec![0.0]
        }
        fn a_x(&self, _t: f64, _x: &[f64]) -> DMatrix<f64> {
            DMatrix::zeros(1, 1)
        }
        fn b(&self, _t: f64, _x: &[f64]) -> DMatrix<f64> {
            DMatrix::zeros(1, 2)
        }
        fn w(&self, _t: f64, _x: &[f64]) -> f64 {
            0.0
        }
        fn w_x(&self, _t: f64, _x: &[f64]) -> Vec<f64> {
            vec![0.0]
        }
        fn d(&self, _t: f64, _x: &[f64]) -> Vec<f64> {
            vec![1.0, 1.0]
        }
        fn h_xx(&self, _t: f64, _x: &[f64], _u: &[f64], _p: &[f64]) -> DMatrix<f64> {
            DMatrix::zeros(1, 1)
        }
    }

    #[test]
    fn constant_switching_function_needs_one_sweep() {
        let r = solve_affine_pmp(&ConstantCost, &GridFn::constant(20, &[0.5, 0.0]), 1e-12, 10).unwrap();
        assert!(r.converged && r.sweeps == 1);
        assert!(r.solution.u.as_slice().iter().all(|&v| v == -1.0));
    }

    #[test]
    fn inadmissible_start_is_rejected() {
        let e = solve_affine_pmp(&Integrator::p3(), &GridFn::constant(10, &[2.0]), 1e-10, 5);
        assert_eq!(e.unwrap_err(), AffineError::Inadmissible { cell: 0 });
    }

    #[test]
    fn ab_check_examples() {
        let set = ControlSet::interval(-1.0, 1.0);
        let p3 = SwitchingFunction::from_fn(1000, 1.0, 1, |t| vec![t - 0.5]);
        let r = check_assumption_ab(&p3, &set, 0.2, 0.1).unwrap();
        assert!(r.holds && (r.kappa_est - 1.0).abs() <= 0.02);
        assert_eq!(r.zeros.len(), 1);
        assert!((r.zeros[0] - 0.5).abs() < 1e-12);

        let one = SwitchingFunction::from_fn(1000, 1.0, 1, |_| vec![1.0]);
        let r = check_assumption_ab(&one, &set, 0.2, 0.1).unwrap();
        assert!(r.holds && r.kappa_est == f64::INFINITY && r.zeros.is_empty());

        for cells in [1000, 1001] {
            let tangent = SwitchingFunction::from_fn(cells, 1.0, 1, |t| vec![(t - 0.5).powi(2)]);
            assert!(!check_assumption_ab(&tangent, &set, 0.2, 0.1).unwrap().holds);
        }
        let coarse = SwitchingFunction::from_fn(10, 1.0, 1, |t| vec![t - 0.5]);
        assert!(matches!(
            check_assumption_ab(&coarse, &set, 0.2, 0.1),
            Err(AffineError::Precondition(_))
        ));
    }

    #[test]
    fn gamma_examples() {
        let p3 = Integrator::p3();
        let s = p3_solution(200).solution;
        let v = GridFn::constant(200, &[1.0]);
        assert_eq!(gamma_functional(&p3, &s, &v), 0.0);
        let quad = Integrator::with_state_cost(1.0);
        let s = trajectory(&quad, &GridFn::constant(1000, &[0.0]), None).unwrap();
        assert_eq!(gamma_functional(&quad, &s, &GridFn::zeros(1000, 1)), 0.0);
        let g = gamma_functional(&quad, &s, &GridFn::constant(1000, &[1.0]));
        assert!((g - 1.0 / 3.0).abs() <= 2e-3, "{g}");
    }

    fn growth_opts(variant_seed: u64) -> GrowthOptions {
        GrowthOptions {
            c0: 0.1,
            alpha0: 0.5,
            gamma0: 0.05,
            seed: variant_seed,
            n_samples: 600,
            kappa_exp: 2.0,
        }
    }

    /// Brute force over every window of at least ten cells that contains
    /// the switch: the smallest ratio of `∫⟨σ̂, v⟩` to `‖v‖₁²` for flipped
    /// windows within the L¹ budget 0.5.
    fn brute_force_window_bound(s: &AffineSolve) -> f64 {
        let cells = s.solution.cells();
        let h = s.solution.h;
        let sig = &s.sigma.values;
        let uhat = &s.solution.u;
        let switch = switch_cells(uhat)[0];
        let mut best = f64::INFINITY;
        for a in switch.saturating_sub(250)..=switch {
            for len in MIN_NEEDLE_CELLS..=250 {
                if a + len > cells || a + len < switch || 2.0 * h * len as f64 > 0.5 {
                    continue;
                }
                // Running sums would be faster; the window is short enough.
                let mut left = 0.0;
                for j in a..a + len {
                    left += h * 0.5 * (sig.get(j, 0) + sig.get(j + 1, 0)) * (-2.0 * uhat.get(j, 0));
                }
                let size = 2.0 * h * len as f64;
                best = best.min(left / (size * size));
            }
        }
        best
    }

    #[test]
    fn growth_on_p3() {
        let p3 = Integrator::p3();
        let s = p3_solution(1000);
        let oracle = brute_force_window_bound(&s);
        assert!((0.115..=0.13).contains(&oracle), "{oracle}");
        let r = check_growth(&p3, &s.solution, GrowthVariant::AA2p, &growth_opts(5)).unwrap();
        assert!(r.holds && r.n_samples >= 500);
        assert!(r.c0_empirical >= 0.105 && r.c0_empirical >= oracle - 1e-12, "{}", r.c0_empirical);
        assert!((0..1000).all(|j| r.worst_control.get(j, 0).abs() == 1.0));
        for variant in [GrowthVariant::AA2, GrowthVariant::AA2Prime, GrowthVariant::PB] {
            let r = check_growth(&p3, &s.solution, variant, &growth_opts(6)).unwrap();
            assert!(r.c0_empirical > 0.05, "{variant:?}: {}", r.c0_empirical);
        }
    }

    #[test]
    fn growth_failures_and_errors() {
        let zero = Integrator::zero_cost();
        let s = solve_from_default_start(&zero, 200, 1e-10).unwrap();
        let r = check_growth(&zero, &s.solution, GrowthVariant::AA2p, &growth_opts(1)).unwrap();
        assert!(!r.holds && r.c0_empirical == 0.0);
        let p3 = Integrator::p3();
        let s = p3_solution(200);
        let opts = GrowthOptions {
            alpha0: 0.0,
            ..growth_opts(1)
        };
        assert!(matches!(
            check_growth(&p3, &s.solution, GrowthVariant::AA2p, &opts),
            Err(AffineError::Sampling(_))
        ));
        let opts = GrowthOptions {
            kappa_exp: 1.5,
            ..growth_opts(1)
        };
        let not_lq = Integrator {
            declared_lq: false,
            ..Integrator::p3()
        };
        assert!(check_growth(&not_lq, &s.solution, GrowthVariant::AA2p, &opts).is_err());
        assert!(check_growth(&p3, &s.solution, GrowthVariant::AA2p, &opts).is_ok());
    }

    #[test]
    fn constant_rho_moves_the_switch() {
        let p3 = Integrator::p3();
        let cells = 1000;
        let s = p3_solution(cells);
        // A one-cell shift only moves a tie, which the reference already
        // satisfies; from two cells on the response is exact.
        for k in [2usize, 10, 100] {
            let eps = k as f64 / cells as f64;
            let d = AffineDisturbance::constant_rho(&p3, cells, &[eps]);
            let r = solve_perturbed_affine(&p3, &d, &s.solution.u, 1e-10, 20).unwrap();
            assert!(r.converged);
            let du = r.solution.u.sub(&s.solution.u).norm(&MetricSpec::l1(s.solution.h));
            assert!((du - 2.0 * eps).abs() <= 1e-12, "{du} vs {}", 2.0 * eps);
        }
    }

    #[test]
    fn smr_pair_of_opposite_constant_shifts() {
        let p3 = Integrator::p3();
        let cells = 1000;
        let s = p3_solution(cells).solution;
        let eps = 0.05;
        let a = AffineDisturbance::constant_rho(&p3, cells, &[eps]);
        let b = AffineDisturbance::constant_rho(&p3, cells, &[-eps]);
        let ra = solve_perturbed_affine(&p3, &a, &s.u, 1e-10, 20).unwrap().solution;
        let rb = solve_perturbed_affine(&p3, &b, &s.u, 1e-10, 20).unwrap().solution;
        let h = s.h;
        let du = ra.u.sub(&rb.u).norm(&MetricSpec::l1(h));
        assert!((du - 4.0 * eps).abs() < 1e-12);
        let image = a.sub(&b).weak_norm(h);
        assert!((image - 2.0 * eps).abs() < 1e-12);
        assert!((du / image - 2.0).abs() < 1e-9);
        // The full distance adds ‖Δẋ‖₁ = 4ε and ‖Δx‖₁ = 2ε (a plateau of
        // height 4ε on the second half of the horizon).
        let full = affine_domain_distance(&ra, &rb);
        assert!((full - 10.0 * eps).abs() < 5.0 * h, "{full}");
    }

    #[test]
    fn smsr_and_smr_experiments_on_p3() {
        let p3 = Integrator::p3();
        // Fine grid: the switching time is resolved to h, so coarse grids
        // quantize the smallest responses.
        let s = p3_solution(20000).solution;
        let mags = [1e-3, 3e-3, 1e-2, 3e-2, 1e-1];
        let opts = AffineSweepOptions {
            directions: 8,
            ..AffineSweepOptions::default()
        };
        let e = regularity_experiment(&p3, &s, RegularityMode::Smsr, 9, &mags, &opts).unwrap();
        assert!(e.symmetric_hypothesis);
        assert!(e.records.iter().all(|r| r.solver_converged));
        let fit = fit_regularity(&e.records, DEFAULT_MIN_DIST).unwrap();
        assert!((0.9..=1.1).contains(&fit.beta), "{fit:?}");
        assert_eq!(e, regularity_experiment(&p3, &s, RegularityMode::Smsr, 9, &mags, &opts).unwrap());

        let zero = regularity_experiment(&p3, &s, RegularityMode::Smsr, 9, &[0.0], &opts).unwrap();
        assert!(zero.records.iter().all(|r| r.weak_domain_dist == 0.0 && r.weak_image_dist == 0.0));

        let smr = regularity_experiment(&p3, &s, RegularityMode::Smr, 9, &mags, &opts).unwrap();
        assert!(smr.records.iter().all(|r| r.solver_converged));
    }

    #[test]
    fn euler_study_on_p3() {
        let p3 = Integrator::p3();
        let grids = [16, 32, 64, 128, 256, 512, 1024];
        let study = euler_error_study(&p3, &grids, 8192, 1e-10).unwrap();
        assert!((0.8..=1.2).contains(&study.slope_u), "{study:?}");
        assert_eq!(study.rows.len(), 7);
        assert!(study.to_csv().starts_with("h,err_u_L1,err_x_Linf\n"));
        assert!(matches!(
            euler_error_study(&p3, &[16, 32], 32, 1e-10),
            Err(AffineError::Precondition(_))
        ));
        assert!(matches!(
            euler_error_study(&p3, &[16, 32], 256, 1e-10).map(|_| ()),
            Ok(())
        ));
    }

    #[test]
    fn zero_error_rows_are_rejected() {
        let exact = |n: usize| Ok((GridFn::zeros(n, 1), GridFn::zeros(n + 1, 1)));
        assert!(matches!(
            convergence_table(&[4, 8], 64, 1.0, exact),
            Err(AffineError::Precondition(_))
        ));
    }

    #[test]
    fn euler_state_error_is_first_order_on_a_smooth_problem() {
        let ocp = LqMayer;
        let solve = |n: usize| {
            let start = ocp.reference_guess(n);
            let r = solve_pmp(&ocp, &start, 1e-11).map_err(|e| AffineError::Reference(e.to_string()))?;
            Ok((r.solution.u, r.solution.x))
        };
        let study = convergence_table(&[8, 16, 32, 64], 512, 1.0, solve).unwrap();
        assert!((0.85..=1.15).contains(&study.slope_x), "{study:?}");
        assert!(ocp.n() == 2);
    }
}
