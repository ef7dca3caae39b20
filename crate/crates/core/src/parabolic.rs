//! Semilinear parabolic control in one space dimension:
//!
//! ```text
//!   min ∫_Q L₀(x, t, y) + g(x, t) u,   y_t − (a(x) y_x)_x + f(x, t, y) = u,
//!   y = 0 on x ∈ {0, 1},   y(·, 0) = y₀,   u_a <= u <= u_b,
//! ```
//!
//! on `Q = (0, 1) × (0, T)`. Space: `Nx` interior nodes, centered
//! differences with `a` sampled at the half nodes (midpoint quadrature).
//! Time: implicit Euler with `Nt` steps; the control, the disturbances and
//! the gradient field live on the time cells, so cell `k` drives the step
//! `t_k → t_{k+1}`. The adjoint is the exact discrete adjoint of that
//! scheme, so the discrete gradient of `J` is `ht·hx·(g + p)` cellwise.

use std::fmt::Write as _;

use thiserror::Error;

use crate::affine::{GrowthCheckResult, MIN_NEEDLE_CELLS, TIE_TOL};
use crate::geneq::{run_samples, PerturbationRecord};
use crate::grid::GridFn;
use crate::rng::SampleRng;

/// Inner Newton iterations per time step stop at this relative residual.
pub const NEWTON_TOL: f64 = 1e-12;
const NEWTON_MAX_ITER: usize = 50;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ParabolicError {
    #[error("Newton iteration diverged at time step {step}")]
    Newton { step: usize },
    #[error("singular tridiagonal system at time step {step}")]
    Singular { step: usize },
    #[error("mesh mismatch in {what}: expected {expected}, got {got}")]
    Mesh {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("invalid problem data: {0}")]
    InvalidProblem(String),
    #[error("invalid option: {0}")]
    InvalidOption(String),
    #[error("sampling failed: {0}")]
    Sampling(String),
    #[error("reference control is not a solution (control update {change:e})")]
    NotSolution { change: f64 },
}

pub trait ParabolicOcp: Sync {
    fn horizon(&self) -> f64 {
        1.0
    }
    /// Diffusion coefficient `a(x) >= λ_A > 0`.
    fn diffusion(&self, x: f64) -> f64;
    fn f(&self, x: f64, t: f64, y: f64) -> f64;
    fn f_y(&self, x: f64, t: f64, y: f64) -> f64;
    fn f_yy(&self, x: f64, t: f64, y: f64) -> f64;
    fn l0(&self, x: f64, t: f64, y: f64) -> f64;
    fn l0_y(&self, x: f64, t: f64, y: f64) -> f64;
    fn l0_yy(&self, x: f64, t: f64, y: f64) -> f64;
    fn g(&self, x: f64, t: f64) -> f64;
    fn u_a(&self, x: f64, t: f64) -> f64;
    fn u_b(&self, x: f64, t: f64) -> f64;
    fn y0(&self, x: f64) -> f64;
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mesh {
    /// Interior space nodes.
    pub nx: usize,
    pub nt: usize,
    pub horizon: f64,
}

impl Mesh {
    pub fn new(nx: usize, nt: usize, horizon: f64) -> Result<Self, ParabolicError> {
        if nx == 0 || nt == 0 || !(horizon > 0.0) {
            return Err(ParabolicError::InvalidOption(format!(
                "mesh needs nx, nt >= 1 and a positive horizon (got {nx}, {nt}, {horizon})"
            )));
        }
        Ok(Self { nx, nt, horizon })
    }

    pub fn hx(&self) -> f64 {
        1.0 / (self.nx + 1) as f64
    }

    pub fn ht(&self) -> f64 {
        self.horizon / self.nt as f64
    }

    pub fn x(&self, i: usize) -> f64 {
        (i + 1) as f64 * self.hx()
    }

    pub fn t(&self, k: usize) -> f64 {
        k as f64 * self.ht()
    }

    /// Time-node field (`Nt + 1` rows).
    pub fn nodal(&self) -> Field2D {
        Field2D::zeros(*self, true)
    }

    /// Time-cell field (`Nt` rows).
    pub fn cellwise(&self) -> Field2D {
        Field2D::zeros(*self, false)
    }

    pub fn cell_fn(&self, f: impl Fn(f64, f64) -> f64) -> Field2D {
        let mut out = self.cellwise();
        for k in 0..self.nt {
            for i in 0..self.nx {
                out.set(k, i, f(self.x(i), self.t(k + 1)));
            }
        }
        out
    }
}

/// Space-time grid values, time-major. Nodal fields (state, adjoint) have
/// `Nt + 1` rows; cellwise fields (control, disturbances) have `Nt` rows,
/// row `k` belonging to time `t_{k+1}`. Boundary values are zero and not
/// stored.
#[derive(Debug, Clone, PartialEq)]
pub struct Field2D {
    pub mesh: Mesh,
    pub nodal: bool,
    pub values: GridFn,
}

impl Field2D {
    pub fn zeros(mesh: Mesh, nodal: bool) -> Self {
        let rows = if nodal { mesh.nt + 1 } else { mesh.nt };
        Self {
            mesh,
            nodal,
            values: GridFn::zeros(rows, mesh.nx),
        }
    }

    pub fn constant(mesh: Mesh, nodal: bool, v: f64) -> Self {
        let mut f = Self::zeros(mesh, nodal);
        f.values.as_mut_slice().iter_mut().for_each(|x| *x = v);
        f
    }

    pub fn rows(&self) -> usize {
        self.values.rows()
    }

    pub fn get(&self, k: usize, i: usize) -> f64 {
        self.values.get(k, i)
    }

    pub fn set(&mut self, k: usize, i: usize, v: f64) {
        self.values.set(k, i, v);
    }

    pub fn row(&self, k: usize) -> &[f64] {
        self.values.row(k)
    }

    /// Time of row `k`.
    pub fn time(&self, k: usize) -> f64 {
        self.mesh.t(if self.nodal { k } else { k + 1 })
    }

    pub fn sub(&self, other: &Self) -> Self {
        Self {
            mesh: self.mesh,
            nodal: self.nodal,
            values: self.values.sub(&other.values),
        }
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self {
            mesh: self.mesh,
            nodal: self.nodal,
            values: self.values.scaled(s),
        }
    }

    /// Time weights: rectangle rule on cells, trapezoid on nodes.
    fn weight(&self, k: usize) -> f64 {
        let ht = self.mesh.ht();
        if self.nodal && (k == 0 || k == self.mesh.nt) {
            0.5 * ht
        } else {
            ht
        }
    }

    fn integrate(&self, f: impl Fn(f64) -> f64) -> f64 {
        let hx = self.mesh.hx();
        (0..self.rows())
            .map(|k| self.weight(k) * hx * self.row(k).iter().map(|&v| f(v)).sum::<f64>())
            .sum()
    }

    pub fn l1(&self) -> f64 {
        self.integrate(f64::abs)
    }

    pub fn l2(&self) -> f64 {
        self.integrate(|v| v * v).sqrt()
    }

    pub fn linf(&self) -> f64 {
        self.values.max_abs()
    }

    /// `∫_Q self · other` with the field's quadrature.
    pub fn inner(&self, other: &Self) -> f64 {
        let hx = self.mesh.hx();
        (0..self.rows())
            .map(|k| {
                self.weight(k)
                    * hx
                    * self.row(k).iter().zip(other.row(k)).map(|(a, b)| a * b).sum::<f64>()
            })
            .sum()
    }

    /// Discrete `W(0,T)` norm `‖y‖_{L²(H¹₀)} + ‖∂ₜy‖_{L²(H⁻¹)}` of a nodal
    /// field; `None` for cellwise fields. The `H⁻¹` norm of `g` is
    /// `(g, (−Δ_h)⁻¹ g)^{1/2}` with the Dirichlet difference Laplacian.
    /// Not used by the experiments, whose estimates are in `L¹`/`L²`.
    pub fn w0t_norm(&self) -> Option<f64> {
        if !self.nodal {
            return None;
        }
        let (nx, hx, ht) = (self.mesh.nx, self.mesh.hx(), self.mesh.ht());
        let grad_sq = |row: &[f64]| {
            let at = |i: usize| if i == 0 || i > nx { 0.0 } else { row[i - 1] };
            (0..=nx).map(|i| ((at(i + 1) - at(i)) / hx).powi(2)).sum::<f64>() * hx
        };
        let h1 = (0..self.rows()).map(|k| self.weight(k) * grad_sq(self.row(k))).sum::<f64>();
        let h2 = hx * hx;
        let (lower, diag, upper) = (vec![-1.0 / h2; nx], vec![2.0 / h2; nx], vec![-1.0 / h2; nx]);
        let mut dual = 0.0;
        for k in 0..self.mesh.nt {
            let d: Vec<f64> = self.row(k + 1).iter().zip(self.row(k)).map(|(a, b)| (a - b) / ht).collect();
            let w = thomas(&lower, &diag, &upper, &d)?;
            dual += ht * hx * d.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>();
        }
        Some(h1.sqrt() + dual.sqrt())
    }

    /// CSV of `(t, x, value)` triples.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,x,value\n");
        for k in 0..self.rows() {
            for i in 0..self.mesh.nx {
                let _ = writeln!(out, "{:.16e},{:.16e},{:.16e}", self.time(k), self.mesh.x(i), self.get(k, i));
            }
        }
        out
    }
}

fn check_field(f: &Field2D, mesh: &Mesh, nodal: bool, what: &'static str) -> Result<(), ParabolicError> {
    let rows = if nodal { mesh.nt + 1 } else { mesh.nt };
    if f.mesh != *mesh || f.nodal != nodal || f.values.dim() != mesh.nx || f.rows() != rows {
        return Err(ParabolicError::Mesh {
            what,
            expected: rows * mesh.nx,
            got: f.rows() * f.values.dim(),
        });
    }
    Ok(())
}

/// Thomas algorithm for a tridiagonal system (`lower[0]`, `upper[n-1]`
/// unused).
fn thomas(lower: &[f64], diag: &[f64], upper: &[f64], rhs: &[f64]) -> Option<Vec<f64>> {
    let n = diag.len();
    let mut c = vec![0.0; n];
    let mut d = vec![0.0; n];
    let mut beta = diag[0];
    if beta.abs() < f64::MIN_POSITIVE {
        return None;
    }
    c[0] = upper[0] / beta;
    d[0] = rhs[0] / beta;
    for i in 1..n {
        beta = diag[i] - lower[i] * c[i - 1];
        if beta.abs() < f64::MIN_POSITIVE {
            return None;
        }
        c[i] = if i + 1 < n { upper[i] / beta } else { 0.0 };
        d[i] = (rhs[i] - lower[i] * d[i - 1]) / beta;
    }
    for i in (0..n - 1).rev() {
        d[i] -= c[i] * d[i + 1];
    }
    Some(d)
}

/// Tridiagonal stencil of `−(a y_x)_x`: `(lower, diag, upper)`.
fn stiffness(ocp: &dyn ParabolicOcp, mesh: &Mesh) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let hx = mesh.hx();
    let h2 = hx * hx;
    let half = |i: usize| ocp.diffusion((i as f64 + 0.5) * hx);
    let nx = mesh.nx;
    let lower = (0..nx).map(|i| -half(i) / h2).collect();
    let upper = (0..nx).map(|i| -half(i + 1) / h2).collect();
    let diag = (0..nx).map(|i| (half(i) + half(i + 1)) / h2).collect();
    (lower, diag, upper)
}

/// `A y` in flux form (differences first, which keeps the rounding error
/// at `O(eps·|y|/hx²)` without cancelling large products).
fn apply_stiffness(st: &(Vec<f64>, Vec<f64>, Vec<f64>), y: &[f64]) -> Vec<f64> {
    let n = y.len();
    (0..n)
        .map(|i| {
            let left = if i > 0 { y[i] - y[i - 1] } else { y[i] };
            let right = if i + 1 < n { y[i + 1] - y[i] } else { -y[i] };
            // lower = −a_{i−½}/hx², upper = −a_{i+½}/hx².
            -st.0[i] * left + st.2[i] * right
        })
        .collect()
}

/// Samples the monotonicity of `f` and the ellipticity of `a`.
pub fn validate_problem(ocp: &dyn ParabolicOcp, mesh: &Mesh) -> Result<(), ParabolicError> {
    for i in 0..=mesh.nx + 1 {
        let x = i as f64 * mesh.hx();
        if !(ocp.diffusion(x) > 0.0) {
            return Err(ParabolicError::InvalidProblem(format!("a({x}) is not positive")));
        }
    }
    for k in 0..=mesh.nt {
        for i in 0..mesh.nx {
            let (x, t) = (mesh.x(i), mesh.t(k));
            if !(ocp.u_a(x, t) < ocp.u_b(x, t)) {
                return Err(ParabolicError::InvalidProblem(format!("u_a >= u_b at ({x}, {t})")));
            }
            for y in [-10.0, -1.0, 0.0, 1.0, 10.0] {
                if ocp.f_y(x, t, y) < 0.0 {
                    return Err(ParabolicError::InvalidProblem(format!(
                        "f is decreasing in y at ({x}, {t}, {y})"
                    )));
                }
            }
        }
    }
    Ok(())
}

/// Implicit Euler for `y_t + A y + f(y) = u + ξ` with a Newton solve per
/// step.
pub fn solve_state(
    ocp: &dyn ParabolicOcp,
    u: &Field2D,
    xi: Option<&Field2D>,
) -> Result<Field2D, ParabolicError> {
    let mesh = u.mesh;
    check_field(u, &mesh, false, "control")?;
    if let Some(xi) = xi {
        check_field(xi, &mesh, false, "state disturbance")?;
    }
    let (nx, ht) = (mesh.nx, mesh.ht());
    let st = stiffness(ocp, &mesh);
    let mut y = mesh.nodal();
    for i in 0..nx {
        y.set(0, i, ocp.y0(mesh.x(i)));
    }
    for k in 0..mesh.nt {
        let t = mesh.t(k + 1);
        let prev = y.row(k).to_vec();
        let rhs: Vec<f64> = (0..nx)
            .map(|i| prev[i] / ht + u.get(k, i) + xi.map_or(0.0, |x| x.get(k, i)))
            .collect();
        let mut cur = prev.clone();
        // Residual scale: size of the terms that cancel in the equation.
        let op_norm = 1.0 / ht + st.1.iter().fold(0.0f64, |m, v| m.max(v.abs())) * 2.0;
        let rhs_norm = rhs.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let mut done = false;
        for _ in 0..NEWTON_MAX_ITER {
            let ay = apply_stiffness(&st, &cur);
            let res: Vec<f64> = (0..nx)
                .map(|i| cur[i] / ht + ay[i] + ocp.f(mesh.x(i), t, cur[i]) - rhs[i])
                .collect();
            let norm = res.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            if !norm.is_finite() {
                break;
            }
            let scale = 1.0 + rhs_norm + op_norm * cur.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            if norm <= NEWTON_TOL * scale {
                done = true;
                break;
            }
            let diag: Vec<f64> = (0..nx)
                .map(|i| st.1[i] + 1.0 / ht + ocp.f_y(mesh.x(i), t, cur[i]))
                .collect();
            let step = thomas(&st.0, &diag, &st.2, &res).ok_or(ParabolicError::Singular { step: k })?;
            for i in 0..nx {
                cur[i] -= step[i];
            }
        }
        if !done {
            return Err(ParabolicError::Newton { step: k });
        }
        y.values.row_mut(k + 1).copy_from_slice(&cur);
    }
    Ok(y)
}

/// Backward sweep `(p^k − p^{k+1})/ht + A p^k + f_y(y^{k+1}) p^k = L₀_y(y^{k+1}) + η^k`,
/// `p^{Nt} = 0`.
pub fn solve_adjoint(
    ocp: &dyn ParabolicOcp,
    y: &Field2D,
    eta: Option<&Field2D>,
) -> Result<Field2D, ParabolicError> {
    let mesh = y.mesh;
    check_field(y, &mesh, true, "state")?;
    if let Some(eta) = eta {
        check_field(eta, &mesh, false, "adjoint disturbance")?;
    }
    let (nx, ht) = (mesh.nx, mesh.ht());
    let st = stiffness(ocp, &mesh);
    let mut p = mesh.nodal();
    for k in (0..mesh.nt).rev() {
        let t = mesh.t(k + 1);
        let yk = y.row(k + 1);
        let rhs: Vec<f64> = (0..nx)
            .map(|i| p.get(k + 1, i) / ht + ocp.l0_y(mesh.x(i), t, yk[i]) + eta.map_or(0.0, |e| e.get(k, i)))
            .collect();
        let diag: Vec<f64> = (0..nx)
            .map(|i| st.1[i] + 1.0 / ht + ocp.f_y(mesh.x(i), t, yk[i]))
            .collect();
        let sol = thomas(&st.0, &diag, &st.2, &rhs).ok_or(ParabolicError::Singular { step: k })?;
        p.values.row_mut(k).copy_from_slice(&sol);
    }
    Ok(p)
}

/// Linear solve `z_t + A z + f_y(y) z = source`, `z(0) = 0`.
fn linear_forward(ocp: &dyn ParabolicOcp, y: &Field2D, source: &Field2D) -> Result<Field2D, ParabolicError> {
    let mesh = y.mesh;
    let (nx, ht) = (mesh.nx, mesh.ht());
    let st = stiffness(ocp, &mesh);
    let mut z = mesh.nodal();
    for k in 0..mesh.nt {
        let t = mesh.t(k + 1);
        let rhs: Vec<f64> = (0..nx).map(|i| z.get(k, i) / ht + source.get(k, i)).collect();
        let diag: Vec<f64> = (0..nx)
            .map(|i| st.1[i] + 1.0 / ht + ocp.f_y(mesh.x(i), t, y.get(k + 1, i)))
            .collect();
        let sol = thomas(&st.0, &diag, &st.2, &rhs).ok_or(ParabolicError::Singular { step: k })?;
        z.values.row_mut(k + 1).copy_from_slice(&sol);
    }
    Ok(z)
}

/// First-order response `z_v` of the state to the control direction `v`.
pub fn linearized_state(ocp: &dyn ParabolicOcp, y: &Field2D, v: &Field2D) -> Result<Field2D, ParabolicError> {
    check_field(y, &y.mesh, true, "state")?;
    check_field(v, &y.mesh, false, "direction")?;
    linear_forward(ocp, y, v)
}

/// Second-order response: the linear equation with source
/// `−f_yy(y) z_v z_w`.
pub fn second_response(
    ocp: &dyn ParabolicOcp,
    y: &Field2D,
    zv: &Field2D,
    zw: &Field2D,
) -> Result<Field2D, ParabolicError> {
    let mesh = y.mesh;
    check_field(y, &mesh, true, "state")?;
    check_field(zv, &mesh, true, "first response")?;
    check_field(zw, &mesh, true, "first response")?;
    let mut src = mesh.cellwise();
    for k in 0..mesh.nt {
        let t = mesh.t(k + 1);
        for i in 0..mesh.nx {
            let fyy = ocp.f_yy(mesh.x(i), t, y.get(k + 1, i));
            src.set(k, i, -fyy * zv.get(k + 1, i) * zw.get(k + 1, i));
        }
    }
    linear_forward(ocp, y, &src)
}

/// `J(u) = Σ_k ht·hx Σ_i L₀(x_i, t_{k+1}, y^{k+1}_i) + g(x_i, t_{k+1}) u^k_i`.
pub fn objective(ocp: &dyn ParabolicOcp, u: &Field2D) -> Result<f64, ParabolicError> {
    let y = solve_state(ocp, u, None)?;
    Ok(objective_at(ocp, &y, u))
}

fn objective_at(ocp: &dyn ParabolicOcp, y: &Field2D, u: &Field2D) -> f64 {
    let mesh = u.mesh;
    let w = mesh.ht() * mesh.hx();
    let mut j = 0.0;
    for k in 0..mesh.nt {
        let t = mesh.t(k + 1);
        for i in 0..mesh.nx {
            let x = mesh.x(i);
            j += w * (ocp.l0(x, t, y.get(k + 1, i)) + ocp.g(x, t) * u.get(k, i));
        }
    }
    j
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObjectiveDerivatives {
    pub value: f64,
    /// `J'(u)v` when a direction `v` was given.
    pub first: Option<f64>,
    /// `J''(u)(v, w)` when both directions were given.
    pub second: Option<f64>,
    /// `p_u + g` on the control cells.
    pub gradient: Field2D,
    pub state: Field2D,
    pub adjoint: Field2D,
}

fn gradient_field(ocp: &dyn ParabolicOcp, p: &Field2D) -> Field2D {
    let mesh = p.mesh;
    let mut gr = mesh.cellwise();
    for k in 0..mesh.nt {
        for i in 0..mesh.nx {
            gr.set(k, i, ocp.g(mesh.x(i), mesh.t(k + 1)) + p.get(k, i));
        }
    }
    gr
}

pub fn objective_and_derivatives(
    ocp: &dyn ParabolicOcp,
    u: &Field2D,
    v: Option<&Field2D>,
    w: Option<&Field2D>,
) -> Result<ObjectiveDerivatives, ParabolicError> {
    let mesh = u.mesh;
    let y = solve_state(ocp, u, None)?;
    let p = solve_adjoint(ocp, &y, None)?;
    let gradient = gradient_field(ocp, &p);
    let first = v.map(|v| gradient.inner(v));
    let second = match (v, w) {
        (Some(v), Some(w)) => {
            let zv = linearized_state(ocp, &y, v)?;
            let zw = linearized_state(ocp, &y, w)?;
            let wgt = mesh.ht() * mesh.hx();
            let mut s = 0.0;
            for k in 0..mesh.nt {
                let t = mesh.t(k + 1);
                for i in 0..mesh.nx {
                    let x = mesh.x(i);
                    let yk = y.get(k + 1, i);
                    let coef = ocp.l0_yy(x, t, yk) - p.get(k, i) * ocp.f_yy(x, t, yk);
                    s += wgt * coef * zv.get(k + 1, i) * zw.get(k + 1, i);
                }
            }
            Some(s)
        }
        _ => None,
    };
    Ok(ObjectiveDerivatives {
        value: objective_at(ocp, &y, u),
        first,
        second,
        gradient,
        state: y,
        adjoint: p,
    })
}

/// Disturbance `(ξ, η, ρ)` on the control cells.
#[derive(Debug, Clone, PartialEq)]
pub struct ParabolicDisturbance {
    pub xi: Field2D,
    pub eta: Field2D,
    pub rho: Field2D,
}

impl ParabolicDisturbance {
    pub fn zero(mesh: Mesh) -> Self {
        Self {
            xi: mesh.cellwise(),
            eta: mesh.cellwise(),
            rho: mesh.cellwise(),
        }
    }

    pub fn constant_rho(mesh: Mesh, eps: f64) -> Self {
        Self {
            rho: Field2D::constant(mesh, false, eps),
            ..Self::zero(mesh)
        }
    }

    /// `‖ξ‖₂ + ‖η‖₂ + ‖ρ‖_∞`.
    pub fn weak_norm(&self) -> f64 {
        self.xi.l2() + self.eta.l2() + self.rho.linf()
    }

    /// `‖ξ‖_∞ + ‖η‖_∞ + ‖ρ‖_∞`.
    pub fn strong_norm(&self) -> f64 {
        self.xi.linf() + self.eta.linf() + self.rho.linf()
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self {
            xi: self.xi.scaled(s),
            eta: self.eta.scaled(s),
            rho: self.rho.scaled(s),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParabolicResidual {
    pub xi: Field2D,
    pub eta: Field2D,
    /// Pointwise distance of `ρ − (g + p)` to the normal cone of
    /// `[u_a, u_b]` at `u`.
    pub rho: Field2D,
    pub strong: f64,
    pub weak: f64,
}

/// Residual of the disturbed optimality system at `(y, p, u)`.
pub fn optimality_residual(
    ocp: &dyn ParabolicOcp,
    y: &Field2D,
    p: &Field2D,
    u: &Field2D,
    d: Option<&ParabolicDisturbance>,
) -> Result<ParabolicResidual, ParabolicError> {
    let mesh = u.mesh;
    check_field(y, &mesh, true, "state")?;
    check_field(p, &mesh, true, "adjoint")?;
    check_field(u, &mesh, false, "control")?;
    let (nx, ht) = (mesh.nx, mesh.ht());
    let st = stiffness(ocp, &mesh);
    let mut xi = mesh.cellwise();
    let mut eta = mesh.cellwise();
    let mut rho = mesh.cellwise();
    for k in 0..mesh.nt {
        let t = mesh.t(k + 1);
        let ay = apply_stiffness(&st, y.row(k + 1));
        let ap = apply_stiffness(&st, p.row(k));
        for i in 0..nx {
            let x = mesh.x(i);
            let yk = y.get(k + 1, i);
            let pk = p.get(k, i);
            let dx = d.map_or(0.0, |d| d.xi.get(k, i));
            let de = d.map_or(0.0, |d| d.eta.get(k, i));
            let dr = d.map_or(0.0, |d| d.rho.get(k, i));
            xi.set(k, i, (yk - y.get(k, i)) / ht + ay[i] + ocp.f(x, t, yk) - u.get(k, i) - dx);
            eta.set(
                k,
                i,
                (pk - p.get(k + 1, i)) / ht + ap[i] + ocp.f_y(x, t, yk) * pk - ocp.l0_y(x, t, yk) - de,
            );
            let (lo, hi, uk) = (ocp.u_a(x, t), ocp.u_b(x, t), u.get(k, i));
            let v = dr - (ocp.g(x, t) + pk);
            let slack = TIE_TOL * (1.0 + lo.abs().max(hi.abs()));
            let dist = if uk < lo - slack || uk > hi + slack {
                f64::INFINITY
            } else if uk <= lo + slack {
                v.max(0.0)
            } else if uk >= hi - slack {
                (-v).max(0.0)
            } else {
                v.abs()
            };
            rho.set(k, i, dist);
        }
    }
    let boundary = (0..nx)
        .map(|i| (y.get(0, i) - ocp.y0(mesh.x(i))).abs().max(p.get(mesh.nt, i).abs()))
        .fold(0.0, f64::max);
    Ok(ParabolicResidual {
        strong: xi.linf() + eta.linf() + rho.linf() + boundary,
        weak: xi.l2() + eta.l2() + rho.linf() + boundary,
        xi,
        eta,
        rho,
    })
}

/// How a control is read off the gradient field `s = g + p − ρ`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ControlRule {
    /// Node value by the sign rule (`u_a` where `s > 0`, `u_b` where
    /// `s < 0`; ties keep the current value).
    Pointwise,
    /// Average over the node's dual cell `[x_i − hx/2, x_i + hx/2]` of the
    /// sign rule applied to the piecewise-linear interpolant of `s`: the
    /// L¹-best piecewise-constant representation of the bang-bang control,
    /// which resolves interfaces inside a cell.
    CellAverage,
}

/// Fraction of `[0, 1]` where the linear function from `a` to `b` is
/// negative, positive.
fn sign_fractions(a: f64, b: f64) -> (f64, f64) {
    let neg = |v: f64| v < -TIE_TOL;
    let pos = |v: f64| v > TIE_TOL;
    if (neg(a) || a.abs() <= TIE_TOL) && (neg(b) || b.abs() <= TIE_TOL) {
        if neg(a) || neg(b) {
            return (1.0, 0.0);
        }
        return (0.0, 0.0);
    }
    if (pos(a) || a.abs() <= TIE_TOL) && (pos(b) || b.abs() <= TIE_TOL) {
        return (0.0, 1.0);
    }
    let root = a / (a - b);
    if neg(a) {
        (root, 1.0 - root)
    } else {
        (1.0 - root, root)
    }
}

fn control_update(
    ocp: &dyn ParabolicOcp,
    s: &Field2D,
    current: &Field2D,
    rule: ControlRule,
) -> Field2D {
    let mesh = s.mesh;
    let nx = mesh.nx;
    let mut u = mesh.cellwise();
    for k in 0..mesh.nt {
        let t = mesh.t(k + 1);
        let row = s.row(k);
        for i in 0..nx {
            let x = mesh.x(i);
            let (lo, hi) = (ocp.u_a(x, t), ocp.u_b(x, t));
            let value = match rule {
                ControlRule::Pointwise => {
                    if row[i] > TIE_TOL {
                        lo
                    } else if row[i] < -TIE_TOL {
                        hi
                    } else {
                        current.get(k, i).clamp(lo, hi)
                    }
                }
                ControlRule::CellAverage => {
                    // Neighbour values, linearly extrapolated at the ends.
                    let left = if i > 0 {
                        row[i - 1]
                    } else if nx > 1 {
                        2.0 * row[0] - row[1]
                    } else {
                        row[0]
                    };
                    let right = if i + 1 < nx {
                        row[i + 1]
                    } else if nx > 1 {
                        2.0 * row[i] - row[i - 1]
                    } else {
                        row[i]
                    };
                    let (n1, p1) = sign_fractions(0.5 * (left + row[i]), row[i]);
                    let (n2, p2) = sign_fractions(row[i], 0.5 * (row[i] + right));
                    let (neg, pos) = (0.5 * (n1 + n2), 0.5 * (p1 + p2));
                    let tie = (1.0 - neg - pos).max(0.0);
                    neg * hi + pos * lo + tie * current.get(k, i).clamp(lo, hi)
                }
            };
            u.set(k, i, value);
        }
    }
    u
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParabolicSolve {
    pub y: Field2D,
    pub p: Field2D,
    pub u: Field2D,
    pub converged: bool,
    pub sweeps: usize,
    /// `‖u_new − u‖_∞` of the last sweep.
    pub change: f64,
}

/// State, adjoint and control from `u` under the disturbance `d`.
fn sweep(
    ocp: &dyn ParabolicOcp,
    u: &Field2D,
    d: &ParabolicDisturbance,
    rule: ControlRule,
) -> Result<(Field2D, Field2D, Field2D), ParabolicError> {
    let y = solve_state(ocp, u, Some(&d.xi))?;
    let p = solve_adjoint(ocp, &y, Some(&d.eta))?;
    let s = gradient_field(ocp, &p).sub(&d.rho);
    let cand = control_update(ocp, &s, u, rule);
    Ok((y, p, cand))
}

/// Alternating sweeps (state, adjoint, control update) with relaxation
/// `θ`, halved on detected cycling (at most ten times). Converged when the
/// control update changes the control by at most `tol` in the sup norm.
pub fn solve_optimality(
    ocp: &dyn ParabolicOcp,
    d: &ParabolicDisturbance,
    start: &Field2D,
    rule: ControlRule,
    tol: f64,
    max_sweeps: usize,
) -> Result<ParabolicSolve, ParabolicError> {
    let mesh = start.mesh;
    check_field(start, &mesh, false, "start control")?;
    let mut u = start.clone();
    let mut theta = 1.0;
    let mut halvings = 0;
    let mut recent: Vec<Field2D> = Vec::new();
    let mut sweeps = 0;
    loop {
        let (y, p, cand) = sweep(ocp, &u, d, rule)?;
        let change = cand.sub(&u).linf();
        if change <= tol || sweeps >= max_sweeps || halvings > 10 {
            return Ok(ParabolicSolve {
                y,
                p,
                u,
                converged: change <= tol,
                sweeps,
                change,
            });
        }
        sweeps += 1;
        if recent.len() == 2 && recent[0].sub(&cand).linf() <= tol && recent[1].sub(&cand).linf() > tol {
            halvings += 1;
            theta *= 0.5;
        }
        recent.push(cand.clone());
        if recent.len() > 2 {
            recent.remove(0);
        }
        u = u.sub(&u.sub(&cand).scaled(theta));
    }
}

/// Sampled growth check `J'(ū)v + J''(ū)v² >= c‖v‖₁^{1+1/γ}` over
/// space-time strip variations: on a random time window and a random space
/// window (centered on a sign change of the gradient field with
/// probability ½) the control is moved to the opposite bound.
pub fn check_growth_parabolic(
    ocp: &dyn ParabolicOcp,
    u_bar: &Field2D,
    c: f64,
    alpha: f64,
    gamma: f64,
    seed: u64,
    n_samples: usize,
) -> Result<GrowthCheckResult, ParabolicError> {
    if !(gamma > 2.0 / 3.0 && gamma <= 1.0) {
        return Err(ParabolicError::InvalidOption(format!("gamma {gamma} outside (2/3, 1]")));
    }
    let mesh = u_bar.mesh;
    let base = objective_and_derivatives(ocp, u_bar, None, None)?;
    let (nx, nt) = (mesh.nx, mesh.nt);
    let exponent = 1.0 + 1.0 / gamma;
    // Interface nodes per time row (sign changes of the gradient field).
    let interfaces: Vec<Vec<usize>> = (0..nt)
        .map(|k| {
            let r = base.gradient.row(k);
            (0..nx)
                .filter(|&i| r[i].abs() <= TIE_TOL || (i + 1 < nx && r[i] * r[i + 1] < 0.0))
                .collect()
        })
        .collect();
    let results = run_samples(n_samples, |idx| {
        let mut rng = SampleRng::new(seed, idx as u64);
        let len_t = 1 + rng.index(nt);
        let k0 = rng.index(nt - len_t + 1);
        let min_x = MIN_NEEDLE_CELLS.min(nx);
        let len_x = min_x + rng.index(nx - min_x + 1);
        let centers = &interfaces[k0];
        let i0 = if !centers.is_empty() && rng.uniform() < 0.5 {
            let c = centers[rng.index(centers.len())];
            c.saturating_sub(rng.index(len_x + 1)).min(nx - len_x)
        } else {
            rng.index(nx - len_x + 1)
        };
        let mut u = u_bar.clone();
        for k in k0..k0 + len_t {
            let t = mesh.t(k + 1);
            for i in i0..i0 + len_x {
                let x = mesh.x(i);
                let (lo, hi) = (ocp.u_a(x, t), ocp.u_b(x, t));
                let cur = u_bar.get(k, i);
                u.set(k, i, if cur - lo < hi - cur { hi } else { lo });
            }
        }
        let v = u.sub(u_bar);
        let size = v.l1();
        if size == 0.0 || size >= alpha {
            return None;
        }
        let d = objective_and_derivatives(ocp, u_bar, Some(&v), Some(&v)).ok()?;
        let left = d.first? + d.second?;
        Some((left / size.powf(exponent), u))
    });
    let mut count = 0;
    let mut worst: Option<(f64, Field2D)> = None;
    for (ratio, u) in results.into_iter().flatten() {
        count += 1;
        if worst.as_ref().is_none_or(|(r, _)| ratio < *r) {
            worst = Some((ratio, u));
        }
    }
    let Some((c_emp, worst_u)) = worst else {
        return Err(ParabolicError::Sampling(format!(
            "no strip variation with ||v||_1 < {alpha}"
        )));
    };
    Ok(GrowthCheckResult {
        holds: c_emp >= c,
        c0_empirical: c_emp,
        worst_control: worst_u.values,
        n_samples: count,
    })
}

/// Which disturbance blocks a Hölder sweep draws.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParabolicBlocks {
    pub xi: bool,
    pub eta: bool,
    pub rho: bool,
}

impl ParabolicBlocks {
    pub const ALL: Self = Self {
        xi: true,
        eta: true,
        rho: true,
    };
    pub const RHO: Self = Self {
        xi: false,
        eta: false,
        rho: true,
    };
}

#[derive(Debug, Clone, PartialEq)]
pub struct HolderOptions {
    pub directions: usize,
    pub blocks: ParabolicBlocks,
    pub rule: ControlRule,
    pub tol: f64,
    pub max_sweeps: usize,
}

impl Default for HolderOptions {
    fn default() -> Self {
        Self {
            directions: 10,
            blocks: ParabolicBlocks::ALL,
            rule: ControlRule::CellAverage,
            tol: 1e-12,
            max_sweeps: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HolderExperiment {
    /// Domain distance `‖u − ū‖₁`.
    pub control: Vec<PerturbationRecord>,
    /// Domain distance `‖y − ȳ‖₂ + ‖p − p̄‖₂`.
    pub state: Vec<PerturbationRecord>,
}

/// Seeded disturbance: `ξ, η` and `ρ` affine in `(x, t)`, scaled to weak
/// norm `magnitude`.
pub fn draw_parabolic_disturbance(
    mesh: Mesh,
    blocks: ParabolicBlocks,
    seed: u64,
    direction: u64,
    magnitude: f64,
) -> ParabolicDisturbance {
    let mut rng = SampleRng::new(seed, direction);
    let mut affine = |on: bool| {
        let c = rng.symmetric_vec(3);
        if on {
            mesh.cell_fn(|x, t| c[0] + c[1] * (x - 0.5) + c[2] * (t / mesh.horizon - 0.5))
        } else {
            mesh.cellwise()
        }
    };
    let d = ParabolicDisturbance {
        xi: affine(blocks.xi),
        eta: affine(blocks.eta),
        rho: affine(blocks.rho),
    };
    let size = d.weak_norm();
    if size > 0.0 {
        d.scaled(magnitude / size)
    } else {
        d
    }
}

pub fn holder_experiment(
    ocp: &dyn ParabolicOcp,
    u_bar: &Field2D,
    seed: u64,
    magnitudes: &[f64],
    opts: &HolderOptions,
) -> Result<HolderExperiment, ParabolicError> {
    let mesh = u_bar.mesh;
    let zero = ParabolicDisturbance::zero(mesh);
    let (y_bar, p_bar, cand) = sweep(ocp, u_bar, &zero, opts.rule)?;
    let change = cand.sub(u_bar).linf();
    if change > opts.tol.max(1e-10) {
        return Err(ParabolicError::NotSolution { change });
    }
    let dirs = opts.directions;
    let pairs = run_samples(magnitudes.len() * dirs, |idx| {
        let magnitude = magnitudes[idx / dirs];
        let d = draw_parabolic_disturbance(mesh, opts.blocks, seed, (idx % dirs) as u64, magnitude);
        let solved = solve_optimality(ocp, &d, u_bar, opts.rule, opts.tol, opts.max_sweeps)
            .ok()
            .filter(|r| r.converged);
        let (du, dyp) = match &solved {
            Some(r) => (
                r.u.sub(u_bar).l1(),
                r.y.sub(&y_bar).l2() + r.p.sub(&p_bar).l2(),
            ),
            None => (f64::NAN, f64::NAN),
        };
        let rec = |dist: f64| PerturbationRecord {
            sample_index: idx as u64,
            magnitude,
            weak_image_dist: d.weak_norm(),
            weak_domain_dist: dist,
            strong_image_dist: d.strong_norm(),
            solver_converged: solved.is_some(),
        };
        (rec(du), rec(dyp))
    });
    let (control, state) = pairs.into_iter().unzip();
    Ok(HolderExperiment { control, state })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geneq::{fit_regularity, linear_fit, DEFAULT_MIN_DIST};
    use crate::problems::{HeatAnalytic, ParabolicBang};
    use proptest::prelude::*;
    use std::f64::consts::PI;

    #[test]
    fn thomas_matches_dense_solve() {
        let lower = [0.0, -1.0, -1.0, -1.0];
        let diag = [4.0, 4.0, 4.0, 4.0];
        let upper = [-1.0, -1.0, -1.0, 0.0];
        let rhs = [1.0, 2.0, 3.0, 4.0];
        let x = thomas(&lower, &diag, &upper, &rhs).unwrap();
        for i in 0..4 {
            let mut r = diag[i] * x[i];
            if i > 0 {
                r += lower[i] * x[i - 1];
            }
            if i < 3 {
                r += upper[i] * x[i + 1];
            }
            assert!((r - rhs[i]).abs() < 1e-14);
        }
    }

    // y = t sin(πx): ‖y‖_{L²(H¹₀)} = π/√6 and ‖sin πx‖_{H⁻¹} = 1/(π√2).
    #[test]
    fn w0t_norm_of_separable_field() {
        let mesh = Mesh::new(199, 200, 1.0).unwrap();
        let mut y = Field2D::zeros(mesh, true);
        for k in 0..=200 {
            for i in 0..199 {
                y.set(k, i, mesh.t(k) * (PI * mesh.x(i)).sin());
            }
        }
        let exact = PI / 6f64.sqrt() + 1.0 / (PI * 2f64.sqrt());
        let got = y.w0t_norm().unwrap();
        assert!((got - exact).abs() < 1e-4 * exact, "{got} vs {exact}");
        assert!(mesh.cellwise().w0t_norm().is_none());
    }

    fn heat_error(nx: usize, nt: usize, horizon: f64) -> f64 {
        let mesh = Mesh::new(nx, nt, horizon).unwrap();
        let y = solve_state(&HeatAnalytic::default(), &mesh.cellwise(), None).unwrap();
        (0..nx)
            .map(|i| {
                let x = mesh.x(i);
                (y.get(nt, i) - (-PI * PI * horizon).exp() * (PI * x).sin()).abs()
            })
            .fold(0.0, f64::max)
    }

    #[test]
    fn heat_equation_matches_separation_of_variables() {
        let mesh = Mesh::new(99, 400, 1.0).unwrap();
        let y = solve_state(&HeatAnalytic::default(), &mesh.cellwise(), None).unwrap();
        let err = (0..99)
            .map(|i| (y.get(40, i) - (-PI * PI * 0.1f64).exp() * (PI * mesh.x(i)).sin()).abs())
            .fold(0.0, f64::max);
        assert!(err <= 5e-3, "{err}");
    }

    #[test]
    fn convergence_orders() {
        let space: Vec<(f64, f64)> = [9, 19, 39]
            .iter()
            .map(|&nx| ((1.0 / (nx + 1) as f64).ln(), heat_error(nx, 20000, 0.1).ln()))
            .collect();
        let (xs, ys): (Vec<f64>, Vec<f64>) = space.into_iter().unzip();
        let slope = linear_fit(&xs, &ys).unwrap().0;
        assert!((slope - 2.0).abs() <= 0.3, "space slope {slope}");
        let time: Vec<(f64, f64)> = [10, 20, 40, 80]
            .iter()
            .map(|&nt| ((0.1 / nt as f64).ln(), heat_error(999, nt, 0.1).ln()))
            .collect();
        let (xs, ys): (Vec<f64>, Vec<f64>) = time.into_iter().unzip();
        let slope = linear_fit(&xs, &ys).unwrap().0;
        assert!((slope - 1.0).abs() <= 0.3, "time slope {slope}");
    }

    #[test]
    fn trivial_state_and_adjoint() {
        let mesh = Mesh::new(19, 20, 1.0).unwrap();
        let zero = HeatAnalytic {
            amplitude: 0.0,
            ..HeatAnalytic::default()
        };
        assert_eq!(solve_state(&zero, &mesh.cellwise(), None).unwrap().linf(), 0.0);
        let y = solve_state(&HeatAnalytic::default(), &mesh.cellwise(), None).unwrap();
        let p = solve_adjoint(&HeatAnalytic::default(), &y, None).unwrap();
        assert_eq!(p.linf(), 0.0);
        let unit = HeatAnalytic {
            unit_source: true,
            ..HeatAnalytic::default()
        };
        let p = solve_adjoint(&unit, &y, None).unwrap();
        assert!(p.values.as_slice().iter().all(|&v| v >= 0.0));
        assert!(p.linf() > 0.0);
        assert!(p.row(20).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn cubic_nonlinearity_is_bounded_by_linear_heat() {
        let mesh = Mesh::new(49, 50, 0.5).unwrap();
        let linear = solve_state(&HeatAnalytic::default(), &mesh.cellwise(), None).unwrap();
        let cubic = HeatAnalytic {
            cubic: true,
            amplitude: 3.0,
            ..HeatAnalytic::default()
        };
        let lin3 = linear.scaled(3.0);
        let y = solve_state(&cubic, &mesh.cellwise(), None).unwrap();
        for k in 0..=50 {
            for i in 0..49 {
                assert!(y.get(k, i) >= -1e-14 && y.get(k, i) <= lin3.get(k, i) + 1e-12);
            }
        }
    }

    proptest! {
        #[test]
        fn discrete_maximum_principle(seed in 0u64..500) {
            let mesh = Mesh::new(15, 12, 0.3).unwrap();
            let mut rng = SampleRng::new(seed, 0);
            let mut u = mesh.cellwise();
            for k in 0..12 {
                for i in 0..15 {
                    u.set(k, i, rng.uniform());
                }
            }
            let y = solve_state(&HeatAnalytic::default(), &u, None).unwrap();
            prop_assert!(y.values.as_slice().iter().all(|&v| v >= 0.0));
        }
    }

    #[test]
    fn p4_reference_residual_vanishes() {
        let p4 = ParabolicBang::default();
        let mesh = Mesh::new(49, 100, 1.0).unwrap();
        let ub = p4.reference_control(mesh);
        let y = solve_state(&p4, &ub, None).unwrap();
        let p = solve_adjoint(&p4, &y, None).unwrap();
        assert_eq!(p.linf(), 0.0);
        let r = optimality_residual(&p4, &y, &p, &ub, None).unwrap();
        assert!(r.xi.linf() <= 1e-12 && r.eta.linf() <= 1e-12 && r.rho.linf() <= 1e-12);
        assert!(r.strong <= 1e-12);

        let zero = optimality_residual(&HeatAnalytic { amplitude: 0.0, ..HeatAnalytic::default() }, &mesh.nodal(), &mesh.nodal(), &mesh.cellwise(), None).unwrap();
        assert_eq!(zero.strong, 0.0);

        // An interior control leaves |g + p| in the rho block.
        let mid = mesh.cellwise();
        let y = solve_state(&p4, &mid, None).unwrap();
        let r = optimality_residual(&p4, &y, &p, &mid, None).unwrap();
        assert!((r.rho.linf() - (0.5 - mesh.hx())).abs() < 1e-12);
    }

    #[test]
    fn gradient_and_derivatives() {
        let p4 = ParabolicBang::default();
        let mesh = Mesh::new(9, 10, 1.0).unwrap();
        let u = mesh.cellwise();
        let v = Field2D::constant(mesh, false, 1.0);
        let d = objective_and_derivatives(&p4, &u, Some(&v), Some(&v)).unwrap();
        assert_eq!(d.second, Some(0.0));
        let unit_g = HeatAnalytic {
            unit_control_weight: true,
            ..HeatAnalytic::default()
        };
        let d = objective_and_derivatives(&unit_g, &u, Some(&v), None).unwrap();
        assert!(d.gradient.values.as_slice().iter().all(|&g| g == 1.0));
        assert!((d.first.unwrap() - v.l1()).abs() < 1e-14);
        let zero = mesh.cellwise();
        let d = objective_and_derivatives(&unit_g, &u, Some(&zero), Some(&zero)).unwrap();
        assert_eq!(d.second, Some(0.0));
    }

    #[test]
    fn first_derivative_matches_finite_differences() {
        let ocp = ParabolicBang::nonlinear();
        let mesh = Mesh::new(49, 100, 1.0).unwrap();
        let u = mesh.cell_fn(|x, t| 0.3 * (x - t).sin());
        for sample in 0..3 {
            let mut rng = SampleRng::new(3, sample);
            let mut v = mesh.cellwise();
            for k in 0..mesh.nt {
                for i in 0..mesh.nx {
                    v.set(k, i, rng.uniform_in(-1.0, 1.0));
                }
            }
            let d = objective_and_derivatives(&ocp, &u, Some(&v), None).unwrap();
            let t = 1e-5;
            let jp = objective(&ocp, &u.sub(&v.scaled(-t))).unwrap();
            let jm = objective(&ocp, &u.sub(&v.scaled(t))).unwrap();
            let fd = (jp - jm) / (2.0 * t);
            let an = d.first.unwrap();
            assert!((fd - an).abs() <= 1e-3 * an.abs().max(1e-8), "{fd} vs {an}");
            // Second-order Taylor remainder of J.
            let j0 = d.value;
            let dd = objective_and_derivatives(&ocp, &u, Some(&v), Some(&v)).unwrap();
            let mut prev = f64::INFINITY;
            for s in [1e-1, 1e-2] {
                let js = objective(&ocp, &u.sub(&v.scaled(-s))).unwrap();
                let rem = (js - j0 - s * an - 0.5 * s * s * dd.second.unwrap()).abs() / (s * s);
                assert!(rem < prev);
                prev = rem;
            }
        }
    }

    #[test]
    fn second_response_taylor_check() {
        let ocp = ParabolicBang::nonlinear();
        let mesh = Mesh::new(19, 40, 1.0).unwrap();
        let u = mesh.cell_fn(|x, _| 0.5 * x);
        let v = mesh.cell_fn(|x, t| (3.0 * x + t).cos());
        let y = solve_state(&ocp, &u, None).unwrap();
        let z = linearized_state(&ocp, &y, &v).unwrap();
        let w = second_response(&ocp, &y, &z, &z).unwrap();
        let mut ratios = Vec::new();
        for t in [1e-1, 1e-2, 1e-3] {
            let yt = solve_state(&ocp, &u.sub(&v.scaled(-t)), None).unwrap();
            let rem = yt.sub(&y).sub(&z.scaled(t)).sub(&w.scaled(0.5 * t * t)).linf();
            ratios.push(rem / (t * t));
        }
        assert!(ratios[0] / ratios[1] >= 8.0 && ratios[1] / ratios[2] >= 8.0, "{ratios:?}");
        let lin = ParabolicBang::default();
        let y = solve_state(&lin, &u, None).unwrap();
        let z = linearized_state(&lin, &y, &v).unwrap();
        assert_eq!(second_response(&lin, &y, &z, &z).unwrap().linf(), 0.0);
        assert_eq!(linearized_state(&lin, &y, &mesh.cellwise()).unwrap().linf(), 0.0);
    }

    #[test]
    fn growth_on_p4() {
        let p4 = ParabolicBang::default();
        let mesh = Mesh::new(49, 100, 1.0).unwrap();
        let ub = p4.reference_control(mesh);
        let r = check_growth_parabolic(&p4, &ub, 0.05, 0.5, 1.0, 4, 300).unwrap();
        // Strips symmetric about the interface over the whole horizon give
        // ∫|x − ½||v| / ‖v‖₁² = 1/(8T).
        assert!(r.holds && r.c0_empirical >= 0.4 / 8.0, "{}", r.c0_empirical);
        assert!(r.n_samples > 100);
        let flat = HeatAnalytic::default();
        let r = check_growth_parabolic(&flat, &mesh.cellwise(), 0.05, 0.5, 1.0, 4, 50).unwrap();
        assert!(!r.holds && r.c0_empirical == 0.0);
        assert!(matches!(
            check_growth_parabolic(&p4, &ub, 0.05, 0.0, 1.0, 4, 50),
            Err(ParabolicError::Sampling(_))
        ));
    }

    #[test]
    fn constant_rho_moves_the_interface() {
        let p4 = ParabolicBang::default();
        let mesh = Mesh::new(49, 20, 1.0).unwrap();
        let ub = p4.reference_control(mesh);
        for eps in [1e-3, 5e-3, 2e-2, 1e-1] {
            let d = ParabolicDisturbance::constant_rho(mesh, eps);
            let r = solve_optimality(&p4, &d, &ub, ControlRule::CellAverage, 1e-12, 20).unwrap();
            assert!(r.converged);
            let du = r.u.sub(&ub).l1();
            assert!((du - 2.0 * eps).abs() <= 1e-12, "{eps}: {du}");
        }
    }

    #[test]
    fn holder_sweep_on_p4() {
        let p4 = ParabolicBang::default();
        let mesh = Mesh::new(49, 100, 1.0).unwrap();
        let ub = p4.reference_control(mesh);
        let opts = HolderOptions {
            directions: 6,
            ..HolderOptions::default()
        };
        let mags = [1e-3, 3e-3, 1e-2, 3e-2, 1e-1];
        let e = holder_experiment(&p4, &ub, 2, &mags, &opts).unwrap();
        assert!(e.control.iter().all(|r| r.solver_converged));
        let fu = fit_regularity(&e.control, DEFAULT_MIN_DIST).unwrap();
        let fs = fit_regularity(&e.state, DEFAULT_MIN_DIST).unwrap();
        assert!(fu.beta >= 0.85 && fs.beta >= 0.85, "{fu:?} {fs:?}");
        assert_eq!(e, holder_experiment(&p4, &ub, 2, &mags, &opts).unwrap());
        let z = holder_experiment(&p4, &ub, 2, &[0.0], &opts).unwrap();
        assert!(z.control.iter().all(|r| r.weak_domain_dist == 0.0));
        assert!(matches!(
            holder_experiment(&p4, &mesh.cellwise(), 2, &mags, &opts),
            Err(ParabolicError::NotSolution { .. })
        ));
    }
}
