//! Mayer-type optimal control: minimize `φ(x(0), x(1))` subject to
//! `ẋ = f(x, u)` and `G(u) <= 0` on `[0, 1]`.
//!
//! Discretization: explicit Euler on `N` cells, `x_{j+1} = x_j + h f(x_j, u_j)`,
//! with its exact discrete adjoint `(p_{j+1} − p_j)/h + H̄_x(x_j, u_j, p_{j+1}) = 0`
//! where `H̄ = pᵀf + λᵀG`. The disturbed optimality system for
//! `s = (x, u, p, λ)` reads, per cell `j`,
//!
//! ```text
//!   ξ_j = −(x_{j+1} − x_j)/h + f(x_j, u_j)
//!   π_j = (p_{j+1} − p_j)/h + H̄_x(x_j, u_j, p_{j+1})
//!   ρ_j = H̄_u(x_j, u_j, p_{j+1}, λ_j)
//!   η_j ∈ G(u_j) − N_{R^k_+}(λ_j)
//!   ν   = (−p_0, p_N) − φ'(x_0, x_N)
//! ```
//!
//! With a fixed initial state the first half of `ν` becomes `x_0 − x⁰`.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::conemin::minimize_on_cone;
use crate::geneq::{
    josephy_newton, run_samples, ConeBlock, ConeSpec, GeneqError, GeneralizedEquation, MetricSpec,
    NewtonOptions, PerturbationRecord, SmoothMap,
};
use crate::grid::{DiscreteQuadruple, GridFn};
use crate::linalg::{rank, SparseMatrix};
use crate::rng::SampleRng;

/// A control constraint counts as active when `|G_l(u)|` is at most this.
pub const ACTIVE_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MayerError {
    #[error("dynamics returned a non-finite value in cell {cell}")]
    Integration { cell: usize },
    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("reference point does not solve the optimality system (residual {residual:e})")]
    NotSolution { residual: f64 },
    #[error("invalid option: {0}")]
    InvalidOption(String),
    #[error(transparent)]
    Geneq(#[from] GeneqError),
}

#[derive(Debug, Clone, PartialEq)]
pub enum BoundaryMode {
    /// Both endpoint states are free and coupled through `φ`.
    BothFree,
    /// `x(0)` is pinned to the given state.
    FixedInitial(Vec<f64>),
}

/// Problem data with first and second derivatives. `f_hessian(i, ..)` is the
/// Hessian of `f_i` in `w = (x, u)`, an `(n + m) × (n + m)` matrix.
pub trait MayerOcp: Sync {
    fn n(&self) -> usize;
    fn m(&self) -> usize;
    fn k(&self) -> usize;
    fn boundary(&self) -> BoundaryMode;
    fn phi(&self, x0: &[f64], x1: &[f64]) -> f64;
    fn phi_grad(&self, x0: &[f64], x1: &[f64]) -> Vec<f64>;
    fn phi_hessian(&self, x0: &[f64], x1: &[f64]) -> DMatrix<f64>;
    fn f(&self, x: &[f64], u: &[f64]) -> Vec<f64>;
    fn f_x(&self, x: &[f64], u: &[f64]) -> DMatrix<f64>;
    fn f_u(&self, x: &[f64], u: &[f64]) -> DMatrix<f64>;
    fn f_hessian(&self, i: usize, x: &[f64], u: &[f64]) -> DMatrix<f64>;
    fn g(&self, u: &[f64]) -> Vec<f64>;
    fn g_u(&self, u: &[f64]) -> DMatrix<f64>;
    fn g_hessian(&self, l: usize, u: &[f64]) -> DMatrix<f64>;
}

/// Disturbance `(ξ, π, ν, ρ, η)`; `ξ, π, ρ, η` are cellwise.
#[derive(Debug, Clone, PartialEq)]
pub struct OcpDisturbance {
    pub xi: GridFn,
    pub pi: GridFn,
    pub nu: Vec<f64>,
    pub rho: GridFn,
    pub eta: GridFn,
}

impl OcpDisturbance {
    pub fn zero(ocp: &dyn MayerOcp, cells: usize) -> Self {
        Self {
            xi: GridFn::zeros(cells, ocp.n()),
            pi: GridFn::zeros(cells, ocp.n()),
            nu: vec![0.0; 2 * ocp.n()],
            rho: GridFn::zeros(cells, ocp.m()),
            eta: GridFn::zeros(cells, ocp.k()),
        }
    }

    fn common(&self, h: f64) -> f64 {
        self.xi.norm(&MetricSpec::l1(h))
            + self.pi.norm(&MetricSpec::l1(h))
            + self.nu.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// `‖ξ‖₁ + ‖π‖₁ + |ν| + ‖ρ‖_∞ + ‖η‖_∞`.
    pub fn strong_norm(&self, h: f64) -> f64 {
        self.common(h) + self.rho.norm(&MetricSpec::linf()) + self.eta.norm(&MetricSpec::linf())
    }

    /// `‖ξ‖₁ + ‖π‖₁ + |ν| + ‖ρ‖₂ + ‖η‖₂`.
    pub fn weak_norm(&self, h: f64) -> f64 {
        self.common(h) + self.rho.norm(&MetricSpec::l2(h)) + self.eta.norm(&MetricSpec::l2(h))
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self {
            xi: self.xi.scaled(s),
            pi: self.pi.scaled(s),
            nu: self.nu.iter().map(|v| v * s).collect(),
            rho: self.rho.scaled(s),
            eta: self.eta.scaled(s),
        }
    }

    /// Right-hand side of the stacked generalized equation.
    fn rhs(&self) -> Vec<f64> {
        let mut out = self.xi.as_slice().to_vec();
        out.extend(self.pi.as_slice());
        out.extend(&self.nu);
        out.extend(self.rho.as_slice());
        out.extend(self.eta.as_slice().iter().map(|v| -v));
        out
    }
}

/// Index bookkeeping for the stacked unknown `(x, u, p, λ)` and the rows
/// `(ξ, π, ν, ρ, cone)`; cone rows share indices with `λ`.
#[derive(Debug, Clone, Copy)]
struct Layout {
    n: usize,
    m: usize,
    k: usize,
    cells: usize,
}

impl Layout {
    fn x(&self, j: usize, i: usize) -> usize {
        j * self.n + i
    }
    fn u(&self, j: usize, i: usize) -> usize {
        (self.cells + 1) * self.n + j * self.m + i
    }
    fn p(&self, j: usize, i: usize) -> usize {
        (self.cells + 1) * self.n + self.cells * self.m + j * self.n + i
    }
    fn lam(&self, j: usize, l: usize) -> usize {
        2 * (self.cells + 1) * self.n + self.cells * self.m + j * self.k + l
    }
    fn dim(&self) -> usize {
        self.lam(self.cells, 0)
    }
    fn row_xi(&self, j: usize, i: usize) -> usize {
        j * self.n + i
    }
    fn row_pi(&self, j: usize, i: usize) -> usize {
        self.cells * self.n + j * self.n + i
    }
    fn row_nu(&self, r: usize) -> usize {
        2 * self.cells * self.n + r
    }
    fn row_rho(&self, j: usize, i: usize) -> usize {
        2 * self.cells * self.n + 2 * self.n + j * self.m + i
    }

    fn stack(&self, s: &DiscreteQuadruple) -> Vec<f64> {
        [s.x.as_slice(), s.u.as_slice(), s.p.as_slice(), s.lam.as_slice()].concat()
    }

    fn unstack(&self, z: &[f64]) -> DiscreteQuadruple {
        let (n, m, k, c) = (self.n, self.m, self.k, self.cells);
        let mut at = 0;
        let mut take = |len: usize| {
            let v = z[at..at + len].to_vec();
            at += len;
            v
        };
        let x = GridFn::from_vec(c + 1, n, take((c + 1) * n)).expect("layout");
        let u = GridFn::from_vec(c, m, take(c * m)).expect("layout");
        let p = GridFn::from_vec(c + 1, n, take((c + 1) * n)).expect("layout");
        let lam = GridFn::from_vec(c, k, take(c * k)).expect("layout");
        DiscreteQuadruple {
            h: 1.0 / c as f64,
            x,
            u,
            p,
            lam,
        }
    }
}

fn check_shape(ocp: &dyn MayerOcp, s: &DiscreteQuadruple) -> Result<Layout, MayerError> {
    let cells = s.u.rows();
    if cells == 0 {
        return Err(MayerError::Dimension {
            what: "cells",
            expected: 1,
            got: 0,
        });
    }
    let checks = [
        ("x rows", s.x.rows(), cells + 1),
        ("x dim", s.x.dim(), ocp.n()),
        ("u dim", s.u.dim(), ocp.m()),
        ("p rows", s.p.rows(), cells + 1),
        ("p dim", s.p.dim(), ocp.n()),
        ("lam rows", s.lam.rows(), cells),
        ("lam dim", s.lam.dim(), ocp.k()),
    ];
    for (what, got, expected) in checks {
        if got != expected {
            return Err(MayerError::Dimension {
                what,
                expected,
                got,
            });
        }
    }
    Ok(Layout {
        n: ocp.n(),
        m: ocp.m(),
        k: ocp.k(),
        cells,
    })
}

/// Explicit Euler state for the cellwise control `u`.
pub fn forward_simulate(ocp: &dyn MayerOcp, u: &GridFn, x0: &[f64]) -> Result<GridFn, MayerError> {
    let n = ocp.n();
    if x0.len() != n {
        return Err(MayerError::Dimension {
            what: "initial state",
            expected: n,
            got: x0.len(),
        });
    }
    let cells = u.rows();
    let h = 1.0 / cells as f64;
    let mut x = GridFn::zeros(cells + 1, n);
    x.row_mut(0).copy_from_slice(x0);
    for j in 0..cells {
        let fx = ocp.f(x.row(j), u.row(j));
        if fx.iter().any(|v| !v.is_finite()) {
            return Err(MayerError::Integration { cell: j });
        }
        let next: Vec<f64> = x.row(j).iter().zip(&fx).map(|(a, b)| a + h * b).collect();
        x.row_mut(j + 1).copy_from_slice(&next);
    }
    Ok(x)
}

/// Discrete adjoint `p_j = p_{j+1} + h f_x(x_j, u_j)ᵀ p_{j+1}` from
/// `p_N = ∇_{x1}φ`.
pub fn backward_adjoint(ocp: &dyn MayerOcp, x: &GridFn, u: &GridFn) -> GridFn {
    let n = ocp.n();
    let cells = u.rows();
    let h = 1.0 / cells as f64;
    let mut p = GridFn::zeros(cells + 1, n);
    let grad = ocp.phi_grad(x.row(0), x.row(cells));
    p.row_mut(cells).copy_from_slice(&grad[n..]);
    for j in (0..cells).rev() {
        let a = ocp.f_x(x.row(j), u.row(j));
        let pn = DVector::from_column_slice(p.row(j + 1));
        let pj = &pn + a.transpose() * &pn * h;
        p.row_mut(j).copy_from_slice(pj.as_slice());
    }
    p
}

/// Per-cell multipliers: least squares for `f_uᵀp_{j+1} + G_Aᵀλ_A = 0` on
/// the active constraints, clipped at zero.
pub fn recover_multipliers(ocp: &dyn MayerOcp, x: &GridFn, u: &GridFn, p: &GridFn) -> GridFn {
    let (m, k) = (ocp.m(), ocp.k());
    let cells = u.rows();
    let mut lam = GridFn::zeros(cells, k);
    for j in 0..cells {
        let g = ocp.g(u.row(j));
        let active: Vec<usize> = (0..k).filter(|&l| g[l].abs() <= ACTIVE_TOL).collect();
        if active.is_empty() {
            continue;
        }
        let hu = ocp.f_u(x.row(j), u.row(j)).transpose() * DVector::from_column_slice(p.row(j + 1));
        let gu = ocp.g_u(u.row(j));
        let a = DMatrix::from_fn(m, active.len(), |r, c| gu[(active[c], r)]);
        if let Ok(sol) = a.svd(true, true).solve(&(-hu), 1e-12) {
            for (c, &l) in active.iter().enumerate() {
                lam.set(j, l, sol[c].max(0.0));
            }
        }
    }
    lam
}

/// Completes a control to a quadruple: state from `x0` (the pinned state
/// under a fixed initial condition), adjoint, and multipliers.
pub fn complete_from_control(
    ocp: &dyn MayerOcp,
    u: &GridFn,
    x0: &[f64],
) -> Result<DiscreteQuadruple, MayerError> {
    let x0 = match ocp.boundary() {
        BoundaryMode::FixedInitial(v) => v,
        BoundaryMode::BothFree => x0.to_vec(),
    };
    let x = forward_simulate(ocp, u, &x0)?;
    let p = backward_adjoint(ocp, &x, u);
    let lam = recover_multipliers(ocp, &x, u, &p);
    Ok(DiscreteQuadruple {
        h: 1.0 / u.rows() as f64,
        x,
        u: u.clone(),
        p,
        lam,
    })
}

/// Discrete reduced objective `u ↦ φ(x_0, x_N)` along the Euler state.
pub fn reduced_objective(ocp: &dyn MayerOcp, u: &GridFn, x0: &[f64]) -> Result<f64, MayerError> {
    let x = forward_simulate(ocp, u, x0)?;
    Ok(ocp.phi(x.row(0), x.row(u.rows())))
}

/// Gradient of [`reduced_objective`] in `u` (free `x0` held fixed):
/// `h · f_u(x_j, u_j)ᵀ p_{j+1}`.
pub fn reduced_gradient(ocp: &dyn MayerOcp, u: &GridFn, x0: &[f64]) -> Result<GridFn, MayerError> {
    let x = forward_simulate(ocp, u, x0)?;
    let p = backward_adjoint(ocp, &x, u);
    let cells = u.rows();
    let h = 1.0 / cells as f64;
    let mut g = GridFn::zeros(cells, ocp.m());
    for j in 0..cells {
        let hu = ocp.f_u(x.row(j), u.row(j)).transpose() * DVector::from_column_slice(p.row(j + 1));
        g.row_mut(j).copy_from_slice((hu * h).as_slice());
    }
    Ok(g)
}

/// Assumption check: gradients of the active control constraints are
/// linearly independent in every cell. Returns the offending cells.
pub fn constraint_qualification_failures(ocp: &dyn MayerOcp, u: &GridFn) -> Vec<usize> {
    (0..u.rows())
        .filter(|&j| {
            let g = ocp.g(u.row(j));
            let active: Vec<usize> = (0..ocp.k()).filter(|&l| g[l].abs() <= ACTIVE_TOL).collect();
            if active.is_empty() {
                return false;
            }
            let gu = ocp.g_u(u.row(j)).select_rows(&active);
            rank(&gu, 1e-10) < active.len()
        })
        .collect()
}

/// The smooth part of the stacked discrete optimality system.
pub struct MayerMap<'a> {
    ocp: &'a dyn MayerOcp,
    lay: Layout,
}

impl SmoothMap for MayerMap<'_> {
    fn dim(&self) -> usize {
        self.lay.dim()
    }

    fn eval(&self, z: &[f64]) -> Result<Vec<f64>, GeneqError> {
        let (ocp, lay) = (self.ocp, self.lay);
        let (n, m, k, c) = (lay.n, lay.m, lay.k, lay.cells);
        let h = 1.0 / c as f64;
        let s = lay.unstack(z);
        let mut out = vec![0.0; lay.dim()];
        for j in 0..c {
            let (xj, uj) = (s.x.row(j), s.u.row(j));
            let fx = ocp.f(xj, uj);
            let a = ocp.f_x(xj, uj);
            let b = ocp.f_u(xj, uj);
            let pn = DVector::from_column_slice(s.p.row(j + 1));
            let hx = a.transpose() * &pn;
            let lj = DVector::from_column_slice(s.lam.row(j));
            let hu = b.transpose() * &pn + ocp.g_u(uj).transpose() * lj;
            for i in 0..n {
                out[lay.row_xi(j, i)] = -(s.x.get(j + 1, i) - xj[i]) / h + fx[i];
                out[lay.row_pi(j, i)] = (s.p.get(j + 1, i) - s.p.get(j, i)) / h + hx[i];
            }
            for i in 0..m {
                out[lay.row_rho(j, i)] = hu[i];
            }
            let g = ocp.g(uj);
            for l in 0..k {
                out[lay.lam(j, l)] = -g[l];
            }
        }
        let grad = ocp.phi_grad(s.x.row(0), s.x.row(c));
        for i in 0..n {
            out[lay.row_nu(i)] = match ocp.boundary() {
                BoundaryMode::BothFree => -s.p.get(0, i) - grad[i],
                BoundaryMode::FixedInitial(ref x0) => s.x.get(0, i) - x0[i],
            };
            out[lay.row_nu(n + i)] = s.p.get(c, i) - grad[n + i];
        }
        if out.iter().any(|v| !v.is_finite()) {
            return Err(GeneqError::Evaluation(
                "optimality system produced a non-finite value".into(),
            ));
        }
        Ok(out)
    }

    fn jacobian(&self, z: &[f64]) -> Result<SparseMatrix, GeneqError> {
        let (ocp, lay) = (self.ocp, self.lay);
        let (n, m, k, c) = (lay.n, lay.m, lay.k, lay.cells);
        let h = 1.0 / c as f64;
        let s = lay.unstack(z);
        let dim = lay.dim();
        let mut jac = SparseMatrix::zeros(dim, dim);
        for j in 0..c {
            let (xj, uj) = (s.x.row(j), s.u.row(j));
            let a = ocp.f_x(xj, uj);
            let b = ocp.f_u(xj, uj);
            let gu = ocp.g_u(uj);
            // Σ_i p_{j+1,i} ∇²f_i + Σ_l λ_l ∇²G_l (in w = (x, u)).
            let mut hw = DMatrix::zeros(n + m, n + m);
            for i in 0..n {
                let pi = s.p.get(j + 1, i);
                if pi != 0.0 {
                    hw += ocp.f_hessian(i, xj, uj) * pi;
                }
            }
            for l in 0..k {
                let ll = s.lam.get(j, l);
                if ll != 0.0 {
                    let mut gh = hw.view_mut((n, n), (m, m));
                    gh += ocp.g_hessian(l, uj) * ll;
                }
            }
            for i in 0..n {
                let r = lay.row_xi(j, i);
                jac.add(r, lay.x(j + 1, i), -1.0 / h);
                jac.add(r, lay.x(j, i), 1.0 / h);
                for q in 0..n {
                    jac.add(r, lay.x(j, q), a[(i, q)]);
                }
                for q in 0..m {
                    jac.add(r, lay.u(j, q), b[(i, q)]);
                }
                let r = lay.row_pi(j, i);
                jac.add(r, lay.p(j + 1, i), 1.0 / h);
                jac.add(r, lay.p(j, i), -1.0 / h);
                for q in 0..n {
                    jac.add(r, lay.p(j + 1, q), a[(q, i)]);
                    jac.add(r, lay.x(j, q), hw[(i, q)]);
                }
                for q in 0..m {
                    jac.add(r, lay.u(j, q), hw[(i, n + q)]);
                }
            }
            for i in 0..m {
                let r = lay.row_rho(j, i);
                for q in 0..n {
                    jac.add(r, lay.x(j, q), hw[(n + i, q)]);
                    jac.add(r, lay.p(j + 1, q), b[(q, i)]);
                }
                for q in 0..m {
                    jac.add(r, lay.u(j, q), hw[(n + i, n + q)]);
                }
                for l in 0..k {
                    jac.add(r, lay.lam(j, l), gu[(l, i)]);
                }
            }
            for l in 0..k {
                for q in 0..m {
                    jac.add(lay.lam(j, l), lay.u(j, q), -gu[(l, q)]);
                }
            }
        }
        let hphi = ocp.phi_hessian(s.x.row(0), s.x.row(c));
        for i in 0..n {
            let r0 = lay.row_nu(i);
            match ocp.boundary() {
                BoundaryMode::BothFree => {
                    jac.add(r0, lay.p(0, i), -1.0);
                    for q in 0..n {
                        jac.add(r0, lay.x(0, q), -hphi[(i, q)]);
                        jac.add(r0, lay.x(c, q), -hphi[(i, n + q)]);
                    }
                }
                BoundaryMode::FixedInitial(_) => jac.add(r0, lay.x(0, i), 1.0),
            }
            let r1 = lay.row_nu(n + i);
            jac.add(r1, lay.p(c, i), 1.0);
            for q in 0..n {
                jac.add(r1, lay.x(0, q), -hphi[(n + i, q)]);
                jac.add(r1, lay.x(c, q), -hphi[(n + i, n + q)]);
            }
        }
        Ok(jac)
    }
}

fn equation<'a>(ocp: &'a dyn MayerOcp, lay: Layout) -> Result<GeneralizedEquation<MayerMap<'a>>, MayerError> {
    let blocks = if lay.k > 0 {
        vec![ConeBlock {
            offset: lay.lam(0, 0),
            cone: ConeSpec::NonnegOrthantNormal(lay.cells * lay.k),
        }]
    } else {
        Vec::new()
    };
    Ok(GeneralizedEquation::new(MayerMap { ocp, lay }, blocks)?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PmpResidual {
    /// The smallest disturbance for which `s` solves the disturbed system
    /// (`η` is `G(u) − P_{N(λ)} G(u)` per cell).
    pub disturbance: OcpDisturbance,
    pub strong: f64,
    pub weak: f64,
    pub lambda_infeasible: bool,
}

pub fn pmp_residual(ocp: &dyn MayerOcp, s: &DiscreteQuadruple) -> Result<PmpResidual, MayerError> {
    let lay = check_shape(ocp, s)?;
    let (n, m, k, c) = (lay.n, lay.m, lay.k, lay.cells);
    let h = 1.0 / c as f64;
    let lambda_infeasible = s.lam.as_slice().iter().any(|&l| l < 0.0);
    let out = MayerMap { ocp, lay }.eval(&lay.stack(s))?;
    let mut d = OcpDisturbance::zero(ocp, c);
    for j in 0..c {
        for i in 0..n {
            d.xi.set(j, i, out[lay.row_xi(j, i)]);
            d.pi.set(j, i, out[lay.row_pi(j, i)]);
        }
        for i in 0..m {
            d.rho.set(j, i, out[lay.row_rho(j, i)]);
        }
        for l in 0..k {
            let g = -out[lay.lam(j, l)];
            let lam = s.lam.get(j, l);
            d.eta.set(j, l, if lam > 0.0 { g } else { g.max(0.0) });
        }
    }
    d.nu = (0..2 * n).map(|r| out[lay.row_nu(r)]).collect();
    let (strong, weak) = if lambda_infeasible {
        (f64::INFINITY, f64::INFINITY)
    } else {
        (d.strong_norm(h), d.weak_norm(h))
    };
    Ok(PmpResidual {
        disturbance: d,
        strong,
        weak,
        lambda_infeasible,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct MayerSolve {
    /// Final iterate when converged, best iterate otherwise.
    pub solution: DiscreteQuadruple,
    pub converged: bool,
    pub iterations: usize,
    /// Euclidean residual of the stacked system per iterate.
    pub history: Vec<f64>,
}

/// Josephy–Newton on the stacked system with the cellwise complementarity
/// cone. The Euclidean stopping tolerance is `tol / 5`, which bounds the
/// strong residual norm by `tol`.
pub fn solve_perturbed_pmp(
    ocp: &dyn MayerOcp,
    disturbance: &OcpDisturbance,
    start: &DiscreteQuadruple,
    tol: f64,
    max_iter: usize,
) -> Result<MayerSolve, MayerError> {
    let lay = check_shape(ocp, start)?;
    if start.lam.as_slice().iter().any(|&l| l < 0.0) {
        return Err(MayerError::InvalidOption(
            "start must have nonnegative multipliers".into(),
        ));
    }
    let geq = equation(ocp, lay)?;
    let rep = josephy_newton(
        &geq,
        &disturbance.rhs(),
        &lay.stack(start),
        &NewtonOptions::new(tol / 5.0, max_iter),
    )?;
    Ok(MayerSolve {
        solution: lay.unstack(&rep.solution),
        converged: rep.converged,
        iterations: rep.iterations,
        history: rep.history,
    })
}

pub fn solve_pmp(ocp: &dyn MayerOcp, start: &DiscreteQuadruple, tol: f64) -> Result<MayerSolve, MayerError> {
    let zero = OcpDisturbance::zero(ocp, start.cells());
    solve_perturbed_pmp(ocp, &zero, start, tol, 50)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MayerCoercivity {
    /// `min Ω` over the discretized `K_Δ` with unit normalization;
    /// `+inf` for a vacuous cone.
    pub c_delta: f64,
    pub delta: f64,
    /// Minimizing direction `(x(0)` when free`, u)`.
    pub direction: Option<Vec<f64>>,
    pub vacuous: bool,
    pub exact: bool,
}

/// Default `Δ`: a tenth of the largest multiplier, or 1 when all vanish.
pub fn default_delta(s: &DiscreteQuadruple) -> f64 {
    let max = s.lam.max_abs();
    if max > 0.0 {
        0.1 * max
    } else {
        1.0
    }
}

/// Matrices of the coercivity problem on the variables `v = (x(0)?, u)`:
/// the quadratic form, the normalization Gram matrix, and the constraint
/// rows of `K_Δ`. The state part of `w` is eliminated through the
/// linearized Euler dynamics.
struct CoercivityData {
    q: DMatrix<f64>,
    w: DMatrix<f64>,
    eq: DMatrix<f64>,
    ineq: DMatrix<f64>,
}

fn coercivity_data(ocp: &dyn MayerOcp, s: &DiscreteQuadruple, delta: f64) -> CoercivityData {
    let (n, m, k) = (ocp.n(), ocp.m(), ocp.k());
    let c = s.cells();
    let h = s.h;
    let free = matches!(ocp.boundary(), BoundaryMode::BothFree);
    let off = if free { n } else { 0 };
    let nv = off + c * m;
    // State sensitivities X_j (n × nv).
    let mut xs: Vec<DMatrix<f64>> = Vec::with_capacity(c + 1);
    let mut x0 = DMatrix::zeros(n, nv);
    if free {
        x0.view_mut((0, 0), (n, n)).fill_with_identity();
    }
    xs.push(x0);
    let mut q = DMatrix::zeros(nv, nv);
    for j in 0..c {
        let (xj, uj) = (s.x.row(j), s.u.row(j));
        let a = ocp.f_x(xj, uj);
        let b = ocp.f_u(xj, uj);
        let mut hw = DMatrix::zeros(n + m, n + m);
        for i in 0..n {
            let pi = s.p.get(j + 1, i);
            if pi != 0.0 {
                hw += ocp.f_hessian(i, xj, uj) * pi;
            }
        }
        for l in 0..k {
            let ll = s.lam.get(j, l);
            if ll != 0.0 {
                let mut gh = hw.view_mut((n, n), (m, m));
                gh += ocp.g_hessian(l, uj) * ll;
            }
        }
        let mut wj = DMatrix::zeros(n + m, nv);
        wj.view_mut((0, 0), (n, nv)).copy_from(&xs[j]);
        for i in 0..m {
            wj[(n + i, off + j * m + i)] = 1.0;
        }
        q += wj.transpose() * &hw * &wj * h;
        let mut next = &xs[j] + &a * &xs[j] * h;
        let mut cols = next.view_mut((0, off + j * m), (n, m));
        cols += &b * h;
        xs.push(next);
    }
    let mut xq = DMatrix::zeros(2 * n, nv);
    xq.view_mut((0, 0), (n, nv)).copy_from(&xs[0]);
    xq.view_mut((n, 0), (n, nv)).copy_from(&xs[c]);
    q += xq.transpose() * ocp.phi_hessian(s.x.row(0), s.x.row(c)) * &xq;

    let mut wd = DVector::from_element(nv, h);
    wd.rows_mut(0, off).fill(1.0);
    let w = DMatrix::from_diagonal(&wd);

    let mut eq_rows = Vec::new();
    let mut ineq_rows = Vec::new();
    for j in 0..c {
        let g = ocp.g(s.u.row(j));
        let gu = ocp.g_u(s.u.row(j));
        for l in 0..k {
            let mut row = vec![0.0; nv];
            for i in 0..m {
                row[off + j * m + i] = gu[(l, i)];
            }
            if s.lam.get(j, l) > delta {
                eq_rows.push(row);
            } else if g[l].abs() <= ACTIVE_TOL {
                ineq_rows.push(row);
            }
        }
    }
    let to_mat = |rows: &[Vec<f64>]| DMatrix::from_fn(rows.len(), nv, |r, col| rows[r][col]);
    CoercivityData {
        q: 0.5 * (&q + q.transpose()),
        w,
        eq: to_mat(&eq_rows),
        ineq: to_mat(&ineq_rows),
    }
}

/// Minimizes the discretized quadratic form over the extended critical
/// cone `K_Δ` with `|x(0)|² + ‖u‖₂² = 1` (`‖u‖₂² = 1` for a fixed initial
/// state).
pub fn coercivity_on_cone(
    ocp: &dyn MayerOcp,
    s: &DiscreteQuadruple,
    delta: Option<f64>,
) -> Result<MayerCoercivity, MayerError> {
    check_shape(ocp, s)?;
    let res = pmp_residual(ocp, s)?;
    if !(res.strong <= 1e-8) {
        return Err(MayerError::NotSolution {
            residual: res.strong,
        });
    }
    let delta = delta.unwrap_or_else(|| default_delta(s));
    if !(delta > 0.0) {
        return Err(MayerError::InvalidOption(format!("Delta must be positive, got {delta}")));
    }
    let data = coercivity_data(ocp, s, delta);
    let r = minimize_on_cone(&data.q, &data.w, &data.eq, &data.ineq);
    Ok(MayerCoercivity {
        c_delta: r.value,
        delta,
        direction: r.direction.map(|d| d.as_slice().to_vec()),
        vacuous: r.vacuous,
        exact: r.exact,
    })
}

/// Evaluates `Ω(v)` and the constraint violation of `v` for `K_Δ`; used to
/// audit coercivity certificates.
pub fn audit_direction(
    ocp: &dyn MayerOcp,
    s: &DiscreteQuadruple,
    delta: f64,
    v: &[f64],
) -> (f64, f64) {
    let data = coercivity_data(ocp, s, delta);
    let v = DVector::from_column_slice(v);
    let omega = v.dot(&(&data.q * &v));
    let eq_viol = if data.eq.nrows() > 0 { (&data.eq * &v).amax() } else { 0.0 };
    let ineq_viol = if data.ineq.nrows() > 0 {
        (&data.ineq * &v).max().max(0.0)
    } else {
        0.0
    };
    (omega, eq_viol.max(ineq_viol))
}

/// Which disturbance blocks a sweep draws at random.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DisturbanceBlocks {
    pub xi: bool,
    pub pi: bool,
    pub nu: bool,
    pub rho: bool,
    pub eta: bool,
}

impl DisturbanceBlocks {
    pub const ALL: Self = Self {
        xi: true,
        pi: true,
        nu: true,
        rho: true,
        eta: true,
    };
    pub const RHO: Self = Self {
        xi: false,
        pi: false,
        nu: false,
        rho: true,
        eta: false,
    };
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepOptions {
    pub directions: usize,
    pub blocks: DisturbanceBlocks,
    pub tol: f64,
    /// Solutions with `‖x − x̂‖_∞ + ‖u − û‖_∞` above this are excluded from
    /// the fit and listed in the experiment report.
    pub trust_radius: Option<f64>,
}

impl Default for SweepOptions {
    fn default() -> Self {
        Self {
            directions: 20,
            blocks: DisturbanceBlocks::ALL,
            tol: 1e-11,
            trust_radius: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MayerExperiment {
    pub records: Vec<PerturbationRecord>,
    /// Sample indices whose solution left the trust region.
    pub trust_region_binding: Vec<u64>,
}

/// Seeded random disturbance with the requested blocks, scaled to strong
/// norm `magnitude`.
pub fn draw_disturbance(
    ocp: &dyn MayerOcp,
    cells: usize,
    blocks: DisturbanceBlocks,
    seed: u64,
    sample: u64,
    magnitude: f64,
) -> OcpDisturbance {
    let mut rng = SampleRng::new(seed, sample);
    let mut d = OcpDisturbance::zero(ocp, cells);
    let mut fill = |on: bool, g: &mut [f64]| {
        if on {
            g.iter_mut().for_each(|v| *v = rng.uniform_in(-1.0, 1.0));
        }
    };
    fill(blocks.xi, d.xi.as_mut_slice());
    fill(blocks.pi, d.pi.as_mut_slice());
    fill(blocks.nu, &mut d.nu);
    fill(blocks.rho, d.rho.as_mut_slice());
    fill(blocks.eta, d.eta.as_mut_slice());
    let size = d.strong_norm(1.0 / cells as f64);
    if size > 0.0 {
        d.scaled(magnitude / size)
    } else {
        d
    }
}

/// Weak domain distance `‖Δx‖_{1,1} + ‖Δu‖₂ + ‖Δp‖_{1,1} + ‖Δλ‖₂`.
pub fn weak_domain_distance(a: &DiscreteQuadruple, b: &DiscreteQuadruple) -> f64 {
    let h = a.h;
    a.x.sub(&b.x).norm(&MetricSpec::w11(h))
        + a.u.sub(&b.u).norm(&MetricSpec::l2(h))
        + a.p.sub(&b.p).norm(&MetricSpec::w11(h))
        + a.lam.sub(&b.lam).norm(&MetricSpec::l2(h))
}

pub fn smsr_experiment(
    ocp: &dyn MayerOcp,
    s: &DiscreteQuadruple,
    seed: u64,
    magnitudes: &[f64],
    opts: &SweepOptions,
) -> Result<MayerExperiment, MayerError> {
    let res = pmp_residual(ocp, s)?;
    if !(res.strong <= 1e-8) {
        return Err(MayerError::NotSolution {
            residual: res.strong,
        });
    }
    let cells = s.cells();
    let h = s.h;
    let dirs = opts.directions;
    let outcomes = run_samples(magnitudes.len() * dirs, |idx| {
        let magnitude = magnitudes[idx / dirs];
        let d = draw_disturbance(ocp, cells, opts.blocks, seed, (idx % dirs) as u64, magnitude);
        let solved = solve_perturbed_pmp(ocp, &d, s, opts.tol, 30);
        let mut binding = false;
        let (dist, ok) = match solved {
            Ok(r) if r.converged => {
                let sol = &r.solution;
                if let Some(radius) = opts.trust_radius {
                    binding = sol.x.sub(&s.x).max_abs() + sol.u.sub(&s.u).max_abs() > radius;
                }
                (weak_domain_distance(sol, s), !binding)
            }
            _ => (f64::NAN, false),
        };
        (
            PerturbationRecord {
                sample_index: idx as u64,
                magnitude,
                weak_image_dist: d.weak_norm(h),
                weak_domain_dist: dist,
                strong_image_dist: d.strong_norm(h),
                solver_converged: ok,
            },
            binding,
        )
    });
    Ok(MayerExperiment {
        trust_region_binding: outcomes
            .iter()
            .filter(|(_, b)| *b)
            .map(|(r, _)| r.sample_index)
            .collect(),
        records: outcomes.into_iter().map(|(r, _)| r).collect(),
    })
}
