//! Nonlinear programs `min φ(x)  s.t.  f(x) <= 0,  g(x) = 0` in finite
//! dimensions: KKT residuals, strict MFCQ and critical-cone coercivity
//! checks, perturbed KKT solves and strong sub-regularity sweeps.
//!
//! The disturbed KKT system for `s = (x, λ, y*)` is
//!
//! ```text
//!   ζ = ∇φ(x) + f'(x)ᵀλ + g'(x)ᵀy*
//!   ξ ∈ f(x) − N_{R^m_+}(λ)
//!   η = g(x)
//! ```
//!
//! and is solved as the generalized equation
//! `(ζ, −ξ, η) ∈ (∇L, −f, g)(s) + N(λ)` on the stacked variable `(x, λ, y*)`.

use microlp::{ComparisonOp, OptimizationDirection, Problem};
use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::conemin::minimize_on_cone;
use crate::geneq::{
    cone_residual, josephy_newton, run_samples, ConeBlock, ConeResidual, ConeSpec, GeneqError,
    GeneralizedEquation, MetricSpec, NewtonOptions, NormKind, PerturbationRecord, SmoothMap,
};
use crate::linalg::{null_space, SparseMatrix};
use crate::rng::SampleRng;

/// A constraint counts as active when `|f_i(x)|` is at most this.
pub const ACTIVE_TOL: f64 = 1e-9;
/// Step of the central differences used for missing Hessians.
pub const FD_STEP: f64 = 1e-5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NlpError {
    #[error("{what} returned a non-finite value at x = {x:?}")]
    Evaluation { what: String, x: Vec<f64> },
    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("Hessian of {what} is not symmetric (asymmetry {asym:e})")]
    AsymmetricHessian { what: String, asym: f64 },
    #[error("point is not a KKT point: residual {residual:e}")]
    NotKkt { residual: f64 },
    #[error("linear program failed: {0}")]
    Lp(String),
    #[error(transparent)]
    Geneq(#[from] GeneqError),
}

/// Problem data. Jacobians are `m × n` and `p × n`. Hessians are optional;
/// missing ones are approximated by central differences of the gradients.
pub trait NlpProblem: Sync {
    fn n(&self) -> usize;
    fn m(&self) -> usize;
    fn p(&self) -> usize;
    fn objective(&self, x: &[f64]) -> f64;
    fn objective_grad(&self, x: &[f64]) -> Vec<f64>;
    fn objective_hessian(&self, _x: &[f64]) -> Option<DMatrix<f64>> {
        None
    }
    fn ineq(&self, x: &[f64]) -> Vec<f64>;
    fn ineq_jacobian(&self, x: &[f64]) -> DMatrix<f64>;
    fn ineq_hessian(&self, _i: usize, _x: &[f64]) -> Option<DMatrix<f64>> {
        None
    }
    fn eq(&self, x: &[f64]) -> Vec<f64>;
    fn eq_jacobian(&self, x: &[f64]) -> DMatrix<f64>;
    fn eq_hessian(&self, _k: usize, _x: &[f64]) -> Option<DMatrix<f64>> {
        None
    }
}

/// `φ = ½xᵀQx + cᵀx`, `f = A x + a`, `g = E x + e`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticProgram {
    pub q: DMatrix<f64>,
    pub c: DVector<f64>,
    pub a: DMatrix<f64>,
    pub a0: DVector<f64>,
    pub e: DMatrix<f64>,
    pub e0: DVector<f64>,
}

impl QuadraticProgram {
    pub fn new(
        q: DMatrix<f64>,
        c: DVector<f64>,
        a: DMatrix<f64>,
        a0: DVector<f64>,
        e: DMatrix<f64>,
        e0: DVector<f64>,
    ) -> Result<Self, NlpError> {
        let n = c.len();
        let checks = [
            ("Q rows", q.nrows(), n),
            ("Q cols", q.ncols(), n),
            ("A cols", a.ncols(), n),
            ("A offset", a0.len(), a.nrows()),
            ("E cols", e.ncols(), n),
            ("E offset", e0.len(), e.nrows()),
        ];
        for (what, got, expected) in checks {
            if got != expected {
                return Err(NlpError::Dimension {
                    what,
                    expected,
                    got,
                });
            }
        }
        Ok(Self { q, c, a, a0, e, e0 })
    }

    /// Unconstrained quadratic.
    pub fn unconstrained(q: DMatrix<f64>, c: DVector<f64>) -> Result<Self, NlpError> {
        let n = c.len();
        Self::new(
            q,
            c,
            DMatrix::zeros(0, n),
            DVector::zeros(0),
            DMatrix::zeros(0, n),
            DVector::zeros(0),
        )
    }
}

impl NlpProblem for QuadraticProgram {
    fn n(&self) -> usize {
        self.c.len()
    }
    fn m(&self) -> usize {
        self.a.nrows()
    }
    fn p(&self) -> usize {
        self.e.nrows()
    }
    fn objective(&self, x: &[f64]) -> f64 {
        let x = DVector::from_column_slice(x);
        0.5 * x.dot(&(&self.q * &x)) + self.c.dot(&x)
    }
    fn objective_grad(&self, x: &[f64]) -> Vec<f64> {
        let x = DVector::from_column_slice(x);
        (&self.q * x + &self.c).as_slice().to_vec()
    }
    fn objective_hessian(&self, _x: &[f64]) -> Option<DMatrix<f64>> {
        Some(self.q.clone())
    }
    fn ineq(&self, x: &[f64]) -> Vec<f64> {
        (&self.a * DVector::from_column_slice(x) + &self.a0).as_slice().to_vec()
    }
    fn ineq_jacobian(&self, _x: &[f64]) -> DMatrix<f64> {
        self.a.clone()
    }
    fn ineq_hessian(&self, _i: usize, _x: &[f64]) -> Option<DMatrix<f64>> {
        Some(DMatrix::zeros(self.n(), self.n()))
    }
    fn eq(&self, x: &[f64]) -> Vec<f64> {
        (&self.e * DVector::from_column_slice(x) + &self.e0).as_slice().to_vec()
    }
    fn eq_jacobian(&self, _x: &[f64]) -> DMatrix<f64> {
        self.e.clone()
    }
    fn eq_hessian(&self, _k: usize, _x: &[f64]) -> Option<DMatrix<f64>> {
        Some(DMatrix::zeros(self.n(), self.n()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KktTriple {
    pub x: Vec<f64>,
    pub lambda: Vec<f64>,
    pub ystar: Vec<f64>,
}

impl KktTriple {
    pub fn stacked(&self) -> Vec<f64> {
        [self.x.as_slice(), &self.lambda, &self.ystar].concat()
    }

    pub fn from_stacked(z: &[f64], n: usize, m: usize) -> Self {
        Self {
            x: z[..n].to_vec(),
            lambda: z[n..n + m].to_vec(),
            ystar: z[n + m..].to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KktDisturbance {
    pub xi: Vec<f64>,
    pub eta: Vec<f64>,
    pub zeta: Vec<f64>,
}

impl KktDisturbance {
    pub fn zero(problem: &dyn NlpProblem) -> Self {
        Self {
            xi: vec![0.0; problem.m()],
            eta: vec![0.0; problem.p()],
            zeta: vec![0.0; problem.n()],
        }
    }
}

/// Norms used for the sub-regularity bookkeeping: `x_norm` measures
/// `x − x̂` (the weak domain norm) and `zeta_norm` measures the
/// stationarity disturbance. Multipliers and the remaining image blocks are
/// measured in the Euclidean norm.
#[derive(Debug, Clone, PartialEq)]
pub struct NlpMetrics {
    pub x_norm: MetricSpec,
    pub zeta_norm: MetricSpec,
}

impl Default for NlpMetrics {
    fn default() -> Self {
        Self {
            x_norm: MetricSpec::euclidean(),
            zeta_norm: MetricSpec::euclidean(),
        }
    }
}

impl NlpMetrics {
    pub fn domain_dist(&self, a: &KktTriple, b: &KktTriple) -> Result<f64, NlpError> {
        let dx = diff(&a.x, &b.x);
        Ok(crate::geneq::eval_norm_or_zero(&dx, &self.x_norm)?
            + norm(&diff(&a.lambda, &b.lambda))
            + norm(&diff(&a.ystar, &b.ystar)))
    }

    pub fn image_size(&self, d: &KktDisturbance) -> Result<f64, NlpError> {
        Ok(norm(&d.xi)
            + norm(&d.eta)
            + crate::geneq::eval_norm_or_zero(&d.zeta, &self.zeta_norm)?)
    }
}

fn diff(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn finite(what: &str, x: &[f64], v: Vec<f64>) -> Result<Vec<f64>, NlpError> {
    if v.iter().all(|a| a.is_finite()) {
        Ok(v)
    } else {
        Err(NlpError::Evaluation {
            what: what.to_string(),
            x: x.to_vec(),
        })
    }
}

fn check_point(problem: &dyn NlpProblem, s: &KktTriple) -> Result<(), NlpError> {
    for (what, expected, got) in [
        ("x", problem.n(), s.x.len()),
        ("lambda", problem.m(), s.lambda.len()),
        ("ystar", problem.p(), s.ystar.len()),
    ] {
        if expected != got {
            return Err(NlpError::Dimension {
                what,
                expected,
                got,
            });
        }
    }
    Ok(())
}

/// Central-difference Jacobian of a gradient, symmetrized.
fn fd_hessian(n: usize, x: &[f64], grad: impl Fn(&[f64]) -> Vec<f64>) -> DMatrix<f64> {
    let mut h = DMatrix::zeros(n, n);
    let mut xp = x.to_vec();
    for j in 0..n {
        let orig = xp[j];
        xp[j] = orig + FD_STEP;
        let gp = grad(&xp);
        xp[j] = orig - FD_STEP;
        let gm = grad(&xp);
        xp[j] = orig;
        for i in 0..n {
            h[(i, j)] = (gp[i] - gm[i]) / (2.0 * FD_STEP);
        }
    }
    0.5 * (&h + h.transpose())
}

pub fn objective_hessian(problem: &dyn NlpProblem, x: &[f64]) -> DMatrix<f64> {
    problem
        .objective_hessian(x)
        .unwrap_or_else(|| fd_hessian(problem.n(), x, |y| problem.objective_grad(y)))
}

pub fn ineq_hessian(problem: &dyn NlpProblem, i: usize, x: &[f64]) -> DMatrix<f64> {
    problem.ineq_hessian(i, x).unwrap_or_else(|| {
        fd_hessian(problem.n(), x, |y| {
            problem.ineq_jacobian(y).row(i).iter().copied().collect()
        })
    })
}

pub fn eq_hessian(problem: &dyn NlpProblem, k: usize, x: &[f64]) -> DMatrix<f64> {
    problem.eq_hessian(k, x).unwrap_or_else(|| {
        fd_hessian(problem.n(), x, |y| {
            problem.eq_jacobian(y).row(k).iter().copied().collect()
        })
    })
}

/// Hessian of the Lagrangian `φ + λᵀf + y*ᵀg` in `x`.
pub fn lagrangian_hessian(problem: &dyn NlpProblem, s: &KktTriple) -> DMatrix<f64> {
    let mut h = objective_hessian(problem, &s.x);
    for (i, &l) in s.lambda.iter().enumerate() {
        if l != 0.0 {
            h += ineq_hessian(problem, i, &s.x) * l;
        }
    }
    for (k, &y) in s.ystar.iter().enumerate() {
        if y != 0.0 {
            h += eq_hessian(problem, k, &s.x) * y;
        }
    }
    h
}

/// Gradient of the Lagrangian in `x`.
pub fn lagrangian_grad(problem: &dyn NlpProblem, s: &KktTriple) -> Result<Vec<f64>, NlpError> {
    let g = finite("objective gradient", &s.x, problem.objective_grad(&s.x))?;
    let mut out = DVector::from_vec(g);
    if problem.m() > 0 {
        out += problem.ineq_jacobian(&s.x).transpose() * DVector::from_column_slice(&s.lambda);
    }
    if problem.p() > 0 {
        out += problem.eq_jacobian(&s.x).transpose() * DVector::from_column_slice(&s.ystar);
    }
    finite("Lagrangian gradient", &s.x, out.as_slice().to_vec())
}

/// Checks evaluator dimensions and Hessian symmetry at a few seeded random
/// points of `[-1, 1]^n`.
pub fn validate_problem(problem: &dyn NlpProblem, seed: u64) -> Result<(), NlpError> {
    let (n, m, p) = (problem.n(), problem.m(), problem.p());
    for sample in 0..5 {
        let x = SampleRng::new(seed, sample).symmetric_vec(n);
        let dims = [
            ("objective gradient", problem.objective_grad(&x).len(), n),
            ("inequality values", problem.ineq(&x).len(), m),
            ("equality values", problem.eq(&x).len(), p),
            ("inequality Jacobian rows", problem.ineq_jacobian(&x).nrows(), m),
            ("inequality Jacobian cols", problem.ineq_jacobian(&x).ncols(), n),
            ("equality Jacobian rows", problem.eq_jacobian(&x).nrows(), p),
            ("equality Jacobian cols", problem.eq_jacobian(&x).ncols(), n),
        ];
        for (what, got, expected) in dims {
            if got != expected {
                return Err(NlpError::Dimension {
                    what,
                    expected,
                    got,
                });
            }
        }
        let mut hessians = vec![("objective".to_string(), objective_hessian(problem, &x))];
        hessians.extend((0..m).map(|i| (format!("f_{i}"), ineq_hessian(problem, i, &x))));
        hessians.extend((0..p).map(|k| (format!("g_{k}"), eq_hessian(problem, k, &x))));
        for (what, h) in hessians {
            let asym = (&h - h.transpose()).amax();
            if asym > 1e-8 * (1.0 + h.amax()) {
                return Err(NlpError::AsymmetricHessian { what, asym });
            }
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KktResidual {
    /// Distance of `f(x)` to `N_{R^m_+}(λ)`; `+inf` when `λ` has a negative entry.
    pub xi_dist: f64,
    pub eta_norm: f64,
    pub zeta_norm: f64,
    pub lambda_infeasible: bool,
}

impl KktResidual {
    pub fn total(&self) -> f64 {
        self.xi_dist + self.eta_norm + self.zeta_norm
    }
}

pub fn kkt_residual(problem: &dyn NlpProblem, s: &KktTriple) -> Result<KktResidual, NlpError> {
    check_point(problem, s)?;
    let f = finite("inequality constraints", &s.x, problem.ineq(&s.x))?;
    let g = finite("equality constraints", &s.x, problem.eq(&s.x))?;
    let zeta = lagrangian_grad(problem, s)?;
    let cone = cone_residual(&ConeSpec::NonnegOrthantNormal(problem.m()), &s.lambda, &f)?;
    Ok(KktResidual {
        xi_dist: cone.value(),
        eta_norm: norm(&g),
        zeta_norm: norm(&zeta),
        lambda_infeasible: matches!(cone, ConeResidual::PrimalInfeasible),
    })
}

/// The smooth part `(∇L, −f, g)` of the KKT generalized equation.
pub struct KktMap<'a> {
    problem: &'a dyn NlpProblem,
}

impl<'a> KktMap<'a> {
    pub fn new(problem: &'a dyn NlpProblem) -> Self {
        Self { problem }
    }
}

impl SmoothMap for KktMap<'_> {
    fn dim(&self) -> usize {
        self.problem.n() + self.problem.m() + self.problem.p()
    }

    fn eval(&self, z: &[f64]) -> Result<Vec<f64>, GeneqError> {
        let pr = self.problem;
        let s = KktTriple::from_stacked(z, pr.n(), pr.m());
        let wrap = |e: NlpError| GeneqError::Evaluation(e.to_string());
        let mut out = lagrangian_grad(pr, &s).map_err(wrap)?;
        out.extend(finite("inequality constraints", &s.x, pr.ineq(&s.x)).map_err(wrap)?.iter().map(|v| -v));
        out.extend(finite("equality constraints", &s.x, pr.eq(&s.x)).map_err(wrap)?);
        Ok(out)
    }

    fn jacobian(&self, z: &[f64]) -> Result<SparseMatrix, GeneqError> {
        let pr = self.problem;
        let (n, m, p) = (pr.n(), pr.m(), pr.p());
        let s = KktTriple::from_stacked(z, n, m);
        let h = lagrangian_hessian(pr, &s);
        let fj = pr.ineq_jacobian(&s.x);
        let gj = pr.eq_jacobian(&s.x);
        let mut jac = SparseMatrix::zeros(n + m + p, n + m + p);
        for i in 0..n {
            for j in 0..n {
                jac.add(i, j, h[(i, j)]);
            }
            for r in 0..m {
                jac.add(i, n + r, fj[(r, i)]);
                jac.add(n + r, i, -fj[(r, i)]);
            }
            for k in 0..p {
                jac.add(i, n + m + k, gj[(k, i)]);
                jac.add(n + m + k, i, gj[(k, i)]);
            }
        }
        Ok(jac)
    }
}

pub fn kkt_equation(problem: &dyn NlpProblem) -> Result<GeneralizedEquation<KktMap<'_>>, NlpError> {
    let blocks = if problem.m() > 0 {
        vec![ConeBlock {
            offset: problem.n(),
            cone: ConeSpec::NonnegOrthantNormal(problem.m()),
        }]
    } else {
        Vec::new()
    };
    Ok(GeneralizedEquation::new(KktMap::new(problem), blocks)?)
}

fn kkt_rhs(d: &KktDisturbance) -> Vec<f64> {
    let mut rhs = d.zeta.clone();
    rhs.extend(d.xi.iter().map(|v| -v));
    rhs.extend(&d.eta);
    rhs
}

#[derive(Debug, Clone, PartialEq)]
pub struct PerturbedKkt {
    pub triple: KktTriple,
    pub converged: bool,
    pub iterations: usize,
    pub history: Vec<f64>,
}

pub fn solve_perturbed_kkt(
    problem: &dyn NlpProblem,
    disturbance: &KktDisturbance,
    start: &KktTriple,
    tol: f64,
) -> Result<PerturbedKkt, NlpError> {
    check_point(problem, start)?;
    let blocks = [
        ("xi", problem.m(), &disturbance.xi),
        ("eta", problem.p(), &disturbance.eta),
        ("zeta", problem.n(), &disturbance.zeta),
    ];
    for (what, expected, v) in blocks {
        if v.len() != expected {
            return Err(NlpError::Dimension {
                what,
                expected,
                got: v.len(),
            });
        }
        if v.iter().any(|a| !a.is_finite()) {
            return Err(NlpError::Evaluation {
                what: format!("disturbance block {what}"),
                x: v.clone(),
            });
        }
    }
    let geq = kkt_equation(problem)?;
    let rep = josephy_newton(&geq, &kkt_rhs(disturbance), &start.stacked(), &NewtonOptions::new(tol, 50))?;
    Ok(PerturbedKkt {
        triple: KktTriple::from_stacked(&rep.solution, problem.n(), problem.m()),
        converged: rep.converged,
        iterations: rep.iterations,
        history: rep.history,
    })
}

fn require_kkt(problem: &dyn NlpProblem, s: &KktTriple, tol: f64) -> Result<(), NlpError> {
    let r = kkt_residual(problem, s)?;
    if !(r.total() <= tol) {
        return Err(NlpError::NotKkt { residual: r.total() });
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct MfcqCertificate {
    /// Multipliers of the inequality constraints (zero off the active set).
    pub lambda: Vec<f64>,
    pub ystar: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MfcqResult {
    pub holds: bool,
    /// Nonzero multiplier combination annihilating the active gradients,
    /// sign-feasible on the degenerate indices, when the condition fails.
    pub certificate: Option<MfcqCertificate>,
    pub active: Vec<usize>,
    pub degenerate: Vec<usize>,
}

/// Strict Mangasarian–Fromovitz condition at a KKT point: the only solution
/// of `Σ_{i∈I} λ_i ∇f_i + g'ᵀy* = 0` with `λ_i >= 0` on degenerate active
/// indices (`λ̂_i = 0`) is zero.
///
/// The free-sign gradients (strictly active `f_i` and all of `g`) must be
/// linearly independent; then the degenerate gradients are projected onto
/// the orthogonal complement of their span and a linear program maximizes
/// `Σμ` over `{P D μ = 0, μ >= 0, Σμ <= 1}`. A positive optimum is a
/// violating multiplier, normalized to unit 1-norm on the degenerate part.
pub fn check_strict_mfcq(
    problem: &dyn NlpProblem,
    s: &KktTriple,
    tol: f64,
) -> Result<MfcqResult, NlpError> {
    require_kkt(problem, s, tol)?;
    let (n, m, p) = (problem.n(), problem.m(), problem.p());
    let f = problem.ineq(&s.x);
    let active: Vec<usize> = (0..m).filter(|&i| f[i].abs() <= ACTIVE_TOL).collect();
    let degenerate: Vec<usize> = active
        .iter()
        .copied()
        .filter(|&i| s.lambda[i] <= ACTIVE_TOL)
        .collect();
    let strict: Vec<usize> = active
        .iter()
        .copied()
        .filter(|i| !degenerate.contains(i))
        .collect();
    let fj = problem.ineq_jacobian(&s.x);
    let gj = problem.eq_jacobian(&s.x);

    // Free-sign columns: strictly active f_i, then every g_k.
    let mut free_cols: Vec<DVector<f64>> = strict.iter().map(|&i| fj.row(i).transpose()).collect();
    free_cols.extend((0..p).map(|k| gj.row(k).transpose()));
    let assemble = |free_coef: &[f64], deg_coef: &[f64]| {
        let mut lambda = vec![0.0; m];
        let mut ystar = vec![0.0; p];
        for (c, &i) in strict.iter().enumerate() {
            lambda[i] = free_coef[c];
        }
        for k in 0..p {
            ystar[k] = free_coef[strict.len() + k];
        }
        for (c, &i) in degenerate.iter().enumerate() {
            lambda[i] = deg_coef[c];
        }
        MfcqCertificate { lambda, ystar }
    };
    let mut result = MfcqResult {
        holds: true,
        certificate: None,
        active: active.clone(),
        degenerate: degenerate.clone(),
    };

    let fmat = if free_cols.is_empty() {
        DMatrix::zeros(n, 0)
    } else {
        DMatrix::from_columns(&free_cols)
    };
    if fmat.ncols() > 0 {
        let nulls = null_space(&fmat, fmat.ncols(), 1e-10);
        if nulls.ncols() > 0 {
            let c = nulls.column(0);
            let scale = c.amax();
            let coef: Vec<f64> = c.iter().map(|v| v / scale).collect();
            result.holds = false;
            result.certificate = Some(assemble(&coef, &vec![0.0; degenerate.len()]));
            return Ok(result);
        }
    }
    if degenerate.is_empty() {
        return Ok(result);
    }

    let dmat = DMatrix::from_columns(
        &degenerate
            .iter()
            .map(|&i| fj.row(i).transpose())
            .collect::<Vec<_>>(),
    );
    // Project onto the orthogonal complement of span(F).
    let pd = if fmat.ncols() > 0 {
        let qf = fmat.clone().qr().q();
        &dmat - &qf * (qf.transpose() * &dmat)
    } else {
        dmat.clone()
    };
    let k = degenerate.len();
    // P D μ = 0  <=>  V_rᵀ μ = 0 for the numerically significant right
    // singular vectors; this keeps the LP free of round-off coefficients.
    let svd = pd.clone().svd(false, true);
    let v_t = svd.v_t.expect("requested V^T");
    let s_max = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    let mut lp = Problem::new(OptimizationDirection::Maximize);
    let mu: Vec<_> = (0..k).map(|_| lp.add_var(1.0, (0.0, f64::INFINITY))).collect();
    for (r, &sv) in svd.singular_values.iter().enumerate() {
        if sv > 1e-10 * s_max.max(1.0) {
            let coeffs: Vec<_> = (0..k).map(|c| (mu[c], v_t[(r, c)])).collect();
            lp.add_constraint(&coeffs, ComparisonOp::Eq, 0.0);
        }
    }
    let ones: Vec<_> = mu.iter().map(|&v| (v, 1.0)).collect();
    lp.add_constraint(&ones, ComparisonOp::Le, 1.0);
    let sol = lp
        .solve()
        .map_err(|e| NlpError::Lp(e.to_string()))?
        .into_solution()
        .map_err(|_| NlpError::Lp("solver interrupted".into()))?;
    if sol.objective() <= 1e-9 {
        return Ok(result);
    }
    let muv = DVector::from_iterator(k, mu.iter().map(|&v| sol.var_value(v)));
    // Free multipliers from F c = −D μ.
    let free_coef: Vec<f64> = if fmat.ncols() > 0 {
        let rhs = -(&dmat * &muv);
        fmat.clone()
            .svd(true, true)
            .solve(&rhs, 1e-12)
            .map_err(|e| NlpError::Lp(e.to_string()))?
            .as_slice()
            .to_vec()
    } else {
        Vec::new()
    };
    result.holds = false;
    result.certificate = Some(assemble(&free_coef, muv.as_slice()));
    Ok(result)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoercivityResult {
    /// `min Ω(d)` over the critical cone with unit weak norm; `+inf` for a
    /// vacuous cone. A non-positive value means the condition fails.
    pub c0: f64,
    pub direction: Option<Vec<f64>>,
    pub vacuous: bool,
    pub exact: bool,
}

/// Gram matrix of a finite-vector norm of the Euclidean family.
pub fn norm_gram(spec: &MetricSpec, n: usize) -> Result<DMatrix<f64>, NlpError> {
    match spec.kind() {
        NormKind::Euclidean => Ok(DMatrix::identity(n, n)),
        NormKind::WeightedEuclidean(w) => {
            if w.len() != n {
                return Err(NlpError::Dimension {
                    what: "norm weights",
                    expected: n,
                    got: w.len(),
                });
            }
            Ok(DMatrix::from_diagonal(&DVector::from_column_slice(w)))
        }
        _ => Err(NlpError::Geneq(GeneqError::InvalidMetric(
            "coercivity needs a Euclidean or weighted Euclidean norm".into(),
        ))),
    }
}

/// Minimizes `Ω(d) = dᵀ∇²L d` over `K = {φ'd <= 0, f_i'd <= 0 (i active),
/// g'd = 0}` with `‖d‖ = 1` in `norm`.
pub fn check_coercivity(
    problem: &dyn NlpProblem,
    s: &KktTriple,
    norm: &MetricSpec,
) -> Result<CoercivityResult, NlpError> {
    check_point(problem, s)?;
    let n = problem.n();
    let w = norm_gram(norm, n)?;
    let h = lagrangian_hessian(problem, s);
    let f = problem.ineq(&s.x);
    let fj = problem.ineq_jacobian(&s.x);
    let grad = problem.objective_grad(&s.x);
    let mut ineq_rows: Vec<Vec<f64>> = vec![grad];
    ineq_rows.extend(
        (0..problem.m())
            .filter(|&i| f[i].abs() <= ACTIVE_TOL)
            .map(|i| fj.row(i).iter().copied().collect()),
    );
    let ineq = DMatrix::from_fn(ineq_rows.len(), n, |i, j| ineq_rows[i][j]);
    let eq = problem.eq_jacobian(&s.x);
    let r = minimize_on_cone(&h, &w, &eq, &ineq);
    Ok(CoercivityResult {
        c0: r.value,
        direction: r.direction.map(|d| d.as_slice().to_vec()),
        vacuous: r.vacuous,
        exact: r.exact,
    })
}

/// Strong metric sub-regularity sweep: for every magnitude, `directions`
/// seeded random disturbances scaled to that image size are solved from the
/// reference triple. Sample `i` uses direction stream `i` of `seed`, with
/// magnitude `magnitudes[i / directions]`.
pub fn smsr_experiment(
    problem: &dyn NlpProblem,
    s: &KktTriple,
    seed: u64,
    magnitudes: &[f64],
    directions: usize,
    metrics: &NlpMetrics,
    tol: f64,
) -> Result<Vec<PerturbationRecord>, NlpError> {
    require_kkt(problem, s, 1e-8)?;
    let (n, m, p) = (problem.n(), problem.m(), problem.p());
    let samples = run_samples(magnitudes.len() * directions, |idx| {
        let magnitude = magnitudes[idx / directions];
        let mut rng = SampleRng::new(seed, (idx % directions) as u64);
        let raw = KktDisturbance {
            xi: rng.symmetric_vec(m),
            eta: rng.symmetric_vec(p),
            zeta: rng.symmetric_vec(n),
        };
        let size = metrics.image_size(&raw)?;
        let scale = if size > 0.0 { magnitude / size } else { 0.0 };
        let d = KktDisturbance {
            xi: raw.xi.iter().map(|v| v * scale).collect(),
            eta: raw.eta.iter().map(|v| v * scale).collect(),
            zeta: raw.zeta.iter().map(|v| v * scale).collect(),
        };
        let image = metrics.image_size(&d)?;
        let sol = solve_perturbed_kkt(problem, &d, s, tol);
        let (dist, ok) = match sol {
            Ok(r) if r.converged => (metrics.domain_dist(&r.triple, s)?, true),
            _ => (f64::NAN, false),
        };
        Ok(PerturbationRecord {
            sample_index: idx as u64,
            magnitude,
            weak_image_dist: image,
            weak_domain_dist: dist,
            strong_image_dist: image,
            solver_converged: ok,
        })
    });
    samples.into_iter().collect()
}
