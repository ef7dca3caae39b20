//! Built-in benchmark problems with known solutions.

use nalgebra::{DMatrix, DVector};

use crate::affine::{AffineOcp, ControlSet};
use crate::grid::{DiscreteQuadruple, GridFn};
use crate::mayer::{complete_from_control, BoundaryMode, MayerOcp};
use crate::nlp::{KktTriple, QuadraticProgram};
use crate::parabolic::{Field2D, Mesh, ParabolicOcp};

/// Identifier, module and one-line description of every built-in problem.
pub const REGISTRY: &[(&str, &str, &str)] = &[
    (
        "p1-quadratic-nlp",
        "nlp-kkt",
        "min x1^2 + x2^2 s.t. 1 - x1 - x2 <= 0; KKT point (0.5, 0.5), lambda = 1",
    ),
    (
        "p1-duplicated-constraint",
        "nlp-kkt",
        "p1 with its constraint listed twice; strict MFCQ fails at lambda = (1, 0)",
    ),
    (
        "p2-energy-mayer",
        "ocp-mayer",
        "x1' = u, x2' = u^2, min x2(1), |u| <= 1, x(0) = 0; optimal u = 0",
    ),
    (
        "p3-bangbang",
        "ocp-affine",
        "x' = u, min int (t - 1/2) u dt, |u| <= 1; single switch at t = 1/2",
    ),
    (
        "p3-tangential",
        "ocp-affine",
        "p3 with switching function (t - 1/2)^2; the switching-function growth condition fails",
    ),
    (
        "p4-parabolic-bang",
        "parabolic-1d",
        "heat equation with control gradient x - 1/2, |u| <= 1; bang-bang with interface at x = 1/2",
    ),
    (
        "heat-analytic",
        "parabolic-1d",
        "uncontrolled heat equation with exact solution exp(-pi^2 t) sin(pi x)",
    ),
];

pub fn lookup(id: &str) -> Option<(&'static str, &'static str, &'static str)> {
    REGISTRY.iter().copied().find(|(name, _, _)| *name == id)
}

/// `min τ(x₁² + x₂²)` subject to `1 − x₁ − x₂ <= 0`.
pub fn p1_quadratic(tau: f64) -> QuadraticProgram {
    QuadraticProgram::new(
        DMatrix::identity(2, 2) * (2.0 * tau),
        DVector::zeros(2),
        DMatrix::from_row_slice(1, 2, &[-1.0, -1.0]),
        DVector::from_vec(vec![1.0]),
        DMatrix::zeros(0, 2),
        DVector::zeros(0),
    )
    .expect("static problem data")
}

/// KKT point of [`p1_quadratic`] with `τ = 1`.
pub fn p1_kkt() -> KktTriple {
    KktTriple {
        x: vec![0.5, 0.5],
        lambda: vec![1.0],
        ystar: vec![],
    }
}

/// [`p1_quadratic`] with its single constraint listed twice.
pub fn p1_duplicated() -> QuadraticProgram {
    QuadraticProgram::new(
        DMatrix::identity(2, 2) * 2.0,
        DVector::zeros(2),
        DMatrix::from_row_slice(2, 2, &[-1.0, -1.0, -1.0, -1.0]),
        DVector::from_vec(vec![1.0, 1.0]),
        DMatrix::zeros(0, 2),
        DVector::zeros(0),
    )
    .expect("static problem data")
}

/// KKT point of [`p1_duplicated`] putting all weight on the first copy.
pub fn p1_duplicated_kkt() -> KktTriple {
    KktTriple {
        x: vec![0.5, 0.5],
        lambda: vec![1.0, 0.0],
        ystar: vec![],
    }
}

/// `ẋ₁ = u`, `ẋ₂ = u²`, `x(0) = 0`, `|u| <= 1` written as
/// `G = (u − 1, −u − 1)`, objective `φ = a·x₁(1) + b·x₂(1)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnergyMayer {
    pub a: f64,
    pub b: f64,
}

impl EnergyMayer {
    pub fn new(a: f64, b: f64) -> Self {
        Self { a, b }
    }

    /// `φ = x₂(1)`, optimal control `u ≡ 0`.
    pub fn p2() -> Self {
        Self::new(0.0, 1.0)
    }

    /// Unconstrained stationary control `−a / (2b)`, clipped to `[−1, 1]`.
    pub fn interior_control(&self) -> f64 {
        if self.b == 0.0 {
            0.0
        } else {
            (-self.a / (2.0 * self.b)).clamp(-1.0, 1.0)
        }
    }

    /// Discrete stationary point on `cells` cells.
    pub fn reference(&self, cells: usize) -> DiscreteQuadruple {
        let u = GridFn::constant(cells, &[self.interior_control()]);
        complete_from_control(self, &u, &[0.0, 0.0]).expect("bounded dynamics")
    }
}

impl MayerOcp for EnergyMayer {
    fn n(&self) -> usize {
        2
    }
    fn m(&self) -> usize {
        1
    }
    fn k(&self) -> usize {
        2
    }
    fn boundary(&self) -> BoundaryMode {
        BoundaryMode::FixedInitial(vec![0.0, 0.0])
    }
    fn phi(&self, _x0: &[f64], x1: &[f64]) -> f64 {
        self.a * x1[0] + self.b * x1[1]
    }
    fn phi_grad(&self, _x0: &[f64], _x1: &[f64]) -> Vec<f64> {
        vec![0.0, 0.0, self.a, self.b]
    }
    fn phi_hessian(&self, _x0: &[f64], _x1: &[f64]) -> DMatrix<f64> {
        DMatrix::zeros(4, 4)
    }
    fn f(&self, _x: &[f64], u: &[f64]) -> Vec<f64> {
        vec![u[0], u[0] * u[0]]
    }
    fn f_x(&self, _x: &[f64], _u: &[f64]) -> DMatrix<f64> {
        DMatrix::zeros(2, 2)
    }
    fn f_u(&self, _x: &[f64], u: &[f64]) -> DMatrix<f64> {
        DMatrix::from_row_slice(2, 1, &[1.0, 2.0 * u[0]])
    }
    fn f_hessian(&self, i: usize, _x: &[f64], _u: &[f64]) -> DMatrix<f64> {
        let mut h = DMatrix::zeros(3, 3);
        if i == 1 {
            h[(2, 2)] = 2.0;
        }
        h
    }
    fn g(&self, u: &[f64]) -> Vec<f64> {
        vec![u[0] - 1.0, -u[0] - 1.0]
    }
    fn g_u(&self, _u: &[f64]) -> DMatrix<f64> {
        DMatrix::from_row_slice(2, 1, &[1.0, -1.0])
    }
    fn g_hessian(&self, _l: usize, _u: &[f64]) -> DMatrix<f64> {
        DMatrix::zeros(1, 1)
    }
}

/// `ẋ = u`, `x(0) = 0`, `|u| <= 1` on `[0, 1]`, cost
/// `∫ state_weight·x²/2 + d(t)·u dt`.
#[derive(Debug, Clone, Copy)]
pub struct Integrator {
    pub d: fn(f64) -> f64,
    pub state_weight: f64,
    pub declared_lq: bool,
}

impl Integrator {
    /// `d(t) = t − 1/2`: `σ̂(t) = t − 1/2`, one switch from `+1` to `−1`.
    pub fn p3() -> Self {
        Self {
            d: |t| t - 0.5,
            state_weight: 0.0,
            declared_lq: true,
        }
    }

    /// `d(t) = 1/2 − t`.
    pub fn reversed() -> Self {
        Self {
            d: |t| 0.5 - t,
            ..Self::p3()
        }
    }

    /// `d ≡ 0`: every admissible control is stationary.
    pub fn zero_cost() -> Self {
        Self {
            d: |_| 0.0,
            ..Self::p3()
        }
    }

    /// `d(t) = (t − 1/2)²`: the switching function touches zero tangentially.
    pub fn tangential() -> Self {
        Self {
            d: |t| (t - 0.5) * (t - 0.5),
            ..Self::p3()
        }
    }

    /// `d ≡ 0` with running cost `weight·x²/2`.
    pub fn with_state_cost(weight: f64) -> Self {
        Self {
            d: |_| 0.0,
            state_weight: weight,
            declared_lq: true,
        }
    }
}

impl AffineOcp for Integrator {
    fn n(&self) -> usize {
        1
    }
    fn m(&self) -> usize {
        1
    }
    fn x0(&self) -> Vec<f64> {
        vec![0.0]
    }
    fn control_set(&self) -> ControlSet {
        ControlSet::interval(-1.0, 1.0)
    }
    fn state_bound(&self) -> f64 {
        2.0 + self.state_weight
    }
    fn linear_quadratic(&self) -> bool {
        self.declared_lq
    }
    fn a(&self, _t: f64, _x: &[f64]) -> Vec<f64> {
        vec![0.0]
    }
    fn a_x(&self, _t: f64, _x: &[f64]) -> DMatrix<f64> {
        DMatrix::zeros(1, 1)
    }
    fn b(&self, _t: f64, _x: &[f64]) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, 1.0)
    }
    fn w(&self, _t: f64, x: &[f64]) -> f64 {
        0.5 * self.state_weight * x[0] * x[0]
    }
    fn w_x(&self, _t: f64, x: &[f64]) -> Vec<f64> {
        vec![self.state_weight * x[0]]
    }
    fn d(&self, t: f64, _x: &[f64]) -> Vec<f64> {
        vec![(self.d)(t)]
    }
    fn h_xx(&self, _t: f64, _x: &[f64], _u: &[f64], _p: &[f64]) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, self.state_weight)
    }
}

/// `ẋ₁ = −x₁ + u`, `ẋ₂ = x₁² + u²`, `x(0) = (1, 0)`, `min x₂(1)`,
/// `|u| <= 5` (inactive): a smooth interior-control problem.
#[derive(Debug, Clone, Copy)]
pub struct LqMayer;

impl LqMayer {
    /// Quadruple completed from `u ≡ 0`, a start for Newton.
    pub fn reference_guess(&self, cells: usize) -> DiscreteQuadruple {
        complete_from_control(self, &GridFn::zeros(cells, 1), &[1.0, 0.0]).expect("bounded dynamics")
    }
}

impl MayerOcp for LqMayer {
    fn n(&self) -> usize {
        2
    }
    fn m(&self) -> usize {
        1
    }
    fn k(&self) -> usize {
        2
    }
    fn boundary(&self) -> BoundaryMode {
        BoundaryMode::FixedInitial(vec![1.0, 0.0])
    }
    fn phi(&self, _x0: &[f64], x1: &[f64]) -> f64 {
        x1[1]
    }
    fn phi_grad(&self, _x0: &[f64], _x1: &[f64]) -> Vec<f64> {
        vec![0.0, 0.0, 0.0, 1.0]
    }
    fn phi_hessian(&self, _x0: &[f64], _x1: &[f64]) -> DMatrix<f64> {
        DMatrix::zeros(4, 4)
    }
    fn f(&self, x: &[f64], u: &[f64]) -> Vec<f64> {
        vec![-x[0] + u[0], x[0] * x[0] + u[0] * u[0]]
    }
    fn f_x(&self, x: &[f64], _u: &[f64]) -> DMatrix<f64> {
        DMatrix::from_row_slice(2, 2, &[-1.0, 0.0, 2.0 * x[0], 0.0])
    }
    fn f_u(&self, _x: &[f64], u: &[f64]) -> DMatrix<f64> {
        DMatrix::from_row_slice(2, 1, &[1.0, 2.0 * u[0]])
    }
    fn f_hessian(&self, i: usize, _x: &[f64], _u: &[f64]) -> DMatrix<f64> {
        let mut h = DMatrix::zeros(3, 3);
        if i == 1 {
            h[(0, 0)] = 2.0;
            h[(2, 2)] = 2.0;
        }
        h
    }
    fn g(&self, u: &[f64]) -> Vec<f64> {
        vec![u[0] - 5.0, -u[0] - 5.0]
    }
    fn g_u(&self, _u: &[f64]) -> DMatrix<f64> {
        DMatrix::from_row_slice(2, 1, &[1.0, -1.0])
    }
    fn g_hessian(&self, _l: usize, _u: &[f64]) -> DMatrix<f64> {
        DMatrix::zeros(1, 1)
    }
}

/// Heat equation on `(0, 1) × (0, 1)` with `y₀ = amplitude·sin πx`; with no
/// control and the default flags the solution is
/// `amplitude·exp(−π²t) sin πx`. The flags switch on a cubic nonlinearity,
/// the tracking-free cost `L₀ = y` and the control weight `g ≡ 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HeatAnalytic {
    pub amplitude: f64,
    pub cubic: bool,
    pub unit_source: bool,
    pub unit_control_weight: bool,
}

impl Default for HeatAnalytic {
    fn default() -> Self {
        Self {
            amplitude: 1.0,
            cubic: false,
            unit_source: false,
            unit_control_weight: false,
        }
    }
}

impl ParabolicOcp for HeatAnalytic {
    fn diffusion(&self, _x: f64) -> f64 {
        1.0
    }
    fn f(&self, _x: f64, _t: f64, y: f64) -> f64 {
        if self.cubic { y * y * y } else { 0.0 }
    }
    fn f_y(&self, _x: f64, _t: f64, y: f64) -> f64 {
        if self.cubic { 3.0 * y * y } else { 0.0 }
    }
    fn f_yy(&self, _x: f64, _t: f64, y: f64) -> f64 {
        if self.cubic { 6.0 * y } else { 0.0 }
    }
    fn l0(&self, _x: f64, _t: f64, y: f64) -> f64 {
        if self.unit_source { y } else { 0.0 }
    }
    fn l0_y(&self, _x: f64, _t: f64, _y: f64) -> f64 {
        if self.unit_source { 1.0 } else { 0.0 }
    }
    fn l0_yy(&self, _x: f64, _t: f64, _y: f64) -> f64 {
        0.0
    }
    fn g(&self, _x: f64, _t: f64) -> f64 {
        if self.unit_control_weight { 1.0 } else { 0.0 }
    }
    fn u_a(&self, _x: f64, _t: f64) -> f64 {
        -1.0
    }
    fn u_b(&self, _x: f64, _t: f64) -> f64 {
        1.0
    }
    fn y0(&self, x: f64) -> f64 {
        self.amplitude * (std::f64::consts::PI * x).sin()
    }
}

/// Heat equation with cost `∫ (x − ½) u`, `|u| <= 1`, `y₀ = sin πx`: the
/// adjoint vanishes and the optimal control is `+1` for `x < ½`, `−1` for
/// `x > ½`. The nonlinear variant adds `f = y³` and the tracking term
/// `½(y − ½ sin πx)²`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ParabolicBang {
    pub nonlinear: bool,
}

impl ParabolicBang {
    pub fn nonlinear() -> Self {
        Self { nonlinear: true }
    }

    /// The optimal control of the linear problem averaged over the dual
    /// cells of the space mesh (the node at `x = ½` gets 0).
    pub fn reference_control(&self, mesh: Mesh) -> Field2D {
        let hx = mesh.hx();
        mesh.cell_fn(|x, _| {
            let below = ((0.5 - (x - 0.5 * hx)) / hx).clamp(0.0, 1.0);
            2.0 * below - 1.0
        })
    }

    fn target(x: f64) -> f64 {
        0.5 * (std::f64::consts::PI * x).sin()
    }
}

impl ParabolicOcp for ParabolicBang {
    fn diffusion(&self, _x: f64) -> f64 {
        1.0
    }
    fn f(&self, _x: f64, _t: f64, y: f64) -> f64 {
        if self.nonlinear { y * y * y } else { 0.0 }
    }
    fn f_y(&self, _x: f64, _t: f64, y: f64) -> f64 {
        if self.nonlinear { 3.0 * y * y } else { 0.0 }
    }
    fn f_yy(&self, _x: f64, _t: f64, y: f64) -> f64 {
        if self.nonlinear { 6.0 * y } else { 0.0 }
    }
    fn l0(&self, x: f64, _t: f64, y: f64) -> f64 {
        if self.nonlinear { 0.5 * (y - Self::target(x)).powi(2) } else { 0.0 }
    }
    fn l0_y(&self, x: f64, _t: f64, y: f64) -> f64 {
        if self.nonlinear { y - Self::target(x) } else { 0.0 }
    }
    fn l0_yy(&self, _x: f64, _t: f64, _y: f64) -> f64 {
        if self.nonlinear { 1.0 } else { 0.0 }
    }
    fn g(&self, x: f64, _t: f64) -> f64 {
        x - 0.5
    }
    fn u_a(&self, _x: f64, _t: f64) -> f64 {
        -1.0
    }
    fn u_b(&self, _x: f64, _t: f64) -> f64 {
        1.0
    }
    fn y0(&self, x: f64) -> f64 {
        (std::f64::consts::PI * x).sin()
    }
}
