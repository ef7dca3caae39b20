//! Two-metric regularity machinery shared by every problem class: discrete
//! norms, normal-cone residuals, the Josephy–Newton solver and the fit of
//! empirical regularity constants.

pub mod cone;
pub mod fit;
pub mod newton;
pub mod norm;

use rayon::prelude::*;
use thiserror::Error;

pub use cone::{cone_residual, ConeResidual, ConeSpec};
pub use fit::{
    fit_regularity, linear_fit, lipschitz_envelope, usable_records, PerturbationRecord,
    RegularityFit, DEFAULT_MIN_DIST,
};
pub use newton::{
    josephy_newton, ConeBlock, FnMap, GeneralizedEquation, NewtonOptions, NewtonReport, SmoothMap,
};
pub use norm::{eval_grid_norm, eval_norm, MetricSpec, NormKind};

use crate::linalg::norm2;
use crate::rng::SampleRng;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeneqError {
    #[error("empty input")]
    EmptyInput,
    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("invalid metric: {0}")]
    InvalidMetric(String),
    #[error("invalid cone: {0}")]
    InvalidCone(String),
    #[error("unsupported cone: {0}")]
    UnsupportedCone(String),
    #[error("invalid option: {0}")]
    InvalidOption(String),
    #[error("linearized subproblem at iterate {iterate} is singular")]
    SingularSubproblem { iterate: usize },
    #[error("evaluation failed: {0}")]
    Evaluation(String),
    #[error("fit needs at least 5 usable records, found {usable}")]
    TooFewPoints { usable: usize },
    #[error("degenerate fit: {0}")]
    DegenerateFit(String),
}

/// Like [`eval_norm`], but an empty vector (an absent block) has norm 0.
pub fn eval_norm_or_zero(values: &[f64], spec: &MetricSpec) -> Result<f64, GeneqError> {
    if values.is_empty() {
        Ok(0.0)
    } else {
        eval_norm(values, spec)
    }
}

/// Runs `count` independent samples in parallel and returns the results in
/// sample-index order.
pub fn run_samples<T, F>(count: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    (0..count).into_par_iter().map(f).collect()
}

/// Strong metric sub-regularity sweep for a finite-dimensional generalized
/// equation with Euclidean metrics: for every magnitude and direction, the
/// right-hand side `y_ref + d` with `|d| = magnitude` and `d` along a seeded
/// random direction is solved from `x_ref`, and the deviation is recorded.
pub fn smsr_sweep<M: SmoothMap>(
    geq: &GeneralizedEquation<M>,
    x_ref: &[f64],
    y_ref: &[f64],
    seed: u64,
    magnitudes: &[f64],
    directions: usize,
    opts: &NewtonOptions,
) -> Vec<PerturbationRecord> {
    run_samples(magnitudes.len() * directions, |idx| {
        let magnitude = magnitudes[idx / directions];
        let mut rng = SampleRng::new(seed, (idx % directions) as u64);
        let dir = rng.symmetric_vec(x_ref.len());
        let len = norm2(&dir).max(f64::MIN_POSITIVE);
        let d: Vec<f64> = dir.iter().map(|v| magnitude * v / len).collect();
        let rhs: Vec<f64> = y_ref.iter().zip(&d).map(|(a, b)| a + b).collect();
        let rep = josephy_newton(geq, &rhs, x_ref, opts);
        let (dist, ok) = match rep {
            Ok(r) if r.converged => {
                let dx: Vec<f64> = r.solution.iter().zip(x_ref).map(|(a, b)| a - b).collect();
                (norm2(&dx), true)
            }
            _ => (f64::NAN, false),
        };
        PerturbationRecord {
            sample_index: idx as u64,
            magnitude,
            weak_image_dist: magnitude,
            weak_domain_dist: dist,
            strong_image_dist: magnitude,
            solver_converged: ok,
        }
    })
}
