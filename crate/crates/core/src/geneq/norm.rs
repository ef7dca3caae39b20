//! Discrete norms on grid functions and finite vectors.
//!
//! Function-space norms use the left-endpoint rectangle rule with the grid
//! step of the [`MetricSpec`]; derivative terms use forward differences.
//! Vector-valued samples are measured pointwise by their Euclidean length.

use super::GeneqError;

#[derive(Debug, Clone, PartialEq)]
pub enum NormKind {
    L1,
    L2,
    Linf,
    /// `||v||_1 + ||v'||_1`
    W11,
    /// `||v||_inf + ||v'||_inf`
    W1inf,
    Euclidean,
    WeightedEuclidean(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricSpec {
    kind: NormKind,
    grid_step: f64,
}

impl MetricSpec {
    pub fn new(kind: NormKind, grid_step: f64) -> Result<Self, GeneqError> {
        match &kind {
            NormKind::Euclidean => {}
            NormKind::WeightedEuclidean(w) => {
                if w.iter().any(|&v| !(v > 0.0) || !v.is_finite()) {
                    return Err(GeneqError::InvalidMetric(
                        "weights must be strictly positive".into(),
                    ));
                }
            }
            _ => {
                if !(grid_step > 0.0) || !grid_step.is_finite() {
                    return Err(GeneqError::InvalidMetric(format!(
                        "grid step must be positive, got {grid_step}"
                    )));
                }
            }
        }
        Ok(Self { kind, grid_step })
    }

    pub fn euclidean() -> Self {
        Self {
            kind: NormKind::Euclidean,
            grid_step: 1.0,
        }
    }

    pub fn weighted(weights: Vec<f64>) -> Result<Self, GeneqError> {
        Self::new(NormKind::WeightedEuclidean(weights), 1.0)
    }

    pub fn l1(h: f64) -> Self {
        Self::new(NormKind::L1, h).expect("positive grid step")
    }

    pub fn l2(h: f64) -> Self {
        Self::new(NormKind::L2, h).expect("positive grid step")
    }

    pub fn linf() -> Self {
        Self {
            kind: NormKind::Linf,
            grid_step: 1.0,
        }
    }

    pub fn w11(h: f64) -> Self {
        Self::new(NormKind::W11, h).expect("positive grid step")
    }

    pub fn w1inf(h: f64) -> Self {
        Self::new(NormKind::W1inf, h).expect("positive grid step")
    }

    pub fn kind(&self) -> &NormKind {
        &self.kind
    }

    pub fn grid_step(&self) -> f64 {
        self.grid_step
    }

    /// Dual norm `sup { <z, x> : ||x|| <= 1 }` for the finite-vector kinds.
    pub fn dual(&self, values: &[f64]) -> Result<f64, GeneqError> {
        match &self.kind {
            NormKind::Euclidean => Ok(values.iter().map(|v| v * v).sum::<f64>().sqrt()),
            NormKind::WeightedEuclidean(w) => {
                check_len(w.len(), values.len())?;
                Ok(values
                    .iter()
                    .zip(w)
                    .map(|(v, wi)| v * v / wi)
                    .sum::<f64>()
                    .sqrt())
            }
            _ => Err(GeneqError::InvalidMetric(
                "dual norm is only defined for finite-vector kinds".into(),
            )),
        }
    }
}

fn check_len(expected: usize, got: usize) -> Result<(), GeneqError> {
    if expected != got {
        return Err(GeneqError::Dimension {
            what: "weights",
            expected,
            got,
        });
    }
    Ok(())
}

/// Norm of a scalar grid function or finite vector.
pub fn eval_norm(values: &[f64], spec: &MetricSpec) -> Result<f64, GeneqError> {
    eval_grid_norm(values, 1, spec)
}

/// Norm of a grid function whose samples are rows of length `dim` stored
/// row-major in `values`.
///
/// For the derivative kinds the samples are read as nodal values: the
/// function part sums all but the last node (left-endpoint rule on the
/// cells), and the derivative part uses the `len - 1` forward differences.
pub fn eval_grid_norm(values: &[f64], dim: usize, spec: &MetricSpec) -> Result<f64, GeneqError> {
    if values.is_empty() || dim == 0 {
        return Err(GeneqError::EmptyInput);
    }
    if values.len() % dim != 0 {
        return Err(GeneqError::Dimension {
            what: "grid samples",
            expected: dim * (values.len() / dim + 1),
            got: values.len(),
        });
    }
    let h = spec.grid_step;
    let pointwise = |row: &[f64]| row.iter().map(|v| v * v).sum::<f64>().sqrt();
    let rows: Vec<&[f64]> = values.chunks(dim).collect();
    let diffs = || {
        rows.windows(2).map(move |w| {
            w[1].iter()
                .zip(w[0])
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt()
                / h
        })
    };
    let value = match &spec.kind {
        NormKind::Euclidean => values.iter().map(|v| v * v).sum::<f64>().sqrt(),
        NormKind::WeightedEuclidean(w) => {
            check_len(w.len(), values.len())?;
            values
                .iter()
                .zip(w)
                .map(|(v, wi)| wi * v * v)
                .sum::<f64>()
                .sqrt()
        }
        NormKind::L1 => h * rows.iter().map(|r| pointwise(r)).sum::<f64>(),
        NormKind::L2 => (h * rows.iter().map(|r| pointwise(r).powi(2)).sum::<f64>()).sqrt(),
        NormKind::Linf => rows.iter().map(|r| pointwise(r)).fold(0.0, f64::max),
        NormKind::W11 => {
            let cells = rows.len().saturating_sub(1).max(1);
            let f = h * rows[..cells].iter().map(|r| pointwise(r)).sum::<f64>();
            f + h * diffs().sum::<f64>()
        }
        NormKind::W1inf => {
            let f = rows.iter().map(|r| pointwise(r)).fold(0.0, f64::max);
            f + diffs().fold(0.0, f64::max)
        }
    };
    Ok(value)
}
