//! Normal cones of the closed convex sets used by the optimality mappings and
//! the distance of a point to them.

use nalgebra::{DMatrix, DVector};

use super::GeneqError;
use crate::linalg::{nnls, norm2};

/// Relative slack used when deciding whether a primal point lies on a
/// bound or inside a polytope.
const FEASIBILITY_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub enum ConeSpec {
    /// The set is the whole space, so its normal cone is `{0}` everywhere.
    Zero(usize),
    /// Normal cone of the nonnegative orthant `R^n_+`.
    NonnegOrthantNormal(usize),
    /// Normal cone of the box `[lo, hi]`.
    BoxNormal { lo: Vec<f64>, hi: Vec<f64> },
    /// Normal cone of the convex hull of `vertices`.
    PolytopeNormal { vertices: Vec<Vec<f64>> },
}

impl ConeSpec {
    pub fn box_normal(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self, GeneqError> {
        let cone = Self::BoxNormal { lo, hi };
        cone.validate()?;
        Ok(cone)
    }

    pub fn polytope(vertices: Vec<Vec<f64>>) -> Result<Self, GeneqError> {
        let cone = Self::PolytopeNormal { vertices };
        cone.validate()?;
        Ok(cone)
    }

    pub fn dim(&self) -> usize {
        match self {
            Self::Zero(n) | Self::NonnegOrthantNormal(n) => *n,
            Self::BoxNormal { lo, .. } => lo.len(),
            Self::PolytopeNormal { vertices } => vertices.first().map_or(0, Vec::len),
        }
    }

    pub fn validate(&self) -> Result<(), GeneqError> {
        match self {
            Self::Zero(_) | Self::NonnegOrthantNormal(_) => Ok(()),
            Self::BoxNormal { lo, hi } => {
                if lo.len() != hi.len() {
                    return Err(GeneqError::Dimension {
                        what: "box bounds",
                        expected: lo.len(),
                        got: hi.len(),
                    });
                }
                if lo.iter().zip(hi).any(|(a, b)| !(a < b)) {
                    return Err(GeneqError::InvalidCone(
                        "box bounds must satisfy lo < hi componentwise".into(),
                    ));
                }
                Ok(())
            }
            Self::PolytopeNormal { vertices } => {
                let Some(first) = vertices.first() else {
                    return Err(GeneqError::InvalidCone("polytope without vertices".into()));
                };
                if let Some(v) = vertices.iter().find(|v| v.len() != first.len()) {
                    return Err(GeneqError::Dimension {
                        what: "polytope vertex",
                        expected: first.len(),
                        got: v.len(),
                    });
                }
                Ok(())
            }
        }
    }
}

/// Outcome of a normal-cone distance evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ConeResidual {
    Distance(f64),
    /// The primal point lies outside the set, so the normal cone is empty.
    PrimalInfeasible,
}

impl ConeResidual {
    /// The distance, with `+inf` standing for an empty normal cone.
    pub fn value(self) -> f64 {
        match self {
            Self::Distance(d) => d,
            Self::PrimalInfeasible => f64::INFINITY,
        }
    }

    pub fn is_infeasible(self) -> bool {
        matches!(self, Self::PrimalInfeasible)
    }
}

fn near(a: f64, b: f64) -> bool {
    (a - b).abs() <= FEASIBILITY_TOL * (1.0 + b.abs())
}

/// Euclidean distance from `image_point` to the normal cone of the set at
/// `primal`.
pub fn cone_residual(
    cone: &ConeSpec,
    primal: &[f64],
    image_point: &[f64],
) -> Result<ConeResidual, GeneqError> {
    let n = cone.dim();
    for (what, got) in [("cone primal", primal.len()), ("cone image", image_point.len())] {
        if got != n {
            return Err(GeneqError::Dimension {
                what,
                expected: n,
                got,
            });
        }
    }
    let out = match cone {
        ConeSpec::Zero(_) => ConeResidual::Distance(norm2(image_point)),
        ConeSpec::NonnegOrthantNormal(_) => {
            if primal.iter().any(|&l| l < 0.0) {
                return Ok(ConeResidual::PrimalInfeasible);
            }
            let sq: f64 = primal
                .iter()
                .zip(image_point)
                .map(|(&l, &y)| if l > 0.0 { y * y } else { y.max(0.0).powi(2) })
                .sum();
            ConeResidual::Distance(sq.sqrt())
        }
        ConeSpec::BoxNormal { lo, hi } => {
            let mut sq = 0.0;
            for i in 0..n {
                let (u, y) = (primal[i], image_point[i]);
                let d = if near(u, lo[i]) {
                    y.max(0.0)
                } else if near(u, hi[i]) {
                    (-y).max(0.0)
                } else if u > lo[i] && u < hi[i] {
                    y.abs()
                } else {
                    return Ok(ConeResidual::PrimalInfeasible);
                };
                sq += d * d;
            }
            ConeResidual::Distance(sq.sqrt())
        }
        ConeSpec::PolytopeNormal { vertices } => {
            if !in_hull(vertices, primal) {
                return Ok(ConeResidual::PrimalInfeasible);
            }
            // Moreau: y = P_N(y) + P_T(y), so dist(y, N) = |P_T(y)| where
            // the tangent cone T is generated by the directions v_k - u.
            let gens: Vec<Vec<f64>> = vertices
                .iter()
                .map(|v| v.iter().zip(primal).map(|(a, b)| a - b).collect::<Vec<f64>>())
                .filter(|d| norm2(d) > FEASIBILITY_TOL)
                .collect();
            if gens.is_empty() {
                return Ok(ConeResidual::Distance(0.0));
            }
            let d = DMatrix::from_fn(n, gens.len(), |i, k| gens[k][i]);
            let y = DVector::from_column_slice(image_point);
            let c = nnls(&d, &y);
            ConeResidual::Distance((d * c).norm())
        }
    };
    Ok(out)
}

/// Membership in the convex hull: nonnegative weights summing to one that
/// reproduce the point, found by NNLS with a weighted sum row.
pub(crate) fn in_hull(vertices: &[Vec<f64>], point: &[f64]) -> bool {
    let n = point.len();
    let k = vertices.len();
    let scale = 1.0 + vertices.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()));
    let a = DMatrix::from_fn(n + 1, k, |i, j| if i < n { vertices[j][i] } else { scale });
    let mut b = DVector::zeros(n + 1);
    b.rows_mut(0, n).copy_from_slice(point);
    b[n] = scale;
    let c = nnls(&a, &b);
    (&a * c - b).norm() <= 1e-9 * scale
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn orthant(l: f64, g: f64) -> f64 {
        cone_residual(&ConeSpec::NonnegOrthantNormal(1), &[l], &[g])
            .unwrap()
            .value()
    }

    #[test]
    fn orthant_examples() {
        assert_eq!(orthant(0.0, -1.0), 0.0);
        assert_eq!(orthant(1.0, 0.0), 0.0);
        assert_eq!(orthant(1.0, -1.0), 1.0);
        assert_eq!(orthant(0.0, 2.0), 2.0);
    }

    #[test]
    fn negative_multiplier_is_flagged() {
        let r = cone_residual(&ConeSpec::NonnegOrthantNormal(2), &[1.0, -1e-3], &[0.0, 0.0]);
        assert_eq!(r, Ok(ConeResidual::PrimalInfeasible));
        assert_eq!(r.unwrap().value(), f64::INFINITY);
    }

    #[test]
    fn box_faces() {
        let cone = ConeSpec::box_normal(vec![-1.0], vec![1.0]).unwrap();
        let r = |u: f64, y: f64| cone_residual(&cone, &[u], &[y]).unwrap().value();
        assert_eq!(r(-1.0, -0.5), 0.0);
        assert_eq!(r(-1.0, 0.5), 0.5);
        assert_eq!(r(1.0, 0.5), 0.0);
        assert_eq!(r(1.0, -0.5), 0.5);
        assert_eq!(r(0.2, -0.5), 0.5);
        assert_eq!(r(1.5, 0.0), f64::INFINITY);
        assert!(ConeSpec::box_normal(vec![1.0], vec![1.0]).is_err());
    }

    #[test]
    fn polytope_matches_box_on_a_square() {
        let square = ConeSpec::polytope(vec![
            vec![-1.0, -1.0],
            vec![1.0, -1.0],
            vec![1.0, 1.0],
            vec![-1.0, 1.0],
        ])
        .unwrap();
        let boxed = ConeSpec::box_normal(vec![-1.0; 2], vec![1.0; 2]).unwrap();
        let cases = [
            ([-1.0, -1.0], [0.3, -0.2]),
            ([1.0, 0.0], [0.7, 0.4]),
            ([0.0, 0.0], [0.7, 0.4]),
            ([1.0, 1.0], [-0.5, 2.0]),
        ];
        for (u, y) in cases {
            let a = cone_residual(&square, &u, &y).unwrap().value();
            let b = cone_residual(&boxed, &u, &y).unwrap().value();
            assert!((a - b).abs() < 1e-10, "{u:?} {y:?}: {a} vs {b}");
        }
        assert!(cone_residual(&square, &[1.5, 0.0], &[0.0, 0.0])
            .unwrap()
            .is_infeasible());
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        assert!(cone_residual(&ConeSpec::Zero(2), &[0.0], &[0.0, 0.0]).is_err());
    }

    fn triangle() -> ConeSpec {
        ConeSpec::polytope(vec![vec![0.0, 0.0], vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap()
    }

    proptest! {
        #[test]
        fn residual_is_nonnegative_and_one_lipschitz(
            lam in proptest::collection::vec(prop_oneof![Just(0.0), 0.0f64..2.0], 3),
            y1 in proptest::collection::vec(-3.0f64..3.0, 3),
            y2 in proptest::collection::vec(-3.0f64..3.0, 3),
        ) {
            let cone = ConeSpec::NonnegOrthantNormal(3);
            let a = cone_residual(&cone, &lam, &y1).unwrap().value();
            let b = cone_residual(&cone, &lam, &y2).unwrap().value();
            let dy: Vec<f64> = y1.iter().zip(&y2).map(|(p, q)| p - q).collect();
            prop_assert!(a >= 0.0 && b >= 0.0);
            prop_assert!((a - b).abs() <= norm2(&dy) + 1e-12);
            // Zero exactly on the cone: project y1 onto N(lam) and re-evaluate.
            let proj: Vec<f64> = lam.iter().zip(&y1)
                .map(|(&l, &y)| if l > 0.0 { 0.0 } else { y.min(0.0) })
                .collect();
            prop_assert_eq!(cone_residual(&cone, &lam, &proj).unwrap().value(), 0.0);
        }

        #[test]
        fn polytope_residual_is_one_lipschitz(
            w in proptest::collection::vec(0.0f64..1.0, 3),
            y1 in proptest::collection::vec(-3.0f64..3.0, 2),
            y2 in proptest::collection::vec(-3.0f64..3.0, 2),
        ) {
            let s: f64 = w.iter().sum::<f64>().max(1e-9);
            let u = [w[1] / s, w[2] / s];
            let cone = triangle();
            let a = cone_residual(&cone, &u, &y1).unwrap().value();
            let b = cone_residual(&cone, &u, &y2).unwrap().value();
            let dy: Vec<f64> = y1.iter().zip(&y2).map(|(p, q)| p - q).collect();
            prop_assert!(a >= 0.0);
            prop_assert!((a - b).abs() <= norm2(&dy) + 1e-8);
        }
    }
}
