//! Minimum of a quadratic form over a polyhedral cone intersected with an
//! ellipsoidal unit sphere:
//!
//! `min dᵀQd  s.t.  E d = 0,  A d <= 0,  dᵀWd = 1`.
//!
//! At a minimizer whose active inequalities are `S`, the direction is a
//! generalized eigenvector of the pencil `(Q, W)` restricted to the subspace
//! `{E d = 0, A_S d = 0}`. Small inequality systems are solved exactly by
//! enumerating every `S`; larger ones fall back to an active-set descent.

use microlp::{ComparisonOp, OptimizationDirection, Problem};
use nalgebra::{DMatrix, DVector};

use crate::linalg::null_space;

/// Above this many inequality rows the face enumeration is replaced by the
/// active-set heuristic.
pub const MAX_ENUMERATED_ROWS: usize = 12;

const FEAS_TOL: f64 = 1e-9;
const RANK_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct ConeMinimum {
    /// Minimal value; `+inf` when the cone is `{0}`.
    pub value: f64,
    /// A feasible direction with `dᵀWd = 1` attaining `value`.
    pub direction: Option<DVector<f64>>,
    /// The cone contains no nonzero direction.
    pub vacuous: bool,
    /// Whether every face was examined.
    pub exact: bool,
}

/// `eq` and `ineq` hold one constraint row per matrix row; `w` must be
/// symmetric positive definite.
pub fn minimize_on_cone(
    q: &DMatrix<f64>,
    w: &DMatrix<f64>,
    eq: &DMatrix<f64>,
    ineq: &DMatrix<f64>,
) -> ConeMinimum {
    let n = q.nrows();
    // Drop zero inequality rows: they constrain nothing.
    let rows: Vec<usize> = (0..ineq.nrows())
        .filter(|&i| ineq.row(i).amax() > 0.0)
        .collect();
    let a = ineq.select_rows(&rows);
    let qs = 0.5 * (q + q.transpose());
    let mut best: Option<(f64, DVector<f64>)> = None;
    let mut consider = |val: f64, d: DVector<f64>| {
        if best.as_ref().map_or(true, |(b, _)| val < *b) {
            best = Some((val, d));
        }
    };
    let exact = a.nrows() <= MAX_ENUMERATED_ROWS;
    if exact {
        for mask in 0u32..(1u32 << a.nrows()) {
            let active: Vec<usize> = (0..a.nrows()).filter(|&i| mask & (1 << i) != 0).collect();
            for (val, d) in face_candidates(&qs, w, eq, &a, &active, n) {
                consider(val, d);
            }
        }
    } else {
        // Active-set descent: minimize on a face, then add the most violated
        // inequality until the face minimizer is feasible.
        let mut active: Vec<usize> = Vec::new();
        loop {
            let cands = face_candidates(&qs, w, eq, &a, &active, n);
            if let Some((val, d)) = cands.into_iter().next() {
                consider(val, d);
                break;
            }
            let (basis, _) = face_basis(eq, &a, &active, n);
            let Some(basis) = basis else { break };
            // Lowest eigenvector on this face, even though infeasible.
            let Some((_, d)) = pencil(&qs, w, &basis).into_iter().next() else {
                break;
            };
            let d = if (&a * &d).max() > -(&a * &d).min() { d } else { -d };
            let worst = (0..a.nrows())
                .filter(|i| !active.contains(i))
                .max_by(|&i, &j| a.row(i).dot(&d.transpose()).total_cmp(&a.row(j).dot(&d.transpose())));
            match worst {
                Some(i) => active.push(i),
                None => break,
            }
        }
    }
    match best {
        Some((value, d)) => ConeMinimum {
            value,
            direction: Some(d),
            vacuous: false,
            exact,
        },
        None => ConeMinimum {
            value: f64::INFINITY,
            direction: None,
            vacuous: true,
            exact,
        },
    }
}

fn face_basis(
    eq: &DMatrix<f64>,
    a: &DMatrix<f64>,
    active: &[usize],
    n: usize,
) -> (Option<DMatrix<f64>>, usize) {
    let act = a.select_rows(active);
    let mut c = DMatrix::zeros(eq.nrows() + act.nrows(), n);
    if eq.nrows() > 0 {
        c.view_mut((0, 0), (eq.nrows(), n)).copy_from(eq);
    }
    if act.nrows() > 0 {
        c.view_mut((eq.nrows(), 0), (act.nrows(), n)).copy_from(&act);
    }
    let z = if c.nrows() == 0 {
        DMatrix::identity(n, n)
    } else {
        null_space(&c, n, RANK_TOL)
    };
    let k = z.ncols();
    if k == 0 {
        (None, 0)
    } else {
        (Some(z), k)
    }
}

/// Generalized eigenpairs `(value, direction)` of `(Q, W)` on `span(Z)`,
/// ascending, directions normalized to `dᵀWd = 1`.
fn pencil(q: &DMatrix<f64>, w: &DMatrix<f64>, z: &DMatrix<f64>) -> Vec<(f64, DVector<f64>)> {
    let qz = z.transpose() * q * z;
    let wz = z.transpose() * w * z;
    let Some(chol) = wz.cholesky() else {
        return Vec::new();
    };
    let l = chol.l();
    let Some(linv) = l.clone().try_inverse() else {
        return Vec::new();
    };
    let c = &linv * qz * linv.transpose();
    let c = 0.5 * (&c + c.transpose());
    let eig = c.symmetric_eigen();
    let back = z * linv.transpose();
    let mut out: Vec<(f64, DVector<f64>)> = (0..eig.eigenvalues.len())
        .map(|i| {
            let d = &back * eig.eigenvectors.column(i);
            let s = (d.transpose() * w * &d)[(0, 0)].sqrt();
            (eig.eigenvalues[i], d / s)
        })
        .collect();
    out.sort_by(|x, y| x.0.total_cmp(&y.0));
    out
}

/// Feasible eigen-directions on one face, ascending by value. Eigenspaces of
/// multiplicity above one are searched for any feasible member.
fn face_candidates(
    q: &DMatrix<f64>,
    w: &DMatrix<f64>,
    eq: &DMatrix<f64>,
    a: &DMatrix<f64>,
    active: &[usize],
    n: usize,
) -> Vec<(f64, DVector<f64>)> {
    let (basis, _) = face_basis(eq, a, active, n);
    let Some(z) = basis else { return Vec::new() };
    let pairs = pencil(q, w, &z);
    let scale = pairs.iter().map(|p| p.0.abs()).fold(1.0, f64::max);
    let feasible = |d: &DVector<f64>| a.nrows() == 0 || (a * d).max() <= FEAS_TOL * (1.0 + a.amax());
    let mut out = Vec::new();
    let mut i = 0;
    while i < pairs.len() {
        let mut j = i + 1;
        while j < pairs.len() && (pairs[j].0 - pairs[i].0).abs() <= 1e-10 * scale {
            j += 1;
        }
        let group: Vec<&DVector<f64>> = pairs[i..j].iter().map(|p| &p.1).collect();
        let mut found = None;
        for d in &group {
            for s in [1.0, -1.0] {
                let cand = (*d).clone() * s;
                if feasible(&cand) {
                    found = Some(cand);
                    break;
                }
            }
            if found.is_some() {
                break;
            }
        }
        if found.is_none() && group.len() > 1 {
            found = feasible_in_span(&group, a, w);
        }
        if let Some(d) = found {
            out.push((pairs[i].0, d));
        }
        i = j;
    }
    out
}

/// Any nonzero `d = V c` with `A d <= 0`, found by maximizing `±c_k` over
/// the box `|c| <= 1`.
fn feasible_in_span(
    group: &[&DVector<f64>],
    a: &DMatrix<f64>,
    w: &DMatrix<f64>,
) -> Option<DVector<f64>> {
    let k = group.len();
    let v = DMatrix::from_columns(&group.iter().map(|d| (*d).clone()).collect::<Vec<_>>());
    let m = a * &v;
    for target in 0..k {
        for sign in [1.0, -1.0] {
            let mut lp = Problem::new(OptimizationDirection::Maximize);
            let vars: Vec<_> = (0..k)
                .map(|c| lp.add_var(if c == target { sign } else { 0.0 }, (-1.0, 1.0)))
                .collect();
            for r in 0..m.nrows() {
                let coeffs: Vec<_> = (0..k).map(|c| (vars[c], m[(r, c)])).collect();
                lp.add_constraint(&coeffs, ComparisonOp::Le, 0.0);
            }
            let Ok(Ok(sol)) = lp.solve().map(|o| o.into_solution()) else {
                continue;
            };
            if sol.objective() > 1e-7 {
                let c = DVector::from_iterator(k, vars.iter().map(|&x| sol.var_value(x)));
                let d = &v * c;
                let s = (d.transpose() * w * &d)[(0, 0)].sqrt();
                if s > 0.0 {
                    return Some(d.column(0) / s);
                }
            }
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Oracle: dense sampling of the unit circle.
    fn circle_min(q: &DMatrix<f64>, ineq: &[[f64; 2]], eq: &[[f64; 2]]) -> f64 {
        // Angular samples plus the exact edges of the cone, where a
        // boundary minimum would otherwise be missed at first order.
        let mut dirs: Vec<[f64; 2]> = (0..200_000)
            .map(|k| {
                let t = k as f64 / 200_000.0 * std::f64::consts::TAU;
                [t.cos(), t.sin()]
            })
            .collect();
        for r in ineq {
            let n = r[0].hypot(r[1]);
            if n > 0.0 {
                dirs.push([-r[1] / n, r[0] / n]);
                dirs.push([r[1] / n, -r[0] / n]);
            }
        }
        let mut best = f64::INFINITY;
        for d in dirs {
            let d = DVector::from_vec(d.to_vec());
            if ineq.iter().all(|r| r[0] * d[0] + r[1] * d[1] <= 1e-12)
                && eq.iter().all(|r| (r[0] * d[0] + r[1] * d[1]).abs() <= 1e-4)
            {
                best = best.min((d.transpose() * q * &d)[(0, 0)]);
            }
        }
        best
    }

    #[test]
    fn subspace_minimum() {
        // Omega = 2|d|^2 on {d1 + d2 = 0}.
        let q = DMatrix::identity(2, 2) * 2.0;
        let eq = DMatrix::from_row_slice(1, 2, &[1.0, 1.0]);
        let r = minimize_on_cone(&q, &DMatrix::identity(2, 2), &eq, &DMatrix::zeros(0, 2));
        assert!((r.value - 2.0).abs() < 1e-12);
        assert!(r.exact && !r.vacuous);
    }

    #[test]
    fn half_line_cone() {
        // Q = diag(2, -1), cone {d1 >= 0, d2 = 0}... only d = e1.
        let q = DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, -1.0]);
        let eq = DMatrix::from_row_slice(1, 2, &[0.0, 1.0]);
        let ineq = DMatrix::from_row_slice(1, 2, &[-1.0, 0.0]);
        let r = minimize_on_cone(&q, &DMatrix::identity(2, 2), &eq, &ineq);
        assert!((r.value - 2.0).abs() < 1e-12);
        assert!(r.direction.unwrap()[0] > 0.0);
    }

    #[test]
    fn vacuous_cone() {
        let eq = DMatrix::identity(2, 2);
        let r = minimize_on_cone(&DMatrix::identity(2, 2), &DMatrix::identity(2, 2), &eq, &DMatrix::zeros(0, 2));
        assert!(r.vacuous && r.value == f64::INFINITY);
    }

    #[test]
    fn degenerate_eigenspace_with_a_cone() {
        // Q = I has a single repeated eigenvalue; the cone is a wedge.
        let ineq = DMatrix::from_row_slice(2, 2, &[-1.0, 0.2, 0.3, -1.0]);
        let r = minimize_on_cone(&DMatrix::identity(2, 2), &DMatrix::identity(2, 2), &DMatrix::zeros(0, 2), &ineq);
        assert!((r.value - 1.0).abs() < 1e-12);
        let d = r.direction.unwrap();
        assert!((&ineq * &d).max() <= 1e-10);
    }

    proptest! {
        #[test]
        fn matches_circle_sampling(
            q in proptest::collection::vec(-2.0f64..2.0, 3),
            rows in proptest::collection::vec(proptest::collection::vec(-1.0f64..1.0, 2), 0..3),
        ) {
            let qm = DMatrix::from_row_slice(2, 2, &[q[0], q[1], q[1], q[2]]);
            let ineq_rows: Vec<[f64; 2]> = rows.iter().map(|r| [r[0], r[1]]).collect();
            let a = DMatrix::from_fn(ineq_rows.len(), 2, |i, j| ineq_rows[i][j]);
            let r = minimize_on_cone(&qm, &DMatrix::identity(2, 2), &DMatrix::zeros(0, 2), &a);
            let oracle = circle_min(&qm, &ineq_rows, &[]);
            if oracle.is_finite() {
                // Sampling only bounds the true minimum from above, to within
                // its angular resolution.
                prop_assert!(r.value <= oracle + 1e-9, "{} vs {}", r.value, oracle);
                prop_assert!(oracle - r.value < 1e-4, "{} vs {}", r.value, oracle);
                let d = r.direction.unwrap();
                prop_assert!(a.nrows() == 0 || (&a * &d).max() <= 1e-9);
                let val = (d.transpose() * &qm * &d)[(0, 0)];
                prop_assert!((val - r.value).abs() < 1e-8);
            }
        }
    }
}
