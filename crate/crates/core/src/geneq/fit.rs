//! Empirical regularity constants: fit `d_X <= kappa * d_Y^beta` to sampled
//! (disturbance, deviation) pairs.

use super::GeneqError;

/// Default noise floor below which distances are ignored by the fit.
pub const DEFAULT_MIN_DIST: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PerturbationRecord {
    pub sample_index: u64,
    /// Size of the injected disturbance in the strong image norm.
    pub magnitude: f64,
    pub weak_image_dist: f64,
    pub weak_domain_dist: f64,
    pub strong_image_dist: f64,
    pub solver_converged: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegularityFit {
    /// Envelope constant: the smallest kappa with
    /// `weak_domain_dist <= kappa * weak_image_dist^beta` on every used record.
    pub kappa: f64,
    /// `exp` of the regression intercept.
    pub kappa_regression: f64,
    pub beta: f64,
    pub r_squared: f64,
    pub n_points: usize,
    /// Smallest and largest `weak_image_dist` used.
    pub range: (f64, f64),
}

/// Records that enter the fit: converged, with both distances above
/// `min_dist` (the logarithm needs positive values; tiny distances are
/// solver noise).
pub fn usable_records(records: &[PerturbationRecord], min_dist: f64) -> Vec<PerturbationRecord> {
    records
        .iter()
        .filter(|r| {
            r.solver_converged
                && r.weak_image_dist > min_dist
                && r.weak_domain_dist > min_dist
                && r.weak_image_dist.is_finite()
                && r.weak_domain_dist.is_finite()
        })
        .copied()
        .collect()
}

pub fn fit_regularity(
    records: &[PerturbationRecord],
    min_dist: f64,
) -> Result<RegularityFit, GeneqError> {
    let used = usable_records(records, min_dist);
    if used.len() < 5 {
        return Err(GeneqError::TooFewPoints { usable: used.len() });
    }
    let xs: Vec<f64> = used.iter().map(|r| r.weak_image_dist.ln()).collect();
    let ys: Vec<f64> = used.iter().map(|r| r.weak_domain_dist.ln()).collect();
    let (slope, intercept, r_squared) = linear_fit(&xs, &ys)?;
    if !(slope > 0.0 && slope <= 1.5) {
        return Err(GeneqError::DegenerateFit(format!(
            "log-log slope {slope} outside (0, 1.5]"
        )));
    }
    let kappa = used
        .iter()
        .map(|r| r.weak_domain_dist / r.weak_image_dist.powf(slope))
        .fold(0.0, f64::max);
    let lo = used.iter().map(|r| r.weak_image_dist).fold(f64::INFINITY, f64::min);
    let hi = used.iter().map(|r| r.weak_image_dist).fold(0.0, f64::max);
    Ok(RegularityFit {
        kappa,
        kappa_regression: intercept.exp(),
        beta: slope,
        r_squared,
        n_points: used.len(),
        range: (lo, hi),
    })
}

/// Largest ratio `weak_domain_dist / weak_image_dist` over usable records:
/// the Lipschitz (beta = 1) envelope.
pub fn lipschitz_envelope(records: &[PerturbationRecord], min_dist: f64) -> Option<f64> {
    let used = usable_records(records, min_dist);
    if used.is_empty() {
        return None;
    }
    Some(
        used.iter()
            .map(|r| r.weak_domain_dist / r.weak_image_dist)
            .fold(0.0, f64::max),
    )
}

/// Ordinary least squares `y = slope * x + intercept`; returns
/// `(slope, intercept, r_squared)`.
pub fn linear_fit(xs: &[f64], ys: &[f64]) -> Result<(f64, f64, f64), GeneqError> {
    let n = xs.len() as f64;
    if xs.len() < 2 || xs.len() != ys.len() {
        return Err(GeneqError::TooFewPoints { usable: xs.len() });
    }
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    if sxx <= 1e-300 {
        return Err(GeneqError::DegenerateFit(
            "all abscissae coincide; the slope is undetermined".into(),
        ));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r_squared = if syy <= 1e-300 {
        1.0
    } else {
        (sxy * sxy / (sxx * syy)).clamp(0.0, 1.0)
    };
    Ok((slope, intercept, r_squared))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rec(i: u64, image: f64, domain: f64) -> PerturbationRecord {
        PerturbationRecord {
            sample_index: i,
            magnitude: image,
            weak_image_dist: image,
            weak_domain_dist: domain,
            strong_image_dist: image,
            solver_converged: true,
        }
    }

    fn grid() -> Vec<f64> {
        (0..12).map(|k| 10f64.powf(-4.0 + k as f64 * 0.3)).collect()
    }

    #[test]
    fn exact_linear_law() {
        let recs: Vec<_> = grid().iter().enumerate().map(|(i, &e)| rec(i as u64, e, 2.0 * e)).collect();
        let fit = fit_regularity(&recs, DEFAULT_MIN_DIST).unwrap();
        assert!((fit.beta - 1.0).abs() < 1e-12);
        assert!((fit.kappa - 2.0).abs() < 1e-10);
        assert!((fit.r_squared - 1.0).abs() < 1e-12);
        assert_eq!(fit.n_points, 12);
    }

    #[test]
    fn square_root_law() {
        let recs: Vec<_> = grid().iter().enumerate().map(|(i, &e)| rec(i as u64, e, e.sqrt())).collect();
        let fit = fit_regularity(&recs, DEFAULT_MIN_DIST).unwrap();
        assert!((fit.beta - 0.5).abs() < 1e-9);
    }

    #[test]
    fn too_few_and_noise_floor() {
        let mut recs: Vec<_> = (0..4).map(|i| rec(i, 1e-2 * (i + 1) as f64, 1e-2)).collect();
        assert_eq!(
            fit_regularity(&recs, DEFAULT_MIN_DIST),
            Err(GeneqError::TooFewPoints { usable: 4 })
        );
        // Zero records and unconverged records do not count.
        recs.push(rec(9, 0.0, 0.0));
        let mut bad = rec(10, 0.5, 0.5);
        bad.solver_converged = false;
        recs.push(bad);
        assert_eq!(
            fit_regularity(&recs, DEFAULT_MIN_DIST),
            Err(GeneqError::TooFewPoints { usable: 4 })
        );
    }

    proptest! {
        #[test]
        fn envelope_bounds_every_used_record(
            noise in proptest::collection::vec(0.5f64..2.0, 10),
        ) {
            let recs: Vec<_> = grid().iter().zip(&noise).enumerate()
                .map(|(i, (&e, &s))| rec(i as u64, e, s * e)).collect();
            let fit = fit_regularity(&recs, DEFAULT_MIN_DIST).unwrap();
            for r in usable_records(&recs, DEFAULT_MIN_DIST) {
                prop_assert!(r.weak_domain_dist <= fit.kappa * r.weak_image_dist.powf(fit.beta) * (1.0 + 1e-12));
            }
        }
    }
}
