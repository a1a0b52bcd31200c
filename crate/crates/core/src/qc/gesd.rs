use statrs::distribution::{ContinuousCDF, StudentsT};

use super::QcError;

pub const DEFAULT_MAX_OUTLIER_FRACTION: f64 = 0.20;
pub const DEFAULT_SIGNIFICANCE: f64 = 0.05;

/// Rosner's critical value λᵢ for step `i` (1-based) of a sample of size `n`.
pub fn gesd_critical_value(n: usize, i: usize, alpha: f64) -> f64 {
    let m = (n - i + 1) as f64;
    let df = m - 2.0;
    let p = 1.0 - alpha / (2.0 * m);
    let t = StudentsT::new(0.0, 1.0, df)
        .expect("df > 0 because n > 10 and i <= n/2")
        .inverse_cdf(p);
    (m - 1.0) * t / ((df + t * t) * m).sqrt()
}

/// Generalized extreme Studentized deviate test. Returns outlier indices in ascending order.
///
/// The sample is sorted once; the most extreme remaining value is always at one of the two
/// ends, so each removal step is O(1) with running sums.
pub fn gesd_outliers(values: &[f64], max_outlier_fraction: f64, alpha: f64) -> Result<Vec<usize>, QcError> {
    let n = values.len();
    if n <= 10 {
        return Err(QcError::TooFewSamples { n });
    }
    if !(max_outlier_fraction > 0.0 && max_outlier_fraction < 0.5) {
        return Err(QcError::InvalidParameter(format!(
            "max_outlier_fraction must be in (0, 0.5), got {max_outlier_fraction}"
        )));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(QcError::InvalidParameter(format!(
            "significance must be in (0, 1), got {alpha}"
        )));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(QcError::InvalidParameter("values must be finite".into()));
    }
    let r = (max_outlier_fraction * n as f64).ceil() as usize;

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    // shift by the median to keep the running sums well conditioned
    let shift = values[order[n / 2]];
    let mut sum: f64 = values.iter().map(|v| v - shift).sum();
    let mut sum_sq: f64 = values.iter().map(|v| (v - shift).powi(2)).sum();
    let (mut lo, mut hi) = (0usize, n - 1);
    let mut removed = Vec::with_capacity(r);
    let mut last_significant = 0;

    for i in 1..=r {
        let m = (n - i + 1) as f64;
        let mean = sum / m;
        let var = ((sum_sq - sum * sum / m) / (m - 1.0)).max(0.0);
        let sd = var.sqrt();
        let dev_lo = (mean - (values[order[lo]] - shift)).abs();
        let dev_hi = ((values[order[hi]] - shift) - mean).abs();
        let (idx, dev) = if dev_hi >= dev_lo {
            let k = order[hi];
            hi -= 1;
            (k, dev_hi)
        } else {
            let k = order[lo];
            lo += 1;
            (k, dev_lo)
        };
        if sd <= 0.0 || sd < 1e-12 * (1.0 + mean.abs()) {
            break;
        }
        let stat = dev / sd;
        if stat > gesd_critical_value(n, i, alpha) {
            last_significant = i;
        }
        removed.push(idx);
        let x = values[idx] - shift;
        sum -= x;
        sum_sq -= x * x;
    }
    let mut out: Vec<usize> = removed.into_iter().take(last_significant).collect();
    out.sort_unstable();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn single_gross_outlier() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut v: Vec<f64> = (0..100).map(|_| StandardNormal.sample(&mut rng)).collect();
        v.insert(37, 10.0);
        assert_eq!(gesd_outliers(&v, 0.2, 0.05).unwrap(), vec![37]);
    }

    #[test]
    fn constant_sequence_has_no_outliers() {
        assert!(gesd_outliers(&[3.0; 50], 0.2, 0.05).unwrap().is_empty());
    }

    #[test]
    fn parameter_checks() {
        assert_eq!(
            gesd_outliers(&[1.0; 10], 0.2, 0.05).unwrap_err(),
            QcError::TooFewSamples { n: 10 }
        );
        assert!(gesd_outliers(&[1.0; 20], 0.5, 0.05).is_err());
        assert!(gesd_outliers(&[1.0; 20], 0.2, 0.0).is_err());
    }

    #[test]
    fn critical_value_matches_published_table() {
        // Rosner's example: n = 54, alpha = 0.05
        let expected = [3.159, 3.151, 3.143, 3.136, 3.128, 3.120, 3.111, 3.103, 3.094, 3.085];
        for (i, e) in expected.iter().enumerate() {
            assert!(
                (gesd_critical_value(54, i + 1, 0.05) - e).abs() < 1e-3,
                "step {}",
                i + 1
            );
        }
    }

    #[test]
    fn rosner_example_flags_three() {
        // Rosner (1983) tobacco data, 54 values; three outliers at alpha 0.05
        let data = [
            -0.25, 0.68, 0.94, 1.15, 1.20, 1.26, 1.26, 1.34, 1.38, 1.43, 1.49, 1.49, 1.55, 1.56, 1.58, 1.65, 1.69,
            1.70, 1.76, 1.77, 1.81, 1.91, 1.94, 1.96, 1.99, 2.06, 2.09, 2.10, 2.14, 2.15, 2.23, 2.24, 2.26, 2.35, 2.37,
            2.40, 2.47, 2.54, 2.62, 2.64, 2.90, 2.92, 2.92, 2.93, 3.21, 3.26, 3.30, 3.59, 3.68, 4.30, 4.64, 5.34, 5.42,
            6.01,
        ];
        let out = gesd_outliers(&data, 0.185, 0.05).unwrap();
        assert_eq!(out, vec![51, 52, 53]);
    }
}
