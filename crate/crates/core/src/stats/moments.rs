//! Sample mean, variance, and covariance with the n−1 denominator.

use crate::error::{Error, Result};

/// Mean and unbiased variance of a sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampleMoments {
    pub n: usize,
    pub mean: f64,
    pub variance: f64,
}

/// Sample mean and unbiased (n−1) variance.
///
/// Requires at least two values so the variance is defined.
pub fn sample_mean_var(values: &[f64]) -> Result<SampleMoments> {
    let n = values.len();
    if n < 2 {
        return Err(Error::InsufficientData(format!(
            "variance needs at least 2 values, got {n}"
        )));
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let ss = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>();
    Ok(SampleMoments {
        n,
        mean,
        variance: ss / (n - 1) as f64,
    })
}

/// Sample covariance with the n−1 denominator.
pub fn sample_cov(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() {
        return Err(Error::Shape(format!(
            "covariance inputs differ in length: {} vs {}",
            xs.len(),
            ys.len()
        )));
    }
    let n = xs.len();
    if n < 2 {
        return Err(Error::InsufficientData(format!(
            "covariance needs at least 2 pairs, got {n}"
        )));
    }
    let mx = xs.iter().sum::<f64>() / n as f64;
    let my = ys.iter().sum::<f64>() / n as f64;
    let cross = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| (x - mx) * (y - my))
        .sum::<f64>();
    Ok(cross / (n - 1) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    const SESSIONS: [f64; 5] = [1.0, 3.0, 5.0, 2.0, 10.0];
    const CONVERTED: [f64; 5] = [1.0, 3.0, 1.0, 0.0, 8.0];

    #[test]
    fn worked_example_columns() {
        let n = sample_mean_var(&SESSIONS).unwrap();
        assert!((n.mean - 4.2).abs() < 1e-12);
        assert!((n.variance - 12.7).abs() < 1e-12);

        let s = sample_mean_var(&CONVERTED).unwrap();
        assert!((s.mean - 2.6).abs() < 1e-12);
        assert!((s.variance - 10.3).abs() < 1e-12);

        let c = sample_cov(&CONVERTED, &SESSIONS).unwrap();
        assert!((c - 10.1).abs() < 1e-12);
    }

    #[test]
    fn constant_vector_has_zero_variance() {
        let m = sample_mean_var(&[3.5, 3.5, 3.5]).unwrap();
        assert_eq!(m.mean, 3.5);
        assert_eq!(m.variance, 0.0);
    }

    #[test]
    fn cov_is_symmetric_and_matches_var() {
        let xs = [1.0, 2.0, 4.0, 8.0];
        let ys = [0.5, -1.0, 3.0, 2.0];
        let ab = sample_cov(&xs, &ys).unwrap();
        let ba = sample_cov(&ys, &xs).unwrap();
        assert_eq!(ab, ba);

        let var = sample_mean_var(&xs).unwrap().variance;
        assert!((sample_cov(&xs, &xs).unwrap() - var).abs() < 1e-14);

        let neg: Vec<f64> = xs.iter().map(|x| -x).collect();
        assert!((sample_cov(&xs, &neg).unwrap() + var).abs() < 1e-14);
    }

    #[test]
    fn errors_on_short_or_mismatched_input() {
        assert!(matches!(
            sample_mean_var(&[1.0]),
            Err(crate::Error::InsufficientData(_))
        ));
        assert!(matches!(
            sample_cov(&[1.0, 2.0], &[1.0]),
            Err(crate::Error::Shape(_))
        ));
    }
}
