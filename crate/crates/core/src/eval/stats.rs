//! Two-sided paired t-test.

use serde::Serialize;
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TTest {
    /// `None` when the differences have zero variance.
    pub t: Option<f64>,
    pub p: f64,
    pub n: usize,
    pub mean_difference: f64,
}

/// Paired test of `a − b` with `n − 1` degrees of freedom. With constant
/// differences the statistic is undefined and `p` is 1 when they are all
/// zero, else 0.
pub fn paired_t_test(a: &[f64], b: &[f64]) -> Result<TTest> {
    if a.len() != b.len() {
        return Err(Error::Contract(format!(
            "paired samples differ in length ({} vs {})",
            a.len(),
            b.len()
        )));
    }
    let n = a.len();
    if n < 2 {
        return Err(Error::Contract("a paired t-test needs at least two pairs".into()));
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let mean = d.iter().sum::<f64>() / n as f64;
    let var = d.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    if var == 0.0 {
        let p = if mean == 0.0 { 1.0 } else { 0.0 };
        return Ok(TTest {
            t: None,
            p,
            n,
            mean_difference: mean,
        });
    }
    let t = mean / (var.sqrt() / (n as f64).sqrt());
    let dist = StudentsT::new(0.0, 1.0, (n - 1) as f64).map_err(|e| Error::Numeric(e.to_string()))?;
    let p = (2.0 * (1.0 - dist.cdf(t.abs()))).clamp(0.0, 1.0);
    Ok(TTest {
        t: Some(t),
        p,
        n,
        mean_difference: mean,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn conventions_for_constant_differences() {
        let a = [0.3, 0.5, 0.7];
        assert_eq!(paired_t_test(&a, &a).unwrap().p, 1.0);
        let r = paired_t_test(&[2.0, 3.0, 4.0, 5.0], &[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!((r.t, r.p), (None, 0.0));
    }

    #[test]
    fn hand_computed_statistic() {
        // Differences [1, -1, 2, 0, 3]: mean 1, sample variance 2.5, so
        // t = 1 / sqrt(2.5 / 5) = sqrt(2); two-sided p with 4 dof.
        let r = paired_t_test(&[1.0, -1.0, 2.0, 0.0, 3.0], &[0.0; 5]).unwrap();
        let t = r.t.unwrap();
        assert!((t - 2f64.sqrt()).abs() < 1e-12);
        assert!((r.p - 0.230200).abs() < 1e-5, "p = {}", r.p);
    }

    #[test]
    fn symmetric_in_sign_and_rejects_bad_lengths() {
        let a = [0.1, 0.4, 0.35, 0.8];
        let b = [0.2, 0.3, 0.3, 0.5];
        let ab = paired_t_test(&a, &b).unwrap();
        let ba = paired_t_test(&b, &a).unwrap();
        assert_eq!(ab.t.map(|t| -t), ba.t);
        assert!((ab.p - ba.p).abs() < 1e-15);
        assert!(paired_t_test(&a, &b[..3]).is_err());
        assert!(paired_t_test(&[1.0], &[2.0]).is_err());
    }
}
