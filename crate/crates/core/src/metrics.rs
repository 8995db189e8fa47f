//! Recovery and prediction metrics, plus a corruption-detection tally.

use serde::{Deserialize, Serialize};

use crate::error::{check_len, DsplError, Result};
use crate::scalar::{dist_sq, Scalar};

/// `‖ŵ - w*‖₂`.
pub fn l2_recovery_error<T: Scalar>(w_hat: &[T], w_star: &[T]) -> Result<T> {
    check_len("recovered coefficients", w_star.len(), w_hat.len())?;
    Ok(dist_sq(w_hat, w_star).sqrt())
}

/// `(1/n) Σ |ŷ_i - y_i|`.
pub fn mean_absolute_error<T: Scalar>(y_hat: &[T], y: &[T]) -> Result<T> {
    check_len("predictions", y.len(), y_hat.len())?;
    if y.is_empty() {
        return Err(DsplError::InvalidParameter(
            "mean absolute error of an empty sample".into(),
        ));
    }
    let total: T = y_hat.iter().zip(y).map(|(a, b)| (*a - *b).abs()).sum();
    Ok(total / T::lit(y.len() as f64))
}

/// Instance weights cross-tabulated against the ground-truth corruption mask.
/// An exclusion is `v = 0`; it is "true" when the instance was corrupted.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct WeightConfusion {
    pub true_exclusions: usize,
    pub false_exclusions: usize,
    pub true_inclusions: usize,
    pub false_inclusions: usize,
}

impl WeightConfusion {
    pub fn total(&self) -> usize {
        self.true_exclusions + self.false_exclusions + self.true_inclusions + self.false_inclusions
    }

    pub fn included(&self) -> usize {
        self.true_inclusions + self.false_inclusions
    }
}

pub fn weight_confusion<T: Scalar>(v: &[Vec<T>], mask: &[Vec<bool>]) -> Result<WeightConfusion> {
    check_len("weight batches", mask.len(), v.len())?;
    let mut c = WeightConfusion::default();
    for (vi, mi) in v.iter().zip(mask) {
        check_len("weights per batch", mi.len(), vi.len())?;
        for (w, corrupted) in vi.iter().zip(mi) {
            match (*w != T::zero(), *corrupted) {
                (false, true) => c.true_exclusions += 1,
                (false, false) => c.false_exclusions += 1,
                (true, false) => c.true_inclusions += 1,
                (true, true) => c.false_inclusions += 1,
            }
        }
    }
    Ok(c)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn recovery_error_examples() {
        assert_eq!(l2_recovery_error(&[0.3, 0.4], &[0.3, 0.4]).unwrap(), 0.0);
        assert_eq!(l2_recovery_error(&[1.0, 0.0], &[0.0, 0.0]).unwrap(), 1.0);
        assert_eq!(l2_recovery_error(&[3.0, 4.0], &[0.0, 0.0]).unwrap(), 5.0);
        assert!(l2_recovery_error(&[3.0], &[0.0, 0.0]).is_err());
    }

    #[test]
    fn mae_examples() {
        assert_eq!(mean_absolute_error(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(mean_absolute_error(&[1.0, 2.0], &[2.0, 4.0]).unwrap(), 1.5);
        assert_eq!(mean_absolute_error(&[2.0, 1.0], &[4.0, 2.0]).unwrap(), 1.5);
        assert!(mean_absolute_error::<f64>(&[], &[]).is_err());
        assert!(mean_absolute_error(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn confusion_examples() {
        let mask = vec![vec![true, false, false], vec![true]];
        let perfect = vec![vec![0.0, 1.0, 1.0], vec![0.0]];
        let c = weight_confusion(&perfect, &mask).unwrap();
        assert_eq!(c.false_exclusions + c.false_inclusions, 0);
        assert_eq!(c.true_exclusions, 2);

        let all_on = vec![vec![1.0; 3], vec![1.0]];
        let c = weight_confusion(&all_on, &mask).unwrap();
        assert_eq!(c.false_inclusions, 2);
        assert_eq!(c.total(), 4);

        assert!(weight_confusion(&all_on, &mask[..1]).is_err());
    }
}
