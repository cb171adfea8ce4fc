use crate::error::{Error, Result};
use crate::tensor::Scalar;

/// Softmax probabilities via a max-shifted exponent.
pub fn softmax<T: Scalar>(logits: &[T]) -> Vec<T> {
    let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let exps: Vec<T> = logits.iter().map(|&z| (z - max).exp()).collect();
    let total: T = exps.iter().copied().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Cross-entropy of `softmax(logits)` against `label`, computed as
/// `logsumexp(z) − z_label` with the max subtracted first.
pub fn softmax_cross_entropy<T: Scalar>(logits: &[T], label: usize) -> Result<T> {
    if label >= logits.len() {
        return Err(Error::Input(format!(
            "label {label} out of range for {} classes",
            logits.len()
        )));
    }
    let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let lse = logits.iter().map(|&z| (z - max).exp()).sum::<T>().ln() + max;
    Ok(lse - logits[label])
}

pub fn mse<T: Scalar>(pred: &[T], target: &[T]) -> Result<T> {
    if pred.len() != target.len() || pred.is_empty() {
        return Err(Error::config(format!(
            "mse length mismatch: {} vs {}",
            pred.len(),
            target.len()
        )));
    }
    let n = T::of(pred.len() as f64);
    Ok(pred
        .iter()
        .zip(target)
        .map(|(&p, &t)| (p - t) * (p - t))
        .sum::<T>()
        / n)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_logits_give_ln_classes() {
        let ce = softmax_cross_entropy(&[0.0f64; 10], 3).unwrap();
        assert!((ce - 10f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn cross_entropy_is_stable_for_large_logits() {
        let ce = softmax_cross_entropy(&[1000.0f32, 0.0], 0).unwrap();
        assert!(ce.is_finite() && ce < 1e-6);
    }

    #[test]
    fn label_out_of_range() {
        assert!(matches!(
            softmax_cross_entropy(&[0.0f64; 10], 10),
            Err(Error::Input(_))
        ));
    }

    #[test]
    fn mse_of_equal_values_is_zero() {
        assert_eq!(mse(&[0.5f64], &[0.5]).unwrap(), 0.0);
    }

    #[test]
    fn softmax_sums_to_one() {
        let p = softmax(&[1.0f64, 2.0, -3.0]);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-15);
    }
}
