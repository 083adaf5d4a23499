use alloc::vec::Vec;

use super::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Numerically stable softmax.
pub fn softmax<T: Scalar>(logits: &[T]) -> Vec<T> {
    let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let exps: Vec<T> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: T = exps.iter().copied().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// `-log softmax(logits)[label]` and its gradient `softmax - onehot`.
pub fn softmax_cross_entropy<T: Scalar>(logits: &[T], label: usize) -> Result<(T, Vec<T>)> {
    if label >= logits.len() {
        return Err(Error::LabelOutOfRange { label, classes: logits.len() });
    }
    let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let lse = max + logits.iter().map(|&z| (z - max).exp()).sum::<T>().ln();
    let loss = lse - logits[label];
    let mut grad = softmax(logits);
    grad[label] -= T::one();
    Ok((loss, grad))
}

/// Batch-mean cross-entropy over `(n, classes, 1, 1)` logits; the returned
/// gradient already carries the `1/n` factor.
pub fn softmax_cross_entropy_batch<T: Scalar>(logits: &Tensor<T>, labels: &[usize]) -> Result<(T, Tensor<T>)> {
    let n = logits.batch();
    if labels.len() != n {
        return Err(Error::LengthMismatch(labels.len(), n));
    }
    let inv = T::one() / T::of(n as f64);
    let mut total = T::zero();
    let mut grad = Tensor::zeros(logits.shape());
    for (i, &label) in labels.iter().enumerate() {
        let (l, g) = softmax_cross_entropy(logits.item(i), label)?;
        total += l;
        for (d, v) in grad.item_mut(i).iter_mut().zip(g) {
            *d = v * inv;
        }
    }
    Ok((total * inv, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn uniform_logits_give_ln2() {
        let (loss, grad) = softmax_cross_entropy(&[0.0f64, 0.0], 0).unwrap();
        assert_abs_diff_eq!(loss, core::f64::consts::LN_2, epsilon = 1e-12);
        assert_abs_diff_eq!(grad[0], -0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(grad[1], 0.5, epsilon = 1e-12);
    }

    #[test]
    fn saturated_logits_are_stable() {
        let (loss, grad) = softmax_cross_entropy(&[1000.0f64, 0.0], 0).unwrap();
        assert!(loss.is_finite() && loss.abs() < 1e-12);
        assert!(grad.iter().all(|g| g.is_finite()));
        let (loss, _) = softmax_cross_entropy(&[1000.0f32, 0.0], 1).unwrap();
        assert_abs_diff_eq!(loss, 1000.0, epsilon = 1e-3);
    }

    #[test]
    fn label_out_of_range() {
        assert_eq!(
            softmax_cross_entropy(&[0.0f64, 1.0], 2).unwrap_err(),
            Error::LabelOutOfRange { label: 2, classes: 2 }
        );
    }

    proptest::proptest! {
        #[test]
        fn gradient_sums_to_zero_and_loss_nonnegative(
            logits in proptest::collection::vec(-30.0f64..30.0, 2..8),
            label_seed in 0usize..100,
        ) {
            let label = label_seed % logits.len();
            let (loss, grad) = softmax_cross_entropy(&logits, label).unwrap();
            proptest::prop_assert!(loss >= 0.0);
            proptest::prop_assert!(grad.iter().sum::<f64>().abs() < 1e-12);
            let p: f64 = softmax(&logits).iter().sum();
            proptest::prop_assert!((p - 1.0).abs() < 1e-12);
        }
    }
}
