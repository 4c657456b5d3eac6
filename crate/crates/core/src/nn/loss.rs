use super::tensor::{Scalar, Tensor};
use crate::error::{Error, Result};

fn check_shapes<T: Scalar>(pred: &Tensor<T>, target: &Tensor<T>, weight: &Tensor<T>) -> Result<()> {
    if pred.shape() != target.shape() || pred.shape() != weight.shape() {
        return Err(Error::shape(format!(
            "prediction {:?}, target {:?} and weight {:?} must match",
            pred.shape(),
            target.shape(),
            weight.shape()
        )));
    }
    Ok(())
}

/// Sum of weights, accumulated in f64.
pub fn weight_sum<T: Scalar>(weight: &Tensor<T>) -> f64 {
    weight.data().iter().map(|w| w.to_f64()).sum()
}

/// `Σ w·(p−t)² / Σ w` and its gradient with respect to `pred`.
///
/// An all-zero weight map gives zero loss and zero gradient. Pixels with
/// zero weight get an exact `+0` gradient whatever their values.
pub fn weighted_mse<T: Scalar>(pred: &Tensor<T>, target: &Tensor<T>, weight: &Tensor<T>) -> Result<(f64, Tensor<T>)> {
    check_shapes(pred, target, weight)?;
    let norm = weight_sum(weight);
    Ok(weighted_mse_normalized(pred, target, weight, norm))
}

/// Same as [`weighted_mse`] but normalized by an externally supplied weight
/// total, used when one normalizer spans a whole mini-batch.
pub(crate) fn weighted_mse_normalized<T: Scalar>(
    pred: &Tensor<T>,
    target: &Tensor<T>,
    weight: &Tensor<T>,
    norm: f64,
) -> (f64, Tensor<T>) {
    let mut grad = Tensor::zeros(pred.shape());
    if norm == 0.0 {
        return (0.0, grad);
    }
    let scale = T::from_f64(2.0 / norm);
    let mut sum = 0.0;
    for (i, g) in grad.data_mut().iter_mut().enumerate() {
        let w = weight.data()[i];
        if w == T::ZERO {
            continue;
        }
        let d = pred.data()[i] - target.data()[i];
        sum += w.to_f64() * d.to_f64() * d.to_f64();
        *g = scale * w * d;
    }
    (sum / norm, grad)
}

/// Weighted mean absolute error converted to meters (fractions × 100).
/// `None` when the weights sum to zero.
pub fn mae_metric<T: Scalar>(pred: &Tensor<T>, target: &Tensor<T>, weight: &Tensor<T>) -> Result<Option<f64>> {
    check_shapes(pred, target, weight)?;
    let (_, abs, norm) = error_sums(pred, target, weight);
    Ok((norm > 0.0).then(|| 100.0 * abs / norm))
}

/// `(Σ w·(p−t)², Σ w·|p−t|, Σ w)`.
pub(crate) fn error_sums<T: Scalar>(pred: &Tensor<T>, target: &Tensor<T>, weight: &Tensor<T>) -> (f64, f64, f64) {
    let (mut sq, mut abs, mut norm) = (0.0, 0.0, 0.0);
    for ((p, t), w) in pred.data().iter().zip(target.data()).zip(weight.data()) {
        if *w == T::ZERO {
            continue;
        }
        let (w, d) = (w.to_f64(), p.to_f64() - t.to_f64());
        sq += w * d * d;
        abs += w * d.abs();
        norm += w;
    }
    (sq, abs, norm)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(v: &[f64]) -> Tensor<f64> {
        Tensor::from_vec([1, 1, 1, v.len()], v.to_vec()).unwrap()
    }

    #[test]
    fn masked_pixel_ignored() {
        let (loss, grad) = weighted_mse(&t(&[0.3, 0.0]), &t(&[0.2, 0.4]), &t(&[1.0, 0.0])).unwrap();
        assert!((loss - 0.01).abs() < 1e-15);
        assert!((grad.data()[0] - 0.2).abs() < 1e-15);
        assert_eq!(grad.data()[1].to_bits(), 0.0f64.to_bits());
    }

    #[test]
    fn perfect_prediction() {
        let (loss, grad) = weighted_mse(&t(&[0.1, 0.5]), &t(&[0.1, 0.5]), &t(&[1.0, 1.0])).unwrap();
        assert_eq!(loss, 0.0);
        assert!(grad.data().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn zero_weights() {
        let (loss, grad) = weighted_mse(&t(&[0.9, 0.1]), &t(&[0.2, 0.4]), &t(&[0.0, 0.0])).unwrap();
        assert_eq!(loss, 0.0);
        assert!(grad.data().iter().all(|&g| g.to_bits() == 0));
    }

    #[test]
    fn shape_mismatch() {
        assert!(weighted_mse(&t(&[0.1]), &t(&[0.1, 0.2]), &t(&[1.0])).is_err());
    }

    #[test]
    fn mae_in_meters() {
        let mae = mae_metric(&t(&[0.25]), &t(&[0.20]), &t(&[1.0])).unwrap().unwrap();
        assert!((mae - 5.0).abs() < 1e-12);
        assert_eq!(mae_metric(&t(&[0.3]), &t(&[0.3]), &t(&[1.0])).unwrap(), Some(0.0));
        assert_eq!(mae_metric(&t(&[0.3]), &t(&[0.1]), &t(&[0.0])).unwrap(), None);
    }
}
