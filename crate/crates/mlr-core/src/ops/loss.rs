//! Reconstruction loss.

use crate::error::Result;
use crate::tensor::{require_same_dims, Tensor};

/// Mean-squared error over all elements, with its gradient w.r.t. `pred`.
///
/// `loss = mean((pred - target)^2)`, `grad = 2 (pred - target) / n`.
pub fn mse_loss(pred: &Tensor, target: &Tensor) -> Result<(f64, Tensor)> {
    require_same_dims("mse_loss", pred, target)?;
    let n = pred.len() as f64;
    let mut grad = Tensor::zeros_like(pred);
    let mut sum = 0.0;
    for ((g, &p), &t) in grad
        .data_mut()
        .iter_mut()
        .zip(pred.data())
        .zip(target.data())
    {
        let d = p - t;
        sum += d * d;
        *g = 2.0 * d / n;
    }
    let loss = sum / n;
    if !loss.is_finite() {
        return Err(crate::error::CoreError::non_finite("mse loss"));
    }
    Ok((loss, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn zero_residual_zero_loss() {
        let t = Tensor::new(vec![2, 2], vec![1.0, -2.0, 0.5, 3.0]).unwrap();
        let (loss, grad) = mse_loss(&t, &t).unwrap();
        assert_eq!(loss, 0.0);
        assert!(grad.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn hand_computed_case() {
        let pred = Tensor::new(vec![2], vec![1.0, 1.0]).unwrap();
        let target = Tensor::zeros(&[2]);
        let (loss, grad) = mse_loss(&pred, &target).unwrap();
        assert_eq!(loss, 1.0);
        assert_eq!(grad.data(), &[1.0, 1.0]);
    }

    #[test]
    fn quadratic_homogeneity() {
        let pred = Tensor::new(vec![3], vec![0.3, -0.8, 2.0]).unwrap();
        let target = Tensor::new(vec![3], vec![0.1, 0.2, -1.0]).unwrap();
        let (l1, _) = mse_loss(&pred, &target).unwrap();
        // scale the residual by c: loss scales by c^2
        let c = 3.0;
        let pred_scaled = Tensor::new(
            vec![3],
            pred.data()
                .iter()
                .zip(target.data())
                .map(|(&p, &t)| t + c * (p - t))
                .collect(),
        )
        .unwrap();
        let (l2, _) = mse_loss(&pred_scaled, &target).unwrap();
        assert!((l2 - c * c * l1).abs() < 1e-12);
    }

    #[test]
    fn dims_mismatch_is_shape_error() {
        let a = Tensor::zeros(&[2, 2]);
        let b = Tensor::zeros(&[4]);
        assert!(mse_loss(&a, &b).is_err());
    }
}
