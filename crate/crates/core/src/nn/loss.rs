use alloc::format;

use super::tensor::{shape_error, Scalar, Shape, Tensor};
use crate::error::{Error, Result};

/// Mean softmax cross-entropy over the batch. Returns the loss and the
/// gradient with respect to the logits.
pub fn softmax_cross_entropy<T: Scalar>(logits: &Tensor<T>, labels: &[usize]) -> Result<(T, Tensor<T>)> {
    let s = logits.shape();
    let k = s.c * s.plane();
    if labels.len() != s.n {
        return Err(shape_error("softmax_cross_entropy", s, Shape::matrix(labels.len(), k)));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
        return Err(Error::InvalidConfiguration(format!("label {bad} out of range for {k} classes")));
    }
    logits.check_finite("logits")?;
    let inv_n = T::one() / T::from_usize(s.n.max(1)).unwrap_or_else(T::one);
    let mut grad = Tensor::zeros(s);
    let mut total = T::zero();
    for (n, &label) in labels.iter().enumerate() {
        let row = logits.sample(n);
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut denom = T::zero();
        for &v in row {
            denom += (v - max).exp();
        }
        let log_denom = denom.ln();
        total += log_denom - (row[label] - max);
        let g = &mut grad.data_mut()[n * k..(n + 1) * k];
        for (j, (gv, &v)) in g.iter_mut().zip(row).enumerate() {
            let p = (v - max - log_denom).exp();
            let target = if j == label { T::one() } else { T::zero() };
            *gv = (p - target) * inv_n;
        }
    }
    let loss = total * inv_n;
    if !loss.is_finite() {
        return Err(Error::NonFinite("cross-entropy loss".into()));
    }
    Ok((loss, grad))
}

/// Smooth-L1 with threshold 1, summed over coordinates and averaged over
/// the batch: `0.5 r^2` for `|r| < 1`, `|r| - 0.5` otherwise.
pub fn smooth_l1<T: Scalar>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<(T, Tensor<T>)> {
    if pred.shape() != target.shape() {
        return Err(shape_error("smooth_l1", pred.shape(), target.shape()));
    }
    pred.check_finite("smooth_l1 prediction")?;
    let n = pred.shape().n.max(1);
    let inv_n = T::one() / T::from_usize(n).unwrap_or_else(T::one);
    let half = T::from_f64_lossy(0.5);
    let mut grad = Tensor::zeros(pred.shape());
    let mut total = T::zero();
    for ((g, &p), &t) in grad.data_mut().iter_mut().zip(pred.data()).zip(target.data()) {
        let r = p - t;
        if r.abs() < T::one() {
            total += half * r * r;
            *g = r * inv_n;
        } else {
            total += r.abs() - half;
            *g = r.signum() * inv_n;
        }
    }
    Ok((total * inv_n, grad))
}

pub fn sigmoid<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| T::one() / (T::one() + (-v).exp()))
}

/// Gradient of the logistic function given its output `y`.
pub fn sigmoid_backward<T: Scalar>(y: &Tensor<T>, dy: &Tensor<T>) -> Result<Tensor<T>> {
    if y.shape() != dy.shape() {
        return Err(shape_error("sigmoid backward", y.shape(), dy.shape()));
    }
    let data = y
        .data()
        .iter()
        .zip(dy.data())
        .map(|(&s, &d)| d * s * (T::one() - s))
        .collect();
    Tensor::from_vec(y.shape(), data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn uniform_logits_give_log_k() {
        for k in [2usize, 4, 10] {
            let logits = Tensor::<f64>::filled(Shape::matrix(3, k), 0.7);
            let (loss, _) = softmax_cross_entropy(&logits, &[0, 1, k - 1]).unwrap();
            assert!((loss - (k as f64).ln()).abs() < 1e-12);
        }
        let logits = Tensor::<f32>::zeros(Shape::matrix(1, 4));
        let (loss, _) = softmax_cross_entropy(&logits, &[2]).unwrap();
        assert!((loss - 1.386_294_4).abs() < 1e-6);
    }

    #[test]
    fn smooth_l1_branches() {
        let zero = Tensor::<f32>::zeros(Shape::matrix(1, 1));
        let (loss, grad) = smooth_l1(&zero, &zero).unwrap();
        assert_eq!(loss, 0.0);
        assert_eq!(grad.data(), &[0.0]);
        let two = Tensor::from_vec(Shape::matrix(1, 1), vec![2.0f32]).unwrap();
        let (loss, grad) = smooth_l1(&two, &zero).unwrap();
        assert_eq!(loss, 1.5);
        assert_eq!(grad.data(), &[1.0]);
    }

    #[test]
    fn label_out_of_range() {
        let logits = Tensor::<f32>::zeros(Shape::matrix(1, 4));
        assert!(softmax_cross_entropy(&logits, &[4]).is_err());
        assert!(softmax_cross_entropy(&logits, &[0, 1]).is_err());
    }
}
