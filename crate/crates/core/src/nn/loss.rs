//! Masked frame losses.
//!
//! The `*_sum` variants return the un-normalized loss sum, the number of
//! contributing elements and the gradient of the sum, so callers can
//! normalize over a whole batch of variable-length sequences.

use ndarray::{Array2, ArrayView2};

use super::Scalar;
use crate::error::{Error, Result};

/// Row-wise log-softmax.
pub fn log_softmax<F: Scalar>(logits: ArrayView2<F>) -> Array2<F> {
    let mut out = logits.to_owned();
    for mut row in out.rows_mut() {
        let max = row.iter().copied().fold(F::neg_infinity(), F::max);
        let lse = row.iter().map(|&v| (v - max).exp()).sum::<F>().ln() + max;
        row.mapv_inplace(|v| v - lse);
    }
    out
}

pub fn softmax_xent_sum<F: Scalar>(
    logits: ArrayView2<F>,
    targets: &[usize],
    mask: &[bool],
) -> Result<(f64, usize, Array2<F>)> {
    let (t_len, k) = logits.dim();
    if k < 2 {
        return Err(Error::shape("softmax_xent needs at least two classes"));
    }
    if targets.len() != t_len || mask.len() != t_len {
        return Err(Error::shape(format!(
            "softmax_xent: {t_len} frames, {} targets, {} mask entries",
            targets.len(),
            mask.len()
        )));
    }
    let logp = log_softmax(logits);
    let mut grad = Array2::<F>::zeros((t_len, k));
    let mut sum = 0.0;
    let mut count = 0;
    for t in 0..t_len {
        if !mask[t] {
            continue;
        }
        let y = targets[t];
        if y >= k {
            return Err(Error::invalid(format!("target class {y} out of range at frame {t}")));
        }
        sum -= logp[[t, y]].f64();
        count += 1;
        for c in 0..k {
            grad[[t, c]] = logp[[t, c]].exp();
        }
        grad[[t, y]] -= F::one();
    }
    Ok((sum, count, grad))
}

/// Mean cross-entropy over unmasked frames and its gradient.
pub fn softmax_xent<F: Scalar>(
    logits: ArrayView2<F>,
    targets: &[usize],
    mask: &[bool],
) -> Result<(F, Array2<F>)> {
    let (sum, count, mut grad) = softmax_xent_sum(logits, targets, mask)?;
    if count == 0 {
        return Err(Error::invalid("softmax_xent: every frame is masked"));
    }
    grad.mapv_inplace(|g| g / F::of(count as f64));
    Ok((F::of(sum / count as f64), grad))
}

/// Sum of absolute errors over unmasked frames (all feature dims), with the
/// subgradient `sign(pred - target)` and `0` at ties.
pub fn l1_loss_sum<F: Scalar>(
    pred: ArrayView2<F>,
    target: ArrayView2<F>,
    mask: &[bool],
) -> Result<(f64, usize, Array2<F>)> {
    if pred.dim() != target.dim() || mask.len() != pred.nrows() {
        return Err(Error::shape(format!(
            "l1_loss: pred {:?}, target {:?}, mask {}",
            pred.dim(),
            target.dim(),
            mask.len()
        )));
    }
    let mut grad = Array2::<F>::zeros(pred.dim());
    let mut sum = 0.0;
    let mut count = 0;
    for (t, &m) in mask.iter().enumerate() {
        if !m {
            continue;
        }
        for d in 0..pred.ncols() {
            let diff = pred[[t, d]] - target[[t, d]];
            sum += diff.abs().f64();
            grad[[t, d]] = if diff > F::zero() {
                F::one()
            } else if diff < F::zero() {
                -F::one()
            } else {
                F::zero()
            };
        }
        count += pred.ncols();
    }
    Ok((sum, count, grad))
}

pub fn l1_loss<F: Scalar>(
    pred: ArrayView2<F>,
    target: ArrayView2<F>,
    mask: &[bool],
) -> Result<(F, Array2<F>)> {
    let (sum, count, mut grad) = l1_loss_sum(pred, target, mask)?;
    if count == 0 {
        return Err(Error::invalid("l1_loss: every position is masked"));
    }
    grad.mapv_inplace(|g| g / F::of(count as f64));
    Ok((F::of(sum / count as f64), grad))
}
