//! Masked losses and metrics on depth maps.

use std::sync::Arc;

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Mean absolute error over the valid pixels, recorded on the tape.
pub fn l1_loss<T: Scalar>(tape: &mut Tape<T>, pred: Var, gt: Var, mask: Arc<Vec<bool>>) -> Result<Var> {
    tape.masked_l1(pred, gt, mask)
}

fn masked_errors<'a, T: Scalar>(
    pred: &'a Tensor<T>,
    gt: &'a Tensor<T>,
    mask: &'a [bool],
) -> Result<impl Iterator<Item = f64> + 'a> {
    if pred.shape() != gt.shape() || mask.len() != pred.numel() {
        return Err(Error::ShapeMismatch {
            op: "depth_metric",
            lhs: pred.shape().to_vec(),
            rhs: gt.shape().to_vec(),
        });
    }
    if !mask.iter().any(|&m| m) {
        return Err(Error::EmptyMask);
    }
    Ok(pred
        .data()
        .iter()
        .zip(gt.data())
        .zip(mask)
        .filter(|(_, &m)| m)
        .map(|((&a, &b), _)| a.as_f64() - b.as_f64()))
}

/// `sqrt(mean over valid pixels of (pred - gt)²)`, in the units of the inputs.
pub fn rmse_cm<T: Scalar>(pred: &Tensor<T>, gt: &Tensor<T>, mask: &[bool]) -> Result<f64> {
    let (mut sum, mut n) = (0.0, 0usize);
    for e in masked_errors(pred, gt, mask)? {
        sum += e * e;
        n += 1;
    }
    Ok((sum / n as f64).sqrt())
}

/// Mean absolute error over valid pixels.
pub fn mae<T: Scalar>(pred: &Tensor<T>, gt: &Tensor<T>, mask: &[bool]) -> Result<f64> {
    let (mut sum, mut n) = (0.0, 0usize);
    for e in masked_errors(pred, gt, mask)? {
        sum += e.abs();
        n += 1;
    }
    Ok(sum / n as f64)
}
