//! Mean-squared losses and their gradients with respect to predictions.

use crate::error::{Error, Result};
use crate::linalg::Mat;

fn mse_with_residuals(pred: &[f64], target: &[f64], what: &str) -> Result<(f64, Vec<f64>)> {
    if pred.len() != target.len() {
        return Err(Error::Shape(format!(
            "{what}: {} predictions vs {} targets",
            pred.len(),
            target.len()
        )));
    }
    if pred.is_empty() {
        return Err(Error::Shape(format!("{what}: empty input")));
    }
    let n = pred.len() as f64;
    let mut loss = 0.0;
    let mut residuals = Vec::with_capacity(pred.len());
    for (p, t) in pred.iter().zip(target) {
        let d = p - t;
        loss += d * d;
        residuals.push(2.0 * d / n);
    }
    let loss = loss / n;
    if !loss.is_finite() {
        return Err(Error::NonFinite(format!("{what} loss")));
    }
    Ok((loss, residuals))
}

/// MSE over all `B × C` entries and `∂L/∂pred`.
pub fn pixel_loss(pred: &Mat, target: &Mat) -> Result<(f64, Mat)> {
    if pred.shape() != target.shape() {
        return Err(Error::Shape(format!(
            "pixel loss: {:?} vs {:?}",
            pred.shape(),
            target.shape()
        )));
    }
    let (loss, r) = mse_with_residuals(pred.as_slice(), target.as_slice(), "pixel")?;
    Ok((loss, Mat::from_vec(pred.rows(), pred.cols(), r)?))
}

/// MSE over all `B × C × 2` Jacobian entries and `∂L/∂(∇Φ)`.
pub fn gradient_loss(pred: &[Mat; 2], target: &[Mat; 2]) -> Result<(f64, [Mat; 2])> {
    let shape = pred[0].shape();
    if pred[1].shape() != shape || target[0].shape() != shape || target[1].shape() != shape {
        return Err(Error::Shape("gradient loss: jacobian shapes differ".into()));
    }
    let flat = |m: &[Mat; 2]| -> Vec<f64> {
        m[0].as_slice()
            .iter()
            .chain(m[1].as_slice())
            .copied()
            .collect()
    };
    let (loss, r) = mse_with_residuals(&flat(pred), &flat(target), "gradient")?;
    let half = r.len() / 2;
    Ok((
        loss,
        [
            Mat::from_vec(shape.0, shape.1, r[..half].to_vec())?,
            Mat::from_vec(shape.0, shape.1, r[half..].to_vec())?,
        ],
    ))
}
