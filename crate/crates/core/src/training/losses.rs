use candle_core::{Tensor, D};

use crate::error::{shape, Result};

/// Keeps the gradient of the L2 norm finite at zero distance.
const NORM_EPS: f64 = 1e-12;

fn l2_rows(x: &Tensor, y: &Tensor) -> Result<Tensor> {
    Ok(((x - y)?.sqr()?.sum(D::Minus1)? + NORM_EPS)?.sqrt()?)
}

/// Batch mean of `max(0, |a - p| - |a - n| + margin)` over `(B, D)` rows.
pub fn triplet_loss(a: &Tensor, p: &Tensor, n: &Tensor, margin: f64) -> Result<Tensor> {
    if a.dims() != p.dims() || a.dims() != n.dims() {
        return Err(shape(format!(
            "triplet dims differ: {:?} {:?} {:?}",
            a.dims(),
            p.dims(),
            n.dims()
        )));
    }
    let hinge = ((l2_rows(a, p)? - l2_rows(a, n)?)? + margin)?.relu()?;
    Ok(hinge.mean_all()?)
}

/// Single-triplet loss on plain vectors.
pub fn triplet_loss_vec(a: &[f64], p: &[f64], n: &[f64], margin: f64) -> Result<f64> {
    if a.len() != p.len() || a.len() != n.len() {
        return Err(shape("triplet vectors differ in length"));
    }
    let d = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(u, v)| (u - v) * (u - v)).sum::<f64>().sqrt();
    Ok((d(a, p) - d(a, n) + margin).max(0.0))
}

/// Mean absolute difference.
pub fn l1_loss(x: &Tensor, y: &Tensor) -> Result<Tensor> {
    if x.dims() != y.dims() {
        return Err(shape(format!("l1: {:?} vs {:?}", x.dims(), y.dims())));
    }
    Ok((x - y)?.abs()?.mean_all()?)
}

/// Mean squared difference.
pub fn mse_loss(x: &Tensor, y: &Tensor) -> Result<Tensor> {
    if x.dims() != y.dims() {
        return Err(shape(format!("mse: {:?} vs {:?}", x.dims(), y.dims())));
    }
    Ok((x - y)?.sqr()?.mean_all()?)
}

pub(crate) fn scalar(t: &Tensor) -> Result<f64> {
    Ok(t.to_dtype(candle_core::DType::F64)?.to_scalar::<f64>()?)
}
