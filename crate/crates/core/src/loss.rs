//! Reference implementation of the composite regression objective and its gradient.
//!
//! The training crate evaluates the same formulas on tensors; these slice versions are the
//! oracle for that code and for finite-difference checks.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Denominator floor for the cosine term. Keeps empty tiles finite.
pub const CS_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub w_cs: f64,
    pub w_mse: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            w_cs: 0.8,
            w_mse: 0.2,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if self.w_cs >= 0.0 && self.w_mse >= 0.0 {
            Ok(())
        } else {
            Err(Error::InvalidParams(format!(
                "loss weights must be nonnegative, got cs={} mse={}",
                self.w_cs, self.w_mse
            )))
        }
    }
}

fn check<T>(y_true: &[T], y_pred: &[T]) -> Result<()> {
    if y_true.len() != y_pred.len() {
        return Err(Error::shape(
            format!("{} elements", y_true.len()),
            format!("{} elements", y_pred.len()),
        ));
    }
    Ok(())
}

/// Mean squared error over all elements.
pub fn mse_loss<T: Scalar>(y_true: &[T], y_pred: &[T]) -> Result<T> {
    check(y_true, y_pred)?;
    if y_true.is_empty() {
        return Ok(T::zero());
    }
    let s: T = y_true.iter().zip(y_pred).map(|(&t, &p)| (t - p) * (t - p)).sum();
    Ok(s / T::from_usize_lossy(y_true.len()))
}

struct CosParts<T> {
    dot: T,
    pp: T,
    denom: T,
    floored: bool,
}

fn cos_parts<T: Scalar>(y_true: &[T], y_pred: &[T]) -> CosParts<T> {
    let (mut dot, mut tt, mut pp) = (T::zero(), T::zero(), T::zero());
    for (&t, &p) in y_true.iter().zip(y_pred) {
        dot = dot + t * p;
        tt = tt + t * t;
        pp = pp + p * p;
    }
    let raw = tt.sqrt() * pp.sqrt();
    let eps = T::lit(CS_EPS);
    CosParts {
        dot,
        pp,
        denom: raw.max(eps),
        floored: raw < eps,
    }
}

/// Negative cosine similarity of the flattened grids; `-1` for positively proportional inputs.
pub fn cosine_similarity_loss<T: Scalar>(y_true: &[T], y_pred: &[T]) -> Result<T> {
    check(y_true, y_pred)?;
    let c = cos_parts(y_true, y_pred);
    Ok(-c.dot / c.denom)
}

pub fn composite_loss<T: Scalar>(y_true: &[T], y_pred: &[T], w: LossWeights) -> Result<T> {
    Ok(T::lit(w.w_cs) * cosine_similarity_loss(y_true, y_pred)?
        + T::lit(w.w_mse) * mse_loss(y_true, y_pred)?)
}

/// Gradient of [`composite_loss`] with respect to `y_pred`.
pub fn composite_loss_grad<T: Scalar>(y_true: &[T], y_pred: &[T], w: LossWeights) -> Result<Vec<T>> {
    check(y_true, y_pred)?;
    let n = T::from_usize_lossy(y_true.len().max(1));
    let c = cos_parts(y_true, y_pred);
    let (w_cs, w_mse) = (T::lit(w.w_cs), T::lit(w.w_mse));
    let two = T::lit(2.0);
    Ok(y_true
        .iter()
        .zip(y_pred)
        .map(|(&t, &p)| {
            let d_cs = if c.floored || c.pp == T::zero() {
                -t / c.denom
            } else {
                -t / c.denom + c.dot * p / (c.pp * c.denom)
            };
            w_cs * d_cs + w_mse * two * (p - t) / n
        })
        .collect())
}

/// Batch objective: the cosine term per sample, averaged; the MSE term over every element.
/// Both slices hold `batch` contiguous samples of equal length.
pub fn batch_composite_loss<T: Scalar>(
    y_true: &[T],
    y_pred: &[T],
    batch: usize,
    w: LossWeights,
) -> Result<T> {
    check(y_true, y_pred)?;
    if batch == 0 || y_true.len() % batch != 0 {
        return Err(Error::shape(
            format!("multiple of batch size {batch}"),
            y_true.len(),
        ));
    }
    let per = y_true.len() / batch;
    let mut cs = T::zero();
    for b in 0..batch {
        let r = b * per..(b + 1) * per;
        cs = cs + cosine_similarity_loss(&y_true[r.clone()], &y_pred[r])?;
    }
    Ok(T::lit(w.w_cs) * cs / T::from_usize_lossy(batch) + T::lit(w.w_mse) * mse_loss(y_true, y_pred)?)
}
