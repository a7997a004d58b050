//! The composite objective on tensors, matching `mbhr_core::loss::batch_composite_loss`.

use mbhr_core::loss::{LossWeights, CS_EPS};
use tch::Tensor;

use crate::error::{NetError, Result};

fn flat(pred: &Tensor, target: &Tensor) -> Result<(Tensor, Tensor)> {
    if pred.size() != target.size() || pred.dim() == 0 {
        return Err(NetError::shape(format!("target shape {:?}", target.size()), pred.size()));
    }
    let b = pred.size()[0];
    Ok((pred.reshape([b, -1]), target.reshape([b, -1])))
}

/// Negative cosine similarity per sample, averaged over the batch.
pub fn cosine_similarity_loss(pred: &Tensor, target: &Tensor) -> Result<Tensor> {
    let (p, t) = flat(pred, target)?;
    let dims: &[i64] = &[1];
    let dot = (&p * &t).sum_dim_intlist(dims, false, None);
    let pp = (&p * &p).sum_dim_intlist(dims, false, None);
    let tt = (&t * &t).sum_dim_intlist(dims, false, None);
    let denom = (pp * tt).clamp_min(CS_EPS * CS_EPS).sqrt();
    Ok(-(dot / denom).mean(None))
}

pub fn mse_loss(pred: &Tensor, target: &Tensor) -> Result<Tensor> {
    let _ = flat(pred, target)?;
    Ok((pred - target).square().mean(None))
}

pub fn composite_loss(pred: &Tensor, target: &Tensor, w: LossWeights) -> Result<Tensor> {
    Ok(cosine_similarity_loss(pred, target)? * w.w_cs + mse_loss(pred, target)? * w.w_mse)
}
