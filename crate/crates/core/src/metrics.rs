//! Height-map metrics: binarization, footprint filtering, RMSE, R² and IoU.
//!
//! RMSE and R² take an explicit region mask. Both return `None` when the metric is undefined on
//! that region (empty region for RMSE; fewer than two pixels or constant reference for R²).

use crate::error::Result;
use crate::grid::{Grid, Mask};
use crate::scalar::Scalar;

/// Heights strictly above this value are building pixels.
pub const BUILDING_THRESHOLD_M: f64 = 1.0;

/// `true` where `h > threshold`.
pub fn binarize<T: Scalar>(h: &Grid<T>, threshold: T) -> Mask {
    h.map(|&v| v > threshold)
}

/// Building mask at the standard threshold.
pub fn building_mask<T: Scalar>(h: &Grid<T>) -> Mask {
    binarize(h, T::lit(BUILDING_THRESHOLD_M))
}

/// Zeroes every prediction outside the reference building footprint.
pub fn footprint_filter<T: Scalar>(pred: &Grid<T>, reference: &Grid<T>) -> Result<Grid<T>> {
    pred.ensure_same_shape(reference)?;
    let thr = T::lit(BUILDING_THRESHOLD_M);
    let data = pred
        .iter()
        .zip(reference.iter())
        .map(|(&p, &r)| if r > thr { p } else { T::zero() })
        .collect();
    Grid::from_vec(pred.width(), pred.height(), data)
}

fn region_pairs<'a, T: Scalar>(
    reference: &'a Grid<T>,
    pred: &'a Grid<T>,
    region: &'a Mask,
) -> Result<impl Iterator<Item = (T, T)> + 'a> {
    reference.ensure_same_shape(pred)?;
    reference.ensure_same_shape(region)?;
    Ok(reference
        .iter()
        .zip(pred.iter())
        .zip(region.iter())
        .filter(|(_, &m)| m)
        .map(|((&r, &p), _)| (r, p)))
}

pub fn rmse<T: Scalar>(reference: &Grid<T>, pred: &Grid<T>, region: &Mask) -> Result<Option<T>> {
    let (mut n, mut sse) = (0usize, T::zero());
    for (r, p) in region_pairs(reference, pred, region)? {
        n += 1;
        sse = sse + (r - p) * (r - p);
    }
    Ok((n > 0).then(|| (sse / T::from_usize_lossy(n)).sqrt()))
}

/// Coefficient of determination `1 - SS_res / SS_tot` over `region`.
pub fn r2<T: Scalar>(reference: &Grid<T>, pred: &Grid<T>, region: &Mask) -> Result<Option<T>> {
    let pairs: Vec<(T, T)> = region_pairs(reference, pred, region)?.collect();
    if pairs.len() < 2 {
        return Ok(None);
    }
    let mean = pairs.iter().map(|&(r, _)| r).sum::<T>() / T::from_usize_lossy(pairs.len());
    let ss_tot: T = pairs.iter().map(|&(r, _)| (r - mean) * (r - mean)).sum();
    if ss_tot <= T::zero() {
        return Ok(None);
    }
    let ss_res: T = pairs.iter().map(|&(r, p)| (r - p) * (r - p)).sum();
    Ok(Some(T::one() - ss_res / ss_tot))
}

/// `|a ∧ b| / |a ∨ b|`, with two empty masks scoring 1.
pub fn iou(a: &Mask, b: &Mask) -> Result<f64> {
    a.ensure_same_shape(b)?;
    let (mut inter, mut union) = (0usize, 0usize);
    for (&x, &y) in a.iter().zip(b.iter()) {
        inter += (x && y) as usize;
        union += (x || y) as usize;
    }
    Ok(if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    })
}
