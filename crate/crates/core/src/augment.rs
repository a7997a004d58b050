//! Temporal augmentation: each month of a record becomes its own training pair.

use std::sync::Arc;

use crate::raster::{HeightMap, RasterTile, SampleRecord};

#[derive(Debug, Clone)]
pub struct AugmentedPair<T = f32> {
    /// 1-based calendar month.
    pub month_index: usize,
    pub s1: RasterTile<T>,
    pub s2: RasterTile<T>,
    /// Shared by all pairs of the same record.
    pub reference: Arc<HeightMap<T>>,
}

/// One pair per month, month-aligned across modalities.
pub fn make_augmented_pairs<T: Copy>(rec: &SampleRecord<T>) -> Vec<AugmentedPair<T>> {
    let reference = Arc::new(rec.reference_heights());
    rec.s1
        .months
        .iter()
        .zip(&rec.s2.months)
        .enumerate()
        .map(|(m, (s1, s2))| AugmentedPair {
            month_index: m + 1,
            s1: s1.clone(),
            s2: s2.clone(),
            reference: Arc::clone(&reference),
        })
        .collect()
}
