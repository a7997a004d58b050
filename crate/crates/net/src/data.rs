//! Normalized tensors for whole tiles, held in memory for the duration of training.

use mbhr_core::manifest::{normalize_stack, DatasetManifest};
use mbhr_core::stats::BandStats;
use mbhr_core::{Modality, MonthlyStack, RasterTile, Sample, Split};
use serde::{Deserialize, Serialize};
use tch::Tensor;

use crate::error::Result;

/// Each tensor is `(months, bands, H, W)`; `reference` is `(1, H, W)`.
#[derive(Debug)]
pub struct TileTensors {
    pub tile_id: String,
    pub s1: Tensor,
    pub s2: Tensor,
    pub reference: Tensor,
}

/// Per-band z-score statistics for both modalities, in canonical band order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub s1: Vec<BandStats>,
    pub s2: Vec<BandStats>,
}

impl Normalization {
    pub fn from_manifest(m: &DatasetManifest) -> Result<Self> {
        Ok(Normalization { s1: m.band_stats(Modality::S1)?, s2: m.band_stats(Modality::S2)? })
    }
}

pub fn raster_tensor(t: &RasterTile<f32>) -> Tensor {
    Tensor::from_slice(t.as_slice()).reshape([t.bands() as i64, t.height() as i64, t.width() as i64])
}

/// `(months, bands, H, W)` after z-scoring.
pub fn stack_tensor(stack: &MonthlyStack<f32>, stats: &[BandStats]) -> Result<Tensor> {
    let months = normalize_stack(stack, stats)?;
    let ts: Vec<Tensor> = months.iter().map(raster_tensor).collect();
    Ok(Tensor::stack(&ts, 0))
}

impl TileTensors {
    pub fn from_record(rec: &Sample, norm: &Normalization) -> Result<Self> {
        Ok(TileTensors {
            tile_id: rec.tile_id.clone(),
            s1: stack_tensor(&rec.s1, &norm.s1)?,
            s2: stack_tensor(&rec.s2, &norm.s2)?,
            reference: raster_tensor(&rec.reference),
        })
    }

    pub fn months(&self) -> usize {
        self.s1.size()[0] as usize
    }
}

/// Loads every tile of a split, sorted by tile id.
pub fn load_split(m: &DatasetManifest, split: Split, norm: &Normalization) -> Result<Vec<TileTensors>> {
    let mut entries: Vec<_> = m.split(split).collect();
    entries.sort_by(|a, b| a.tile_id.cmp(&b.tile_id));
    entries
        .into_iter()
        .map(|e| TileTensors::from_record(&m.load_sample(e)?, norm))
        .collect()
}

/// Stacks `(tile, month)` pairs into a batch: `(s2, s1, reference)`, each `(N, C, H, W)`.
pub fn gather(tiles: &[TileTensors], pairs: &[(usize, usize)]) -> (Tensor, Tensor, Tensor) {
    let s2: Vec<Tensor> = pairs.iter().map(|&(t, m)| tiles[t].s2.get(m as i64)).collect();
    let s1: Vec<Tensor> = pairs.iter().map(|&(t, m)| tiles[t].s1.get(m as i64)).collect();
    let r: Vec<Tensor> = pairs.iter().map(|&(t, _)| tiles[t].reference.shallow_clone()).collect();
    (Tensor::stack(&s2, 0), Tensor::stack(&s1, 0), Tensor::stack(&r, 0))
}
