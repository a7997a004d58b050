//! Data model and numerics for multimodal building height regression: raster tiles and monthly
//! SAR/optical stacks, the dataset manifest, a synthetic town generator, ingestion of staged
//! raw imagery, the composite loss, the learning-rate schedule and the evaluation protocol.
//!
//! Numeric routines are generic over [`Scalar`] (`f32` or `f64`); raster I/O is `f32`.

pub mod augment;
pub mod error;
pub mod eval;
pub mod geotiff;
pub mod grid;
pub mod ingest;
pub mod loss;
pub mod manifest;
pub mod metrics;
pub mod raster;
pub mod scalar;
pub mod schedule;
pub mod stats;
pub mod synth;

pub use error::{Error, Result};
pub use grid::{Grid, Mask};
pub use raster::{
    Georef, HeightMap, Modality, MonthlyStack, RasterTile, SampleRecord, Split, MONTHS,
    RESOLUTION_M, TILE_PX,
};
pub use scalar::Scalar;

pub type Tile = RasterTile<f32>;
pub type Stack = MonthlyStack<f32>;
pub type Sample = SampleRecord<f32>;
pub type Heights = HeightMap<f32>;
