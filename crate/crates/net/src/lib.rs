//! MBHR-Net: a dual-branch SAR/optical U-Net regressing building heights, with its training
//! loop and checkpoint format. Built on libtorch through `tch`; parameters are `f32` unless a
//! model is explicitly converted with [`MbhrNet::to_double`].

pub mod checkpoint;
pub mod config;
pub mod data;
pub mod error;
pub mod loss;
pub mod model;
pub mod predict;
pub mod train;

pub use checkpoint::{load_checkpoint, load_checkpoint_as, save_checkpoint, Checkpoint};
pub use config::ModelConfig;
pub use data::{Normalization, TileTensors};
pub use error::{NetError, Result};
pub use model::{Branch, EncoderFeatures, MbhrNet};
pub use predict::NetPredictor;
pub use train::{train, train_with, EpochRecord, TrainConfig, TrainOutcome};

/// CUDA when available, otherwise CPU.
pub fn default_device() -> tch::Device {
    tch::Device::cuda_if_available()
}

/// Caps libtorch's intra-op thread pool.
pub fn set_threads(n: usize) {
    tch::set_num_threads(n.max(1) as i32);
}
