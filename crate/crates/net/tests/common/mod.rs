#![allow(dead_code)]

use std::sync::{Mutex, MutexGuard};

use mbhr_net::{MbhrNet, ModelConfig};
use tch::{Device, Kind, Tensor};

/// libtorch's CPU generator is process-global, so seeded construction must not interleave
/// across test threads.
static SEEDED: Mutex<()> = Mutex::new(());

pub fn serial() -> MutexGuard<'static, ()> {
    SEEDED.lock().unwrap_or_else(|e| e.into_inner())
}

pub fn tiny(size: usize) -> ModelConfig {
    ModelConfig { input_size_px: size, ..ModelConfig::with_width(0.125) }
}

pub fn net(cfg: ModelConfig, seed: i64) -> MbhrNet {
    let _g = serial();
    tch::manual_seed(seed);
    MbhrNet::new(cfg, Device::Cpu).unwrap()
}

pub fn inputs(cfg: &ModelConfig, batch: i64, seed: i64, kind: Kind) -> (Tensor, Tensor) {
    let _g = serial();
    tch::manual_seed(seed);
    let s = cfg.input_size_px as i64;
    let s2 = Tensor::randn([batch, cfg.s2_in_channels as i64, s, s], (kind, Device::Cpu));
    let s1 = Tensor::randn([batch, cfg.s1_in_channels as i64, s, s], (kind, Device::Cpu));
    (s2, s1)
}

pub fn values(t: &Tensor) -> Vec<f64> {
    Vec::<f64>::try_from(t.to_kind(Kind::Double).flatten(0, -1)).unwrap()
}
