//! Optimization loop: Adam over shuffled month pairs, plateau-driven learning rate, tile-level
//! validation holdout, JSON-lines log and best/last checkpoints.

use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use mbhr_core::loss::LossWeights;
use mbhr_core::manifest::DatasetManifest;
use mbhr_core::schedule::{PlateauConfig, ReduceOnPlateau};
use mbhr_core::{Split, MONTHS};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use tch::nn::OptimizerConfig;
use tch::{nn, Device, Tensor};

use crate::checkpoint::save_checkpoint;
use crate::config::ModelConfig;
use crate::data::{gather, load_split, Normalization, TileTensors};
use crate::error::{NetError, Result};
use crate::loss::composite_loss;
use crate::model::MbhrNet;

pub const LOG_FILE: &str = "train_log.jsonl";
pub const CKPT_BEST: &str = "ckpt_best";
pub const CKPT_LAST: &str = "ckpt_last";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_init: f64,
    pub lr_min: f64,
    pub plateau_patience: usize,
    pub plateau_factor: f64,
    pub seed: u64,
    pub loss_weights: LossWeights,
    pub width_multiplier: f64,
    /// Fraction of training tiles held out to drive the schedule. Zero tiles held out means
    /// the training loss drives it instead.
    pub val_fraction: f64,
    pub grad_clip_norm: f64,
    /// Months drawn per tile per epoch. Below 12 the months rotate across epochs, so every
    /// month of every tile is still visited every `12 / months_per_epoch` epochs.
    pub months_per_epoch: usize,
    /// Stop after this many optimizer steps, possibly mid-epoch.
    pub max_steps: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 100,
            batch_size: 4,
            lr_init: 1e-4,
            lr_min: 1e-5,
            plateau_patience: 5,
            plateau_factor: 0.5,
            seed: 0,
            loss_weights: LossWeights::default(),
            width_multiplier: 1.0,
            val_fraction: 0.1,
            grad_clip_norm: 5.0,
            months_per_epoch: MONTHS,
            max_steps: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(NetError::Config(m));
        if self.epochs == 0 || self.batch_size == 0 {
            return bad("epochs and batch_size must be positive".into());
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return bad(format!("val_fraction must be in [0, 1), got {}", self.val_fraction));
        }
        if !(1..=MONTHS).contains(&self.months_per_epoch) {
            return bad(format!("months_per_epoch must be in 1..=12, got {}", self.months_per_epoch));
        }
        if !(self.grad_clip_norm > 0.0) {
            return bad(format!("grad_clip_norm must be positive, got {}", self.grad_clip_norm));
        }
        self.loss_weights.validate()?;
        ReduceOnPlateau::<f64>::new(self.plateau())?;
        self.model_config().validate()
    }

    pub fn plateau(&self) -> PlateauConfig {
        PlateauConfig {
            lr_init: self.lr_init,
            lr_min: self.lr_min,
            patience: self.plateau_patience,
            factor: self.plateau_factor,
            min_delta: 0.0,
        }
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig::with_width(self.width_multiplier)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
    pub wall_seconds: f64,
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub model: MbhrNet,
    pub normalization: Normalization,
    pub log: Vec<EpochRecord>,
    /// Loss of every optimizer step, in order.
    pub step_losses: Vec<f64>,
    pub val_tiles: Vec<String>,
}

/// Tile-level holdout: indices into the sorted training tiles, `(train, val)`.
pub fn holdout(n: usize, fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let n_val = ((fraction * n as f64).round() as usize).min(n.saturating_sub(1));
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let (mut val, mut train) = (idx[..n_val].to_vec(), idx[n_val..].to_vec());
    val.sort_unstable();
    train.sort_unstable();
    (train, val)
}

/// The `(tile, month)` pairs of one epoch, before shuffling. Indices refer to `tiles`.
pub fn epoch_pairs(tiles: &[usize], epoch: usize, months_per_epoch: usize) -> Vec<(usize, usize)> {
    tiles
        .iter()
        .enumerate()
        .flat_map(|(j, &t)| (0..months_per_epoch).map(move |k| (t, (epoch * months_per_epoch + k + j) % MONTHS)))
        .collect()
}

fn loss_over(model: &MbhrNet, tiles: &[TileTensors], idx: &[usize], batch: usize, w: LossWeights) -> Result<f64> {
    let pairs: Vec<(usize, usize)> = idx.iter().flat_map(|&t| (0..tiles[t].months()).map(move |m| (t, m))).collect();
    let dev = model.device();
    let (mut total, mut n) = (0.0, 0usize);
    tch::no_grad(|| -> Result<()> {
        for chunk in pairs.chunks(batch) {
            let (s2, s1, r) = gather(tiles, chunk);
            let pred = model.forward_t(&s2.to_device(dev), &s1.to_device(dev), false)?;
            total += composite_loss(&pred, &r.to_device(dev), w)?.double_value(&[]) * chunk.len() as f64;
            n += chunk.len();
        }
        Ok(())
    })?;
    Ok(total / n as f64)
}

fn create(path: &Path) -> Result<File> {
    File::create(path).map_err(|source| NetError::Io { path: path.to_path_buf(), source })
}

pub fn train(manifest: &DatasetManifest, cfg: &TrainConfig, out: Option<&Path>) -> Result<TrainOutcome> {
    train_with(manifest, cfg, out, crate::default_device(), |_| {})
}

/// Trains from scratch. With `out` set, writes the log and checkpoints there as it goes.
/// `on_epoch` sees each record right after it is logged.
pub fn train_with(
    manifest: &DatasetManifest,
    cfg: &TrainConfig,
    out: Option<&Path>,
    device: Device,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let normalization = Normalization::from_manifest(manifest)?;
    let tiles = load_split(manifest, Split::Train, &normalization)?;
    if tiles.is_empty() {
        return Err(NetError::Config("training split is empty".into()));
    }
    let (train_idx, val_idx) = holdout(tiles.len(), cfg.val_fraction, cfg.seed);

    tch::manual_seed(cfg.seed as i64);
    let model = MbhrNet::new(cfg.model_config(), device)?;
    let mut opt = nn::Adam::default().build(model.var_store(), cfg.lr_init)?;
    let mut sched = ReduceOnPlateau::<f64>::new(cfg.plateau())?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(0x5eed));

    let mut log_file = match out {
        Some(dir) => {
            std::fs::create_dir_all(dir).map_err(|source| NetError::Io { path: dir.to_path_buf(), source })?;
            Some(create(&dir.join(LOG_FILE))?)
        }
        None => None,
    };
    let ckpt = |name: &str| out.map(|d| d.join(name));
    let best_path: Option<PathBuf> = ckpt(CKPT_BEST);

    let start = Instant::now();
    let mut log = Vec::new();
    let mut step_losses = Vec::new();
    let mut best = f64::INFINITY;
    'epochs: for epoch in 0..cfg.epochs {
        let lr = sched.lr();
        opt.set_lr(lr);
        let mut pairs = epoch_pairs(&train_idx, epoch, cfg.months_per_epoch);
        pairs.shuffle(&mut rng);
        let (mut sum, mut seen) = (0.0, 0usize);
        let mut stop = false;
        for (b, chunk) in pairs.chunks(cfg.batch_size).enumerate() {
            let (s2, s1, r) = gather(&tiles, chunk);
            let pred = model.forward_t(&s2.to_device(device), &s1.to_device(device), true)?;
            let loss = composite_loss(&pred, &r.to_device(device), cfg.loss_weights)?;
            let lv = loss.double_value(&[]);
            if !lv.is_finite() {
                let samples = chunk
                    .iter()
                    .map(|&(t, m)| format!("{} month {:02}", tiles[t].tile_id, m + 1))
                    .collect::<Vec<_>>()
                    .join(", ");
                return Err(NetError::Diverged { epoch: epoch + 1, batch: b, loss: lv, samples });
            }
            opt.zero_grad();
            loss.backward();
            opt.clip_grad_norm(cfg.grad_clip_norm);
            opt.step();
            step_losses.push(lv);
            sum += lv * chunk.len() as f64;
            seen += chunk.len();
            if cfg.max_steps.is_some_and(|m| step_losses.len() >= m) {
                stop = true;
                break;
            }
        }
        let train_loss = sum / seen as f64;
        let val_loss = if val_idx.is_empty() {
            None
        } else {
            Some(loss_over(&model, &tiles, &val_idx, cfg.batch_size, cfg.loss_weights)?)
        };
        let rec = EpochRecord { epoch: epoch + 1, lr, train_loss, val_loss, wall_seconds: start.elapsed().as_secs_f64() };
        if let Some(f) = log_file.as_mut() {
            let line = serde_json::to_string(&rec).expect("record serializes");
            writeln!(f, "{line}").map_err(|source| NetError::Io { path: out.unwrap().join(LOG_FILE), source })?;
        }
        on_epoch(&rec);
        let monitored = val_loss.unwrap_or(train_loss);
        if monitored < best {
            best = monitored;
            if let Some(p) = &best_path {
                save_checkpoint(&model, Some(&normalization), p)?;
            }
        }
        log.push(rec);
        sched.step(monitored);
        if stop {
            break 'epochs;
        }
    }
    if let Some(p) = ckpt(CKPT_LAST) {
        save_checkpoint(&model, Some(&normalization), &p)?;
    }
    let val_tiles = val_idx.iter().map(|&i| tiles[i].tile_id.clone()).collect();
    Ok(TrainOutcome { model, normalization, log, step_losses, val_tiles })
}

/// One optimizer step on a fixed batch; returns the loss before the step. Exposed for tests
/// that check a single update moves the objective the right way.
pub fn single_step(
    model: &MbhrNet,
    opt: &mut nn::Optimizer,
    s2: &Tensor,
    s1: &Tensor,
    target: &Tensor,
    w: LossWeights,
) -> Result<f64> {
    let loss = composite_loss(&model.forward_t(s2, s1, true)?, target, w)?;
    let v = loss.double_value(&[]);
    opt.zero_grad();
    loss.backward();
    opt.step();
    Ok(v)
}
