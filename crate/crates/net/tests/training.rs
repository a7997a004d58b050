mod common;

use std::collections::HashSet;

use common::{net, serial, tiny};
use mbhr_core::loss::LossWeights;
use mbhr_core::manifest::{load_manifest, DatasetManifest};
use mbhr_core::synth::{generate_dataset_with_ratio, SceneParams};
use mbhr_core::Split;
use mbhr_net::data::{gather, load_split};
use mbhr_net::train::{epoch_pairs, holdout, single_step, CKPT_BEST, CKPT_LAST, LOG_FILE};
use mbhr_net::{load_checkpoint, train_with, EpochRecord, NetError, Normalization, TrainConfig};
use proptest::prelude::*;
use tch::nn::OptimizerConfig;
use tch::{nn, Device};

fn dataset(n: usize, seed: u64) -> (tempfile::TempDir, DatasetManifest) {
    let dir = tempfile::tempdir().unwrap();
    generate_dataset_with_ratio(n, &SceneParams { seed, ..Default::default() }, dir.path(), 1.0).unwrap();
    let m = load_manifest(dir.path()).unwrap();
    (dir, m)
}

fn quick() -> TrainConfig {
    TrainConfig { epochs: 2, width_multiplier: 0.125, months_per_epoch: 2, val_fraction: 0.3, ..Default::default() }
}

proptest! {
    #[test]
    fn holdout_partitions_tiles(n in 1usize..200, frac in 0.0f64..0.9, seed in 0u64..1000) {
        let (train, val) = holdout(n, frac, seed);
        let all: HashSet<usize> = train.iter().chain(&val).copied().collect();
        prop_assert_eq!(all.len(), n);
        prop_assert_eq!(train.len() + val.len(), n);
        prop_assert!(!train.is_empty());
        prop_assert_eq!((train.clone(), val.clone()), holdout(n, frac, seed));
    }

    #[test]
    fn rotating_months_cover_every_pair(n in 1usize..20, k in prop::sample::select(vec![1usize, 2, 3, 4, 6, 12])) {
        let tiles: Vec<usize> = (0..n).collect();
        let mut seen = HashSet::new();
        for epoch in 0..12 / k {
            let pairs = epoch_pairs(&tiles, epoch, k);
            prop_assert_eq!(pairs.len(), n * k);
            let distinct: HashSet<_> = pairs.iter().copied().collect();
            prop_assert_eq!(distinct.len(), pairs.len());
            seen.extend(pairs);
        }
        prop_assert_eq!(seen.len(), 12 * n);
    }
}

#[test]
fn one_mse_step_decreases_mse() {
    let (_dir, m) = dataset(2, 4);
    let norm = Normalization::from_manifest(&m).unwrap();
    let tiles = load_split(&m, Split::Train, &norm).unwrap();
    let (s2, s1, r) = gather(&tiles, &[(0, 0), (1, 5)]);
    let model = net(tiny(128), 1);
    let mut opt = nn::Adam::default().build(model.var_store(), 1e-5).unwrap();
    let w = LossWeights { w_cs: 0.0, w_mse: 1.0 };
    let before = single_step(&model, &mut opt, &s2, &s1, &r, w).unwrap();
    // train mode keeps batch statistics, so the second evaluation sees the same normalization
    let after = mbhr_net::loss::mse_loss(&model.forward_t(&s2, &s1, true).unwrap(), &r).unwrap().double_value(&[]);
    assert!(after < before, "{after} >= {before}");
}

#[test]
fn short_run_writes_log_and_checkpoints() {
    let (data, m) = dataset(3, 2);
    let out = tempfile::tempdir().unwrap();
    let mut seen = Vec::new();
    let outcome = {
        let _g = serial();
        train_with(&m, &quick(), Some(out.path()), Device::Cpu, |r: &EpochRecord| seen.push(r.epoch)).unwrap()
    };
    assert_eq!(seen, [1, 2]);
    assert_eq!(outcome.val_tiles.len(), 1);
    // 2 training tiles × 2 months, batch 4: one step per epoch
    assert_eq!(outcome.step_losses.len(), 2);
    let text = std::fs::read_to_string(out.path().join(LOG_FILE)).unwrap();
    let recs: Vec<EpochRecord> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(recs, outcome.log);
    assert!(recs.iter().all(|r| r.val_loss.is_some() && r.lr <= 1e-4 && r.lr >= 1e-5));
    for name in [CKPT_BEST, CKPT_LAST] {
        let ck = load_checkpoint(&out.path().join(name), Device::Cpu).unwrap();
        assert_eq!(ck.normalization.as_ref(), Some(&outcome.normalization));
    }
    drop(data);
}

#[test]
fn same_seed_same_first_epoch() {
    let (_d, m) = dataset(2, 5);
    let cfg = TrainConfig { epochs: 1, val_fraction: 0.0, ..quick() };
    let _g = serial();
    let a = train_with(&m, &cfg, None, Device::Cpu, |_| {}).unwrap();
    let b = train_with(&m, &cfg, None, Device::Cpu, |_| {}).unwrap();
    assert!((a.log[0].train_loss - b.log[0].train_loss).abs() < 1e-6);
    assert_eq!(a.log[0].val_loss, None);
}

#[test]
fn max_steps_stops_mid_epoch() {
    let (_d, m) = dataset(2, 6);
    let cfg = TrainConfig { epochs: 50, months_per_epoch: 12, val_fraction: 0.0, max_steps: Some(3), batch_size: 2, ..quick() };
    let out = train_with(&m, &cfg, None, Device::Cpu, |_| {}).unwrap();
    assert_eq!(out.step_losses.len(), 3);
    assert_eq!(out.log.len(), 1);
}

#[test]
fn non_finite_loss_names_the_batch() {
    let (_d, mut m) = dataset(2, 7);
    m.normalization.get_mut("Red").unwrap().std = f64::NAN;
    let cfg = TrainConfig { val_fraction: 0.0, ..quick() };
    match train_with(&m, &cfg, None, Device::Cpu, |_| {}) {
        Err(NetError::Diverged { epoch, batch, samples, .. }) => {
            assert_eq!((epoch, batch), (1, 0));
            assert!(samples.contains("tile_000"), "{samples}");
        }
        other => panic!("{other:?}"),
    }
}

#[test]
fn bad_configs_rejected() {
    let (_d, m) = dataset(1, 8);
    for cfg in [
        TrainConfig { lr_min: 1e-3, ..quick() },
        TrainConfig { plateau_factor: 1.0, ..quick() },
        TrainConfig { months_per_epoch: 0, ..quick() },
        TrainConfig { batch_size: 0, ..quick() },
    ] {
        assert!(matches!(train_with(&m, &cfg, None, Device::Cpu, |_| {}), Err(NetError::Config(_) | NetError::Core(_))));
    }
}

#[test]
fn config_json_defaults() {
    let c: TrainConfig = serde_json::from_str(r#"{"epochs": 3}"#).unwrap();
    assert_eq!((c.epochs, c.batch_size, c.lr_init, c.lr_min), (3, 4, 1e-4, 1e-5));
    assert!(serde_json::from_str::<TrainConfig>(r#"{"epoch": 3}"#).is_err());
}
