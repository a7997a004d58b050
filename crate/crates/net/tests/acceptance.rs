//! Acceptance suite. Runs every criterion and prints one PASS/FAIL line each.
//! `MBHR_ACCEPTANCE=1,4,8` restricts the run to the listed criteria.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::{Duration, Instant};

use mbhr_core::augment::make_augmented_pairs;
use mbhr_core::eval::{evaluate, mean_building_height, tile_metrics, ConstantPredictor, EvalReport, MonthAggregate};
use mbhr_core::loss::{composite_loss, composite_loss_grad, cosine_similarity_loss, LossWeights};
use mbhr_core::manifest::{load_manifest, DatasetManifest};
use mbhr_core::metrics::{binarize, building_mask, iou, r2, rmse, BUILDING_THRESHOLD_M};
use mbhr_core::schedule::{PlateauConfig, ReduceOnPlateau};
use mbhr_core::synth::{generate_dataset, generate_dataset_with_ratio, SceneParams};
use mbhr_core::{Grid, Split};
use mbhr_net::{Branch, MbhrNet, ModelConfig, NetPredictor, TrainConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tch::{Device, Kind, Tensor};

// Pinned tolerances and budgets.
const METRIC_TOL: f64 = 1e-9;
const LOSS_TOL: f64 = 1e-9;
const LOSS_FD_STEP: f64 = 1e-4;
const LOSS_FD_REL: f64 = 1e-5;
const MODEL_FD_STEP: f64 = 1e-6;
const MODEL_FD_REL: f64 = 1e-3;
const OVERFIT_STEPS: usize = 200;
const OVERFIT_LR: f64 = 1e-3;
const OVERFIT_MIN_DROP: f64 = 0.90;
const OVERFIT_MAX_RMSE_M: f64 = 1.0;
const E2E_MIN_GAIN: f64 = 0.30;
const E2E_MIN_IOU: f64 = 0.80;
const E2E_MIN_R2: f64 = 0.30;
const DETERMINISM_TOL: f64 = 1e-6;
const SCHED_TOL: f64 = 1e-15;

const C1_BUDGET: Duration = Duration::from_secs(10);
const C3_BUDGET: Duration = Duration::from_secs(120);
const C6_BUDGET: Duration = Duration::from_secs(40 * 60);
const C7_BUDGET: Duration = Duration::from_secs(2 * 3600);
const C8_BUDGET: Duration = Duration::from_secs(1);

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond { Ok(()) } else { Err(msg()) }
}

fn within(start: Instant, budget: Duration) -> Result<(), String> {
    let t = start.elapsed();
    ensure(t < budget, || format!("took {:.1}s, budget {:.0}s", t.as_secs_f64(), budget.as_secs_f64()))
}

// ---- 1: metrics vs brute force ----

fn bf_rmse(r: &[f64], p: &[f64]) -> Option<f64> {
    let (mut s, mut n) = (0.0, 0usize);
    for i in 0..r.len() {
        if r[i] > 1.0 {
            s += (r[i] - p[i]) * (r[i] - p[i]);
            n += 1;
        }
    }
    (n > 0).then(|| (s / n as f64).sqrt())
}

fn bf_r2(r: &[f64], p: &[f64]) -> Option<f64> {
    let idx: Vec<usize> = (0..r.len()).filter(|&i| r[i] > 1.0).collect();
    if idx.len() < 2 {
        return None;
    }
    let mean = idx.iter().map(|&i| r[i]).sum::<f64>() / idx.len() as f64;
    let res: f64 = idx.iter().map(|&i| (r[i] - p[i]).powi(2)).sum();
    let tot: f64 = idx.iter().map(|&i| (r[i] - mean).powi(2)).sum();
    (tot > 0.0).then(|| 1.0 - res / tot)
}

fn bf_iou(r: &[f64], p: &[f64]) -> f64 {
    let (mut inter, mut union) = (0usize, 0usize);
    for i in 0..r.len() {
        let (a, b) = (r[i] > 1.0, p[i] > 1.0);
        inter += (a && b) as usize;
        union += (a || b) as usize;
    }
    if union == 0 { 1.0 } else { inter as f64 / union as f64 }
}

fn same(a: Option<f64>, b: Option<f64>) -> bool {
    match (a, b) {
        (Some(x), Some(y)) => (x - y).abs() <= METRIC_TOL,
        (None, None) => true,
        _ => false,
    }
}

fn c1() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let grid = |rng: &mut ChaCha8Rng| {
        Grid::from_fn(8, 8, |_, _| if rng.random_bool(0.35) { 0.0 } else { rng.random_range(0.0..30.0f64) })
    };
    for k in 0..200 {
        let r = grid(&mut rng);
        let p = grid(&mut rng);
        let region = building_mask(&r);
        let (rs, ps) = (r.as_slice(), p.as_slice());
        ensure(same(rmse(&r, &p, &region).map_err(|e| e.to_string())?, bf_rmse(rs, ps)), || format!("rmse differs on grid {k}"))?;
        ensure(same(r2(&r, &p, &region).map_err(|e| e.to_string())?, bf_r2(rs, ps)), || format!("r2 differs on grid {k}"))?;
        let i = iou(&region, &building_mask(&p)).map_err(|e| e.to_string())?;
        ensure((i - bf_iou(rs, ps)).abs() <= METRIC_TOL, || format!("iou differs on grid {k}"))?;
    }
    within(start, C1_BUDGET)?;
    Ok(format!("200 grids agree to {METRIC_TOL:e}"))
}

// ---- 2: loss values ----

fn c2() -> Outcome {
    let w = LossWeights::default();
    let y = [0.5f64, 3.0, 12.0, 7.5, 0.0, 21.0];
    let core = composite_loss(&y, &y, w).map_err(|e| e.to_string())?;
    let t = Tensor::from_slice(&y).reshape([1, 1, 2, 3]);
    let net = mbhr_net::loss::composite_loss(&t, &t, w).map_err(|e| e.to_string())?.double_value(&[]);
    for v in [core, net] {
        ensure((v + 0.8).abs() <= LOSS_TOL, || format!("identity loss {v}"))?;
    }
    let cs = |a: &[f64], b: &[f64]| cosine_similarity_loss(a, b).unwrap();
    let cases = [
        (cs(&[1.0, 2.0, 3.0], &[2.0, 4.0, 6.0]), -1.0),
        (cs(&[1.0, 0.0], &[0.0, 1.0]), 0.0),
        (cs(&[1.0, 1.0], &[1.0, 0.0]), -1.0 / 2f64.sqrt()),
    ];
    for (got, want) in cases {
        ensure((got - want).abs() <= LOSS_TOL, || format!("cosine {got} vs {want}"))?;
    }
    Ok(format!("identity -0.8 and cosine examples within {LOSS_TOL:e}"))
}

// ---- 3: gradients ----

fn model_fd() -> Result<f64, String> {
    tch::manual_seed(3);
    let cfg = ModelConfig::with_width(0.125);
    let mut m = MbhrNet::new(cfg.clone(), Device::Cpu).map_err(|e| e.to_string())?;
    m.to_double();
    // the zero-initialized head bias puts all-zero feature pixels exactly on the ReLU kink
    tch::no_grad(|| {
        let _ = m.var_store().variables()["head.conv.bias"].shallow_clone().fill_(0.05);
    });
    let s2 = Tensor::randn([1, 5, 128, 128], (Kind::Double, Device::Cpu));
    let s1 = Tensor::randn([1, 4, 128, 128], (Kind::Double, Device::Cpu));
    let out = m.forward_t(&s2, &s1, false).map_err(|e| e.to_string())?;
    out.sum(Kind::Double).backward();
    let vars = m.var_store().variables();
    let mut worst: f64 = 0.0;
    for (name, idx) in [("head.conv.bias", 0i64), ("decoder.stage3.conv.weight", 11), ("s1.stem.conv.weight", 40), ("s2.stage4.block0.conv1.weight", 2)] {
        let var = &vars[name];
        let analytic = var.grad().view([-1]).double_value(&[idx]);
        let eval = |d: f64| {
            tch::no_grad(|| {
                let _ = var.view([-1]).get(idx).g_add_scalar_(d);
            });
            let v = m.predict(&s2, &s1).unwrap().sum(Kind::Double).double_value(&[]);
            tch::no_grad(|| {
                let _ = var.view([-1]).get(idx).g_add_scalar_(-d);
            });
            v
        };
        let fd = (eval(MODEL_FD_STEP) - eval(-MODEL_FD_STEP)) / (2.0 * MODEL_FD_STEP);
        ensure(analytic != 0.0 || name != "head.conv.bias", || "head bias gradient is zero".into())?;
        let rel = (analytic - fd).abs() / analytic.abs().max(fd.abs()).max(1e-6);
        ensure(rel < MODEL_FD_REL, || format!("{name}[{idx}]: analytic {analytic} vs fd {fd}"))?;
        worst = worst.max(rel);
    }
    Ok(worst)
}

fn c3() -> Outcome {
    let start = Instant::now();
    let w = LossWeights::default();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let t: Vec<f64> = (0..16).map(|_| rng.random_range(0.0..30.0)).collect();
        let p: Vec<f64> = (0..16).map(|_| rng.random_range(0.0..30.0)).collect();
        let g = composite_loss_grad(&t, &p, w).map_err(|e| e.to_string())?;
        for i in 0..16 {
            let (mut up, mut dn) = (p.clone(), p.clone());
            up[i] += LOSS_FD_STEP;
            dn[i] -= LOSS_FD_STEP;
            let fd = (composite_loss(&t, &up, w).unwrap() - composite_loss(&t, &dn, w).unwrap()) / (2.0 * LOSS_FD_STEP);
            let rel = (g[i] - fd).abs() / g[i].abs().max(fd.abs()).max(1e-3);
            ensure(rel < LOSS_FD_REL, || format!("loss grad component {i}: {} vs {fd}", g[i]))?;
            worst = worst.max(rel);
        }
    }
    let model_worst = model_fd()?;
    within(start, C3_BUDGET)?;
    Ok(format!("loss max rel {worst:.1e} < {LOSS_FD_REL:e}, model max rel {model_worst:.1e} < {MODEL_FD_REL:e}"))
}

// ---- 4: shapes ----

fn c4() -> Outcome {
    tch::manual_seed(4);
    let cfg = ModelConfig::default();
    let m = MbhrNet::new(cfg.clone(), Device::Cpu).map_err(|e| e.to_string())?;
    let s2 = Tensor::randn([5, 128, 128], (Kind::Float, Device::Cpu));
    let s1 = Tensor::randn([4, 128, 128], (Kind::Float, Device::Cpu));
    tch::no_grad(|| -> Outcome {
        let f1 = m.encode(Branch::S1, &s1, false).map_err(|e| e.to_string())?;
        let f2 = m.encode(Branch::S2, &s2, false).map_err(|e| e.to_string())?;
        let sides: Vec<i64> = f2.maps.iter().map(|t| t.size()[2]).collect();
        ensure(sides == [64, 32, 16, 8], || format!("level sides {sides:?}"))?;
        ensure(f1.shapes().iter().zip(f2.shapes()).all(|(a, b)| a[2..] == b[2..]), || "branch sides differ".into())?;
        let expect: Vec<Vec<i64>> = [(256, 64), (512, 32), (1024, 16), (2048, 8)].iter().map(|&(c, s)| vec![1, c, s, s]).collect();
        ensure(f2.shapes() == expect, || format!("S2 levels {:?}", f2.shapes()))?;
        let fused = m.fuse(&f1, &f2).map_err(|e| e.to_string())?;
        for i in 0..4 {
            let c = fused.maps[i].size()[1];
            ensure(c == f1.maps[i].size()[1] + f2.maps[i].size()[1], || format!("fused level {i} has {c} channels"))?;
        }
        let out = m.decode(&fused, false).map_err(|e| e.to_string())?;
        ensure(out.size() == [1, 1, 128, 128], || format!("output {:?}", out.size()))?;
        let min = out.min().double_value(&[]);
        ensure(min >= 0.0, || format!("negative output {min}"))?;
        Ok("levels 64/32/16/8, fused = s1 + s2 channels, output (1,128,128) >= 0".into())
    })
}

// ---- 5: augmentation ----

fn c5() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let m = generate_dataset_with_ratio(5, &SceneParams { seed: 5, ..Default::default() }, dir.path(), 1.0).map_err(|e| e.to_string())?;
    let n = m.count(Split::Train);
    let mut pairs = 0;
    for e in m.split(Split::Train) {
        pairs += make_augmented_pairs(&m.load_sample(e).map_err(|e| e.to_string())?).len();
    }
    ensure(n == 5 && pairs == 60, || format!("{n} tiles gave {pairs} pairs"))?;
    Ok("5 training tiles -> 60 pairs".into())
}

// ---- 6: overfit ----

#[derive(Debug, Clone, PartialEq)]
struct OverfitResult {
    first: f64,
    last5: f64,
    rmse: f64,
}

fn overfit() -> Result<OverfitResult, String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let m = generate_dataset_with_ratio(2, &SceneParams { seed: 6, ..Default::default() }, dir.path(), 1.0).map_err(|e| e.to_string())?;
    let cfg = TrainConfig {
        epochs: usize::MAX,
        width_multiplier: 0.25,
        max_steps: Some(OVERFIT_STEPS),
        val_fraction: 0.0,
        lr_init: OVERFIT_LR,
        seed: 6,
        ..Default::default()
    };
    let out = mbhr_net::train_with(&m, &cfg, None, Device::Cpu, |_| {}).map_err(|e| e.to_string())?;
    let losses = &out.step_losses;
    ensure(losses.len() == OVERFIT_STEPS, || format!("{} steps", losses.len()))?;
    let last5 = losses[losses.len() - 5..].iter().sum::<f64>() / 5.0;
    let p = NetPredictor::new(out.model, out.normalization);
    let report = evaluate(&p, &m, Split::Train, MonthAggregate::Mean).map_err(|e| e.to_string())?;
    Ok(OverfitResult { first: losses[0], last5, rmse: report.aggregate["rmse_m"].mean })
}

fn check_overfit(r: &OverfitResult, secs: f64) -> Outcome {
    let drop = (r.first - r.last5) / r.first.abs();
    ensure(drop >= OVERFIT_MIN_DROP, || format!("loss {:.4} -> {:.4}, drop {:.1}%", r.first, r.last5, 100.0 * drop))?;
    ensure(r.rmse < OVERFIT_MAX_RMSE_M, || format!("rmse {:.3} m", r.rmse))?;
    Ok(format!("loss {:.4} -> {:.4} (drop {:.0}%), rmse {:.3} m, {:.0}s", r.first, r.last5, 100.0 * drop, r.rmse, secs))
}

// ---- 7: synthetic end to end ----

#[derive(Debug, Clone, PartialEq)]
struct E2eResult {
    rmse: f64,
    baseline: f64,
    iou: f64,
    r2: f64,
    final_train_loss: f64,
}

fn e2e_dataset(root: &Path) -> Result<DatasetManifest, String> {
    generate_dataset(80, &SceneParams { seed: 42, ..Default::default() }, root).map_err(|e| e.to_string())?;
    load_manifest(root).map_err(|e| e.to_string())
}

fn end_to_end() -> Result<E2eResult, String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let m = e2e_dataset(dir.path())?;
    let cfg = TrainConfig { epochs: 30, width_multiplier: 0.5, months_per_epoch: 2, seed: 42, ..Default::default() };
    let out = mbhr_net::train_with(&m, &cfg, None, Device::Cpu, |r| {
        eprintln!("    epoch {:>2} lr {:.2e} train {:.4} val {:?} {:.0}s", r.epoch, r.lr, r.train_loss, r.val_loss, r.wall_seconds)
    })
    .map_err(|e| e.to_string())?;
    let final_train_loss = out.log.last().map(|r| r.train_loss).unwrap_or(f64::NAN);
    let p = NetPredictor::new(out.model, out.normalization);
    let net: EvalReport = evaluate(&p, &m, Split::Test, MonthAggregate::Mean).map_err(|e| e.to_string())?;
    let g = mean_building_height(&m, Split::Train).map_err(|e| e.to_string())?;
    let base = evaluate(&ConstantPredictor(g as f32), &m, Split::Test, MonthAggregate::Mean).map_err(|e| e.to_string())?;
    Ok(E2eResult {
        rmse: net.aggregate["rmse_m"].mean,
        baseline: base.aggregate["rmse_m"].mean,
        iou: net.aggregate["iou"].mean,
        r2: net.aggregate.get("r2").map(|s| s.mean).unwrap_or(f64::NAN),
        final_train_loss,
    })
}

fn check_e2e(r: &E2eResult, secs: f64) -> Outcome {
    let gain = 1.0 - r.rmse / r.baseline;
    let summary = format!(
        "rmse {:.3} m vs baseline {:.3} m (gain {:.0}%), iou {:.3}, r2 {:.3}, {:.0} min",
        r.rmse, r.baseline, 100.0 * gain, r.iou, r.r2, secs / 60.0
    );
    ensure(gain >= E2E_MIN_GAIN && r.iou >= E2E_MIN_IOU && r.r2 >= E2E_MIN_R2, || summary.clone())?;
    ensure(secs < C7_BUDGET.as_secs_f64(), || format!("{summary}: over budget"))?;
    Ok(summary)
}

// ---- 8: scheduler ----

fn c8() -> Outcome {
    let start = Instant::now();
    let mut s = ReduceOnPlateau::<f64>::new(PlateauConfig::default()).map_err(|e| e.to_string())?;
    let got: Vec<f64> = (0..40).map(|_| s.step(0.25)).collect();
    for (e, lr) in got.iter().enumerate() {
        let want = (1e-4 * 0.5f64.powi((e / 5) as i32)).max(1e-5);
        ensure((lr - want).abs() <= SCHED_TOL, || format!("after epoch {}: {lr} vs {want}", e + 1))?;
    }
    within(start, C8_BUDGET)?;
    Ok("1e-4, halved every 5 flat epochs, clamped at 1e-5".into())
}

// ---- 10: protocol counterexamples ----

fn c10() -> Outcome {
    let g = |v: Vec<f32>| Grid::from_vec(4, 1, v).unwrap();
    // strict threshold: a pixel of exactly 1.0 m is ground
    let at = g(vec![1.0, 5.0, 0.0, 0.0]);
    ensure(binarize(&at, BUILDING_THRESHOLD_M as f32).as_slice() == [false, true, false, false], || "1.0 m counted as building".into())?;
    let reference = g(vec![0.0, 5.0, 0.0, 0.0]);
    let (strict, _) = tile_metrics("t", &at, &reference).map_err(|e| e.to_string())?;
    let inclusive = 1.0 / 2.0;
    ensure(strict.iou == 1.0 && strict.iou != inclusive, || format!("threshold iou {}", strict.iou))?;

    // IoU on the unfiltered prediction: a spurious building off the footprint lowers it
    let pred = g(vec![9.0, 5.0, 0.0, 0.0]);
    let (m, _) = tile_metrics("t", &pred, &reference).map_err(|e| e.to_string())?;
    ensure(m.iou == 0.5, || format!("unfiltered iou {} (filtering first would give 1)", m.iou))?;

    // RMSE and R² over the reference footprint only
    let reference = g(vec![4.0, 8.0, 0.0, 0.0]);
    let pred = g(vec![5.0, 7.0, 20.0, 0.0]);
    let (m, _) = tile_metrics("t", &pred, &reference).map_err(|e| e.to_string())?;
    let all_pixels = ((1.0 + 1.0 + 400.0) / 4.0f64).sqrt();
    ensure(m.rmse_m == Some(1.0) && all_pixels != 1.0, || format!("rmse {:?}", m.rmse_m))?;
    ensure(m.r2 == Some(0.75), || format!("r2 {:?}", m.r2))?;
    Ok("strict > 1.0, IoU before filtering, RMSE/R2 on footprint".into())
}

// ---- runner ----

struct Runner {
    selected: Option<Vec<usize>>,
    failed: usize,
}

impl Runner {
    fn wants(&self, id: usize) -> bool {
        self.selected.as_ref().is_none_or(|s| s.contains(&id))
    }

    fn report(&mut self, id: usize, name: &str, outcome: Outcome) {
        match outcome {
            Ok(msg) => println!("[PASS] criterion {id:>2} {name}: {msg}"),
            Err(msg) => {
                self.failed += 1;
                println!("[FAIL] criterion {id:>2} {name}: {msg}");
            }
        }
    }

    fn run(&mut self, id: usize, name: &str, f: impl FnOnce() -> Outcome) {
        if self.wants(id) {
            let outcome = catch(f);
            self.report(id, name, outcome);
        }
    }
}

fn catch<T>(f: impl FnOnce() -> Result<T, String>) -> Result<T, String> {
    catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        let msg = p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()));
        Err(format!("panicked: {}", msg.unwrap_or_default()))
    })
}

fn timed<T>(f: impl FnOnce() -> Result<T, String>) -> (Result<T, String>, f64) {
    let t = Instant::now();
    let r = catch(f);
    (r, t.elapsed().as_secs_f64())
}

fn main() {
    let selected = std::env::var("MBHR_ACCEPTANCE")
        .ok()
        .map(|s| s.split(',').filter_map(|x| x.trim().parse().ok()).collect::<Vec<usize>>());
    let threads = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1);
    tch::set_num_threads(threads as i32);
    let mut r = Runner { selected, failed: 0 };

    r.run(1, "metric oracle equivalence", c1);
    r.run(2, "loss correctness", c2);
    r.run(3, "gradient check", c3);
    r.run(4, "shape contract", c4);
    r.run(5, "augmentation count", c5);

    let need_overfit = r.wants(6) || r.wants(9);
    let first_overfit = need_overfit.then(|| timed(overfit));
    if let Some((res, secs)) = &first_overfit {
        if r.wants(6) {
            let o = res.clone().and_then(|x| {
                ensure(*secs < C6_BUDGET.as_secs_f64(), || format!("took {secs:.0}s"))?;
                check_overfit(&x, *secs)
            });
            r.report(6, "overfit smoke test", o);
        }
    }

    let need_e2e = r.wants(7) || r.wants(9);
    let first_e2e = need_e2e.then(|| timed(end_to_end));
    if let Some((res, secs)) = &first_e2e {
        if r.wants(7) {
            let o = res.clone().and_then(|x| check_e2e(&x, *secs));
            r.report(7, "synthetic end-to-end", o);
        }
    }

    r.run(8, "scheduler conformance", c8);

    if r.wants(9) {
        let o = (|| -> Outcome {
            let a6 = first_overfit.as_ref().unwrap().0.clone()?;
            let a7 = first_e2e.as_ref().unwrap().0.clone()?;
            let b6 = timed(overfit).0?;
            let b7 = timed(end_to_end).0?;
            let pairs = [
                ("overfit first loss", a6.first, b6.first),
                ("overfit final loss", a6.last5, b6.last5),
                ("overfit rmse", a6.rmse, b6.rmse),
                ("e2e rmse", a7.rmse, b7.rmse),
                ("e2e baseline", a7.baseline, b7.baseline),
                ("e2e iou", a7.iou, b7.iou),
                ("e2e r2", a7.r2, b7.r2),
                ("e2e final train loss", a7.final_train_loss, b7.final_train_loss),
            ];
            let mut worst: f64 = 0.0;
            for (name, x, y) in pairs {
                let d = (x - y).abs();
                ensure(d <= DETERMINISM_TOL, || format!("{name}: {x} vs {y}"))?;
                worst = worst.max(d);
            }
            Ok(format!("8 metrics reproduced, max |diff| {worst:.1e} <= {DETERMINISM_TOL:e}"))
        })();
        r.report(9, "determinism", o);
    }

    r.run(10, "protocol fidelity", c10);

    if r.failed > 0 {
        println!("{} criteria failed", r.failed);
        std::process::exit(1);
    }
}
