use mbhr_core::eval::{aggregate_of, tile_metrics};
use mbhr_core::metrics::{binarize, building_mask, footprint_filter, iou, r2, rmse};
use mbhr_core::{Grid, Mask};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

// Brute-force references written with explicit index loops.

fn bf_rmse(r: &[f64], p: &[f64], m: &[bool]) -> Option<f64> {
    let mut s = 0.0;
    let mut n = 0;
    for i in 0..r.len() {
        if m[i] {
            s += (r[i] - p[i]).powi(2);
            n += 1;
        }
    }
    if n == 0 { None } else { Some((s / n as f64).sqrt()) }
}

fn bf_r2(r: &[f64], p: &[f64], m: &[bool]) -> Option<f64> {
    let mut n = 0;
    let mut mean = 0.0;
    for i in 0..r.len() {
        if m[i] {
            mean += r[i];
            n += 1;
        }
    }
    if n < 2 {
        return None;
    }
    mean /= n as f64;
    let (mut res, mut tot) = (0.0, 0.0);
    for i in 0..r.len() {
        if m[i] {
            res += (r[i] - p[i]).powi(2);
            tot += (r[i] - mean).powi(2);
        }
    }
    if tot == 0.0 { None } else { Some(1.0 - res / tot) }
}

fn bf_iou(a: &[bool], b: &[bool]) -> f64 {
    let mut i_ = 0;
    let mut u = 0;
    for k in 0..a.len() {
        if a[k] && b[k] {
            i_ += 1;
        }
        if a[k] || b[k] {
            u += 1;
        }
    }
    if u == 0 { 1.0 } else { i_ as f64 / u as f64 }
}

fn random_heights(rng: &mut ChaCha8Rng) -> Grid<f64> {
    Grid::from_fn(8, 8, |_, _| if rng.random_bool(0.4) { 0.0 } else { rng.random_range(0.0..30.0) })
}

fn close(a: Option<f64>, b: Option<f64>, tol: f64) -> bool {
    match (a, b) {
        (None, None) => true,
        (Some(x), Some(y)) => (x - y).abs() <= tol,
        _ => false,
    }
}

#[test]
fn metrics_match_brute_force_on_200_grids() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for _ in 0..200 {
        let r = random_heights(&mut rng);
        let p = random_heights(&mut rng);
        let region = building_mask(&r);
        let got_rmse = rmse(&r, &p, &region).unwrap();
        let got_r2 = r2(&r, &p, &region).unwrap();
        assert!(close(got_rmse, bf_rmse(r.as_slice(), p.as_slice(), region.as_slice()), 1e-9));
        assert!(close(got_r2, bf_r2(r.as_slice(), p.as_slice(), region.as_slice()), 1e-9));
        let (a, b) = (building_mask(&r), building_mask(&p));
        assert!((iou(&a, &b).unwrap() - bf_iou(a.as_slice(), b.as_slice())).abs() <= 1e-9);
    }
}

fn grid8() -> impl Strategy<Value = Grid<f64>> {
    proptest::collection::vec(prop_oneof![Just(0.0), 0.0f64..30.0], 64).prop_map(|v| Grid::from_vec(8, 8, v).unwrap())
}

proptest! {
    #[test]
    fn iou_is_symmetric(a in grid8(), b in grid8()) {
        let (ma, mb) = (building_mask(&a), building_mask(&b));
        prop_assert_eq!(iou(&ma, &mb).unwrap(), iou(&mb, &ma).unwrap());
    }

    #[test]
    fn filtering_is_idempotent(p in grid8(), r in grid8()) {
        let once = footprint_filter(&p, &r).unwrap();
        prop_assert_eq!(footprint_filter(&once, &r).unwrap(), once);
    }

    #[test]
    fn footprint_metrics_ignore_off_footprint_pixels(p in grid8(), r in grid8(), noise in grid8()) {
        let region = building_mask(&r);
        let mut q = p.clone();
        for (i, v) in q.as_mut_slice().iter_mut().enumerate() {
            if !region.as_slice()[i] {
                *v = noise.as_slice()[i];
            }
        }
        prop_assert_eq!(rmse(&r, &p, &region).unwrap(), rmse(&r, &q, &region).unwrap());
        prop_assert_eq!(r2(&r, &p, &region).unwrap(), r2(&r, &q, &region).unwrap());
    }

    #[test]
    fn constant_bias_gives_rmse_of_bias(r in grid8(), b in -5.0f64..5.0) {
        let region = building_mask(&r);
        let p = r.map(|v| v + b);
        if let Some(e) = rmse(&r, &p, &region).unwrap() {
            prop_assert!((e - b.abs()).abs() < 1e-9);
        }
    }

    #[test]
    fn aggregate_recomputes_from_per_tile(seed in 0u64..1000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tiles: Vec<_> = (0..6).map(|i| {
            let r = random_heights(&mut rng).map(|&v| v as f32);
            let p = random_heights(&mut rng).map(|&v| v as f32);
            tile_metrics(&format!("t{i}"), &p, &r).unwrap().0
        }).collect();
        let agg = aggregate_of(&tiles);
        let iou: Vec<f64> = tiles.iter().map(|t| t.iou).collect();
        let mean = iou.iter().sum::<f64>() / iou.len() as f64;
        let std = (iou.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / iou.len() as f64).sqrt();
        prop_assert_eq!(agg["iou"].mean, mean);
        prop_assert_eq!(agg["iou"].std, std);
    }
}

#[test]
fn threshold_and_filter_examples() {
    let h = Grid::from_vec(4, 1, vec![0.0, 1.0, 1.01, 12.0]).unwrap();
    assert_eq!(binarize(&h, 1.0).as_slice(), &[false, false, true, true]);
    let zero = Grid::filled(3, 3, 0.0f64);
    let pred = Grid::filled(3, 3, 7.0f64);
    assert!(footprint_filter(&pred, &zero).unwrap().iter().all(|&v| v == 0.0));
    let m: Mask = Grid::filled(2, 1, true);
    let r = Grid::from_vec(2, 1, vec![2.0, 4.0]).unwrap();
    assert_eq!(r2(&r, &Grid::filled(2, 1, 3.0), &m).unwrap(), Some(0.0));
}
