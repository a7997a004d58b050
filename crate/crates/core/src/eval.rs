//! Evaluation protocol: monthly predictions aggregated per tile, IoU on unfiltered binarized
//! maps, RMSE and R² over the reference footprint, per-tile mean ± std.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::manifest::DatasetManifest;
use crate::metrics::{building_mask, footprint_filter, iou, r2, rmse, BUILDING_THRESHOLD_M};
use crate::raster::{HeightMap, SampleRecord, Split};

/// Anything that maps a record's twelve month pairs to twelve height maps.
pub trait HeightPredictor {
    fn predict_months(&self, rec: &SampleRecord<f32>) -> Result<Vec<HeightMap<f32>>>;
}

/// Perfect oracle: returns the reference for every month.
#[derive(Debug, Clone, Copy, Default)]
pub struct ReferencePredictor;

impl HeightPredictor for ReferencePredictor {
    fn predict_months(&self, rec: &SampleRecord<f32>) -> Result<Vec<HeightMap<f32>>> {
        Ok(vec![rec.reference_heights(); rec.s1.months.len()])
    }
}

/// Predicts the same value everywhere.
#[derive(Debug, Clone, Copy)]
pub struct ConstantPredictor(pub f32);

impl HeightPredictor for ConstantPredictor {
    fn predict_months(&self, rec: &SampleRecord<f32>) -> Result<Vec<HeightMap<f32>>> {
        let r = &rec.reference;
        Ok(vec![Grid::filled(r.width(), r.height(), self.0); rec.s1.months.len()])
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MonthAggregate {
    #[default]
    Mean,
    Median,
}

/// Per-pixel mean or median of monthly predictions.
pub fn aggregate_months(preds: &[HeightMap<f32>], how: MonthAggregate) -> Result<HeightMap<f32>> {
    let first = preds.first().ok_or_else(|| Error::Other("no monthly predictions".into()))?;
    for p in preds {
        first.ensure_same_shape(p)?;
    }
    let k = preds.len();
    let mut buf = vec![0f64; k];
    let data = (0..first.len())
        .map(|i| {
            for (j, p) in preds.iter().enumerate() {
                buf[j] = p.as_slice()[i] as f64;
            }
            match how {
                MonthAggregate::Mean => (buf.iter().sum::<f64>() / k as f64) as f32,
                MonthAggregate::Median => {
                    buf.sort_by(f64::total_cmp);
                    let v = if k % 2 == 1 { buf[k / 2] } else { 0.5 * (buf[k / 2 - 1] + buf[k / 2]) };
                    v as f32
                }
            }
        })
        .collect();
    Grid::from_vec(first.width(), first.height(), data)
}

pub fn predict_tile(p: &dyn HeightPredictor, rec: &SampleRecord<f32>, how: MonthAggregate) -> Result<HeightMap<f32>> {
    aggregate_months(&p.predict_months(rec)?, how)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TileMetrics {
    pub tile_id: String,
    pub rmse_m: Option<f64>,
    pub r2: Option<f64>,
    pub iou: f64,
    /// Reference pixels above the building threshold.
    pub footprint_px: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    /// Population standard deviation over tiles.
    pub std: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UndefinedMetric {
    pub tile_id: String,
    pub metric: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub split: Split,
    pub per_tile: Vec<TileMetrics>,
    /// Keys `rmse_m`, `r2`, `iou`; absent when no tile defines the metric.
    pub aggregate: BTreeMap<String, MeanStd>,
    pub undefined: Vec<UndefinedMetric>,
    /// `(ref_m, pred_m)` for every reference pixel above the building threshold.
    pub scatter: Vec<(f32, f32)>,
}

pub fn mean_std(values: &[f64]) -> Option<MeanStd> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    Some(MeanStd { mean, std: var.sqrt(), n: values.len() })
}

/// Metrics and scatter pairs of one tile.
pub fn tile_metrics(tile_id: &str, pred: &HeightMap<f32>, reference: &HeightMap<f32>) -> Result<(TileMetrics, Vec<(f32, f32)>)> {
    let pred64 = pred.map(|&v| v as f64);
    let ref64 = reference.map(|&v| v as f64);
    let ref_mask = building_mask(&ref64);
    let iou_v = iou(&ref_mask, &building_mask(&pred64))?;
    let filtered = footprint_filter(&pred64, &ref64)?;
    let rmse_m = rmse(&ref64, &filtered, &ref_mask)?;
    let r2_v = r2(&ref64, &filtered, &ref_mask)?;
    let thr = BUILDING_THRESHOLD_M as f32;
    let scatter = reference
        .iter()
        .zip(pred.iter())
        .filter(|(&r, _)| r > thr)
        .map(|(&r, &p)| (r, p))
        .collect();
    Ok((
        TileMetrics {
            tile_id: tile_id.to_string(),
            rmse_m,
            r2: r2_v,
            iou: iou_v,
            footprint_px: ref_mask.count(),
        },
        scatter,
    ))
}

/// Assembles a report; tiles are ordered by id regardless of input order.
pub fn build_report(split: Split, mut tiles: Vec<(TileMetrics, Vec<(f32, f32)>)>) -> EvalReport {
    tiles.sort_by(|a, b| a.0.tile_id.cmp(&b.0.tile_id));
    let mut undefined = Vec::new();
    for (t, _) in &tiles {
        if t.rmse_m.is_none() {
            undefined.push(UndefinedMetric {
                tile_id: t.tile_id.clone(),
                metric: "rmse_m".into(),
                reason: "no reference building pixels".into(),
            });
        }
        if t.r2.is_none() {
            undefined.push(UndefinedMetric {
                tile_id: t.tile_id.clone(),
                metric: "r2".into(),
                reason: if t.footprint_px < 2 {
                    "fewer than two reference building pixels".into()
                } else {
                    "constant reference height over footprint".into()
                },
            });
        }
    }
    let (per_tile, scatters): (Vec<_>, Vec<_>) = tiles.into_iter().unzip();
    let aggregate = aggregate_of(&per_tile);
    EvalReport {
        split,
        per_tile,
        aggregate,
        undefined,
        scatter: scatters.into_iter().flatten().collect(),
    }
}

/// Mean ± std of each metric over the tiles that define it.
pub fn aggregate_of(per_tile: &[TileMetrics]) -> BTreeMap<String, MeanStd> {
    let mut out = BTreeMap::new();
    let cols: [(&str, Vec<f64>); 3] = [
        ("rmse_m", per_tile.iter().filter_map(|t| t.rmse_m).collect()),
        ("r2", per_tile.iter().filter_map(|t| t.r2).collect()),
        ("iou", per_tile.iter().map(|t| t.iou).collect()),
    ];
    for (k, v) in cols {
        if let Some(ms) = mean_std(&v) {
            out.insert(k.to_string(), ms);
        }
    }
    out
}

pub fn evaluate(p: &dyn HeightPredictor, manifest: &DatasetManifest, split: Split, how: MonthAggregate) -> Result<EvalReport> {
    let entries: Vec<_> = manifest.split(split).collect();
    if entries.is_empty() {
        return Err(Error::NoSamples { path: manifest.root.join(format!("<{split} split>")) });
    }
    let mut tiles = Vec::with_capacity(entries.len());
    for e in entries {
        let rec = manifest.load_sample(e)?;
        let pred = predict_tile(p, &rec, how).map_err(|err| err.in_tile(&rec.tile_id))?;
        tiles.push(tile_metrics(&rec.tile_id, &pred, &rec.reference_heights())?);
    }
    Ok(build_report(split, tiles))
}

/// Mean height of all reference building pixels in `split`: the global-mean baseline.
pub fn mean_building_height(manifest: &DatasetManifest, split: Split) -> Result<f64> {
    let (mut sum, mut n) = (0f64, 0usize);
    for e in manifest.split(split) {
        let rec = manifest.load_sample(e)?;
        for &h in rec.reference.as_slice() {
            if h > BUILDING_THRESHOLD_M as f32 {
                sum += h as f64;
                n += 1;
            }
        }
    }
    if n == 0 {
        return Err(Error::Other(format!("{split} split has no building pixels")));
    }
    Ok(sum / n as f64)
}

pub fn scatter_csv(report: &EvalReport) -> String {
    let mut s = String::from("ref_m,pred_m\n");
    for (r, p) in &report.scatter {
        let _ = writeln!(s, "{r},{p}");
    }
    s
}

pub fn write_report(path: &Path, report: &EvalReport) -> Result<()> {
    let mut s = serde_json::to_string_pretty(report).expect("report serializes");
    s.push('\n');
    std::fs::write(path, s).map_err(|e| Error::io(path, e))
}

pub fn read_report(path: &Path) -> Result<EvalReport> {
    let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&s).map_err(|source| Error::Json { path: path.into(), source })
}
