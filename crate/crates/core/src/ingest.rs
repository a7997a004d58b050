//! Staged raw imagery and building polygons to the canonical dataset.
//!
//! Raw layout, one directory per tile:
//!
//! ```text
//! <raw>/<tile_id>/s2/<YYYY-MM-DD>.tif       5 bands (+ optional 6th cloud mask, nonzero = cloudy)
//! <raw>/<tile_id>/s1_asc/<YYYY-MM-DD>.tif   2 bands VV, VH in linear power
//! <raw>/<tile_id>/s1_desc/<YYYY-MM-DD>.tif
//! <raw>/<tile_id>/ref.geojson               polygons with property `height_m`
//! <raw>/<tile_id>/tile.json                 optional {"city": ...}
//! ```

use std::path::{Path, PathBuf};

use chrono::{Datelike, NaiveDate};
use geo::{Area, BooleanOps, BoundingRect, Contains, Coord, MultiPolygon, Point, Polygon, Rect, Validation};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geotiff::read_geotiff;
use crate::grid::{Grid, Mask};
use crate::manifest::{assemble_manifest, write_manifest, write_sample, DatasetManifest, TileStats, DEFAULT_SPLIT_RATIO, MANIFEST_FILE};
use crate::raster::{Georef, HeightMap, Modality, MonthlyStack, RasterTile, SampleRecord, Split, MONTHS, RESOLUTION_M, TILE_PX};
use crate::synth::to_db;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Orbit {
    Ascending,
    Descending,
    None,
}

impl std::fmt::Display for Orbit {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Orbit::Ascending => "ascending",
            Orbit::Descending => "descending",
            Orbit::None => "n/a",
        })
    }
}

#[derive(Debug, Clone)]
pub struct RawScene {
    pub date: NaiveDate,
    pub raster: RasterTile<f32>,
    /// `true` marks a cloudy (unusable) pixel.
    pub cloud: Option<Mask>,
}

#[derive(Debug, Clone)]
pub struct RawSceneSet {
    pub modality: Modality,
    pub orbit: Orbit,
    pub scenes: Vec<RawScene>,
}

#[derive(Debug, Clone)]
pub struct BuildingPolygon {
    pub footprint: Polygon<f64>,
    pub height_m: f64,
}

pub type BuildingPolygonSet = Vec<BuildingPolygon>;

/// Upper-left corner and size of one output tile.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TileFootprint {
    pub georef: Georef,
    pub size_px: usize,
}

impl TileFootprint {
    pub fn rect(&self) -> Rect<f64> {
        let side = self.size_px as f64 * self.georef.resolution_m;
        Rect::new(
            Coord { x: self.georef.origin_e, y: self.georef.origin_n - side },
            Coord { x: self.georef.origin_e + side, y: self.georef.origin_n },
        )
    }
}

/// Grid-aligned tiles (origins on multiples of the tile side) that are at least half inside
/// `boundary`.
pub fn build_tile_grid(boundary: &Polygon<f64>, tile_px: usize, res_m: f64, epsg: u16) -> Result<Vec<TileFootprint>> {
    let degenerate = |msg: &str| Error::Geometry { what: "boundary".into(), msg: msg.into() };
    if tile_px == 0 || !(res_m > 0.0) {
        return Err(degenerate("tile size and resolution must be positive"));
    }
    let area = boundary.unsigned_area();
    if !(area > 0.0) || !area.is_finite() {
        return Err(degenerate("zero or non-finite area"));
    }
    if let Err(e) = boundary.check_validation() {
        return Err(degenerate(&e.to_string()));
    }
    let bbox = boundary.bounding_rect().ok_or_else(|| degenerate("empty"))?;
    let side = tile_px as f64 * res_m;
    let (i0, i1) = ((bbox.min().x / side).floor() as i64, (bbox.max().x / side).ceil() as i64);
    let (j0, j1) = ((bbox.min().y / side).floor() as i64, (bbox.max().y / side).ceil() as i64);
    let mut out = Vec::new();
    // north to south, west to east
    for j in (j0..j1).rev() {
        for i in i0..i1 {
            let cell = Rect::new(
                Coord { x: i as f64 * side, y: j as f64 * side },
                Coord { x: (i + 1) as f64 * side, y: (j + 1) as f64 * side },
            )
            .to_polygon();
            let inside = cell.intersection(boundary).unsigned_area();
            if inside >= 0.5 * side * side {
                out.push(TileFootprint {
                    georef: Georef {
                        origin_e: i as f64 * side,
                        origin_n: (j + 1) as f64 * side,
                        resolution_m: res_m,
                        epsg,
                    },
                    size_px: tile_px,
                });
            }
        }
    }
    Ok(out)
}

fn month_index(date: NaiveDate) -> usize {
    date.month0() as usize
}

fn median(v: &mut [f32]) -> f32 {
    v.sort_by(f32::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn check_same_grid(set: &RawSceneSet) -> Result<(usize, usize, usize, Georef)> {
    let first = set.scenes.first().ok_or(Error::MissingMonth {
        month: 1,
        what: format!("{} scenes", set.modality),
    })?;
    let r = &first.raster;
    for s in &set.scenes {
        let t = &s.raster;
        if (t.bands(), t.width(), t.height()) != (r.bands(), r.width(), r.height()) || t.georef != r.georef {
            return Err(Error::shape(
                format!("{}x{}x{} at {:?}", r.bands(), r.height(), r.width(), r.georef),
                format!("scene {}: {}x{}x{} at {:?}", s.date, t.bands(), t.height(), t.width(), t.georef),
            ));
        }
    }
    Ok((r.bands(), r.width(), r.height(), r.georef))
}

/// Per-month, per-pixel median of cloud-free observations; wholly cloudy pixels of a month are
/// linearly interpolated in time from the nearest months that observed them.
pub fn composite_s2_monthly(raw: &RawSceneSet) -> Result<MonthlyStack<f32>> {
    let (bands, w, h, georef) = check_same_grid(raw)?;
    let nb = Modality::S2.band_count();
    if bands < nb {
        return Err(Error::shape(format!("at least {nb} S2 bands"), bands));
    }
    let mut by_month: Vec<Vec<&RawScene>> = vec![Vec::new(); MONTHS];
    for s in &raw.scenes {
        by_month[month_index(s.date)].push(s);
    }
    if let Some(m) = by_month.iter().position(|v| v.is_empty()) {
        return Err(Error::MissingMonth { month: m as u32 + 1, what: "S2 scenes".into() });
    }
    let n = w * h;
    // composites[m][b * n + p], None where unobserved
    let mut composites: Vec<Vec<Option<f32>>> = Vec::with_capacity(MONTHS);
    let mut buf = Vec::new();
    for scenes in &by_month {
        let mut out = vec![None; nb * n];
        for b in 0..nb {
            for p in 0..n {
                buf.clear();
                for s in scenes {
                    let cloudy = s.cloud.as_ref().is_some_and(|c| c.as_slice()[p]);
                    let v = s.raster.band(b)[p];
                    let nodata = s.raster.nodata.is_some_and(|nd| v == nd);
                    if !cloudy && !nodata && v.is_finite() {
                        buf.push(v);
                    }
                }
                if !buf.is_empty() {
                    out[b * n + p] = Some(median(&mut buf));
                }
            }
        }
        composites.push(out);
    }
    let mut months: Vec<RasterTile<f32>> = Vec::with_capacity(MONTHS);
    for m in 0..MONTHS {
        let mut data = vec![0f32; nb * n];
        for i in 0..nb * n {
            data[i] = match composites[m][i] {
                Some(v) => v,
                None => {
                    let prev = (0..m).rev().find_map(|k| composites[k][i].map(|v| (k, v)));
                    let next = (m + 1..MONTHS).find_map(|k| composites[k][i].map(|v| (k, v)));
                    match (prev, next) {
                        (Some((k0, v0)), Some((k1, v1))) => {
                            let t = (m - k0) as f32 / (k1 - k0) as f32;
                            v0 + t * (v1 - v0)
                        }
                        (Some((_, v)), None) | (None, Some((_, v))) => v,
                        (None, None) => {
                            return Err(Error::NeverObserved { x: (i % n) % w, y: (i % n) / w, band: i / n });
                        }
                    }
                }
            };
        }
        months.push(RasterTile::new(nb, w, h, data, georef)?);
    }
    Ok(MonthlyStack::new(Modality::S2, months))
}

fn monthly_mean_db(set: &RawSceneSet, what: &str) -> Result<Vec<RasterTile<f32>>> {
    let (bands, w, h, georef) = check_same_grid(set).map_err(|e| match e {
        Error::MissingMonth { month, .. } => Error::MissingMonth { month, what: what.into() },
        other => other,
    })?;
    if bands < 2 {
        return Err(Error::shape("2 bands (VV, VH)", bands));
    }
    let n = w * h;
    let mut out = Vec::with_capacity(MONTHS);
    for m in 0..MONTHS {
        let scenes: Vec<&RawScene> = set.scenes.iter().filter(|s| month_index(s.date) == m).collect();
        if scenes.is_empty() {
            return Err(Error::MissingMonth { month: m as u32 + 1, what: what.into() });
        }
        let mut data = vec![0f32; 2 * n];
        for b in 0..2 {
            for p in 0..n {
                let sum: f64 = scenes.iter().map(|s| s.raster.band(b)[p] as f64).sum();
                data[b * n + p] = to_db(sum / scenes.len() as f64) as f32;
            }
        }
        out.push(RasterTile::new(2, w, h, data, georef)?);
    }
    Ok(out)
}

/// Monthly mean of linear power per orbit and polarization, stored in dB.
pub fn average_s1_monthly(raw_asc: &RawSceneSet, raw_desc: &RawSceneSet) -> Result<MonthlyStack<f32>> {
    let asc = monthly_mean_db(raw_asc, "ascending S1 acquisitions")?;
    let desc = monthly_mean_db(raw_desc, "descending S1 acquisitions")?;
    let months = asc
        .iter()
        .zip(&desc)
        .map(|(a, d)| RasterTile::concat(&[a.clone(), d.clone()]))
        .collect::<Result<Vec<_>>>()?;
    Ok(MonthlyStack::new(Modality::S1, months))
}

/// Height of the tallest polygon containing each pixel centre; 0 elsewhere.
pub fn rasterize_reference(polys: &[BuildingPolygon], georef: &Georef, width: usize, height: usize) -> Result<HeightMap<f32>> {
    let mut out = Grid::filled(width, height, 0f32);
    let res = georef.resolution_m;
    for (i, poly) in polys.iter().enumerate() {
        let what = format!("polygon {i}");
        if !(poly.height_m > 0.0 && poly.height_m.is_finite()) {
            return Err(Error::Geometry { what, msg: format!("height {} is not positive", poly.height_m) });
        }
        if let Err(e) = poly.footprint.check_validation() {
            return Err(Error::Geometry { what, msg: e.to_string() });
        }
        let Some(bb) = poly.footprint.bounding_rect() else { continue };
        let col = |e: f64| ((e - georef.origin_e) / res - 0.5).ceil();
        let row = |n: f64| ((georef.origin_n - n) / res - 0.5).ceil();
        let x0 = col(bb.min().x).max(0.0) as usize;
        let x1 = (col(bb.max().x) + 1.0).clamp(0.0, width as f64) as usize;
        let y0 = row(bb.max().y).max(0.0) as usize;
        let y1 = (row(bb.min().y) + 1.0).clamp(0.0, height as f64) as usize;
        for y in y0..y1 {
            for x in x0..x1 {
                let (e, n) = georef.pixel_center(x, y);
                if poly.footprint.contains(&Point::new(e, n)) {
                    let v = out.get_mut(x, y);
                    *v = v.max(poly.height_m as f32);
                }
            }
        }
    }
    Ok(out)
}

/// Parses a GeoJSON FeatureCollection of (multi)polygons carrying `height_m`.
pub fn parse_buildings(text: &str, source: &Path) -> Result<BuildingPolygonSet> {
    let gj: geojson::GeoJson = text.parse().map_err(|e: geojson::Error| Error::Geometry {
        what: source.display().to_string(),
        msg: e.to_string(),
    })?;
    let geojson::GeoJson::FeatureCollection(fc) = gj else {
        return Err(Error::Geometry { what: source.display().to_string(), msg: "expected a FeatureCollection".into() });
    };
    let mut out = Vec::new();
    for (i, f) in fc.features.into_iter().enumerate() {
        let what = format!("{} feature {i}", source.display());
        let height_m = f
            .property("height_m")
            .and_then(|v| v.as_f64())
            .ok_or_else(|| Error::Geometry { what: what.clone(), msg: "missing numeric height_m".into() })?;
        let geom = f.geometry.ok_or_else(|| Error::Geometry { what: what.clone(), msg: "no geometry".into() })?;
        let g: geo::Geometry<f64> = geom
            .try_into()
            .map_err(|e: geojson::Error| Error::Geometry { what: what.clone(), msg: e.to_string() })?;
        let polys: Vec<Polygon<f64>> = match g {
            geo::Geometry::Polygon(p) => vec![p],
            geo::Geometry::MultiPolygon(MultiPolygon(ps)) => ps,
            other => {
                return Err(Error::Geometry { what, msg: format!("unsupported geometry {other:?}") });
            }
        };
        out.extend(polys.into_iter().map(|footprint| BuildingPolygon { footprint, height_m }));
    }
    Ok(out)
}

/// Nearest-neighbour resampling of `src` onto a `width x height` grid at `target`.
pub fn resample_nearest(src: &RasterTile<f32>, target: &Georef, width: usize, height: usize) -> Result<RasterTile<f32>> {
    if src.georef == *target && src.width() == width && src.height() == height {
        return Ok(src.clone());
    }
    let sg = &src.georef;
    let n = width * height;
    let mut data = vec![0f32; src.bands() * n];
    for y in 0..height {
        for x in 0..width {
            let (e, nn) = target.pixel_center(x, y);
            let sx = ((e - sg.origin_e) / sg.resolution_m).floor();
            let sy = ((sg.origin_n - nn) / sg.resolution_m).floor();
            if sx < 0.0 || sy < 0.0 || sx >= src.width() as f64 || sy >= src.height() as f64 {
                return Err(Error::Shape {
                    expected: format!("source raster covering ({e}, {nn})"),
                    actual: format!("{}x{} raster at {:?}", src.width(), src.height(), sg),
                });
            }
            let sp = sy as usize * src.width() + sx as usize;
            for b in 0..src.bands() {
                data[b * n + y * width + x] = src.band(b)[sp];
            }
        }
    }
    let mut out = RasterTile::new(src.bands(), width, height, data, *target)?;
    out.nodata = src.nodata;
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IngestConfig {
    pub raw_root: PathBuf,
    pub out_root: PathBuf,
    /// Calendar year of the monthly window; scenes from other years are ignored.
    pub year: i32,
    #[serde(default = "default_ratio")]
    pub split_ratio: f64,
    #[serde(default)]
    pub split_seed: u64,
    #[serde(default = "default_res")]
    pub resolution_m: f64,
}

fn default_ratio() -> f64 {
    DEFAULT_SPLIT_RATIO
}

fn default_res() -> f64 {
    RESOLUTION_M
}

fn scene_date(path: &Path) -> Option<NaiveDate> {
    let stem = path.file_stem()?.to_str()?;
    NaiveDate::parse_from_str(stem.get(..10)?, "%Y-%m-%d").ok()
}

fn list_tifs(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for e in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let p = e.map_err(|e| Error::io(dir, e))?.path();
        if p.extension().is_some_and(|x| x == "tif" || x == "tiff") {
            out.push(p);
        }
    }
    out.sort();
    Ok(out)
}

fn load_scene_set(dir: &Path, modality: Modality, orbit: Orbit, year: i32, grid: Option<&Georef>) -> Result<RawSceneSet> {
    let need = match modality {
        Modality::S1 => 2,
        Modality::S2 => 5,
    };
    let mut scenes = Vec::new();
    for path in list_tifs(dir)? {
        let date = scene_date(&path).ok_or_else(|| Error::geotiff(&path, "file name is not a YYYY-MM-DD date"))?;
        if date.year() != year {
            continue;
        }
        let mut raster = read_geotiff(&path)?.tile;
        if raster.bands() < need {
            return Err(Error::geotiff(&path, format!("expected {need} bands, found {}", raster.bands())));
        }
        let cloud = (modality == Modality::S2 && raster.bands() > need)
            .then(|| raster.band_grid(need).map(|&v| v != 0.0));
        if let Some(g) = grid {
            raster = resample_nearest(&raster, g, TILE_PX, TILE_PX).map_err(|e| Error::geotiff(&path, e))?;
        }
        if modality == Modality::S1 {
            raster = raster.select_bands(0..2);
        }
        scenes.push(RawScene { date, raster, cloud });
    }
    Ok(RawSceneSet { modality, orbit, scenes })
}

#[derive(Deserialize)]
struct TileMeta {
    city: String,
}

/// Ingests one raw tile directory into a sample record.
pub fn ingest_tile(dir: &Path, tile_id: &str, year: i32, res_m: f64) -> Result<SampleRecord<f32>> {
    // Tile footprint: first S2 scene's upper-left corner at the requested resolution.
    let s2_dir = dir.join("s2");
    let first = list_tifs(&s2_dir)?
        .into_iter()
        .next()
        .ok_or(Error::MissingMonth { month: 1, what: "S2 scenes".into() })?;
    let src = read_geotiff(&first)?.tile;
    let georef = Georef { resolution_m: res_m, ..src.georef };
    let resample = (src.georef != georef || src.width() != TILE_PX || src.height() != TILE_PX).then_some(&georef);

    let s2_raw = load_scene_set(&s2_dir, Modality::S2, Orbit::None, year, resample)?;
    let asc = load_scene_set(&dir.join("s1_asc"), Modality::S1, Orbit::Ascending, year, resample)?;
    let desc = load_scene_set(&dir.join("s1_desc"), Modality::S1, Orbit::Descending, year, resample)?;
    let s2 = composite_s2_monthly(&s2_raw)?;
    let s1 = average_s1_monthly(&asc, &desc)?;

    let ref_path = dir.join("ref.geojson");
    let text = std::fs::read_to_string(&ref_path).map_err(|e| Error::io(&ref_path, e))?;
    let polys = parse_buildings(&text, &ref_path)?;
    let heights = rasterize_reference(&polys, &georef, TILE_PX, TILE_PX)?;
    let reference = RasterTile::new(1, TILE_PX, TILE_PX, heights.into_vec(), georef)?;

    let meta_path = dir.join("tile.json");
    let city = if meta_path.is_file() {
        let t = std::fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
        serde_json::from_str::<TileMeta>(&t)
            .map_err(|source| Error::Json { path: meta_path.clone(), source })?
            .city
    } else {
        "unknown".to_string()
    };
    Ok(SampleRecord { tile_id: tile_id.to_string(), city, s1, s2, reference, split: Split::Train })
}

/// Ingests every tile directory under `raw_root`, writes the canonical dataset and manifest.
pub fn ingest(config: &IngestConfig) -> Result<DatasetManifest> {
    let raw = &config.raw_root;
    if !raw.is_dir() {
        return Err(Error::io(raw, std::io::Error::new(std::io::ErrorKind::NotFound, "raw root is not a directory")));
    }
    let mut dirs = Vec::new();
    for e in std::fs::read_dir(raw).map_err(|e| Error::io(raw, e))? {
        let p = e.map_err(|e| Error::io(raw, e))?.path();
        if p.is_dir() {
            dirs.push(p);
        }
    }
    dirs.sort();
    if dirs.is_empty() {
        return Err(Error::NoSamples { path: raw.clone() });
    }
    let out = &config.out_root;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let mut tiles = Vec::with_capacity(dirs.len());
    for d in &dirs {
        let id = d.file_name().and_then(|s| s.to_str()).unwrap_or_default().to_string();
        let rec = ingest_tile(d, &id, config.year, config.resolution_m).map_err(|e| e.in_tile(&id))?;
        write_sample(out, &rec)?;
        let mut stats = TileStats::of_stack(&rec.s1);
        stats.add_stack(&rec.s2);
        tiles.push((id, rec.city, stats));
    }
    let m = assemble_manifest(out, tiles, config.split_ratio, config.split_seed);
    write_manifest(&out.join(MANIFEST_FILE), &m)?;
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn median_even_and_odd() {
        assert_eq!(median(&mut [0.2, 0.8, 0.3]), 0.3);
        assert_eq!(median(&mut [1.0, 3.0]), 2.0);
    }

    #[test]
    fn scene_dates_from_names() {
        assert_eq!(scene_date(Path::new("a/2020-06-15.tif")), NaiveDate::from_ymd_opt(2020, 6, 15));
        assert_eq!(scene_date(Path::new("a/june.tif")), None);
    }
}
