//! Procedural towns with known heights, rendered into monthly S1-like and S2-like stacks.
//!
//! Everything is a pure function of the scene parameters. Independent random streams are used
//! for layout, vegetation, optical noise and speckle so that changing one rendering option never
//! perturbs another.

use std::path::Path;

use chrono::{Datelike, NaiveDate};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geotiff::write_geotiff;
use crate::grid::{Grid, Mask};
use crate::manifest::{assemble_manifest, write_manifest, write_sample, DatasetManifest, TileStats, DEFAULT_SPLIT_RATIO, MANIFEST_FILE};
use crate::raster::{Georef, HeightMap, Modality, MonthlyStack, RasterTile, SampleRecord, Split, MONTHS, RESOLUTION_M, TILE_PX};

/// Mid-month day of year, non-leap.
pub const MID_MONTH_DOY: [u32; 12] = [15, 46, 74, 105, 135, 166, 196, 227, 258, 288, 319, 349];

/// Bare ground reflectance, `[Red, Green, Blue, NIR, SWIR]`.
pub const GROUND_REFL: [f32; 5] = [0.12, 0.11, 0.09, 0.20, 0.25];
pub const ROOF_REFL: [f32; 5] = [0.22, 0.20, 0.19, 0.26, 0.32];
/// Vegetation reflectance; the NIR entry is replaced by [`vegetation_nir`].
pub const VEG_REFL: [f32; 5] = [0.04, 0.07, 0.04, 0.30, 0.16];
/// Multiplier applied to shadowed pixels in every optical band.
pub const SHADOW_FACTOR: f32 = 0.35;
pub const S2_NOISE_STD: f64 = 0.004;

pub const VEG_NIR_MEAN: f64 = 0.30;
pub const VEG_NIR_AMPLITUDE: f64 = 0.15;
/// Day of year of the vegetation NIR peak.
pub const VEG_NIR_PEAK_DOY: f64 = 196.0;
pub const PHASE_JITTER_DAYS: f64 = 15.0;

/// Linear-power clutter means `[VV, VH]`.
pub const GROUND_CLUTTER: [f64; 2] = [0.04, 0.008];
pub const VEG_CLUTTER: [f64; 2] = [0.06, 0.015];
/// Building gain `k` in `clutter · (1 + k · ln(1 + h))`.
pub const BACKSCATTER_K: f64 = 1.5;
/// Gain of the layover strip on the sensor-facing side of a building.
pub const LAYOVER_K: f64 = 0.5;
/// Incidence angle used for the layover strip width, degrees.
pub const INCIDENCE_DEG: f64 = 39.0;

const PLACEMENT_ATTEMPTS: usize = 200;
const VEG_NOISE_CELL_PX: usize = 16;

mod stream {
    pub const LAYOUT: u64 = 1;
    pub const VEGETATION: u64 = 2;
    pub const OPTICAL: u64 = 3;
    pub const SPECKLE: u64 = 4;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SceneParams {
    pub seed: u64,
    /// Inclusive range of building count.
    pub n_buildings: (usize, usize),
    pub height_range_m: (f64, f64),
    /// Inclusive range of rectangle side length in pixels.
    pub building_size_px: (usize, usize),
    pub vegetation_fraction: f64,
    pub speckle_looks: u32,
    pub sun_elevation_by_month: [f64; 12],
}

impl Default for SceneParams {
    fn default() -> Self {
        SceneParams {
            seed: 0,
            n_buildings: (8, 20),
            height_range_m: (3.0, 30.0),
            building_size_px: (4, 14),
            vegetation_fraction: 0.3,
            speckle_looks: 8,
            sun_elevation_by_month: [15.0, 24.0, 34.0, 46.0, 55.0, 60.0, 58.0, 50.0, 40.0, 28.0, 18.0, 14.0],
        }
    }
}

impl SceneParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParams(m));
        let (hmin, hmax) = self.height_range_m;
        if !(hmin > 1.0 && hmin <= hmax && hmax.is_finite()) {
            return bad(format!("height range ({hmin}, {hmax}) needs 1 < min <= max"));
        }
        if self.n_buildings.0 > self.n_buildings.1 {
            return bad(format!("building count range {:?} is empty", self.n_buildings));
        }
        let (smin, smax) = self.building_size_px;
        if smin == 0 || smin > smax || smax > TILE_PX {
            return bad(format!("building size range ({smin}, {smax}) must lie in 1..={TILE_PX}"));
        }
        if !(0.0..=1.0).contains(&self.vegetation_fraction) {
            return bad(format!("vegetation fraction {} outside [0, 1]", self.vegetation_fraction));
        }
        if self.speckle_looks == 0 {
            return bad("speckle_looks must be >= 1".into());
        }
        if let Some(e) = self.sun_elevation_by_month.iter().find(|e| !(**e > 0.0 && **e < 90.0)) {
            return bad(format!("sun elevation {e} outside (0, 90)"));
        }
        Ok(())
    }

    /// Parameters of tile `index` in a dataset: same distribution, independent seed.
    pub fn for_tile(&self, index: usize) -> SceneParams {
        SceneParams {
            seed: splitmix64(self.seed ^ splitmix64(index as u64 + 1)),
            ..self.clone()
        }
    }

    fn rng(&self, stream: u64) -> ChaCha8Rng {
        let mut r = ChaCha8Rng::seed_from_u64(self.seed);
        r.set_stream(stream);
        r
    }
}

pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Axis-aligned rectangle of constant height.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Building {
    pub x: usize,
    pub y: usize,
    pub w: usize,
    pub h: usize,
    pub height_m: f32,
}

/// Places rectangles with at least one free pixel between any two.
pub fn generate_buildings(params: &SceneParams) -> Result<Vec<Building>> {
    params.validate()?;
    let mut rng = params.rng(stream::LAYOUT);
    let requested = rng.random_range(params.n_buildings.0..=params.n_buildings.1);
    let (smin, smax) = params.building_size_px;
    let (hmin, hmax) = params.height_range_m;
    let mut occupied = Grid::filled(TILE_PX, TILE_PX, false);
    let mut out = Vec::with_capacity(requested);
    for placed in 0..requested {
        let mut ok = None;
        for _ in 0..PLACEMENT_ATTEMPTS {
            let w = rng.random_range(smin..=smax);
            let h = rng.random_range(smin..=smax);
            let x = rng.random_range(0..=TILE_PX - w);
            let y = rng.random_range(0..=TILE_PX - h);
            let (x0, y0) = (x.saturating_sub(1), y.saturating_sub(1));
            let (x1, y1) = ((x + w + 1).min(TILE_PX), (y + h + 1).min(TILE_PX));
            let free = (y0..y1).all(|yy| (x0..x1).all(|xx| !*occupied.get(xx, yy)));
            if free {
                ok = Some((x, y, w, h));
                break;
            }
        }
        let Some((x, y, w, h)) = ok else {
            return Err(Error::Placement {
                placed_so_far: placed,
                requested,
                attempts: PLACEMENT_ATTEMPTS,
            });
        };
        for yy in y..y + h {
            for xx in x..x + w {
                *occupied.get_mut(xx, yy) = true;
            }
        }
        let height_m = rng.random_range(hmin..=hmax) as f32;
        out.push(Building { x, y, w, h, height_m });
    }
    Ok(out)
}

pub fn rasterize_buildings(buildings: &[Building]) -> HeightMap<f32> {
    let mut town = Grid::filled(TILE_PX, TILE_PX, 0.0f32);
    for b in buildings {
        for y in b.y..b.y + b.h {
            for x in b.x..b.x + b.w {
                *town.get_mut(x, y) = b.height_m;
            }
        }
    }
    town
}

/// 128×128 height map; 0 off buildings.
pub fn generate_town(params: &SceneParams) -> Result<HeightMap<f32>> {
    Ok(rasterize_buildings(&generate_buildings(params)?))
}

/// Shadows cast due west: pixel `x` is dark if some pixel `d` steps east is taller by more than
/// `d · res · tan(elevation)`.
pub fn shadow_mask(town: &HeightMap<f32>, sun_elevation_deg: f64, resolution_m: f64) -> Mask {
    let step = resolution_m * sun_elevation_deg.to_radians().tan();
    let (w, h) = town.dims();
    Grid::from_fn(w, h, |x, y| {
        let here = *town.get(x, y) as f64;
        (x + 1..w).any(|xe| (*town.get(xe, y) as f64 - here) > (xe - x) as f64 * step)
    })
}

/// Smooth value noise in [0, 1].
fn value_noise(rng: &mut ChaCha8Rng, w: usize, h: usize, cell: usize) -> Grid<f64> {
    let (gw, gh) = (w / cell + 2, h / cell + 2);
    let lattice: Vec<f64> = (0..gw * gh).map(|_| rng.random::<f64>()).collect();
    Grid::from_fn(w, h, |x, y| {
        let (fx, fy) = (x as f64 / cell as f64, y as f64 / cell as f64);
        let (ix, iy) = (fx as usize, fy as usize);
        let (tx, ty) = (fx - ix as f64, fy - iy as f64);
        let (sx, sy) = (tx * tx * (3.0 - 2.0 * tx), ty * ty * (3.0 - 2.0 * ty));
        let at = |i: usize, j: usize| lattice[j * gw + i];
        let top = at(ix, iy) * (1.0 - sx) + at(ix + 1, iy) * sx;
        let bot = at(ix, iy + 1) * (1.0 - sx) + at(ix + 1, iy + 1) * sx;
        top * (1.0 - sy) + bot * sy
    })
}

/// Vegetated pixels: the noisiest non-building `vegetation_fraction` of the tile.
pub fn vegetation_mask(town: &HeightMap<f32>, params: &SceneParams) -> Mask {
    let mut rng = params.rng(stream::VEGETATION);
    let (w, h) = town.dims();
    let noise = value_noise(&mut rng, w, h, VEG_NOISE_CELL_PX);
    let target = (params.vegetation_fraction * (w * h) as f64).round() as usize;
    let mut ground: Vec<(f64, usize)> = noise
        .iter()
        .zip(town.iter())
        .enumerate()
        .filter(|(_, (_, &t))| t == 0.0)
        .map(|(i, (&n, _))| (n, i))
        .collect();
    ground.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    let mut mask = Grid::filled(w, h, false);
    for &(_, i) in ground.iter().take(target) {
        mask.as_mut_slice()[i] = true;
    }
    mask
}

/// Annual NIR cycle of vegetation, peaking at [`VEG_NIR_PEAK_DOY`].
pub fn vegetation_nir(doy: f64) -> f64 {
    VEG_NIR_MEAN + VEG_NIR_AMPLITUDE * (2.0 * std::f64::consts::PI * (doy - VEG_NIR_PEAK_DOY) / 365.0).cos()
}

fn default_georef() -> Georef {
    Georef::new(0.0, TILE_PX as f64 * RESOLUTION_M)
}

pub fn render_s2_series(town: &HeightMap<f32>, params: &SceneParams) -> Result<MonthlyStack<f32>> {
    params.validate()?;
    let veg = vegetation_mask(town, params);
    let mut rng = params.rng(stream::OPTICAL);
    let (w, h) = town.dims();
    let n = w * h;
    let jitter: Vec<f64> = (0..n)
        .map(|_| rng.random_range(-PHASE_JITTER_DAYS..=PHASE_JITTER_DAYS))
        .collect();
    let noise = Normal::new(0.0, S2_NOISE_STD).expect("valid std");
    let mut months = Vec::with_capacity(MONTHS);
    for m in 0..MONTHS {
        let shadow = shadow_mask(town, params.sun_elevation_by_month[m], RESOLUTION_M);
        let mut data = vec![0f32; 5 * n];
        for p in 0..n {
            let base = if town.as_slice()[p] > 0.0 {
                ROOF_REFL
            } else if veg.as_slice()[p] {
                let mut r = VEG_REFL;
                r[3] = vegetation_nir(MID_MONTH_DOY[m] as f64 + jitter[p]) as f32;
                r
            } else {
                GROUND_REFL
            };
            let dark = if shadow.as_slice()[p] { SHADOW_FACTOR } else { 1.0 };
            for b in 0..5 {
                let v = base[b] * dark + noise.sample(&mut rng) as f32;
                data[b * n + p] = v.clamp(0.0, 1.0);
            }
        }
        months.push(RasterTile::new(5, w, h, data, default_georef())?);
    }
    Ok(MonthlyStack::new(Modality::S2, months))
}

/// Expected linear backscatter of a building of height `h` on clutter `c`.
pub fn building_backscatter(clutter: f64, height_m: f64) -> f64 {
    clutter * (1.0 + BACKSCATTER_K * height_m.ln_1p())
}

/// Mean linear backscatter per pixel, `[VV, VH]`, for one orbit. The layover strip sits on the
/// sensor side: west for ascending, east for descending.
pub fn mean_backscatter(town: &HeightMap<f32>, veg: &Mask, ascending: bool) -> [Grid<f64>; 2] {
    let (w, h) = town.dims();
    let cot = 1.0 / INCIDENCE_DEG.to_radians().tan();
    let mut out = [0, 1].map(|pol| {
        Grid::from_fn(w, h, |x, y| {
            let hm = *town.get(x, y) as f64;
            let clutter = if *veg.get(x, y) { VEG_CLUTTER[pol] } else { GROUND_CLUTTER[pol] };
            if hm > 0.0 {
                building_backscatter(GROUND_CLUTTER[pol], hm)
            } else {
                clutter
            }
        })
    });
    for y in 0..h {
        for x in 0..w {
            let hm = *town.get(x, y) as f64;
            if hm <= 0.0 {
                continue;
            }
            let edge = if ascending {
                x == 0 || *town.get(x - 1, y) == 0.0
            } else {
                x + 1 == w || *town.get(x + 1, y) == 0.0
            };
            if !edge {
                continue;
            }
            let len = (hm * cot / RESOLUTION_M).round() as usize;
            for d in 1..=len {
                let xx = if ascending { x.checked_sub(d) } else { Some(x + d).filter(|&v| v < w) };
                let Some(xx) = xx else { break };
                if *town.get(xx, y) > 0.0 {
                    break;
                }
                for (pol, grid) in out.iter_mut().enumerate() {
                    let lay = GROUND_CLUTTER[pol] * (1.0 + LAYOVER_K * hm.ln_1p());
                    let v = grid.get_mut(xx, y);
                    *v = v.max(lay);
                }
            }
        }
    }
    out
}

pub fn to_db(linear: f64) -> f64 {
    10.0 * linear.log10()
}

pub fn from_db(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

/// Monthly speckled backscatter in dB, bands `[VV_asc, VH_asc, VV_desc, VH_desc]`.
pub fn render_s1_series(town: &HeightMap<f32>, params: &SceneParams) -> Result<MonthlyStack<f32>> {
    Ok(render_s1_linear(town, params)?.map_values(|v| to_db(v as f64) as f32))
}

/// Speckled monthly backscatter in linear power units.
pub fn render_s1_linear(town: &HeightMap<f32>, params: &SceneParams) -> Result<MonthlyStack<f32>> {
    params.validate()?;
    let veg = vegetation_mask(town, params);
    let asc = mean_backscatter(town, &veg, true);
    let desc = mean_backscatter(town, &veg, false);
    let means = [&asc[0], &asc[1], &desc[0], &desc[1]];
    let looks = params.speckle_looks as f64;
    let speckle = Gamma::new(looks, 1.0 / looks).expect("valid gamma");
    let mut rng = params.rng(stream::SPECKLE);
    let (w, h) = town.dims();
    let n = w * h;
    let mut months = Vec::with_capacity(MONTHS);
    for _ in 0..MONTHS {
        let mut data = vec![0f32; 4 * n];
        for (b, mean) in means.iter().enumerate() {
            for p in 0..n {
                data[b * n + p] = (mean.as_slice()[p] * speckle.sample(&mut rng)) as f32;
            }
        }
        months.push(RasterTile::new(4, w, h, data, default_georef())?);
    }
    Ok(MonthlyStack::new(Modality::S1, months))
}

/// Upper-left corner of synthetic tile `index`: a 16-wide grid of adjacent tiles.
pub fn tile_georef(index: usize) -> Georef {
    let side = TILE_PX as f64 * RESOLUTION_M;
    Georef::new(
        120_000.0 + (index % 16) as f64 * side,
        487_000.0 - (index / 16) as f64 * side,
    )
}

pub fn tile_id(index: usize) -> String {
    format!("tile_{index:04}")
}

pub const SYNTH_CITY: &str = "synthtown";

/// Everything known about one synthetic tile.
#[derive(Debug, Clone)]
pub struct SynthTile {
    pub params: SceneParams,
    pub buildings: Vec<Building>,
    pub record: SampleRecord<f32>,
}

pub fn generate_tile(params: &SceneParams, index: usize) -> Result<SynthTile> {
    let p = params.for_tile(index);
    let buildings = generate_buildings(&p)?;
    let town = rasterize_buildings(&buildings);
    let g = tile_georef(index);
    let mut s1 = render_s1_series(&town, &p)?;
    let mut s2 = render_s2_series(&town, &p)?;
    s1.set_georef(g);
    s2.set_georef(g);
    let reference = RasterTile::new(1, TILE_PX, TILE_PX, town.into_vec(), g)?;
    Ok(SynthTile {
        params: p,
        buildings,
        record: SampleRecord {
            tile_id: tile_id(index),
            city: SYNTH_CITY.into(),
            s1,
            s2,
            reference,
            split: Split::Train,
        },
    })
}

/// Writes `n_tiles` synthetic tiles and a manifest under `out`.
pub fn generate_dataset(n_tiles: usize, params: &SceneParams, out: &Path) -> Result<DatasetManifest> {
    generate_dataset_with_ratio(n_tiles, params, out, DEFAULT_SPLIT_RATIO)
}

pub fn generate_dataset_with_ratio(
    n_tiles: usize,
    params: &SceneParams,
    out: &Path,
    split_ratio: f64,
) -> Result<DatasetManifest> {
    params.validate()?;
    if n_tiles == 0 {
        return Err(Error::InvalidParams("n_tiles must be >= 1".into()));
    }
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let mut tiles = Vec::with_capacity(n_tiles);
    for i in 0..n_tiles {
        let t = generate_tile(params, i).map_err(|e| e.in_tile(&tile_id(i)))?;
        let rec = &t.record;
        write_sample(out, rec)?;
        let mut stats = TileStats::of_stack(&rec.s1);
        stats.add_stack(&rec.s2);
        tiles.push((rec.tile_id.clone(), rec.city.clone(), stats));
    }
    let m = assemble_manifest(out, tiles, split_ratio, params.seed);
    write_manifest(&out.join(MANIFEST_FILE), &m)?;
    Ok(m)
}

/// Date of the synthetic acquisition for `month` (0-based) in `year`.
pub fn acquisition_date(year: i32, month: usize) -> NaiveDate {
    NaiveDate::from_yo_opt(year, MID_MONTH_DOY[month]).expect("valid day of year")
}

/// Writes the raw staging layout for `n_tiles` synthetic tiles: one already-composited S2 scene
/// and one ascending plus one descending S1 acquisition (linear power) per month, and building
/// polygons as GeoJSON. Ingesting it reproduces the synthetic stacks.
pub fn stage_raw(n_tiles: usize, params: &SceneParams, year: i32, raw_root: &Path) -> Result<()> {
    params.validate()?;
    for i in 0..n_tiles {
        let p = params.for_tile(i);
        let buildings = generate_buildings(&p)?;
        let town = rasterize_buildings(&buildings);
        let g = tile_georef(i);
        let dir = raw_root.join(tile_id(i));
        for sub in ["s2", "s1_asc", "s1_desc"] {
            std::fs::create_dir_all(dir.join(sub)).map_err(|e| Error::io(dir.join(sub), e))?;
        }
        let mut s2 = render_s2_series(&town, &p)?;
        s2.set_georef(g);
        let s1 = render_s1_linear(&town, &p)?;
        let s2_names: Vec<String> = Modality::S2.band_names().iter().map(|s| s.to_string()).collect();
        let pol_names = vec!["VV".to_string(), "VH".to_string()];
        for m in 0..MONTHS {
            let date = acquisition_date(year, m);
            debug_assert_eq!(date.month() as usize, m + 1);
            let name = format!("{}.tif", date.format("%Y-%m-%d"));
            write_geotiff(&dir.join("s2").join(&name), &s2.months[m], &s2_names)?;
            for (orbit, first) in [("s1_asc", 0), ("s1_desc", 2)] {
                let mut t = s1.months[m].select_bands(first..first + 2);
                t.georef = g;
                write_geotiff(&dir.join(orbit).join(&name), &t, &pol_names)?;
            }
        }
        let meta = dir.join("tile.json");
        std::fs::write(&meta, format!("{{\"city\": \"{SYNTH_CITY}\"}}\n")).map_err(|e| Error::io(&meta, e))?;
        let fc = buildings_geojson(&buildings, &g);
        std::fs::write(dir.join("ref.geojson"), fc).map_err(|e| Error::io(dir.join("ref.geojson"), e))?;
    }
    Ok(())
}

/// Building rectangles as a GeoJSON FeatureCollection in the tile's CRS.
pub fn buildings_geojson(buildings: &[Building], g: &Georef) -> String {
    let features: Vec<serde_json::Value> = buildings
        .iter()
        .map(|b| {
            let e0 = g.origin_e + b.x as f64 * g.resolution_m;
            let e1 = g.origin_e + (b.x + b.w) as f64 * g.resolution_m;
            let n0 = g.origin_n - b.y as f64 * g.resolution_m;
            let n1 = g.origin_n - (b.y + b.h) as f64 * g.resolution_m;
            serde_json::json!({
                "type": "Feature",
                "properties": {"height_m": b.height_m as f64},
                "geometry": {
                    "type": "Polygon",
                    "coordinates": [[[e0, n1], [e1, n1], [e1, n0], [e0, n0], [e0, n1]]]
                }
            })
        })
        .collect();
    serde_json::to_string_pretty(&serde_json::json!({"type": "FeatureCollection", "features": features}))
        .expect("geojson serializes")
}
