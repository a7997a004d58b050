//! Dataset manifest: sample listing, split assignment and per-band normalization.
//!
//! On disk a dataset is `<root>/manifest.json` plus `<root>/tiles/<tile_id>/{s1,s2,ref}.tif`.

use std::collections::{BTreeMap, HashSet};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geotiff::{read_geotiff, write_geotiff};
use crate::raster::{Modality, MonthlyStack, RasterTile, SampleRecord, Split};
use crate::stats::{BandStats, RunningStats};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const DEFAULT_SPLIT_RATIO: f64 = 0.8;
pub const SPLIT_POLICY_RANDOM_TILES: &str = "random_tiles";

/// Manifest row. Fields are declared alphabetically so serialization is canonical.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleEntry {
    pub city: String,
    pub split: Split,
    pub tile_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    /// Keyed by base band name (`VV_asc`, `Red`, ...); shared by all twelve months.
    pub normalization: BTreeMap<String, BandStats>,
    pub samples: Vec<SampleEntry>,
    pub split_policy: String,
    pub split_ratio: f64,
    pub split_seed: u64,
    /// Dataset directory; set by [`load_manifest`], never serialized.
    #[serde(skip)]
    pub root: PathBuf,
}

/// Paths of one tile's rasters.
#[derive(Debug, Clone)]
pub struct TilePaths {
    pub s1: PathBuf,
    pub s2: PathBuf,
    pub reference: PathBuf,
}

impl TilePaths {
    pub fn new(root: &Path, tile_id: &str) -> Self {
        let dir = root.join("tiles").join(tile_id);
        TilePaths {
            s1: dir.join("s1.tif"),
            s2: dir.join("s2.tif"),
            reference: dir.join("ref.tif"),
        }
    }

    pub fn dir(&self) -> &Path {
        self.reference.parent().expect("tile files live in a directory")
    }

    fn all(&self) -> [&Path; 3] {
        [&self.s1, &self.s2, &self.reference]
    }
}

impl DatasetManifest {
    pub fn tile_paths(&self, tile_id: &str) -> TilePaths {
        TilePaths::new(&self.root, tile_id)
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &SampleEntry> {
        self.samples.iter().filter(move |s| s.split == split)
    }

    pub fn count(&self, split: Split) -> usize {
        self.split(split).count()
    }

    pub fn entry(&self, tile_id: &str) -> Option<&SampleEntry> {
        self.samples.iter().find(|s| s.tile_id == tile_id)
    }

    /// Normalization parameters for a modality, in canonical band order.
    pub fn band_stats(&self, modality: Modality) -> Result<Vec<BandStats>> {
        modality
            .band_names()
            .iter()
            .map(|&b| {
                self.normalization
                    .get(b)
                    .copied()
                    .ok_or_else(|| Error::MissingNormalization { band: b.to_string() })
            })
            .collect()
    }

    pub fn load_sample(&self, entry: &SampleEntry) -> Result<SampleRecord<f32>> {
        load_sample(&self.root, entry).map_err(|e| e.in_tile(&entry.tile_id))
    }

    fn check_entries(&self, path: &Path) -> Result<()> {
        if self.samples.is_empty() {
            return Err(Error::NoSamples { path: path.into() });
        }
        if !(0.0..=1.0).contains(&self.split_ratio) {
            return Err(Error::Malformed {
                path: path.into(),
                msg: format!("split_ratio {} outside [0, 1]", self.split_ratio),
            });
        }
        let mut seen = HashSet::new();
        for s in &self.samples {
            let bad_id = s.tile_id.is_empty()
                || s.tile_id.contains(['/', '\\'])
                || s.tile_id == "."
                || s.tile_id == "..";
            if bad_id {
                return Err(Error::Malformed {
                    path: path.into(),
                    msg: format!("invalid tile_id {:?}", s.tile_id),
                });
            }
            if !seen.insert(s.tile_id.as_str()) {
                return Err(Error::Malformed {
                    path: path.into(),
                    msg: format!("duplicate tile_id {:?}", s.tile_id),
                });
            }
        }
        for m in [Modality::S1, Modality::S2] {
            self.band_stats(m)?;
        }
        for (band, st) in &self.normalization {
            if !st.mean.is_finite() || !(st.std > 0.0) {
                return Err(Error::Malformed {
                    path: path.into(),
                    msg: format!("normalization for {band} is not usable: {st:?}"),
                });
            }
        }
        Ok(())
    }
}

/// Reads and validates `<root>/manifest.json`; `path` may name the file or its directory.
pub fn load_manifest(path: &Path) -> Result<DatasetManifest> {
    let file = if path.is_dir() {
        path.join(MANIFEST_FILE)
    } else {
        path.to_path_buf()
    };
    let text = std::fs::read_to_string(&file).map_err(|e| Error::io(&file, e))?;
    let mut m: DatasetManifest = serde_json::from_str(&text).map_err(|source| {
        if source.is_data() {
            Error::Malformed {
                path: file.clone(),
                msg: source.to_string(),
            }
        } else {
            Error::Json {
                path: file.clone(),
                source,
            }
        }
    })?;
    m.root = file.parent().map(Path::to_path_buf).unwrap_or_default();
    m.check_entries(&file)?;
    for s in &m.samples {
        for p in m.tile_paths(&s.tile_id).all() {
            if !p.is_file() {
                return Err(Error::DanglingReference { path: p.to_path_buf() });
            }
        }
    }
    Ok(m)
}

pub fn manifest_to_string(m: &DatasetManifest) -> String {
    let mut s = serde_json::to_string_pretty(m).expect("manifest serializes");
    s.push('\n');
    s
}

pub fn write_manifest(path: &Path, m: &DatasetManifest) -> Result<()> {
    std::fs::write(path, manifest_to_string(m)).map_err(|e| Error::io(path, e))
}

/// Number of training tiles for `n` samples at `ratio`.
pub fn train_count(n: usize, ratio: f64) -> usize {
    ((ratio * n as f64).round() as usize).min(n)
}

/// Random tile-level split. Depends only on the set of ids, the ratio and the seed.
pub fn assign_splits(tile_ids: &[String], ratio: f64, seed: u64) -> Vec<Split> {
    let mut order: Vec<usize> = (0..tile_ids.len()).collect();
    order.sort_by(|&a, &b| tile_ids[a].cmp(&tile_ids[b]));
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = train_count(tile_ids.len(), ratio);
    let mut out = vec![Split::Test; tile_ids.len()];
    for &i in &order[..n_train] {
        out[i] = Split::Train;
    }
    out
}

/// Per-band moments of one tile, pooled over months.
#[derive(Debug, Clone, Default)]
pub struct TileStats {
    pub bands: BTreeMap<String, RunningStats>,
}

impl TileStats {
    pub fn of_stack(stack: &MonthlyStack<f32>) -> Self {
        let mut t = TileStats::default();
        t.add_stack(stack);
        t
    }

    pub fn add_stack(&mut self, stack: &MonthlyStack<f32>) {
        for month in &stack.months {
            for (b, name) in stack.band_names.iter().enumerate() {
                let s = self.bands.entry(name.clone()).or_default();
                s.extend(month.band(b).iter().map(|&v| v as f64));
            }
        }
    }

    pub fn merge(&self, other: &TileStats) -> TileStats {
        let mut out = self.bands.clone();
        for (k, v) in &other.bands {
            let e = out.entry(k.clone()).or_default();
            *e = e.merge(v);
        }
        TileStats { bands: out }
    }

    pub fn finish(&self) -> BTreeMap<String, BandStats> {
        self.bands
            .iter()
            .map(|(k, v)| (k.clone(), v.band_stats()))
            .collect()
    }
}

/// Builds a manifest from per-tile statistics; normalization uses the training split only.
pub fn assemble_manifest(
    root: &Path,
    tiles: Vec<(String, String, TileStats)>,
    ratio: f64,
    seed: u64,
) -> DatasetManifest {
    let ids: Vec<String> = tiles.iter().map(|t| t.0.clone()).collect();
    let splits = assign_splits(&ids, ratio, seed);
    let mut train = TileStats::default();
    let mut samples = Vec::with_capacity(tiles.len());
    for ((tile_id, city, stats), split) in tiles.into_iter().zip(splits) {
        if split == Split::Train {
            train = train.merge(&stats);
        }
        samples.push(SampleEntry {
            city,
            split,
            tile_id,
        });
    }
    samples.sort_by(|a, b| a.tile_id.cmp(&b.tile_id));
    DatasetManifest {
        normalization: train.finish(),
        samples,
        split_policy: SPLIT_POLICY_RANDOM_TILES.into(),
        split_ratio: ratio,
        split_seed: seed,
        root: root.to_path_buf(),
    }
}

fn stack_from_file(modality: Modality, path: &Path) -> Result<MonthlyStack<f32>> {
    let r = read_geotiff(path)?;
    let mut stack = MonthlyStack::from_stacked(modality, &r.tile)
        .map_err(|e| Error::geotiff(path, e))?;
    // Trust the file's own band descriptions so a swapped layout is caught by validation.
    let per = modality.band_count();
    if r.band_names.len() >= per && r.band_names[..per].iter().all(|n| !n.is_empty()) {
        stack.band_names = r.band_names[..per]
            .iter()
            .map(|n| match n.rsplit_once('_') {
                Some((base, suffix)) if suffix.len() == 2 && suffix.chars().all(|c| c.is_ascii_digit()) => {
                    base.to_string()
                }
                _ => n.clone(),
            })
            .collect();
    }
    Ok(stack)
}

pub fn load_sample(root: &Path, entry: &SampleEntry) -> Result<SampleRecord<f32>> {
    let p = TilePaths::new(root, &entry.tile_id);
    let s1 = stack_from_file(Modality::S1, &p.s1)?;
    let s2 = stack_from_file(Modality::S2, &p.s2)?;
    let reference = read_geotiff(&p.reference)?.tile;
    if reference.bands() != 1 {
        return Err(Error::geotiff(
            &p.reference,
            format!("reference must have 1 band, found {}", reference.bands()),
        ));
    }
    Ok(SampleRecord {
        tile_id: entry.tile_id.clone(),
        city: entry.city.clone(),
        s1,
        s2,
        reference,
        split: entry.split,
    })
}

/// Writes one sample in the canonical tile layout.
pub fn write_sample(root: &Path, rec: &SampleRecord<f32>) -> Result<()> {
    let p = TilePaths::new(root, &rec.tile_id);
    std::fs::create_dir_all(p.dir()).map_err(|e| Error::io(p.dir(), e))?;
    write_geotiff(&p.s1, &rec.s1.to_stacked()?, &rec.s1.stacked_band_names())?;
    write_geotiff(&p.s2, &rec.s2.to_stacked()?, &rec.s2.stacked_band_names())?;
    write_geotiff(&p.reference, &rec.reference, &["height_m".to_string()])
}

/// Z-scored copy of every month of a stack.
pub fn normalize_stack(stack: &MonthlyStack<f32>, stats: &[BandStats]) -> Result<Vec<RasterTile<f32>>> {
    if stats.len() != stack.band_names.len() {
        return Err(Error::shape(
            format!("{} band statistics", stack.band_names.len()),
            stats.len(),
        ));
    }
    Ok(stack
        .months
        .iter()
        .map(|m| {
            let mut out = m.clone();
            for (b, st) in stats.iter().enumerate() {
                for v in out.band_mut(b) {
                    *v = st.normalize(*v);
                }
            }
            out
        })
        .collect())
}
