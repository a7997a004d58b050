//! Raster tiles, monthly stacks and training samples.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::scalar::Scalar;

/// Tile edge length in pixels.
pub const TILE_PX: usize = 128;
/// Ground sampling distance of every canonical raster, meters.
pub const RESOLUTION_M: f64 = 10.0;
/// Months per stack.
pub const MONTHS: usize = 12;

/// EPSG:28992, Amersfoort / RD New.
pub const DEFAULT_EPSG: u16 = 28992;

pub const S1_BANDS: [&str; 4] = ["VV_asc", "VH_asc", "VV_desc", "VH_desc"];
pub const S2_BANDS: [&str; 5] = ["Red", "Green", "Blue", "NIR", "SWIR"];

/// Height map in meters. Values above [`crate::metrics::BUILDING_THRESHOLD_M`] are buildings.
pub type HeightMap<T = f32> = Grid<T>;

/// Placement of a raster on the ground. `origin` is the upper-left corner of the upper-left pixel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Georef {
    pub origin_e: f64,
    pub origin_n: f64,
    pub resolution_m: f64,
    pub epsg: u16,
}

impl Georef {
    pub fn new(origin_e: f64, origin_n: f64) -> Self {
        Georef {
            origin_e,
            origin_n,
            resolution_m: RESOLUTION_M,
            epsg: DEFAULT_EPSG,
        }
    }

    /// Easting/northing of the centre of pixel `(x, y)`.
    pub fn pixel_center(&self, x: usize, y: usize) -> (f64, f64) {
        (
            self.origin_e + (x as f64 + 0.5) * self.resolution_m,
            self.origin_n - (y as f64 + 0.5) * self.resolution_m,
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Modality {
    S1,
    S2,
}

impl Modality {
    pub fn band_names(self) -> &'static [&'static str] {
        match self {
            Modality::S1 => &S1_BANDS,
            Modality::S2 => &S2_BANDS,
        }
    }

    pub fn band_count(self) -> usize {
        self.band_names().len()
    }

    /// Name of a band inside a month-major multi-month file, e.g. `VV_asc_03`.
    pub fn stacked_band_name(self, month: usize, band: usize) -> String {
        format!("{}_{:02}", self.band_names()[band], month + 1)
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Modality::S1 => f.write_str("S1"),
            Modality::S2 => f.write_str("S2"),
        }
    }
}

/// A `(bands, height, width)` grid of samples with georeferencing.
#[derive(Debug, Clone, PartialEq)]
pub struct RasterTile<T = f32> {
    bands: usize,
    width: usize,
    height: usize,
    data: Vec<T>,
    pub georef: Georef,
    pub nodata: Option<T>,
}

impl<T: Copy> RasterTile<T> {
    pub fn new(
        bands: usize,
        width: usize,
        height: usize,
        data: Vec<T>,
        georef: Georef,
    ) -> Result<Self> {
        if data.len() != bands * width * height {
            return Err(Error::shape(
                format!("{bands}x{height}x{width} = {}", bands * width * height),
                data.len(),
            ));
        }
        Ok(RasterTile {
            bands,
            width,
            height,
            data,
            georef,
            nodata: None,
        })
    }

    pub fn filled(bands: usize, width: usize, height: usize, value: T, georef: Georef) -> Self {
        RasterTile {
            bands,
            width,
            height,
            data: vec![value; bands * width * height],
            georef,
            nodata: None,
        }
    }

    pub fn from_bands(bands: Vec<Grid<T>>, georef: Georef) -> Result<Self> {
        let first = bands
            .first()
            .ok_or_else(|| Error::Other("raster needs at least one band".into()))?;
        let (width, height) = first.dims();
        let mut data = Vec::with_capacity(bands.len() * width * height);
        for b in &bands {
            if b.dims() != (width, height) {
                return Err(Error::shape(format!("{width}x{height}"), format!("{}x{}", b.width(), b.height())));
            }
            data.extend_from_slice(b.as_slice());
        }
        RasterTile::new(bands.len(), width, height, data, georef)
    }

    #[inline]
    pub fn bands(&self) -> usize {
        self.bands
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> usize {
        self.width * self.height
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn band(&self, b: usize) -> &[T] {
        let n = self.pixels();
        &self.data[b * n..(b + 1) * n]
    }

    pub fn band_mut(&mut self, b: usize) -> &mut [T] {
        let n = self.pixels();
        &mut self.data[b * n..(b + 1) * n]
    }

    pub fn band_grid(&self, b: usize) -> Grid<T> {
        Grid::from_vec(self.width, self.height, self.band(b).to_vec()).expect("band length matches")
    }

    /// Copies bands `range` into a new tile with the same georeferencing.
    pub fn select_bands(&self, range: std::ops::Range<usize>) -> RasterTile<T> {
        let n = self.pixels();
        RasterTile {
            bands: range.len(),
            width: self.width,
            height: self.height,
            data: self.data[range.start * n..range.end * n].to_vec(),
            georef: self.georef,
            nodata: self.nodata,
        }
    }

    /// Concatenates tiles along the band axis.
    pub fn concat(tiles: &[RasterTile<T>]) -> Result<RasterTile<T>> {
        let first = tiles
            .first()
            .ok_or_else(|| Error::Other("nothing to concatenate".into()))?;
        let mut data = Vec::new();
        let mut bands = 0;
        for t in tiles {
            if (t.width, t.height) != (first.width, first.height) {
                return Err(Error::shape(
                    format!("{}x{}", first.width, first.height),
                    format!("{}x{}", t.width, t.height),
                ));
            }
            data.extend_from_slice(&t.data);
            bands += t.bands;
        }
        RasterTile::new(bands, first.width, first.height, data, first.georef)
    }
}

/// Twelve calendar-ordered monthly tiles of one modality.
#[derive(Debug, Clone, PartialEq)]
pub struct MonthlyStack<T = f32> {
    pub modality: Modality,
    pub months: Vec<RasterTile<T>>,
    pub band_names: Vec<String>,
}

impl<T: Copy> MonthlyStack<T> {
    pub fn new(modality: Modality, months: Vec<RasterTile<T>>) -> Self {
        MonthlyStack {
            modality,
            months,
            band_names: modality.band_names().iter().map(|s| s.to_string()).collect(),
        }
    }

    /// Month-major band concatenation, the on-disk layout.
    pub fn to_stacked(&self) -> Result<RasterTile<T>> {
        RasterTile::concat(&self.months)
    }

    pub fn stacked_band_names(&self) -> Vec<String> {
        (0..self.months.len())
            .flat_map(|m| (0..self.band_names.len()).map(move |b| (m, b)))
            .map(|(m, b)| format!("{}_{:02}", self.band_names[b], m + 1))
            .collect()
    }

    /// Splits a month-major stacked tile back into months.
    pub fn from_stacked(modality: Modality, stacked: &RasterTile<T>) -> Result<Self> {
        let per = modality.band_count();
        if stacked.bands() % per != 0 {
            return Err(Error::shape(
                format!("multiple of {per} bands"),
                stacked.bands(),
            ));
        }
        let months = (0..stacked.bands() / per)
            .map(|m| stacked.select_bands(m * per..(m + 1) * per))
            .collect();
        Ok(MonthlyStack::new(modality, months))
    }
}

impl MonthlyStack<f32> {
    pub fn map_values(mut self, f: impl Fn(f32) -> f32) -> Self {
        for m in &mut self.months {
            for b in 0..m.bands() {
                for v in m.band_mut(b) {
                    *v = f(*v);
                }
            }
        }
        self
    }

    pub fn set_georef(&mut self, g: Georef) {
        for m in &mut self.months {
            m.georef = g;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Split::Train => f.write_str("train"),
            Split::Test => f.write_str("test"),
        }
    }
}

/// One training/evaluation unit: both monthly stacks plus the reference heights.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleRecord<T = f32> {
    pub tile_id: String,
    pub city: String,
    pub s1: MonthlyStack<T>,
    pub s2: MonthlyStack<T>,
    /// Single-band height raster, meters.
    pub reference: RasterTile<T>,
    pub split: Split,
}

impl<T: Copy> SampleRecord<T> {
    pub fn reference_heights(&self) -> HeightMap<T> {
        self.reference.band_grid(0)
    }
}

/// A broken sample invariant.
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    MonthCount { modality: Modality, found: usize },
    BandCount { modality: Modality, month: usize, found: usize },
    BandNames { modality: Modality, found: Vec<String> },
    TileSize { what: String, width: usize, height: usize },
    Resolution { what: String, found: f64 },
    NonFinite { what: String, count: usize },
    Nodata { what: String },
    NegativeHeight { count: usize },
    Footprint { what: String },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::MonthCount { modality, found } => {
                write!(f, "{modality}: month count {found} ≠ {MONTHS}")
            }
            Violation::BandCount {
                modality,
                month,
                found,
            } => write!(
                f,
                "{modality} month {:02}: band count {found} ≠ {}",
                month + 1,
                modality.band_count()
            ),
            Violation::BandNames { modality, found } => write!(
                f,
                "{modality}: band names {found:?} ≠ {:?}",
                modality.band_names()
            ),
            Violation::TileSize {
                what,
                width,
                height,
            } => write!(f, "{what}: size {width}x{height} ≠ {TILE_PX}x{TILE_PX}"),
            Violation::Resolution { what, found } => {
                write!(f, "{what}: resolution {found} m ≠ {RESOLUTION_M} m")
            }
            Violation::NonFinite { what, count } => write!(f, "{what}: {count} non-finite values"),
            Violation::Nodata { what } => write!(f, "{what}: nodata value declared"),
            Violation::NegativeHeight { count } => write!(f, "negative height ({count} pixels)"),
            Violation::Footprint { what } => write!(f, "{what}: footprint differs from reference"),
        }
    }
}

fn check_tile<T: Scalar>(
    what: &str,
    tile: &RasterTile<T>,
    reference: &Georef,
    out: &mut Vec<Violation>,
) {
    if tile.width() != TILE_PX || tile.height() != TILE_PX {
        out.push(Violation::TileSize {
            what: what.to_string(),
            width: tile.width(),
            height: tile.height(),
        });
    }
    if (tile.georef.resolution_m - RESOLUTION_M).abs() > 1e-9 {
        out.push(Violation::Resolution {
            what: what.to_string(),
            found: tile.georef.resolution_m,
        });
    }
    if tile.nodata.is_some() {
        out.push(Violation::Nodata {
            what: what.to_string(),
        });
    }
    let bad = tile.as_slice().iter().filter(|v| !v.is_finite()).count();
    if bad > 0 {
        out.push(Violation::NonFinite {
            what: what.to_string(),
            count: bad,
        });
    }
    if tile.georef != *reference {
        out.push(Violation::Footprint {
            what: what.to_string(),
        });
    }
}

fn check_stack<T: Scalar>(stack: &MonthlyStack<T>, reference: &Georef, out: &mut Vec<Violation>) {
    let modality = stack.modality;
    if stack.months.len() != MONTHS {
        out.push(Violation::MonthCount {
            modality,
            found: stack.months.len(),
        });
    }
    if stack.band_names.iter().map(String::as_str).ne(modality.band_names().iter().copied()) {
        out.push(Violation::BandNames {
            modality,
            found: stack.band_names.clone(),
        });
    }
    for (m, tile) in stack.months.iter().enumerate() {
        if tile.bands() != modality.band_count() {
            out.push(Violation::BandCount {
                modality,
                month: m,
                found: tile.bands(),
            });
        }
        check_tile(&format!("{modality} month {:02}", m + 1), tile, reference, out);
    }
}

/// Lists every broken invariant of `rec`; an empty list means the sample is well formed.
pub fn validate_sample<T: Scalar>(rec: &SampleRecord<T>) -> Vec<Violation> {
    let mut out = Vec::new();
    let footprint = rec.reference.georef;
    check_stack(&rec.s1, &footprint, &mut out);
    check_stack(&rec.s2, &footprint, &mut out);
    check_tile("reference", &rec.reference, &footprint, &mut out);
    let negative = rec
        .reference
        .as_slice()
        .iter()
        .filter(|&&h| h < T::zero())
        .count();
    if negative > 0 {
        out.push(Violation::NegativeHeight { count: negative });
    }
    out
}
