use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: invalid JSON: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("{path}: {msg}")]
    GeoTiff { path: PathBuf, msg: String },

    #[error("{path}: no samples")]
    NoSamples { path: PathBuf },

    #[error("{path}: malformed manifest entry: {msg}")]
    Malformed { path: PathBuf, msg: String },

    #[error("dangling sample reference: {path} does not exist")]
    DanglingReference { path: PathBuf },

    #[error("band {band} has no normalization statistics")]
    MissingNormalization { band: String },

    #[error("shape mismatch: expected {expected}, got {actual}")]
    Shape { expected: String, actual: String },

    #[error("invalid scene parameters: {0}")]
    InvalidParams(String),

    #[error("could not place building {placed_so_far} of {requested} after {attempts} attempts")]
    Placement {
        placed_so_far: usize,
        requested: usize,
        attempts: usize,
    },

    #[error("month {month:02} has no {what}")]
    MissingMonth { month: u32, what: String },

    #[error("pixel ({x}, {y}) band {band} is never observed cloud-free")]
    NeverObserved { x: usize, y: usize, band: usize },

    #[error("invalid geometry in {what}: {msg}")]
    Geometry { what: String, msg: String },

    #[error("tile {tile_id}: {source}")]
    Tile {
        tile_id: String,
        #[source]
        source: Box<Error>,
    },

    #[error("{0}")]
    Other(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn geotiff(path: impl Into<PathBuf>, msg: impl ToString) -> Self {
        Error::GeoTiff {
            path: path.into(),
            msg: msg.to_string(),
        }
    }

    pub(crate) fn shape(expected: impl ToString, actual: impl ToString) -> Self {
        Error::Shape {
            expected: expected.to_string(),
            actual: actual.to_string(),
        }
    }

    pub fn in_tile(self, tile_id: &str) -> Self {
        Error::Tile {
            tile_id: tile_id.to_string(),
            source: Box::new(self),
        }
    }
}
