//! Georeferenced grids, polygons, binary masks, rasterization and zonal statistics.
//!
//! Everything here is immutable after construction and safe to share across threads.

mod grid;
mod mask;
mod polygon;
mod rasterize;
pub mod vector_io;

use std::path::{Path, PathBuf};

pub use grid::{Crs, GeoTransform, RasterGrid};
pub use mask::BinaryMask;
pub use polygon::{Polygon, Ring, FIRE_DATE};
pub use rasterize::{rasterize_polygons, zonal_fraction, zonal_stats, ZonalStats};

#[derive(Debug, thiserror::Error)]
pub enum GeoError {
    #[error("invalid raster grid: {0}")]
    InvalidGrid(String),
    #[error("rotated grids are not supported")]
    RotatedGridUnsupported,
    #[error("CRS mismatch: expected {expected}, found {found}")]
    CrsMismatch { expected: Crs, found: Crs },
    #[error("rasters are not on the same grid")]
    GridMismatch,
    #[error("array shape {found:?} does not match grid shape {expected:?}")]
    ShapeMismatch {
        expected: (usize, usize),
        found: (usize, usize),
    },
    #[error("invalid mask: {0}")]
    InvalidMask(String),
    #[error("invalid polygon: {0}")]
    InvalidPolygon(String),
    #[error("{path}: {message}")]
    VectorFormat { path: PathBuf, message: String },
    #[error("{0}: no CRS declared in the file and none supplied")]
    MissingCrs(PathBuf),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl GeoError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}
