//! Labeled patch datasets: tiling, date-matched labels, filtering, splitting,
//! persistence and synthetic scenes.

mod labels;
mod split;
pub mod store;
pub mod synth;
pub(crate) mod windows;

pub use labels::{
    filter_burned, label_composite, match_labels, polygons_in_time_window, ExtractOptions, ExtractStats, LabeledPatch, SplitTag,
    DEFAULT_WINDOW_DAYS,
};
pub use split::{split_dataset, train_count, DatasetManifest, PatchRecord, Protocol, SplitCounts, SplitUnit, DEFAULT_TRAIN_RATIO};
pub use store::{read_manifest, read_store, write_store};
pub use synth::{generate_synthetic_scene, synthetic_bands, synthetic_patch_set, write_synthetic_granule, BurnSignature, SyntheticSceneSpec};
pub use windows::{covering_windows, extract_windows, PatchWindow, PATCH_SIZE};

use crate::geo::GeoError;
use crate::ingest::IngestError;
use crate::raster_io::RasterIoError;

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error("stride must be at least 1")]
    InvalidStride,
    #[error("window at ({row_off}, {col_off}) does not fit inside the composite")]
    WindowOutOfBounds { row_off: usize, col_off: usize },
    #[error("polygon {0} has no valid fire_date attribute")]
    MissingFireDate(usize),
    #[error("invalid patch: {0}")]
    InvalidPatch(String),
    #[error("invalid split: {0}")]
    InvalidSplit(String),
    #[error("corrupt patch store: {0}")]
    CorruptStore(String),
    #[error("invalid synthetic scene spec: {0}")]
    InvalidSpec(String),
    #[error("i/o error: {0}")]
    Io(String),
    #[error(transparent)]
    Geo(#[from] GeoError),
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Raster(#[from] RasterIoError),
}
