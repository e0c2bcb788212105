//! Applying a trained model to a target region: mosaicking window predictions,
//! per-district burned-area series with a whole-region control, comparison
//! with a coarse reference product, and hand-label evaluation.

mod compare;
mod districts;
mod mosaic;
mod period;
mod series;

pub use compare::{compare_reference, ComparisonReport};
pub use districts::{load_districts, DistrictConfig, Established};
pub use mosaic::{infer_region, read_mosaic, write_mosaic, CombineRule, InferOptions, MosaicPaths, RegionMosaic};
pub use period::{Period, PeriodKind};
pub use series::{build_series, DistrictSeries, SeriesRow, REGION_CONTROL};

use std::path::Path;

use crate::dataset::{read_store, DatasetError, LabeledPatch};
use crate::geo::GeoError;
use crate::metrics::{self, EvalReport, MetricsError, PatchPredictor};
use crate::raster_io::RasterIoError;
use crate::segmodel::ModelError;

#[derive(Debug, thiserror::Error)]
pub enum TransferError {
    #[error("no composite falls inside period {0}")]
    NoCoverage(String),
    #[error("composites are not on a common grid: {0}")]
    GridMismatch(String),
    #[error("mosaic and reference do not overlap")]
    NoOverlap,
    #[error("invalid district definition: {0}")]
    InvalidDistrict(String),
    #[error("more than one mosaic for period {0}")]
    DuplicatePeriod(String),
    #[error("invalid period: {0}")]
    InvalidPeriod(String),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error(transparent)]
    Geo(#[from] GeoError),
    #[error(transparent)]
    Raster(#[from] RasterIoError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
}

impl TransferError {
    pub(crate) fn io(path: &Path, e: impl std::fmt::Display) -> Self {
        Self::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        }
    }
}

/// Scores hand-labeled target-region patches; the report is tagged `transfer`.
pub fn evaluate_handlabels<P: PatchPredictor + ?Sized>(model: &P, patches: &[LabeledPatch], threshold: f64) -> Result<EvalReport, TransferError> {
    Ok(metrics::evaluate(model, patches, threshold, "transfer")?)
}

/// [`evaluate_handlabels`] over every patch of a patch store directory.
pub fn evaluate_handlabel_store<P: PatchPredictor + ?Sized>(model: &P, store: &Path, threshold: f64) -> Result<EvalReport, TransferError> {
    let (_, patches) = read_store(store)?;
    evaluate_handlabels(model, &patches, threshold)
}
