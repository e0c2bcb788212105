//! Sentinel-2 Level-1C scene catalog and false-color compositing.
//!
//! A granule is any directory holding one file per band named `*_B8A.*`, `*_B03.*`
//! and `*_B12.*`. The sensing date comes from a `scene.json` sidecar
//! (`{"sensing_date": "YYYY-MM-DD"}`) or from the first `YYYYMMDD` token in the file
//! or directory name. Composites are scaled by 1/10000 per scene; no dataset
//! statistics are involved, so a model trained elsewhere can consume them directly.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use ndarray::{Array2, Array3, Zip};
use serde::{Deserialize, Serialize};

use crate::geo::{BinaryMask, Crs, GeoError, Polygon, RasterGrid};
use crate::raster_io::{self, RasterData, RasterIoError};

/// L1C digital numbers are reflectance scaled by this factor.
pub const REFLECTANCE_SCALE: f64 = 10_000.0;

#[derive(Debug, thiserror::Error)]
pub enum IngestError {
    #[error("no usable scenes under {0}")]
    EmptyCatalog(PathBuf),
    #[error("failed to read {path}: {message}")]
    ReadFailure { path: PathBuf, message: String },
    #[error("expected band {expected}, got {found}")]
    WrongBand { expected: Band, found: Band },
    #[error("band {band} has pixel size {found} m, expected {expected} m")]
    WrongResolution { band: Band, expected: f64, found: f64 },
    #[error("raster dimensions {0}x{1} are not even")]
    OddDimensions(usize, usize),
    #[error("band grids do not match: {0}")]
    GridMismatch(String),
    #[error("scene {scene} has no {band} band")]
    MissingBand { scene: String, band: Band },
    #[error("invalid composite: {0}")]
    InvalidComposite(String),
    #[error(transparent)]
    Geo(#[from] GeoError),
    #[error(transparent)]
    Raster(#[from] RasterIoError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Band {
    B8A,
    B03,
    B12,
}

impl Band {
    /// Composite channel order.
    pub const ORDER: [Band; 3] = [Band::B8A, Band::B03, Band::B12];

    pub fn native_resolution(self) -> f64 {
        match self {
            Band::B03 => 10.0,
            Band::B8A | Band::B12 => 20.0,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Band::B8A => "B8A",
            Band::B03 => "B03",
            Band::B12 => "B12",
        }
    }

    fn from_file_name(name: &str) -> Option<Band> {
        let stem = name.rsplit_once('.').map_or(name, |(s, _)| s).to_ascii_uppercase();
        Band::ORDER
            .into_iter()
            .find(|b| stem == b.name() || stem.ends_with(&format!("_{}", b.name())))
    }
}

impl fmt::Display for Band {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneRef {
    pub scene_id: String,
    pub sensing_date: NaiveDate,
    pub band_paths: BTreeMap<Band, PathBuf>,
    pub crs: Crs,
    pub footprint: Polygon,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkipReport {
    pub path: PathBuf,
    pub reason: String,
}

#[derive(Debug, Clone)]
pub struct Catalog {
    pub scenes: Vec<SceneRef>,
    pub skipped: Vec<SkipReport>,
}

#[derive(Debug, Clone)]
pub struct CatalogOptions {
    /// Scenes sensed before this date are rejected (Sentinel-2A launched mid 2015).
    pub min_date: NaiveDate,
}

impl Default for CatalogOptions {
    fn default() -> Self {
        Self {
            min_date: NaiveDate::from_ymd_opt(2015, 1, 1).expect("valid date"),
        }
    }
}

#[derive(Deserialize)]
struct SceneSidecar {
    scene_id: Option<String>,
    sensing_date: NaiveDate,
}

pub fn build_catalog(root: &Path) -> Result<Catalog, IngestError> {
    build_catalog_with(root, &CatalogOptions::default())
}

/// Walks `root` for granule directories, skipping (and reporting) incomplete or unreadable ones.
pub fn build_catalog_with(root: &Path, options: &CatalogOptions) -> Result<Catalog, IngestError> {
    if !root.is_dir() {
        return Err(IngestError::ReadFailure {
            path: root.to_path_buf(),
            message: "not a directory".into(),
        });
    }
    let mut scenes = Vec::new();
    let mut skipped = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        let entries = fs::read_dir(&dir).map_err(|e| IngestError::ReadFailure {
            path: dir.clone(),
            message: e.to_string(),
        })?;
        let mut bands = BTreeMap::new();
        let mut children = Vec::new();
        for entry in entries.flatten() {
            let path = entry.path();
            if path.is_dir() {
                children.push(path);
            } else if let Some(band) = path.file_name().and_then(|n| n.to_str()).and_then(Band::from_file_name) {
                bands.insert(band, path);
            }
        }
        children.sort();
        stack.extend(children.into_iter().rev());
        if bands.is_empty() {
            continue;
        }
        match scene_from_dir(&dir, bands, options) {
            Ok(scene) => scenes.push(scene),
            Err(reason) => {
                log::warn!("skipping {}: {reason}", dir.display());
                skipped.push(SkipReport { path: dir, reason });
            }
        }
    }
    if scenes.is_empty() {
        return Err(IngestError::EmptyCatalog(root.to_path_buf()));
    }
    scenes.sort_by(|a, b| (a.sensing_date, &a.scene_id).cmp(&(b.sensing_date, &b.scene_id)));
    Ok(Catalog { scenes, skipped })
}

fn scene_from_dir(dir: &Path, bands: BTreeMap<Band, PathBuf>, options: &CatalogOptions) -> Result<SceneRef, String> {
    if let Some(missing) = Band::ORDER.iter().find(|b| !bands.contains_key(b)) {
        return Err(format!("missing band {missing}"));
    }
    let sidecar = match fs::read_to_string(dir.join("scene.json")) {
        Ok(text) => Some(serde_json::from_str::<SceneSidecar>(&text).map_err(|e| format!("scene.json: {e}"))?),
        Err(_) => None,
    };
    let dir_name = dir.file_name().and_then(|n| n.to_str()).unwrap_or("scene").to_string();
    let scene_id = sidecar.as_ref().and_then(|s| s.scene_id.clone()).unwrap_or(dir_name.clone());
    let sensing_date = match &sidecar {
        Some(s) => s.sensing_date,
        None => bands
            .values()
            .filter_map(|p| p.file_name().and_then(|n| n.to_str()))
            .chain(std::iter::once(dir_name.as_str()))
            .find_map(date_token)
            .ok_or("no sensing date in scene.json or file names")?,
    };
    if sensing_date < options.min_date {
        return Err(format!("sensing date {sensing_date} precedes {}", options.min_date));
    }
    let mut crs = None;
    let mut footprint_grid = None;
    for (band, path) in &bands {
        if is_jpeg2000(path) {
            return Err(format!("{}: JPEG2000 band files are not supported; convert to GeoTIFF", path.display()));
        }
        let (grid, _) = raster_io::read_header(path).map_err(|e| e.to_string())?;
        match crs {
            None => crs = Some(grid.crs()),
            Some(c) if c != grid.crs() => return Err(format!("band {band} CRS {} differs from {c}", grid.crs())),
            Some(_) => {}
        }
        if *band == Band::B8A {
            footprint_grid = Some(grid);
        }
    }
    let grid = footprint_grid.expect("B8A present");
    let (min_x, min_y, max_x, max_y) = grid.extent();
    let footprint = Polygon::rectangle(grid.crs(), min_x, min_y, max_x, max_y).map_err(|e| e.to_string())?;
    Ok(SceneRef {
        scene_id,
        sensing_date,
        band_paths: bands,
        crs: grid.crs(),
        footprint,
    })
}

fn is_jpeg2000(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| e.eq_ignore_ascii_case("jp2"))
}

/// First run of exactly eight digits that parses as a calendar date.
fn date_token(name: &str) -> Option<NaiveDate> {
    name.split(|c: char| !c.is_ascii_digit())
        .filter(|run| run.len() == 8)
        .find_map(|run| NaiveDate::parse_from_str(run, "%Y%m%d").ok())
}

/// One band of top-of-atmosphere digital numbers.
#[derive(Debug, Clone, PartialEq)]
pub struct BandRaster {
    pub grid: RasterGrid,
    pub band: Band,
    pub data: Array2<u16>,
    pub nodata: u16,
}

impl BandRaster {
    pub fn new(grid: RasterGrid, band: Band, data: Array2<u16>, nodata: u16) -> Result<Self, IngestError> {
        if data.dim() != grid.shape() {
            return Err(GeoError::ShapeMismatch {
                expected: grid.shape(),
                found: data.dim(),
            }
            .into());
        }
        let found = grid.pixel_size().0.abs();
        if (found - band.native_resolution()).abs() > 1e-6 {
            return Err(IngestError::WrongResolution {
                band,
                expected: band.native_resolution(),
                found,
            });
        }
        Ok(Self { grid, band, data, nodata })
    }

    pub fn nodata_count(&self) -> usize {
        self.data.iter().filter(|&&v| v == self.nodata).count()
    }
}

pub fn load_band(scene: &SceneRef, band: Band) -> Result<BandRaster, IngestError> {
    let path = scene.band_paths.get(&band).ok_or_else(|| IngestError::MissingBand {
        scene: scene.scene_id.clone(),
        band,
    })?;
    let read_failure = |message: String| IngestError::ReadFailure {
        path: path.clone(),
        message,
    };
    let raster = raster_io::read_geotiff(path).map_err(|e| read_failure(e.to_string()))?;
    let data = match raster.data {
        RasterData::U16(d) => d,
        RasterData::U8(d) => d.mapv(u16::from),
        _ => return Err(read_failure("band must be an unsigned integer raster".into())),
    };
    let nodata = raster.nodata.map(|v| v as u16).unwrap_or(0);
    BandRaster::new(raster.grid, band, data, nodata)
}

/// Aggregates 10 m B03 to 20 m by the rounded mean of the valid pixels in each 2x2 block.
pub fn resample_b03_to_20m(band: &BandRaster) -> Result<BandRaster, IngestError> {
    if band.band != Band::B03 {
        return Err(IngestError::WrongBand {
            expected: Band::B03,
            found: band.band,
        });
    }
    let (h, w) = band.data.dim();
    if h % 2 != 0 || w % 2 != 0 {
        return Err(IngestError::OddDimensions(w, h));
    }
    let (pw, ph) = band.grid.pixel_size();
    let grid = band.grid.with_resolution(pw * 2.0, ph * 2.0, w / 2, h / 2)?;
    let data = Array2::from_shape_fn((h / 2, w / 2), |(r, c)| {
        let mut sum = 0u32;
        let mut n = 0u32;
        for dr in 0..2 {
            for dc in 0..2 {
                let v = band.data[[2 * r + dr, 2 * c + dc]];
                if v != band.nodata {
                    sum += u32::from(v);
                    n += 1;
                }
            }
        }
        if n == 0 {
            band.nodata
        } else {
            (f64::from(sum) / f64::from(n)).round() as u16
        }
    });
    Ok(BandRaster {
        grid,
        band: Band::B03,
        data,
        nodata: band.nodata,
    })
}

/// Three-channel `[B8A, B03, B12]` reflectance stack on the 20 m grid.
#[derive(Debug, Clone, PartialEq)]
pub struct CompositeRaster {
    grid: RasterGrid,
    channels: Array3<f32>,
    sensing_date: NaiveDate,
    scene_id: String,
    valid: BinaryMask,
}

impl CompositeRaster {
    /// Invalid pixels are forced to 0 in every channel.
    pub fn new(
        grid: RasterGrid,
        mut channels: Array3<f32>,
        sensing_date: NaiveDate,
        scene_id: impl Into<String>,
        valid: BinaryMask,
    ) -> Result<Self, IngestError> {
        let (c, h, w) = channels.dim();
        if c != 3 || (h, w) != grid.shape() {
            return Err(IngestError::InvalidComposite(format!("channel array {:?} does not fit grid {:?}", channels.dim(), grid.shape())));
        }
        if valid.grid() != &grid {
            return Err(IngestError::GridMismatch("valid mask grid differs from composite grid".into()));
        }
        for mut plane in channels.outer_iter_mut() {
            Zip::from(&mut plane).and(valid.data()).for_each(|v, &ok| {
                if ok == 0 {
                    *v = 0.0;
                }
            });
        }
        if let Some(v) = channels.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(IngestError::InvalidComposite(format!("channel value {v} outside [0, 1]")));
        }
        Ok(Self {
            grid,
            channels,
            sensing_date,
            scene_id: scene_id.into(),
            valid,
        })
    }

    pub fn grid(&self) -> &RasterGrid {
        &self.grid
    }

    pub fn channels(&self) -> &Array3<f32> {
        &self.channels
    }

    pub fn sensing_date(&self) -> NaiveDate {
        self.sensing_date
    }

    pub fn scene_id(&self) -> &str {
        &self.scene_id
    }

    pub fn valid_mask(&self) -> &BinaryMask {
        &self.valid
    }
}

fn scale_dn(dn: u16) -> f32 {
    (f64::from(dn) / REFLECTANCE_SCALE).clamp(0.0, 1.0) as f32
}

/// Composes already-loaded bands; `b03` may be at 10 m or 20 m.
pub fn composite_bands(
    b8a: &BandRaster,
    b03: &BandRaster,
    b12: &BandRaster,
    sensing_date: NaiveDate,
    scene_id: &str,
) -> Result<CompositeRaster, IngestError> {
    for (band, expected) in [(b8a, Band::B8A), (b03, Band::B03), (b12, Band::B12)] {
        if band.band != expected {
            return Err(IngestError::WrongBand {
                expected,
                found: band.band,
            });
        }
    }
    if b8a.grid != b12.grid {
        return Err(IngestError::GridMismatch("B8A and B12 grids differ".into()));
    }
    let resampled;
    let b03 = if (b03.grid.pixel_size().0.abs() - 10.0).abs() < 1e-6 {
        resampled = resample_b03_to_20m(b03)?;
        &resampled
    } else {
        b03
    };
    if b03.grid != b8a.grid {
        return Err(IngestError::GridMismatch("resampled B03 does not land on the B8A/B12 grid".into()));
    }
    let grid = b8a.grid.clone();
    let (h, w) = grid.shape();
    let mut channels = Array3::<f32>::zeros((3, h, w));
    let mut valid = Array2::<u8>::zeros((h, w));
    for r in 0..h {
        for c in 0..w {
            let dns = [b8a.data[[r, c]], b03.data[[r, c]], b12.data[[r, c]]];
            let ok = dns[0] != b8a.nodata && dns[1] != b03.nodata && dns[2] != b12.nodata;
            if ok {
                valid[[r, c]] = 1;
                for (k, &dn) in dns.iter().enumerate() {
                    channels[[k, r, c]] = scale_dn(dn);
                }
            }
        }
    }
    let valid = BinaryMask::new(grid.clone(), valid)?;
    CompositeRaster::new(grid, channels, sensing_date, scene_id, valid)
}

pub fn composite(scene: &SceneRef) -> Result<CompositeRaster, IngestError> {
    let b8a = load_band(scene, Band::B8A)?;
    let b03 = load_band(scene, Band::B03)?;
    let b12 = load_band(scene, Band::B12)?;
    composite_bands(&b8a, &b03, &b12, scene.sensing_date, &scene.scene_id)
}

#[derive(Debug, Serialize, Deserialize)]
struct CompositeSidecar {
    scene_id: String,
    sensing_date: NaiveDate,
    band_order: Vec<Band>,
}

fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("json")
}

/// Writes `<path>` (3-band float32, NaN where invalid) and `<path>.json` metadata.
pub fn write_composite(path: &Path, composite: &CompositeRaster) -> Result<(), IngestError> {
    let mut data = composite.channels.clone();
    for mut plane in data.outer_iter_mut() {
        Zip::from(&mut plane).and(composite.valid.data()).for_each(|v, &ok| {
            if ok == 0 {
                *v = f32::NAN;
            }
        });
    }
    raster_io::write_f32_bands(path, &composite.grid, &data)?;
    let sidecar = CompositeSidecar {
        scene_id: composite.scene_id.clone(),
        sensing_date: composite.sensing_date,
        band_order: Band::ORDER.to_vec(),
    };
    let side = sidecar_path(path);
    fs::write(&side, serde_json::to_string_pretty(&sidecar).expect("sidecar serialises")).map_err(|e| IngestError::ReadFailure {
        path: side,
        message: e.to_string(),
    })
}

pub fn read_composite(path: &Path) -> Result<CompositeRaster, IngestError> {
    let side = sidecar_path(path);
    let fail = |p: &Path, message: String| IngestError::ReadFailure {
        path: p.to_path_buf(),
        message,
    };
    let text = fs::read_to_string(&side).map_err(|e| fail(&side, e.to_string()))?;
    let sidecar: CompositeSidecar = serde_json::from_str(&text).map_err(|e| fail(&side, e.to_string()))?;
    if sidecar.band_order != Band::ORDER {
        return Err(fail(&side, format!("band order {:?} is not [B8A, B03, B12]", sidecar.band_order)));
    }
    let raster = raster_io::read_geotiff(path)?;
    let RasterData::F32Bands(mut channels) = raster.data else {
        return Err(fail(path, "composite must be a 3-band float32 raster".into()));
    };
    let (_, h, w) = channels.dim();
    let valid = Array2::from_shape_fn((h, w), |(r, c)| u8::from((0..3).all(|k| !channels[[k, r, c]].is_nan())));
    channels.mapv_inplace(|v| if v.is_nan() { 0.0 } else { v });
    let valid = BinaryMask::new(raster.grid.clone(), valid)?;
    CompositeRaster::new(raster.grid, channels, sidecar.sensing_date, sidecar.scene_id, valid)
}
