//! Synthetic scenes with known burn polygons, for exercising the pipeline without
//! Sentinel-2 archives.
//!
//! Background pixels are drawn per channel from a clipped normal distribution;
//! pixels whose centres fall inside a burn receive the burn signature (NIR down,
//! SWIR up), which renders burns dark red in an NIR/green/SWIR false-color view.
//! Values are quantised to L1C digital numbers so the scene survives a round trip
//! through band files exactly.

use std::fs;
use std::path::{Path, PathBuf};

use chrono::{Duration, NaiveDate};
use ndarray::{Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::geo::{rasterize_polygons, BinaryMask, Crs, GeoTransform, Polygon, RasterGrid};
use crate::ingest::{Band, BandRaster, CompositeRaster, REFLECTANCE_SCALE};
use crate::raster_io::write_u16;

use super::labels::{label_composite, ExtractOptions, LabeledPatch};
use super::windows::PATCH_SIZE;
use super::DatasetError;

/// Additive reflectance change inside burns, per channel `[B8A, B03, B12]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BurnSignature {
    pub nir: f64,
    pub green: f64,
    pub swir: f64,
}

impl Default for BurnSignature {
    fn default() -> Self {
        Self {
            nir: -0.2,
            green: 0.0,
            swir: 0.3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSceneSpec {
    /// Square scene side in pixels (at least one patch).
    pub size: usize,
    pub n_burns: usize,
    pub burn_signature: BurnSignature,
    pub seed: u64,
    /// Mean background reflectance `[B8A, B03, B12]`.
    pub background: [f64; 3],
    pub noise_sigma: f64,
    /// Burn radius range in pixels.
    pub radius_px: (f64, f64),
    pub sensing_date: NaiveDate,
    /// Burns are dated up to this many days before sensing.
    pub window_days: i64,
    pub crs: Crs,
    pub origin: (f64, f64),
    pub pixel_size: f64,
    pub scene_id: String,
}

impl SyntheticSceneSpec {
    pub fn new(size: usize, n_burns: usize, seed: u64) -> Self {
        Self {
            size,
            n_burns,
            burn_signature: BurnSignature::default(),
            seed,
            background: [0.30, 0.10, 0.15],
            noise_sigma: 0.05,
            radius_px: (10.0, 40.0),
            sensing_date: NaiveDate::from_ymd_opt(2016, 9, 1).expect("valid date"),
            window_days: super::DEFAULT_WINDOW_DAYS,
            crs: Crs(32629),
            origin: (500_000.0, 4_500_000.0),
            pixel_size: 20.0,
            scene_id: format!("SYN_{seed}"),
        }
    }

    pub fn grid(&self) -> Result<RasterGrid, DatasetError> {
        Ok(RasterGrid::new(
            self.crs,
            GeoTransform::north_up(self.origin.0, self.origin.1, self.pixel_size, -self.pixel_size),
            self.size,
            self.size,
        )?)
    }
}

/// DN 0 is reserved for nodata, so the smallest representable reflectance is 1 DN.
fn quantise(v: f64) -> f32 {
    let dn = (v.clamp(0.0, 1.0) * REFLECTANCE_SCALE).round().max(1.0);
    (dn / REFLECTANCE_SCALE) as f32
}

/// Star-shaped polygon around `(cx, cy)` in world units.
fn random_burn(rng: &mut ChaCha8Rng, spec: &SyntheticSceneSpec, grid: &RasterGrid) -> Result<Polygon, DatasetError> {
    const VERTICES: usize = 14;
    let (cx, cy) = grid.pixel_to_world(rng.gen_range(0..spec.size) as i64, rng.gen_range(0..spec.size) as i64);
    let (lo, hi) = spec.radius_px;
    let radius = if hi > lo { rng.gen_range(lo..hi) } else { lo } * spec.pixel_size;
    let phase = rng.gen_range(0.0..std::f64::consts::TAU);
    let mut ring: Vec<(f64, f64)> = (0..VERTICES)
        .map(|k| {
            let a = phase + std::f64::consts::TAU * k as f64 / VERTICES as f64;
            let r = radius * rng.gen_range(0.65..1.0);
            (cx + r * a.cos(), cy + r * a.sin())
        })
        .collect();
    ring.push(ring[0]);
    let age = rng.gen_range(0..=spec.window_days.max(0));
    Ok(Polygon::new(spec.crs, ring, Vec::new())?.with_fire_date(spec.sensing_date - Duration::days(age)))
}

/// Deterministic scene and its ground-truth burn polygons.
pub fn generate_synthetic_scene(spec: &SyntheticSceneSpec) -> Result<(CompositeRaster, Vec<Polygon>), DatasetError> {
    if spec.size < PATCH_SIZE {
        return Err(DatasetError::InvalidSpec(format!("scene size {} is below {PATCH_SIZE}", spec.size)));
    }
    if spec.noise_sigma < 0.0 {
        return Err(DatasetError::InvalidSpec("negative noise sigma".into()));
    }
    let grid = spec.grid()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let burns = (0..spec.n_burns)
        .map(|_| random_burn(&mut rng, spec, &grid))
        .collect::<Result<Vec<_>, _>>()?;
    let burned = rasterize_polygons(&burns, &grid)?;
    let noise = Normal::new(0.0, spec.noise_sigma).map_err(|e| DatasetError::InvalidSpec(e.to_string()))?;
    let sig = spec.burn_signature;
    let deltas = [sig.nir, sig.green, sig.swir];
    let n = spec.size;
    let mut channels = Array3::<f32>::zeros((3, n, n));
    for r in 0..n {
        for c in 0..n {
            let burnt = burned.data()[[r, c]] == 1;
            for k in 0..3 {
                let mut v = spec.background[k] + noise.sample(&mut rng);
                if burnt {
                    v += deltas[k];
                }
                channels[[k, r, c]] = quantise(v);
            }
        }
    }
    let valid = BinaryMask::ones(grid.clone());
    let composite = CompositeRaster::new(grid, channels, spec.sensing_date, spec.scene_id.clone(), valid)?;
    Ok((composite, burns))
}

/// Band rasters reproducing `composite` exactly: B8A/B12 at 20 m and B03 replicated to 10 m.
pub fn synthetic_bands(composite: &CompositeRaster) -> Result<[BandRaster; 3], DatasetError> {
    let grid = composite.grid();
    let (h, w) = grid.shape();
    let to_dn = |k: usize, r: usize, c: usize| -> u16 {
        if composite.valid_mask().data()[[r, c]] == 0 {
            0
        } else {
            ((f64::from(composite.channels()[[k, r, c]]) * REFLECTANCE_SCALE).round() as u16).max(1)
        }
    };
    let b8a = Array2::from_shape_fn((h, w), |(r, c)| to_dn(0, r, c));
    let b12 = Array2::from_shape_fn((h, w), |(r, c)| to_dn(2, r, c));
    let b03 = Array2::from_shape_fn((2 * h, 2 * w), |(r, c)| to_dn(1, r / 2, c / 2));
    let (pw, ph) = grid.pixel_size();
    let fine = grid.with_resolution(pw / 2.0, ph / 2.0, 2 * w, 2 * h)?;
    Ok([
        BandRaster::new(grid.clone(), Band::B8A, b8a, 0)?,
        BandRaster::new(fine, Band::B03, b03, 0)?,
        BandRaster::new(grid.clone(), Band::B12, b12, 0)?,
    ])
}

/// Writes the scene as a granule directory (`<scene_id>_B8A.tif`, `_B03.tif`,
/// `_B12.tif`, `scene.json`) and returns the written paths.
pub fn write_synthetic_granule(dir: &Path, composite: &CompositeRaster) -> Result<Vec<PathBuf>, DatasetError> {
    fs::create_dir_all(dir).map_err(|e| DatasetError::Io(format!("{}: {e}", dir.display())))?;
    let mut paths = Vec::new();
    for band in synthetic_bands(composite)? {
        let path = dir.join(format!("{}_{}.tif", composite.scene_id(), band.band.name()));
        write_u16(&path, &band.grid, &band.data, Some(band.nodata))?;
        paths.push(path);
    }
    let sidecar = serde_json::json!({
        "scene_id": composite.scene_id(),
        "sensing_date": composite.sensing_date().to_string(),
    });
    let path = dir.join("scene.json");
    fs::write(&path, serde_json::to_string_pretty(&sidecar).expect("json")).map_err(|e| DatasetError::Io(format!("{}: {e}", path.display())))?;
    paths.push(path);
    Ok(paths)
}

/// Burned patches drawn from successive 640x640 scenes (seeds `seed`, `seed + 1`, ...)
/// until `n` are collected.
pub fn synthetic_patch_set(n: usize, seed: u64) -> Result<Vec<LabeledPatch>, DatasetError> {
    let options = ExtractOptions::default();
    let mut out = Vec::with_capacity(n);
    let mut scene_seed = seed;
    while out.len() < n {
        let spec = SyntheticSceneSpec::new(5 * PATCH_SIZE, 14, scene_seed);
        let (composite, burns) = generate_synthetic_scene(&spec)?;
        let (patches, _) = label_composite(&composite, &burns, &options)?;
        out.extend(patches.into_iter().take(n - out.len()));
        scene_seed += 1;
    }
    Ok(out)
}
