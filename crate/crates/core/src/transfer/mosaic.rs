use std::path::{Path, PathBuf};

use ndarray::{s, Array2, Array3};
use serde::{Deserialize, Serialize};

use super::{Period, TransferError};
use crate::dataset::windows::window_offsets;
use crate::dataset::PATCH_SIZE;
use crate::geo::{BinaryMask, GeoTransform, RasterGrid};
use crate::ingest::CompositeRaster;
use crate::metrics::PatchPredictor;
use crate::raster_io::{read_geotiff, read_mask, write_f32, write_mask, RasterData};

/// How overlapping window/scene predictions are merged per pixel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CombineRule {
    #[default]
    Max,
    Mean,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InferOptions {
    pub threshold: f64,
    pub stride: usize,
    pub combine: CombineRule,
    /// Windows per prediction call.
    pub batch_size: usize,
}

impl Default for InferOptions {
    fn default() -> Self {
        Self {
            threshold: 0.5,
            stride: PATCH_SIZE,
            combine: CombineRule::Max,
            batch_size: 16,
        }
    }
}

/// Regional prediction for one period.
#[derive(Debug, Clone)]
pub struct RegionMosaic {
    grid: RasterGrid,
    /// Burned-class probability; NaN where no composite contributed.
    prob: Array2<f32>,
    valid: BinaryMask,
    burned: BinaryMask,
    period: Period,
    provenance: Vec<String>,
    threshold: f64,
}

impl RegionMosaic {
    /// Derives `valid` (finite probability) and `burned` (`p >= threshold`) from `prob`.
    pub fn new(grid: RasterGrid, prob: Array2<f32>, period: Period, provenance: Vec<String>, threshold: f64) -> Result<Self, TransferError> {
        let valid = BinaryMask::new(grid.clone(), prob.mapv(|p| u8::from(p.is_finite())))?;
        let burned = BinaryMask::new(grid.clone(), prob.mapv(|p| u8::from(p.is_finite() && f64::from(p) >= threshold)))?;
        Ok(Self {
            grid,
            prob,
            valid,
            burned,
            period,
            provenance,
            threshold,
        })
    }

    /// Mosaic whose probabilities are the 0/1 mask itself.
    pub fn from_mask(burned: &BinaryMask, valid: Option<&BinaryMask>, period: Period) -> Result<Self, TransferError> {
        let mut prob = burned.data().mapv(f32::from);
        if let Some(v) = valid {
            if v.grid() != burned.grid() {
                return Err(crate::geo::GeoError::GridMismatch.into());
            }
            ndarray::Zip::from(&mut prob).and(v.data()).for_each(|p, &ok| {
                if ok == 0 {
                    *p = f32::NAN
                }
            });
        }
        Self::new(burned.grid().clone(), prob, period, Vec::new(), 0.5)
    }

    pub fn grid(&self) -> &RasterGrid {
        &self.grid
    }

    pub fn prob(&self) -> &Array2<f32> {
        &self.prob
    }

    pub fn valid(&self) -> &BinaryMask {
        &self.valid
    }

    pub fn burned(&self) -> &BinaryMask {
        &self.burned
    }

    pub fn period(&self) -> &Period {
        &self.period
    }

    pub fn provenance(&self) -> &[String] {
        &self.provenance
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    /// Burned pixels over valid pixels.
    pub fn burned_fraction(&self) -> f64 {
        let n = self.valid.count_ones();
        if n == 0 {
            0.0
        } else {
            self.burned.count_ones() as f64 / n as f64
        }
    }
}

/// Equality treats unset (NaN) probabilities as equal to each other.
impl PartialEq for RegionMosaic {
    fn eq(&self, other: &Self) -> bool {
        self.grid == other.grid
            && self.prob.dim() == other.prob.dim()
            && self.prob.iter().zip(&other.prob).all(|(a, b)| a.to_bits() == b.to_bits())
            && self.valid == other.valid
            && self.burned == other.burned
            && self.period == other.period
            && self.provenance == other.provenance
            && self.threshold == other.threshold
    }
}

/// Union extent of the composites on their shared pixel lattice, and each
/// composite's `(row, col)` offset inside it.
fn union_grid(composites: &[&CompositeRaster]) -> Result<(RasterGrid, Vec<(usize, usize)>), TransferError> {
    let first = composites[0].grid();
    let t0 = *first.transform();
    if t0.is_rotated() || t0.pixel_width <= 0.0 || t0.pixel_height >= 0.0 {
        return Err(TransferError::GridMismatch("mosaicking needs north-up grids".into()));
    }
    let (pw, ph) = (t0.pixel_width, t0.pixel_height);
    let mut placed = Vec::with_capacity(composites.len());
    for c in composites {
        let g = c.grid();
        g.ensure_crs(first.crs())?;
        let t = g.transform();
        if t.is_rotated() || t.pixel_width != pw || t.pixel_height != ph {
            return Err(TransferError::GridMismatch(format!("{} has a different pixel size or rotation", c.scene_id())));
        }
        let col = (t.origin_x - t0.origin_x) / pw;
        let row = (t.origin_y - t0.origin_y) / ph;
        if (col - col.round()).abs() > 1e-6 || (row - row.round()).abs() > 1e-6 {
            return Err(TransferError::GridMismatch(format!("{} is not aligned to the common pixel lattice", c.scene_id())));
        }
        placed.push((row.round() as i64, col.round() as i64, g.height() as i64, g.width() as i64));
    }
    let r0 = placed.iter().map(|p| p.0).min().expect("non-empty");
    let c0 = placed.iter().map(|p| p.1).min().expect("non-empty");
    let r1 = placed.iter().map(|p| p.0 + p.2).max().expect("non-empty");
    let c1 = placed.iter().map(|p| p.1 + p.3).max().expect("non-empty");
    let transform = GeoTransform {
        origin_x: t0.origin_x + c0 as f64 * pw,
        origin_y: t0.origin_y + r0 as f64 * ph,
        ..t0
    };
    let grid = RasterGrid::new(first.crs(), transform, (c1 - c0) as usize, (r1 - r0) as usize)?;
    let offsets = placed.iter().map(|p| ((p.0 - r0) as usize, (p.1 - c0) as usize)).collect();
    Ok((grid, offsets))
}

struct Accumulator {
    rule: CombineRule,
    value: Array2<f64>,
    count: Array2<u32>,
}

impl Accumulator {
    fn add(&mut self, r: usize, c: usize, p: f32) {
        let p = f64::from(p);
        let v = &mut self.value[[r, c]];
        match self.rule {
            CombineRule::Max => {
                if self.count[[r, c]] == 0 || p > *v {
                    *v = p
                }
            }
            CombineRule::Mean => *v += p,
        }
        self.count[[r, c]] += 1;
    }

    fn finish(self) -> Array2<f32> {
        let rule = self.rule;
        ndarray::Zip::from(&self.value).and(&self.count).map_collect(|&v, &n| match (n, rule) {
            (0, _) => f32::NAN,
            (_, CombineRule::Max) => v as f32,
            (n, CombineRule::Mean) => (v / f64::from(n)) as f32,
        })
    }
}

/// Predicts every valid pixel of the composites sensed within `period` and merges
/// the windows (stride tiling plus edge-aligned windows) into one regional map.
pub fn infer_region<P: PatchPredictor + ?Sized>(
    model: &P,
    composites: &[CompositeRaster],
    period: &Period,
    options: &InferOptions,
) -> Result<RegionMosaic, TransferError> {
    if options.stride == 0 {
        return Err(crate::dataset::DatasetError::InvalidStride.into());
    }
    let mut selected: Vec<&CompositeRaster> = composites.iter().filter(|c| period.contains(c.sensing_date())).collect();
    if selected.is_empty() {
        return Err(TransferError::NoCoverage(period.label.clone()));
    }
    selected.sort_by(|a, b| (a.sensing_date(), a.scene_id()).cmp(&(b.sensing_date(), b.scene_id())));
    let (grid, offsets) = union_grid(&selected)?;
    let mut acc = Accumulator {
        rule: options.combine,
        value: Array2::zeros(grid.shape()),
        count: Array2::zeros(grid.shape()),
    };
    for (comp, &(row0, col0)) in selected.iter().zip(&offsets) {
        let (h, w) = comp.grid().shape();
        // Scenes smaller than a patch are zero-padded; padded pixels are never written.
        let (ph, pw) = (h.max(PATCH_SIZE), w.max(PATCH_SIZE));
        let mut channels = Array3::<f32>::zeros((3, ph, pw));
        channels.slice_mut(s![.., ..h, ..w]).assign(comp.channels());
        let valid = comp.valid_mask().data();
        let mut windows = Vec::new();
        for &r in &window_offsets(ph, options.stride, true) {
            for &c in &window_offsets(pw, options.stride, true) {
                let (re, ce) = ((r + PATCH_SIZE).min(h), (c + PATCH_SIZE).min(w));
                if r < h && c < w && valid.slice(s![r..re, c..ce]).iter().any(|&v| v != 0) {
                    windows.push((r, c));
                }
            }
        }
        log::debug!("{}: {} windows", comp.scene_id(), windows.len());
        for chunk in windows.chunks(options.batch_size.max(1)) {
            let inputs: Vec<_> = chunk
                .iter()
                .map(|&(r, c)| channels.slice(s![.., r..r + PATCH_SIZE, c..c + PATCH_SIZE]))
                .collect();
            let probs = model.predict_batch(&inputs)?;
            for (&(r, c), prob) in chunk.iter().zip(&probs) {
                for i in 0..PATCH_SIZE.min(h - r) {
                    for j in 0..PATCH_SIZE.min(w - c) {
                        if valid[[r + i, c + j]] != 0 {
                            acc.add(row0 + r + i, col0 + c + j, prob[[i, j]]);
                        }
                    }
                }
            }
        }
    }
    let provenance = selected.iter().map(|c| c.scene_id().to_string()).collect();
    RegionMosaic::new(grid, acc.finish(), period.clone(), provenance, options.threshold)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MosaicPaths {
    pub prob: PathBuf,
    pub burned: PathBuf,
    pub sidecar: PathBuf,
}

impl MosaicPaths {
    /// `<dir>/<stem>_prob.tif`, `<dir>/<stem>_burned.tif`, `<dir>/<stem>.json`.
    pub fn new(dir: &Path, stem: &str) -> Self {
        Self {
            prob: dir.join(format!("{stem}_prob.tif")),
            burned: dir.join(format!("{stem}_burned.tif")),
            sidecar: dir.join(format!("{stem}.json")),
        }
    }

    pub fn all(&self) -> [&Path; 3] {
        [&self.prob, &self.burned, &self.sidecar]
    }
}

#[derive(Serialize, Deserialize)]
struct Sidecar {
    period: Period,
    provenance: Vec<String>,
    threshold: f64,
}

/// Float32 probabilities (NaN unset), uint8 burned mask (255 unset) and a JSON sidecar.
pub fn write_mosaic(mosaic: &RegionMosaic, paths: &MosaicPaths) -> Result<(), TransferError> {
    write_f32(&paths.prob, &mosaic.grid, &mosaic.prob)?;
    write_mask(&paths.burned, &mosaic.burned, Some(&mosaic.valid))?;
    let sidecar = Sidecar {
        period: mosaic.period.clone(),
        provenance: mosaic.provenance.clone(),
        threshold: mosaic.threshold,
    };
    let text = serde_json::to_string_pretty(&sidecar).expect("sidecar serialises");
    std::fs::write(&paths.sidecar, text).map_err(|e| TransferError::io(&paths.sidecar, e))
}

pub fn read_mosaic(paths: &MosaicPaths) -> Result<RegionMosaic, TransferError> {
    let text = std::fs::read_to_string(&paths.sidecar).map_err(|e| TransferError::io(&paths.sidecar, e))?;
    let sidecar: Sidecar = serde_json::from_str(&text).map_err(|e| TransferError::io(&paths.sidecar, e))?;
    let raster = read_geotiff(&paths.prob)?;
    let RasterData::F32(prob) = raster.data else {
        return Err(TransferError::io(&paths.prob, "expected a single float32 band"));
    };
    let mosaic = RegionMosaic::new(raster.grid, prob, sidecar.period, sidecar.provenance, sidecar.threshold)?;
    let (burned, valid) = read_mask(&paths.burned)?;
    if burned != mosaic.burned || valid != mosaic.valid {
        return Err(TransferError::io(&paths.burned, "burned mask disagrees with the probability raster"));
    }
    Ok(mosaic)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geo::Crs;
    use crate::segmodel::ModelError;
    use chrono::NaiveDate;
    use ndarray::{Array2, ArrayView3};

    /// Probability = SWIR channel.
    struct Swir;

    impl PatchPredictor for Swir {
        fn predict_batch(&self, inputs: &[ArrayView3<f32>]) -> Result<Vec<Array2<f32>>, ModelError> {
            Ok(inputs.iter().map(|x| x.index_axis(ndarray::Axis(0), 2).to_owned()).collect())
        }
    }

    fn composite(origin: (f64, f64), h: usize, w: usize, id: &str, fill: impl Fn(usize, usize) -> f32) -> CompositeRaster {
        let grid = RasterGrid::new(Crs(32636), GeoTransform::north_up(origin.0, origin.1, 20.0, -20.0), w, h).unwrap();
        let ch = Array3::from_shape_fn((3, h, w), |(k, r, c)| if k == 2 { fill(r, c) } else { 0.1 });
        let valid = BinaryMask::ones(grid.clone());
        CompositeRaster::new(grid, ch, NaiveDate::from_ymd_opt(2017, 2, 1).unwrap(), id, valid).unwrap()
    }

    #[test]
    fn covers_every_pixel_of_odd_sized_scene() {
        let c = composite((0.0, 0.0), 300, 200, "a", |r, c| ((r * 7 + c) % 10) as f32 / 10.0);
        let m = infer_region(&Swir, std::slice::from_ref(&c), &Period::year(2017), &InferOptions::default()).unwrap();
        assert_eq!(m.valid().count_ones(), 300 * 200);
        let expected = c.channels().index_axis(ndarray::Axis(0), 2).to_owned();
        assert_eq!(m.prob(), &expected);
    }

    #[test]
    fn small_scene_is_padded() {
        let c = composite((0.0, 0.0), 50, 70, "a", |_, _| 0.8);
        let m = infer_region(&Swir, &[c], &Period::year(2017), &InferOptions::default()).unwrap();
        assert_eq!(m.grid().shape(), (50, 70));
        assert_eq!(m.burned().count_ones(), 50 * 70);
    }

    #[test]
    fn overlapping_scenes_take_maximum() {
        let a = composite((0.0, 0.0), 128, 128, "a", |_, _| 0.2);
        // Shifted 64 px right and 64 px down.
        let b = composite((1280.0, -1280.0), 128, 128, "b", |_, _| 0.7);
        let m = infer_region(&Swir, &[a, b], &Period::year(2017), &InferOptions::default()).unwrap();
        assert_eq!(m.grid().shape(), (192, 192));
        assert_eq!(m.prob()[[0, 0]], 0.2);
        assert_eq!(m.prob()[[100, 100]], 0.7);
        assert!(m.prob()[[0, 191]].is_nan());
        assert_eq!(m.valid().count_ones(), 2 * 128 * 128 - 64 * 64);
        let mean = InferOptions {
            combine: CombineRule::Mean,
            ..Default::default()
        };
        let a = composite((0.0, 0.0), 128, 128, "a", |_, _| 0.25);
        let b = composite((0.0, 0.0), 128, 128, "b", |_, _| 0.75);
        let m = infer_region(&Swir, &[a, b], &Period::year(2017), &mean).unwrap();
        assert_eq!(m.prob()[[5, 5]], 0.5);
    }

    #[test]
    fn period_filter_and_misalignment() {
        let a = composite((0.0, 0.0), 128, 128, "a", |_, _| 0.2);
        assert!(matches!(
            infer_region(&Swir, std::slice::from_ref(&a), &Period::year(2018), &InferOptions::default()),
            Err(TransferError::NoCoverage(_))
        ));
        let b = composite((10.0, 0.0), 128, 128, "b", |_, _| 0.2);
        assert!(matches!(
            infer_region(&Swir, &[a, b], &Period::year(2017), &InferOptions::default()),
            Err(TransferError::GridMismatch(_))
        ));
    }

    #[test]
    fn mosaic_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let a = composite((0.0, 0.0), 130, 140, "a", |r, _| r as f32 / 130.0);
        let m = infer_region(&Swir, &[a], &Period::year(2017), &InferOptions::default()).unwrap();
        let paths = MosaicPaths::new(dir.path(), "m2017");
        write_mosaic(&m, &paths).unwrap();
        assert_eq!(read_mosaic(&paths).unwrap(), m);
    }
}
