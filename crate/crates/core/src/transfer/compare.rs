use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{RegionMosaic, TransferError};
use crate::geo::BinaryMask;

/// 2x2 agreement table between the mosaic and a reference burned-area mask,
/// counted on the mosaic grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub period: String,
    pub agree_burned: usize,
    pub ours_only: usize,
    pub reference_only: usize,
    pub agree_unburned: usize,
    pub total_pixels: usize,
    pub pixel_area_km2: f64,
    pub agree_burned_km2: f64,
    pub ours_only_km2: f64,
    pub reference_only_km2: f64,
    pub agree_unburned_km2: f64,
    pub reference_pixel_size: (f64, f64),
    pub resampling: String,
}

impl ComparisonReport {
    pub fn write_json(&self, path: &Path) -> Result<(), TransferError> {
        let text = serde_json::to_string_pretty(self).expect("report serialises");
        std::fs::write(path, text).map_err(|e| TransferError::io(path, e))
    }
}

/// Looks up the reference pixel under each mosaic pixel centre (nearest
/// neighbour). Pixels count when the mosaic is valid there and the reference
/// covers them with a valid value.
pub fn compare_reference(mosaic: &RegionMosaic, reference: &BinaryMask, reference_valid: Option<&BinaryMask>) -> Result<ComparisonReport, TransferError> {
    let grid = mosaic.grid();
    let rgrid = reference.grid();
    rgrid.ensure_crs(grid.crs())?;
    if let Some(v) = reference_valid {
        if v.grid() != rgrid {
            return Err(crate::geo::GeoError::GridMismatch.into());
        }
    }
    let (h, w) = grid.shape();
    let (mut tp, mut fp, mut fneg, mut tn) = (0usize, 0usize, 0usize, 0usize);
    let burned = mosaic.burned().data();
    let valid = mosaic.valid().data();
    for r in 0..h {
        for c in 0..w {
            if valid[[r, c]] == 0 {
                continue;
            }
            let (x, y) = grid.pixel_to_world(r as i64, c as i64);
            let (rr, rc) = rgrid.world_to_pixel(x, y)?;
            if !rgrid.contains_pixel(rr, rc) {
                continue;
            }
            let idx = [rr as usize, rc as usize];
            if reference_valid.is_some_and(|v| v.data()[idx] == 0) {
                continue;
            }
            match (burned[[r, c]] != 0, reference.data()[idx] != 0) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fneg += 1,
                (false, false) => tn += 1,
            }
        }
    }
    let total = tp + fp + fneg + tn;
    if total == 0 {
        return Err(TransferError::NoOverlap);
    }
    let a = grid.pixel_area_km2();
    Ok(ComparisonReport {
        period: mosaic.period().label.clone(),
        agree_burned: tp,
        ours_only: fp,
        reference_only: fneg,
        agree_unburned: tn,
        total_pixels: total,
        pixel_area_km2: a,
        agree_burned_km2: tp as f64 * a,
        ours_only_km2: fp as f64 * a,
        reference_only_km2: fneg as f64 * a,
        agree_unburned_km2: tn as f64 * a,
        reference_pixel_size: rgrid.pixel_size(),
        resampling: "nearest".into(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geo::{Crs, GeoTransform, RasterGrid};
    use crate::transfer::Period;
    use ndarray::Array2;

    fn mosaic() -> RegionMosaic {
        let g = RasterGrid::new(Crs(32636), GeoTransform::north_up(0.0, 1000.0, 20.0, -20.0), 50, 50).unwrap();
        let data = Array2::from_shape_fn((50, 50), |(r, c)| u8::from(r < 25 && c < 10));
        RegionMosaic::from_mask(&BinaryMask::new(g, data).unwrap(), None, Period::year(2019)).unwrap()
    }

    fn reference(value: u8) -> BinaryMask {
        let g = RasterGrid::new(Crs(32636), GeoTransform::north_up(0.0, 1000.0, 500.0, -500.0), 2, 2).unwrap();
        BinaryMask::new(g, Array2::from_elem((2, 2), value)).unwrap()
    }

    #[test]
    fn all_zero_reference() {
        let m = mosaic();
        let r = compare_reference(&m, &reference(0), None).unwrap();
        assert_eq!(r.ours_only, m.burned().count_ones());
        assert_eq!(r.agree_burned, 0);
        assert_eq!(r.agree_burned + r.ours_only + r.reference_only + r.agree_unburned, 2500);
    }

    #[test]
    fn nearest_neighbour_quadrants() {
        // Reference burned only in its top-left 500 m cell = mosaic rows/cols 0..25.
        let mut refm = reference(0).into_data();
        refm[[0, 0]] = 1;
        let refm = BinaryMask::new(reference(0).grid().clone(), refm).unwrap();
        let r = compare_reference(&mosaic(), &refm, None).unwrap();
        assert_eq!((r.agree_burned, r.ours_only, r.reference_only, r.agree_unburned), (250, 0, 375, 1875));
    }

    #[test]
    fn disjoint_extent_and_crs() {
        let far = RasterGrid::new(Crs(32636), GeoTransform::north_up(1e6, 1000.0, 500.0, -500.0), 2, 2).unwrap();
        assert!(matches!(compare_reference(&mosaic(), &BinaryMask::zeros(far), None), Err(TransferError::NoOverlap)));
        let other = RasterGrid::new(Crs(4326), GeoTransform::north_up(0.0, 1000.0, 500.0, -500.0), 2, 2).unwrap();
        assert!(compare_reference(&mosaic(), &BinaryMask::zeros(other), None).is_err());
    }
}
