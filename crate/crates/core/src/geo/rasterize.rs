use super::polygon::edge_crossing;
use super::{BinaryMask, GeoError, Polygon, RasterGrid};

/// Burns polygons into a mask: a pixel is set when its centre lies inside any polygon.
///
/// Membership is decided per row with a scanline over the even-odd crossings of every
/// ring, using the same half-open edge rule as [`Polygon::contains`]. Label masks are
/// therefore approximations of the polygon outline to within half a pixel.
pub fn rasterize_polygons(polygons: &[Polygon], grid: &RasterGrid) -> Result<BinaryMask, GeoError> {
    let mut mask = BinaryMask::zeros(grid.clone());
    for polygon in polygons {
        grid.ensure_crs(polygon.crs())?;
    }
    if grid.transform().is_rotated() {
        return Err(GeoError::RotatedGridUnsupported);
    }
    let data = mask.data_mut();
    let mut crossings = Vec::new();
    for polygon in polygons {
        let Some((rows, cols)) = pixel_span(polygon, grid) else {
            continue;
        };
        for row in rows {
            let (_, cy) = grid.pixel_to_world(row as i64, 0);
            crossings.clear();
            for ring in polygon.rings() {
                let n = ring.len();
                let mut j = n - 1;
                for i in 0..n {
                    let (xi, yi) = ring[i];
                    let (xj, yj) = ring[j];
                    if let Some(x) = edge_crossing(xi, yi, xj, yj, cy) {
                        crossings.push(x);
                    }
                    j = i;
                }
            }
            if crossings.is_empty() {
                continue;
            }
            crossings.sort_by(f64::total_cmp);
            for col in cols.clone() {
                let (cx, _) = grid.pixel_to_world(row as i64, col as i64);
                // Parity of crossings strictly right of the centre.
                let right = crossings.len() - crossings.partition_point(|&x| x <= cx);
                if right % 2 == 1 {
                    data[[row, col]] = 1;
                }
            }
        }
    }
    Ok(mask)
}

/// Row and column ranges whose pixel centres can fall inside the polygon bbox.
fn pixel_span(polygon: &Polygon, grid: &RasterGrid) -> Option<(std::ops::Range<usize>, std::ops::Range<usize>)> {
    let (min_x, min_y, max_x, max_y) = polygon.bbox();
    let t = grid.transform();
    let to_index = |a: f64, b: f64, origin: f64, step: f64, len: usize| {
        let fa = (a - origin) / step - 0.5;
        let fb = (b - origin) / step - 0.5;
        let lo = fa.min(fb).floor() - 1.0;
        let hi = fa.max(fb).ceil() + 2.0;
        let lo = lo.max(0.0).min(len as f64) as usize;
        let hi = hi.max(0.0).min(len as f64) as usize;
        (lo < hi).then_some(lo..hi)
    };
    let cols = to_index(min_x, max_x, t.origin_x, t.pixel_width, grid.width())?;
    let rows = to_index(min_y, max_y, t.origin_y, t.pixel_height, grid.height())?;
    Some((rows, cols))
}

/// Result of aggregating a mask over a zone.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ZonalStats {
    /// Burned share of the counted zone pixels, 0 when the zone is empty.
    pub fraction: f64,
    pub zone_pixels: usize,
    pub burned_pixels: usize,
    /// Set when no (valid) pixel centre falls inside the zone.
    pub zero_zone: bool,
}

/// Share of the pixels whose centres fall in `zone` that are set in `mask`.
pub fn zonal_fraction(mask: &BinaryMask, zone: &Polygon) -> Result<ZonalStats, GeoError> {
    zonal_stats(mask, None, zone)
}

/// Like [`zonal_fraction`], restricted to pixels set in `valid`.
pub fn zonal_stats(mask: &BinaryMask, valid: Option<&BinaryMask>, zone: &Polygon) -> Result<ZonalStats, GeoError> {
    if let Some(v) = valid {
        if v.grid() != mask.grid() {
            return Err(GeoError::GridMismatch);
        }
    }
    let footprint = rasterize_polygons(std::slice::from_ref(zone), mask.grid())?;
    let mut zone_pixels = 0usize;
    let mut burned_pixels = 0usize;
    for ((idx, &inside), &m) in footprint.data().indexed_iter().zip(mask.data().iter()) {
        if inside == 0 || valid.is_some_and(|v| v.data()[idx] == 0) {
            continue;
        }
        zone_pixels += 1;
        burned_pixels += m as usize;
    }
    if zone_pixels == 0 {
        log::warn!("zone contains no pixel centres; reporting a burned fraction of 0");
    }
    Ok(ZonalStats {
        fraction: if zone_pixels == 0 {
            0.0
        } else {
            burned_pixels as f64 / zone_pixels as f64
        },
        zone_pixels,
        burned_pixels,
        zero_zone: zone_pixels == 0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geo::{Crs, GeoTransform};
    use ndarray::Array2;

    fn grid4() -> RasterGrid {
        RasterGrid::new(Crs(32629), GeoTransform::north_up(0.0, 0.0, 20.0, -20.0), 4, 4).unwrap()
    }

    #[test]
    fn empty_and_full() {
        let g = grid4();
        assert_eq!(rasterize_polygons(&[], &g).unwrap().count_ones(), 0);
        let full = Polygon::rectangle(g.crs(), 0.0, -80.0, 80.0, 0.0).unwrap();
        assert_eq!(rasterize_polygons(&[full], &g).unwrap().count_ones(), 16);
    }

    #[test]
    fn aligned_square_sets_four_pixels() {
        let g = grid4();
        let sq = Polygon::rectangle(g.crs(), 0.0, -40.0, 40.0, 0.0).unwrap();
        let mask = rasterize_polygons(&[sq], &g).unwrap();
        let mut expected = Array2::<u8>::zeros((4, 4));
        for (r, c) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
            expected[[r, c]] = 1;
        }
        assert_eq!(mask.data(), &expected);
        let zone = Polygon::rectangle(g.crs(), 0.0, -80.0, 80.0, 0.0).unwrap();
        let stats = zonal_fraction(&mask, &zone).unwrap();
        assert_eq!(stats.fraction, 0.25);
        assert_eq!((stats.zone_pixels, stats.burned_pixels), (16, 4));
    }

    #[test]
    fn crs_mismatch() {
        let g = grid4();
        let p = Polygon::rectangle(Crs(4326), 0.0, 0.0, 1.0, 1.0).unwrap();
        assert!(matches!(rasterize_polygons(std::slice::from_ref(&p), &g), Err(GeoError::CrsMismatch { .. })));
        assert!(matches!(zonal_fraction(&BinaryMask::zeros(g), &p), Err(GeoError::CrsMismatch { .. })));
    }

    #[test]
    fn zero_zone_warning() {
        let g = grid4();
        let tiny = Polygon::rectangle(g.crs(), 1.0, -2.0, 2.0, -1.0).unwrap();
        let stats = zonal_fraction(&BinaryMask::ones(g), &tiny).unwrap();
        assert!(stats.zero_zone);
        assert_eq!(stats.fraction, 0.0);
    }

    #[test]
    fn constant_masks() {
        let g = grid4();
        let zone = Polygon::rectangle(g.crs(), 0.0, -80.0, 80.0, 0.0).unwrap();
        assert_eq!(zonal_fraction(&BinaryMask::ones(g.clone()), &zone).unwrap().fraction, 1.0);
        assert_eq!(zonal_fraction(&BinaryMask::zeros(g), &zone).unwrap().fraction, 0.0);
    }

    #[test]
    fn polygon_with_hole() {
        let g = grid4();
        let ext = vec![(0.0, 0.0), (80.0, 0.0), (80.0, -80.0), (0.0, -80.0), (0.0, 0.0)];
        let hole = vec![(20.0, -20.0), (60.0, -20.0), (60.0, -60.0), (20.0, -60.0), (20.0, -20.0)];
        let p = Polygon::new(g.crs(), ext, vec![hole]).unwrap();
        let m = rasterize_polygons(&[p], &g).unwrap();
        assert_eq!(m.count_ones(), 12);
        assert_eq!(m.data()[[1, 1]], 0);
        assert_eq!(m.data()[[2, 2]], 0);
    }
}
