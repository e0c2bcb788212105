use serde::{Deserialize, Serialize};
use std::fmt;

use super::GeoError;

/// EPSG code of a coordinate reference system.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Crs(pub u32);

impl Crs {
    /// Geographic (lat/lon) systems occupy the EPSG 4000 block.
    pub fn is_geographic(self) -> bool {
        (4000..5000).contains(&self.0)
    }

    /// Parses `EPSG:32629`, `urn:ogc:def:crs:EPSG::32629` or a bare code.
    pub fn parse(text: &str) -> Option<Self> {
        let digits: String = text
            .rsplit(|c: char| !c.is_ascii_digit())
            .find(|s| !s.is_empty())?
            .to_string();
        let lowered = text.to_ascii_lowercase();
        if !(lowered.contains("epsg") || text.chars().all(|c| c.is_ascii_digit())) {
            return None;
        }
        digits.parse().ok().map(Crs)
    }
}

impl fmt::Display for Crs {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "EPSG:{}", self.0)
    }
}

/// Affine pixel-to-world map in GDAL coefficient order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoTransform {
    pub origin_x: f64,
    pub pixel_width: f64,
    pub row_rotation: f64,
    pub origin_y: f64,
    pub col_rotation: f64,
    pub pixel_height: f64,
}

impl GeoTransform {
    /// North-up transform with no rotation terms.
    pub fn north_up(origin_x: f64, origin_y: f64, pixel_width: f64, pixel_height: f64) -> Self {
        Self {
            origin_x,
            pixel_width,
            row_rotation: 0.0,
            origin_y,
            col_rotation: 0.0,
            pixel_height,
        }
    }

    pub fn is_rotated(&self) -> bool {
        self.row_rotation != 0.0 || self.col_rotation != 0.0
    }

    /// Evaluates the map at fractional pixel coordinates `(col, row)`.
    #[inline]
    pub fn apply(&self, col: f64, row: f64) -> (f64, f64) {
        (
            self.origin_x + col * self.pixel_width + row * self.row_rotation,
            self.origin_y + col * self.col_rotation + row * self.pixel_height,
        )
    }

    pub fn coefficients(&self) -> [f64; 6] {
        [
            self.origin_x,
            self.pixel_width,
            self.row_rotation,
            self.origin_y,
            self.col_rotation,
            self.pixel_height,
        ]
    }
}

/// A georeferenced pixel lattice.
///
/// Pixel `(row, col)` covers the half-open cell
/// `[x0 + col*w, x0 + (col+1)*w) x (y0 + (row+1)*h, y0 + row*h]` for a north-up grid
/// (`h < 0`), so every world point belongs to exactly one pixel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RasterGrid {
    crs: Crs,
    transform: GeoTransform,
    width: usize,
    height: usize,
}

impl RasterGrid {
    pub fn new(crs: Crs, transform: GeoTransform, width: usize, height: usize) -> Result<Self, GeoError> {
        if width == 0 || height == 0 {
            return Err(GeoError::InvalidGrid(format!("empty grid {width}x{height}")));
        }
        if transform.pixel_width == 0.0 || transform.pixel_height == 0.0 {
            return Err(GeoError::InvalidGrid("zero pixel size".into()));
        }
        if !transform.coefficients().iter().all(|v| v.is_finite()) {
            return Err(GeoError::InvalidGrid("non-finite transform coefficient".into()));
        }
        Ok(Self {
            crs,
            transform,
            width,
            height,
        })
    }

    pub fn crs(&self) -> Crs {
        self.crs
    }

    pub fn transform(&self) -> &GeoTransform {
        &self.transform
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    /// `(height, width)`, the ndarray shape of any raster on this grid.
    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn pixel_size(&self) -> (f64, f64) {
        (self.transform.pixel_width, self.transform.pixel_height)
    }

    /// Ground area of one pixel in square kilometres (projected metre grids).
    pub fn pixel_area_km2(&self) -> f64 {
        (self.transform.pixel_width * self.transform.pixel_height).abs() / 1.0e6
    }

    /// World coordinates of the pixel centre. Out-of-range indices are allowed.
    #[inline]
    pub fn pixel_to_world(&self, row: i64, col: i64) -> (f64, f64) {
        self.transform.apply(col as f64 + 0.5, row as f64 + 0.5)
    }

    /// Pixel containing the world point, floored. Indices may fall outside the grid.
    pub fn world_to_pixel(&self, x: f64, y: f64) -> Result<(i64, i64), GeoError> {
        if self.transform.is_rotated() {
            return Err(GeoError::RotatedGridUnsupported);
        }
        let t = &self.transform;
        let col = ((x - t.origin_x) / t.pixel_width).floor();
        let row = ((y - t.origin_y) / t.pixel_height).floor();
        Ok((row as i64, col as i64))
    }

    pub fn contains_pixel(&self, row: i64, col: i64) -> bool {
        row >= 0 && col >= 0 && (row as usize) < self.height && (col as usize) < self.width
    }

    /// Sub-grid starting at pixel `(row_off, col_off)` with the same pixel size.
    pub fn window(&self, row_off: usize, col_off: usize, height: usize, width: usize) -> Result<Self, GeoError> {
        let (x, y) = self.transform.apply(col_off as f64, row_off as f64);
        let transform = GeoTransform {
            origin_x: x,
            origin_y: y,
            ..self.transform
        };
        Self::new(self.crs, transform, width, height)
    }

    /// Same lattice with a different pixel size, anchored at the same origin.
    pub fn with_resolution(&self, pixel_width: f64, pixel_height: f64, width: usize, height: usize) -> Result<Self, GeoError> {
        let transform = GeoTransform {
            pixel_width,
            pixel_height,
            ..self.transform
        };
        Self::new(self.crs, transform, width, height)
    }

    /// Axis-aligned world extent `(min_x, min_y, max_x, max_y)`.
    pub fn extent(&self) -> (f64, f64, f64, f64) {
        let corners = [
            self.transform.apply(0.0, 0.0),
            self.transform.apply(self.width as f64, 0.0),
            self.transform.apply(0.0, self.height as f64),
            self.transform.apply(self.width as f64, self.height as f64),
        ];
        corners.iter().fold(
            (f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY),
            |(a, b, c, d), &(x, y)| (a.min(x), b.min(y), c.max(x), d.max(y)),
        )
    }

    pub fn ensure_crs(&self, other: Crs) -> Result<(), GeoError> {
        if self.crs != other {
            return Err(GeoError::CrsMismatch {
                expected: self.crs,
                found: other,
            });
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(ox: f64, oy: f64) -> RasterGrid {
        RasterGrid::new(Crs(32629), GeoTransform::north_up(ox, oy, 20.0, -20.0), 100, 100).unwrap()
    }

    #[test]
    fn pixel_centres() {
        assert_eq!(grid(0.0, 0.0).pixel_to_world(0, 0), (10.0, -10.0));
        assert_eq!(grid(600000.0, 4400000.0).pixel_to_world(1, 2), (600050.0, 4399970.0));
        let g = grid(600000.0, 4400000.0);
        let (x, y) = g.pixel_to_world(5, 7);
        assert_eq!(g.world_to_pixel(x, y).unwrap(), (5, 7));
    }

    #[test]
    fn floor_semantics() {
        let g = grid(0.0, 0.0);
        assert_eq!(g.world_to_pixel(10.0, -10.0).unwrap(), (0, 0));
        assert_eq!(g.world_to_pixel(39.99, -0.01).unwrap(), (0, 1));
        assert_eq!(g.world_to_pixel(0.0, 0.0).unwrap(), (0, 0));
        assert_eq!(g.world_to_pixel(20.0, -20.0).unwrap(), (1, 1));
        assert_eq!(g.world_to_pixel(-0.5, 0.5).unwrap(), (-1, -1));
    }

    #[test]
    fn rejects_bad_grids() {
        let t = GeoTransform::north_up(0.0, 0.0, 20.0, -20.0);
        assert!(RasterGrid::new(Crs(1), t, 0, 4).is_err());
        assert!(RasterGrid::new(Crs(1), GeoTransform::north_up(0.0, 0.0, 0.0, -20.0), 4, 4).is_err());
        let rotated = GeoTransform {
            row_rotation: 0.1,
            ..t
        };
        let g = RasterGrid::new(Crs(1), rotated, 4, 4).unwrap();
        assert!(matches!(g.world_to_pixel(1.0, 1.0), Err(GeoError::RotatedGridUnsupported)));
    }

    #[test]
    fn crs_parsing() {
        assert_eq!(Crs::parse("EPSG:32629"), Some(Crs(32629)));
        assert_eq!(Crs::parse("urn:ogc:def:crs:EPSG::32636"), Some(Crs(32636)));
        assert_eq!(Crs::parse("4326"), Some(Crs(4326)));
        assert_eq!(Crs::parse("WGS 84"), None);
    }

    #[test]
    fn window_origin() {
        let g = grid(100.0, 200.0);
        let w = g.window(2, 3, 10, 10).unwrap();
        assert_eq!(w.pixel_to_world(0, 0), g.pixel_to_world(2, 3));
    }
}
