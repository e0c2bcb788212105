use ndarray::Array2;

use super::{GeoError, RasterGrid};

/// A {0, 1} raster aligned to a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct BinaryMask {
    grid: RasterGrid,
    data: Array2<u8>,
}

impl BinaryMask {
    pub fn new(grid: RasterGrid, data: Array2<u8>) -> Result<Self, GeoError> {
        if data.dim() != grid.shape() {
            return Err(GeoError::ShapeMismatch {
                expected: grid.shape(),
                found: data.dim(),
            });
        }
        if let Some(v) = data.iter().find(|&&v| v > 1) {
            return Err(GeoError::InvalidMask(format!("value {v} outside {{0, 1}}")));
        }
        Ok(Self { grid, data })
    }

    pub fn zeros(grid: RasterGrid) -> Self {
        let data = Array2::zeros(grid.shape());
        Self { grid, data }
    }

    pub fn ones(grid: RasterGrid) -> Self {
        let data = Array2::ones(grid.shape());
        Self { grid, data }
    }

    pub fn grid(&self) -> &RasterGrid {
        &self.grid
    }

    pub fn data(&self) -> &Array2<u8> {
        &self.data
    }

    pub fn into_data(self) -> Array2<u8> {
        self.data
    }

    pub fn count_ones(&self) -> usize {
        self.data.iter().filter(|&&v| v == 1).count()
    }

    pub fn fraction(&self) -> f64 {
        self.count_ones() as f64 / self.data.len() as f64
    }

    /// Elementwise OR; both masks must share a grid.
    pub fn union(&self, other: &BinaryMask) -> Result<BinaryMask, GeoError> {
        if self.grid != other.grid {
            return Err(GeoError::GridMismatch);
        }
        let data = ndarray::Zip::from(&self.data).and(&other.data).map_collect(|&a, &b| a | b);
        Ok(Self {
            grid: self.grid.clone(),
            data,
        })
    }

    pub(crate) fn data_mut(&mut self) -> &mut Array2<u8> {
        &mut self.data
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geo::{Crs, GeoTransform};

    #[test]
    fn rejects_non_binary_and_bad_shape() {
        let g = RasterGrid::new(Crs(1), GeoTransform::north_up(0.0, 0.0, 1.0, -1.0), 3, 2).unwrap();
        assert!(BinaryMask::new(g.clone(), Array2::from_elem((2, 3), 2)).is_err());
        assert!(BinaryMask::new(g.clone(), Array2::zeros((3, 2))).is_err());
        let m = BinaryMask::new(g, Array2::from_shape_vec((2, 3), vec![0, 1, 1, 0, 0, 1]).unwrap()).unwrap();
        assert_eq!(m.count_ones(), 3);
        assert_eq!(m.fraction(), 0.5);
    }
}
