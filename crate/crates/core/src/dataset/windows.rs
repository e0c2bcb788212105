use serde::{Deserialize, Serialize};

use crate::geo::RasterGrid;

use super::DatasetError;

/// Side length of every model patch, in pixels.
pub const PATCH_SIZE: usize = 128;

/// A 128x128 window into a composite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatchWindow {
    pub scene_id: String,
    pub row_off: usize,
    pub col_off: usize,
    pub grid: RasterGrid,
}

impl PatchWindow {
    pub fn new(parent: &RasterGrid, scene_id: &str, row_off: usize, col_off: usize) -> Result<Self, DatasetError> {
        if row_off + PATCH_SIZE > parent.height() || col_off + PATCH_SIZE > parent.width() {
            return Err(DatasetError::WindowOutOfBounds { row_off, col_off });
        }
        let grid = parent.window(row_off, col_off, PATCH_SIZE, PATCH_SIZE)?;
        Ok(Self {
            scene_id: scene_id.to_string(),
            row_off,
            col_off,
            grid,
        })
    }

    pub fn size(&self) -> usize {
        PATCH_SIZE
    }

    pub fn patch_id(&self) -> String {
        format!("{}_r{:05}_c{:05}", self.scene_id, self.row_off, self.col_off)
    }
}

pub(crate) fn window_offsets(len: usize, stride: usize, edge_aligned: bool) -> Vec<usize> {
    if len < PATCH_SIZE {
        return Vec::new();
    }
    let last = len - PATCH_SIZE;
    let mut out: Vec<usize> = (0..=last).step_by(stride).collect();
    if edge_aligned && out.last() != Some(&last) {
        out.push(last);
    }
    out
}

/// Regular tiling from the top-left corner; windows overflowing an edge are dropped.
pub fn extract_windows(grid: &RasterGrid, scene_id: &str, stride: usize) -> Result<Vec<PatchWindow>, DatasetError> {
    tile(grid, scene_id, stride, false)
}

/// Tiling plus windows flush with the right and bottom edges, so every pixel is covered
/// whenever the raster is at least one patch in each direction.
pub fn covering_windows(grid: &RasterGrid, scene_id: &str, stride: usize) -> Result<Vec<PatchWindow>, DatasetError> {
    tile(grid, scene_id, stride, true)
}

fn tile(grid: &RasterGrid, scene_id: &str, stride: usize, edge_aligned: bool) -> Result<Vec<PatchWindow>, DatasetError> {
    if stride == 0 {
        return Err(DatasetError::InvalidStride);
    }
    let rows = window_offsets(grid.height(), stride, edge_aligned);
    let cols = window_offsets(grid.width(), stride, edge_aligned);
    let mut out = Vec::with_capacity(rows.len() * cols.len());
    for &r in &rows {
        for &c in &cols {
            out.push(PatchWindow::new(grid, scene_id, r, c)?);
        }
    }
    Ok(out)
}
