//! Deterministic fixtures shared by the benchmarks.

use burnscan::dataset::{generate_synthetic_scene, SyntheticSceneSpec};
use burnscan::geo::{rasterize_polygons, Polygon};
use burnscan::ingest::CompositeRaster;
use ndarray::Array2;

pub fn scene(size: usize, burns: usize, seed: u64) -> (CompositeRaster, Vec<Polygon>) {
    generate_synthetic_scene(&SyntheticSceneSpec::new(size, burns, seed)).expect("valid synthetic spec")
}

/// Ground truth of a scene and the same mask shifted by a few pixels, as a
/// stand-in prediction.
pub fn mask_pair(size: usize) -> (Array2<u8>, Array2<u8>) {
    let (composite, burns) = scene(size, 12, 3);
    let truth = rasterize_polygons(&burns, composite.grid()).expect("same crs").into_data();
    let mut shifted = Array2::zeros(truth.dim());
    shifted.slice_mut(ndarray::s![3.., 2..]).assign(&truth.slice(ndarray::s![..size - 3, ..size - 2]));
    (shifted, truth)
}
