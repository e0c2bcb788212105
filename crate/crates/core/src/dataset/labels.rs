use chrono::NaiveDate;
use ndarray::{s, Array2, Array3};
use serde::{Deserialize, Serialize};

use crate::geo::{rasterize_polygons, Polygon};
use crate::ingest::CompositeRaster;

use super::windows::{extract_windows, PatchWindow, PATCH_SIZE};
use super::DatasetError;

/// Default label matching window: burns up to 90 days before the acquisition.
pub const DEFAULT_WINDOW_DAYS: i64 = 90;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitTag {
    Train,
    Test,
    Unassigned,
}

/// An input window paired with its burn label.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledPatch {
    pub window: PatchWindow,
    /// `(3, 128, 128)` reflectance in `[B8A, B03, B12]` order.
    pub channels: Array3<f32>,
    pub label: Array2<u8>,
    pub sensing_date: NaiveDate,
    pub burned_fraction: f64,
    pub split: SplitTag,
}

impl LabeledPatch {
    pub fn new(window: PatchWindow, channels: Array3<f32>, label: Array2<u8>, sensing_date: NaiveDate) -> Result<Self, DatasetError> {
        if channels.dim() != (3, PATCH_SIZE, PATCH_SIZE) || label.dim() != (PATCH_SIZE, PATCH_SIZE) {
            return Err(DatasetError::InvalidPatch(format!(
                "channels {:?} / label {:?} are not 3x128x128 / 128x128",
                channels.dim(),
                label.dim()
            )));
        }
        if label.iter().any(|&v| v > 1) {
            return Err(DatasetError::InvalidPatch("label values outside {0, 1}".into()));
        }
        let burned_fraction = burned_fraction(&label);
        Ok(Self {
            window,
            channels,
            label,
            sensing_date,
            burned_fraction,
            split: SplitTag::Unassigned,
        })
    }

    pub fn patch_id(&self) -> String {
        self.window.patch_id()
    }
}

pub(crate) fn burned_fraction(label: &Array2<u8>) -> f64 {
    label.iter().map(|&v| v as usize).sum::<usize>() as f64 / label.len() as f64
}

fn in_time_window(polygon: &Polygon, index: usize, sensing_date: NaiveDate, window_days: i64) -> Result<bool, DatasetError> {
    let fire = polygon
        .fire_date()
        .ok_or(DatasetError::MissingFireDate(index))?
        .map_err(|_| DatasetError::MissingFireDate(index))?;
    let age = (sensing_date - fire).num_days();
    Ok((0..=window_days).contains(&age))
}

/// Polygons whose fire date lies 0..=`window_days` days before the sensing date.
pub fn polygons_in_time_window(polygons: &[Polygon], sensing_date: NaiveDate, window_days: i64) -> Result<Vec<Polygon>, DatasetError> {
    let mut out = Vec::new();
    for (i, p) in polygons.iter().enumerate() {
        if in_time_window(p, i, sensing_date, window_days)? {
            out.push(p.clone());
        }
    }
    Ok(out)
}

/// Rasterizes the date-matched polygons onto the window grid.
pub fn match_labels(window: &PatchWindow, polygons: &[Polygon], sensing_date: NaiveDate, window_days: i64) -> Result<Array2<u8>, DatasetError> {
    let matched = polygons_in_time_window(polygons, sensing_date, window_days)?;
    Ok(rasterize_polygons(&matched, &window.grid)?.into_data())
}

#[derive(Debug, Clone)]
pub struct ExtractOptions {
    pub stride: usize,
    pub window_days: i64,
    /// Patches must have a burned fraction strictly above this.
    pub min_burned_fraction: f64,
    /// Keep unburned patches as well (hand-label stores, diagnostics).
    pub keep_unburned: bool,
}

impl Default for ExtractOptions {
    fn default() -> Self {
        Self {
            stride: PATCH_SIZE,
            window_days: DEFAULT_WINDOW_DAYS,
            min_burned_fraction: 0.0,
            keep_unburned: false,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExtractStats {
    pub windows: usize,
    pub dropped_invalid: usize,
    pub dropped_unburned: usize,
    pub kept: usize,
}

/// Tiles a composite, labels each window and applies the validity and burned filters.
pub fn label_composite(
    composite: &CompositeRaster,
    polygons: &[Polygon],
    options: &ExtractOptions,
) -> Result<(Vec<LabeledPatch>, ExtractStats), DatasetError> {
    let matched = polygons_in_time_window(polygons, composite.sensing_date(), options.window_days)?;
    let scene_labels = rasterize_polygons(&matched, composite.grid())?;
    let windows = extract_windows(composite.grid(), composite.scene_id(), options.stride)?;
    let mut stats = ExtractStats {
        windows: windows.len(),
        ..Default::default()
    };
    let mut patches = Vec::new();
    for window in windows {
        let (r, c) = (window.row_off, window.col_off);
        let rows = r..r + PATCH_SIZE;
        let cols = c..c + PATCH_SIZE;
        let valid = composite.valid_mask().data().slice(s![rows.clone(), cols.clone()]);
        if valid.iter().any(|&v| v == 0) {
            stats.dropped_invalid += 1;
            continue;
        }
        let channels = composite.channels().slice(s![.., rows.clone(), cols.clone()]).to_owned();
        let label = scene_labels.data().slice(s![rows, cols]).to_owned();
        let patch = LabeledPatch::new(window, channels, label, composite.sensing_date())?;
        if !options.keep_unburned && patch.burned_fraction <= options.min_burned_fraction {
            stats.dropped_unburned += 1;
            continue;
        }
        patches.push(patch);
    }
    stats.kept = patches.len();
    if stats.windows > 0 {
        log::info!(
            "{}: {} windows, {} dropped for invalid pixels ({:.1}%), {} unburned, {} kept",
            composite.scene_id(),
            stats.windows,
            stats.dropped_invalid,
            100.0 * stats.dropped_invalid as f64 / stats.windows as f64,
            stats.dropped_unburned,
            stats.kept
        );
    }
    Ok((patches, stats))
}

/// Keeps patches whose burned fraction exceeds `min_burned_fraction` (0 keeps any burned pixel).
pub fn filter_burned(patches: Vec<LabeledPatch>, min_burned_fraction: f64) -> Vec<LabeledPatch> {
    patches.into_iter().filter(|p| p.burned_fraction > min_burned_fraction).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geo::{Crs, GeoTransform, RasterGrid};
    use chrono::Duration;

    fn window() -> PatchWindow {
        let g = RasterGrid::new(Crs(32629), GeoTransform::north_up(0.0, 0.0, 20.0, -20.0), 128, 128).unwrap();
        PatchWindow::new(&g, "s", 0, 0).unwrap()
    }

    fn date() -> NaiveDate {
        NaiveDate::from_ymd_opt(2016, 9, 1).unwrap()
    }

    fn burn(min_x: f64, max_x: f64, days_before: i64) -> Polygon {
        Polygon::rectangle(Crs(32629), min_x, -2560.0, max_x, 0.0)
            .unwrap()
            .with_fire_date(date() - Duration::days(days_before))
    }

    #[test]
    fn day_window_edges() {
        let w = window();
        let full = |d| match_labels(&w, &[burn(0.0, 2560.0, d)], date(), 90).unwrap();
        assert!(full(0).iter().all(|&v| v == 1));
        assert!(full(90).iter().all(|&v| v == 1));
        assert!(full(91).iter().all(|&v| v == 0));
        assert!(full(-1).iter().all(|&v| v == 0), "burns after sensing are invisible");
    }

    #[test]
    fn only_recent_half_is_labelled() {
        let w = window();
        let label = match_labels(&w, &[burn(0.0, 1280.0, 10), burn(1280.0, 2560.0, 100)], date(), 90).unwrap();
        let left = label.slice(s![.., ..64]);
        let right = label.slice(s![.., 64..]);
        assert!(left.iter().all(|&v| v == 1));
        assert!(right.iter().all(|&v| v == 0));
    }

    #[test]
    fn missing_fire_date() {
        let p = Polygon::rectangle(Crs(32629), 0.0, -10.0, 10.0, 0.0).unwrap();
        assert!(matches!(match_labels(&window(), &[p], date(), 90), Err(DatasetError::MissingFireDate(0))));
    }

    #[test]
    fn burned_filter() {
        let w = window();
        let ch = Array3::zeros((3, 128, 128));
        let empty = LabeledPatch::new(w.clone(), ch.clone(), Array2::zeros((128, 128)), date()).unwrap();
        let mut one = Array2::zeros((128, 128));
        one[[5, 5]] = 1;
        let single = LabeledPatch::new(w, ch, one, date()).unwrap();
        assert_eq!(single.burned_fraction, 1.0 / 16384.0);
        let kept = filter_burned(vec![empty, single], 0.0);
        assert_eq!(kept.len(), 1);
        assert_eq!(kept[0].burned_fraction, 1.0 / 16384.0);
    }
}
