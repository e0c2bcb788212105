use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{DistrictConfig, RegionMosaic, TransferError};
use crate::geo::{zonal_stats, Polygon};

/// Zone name of the whole-region row emitted for every period.
pub const REGION_CONTROL: &str = "REGION_CONTROL";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesRow {
    pub zone_name: String,
    pub period: String,
    pub burned_fraction: f64,
    pub burned_area_km2: f64,
    pub n_valid_pixels: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistrictSeries {
    /// Sorted by `(period, zone_name)`.
    pub rows: Vec<SeriesRow>,
}

impl DistrictSeries {
    pub fn row(&self, zone: &str, period: &str) -> Option<&SeriesRow> {
        self.rows.iter().find(|r| r.zone_name == zone && r.period == period)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("zone_name,period,burned_fraction,burned_area_km2,n_valid_pixels\n");
        for r in &self.rows {
            let _ = writeln!(out, "{},{},{},{},{}", csv_field(&r.zone_name), r.period, r.burned_fraction, r.burned_area_km2, r.n_valid_pixels);
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<(), TransferError> {
        std::fs::write(path, self.to_csv()).map_err(|e| TransferError::io(path, e))
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// One zone per distinct district name. Several settlements may share a district,
/// in which case their boundaries must be identical.
fn district_zones(districts: &[DistrictConfig]) -> Result<BTreeMap<&str, &Polygon>, TransferError> {
    let mut zones: BTreeMap<&str, &Polygon> = BTreeMap::new();
    for d in districts {
        if d.district_name == REGION_CONTROL {
            return Err(TransferError::InvalidDistrict(format!("{REGION_CONTROL} is a reserved zone name")));
        }
        match zones.get(d.district_name.as_str()) {
            Some(existing) if !existing.same_geometry(&d.boundary) => {
                return Err(TransferError::InvalidDistrict(format!(
                    "district {:?} appears with two different boundaries",
                    d.district_name
                )))
            }
            Some(_) => {}
            None => {
                zones.insert(&d.district_name, &d.boundary);
            }
        }
    }
    Ok(zones)
}

/// Burned fraction and area per district and per period, plus a
/// [`REGION_CONTROL`] row for the whole region. Only valid mosaic pixels count.
pub fn build_series(mosaics: &[RegionMosaic], districts: &[DistrictConfig], region: &Polygon) -> Result<DistrictSeries, TransferError> {
    let zones = district_zones(districts)?;
    let mut by_period: BTreeMap<&str, &RegionMosaic> = BTreeMap::new();
    for m in mosaics {
        if by_period.insert(&m.period().label, m).is_some() {
            return Err(TransferError::DuplicatePeriod(m.period().label.clone()));
        }
    }
    let mut rows = Vec::new();
    for (period, mosaic) in by_period {
        let area = mosaic.grid().pixel_area_km2();
        let mut period_rows: Vec<SeriesRow> = Vec::with_capacity(zones.len() + 1);
        let all = zones.iter().map(|(n, p)| (*n, *p)).chain(std::iter::once((REGION_CONTROL, region)));
        for (name, zone) in all {
            mosaic.grid().ensure_crs(zone.crs())?;
            let stats = zonal_stats(mosaic.burned(), Some(mosaic.valid()), zone)?;
            period_rows.push(SeriesRow {
                zone_name: name.to_string(),
                period: period.to_string(),
                burned_fraction: stats.fraction,
                burned_area_km2: stats.fraction * stats.zone_pixels as f64 * area,
                n_valid_pixels: stats.zone_pixels,
            });
        }
        period_rows.sort_by(|a, b| a.zone_name.cmp(&b.zone_name));
        rows.extend(period_rows);
    }
    Ok(DistrictSeries { rows })
}
