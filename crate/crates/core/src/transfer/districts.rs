use std::path::Path;

use serde::{Deserialize, Serialize};

use super::TransferError;
use crate::geo::vector_io::load_geojson;
use crate::geo::{Crs, Polygon};

/// Settlement establishment as written in settlement tables: a year, a month
/// (`MM/YYYY`) or a span of years (`YYYY-YYYY`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Established {
    Year(i32),
    Month { year: i32, month: u32 },
    Range { from: i32, to: i32 },
}

impl Established {
    pub fn parse(text: &str) -> Option<Self> {
        let t = text.trim();
        let year = |s: &str| -> Option<i32> { (s.len() == 4 && s.bytes().all(|b| b.is_ascii_digit())).then(|| s.parse().ok())? };
        if let Some((m, y)) = t.split_once('/') {
            let month: u32 = m.parse().ok()?;
            return (1..=12).contains(&month).then_some(Self::Month { year: year(y)?, month });
        }
        if let Some((a, b)) = t.split_once('-') {
            let (from, to) = (year(a)?, year(b)?);
            return (from <= to).then_some(Self::Range { from, to });
        }
        Some(Self::Year(year(t)?))
    }

    /// Earliest year covered.
    pub fn first_year(&self) -> i32 {
        match *self {
            Self::Year(y) | Self::Month { year: y, .. } | Self::Range { from: y, .. } => y,
        }
    }
}

impl std::fmt::Display for Established {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Year(y) => write!(f, "{y}"),
            Self::Month { year, month } => write!(f, "{month:02}/{year}"),
            Self::Range { from, to } => write!(f, "{from}-{to}"),
        }
    }
}

/// One refugee settlement and the district that hosts it.
#[derive(Debug, Clone, PartialEq)]
pub struct DistrictConfig {
    pub district_name: String,
    pub settlement_name: String,
    pub established: Established,
    pub total_refugees: u64,
    pub boundary: Polygon,
}

fn parse_count(text: &str) -> Option<u64> {
    let digits: String = text.chars().filter(|c| *c != ',' && !c.is_whitespace()).collect();
    digits.parse::<u64>().ok().or_else(|| {
        let v: f64 = digits.parse().ok()?;
        (v >= 0.0 && v.fract() == 0.0).then_some(v as u64)
    })
}

impl DistrictConfig {
    /// Reads `district`, `settlement`, `established` and `total_refugees` attributes.
    pub fn from_polygon(boundary: Polygon) -> Result<Self, String> {
        let get = |k: &str| boundary.attribute(k).map(str::to_string).ok_or_else(|| format!("missing property {k:?}"));
        let district_name = get("district")?;
        let settlement_name = get("settlement")?;
        let est = get("established")?;
        let established = Established::parse(&est).ok_or_else(|| format!("unparseable established value {est:?}"))?;
        let count = get("total_refugees")?;
        let total_refugees = parse_count(&count).ok_or_else(|| format!("unparseable total_refugees value {count:?}"))?;
        Ok(Self {
            district_name,
            settlement_name,
            established,
            total_refugees,
            boundary,
        })
    }
}

/// Loads a district/settlement GeoJSON FeatureCollection.
pub fn load_districts(path: &Path, crs: Option<Crs>) -> Result<Vec<DistrictConfig>, TransferError> {
    load_geojson(path, crs)?
        .into_iter()
        .enumerate()
        .map(|(i, p)| DistrictConfig::from_polygon(p).map_err(|m| TransferError::InvalidDistrict(format!("{} feature {i}: {m}", path.display()))))
        .collect()
}
