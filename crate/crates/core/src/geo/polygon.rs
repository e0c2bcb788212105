use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

use super::{Crs, GeoError};

pub type Ring = Vec<(f64, f64)>;

/// Attribute key carrying the burn date of a label polygon.
pub const FIRE_DATE: &str = "fire_date";

/// A simple polygon (exterior ring minus holes) tagged with its CRS.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Polygon {
    crs: Crs,
    exterior: Ring,
    holes: Vec<Ring>,
    attributes: BTreeMap<String, String>,
}

impl Polygon {
    pub fn new(crs: Crs, exterior: Ring, holes: Vec<Ring>) -> Result<Self, GeoError> {
        check_ring(&exterior, "exterior")?;
        for (i, hole) in holes.iter().enumerate() {
            check_ring(hole, &format!("hole {i}"))?;
            let outside = hole.iter().any(|&(x, y)| !ring_contains(&exterior, x, y) && !on_ring(&exterior, x, y));
            if outside {
                return Err(GeoError::InvalidPolygon(format!("hole {i} extends outside the exterior ring")));
            }
        }
        Ok(Self {
            crs,
            exterior,
            holes,
            attributes: BTreeMap::new(),
        })
    }

    /// Axis-aligned rectangle `[min_x, max_x] x [min_y, max_y]`.
    pub fn rectangle(crs: Crs, min_x: f64, min_y: f64, max_x: f64, max_y: f64) -> Result<Self, GeoError> {
        Self::new(
            crs,
            vec![(min_x, min_y), (max_x, min_y), (max_x, max_y), (min_x, max_y), (min_x, min_y)],
            Vec::new(),
        )
    }

    pub fn with_attribute(mut self, key: impl Into<String>, value: impl Into<String>) -> Self {
        self.attributes.insert(key.into(), value.into());
        self
    }

    pub fn with_fire_date(self, date: NaiveDate) -> Self {
        self.with_attribute(FIRE_DATE, date.format("%Y-%m-%d").to_string())
    }

    pub fn set_attribute(&mut self, key: impl Into<String>, value: impl Into<String>) {
        self.attributes.insert(key.into(), value.into());
    }

    pub fn crs(&self) -> Crs {
        self.crs
    }

    pub fn exterior(&self) -> &Ring {
        &self.exterior
    }

    pub fn holes(&self) -> &[Ring] {
        &self.holes
    }

    pub fn attributes(&self) -> &BTreeMap<String, String> {
        &self.attributes
    }

    pub fn attribute(&self, key: &str) -> Option<&str> {
        self.attributes.get(key).map(String::as_str)
    }

    /// `None` when the attribute is absent; an error when present but unparsable.
    pub fn fire_date(&self) -> Option<Result<NaiveDate, GeoError>> {
        self.attribute(FIRE_DATE).map(|s| {
            NaiveDate::parse_from_str(s.trim(), "%Y-%m-%d")
                .map_err(|_| GeoError::InvalidPolygon(format!("fire_date {s:?} is not YYYY-MM-DD")))
        })
    }

    pub fn rings(&self) -> impl Iterator<Item = &Ring> {
        std::iter::once(&self.exterior).chain(self.holes.iter())
    }

    pub fn bbox(&self) -> (f64, f64, f64, f64) {
        self.exterior.iter().fold(
            (f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY),
            |(a, b, c, d), &(x, y)| (a.min(x), b.min(y), c.max(x), d.max(y)),
        )
    }

    /// Even-odd membership over exterior and holes with half-open edge handling:
    /// an edge spans `[min_y, max_y)` and a crossing counts when it lies strictly to
    /// the right of the point. Axis-aligned rectangles therefore own
    /// `[min_x, max_x) x [min_y, max_y)`.
    pub fn contains(&self, x: f64, y: f64) -> bool {
        self.rings().fold(false, |inside, ring| inside ^ ring_contains(ring, x, y))
    }

    pub fn same_geometry(&self, other: &Polygon) -> bool {
        self.crs == other.crs && self.exterior == other.exterior && self.holes == other.holes
    }
}

fn check_ring(ring: &Ring, what: &str) -> Result<(), GeoError> {
    if ring.len() < 4 {
        return Err(GeoError::InvalidPolygon(format!("{what} ring has {} vertices, need at least 4", ring.len())));
    }
    if ring.first() != ring.last() {
        return Err(GeoError::InvalidPolygon(format!("{what} ring is not closed")));
    }
    if ring.iter().any(|(x, y)| !x.is_finite() || !y.is_finite()) {
        return Err(GeoError::InvalidPolygon(format!("{what} ring has non-finite coordinates")));
    }
    Ok(())
}

/// X coordinate where edge `(xi, yi)-(xj, yj)` meets the horizontal line `y`.
/// Shared by the point test and the scanline rasterizer so both agree bit for bit.
#[inline]
pub(crate) fn edge_crossing(xi: f64, yi: f64, xj: f64, yj: f64, y: f64) -> Option<f64> {
    if (yi > y) != (yj > y) {
        Some((xj - xi) * (y - yi) / (yj - yi) + xi)
    } else {
        None
    }
}

pub(crate) fn ring_contains(ring: &Ring, x: f64, y: f64) -> bool {
    let n = ring.len();
    let mut inside = false;
    let mut j = n - 1;
    for i in 0..n {
        let (xi, yi) = ring[i];
        let (xj, yj) = ring[j];
        if let Some(cx) = edge_crossing(xi, yi, xj, yj, y) {
            if x < cx {
                inside = !inside;
            }
        }
        j = i;
    }
    inside
}

fn on_ring(ring: &Ring, x: f64, y: f64) -> bool {
    ring.windows(2).any(|w| {
        let ((x0, y0), (x1, y1)) = (w[0], w[1]);
        let cross = (x1 - x0) * (y - y0) - (y1 - y0) * (x - x0);
        let scale = (x1 - x0).abs().max((y1 - y0).abs()).max(1.0);
        cross.abs() <= 1e-9 * scale * scale
            && x >= x0.min(x1) - 1e-9
            && x <= x0.max(x1) + 1e-9
            && y >= y0.min(y1) - 1e-9
            && y <= y0.max(y1) + 1e-9
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ring_validation() {
        let crs = Crs(32629);
        assert!(Polygon::new(crs, vec![(0.0, 0.0), (1.0, 0.0), (0.0, 0.0)], vec![]).is_err());
        assert!(Polygon::new(crs, vec![(0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (0.0, 1.0)], vec![]).is_err());
        let sq = Polygon::rectangle(crs, 0.0, 0.0, 10.0, 10.0).unwrap();
        assert!(sq.contains(5.0, 5.0));
        assert!(!sq.contains(15.0, 5.0));
    }

    #[test]
    fn holes_must_be_inside() {
        let crs = Crs(32629);
        let ext = vec![(0.0, 0.0), (10.0, 0.0), (10.0, 10.0), (0.0, 10.0), (0.0, 0.0)];
        let inner = vec![(2.0, 2.0), (4.0, 2.0), (4.0, 4.0), (2.0, 4.0), (2.0, 2.0)];
        let touching = vec![(0.0, 2.0), (4.0, 2.0), (4.0, 4.0), (0.0, 4.0), (0.0, 2.0)];
        let escaping = vec![(8.0, 8.0), (12.0, 8.0), (12.0, 9.0), (8.0, 9.0), (8.0, 8.0)];
        let p = Polygon::new(crs, ext.clone(), vec![inner]).unwrap();
        assert!(!p.contains(3.0, 3.0));
        assert!(p.contains(5.0, 5.0));
        assert!(Polygon::new(crs, ext.clone(), vec![touching]).is_ok());
        assert!(Polygon::new(crs, ext, vec![escaping]).is_err());
    }

    #[test]
    fn half_open_boundary() {
        let sq = Polygon::rectangle(Crs(1), 0.0, 0.0, 10.0, 10.0).unwrap();
        assert!(sq.contains(0.0, 5.0));
        assert!(!sq.contains(10.0, 5.0));
        assert!(sq.contains(5.0, 0.0));
        assert!(!sq.contains(5.0, 10.0));
    }

    #[test]
    fn fire_date_attribute() {
        let p = Polygon::rectangle(Crs(1), 0.0, 0.0, 1.0, 1.0).unwrap();
        assert!(p.fire_date().is_none());
        let d = NaiveDate::from_ymd_opt(2016, 8, 9).unwrap();
        assert_eq!(p.clone().with_fire_date(d).fire_date().unwrap().unwrap(), d);
        assert!(p.with_attribute(FIRE_DATE, "09/08/2016").fire_date().unwrap().is_err());
    }
}
