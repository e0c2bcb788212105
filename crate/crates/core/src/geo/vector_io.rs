//! Polygon loading from GeoJSON and ESRI Shapefile, and GeoJSON writing.
//!
//! Neither format is trusted to imply a CRS. GeoJSON files must carry the legacy
//! `crs` member (`{"type": "name", "properties": {"name": "EPSG:32629"}}`) and
//! shapefiles an EPSG `AUTHORITY` in their `.prj`, unless the caller passes the CRS
//! explicitly. A declared CRS that disagrees with the caller's is an error.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use geojson::{GeoJson, Value};
use serde_json::{json, Map, Value as Json};

use super::{Crs, GeoError, Polygon, Ring};

/// Loads polygons from a `.geojson`/`.json` or `.shp` path.
pub fn load_polygons(path: &Path, crs: Option<Crs>) -> Result<Vec<Polygon>, GeoError> {
    match path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref() {
        Some("shp") => load_shapefile(path, crs),
        _ => load_geojson(path, crs),
    }
}

pub fn load_geojson(path: &Path, crs: Option<Crs>) -> Result<Vec<Polygon>, GeoError> {
    let text = fs::read_to_string(path).map_err(|e| GeoError::io(path, e))?;
    let parsed: GeoJson = text.parse().map_err(|e: geojson::Error| GeoError::VectorFormat {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    let (features, foreign) = match parsed {
        GeoJson::FeatureCollection(fc) => (fc.features, fc.foreign_members),
        GeoJson::Feature(f) => (vec![f], None),
        GeoJson::Geometry(g) => (
            vec![geojson::Feature {
                bbox: None,
                geometry: Some(g),
                id: None,
                properties: None,
                foreign_members: None,
            }],
            None,
        ),
    };
    let declared = foreign
        .as_ref()
        .and_then(|m| m.get("crs"))
        .and_then(|c| c.pointer("/properties/name"))
        .and_then(Json::as_str)
        .map(|name| {
            Crs::parse(name).ok_or_else(|| GeoError::VectorFormat {
                path: path.to_path_buf(),
                message: format!("unrecognised crs name {name:?}"),
            })
        })
        .transpose()?;
    let crs = resolve_crs(path, declared, crs)?;

    let mut out = Vec::new();
    for (index, feature) in features.into_iter().enumerate() {
        let attributes = feature
            .properties
            .as_ref()
            .map(|props| props.iter().filter_map(|(k, v)| json_scalar(v).map(|s| (k.clone(), s))).collect())
            .unwrap_or_default();
        let Some(geometry) = feature.geometry else {
            continue;
        };
        let parts = match geometry.value {
            Value::Polygon(rings) => vec![rings],
            Value::MultiPolygon(polys) => polys,
            other => {
                return Err(GeoError::VectorFormat {
                    path: path.to_path_buf(),
                    message: format!("feature {index}: unsupported geometry {}", other.type_name()),
                })
            }
        };
        for rings in parts {
            let polygon = polygon_from_rings(crs, rings, &attributes)
                .map_err(|e| GeoError::VectorFormat {
                    path: path.to_path_buf(),
                    message: format!("feature {index}: {e}"),
                })?;
            out.push(polygon);
        }
    }
    Ok(out)
}

fn polygon_from_rings(crs: Crs, rings: Vec<Vec<Vec<f64>>>, attributes: &BTreeMap<String, String>) -> Result<Polygon, GeoError> {
    let mut rings = rings.into_iter().map(|ring| {
        ring.into_iter()
            .map(|p| match p.as_slice() {
                [x, y, ..] => Ok((*x, *y)),
                _ => Err(GeoError::InvalidPolygon("position with fewer than 2 coordinates".into())),
            })
            .collect::<Result<Ring, _>>()
    });
    let exterior = rings
        .next()
        .ok_or_else(|| GeoError::InvalidPolygon("polygon without rings".into()))??;
    let holes = rings.collect::<Result<Vec<_>, _>>()?;
    let mut polygon = Polygon::new(crs, exterior, holes)?;
    for (k, v) in attributes {
        polygon.set_attribute(k.clone(), v.clone());
    }
    Ok(polygon)
}

fn json_scalar(v: &Json) -> Option<String> {
    match v {
        Json::String(s) => Some(s.clone()),
        Json::Number(n) => Some(n.to_string()),
        Json::Bool(b) => Some(b.to_string()),
        _ => None,
    }
}

fn resolve_crs(path: &Path, declared: Option<Crs>, requested: Option<Crs>) -> Result<Crs, GeoError> {
    match (declared, requested) {
        (Some(d), Some(r)) if d != r => Err(GeoError::CrsMismatch { expected: r, found: d }),
        (Some(c), _) | (None, Some(c)) => Ok(c),
        (None, None) => Err(GeoError::MissingCrs(path.to_path_buf())),
    }
}

/// Writes polygons as a FeatureCollection with a `crs` member. Output is deterministic.
pub fn write_geojson(path: &Path, polygons: &[Polygon]) -> Result<(), GeoError> {
    let crs = polygons.first().map(Polygon::crs);
    if let Some(c) = crs {
        if let Some(p) = polygons.iter().find(|p| p.crs() != c) {
            return Err(GeoError::CrsMismatch { expected: c, found: p.crs() });
        }
    }
    let features: Vec<Json> = polygons
        .iter()
        .map(|p| {
            let rings: Vec<Vec<[f64; 2]>> = p.rings().map(|r| r.iter().map(|&(x, y)| [x, y]).collect()).collect();
            let props: Map<String, Json> = p.attributes().iter().map(|(k, v)| (k.clone(), Json::String(v.clone()))).collect();
            json!({
                "type": "Feature",
                "properties": props,
                "geometry": {"type": "Polygon", "coordinates": rings},
            })
        })
        .collect();
    let mut doc = json!({"type": "FeatureCollection", "features": features});
    if let Some(c) = crs {
        doc["crs"] = json!({"type": "name", "properties": {"name": c.to_string()}});
    }
    let text = serde_json::to_string_pretty(&doc).expect("geojson serialises");
    fs::write(path, text).map_err(|e| GeoError::io(path, e))
}

pub fn load_shapefile(path: &Path, crs: Option<Crs>) -> Result<Vec<Polygon>, GeoError> {
    let prj = path.with_extension("prj");
    let declared = match fs::read_to_string(&prj) {
        Ok(wkt) => epsg_from_wkt(&wkt),
        Err(_) => None,
    };
    let crs = resolve_crs(path, declared, crs)?;
    let shapes = shapefile::read_as::<_, shapefile::Polygon, shapefile::dbase::Record>(path).map_err(|e| GeoError::VectorFormat {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    let mut out = Vec::new();
    for (index, (shape, record)) in shapes.into_iter().enumerate() {
        let attributes: BTreeMap<String, String> = record.into_iter().filter_map(|(k, v)| dbase_scalar(v).map(|s| (k, s))).collect();
        let mut outers: Vec<(Ring, Vec<Ring>)> = Vec::new();
        let mut inners: Vec<Ring> = Vec::new();
        for ring in shape.into_inner() {
            match ring {
                shapefile::PolygonRing::Outer(pts) => outers.push((pts.iter().map(|p| (p.x, p.y)).collect(), Vec::new())),
                shapefile::PolygonRing::Inner(pts) => inners.push(pts.iter().map(|p| (p.x, p.y)).collect()),
            }
        }
        for hole in inners {
            let (x, y) = hole[0];
            match outers.iter_mut().find(|(ext, _)| super::polygon::ring_contains(ext, x, y)) {
                Some((_, holes)) => holes.push(hole),
                None => {
                    return Err(GeoError::VectorFormat {
                        path: path.to_path_buf(),
                        message: format!("record {index}: hole outside every outer ring"),
                    })
                }
            }
        }
        for (exterior, holes) in outers {
            let mut polygon = Polygon::new(crs, exterior, holes).map_err(|e| GeoError::VectorFormat {
                path: path.to_path_buf(),
                message: format!("record {index}: {e}"),
            })?;
            for (k, v) in &attributes {
                polygon.set_attribute(k.clone(), v.clone());
            }
            out.push(polygon);
        }
    }
    Ok(out)
}

fn dbase_scalar(v: shapefile::dbase::FieldValue) -> Option<String> {
    use shapefile::dbase::FieldValue as F;
    match v {
        F::Character(s) => s.map(|s| s.trim().to_string()),
        F::Memo(s) => Some(s),
        F::Numeric(n) => n.map(|n| n.to_string()),
        F::Float(n) => n.map(|n| n.to_string()),
        F::Double(n) | F::Currency(n) => Some(n.to_string()),
        F::Integer(n) => Some(n.to_string()),
        F::Logical(b) => b.map(|b| b.to_string()),
        F::Date(d) => d.map(|d| format!("{:04}-{:02}-{:02}", d.year(), d.month(), d.day())),
        F::DateTime(_) => None,
    }
}

/// Outermost `AUTHORITY["EPSG","nnnn"]` of a WKT1 string (the last one written).
fn epsg_from_wkt(wkt: &str) -> Option<Crs> {
    let idx = wkt.rfind("AUTHORITY[")?;
    let tail = &wkt[idx..];
    let end = tail.find(']')?;
    let inner = &tail["AUTHORITY[".len()..end];
    let mut parts = inner.split(',').map(|s| s.trim().trim_matches('"'));
    match (parts.next(), parts.next()) {
        (Some(auth), Some(code)) if auth.eq_ignore_ascii_case("EPSG") => code.parse().ok().map(Crs),
        _ => None,
    }
}
