//! GeoJSON and CSV adapters for clusters, study-area boundaries and street
//! segments.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde_json::{json, Map, Value};
use thiserror::Error;

use crate::cluster::{ClusterSource, UrbanCluster};
use crate::geometry::{signed_area, MultiPolygon, Point, Polygon};
use crate::streetnet::{FaceSet, StreetSegment};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path}: invalid JSON: {source}")]
    Json { path: String, source: serde_json::Error },
    #[error("{path}: {source}")]
    Csv { path: String, source: csv::Error },
    #[error("{path}: {message}")]
    Format { path: String, message: String },
    #[error("{path}: geographic coordinates are not supported here; supply projected data")]
    GeographicCrs { path: String },
}

fn format_err(path: &Path, message: impl Into<String>) -> DataError {
    DataError::Format { path: path.display().to_string(), message: message.into() }
}

fn read_json(path: &Path) -> Result<Value, DataError> {
    let text = fs::read_to_string(path).map_err(|source| DataError::Io { path: path.display().to_string(), source })?;
    serde_json::from_str(&text).map_err(|source| DataError::Json { path: path.display().to_string(), source })
}

fn ring_json(ring: &[Point]) -> Value {
    let mut coords: Vec<Value> = ring.iter().map(|p| json!([p.x, p.y])).collect();
    if let Some(first) = ring.first() {
        coords.push(json!([first.x, first.y]));
    }
    Value::Array(coords)
}

fn polygon_json(p: &Polygon) -> Value {
    Value::Array(p.rings().map(|r| ring_json(r)).collect())
}

/// GeoJSON geometry object: a Polygon for single-part geometries, otherwise a
/// MultiPolygon.
pub fn geometry_json(g: &MultiPolygon) -> Value {
    match g.0.as_slice() {
        [single] => json!({"type": "Polygon", "coordinates": polygon_json(single)}),
        parts => json!({"type": "MultiPolygon", "coordinates": parts.iter().map(polygon_json).collect::<Vec<_>>()}),
    }
}

/// One feature per cluster with properties `{id, area_km2, source, year,
/// threshold}`. Output is byte-stable for identical input.
pub fn clusters_geojson(clusters: &[UrbanCluster]) -> Value {
    let features: Vec<Value> = clusters
        .iter()
        .map(|c| {
            json!({
                "type": "Feature",
                "properties": {
                    "id": c.id,
                    "area_km2": c.area_km2,
                    "source": c.source.as_str(),
                    "year": c.year,
                    "threshold": c.threshold_used,
                },
                "geometry": geometry_json(&c.geometry),
            })
        })
        .collect();
    json!({"type": "FeatureCollection", "features": features})
}

pub fn write_clusters_geojson<W: Write>(clusters: &[UrbanCluster], mut out: W) -> std::io::Result<()> {
    serde_json::to_writer(&mut out, &clusters_geojson(clusters))?;
    out.write_all(b"\n")
}

fn has_geographic_crs(doc: &Value) -> bool {
    doc.pointer("/crs/properties/name").and_then(Value::as_str).is_some_and(|name| {
        let n = name.to_ascii_uppercase();
        n.contains("CRS84") || n.ends_with(":4326") || n.ends_with("::4326")
    })
}

fn parse_point(path: &Path, v: &Value) -> Result<Point, DataError> {
    let xy = v.as_array().filter(|a| a.len() >= 2).ok_or_else(|| format_err(path, "position must be [x, y]"))?;
    match (xy[0].as_f64(), xy[1].as_f64()) {
        (Some(x), Some(y)) if x.is_finite() && y.is_finite() => Ok(Point::new(x, y)),
        _ => Err(format_err(path, "non-numeric coordinate")),
    }
}

fn parse_ring(path: &Path, v: &Value) -> Result<Vec<Point>, DataError> {
    let pts = v.as_array().ok_or_else(|| format_err(path, "ring must be an array"))?;
    let mut ring = pts.iter().map(|p| parse_point(path, p)).collect::<Result<Vec<_>, _>>()?;
    if ring.len() > 1 && ring.first() == ring.last() {
        ring.pop();
    }
    if ring.len() < 3 {
        return Err(format_err(path, "ring has fewer than three distinct vertices"));
    }
    Ok(ring)
}

/// Parses Polygon coordinates, orienting the exterior counter-clockwise and
/// holes clockwise.
fn parse_polygon(path: &Path, v: &Value) -> Result<Polygon, DataError> {
    let rings = v.as_array().filter(|r| !r.is_empty()).ok_or_else(|| format_err(path, "polygon needs rings"))?;
    let mut parsed = rings.iter().map(|r| parse_ring(path, r)).collect::<Result<Vec<_>, _>>()?;
    for (i, ring) in parsed.iter_mut().enumerate() {
        let ccw = signed_area(ring) > 0.0;
        if ccw != (i == 0) {
            ring.reverse();
        }
    }
    let exterior = parsed.remove(0);
    Ok(Polygon::new(exterior, parsed))
}

fn parse_geometry(path: &Path, g: &Value) -> Result<Vec<Polygon>, DataError> {
    let coords = g.get("coordinates");
    match g.get("type").and_then(Value::as_str) {
        Some("Polygon") => Ok(vec![parse_polygon(path, coords.unwrap_or(&Value::Null))?]),
        Some("MultiPolygon") => coords
            .and_then(Value::as_array)
            .ok_or_else(|| format_err(path, "MultiPolygon needs coordinates"))?
            .iter()
            .map(|p| parse_polygon(path, p))
            .collect(),
        Some(other) => Err(format_err(path, format!("expected polygonal geometry, found {other}"))),
        None => Err(format_err(path, "geometry without type")),
    }
}

/// Features of a GeoJSON document (a FeatureCollection, a single Feature, or
/// a bare geometry wrapped as a property-less feature).
/// A GeoJSON feature as (properties, geometry).
type Feature = (Map<String, Value>, Value);

fn features(path: &Path, doc: &Value) -> Result<Vec<Feature>, DataError> {
    match doc.get("type").and_then(Value::as_str) {
        Some("FeatureCollection") => doc
            .get("features")
            .and_then(Value::as_array)
            .ok_or_else(|| format_err(path, "FeatureCollection without features"))?
            .iter()
            .map(|f| {
                let props = f.get("properties").and_then(Value::as_object).cloned().unwrap_or_default();
                Ok((props, f.get("geometry").cloned().unwrap_or(Value::Null)))
            })
            .collect(),
        Some("Feature") => Ok(vec![(
            doc.get("properties").and_then(Value::as_object).cloned().unwrap_or_default(),
            doc.get("geometry").cloned().unwrap_or(Value::Null),
        )]),
        Some(_) => Ok(vec![(Map::new(), doc.clone())]),
        None => Err(format_err(path, "not a GeoJSON object")),
    }
}

/// Reads every polygon of a GeoJSON file.
pub fn read_polygons(path: &Path) -> Result<Vec<Polygon>, DataError> {
    let doc = read_json(path)?;
    let mut out = Vec::new();
    for (_, geom) in features(path, &doc)? {
        out.extend(parse_geometry(path, &geom)?);
    }
    Ok(out)
}

/// Reads a study-area boundary as one multipolygon.
pub fn read_boundary(path: &Path) -> Result<MultiPolygon, DataError> {
    let polys = read_polygons(path)?;
    if polys.is_empty() {
        return Err(format_err(path, "boundary contains no polygon"));
    }
    Ok(MultiPolygon(polys))
}

/// Reads clusters written by [`write_clusters_geojson`]. Missing `id` or
/// `area_km2` properties fall back to the feature index and the planar area
/// scaled by `km2_per_sq_unit`.
pub fn read_clusters(path: &Path, km2_per_sq_unit: f64) -> Result<Vec<UrbanCluster>, DataError> {
    let doc = read_json(path)?;
    features(path, &doc)?
        .into_iter()
        .enumerate()
        .map(|(i, (props, geom))| {
            let geometry = MultiPolygon(parse_geometry(path, &geom)?);
            let source = match props.get("source").and_then(Value::as_str) {
                Some("street") => ClusterSource::Street,
                _ => ClusterSource::Ntl,
            };
            Ok(UrbanCluster {
                id: props.get("id").and_then(Value::as_u64).map_or(i as u32, |v| v as u32),
                area_km2: props.get("area_km2").and_then(Value::as_f64).unwrap_or(geometry.area() * km2_per_sq_unit),
                geometry,
                source,
                year: props.get("year").and_then(Value::as_i64).map(|y| y as i32),
                threshold_used: props.get("threshold").and_then(Value::as_f64),
                cell_count: None,
            })
        })
        .collect()
}

/// Reads street segments from CSV (`id,x1,y1,x2,y2`) or GeoJSON LineString /
/// MultiLineString features, chosen by file extension. GeoJSON declaring a
/// geographic CRS is rejected.
pub fn read_segments(path: &Path) -> Result<Vec<StreetSegment>, DataError> {
    let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("").to_ascii_lowercase();
    if ext == "csv" {
        return read_segments_csv(path);
    }
    let doc = read_json(path)?;
    if has_geographic_crs(&doc) {
        return Err(DataError::GeographicCrs { path: path.display().to_string() });
    }
    let mut out = Vec::new();
    for (i, (props, geom)) in features(path, &doc)?.into_iter().enumerate() {
        let base_id = props.get("id").and_then(Value::as_u64).unwrap_or(i as u64);
        let lines: Vec<&Value> = match geom.get("type").and_then(Value::as_str) {
            Some("LineString") => geom.get("coordinates").into_iter().collect(),
            Some("MultiLineString") => geom.get("coordinates").and_then(Value::as_array).map(|a| a.iter().collect()).unwrap_or_default(),
            Some(other) => return Err(format_err(path, format!("expected line geometry, found {other}"))),
            None => return Err(format_err(path, "feature without geometry type")),
        };
        for line in lines {
            let pts = line
                .as_array()
                .ok_or_else(|| format_err(path, "LineString needs coordinates"))?
                .iter()
                .map(|p| parse_point(path, p))
                .collect::<Result<Vec<_>, _>>()?;
            let seg = StreetSegment::new(base_id, pts).map_err(|e| format_err(path, format!("segment {base_id}: {e}")))?;
            out.push(seg);
        }
    }
    Ok(out)
}

/// Reads one numeric column from a CSV file with a header row. Without a
/// column name the first column is used.
pub fn read_values(path: &Path, column: Option<&str>) -> Result<Vec<f64>, DataError> {
    let csv_err = |source| DataError::Csv { path: path.display().to_string(), source };
    let mut reader = csv::Reader::from_path(path).map_err(csv_err)?;
    let idx = match column {
        Some(name) => reader
            .headers()
            .map_err(csv_err)?
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| format_err(path, format!("no column named `{name}`")))?,
        None => 0,
    };
    let mut out = Vec::new();
    for (row, rec) in reader.records().enumerate() {
        let rec = rec.map_err(csv_err)?;
        let field = rec.get(idx).ok_or_else(|| format_err(path, format!("row {}: missing column {idx}", row + 1)))?;
        let v: f64 = field.trim().parse().map_err(|_| format_err(path, format!("row {}: `{field}` is not a number", row + 1)))?;
        out.push(v);
    }
    Ok(out)
}

/// Writes a face set as JSON, for reuse by a later run.
pub fn write_face_set<W: Write>(set: &FaceSet, out: W) -> Result<(), serde_json::Error> {
    serde_json::to_writer(out, set)
}

pub fn read_face_set(path: &Path) -> Result<FaceSet, DataError> {
    let text = fs::read_to_string(path).map_err(|source| DataError::Io { path: path.display().to_string(), source })?;
    serde_json::from_str(&text).map_err(|source| DataError::Json { path: path.display().to_string(), source })
}

fn read_segments_csv(path: &Path) -> Result<Vec<StreetSegment>, DataError> {
    let csv_err = |source| DataError::Csv { path: path.display().to_string(), source };
    let mut reader = csv::Reader::from_path(path).map_err(csv_err)?;
    let mut out = Vec::new();
    for rec in reader.deserialize::<(u64, f64, f64, f64, f64)>() {
        let (id, x1, y1, x2, y2) = rec.map_err(csv_err)?;
        let seg = StreetSegment::new(id, vec![Point::new(x1, y1), Point::new(x2, y2)]).map_err(|e| format_err(path, format!("segment {id}: {e}")))?;
        out.push(seg);
    }
    Ok(out)
}
