//! Street geometry: WGS84 polylines read from GeoJSON or from the PolyLine
//! subset of the ESRI shapefile main file, plus spherical distance helpers.
//!
//! Coordinates are always WGS84 degrees. Re-projecting projected city data
//! is left to the caller.

use std::collections::{BTreeMap, HashSet};

use serde_json::{json, Map, Value};
use thiserror::Error;

/// Mean Earth radius used for every distance computation.
pub const EARTH_RADIUS_M: f64 = 6_371_000.0;

/// Coordinate reference system of every [`SegmentCollection`].
pub const CRS_NOTE: &str = "WGS84 (EPSG:4326), degrees";

const SHP_FILE_CODE: i32 = 9994;
const SHP_VERSION: i32 = 1000;
const SHP_HEADER_LEN: usize = 100;
const SHAPE_NULL: i32 = 0;
const SHAPE_POLYLINE: i32 = 3;

#[derive(Debug, Error, PartialEq)]
pub enum GeoError {
    #[error("malformed JSON at byte {offset}: {message}")]
    Json { offset: usize, message: String },
    #[error("not a GeoJSON FeatureCollection")]
    NotFeatureCollection,
    #[error("feature {index}: geometry is not LineString")]
    NotLineString { index: usize },
    #[error("feature {index}: {message}")]
    BadFeature { index: usize, message: String },
    #[error("{context}: vertex {vertex}: coordinate out of range (lat {lat}, lon {lon})")]
    OutOfRange { context: String, vertex: usize, lat: f64, lon: f64 },
    #[error("segment '{id}': {message}")]
    BadSegment { id: String, message: String },
    #[error("duplicate segment id '{0}'")]
    DuplicateId(String),
    #[error("not a shapefile")]
    NotShapefile,
    #[error("unsupported shape type {0} (only PolyLine = 3 is supported)")]
    UnsupportedShapeType(i32),
    #[error("record {record}: truncated")]
    TruncatedRecord { record: usize },
    #[error("record {record}: {message}")]
    BadRecord { record: usize, message: String },
    #[error("labels CSV: {0}")]
    LabelsCsv(String),
}

/// A WGS84 position in degrees.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LatLon {
    pub lat: f64,
    pub lon: f64,
}

impl LatLon {
    /// Validated constructor. Returns `None` for non-finite or out-of-range input.
    pub fn new(lat: f64, lon: f64) -> Option<Self> {
        let ok = lat.is_finite() && lon.is_finite() && (-90.0..=90.0).contains(&lat) && (-180.0..=180.0).contains(&lon);
        ok.then_some(Self { lat, lon })
    }
}

/// Great-circle distance in meters (haversine, spherical Earth).
pub fn haversine_m(a: LatLon, b: LatLon) -> f64 {
    let (p1, p2) = (a.lat.to_radians(), b.lat.to_radians());
    let dp = p2 - p1;
    let dl = (b.lon - a.lon).to_radians();
    let h = (dp / 2.0).sin().powi(2) + p1.cos() * p2.cos() * (dl / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_M * h.sqrt().min(1.0).asin()
}

/// Initial great-circle bearing from `a` to `b`, degrees clockwise from
/// north in `[0, 360)`.
pub fn initial_bearing_deg(a: LatLon, b: LatLon) -> f64 {
    let (p1, p2) = (a.lat.to_radians(), b.lat.to_radians());
    let dl = (b.lon - a.lon).to_radians();
    let y = dl.sin() * p2.cos();
    let x = p1.cos() * p2.sin() - p1.sin() * p2.cos() * dl.cos();
    normalize_degrees(y.atan2(x).to_degrees())
}

/// Maps any finite angle into `[0, 360)`.
pub fn normalize_degrees(deg: f64) -> f64 {
    let r = deg.rem_euclid(360.0);
    // rem_euclid can round up to exactly 360 for tiny negative inputs
    if r >= 360.0 {
        0.0
    } else {
        r
    }
}

/// A street polyline, the unit of labeling and sampling.
#[derive(Debug, Clone, PartialEq)]
pub struct StreetSegment {
    id: String,
    vertices: Vec<LatLon>,
    pub attributes: BTreeMap<String, String>,
}

impl StreetSegment {
    /// Rejects fewer than two vertices and consecutive repeated vertices.
    pub fn new(id: impl Into<String>, vertices: Vec<LatLon>, attributes: BTreeMap<String, String>) -> Result<Self, GeoError> {
        let id = id.into();
        if vertices.len() < 2 {
            return Err(GeoError::BadSegment { id, message: "fewer than 2 vertices".into() });
        }
        for (i, v) in vertices.iter().enumerate() {
            if LatLon::new(v.lat, v.lon).is_none() {
                return Err(GeoError::OutOfRange { context: format!("segment '{id}'"), vertex: i, lat: v.lat, lon: v.lon });
            }
        }
        if let Some(i) = vertices.windows(2).position(|w| w[0] == w[1]) {
            return Err(GeoError::BadSegment { id, message: format!("vertices {i} and {} are identical", i + 1) });
        }
        Ok(Self { id, vertices, attributes })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn vertices(&self) -> &[LatLon] {
        &self.vertices
    }

    /// Per-edge haversine lengths, one per consecutive vertex pair.
    pub fn edge_lengths_m(&self) -> Vec<f64> {
        self.vertices.windows(2).map(|w| haversine_m(w[0], w[1])).collect()
    }
}

/// Sum of haversine edge lengths of a segment in meters.
pub fn polyline_length_m(segment: &StreetSegment) -> f64 {
    segment.edge_lengths_m().iter().sum()
}

/// Segments with pairwise-distinct ids.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SegmentCollection {
    segments: Vec<StreetSegment>,
}

impl SegmentCollection {
    pub fn new(segments: Vec<StreetSegment>) -> Result<Self, GeoError> {
        let mut seen = HashSet::with_capacity(segments.len());
        for s in &segments {
            if !seen.insert(s.id.as_str()) {
                return Err(GeoError::DuplicateId(s.id.clone()));
            }
        }
        Ok(Self { segments })
    }

    pub fn segments(&self) -> &[StreetSegment] {
        &self.segments
    }

    pub fn segments_mut(&mut self) -> &mut [StreetSegment] {
        &mut self.segments
    }

    pub fn len(&self) -> usize {
        self.segments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    pub fn crs_note(&self) -> &'static str {
        CRS_NOTE
    }

    pub fn get(&self, id: &str) -> Option<&StreetSegment> {
        self.segments.iter().find(|s| s.id == id)
    }

    /// Serializes to a GeoJSON FeatureCollection. Each feature carries its id
    /// as the `id` property alongside the string attributes.
    pub fn to_geojson(&self) -> String {
        let features: Vec<Value> = self
            .segments
            .iter()
            .map(|s| {
                let mut props = Map::new();
                props.insert("id".into(), Value::String(s.id.clone()));
                for (k, v) in &s.attributes {
                    props.insert(k.clone(), Value::String(v.clone()));
                }
                let coords: Vec<Value> = s.vertices.iter().map(|v| json!([v.lon, v.lat])).collect();
                json!({
                    "type": "Feature",
                    "properties": props,
                    "geometry": {"type": "LineString", "coordinates": coords},
                })
            })
            .collect();
        let fc = json!({"type": "FeatureCollection", "features": features});
        serde_json::to_string_pretty(&fc).expect("serializing a JSON value cannot fail")
    }
}

/// Drops consecutive repeats; real-world digitizations contain them.
fn dedup_consecutive(vertices: &mut Vec<LatLon>) {
    vertices.dedup_by(|b, a| a == b);
}

fn byte_offset(text: &str, line: usize, column: usize) -> usize {
    if line == 0 {
        return 0;
    }
    let line_start: usize = text.split_inclusive('\n').take(line - 1).map(str::len).sum();
    (line_start + column.saturating_sub(1)).min(text.len())
}

fn property_string(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

/// Parses a GeoJSON FeatureCollection whose features are all LineStrings.
///
/// The `id` property (string or number) becomes the segment id; features
/// without one get their zero-padded feature index. Consecutive repeated
/// vertices are collapsed.
pub fn parse_geojson_streets(text: &str) -> Result<SegmentCollection, GeoError> {
    let doc: Value = serde_json::from_str(text)
        .map_err(|e| GeoError::Json { offset: byte_offset(text, e.line(), e.column()), message: e.to_string() })?;
    if doc.get("type").and_then(Value::as_str) != Some("FeatureCollection") {
        return Err(GeoError::NotFeatureCollection);
    }
    let features = doc.get("features").and_then(Value::as_array).ok_or(GeoError::NotFeatureCollection)?;

    let mut segments = Vec::with_capacity(features.len());
    for (index, feature) in features.iter().enumerate() {
        let geometry =
            feature.get("geometry").ok_or_else(|| GeoError::BadFeature { index, message: "missing geometry".into() })?;
        if geometry.get("type").and_then(Value::as_str) != Some("LineString") {
            return Err(GeoError::NotLineString { index });
        }
        let coords = geometry
            .get("coordinates")
            .and_then(Value::as_array)
            .ok_or_else(|| GeoError::BadFeature { index, message: "missing coordinates".into() })?;

        let mut vertices = Vec::with_capacity(coords.len());
        for (vi, c) in coords.iter().enumerate() {
            let pair = c
                .as_array()
                .filter(|a| a.len() >= 2)
                .ok_or_else(|| GeoError::BadFeature { index, message: format!("vertex {vi}: expected [lon, lat]") })?;
            let lon = pair[0].as_f64().unwrap_or(f64::NAN);
            let lat = pair[1].as_f64().unwrap_or(f64::NAN);
            let p = LatLon::new(lat, lon).ok_or_else(|| GeoError::OutOfRange {
                context: format!("feature {index}"),
                vertex: vi,
                lat,
                lon,
            })?;
            vertices.push(p);
        }
        dedup_consecutive(&mut vertices);

        let mut attributes = BTreeMap::new();
        let mut id = None;
        if let Some(props) = feature.get("properties").and_then(Value::as_object) {
            for (k, v) in props {
                if k == "id" {
                    id = Some(property_string(v));
                } else if !v.is_null() {
                    attributes.insert(k.clone(), property_string(v));
                }
            }
        }
        let id = id.unwrap_or_else(|| format!("{index:06}"));
        let seg =
            StreetSegment::new(id, vertices, attributes).map_err(|e| GeoError::BadFeature { index, message: e.to_string() })?;
        segments.push(seg);
    }
    SegmentCollection::new(segments)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        let end = self.pos.checked_add(n)?;
        let s = self.bytes.get(self.pos..end)?;
        self.pos = end;
        Some(s)
    }
    fn i32_be(&mut self) -> Option<i32> {
        self.take(4).map(|b| i32::from_be_bytes(b.try_into().unwrap()))
    }
    fn i32_le(&mut self) -> Option<i32> {
        self.take(4).map(|b| i32::from_le_bytes(b.try_into().unwrap()))
    }
    fn f64_le(&mut self) -> Option<f64> {
        self.take(8).map(|b| f64::from_le_bytes(b.try_into().unwrap()))
    }
}

/// Reads the PolyLine records of a `.shp` main file.
///
/// Records are addressed by their 0-based position in the file. A record
/// with several parts yields one segment per part, with id
/// `"{record}_{part}"`. The optional `labels` CSV (`record_index,key,value`)
/// adds attributes to every part of the named record. Null-shape records
/// are skipped.
pub fn parse_shapefile_polylines(bytes: &[u8], labels: Option<&str>) -> Result<SegmentCollection, GeoError> {
    let mut cur = Cursor { bytes, pos: 0 };
    if cur.i32_be() != Some(SHP_FILE_CODE) {
        return Err(GeoError::NotShapefile);
    }
    if bytes.len() < SHP_HEADER_LEN {
        return Err(GeoError::NotShapefile);
    }
    let mut hdr = Cursor { bytes, pos: 32 };
    let shape_type = hdr.i32_le().unwrap();
    if shape_type != SHAPE_POLYLINE {
        return Err(GeoError::UnsupportedShapeType(shape_type));
    }

    let extra = match labels {
        Some(text) => parse_record_labels(text)?,
        None => BTreeMap::new(),
    };

    let mut cur = Cursor { bytes, pos: SHP_HEADER_LEN };
    let mut segments = Vec::new();
    let mut record = 0usize;
    while cur.pos < bytes.len() {
        let truncated = GeoError::TruncatedRecord { record };
        let (_number, content_words) = match (cur.i32_be(), cur.i32_be()) {
            (Some(n), Some(len)) => (n, len),
            _ => return Err(truncated),
        };
        let content_len = usize::try_from(content_words)
            .map_err(|_| GeoError::BadRecord { record, message: "negative content length".into() })?
            * 2;
        let content = cur.take(content_len).ok_or(truncated)?;
        let mut rc = Cursor { bytes: content, pos: 0 };
        let rtype = rc.i32_le().ok_or(GeoError::TruncatedRecord { record })?;
        if rtype == SHAPE_NULL {
            record += 1;
            continue;
        }
        if rtype != SHAPE_POLYLINE {
            return Err(GeoError::UnsupportedShapeType(rtype));
        }
        let parsed = read_polyline(&mut rc).ok_or(GeoError::TruncatedRecord { record })?;
        let (parts, points) = parsed;
        if parts.first() != Some(&0) || parts.windows(2).any(|w| w[1] <= w[0]) || parts.iter().any(|&p| p >= points.len()) {
            return Err(GeoError::BadRecord { record, message: "invalid part index array".into() });
        }
        for (pi, &start) in parts.iter().enumerate() {
            let end = parts.get(pi + 1).copied().unwrap_or(points.len());
            let mut vertices = Vec::with_capacity(end - start);
            for (vi, &(x, y)) in points[start..end].iter().enumerate() {
                let p = LatLon::new(y, x).ok_or_else(|| GeoError::OutOfRange {
                    context: format!("record {record} part {pi}"),
                    vertex: vi,
                    lat: y,
                    lon: x,
                })?;
                vertices.push(p);
            }
            dedup_consecutive(&mut vertices);
            let attributes = extra.get(&record).cloned().unwrap_or_default();
            let seg = StreetSegment::new(format!("{record}_{pi}"), vertices, attributes)
                .map_err(|e| GeoError::BadRecord { record, message: e.to_string() })?;
            segments.push(seg);
        }
        record += 1;
    }
    SegmentCollection::new(segments)
}

type PolylineParts = (Vec<usize>, Vec<(f64, f64)>);

fn read_polyline(rc: &mut Cursor<'_>) -> Option<PolylineParts> {
    rc.take(32)?; // bounding box
    let num_parts = usize::try_from(rc.i32_le()?).ok()?;
    let num_points = usize::try_from(rc.i32_le()?).ok()?;
    // Guard against absurd counts before allocating.
    if num_parts.checked_mul(4)? > rc.bytes.len() || num_points.checked_mul(16)? > rc.bytes.len() {
        return None;
    }
    let mut parts = Vec::with_capacity(num_parts);
    for _ in 0..num_parts {
        parts.push(usize::try_from(rc.i32_le()?).ok()?);
    }
    let mut points = Vec::with_capacity(num_points);
    for _ in 0..num_points {
        let x = rc.f64_le()?;
        let y = rc.f64_le()?;
        points.push((x, y));
    }
    Some((parts, points))
}

fn parse_record_labels(text: &str) -> Result<BTreeMap<usize, BTreeMap<String, String>>, GeoError> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let headers = reader.headers().map_err(|e| GeoError::LabelsCsv(e.to_string()))?.clone();
    if headers.iter().collect::<Vec<_>>() != ["record_index", "key", "value"] {
        return Err(GeoError::LabelsCsv("header must be record_index,key,value".into()));
    }
    let mut out: BTreeMap<usize, BTreeMap<String, String>> = BTreeMap::new();
    for (line, row) in reader.records().enumerate() {
        let row = row.map_err(|e| GeoError::LabelsCsv(e.to_string()))?;
        let idx: usize =
            row[0].parse().map_err(|_| GeoError::LabelsCsv(format!("row {}: bad record_index '{}'", line + 1, &row[0])))?;
        out.entry(idx).or_default().insert(row[1].to_string(), row[2].to_string());
    }
    Ok(out)
}

/// Writes a PolyLine `.shp` main file. Each record is a list of parts, each
/// part a list of vertices.
pub fn write_shapefile_polylines(records: &[Vec<Vec<LatLon>>]) -> Vec<u8> {
    let all = records.iter().flatten().flatten();
    let (mut xmin, mut ymin, mut xmax, mut ymax) = (f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
    for p in all {
        xmin = xmin.min(p.lon);
        xmax = xmax.max(p.lon);
        ymin = ymin.min(p.lat);
        ymax = ymax.max(p.lat);
    }
    if !xmin.is_finite() {
        (xmin, ymin, xmax, ymax) = (0.0, 0.0, 0.0, 0.0);
    }

    let mut body = Vec::new();
    for (i, parts) in records.iter().enumerate() {
        let num_points: usize = parts.iter().map(Vec::len).sum();
        let content_len = 44 + 4 * parts.len() + 16 * num_points;
        body.extend_from_slice(&(i as i32 + 1).to_be_bytes());
        body.extend_from_slice(&((content_len / 2) as i32).to_be_bytes());
        body.extend_from_slice(&SHAPE_POLYLINE.to_le_bytes());
        let pts: Vec<&LatLon> = parts.iter().flatten().collect();
        let bx = [
            pts.iter().map(|p| p.lon).fold(f64::INFINITY, f64::min),
            pts.iter().map(|p| p.lat).fold(f64::INFINITY, f64::min),
            pts.iter().map(|p| p.lon).fold(f64::NEG_INFINITY, f64::max),
            pts.iter().map(|p| p.lat).fold(f64::NEG_INFINITY, f64::max),
        ];
        for v in bx {
            body.extend_from_slice(&v.to_le_bytes());
        }
        body.extend_from_slice(&(parts.len() as i32).to_le_bytes());
        body.extend_from_slice(&(num_points as i32).to_le_bytes());
        let mut offset = 0i32;
        for part in parts {
            body.extend_from_slice(&offset.to_le_bytes());
            offset += part.len() as i32;
        }
        for p in pts {
            body.extend_from_slice(&p.lon.to_le_bytes());
            body.extend_from_slice(&p.lat.to_le_bytes());
        }
    }

    let mut out = Vec::with_capacity(SHP_HEADER_LEN + body.len());
    out.extend_from_slice(&SHP_FILE_CODE.to_be_bytes());
    out.extend_from_slice(&[0u8; 20]);
    out.extend_from_slice(&(((SHP_HEADER_LEN + body.len()) / 2) as i32).to_be_bytes());
    out.extend_from_slice(&SHP_VERSION.to_le_bytes());
    out.extend_from_slice(&SHAPE_POLYLINE.to_le_bytes());
    for v in [xmin, ymin, xmax, ymax, 0.0, 0.0, 0.0, 0.0] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.extend_from_slice(&body);
    out
}
