//! Sampling of labeled street segments into paired camera views.
//!
//! Segments are drawn without replacement with a seeded Fisher-Yates
//! prefix, a point is drawn uniformly over arc length, and two cameras are
//! pointed 45 degrees to either side of the road bearing. The "direction of
//! traffic" is taken to be the digitization direction of the polyline.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::geodata::{haversine_m, initial_bearing_deg, normalize_degrees, LatLon, SegmentCollection, StreetSegment};
use crate::imagery::ImageRequest;
use crate::labeler::{StreetContext, CONTEXT_ATTRIBUTE};
use crate::rng::Rng;
use crate::util::{format_sig, round_sig};

/// Camera tilt from the road bearing, degrees.
pub const CAMERA_TILT_DEG: f64 = 45.0;
/// Significant digits of every float written to a manifest.
pub const MANIFEST_DIGITS: usize = 9;
pub const MANIFEST_HEADER: &str = "sample_id,segment_id,lat,lon,road_bearing,side,heading,label,image_path";

#[derive(Debug, Error, PartialEq)]
pub enum SampleError {
    #[error("cannot sample {requested} segments from a collection of {available}")]
    TooMany { requested: usize, available: usize },
    #[error("fraction {0} is outside [0, 1]")]
    FractionOutOfRange(f64),
    #[error("segment '{0}' has no context label")]
    Unlabeled(String),
    #[error("segment '{id}' has an invalid context label: {message}")]
    BadLabel { id: String, message: String },
    #[error("manifest line {line}: {message}")]
    Manifest { line: usize, message: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SamplePoint {
    pub segment_id: String,
    pub location: LatLon,
    /// Degrees in `[0, 360)`.
    pub road_bearing: f64,
    /// Arc-length parameter in `[0, 1]`.
    pub fraction: f64,
}

/// Left and right camera headings; `right - left = 90 (mod 360)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraHeadingPair {
    pub left: f64,
    pub right: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Side {
    Left,
    Right,
}

impl Side {
    pub fn code(self) -> &'static str {
        match self {
            Side::Left => "L",
            Side::Right => "R",
        }
    }
}

impl fmt::Display for Side {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

impl FromStr for Side {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "L" => Ok(Side::Left),
            "R" => Ok(Side::Right),
            other => Err(format!("side must be L or R, got '{other}'")),
        }
    }
}

/// One camera view of a sample point.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageEntry {
    pub side: Side,
    pub heading: f64,
    /// Cache-relative path of the payload, `{2 hex}/{key}.bin`.
    pub image_path: String,
}

/// One sampled point with its left and right views, both carrying the
/// segment's label.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleRecord {
    pub sample_id: String,
    pub segment_id: String,
    pub location: LatLon,
    pub road_bearing: f64,
    pub label: StreetContext,
    pub images: [ImageEntry; 2],
}

impl SampleRecord {
    pub fn headings(&self) -> CameraHeadingPair {
        CameraHeadingPair { left: self.images[0].heading, right: self.images[1].heading }
    }

    /// Image request for one side at the given size.
    pub fn request(&self, side: Side, width: u32, height: u32) -> ImageRequest {
        let entry = &self.images[side_index(side)];
        ImageRequest::new(self.location, entry.heading, width, height)
    }

    /// Stable per-image identifier, `{sample_id}_{side}`.
    pub fn image_id(&self, side: Side) -> String {
        format!("{}_{}", self.sample_id, side)
    }
}

fn side_index(side: Side) -> usize {
    match side {
        Side::Left => 0,
        Side::Right => 1,
    }
}

/// `n` distinct segments drawn uniformly without replacement.
pub fn sample_segments(collection: &SegmentCollection, n: usize, seed: u64) -> Result<Vec<StreetSegment>, SampleError> {
    let mut rng = Rng::seed_from_u64(seed);
    let idx = sample_indices(collection.len(), n, &mut rng)?;
    Ok(idx.into_iter().map(|i| collection.segments()[i].clone()).collect())
}

/// Fisher-Yates prefix of length `n` over `0..len`.
fn sample_indices(len: usize, n: usize, rng: &mut Rng) -> Result<Vec<usize>, SampleError> {
    if n > len {
        return Err(SampleError::TooMany { requested: n, available: len });
    }
    let mut idx: Vec<usize> = (0..len).collect();
    for i in 0..n {
        let j = i + rng.below((len - i) as u64) as usize;
        idx.swap(i, j);
    }
    idx.truncate(n);
    Ok(idx)
}

/// Point at arc-length fraction `t` along the segment.
///
/// Interpolates lat/lon linearly inside the containing edge. The bearing is
/// that edge's initial great-circle bearing; at a joint the later edge is
/// used, and `t = 1` uses the final edge.
pub fn point_at_fraction(segment: &StreetSegment, t: f64) -> Result<SamplePoint, SampleError> {
    if !(0.0..=1.0).contains(&t) {
        return Err(SampleError::FractionOutOfRange(t));
    }
    let v = segment.vertices();
    let lengths = segment.edge_lengths_m();
    let total: f64 = lengths.iter().sum();
    let target = t * total;

    let last = lengths.len() - 1;
    let mut start = 0.0;
    let mut edge = last;
    for (i, &len) in lengths.iter().enumerate() {
        if target < start + len {
            edge = i;
            break;
        }
        start += len;
    }
    if edge == last {
        start = total - lengths[last];
    }
    let local = ((target - start) / lengths[edge]).clamp(0.0, 1.0);
    let (a, b) = (v[edge], v[edge + 1]);
    let location = LatLon { lat: a.lat + (b.lat - a.lat) * local, lon: a.lon + (b.lon - a.lon) * local };
    Ok(SamplePoint { segment_id: segment.id().to_string(), location, road_bearing: initial_bearing_deg(a, b), fraction: t })
}

/// Arc length from the segment start to a point produced by
/// [`point_at_fraction`].
pub fn arc_length_to(segment: &StreetSegment, point: &SamplePoint) -> f64 {
    let v = segment.vertices();
    let lengths = segment.edge_lengths_m();
    let target = point.fraction * lengths.iter().sum::<f64>();
    let mut start = 0.0;
    for (i, &len) in lengths.iter().enumerate() {
        if target < start + len || i == lengths.len() - 1 {
            return start + haversine_m(v[i], point.location);
        }
        start += len;
    }
    unreachable!("segment has at least one edge")
}

/// Cameras at `bearing - 45` and `bearing + 45`, both in `[0, 360)`.
pub fn camera_headings(road_bearing: f64) -> CameraHeadingPair {
    CameraHeadingPair {
        left: normalize_degrees(road_bearing - CAMERA_TILT_DEG),
        right: normalize_degrees(road_bearing + CAMERA_TILT_DEG),
    }
}

fn segment_label(seg: &StreetSegment) -> Result<StreetContext, SampleError> {
    let raw = seg.attributes.get(CONTEXT_ATTRIBUTE).ok_or_else(|| SampleError::Unlabeled(seg.id().to_string()))?;
    raw.parse()
        .map_err(|e: crate::labeler::LabelError| SampleError::BadLabel { id: seg.id().to_string(), message: e.to_string() })
}

fn round_angle(x: f64) -> f64 {
    normalize_degrees(round_sig(x, MANIFEST_DIGITS))
}

/// Samples `n` labeled segments into manifest records with 640x640 image
/// paths.
pub fn build_manifest(labeled: &SegmentCollection, n: usize, seed: u64) -> Result<Vec<SampleRecord>, SampleError> {
    build_manifest_sized(labeled, n, seed, ImageRequest::DEFAULT_SIZE, ImageRequest::DEFAULT_SIZE)
}

/// As [`build_manifest`], naming image payloads for the given request size.
///
/// One generator drives the run: the segment shuffle consumes it first,
/// then one fraction is drawn per selected segment in selection order.
/// Coordinates and angles are rounded to the manifest precision before
/// the image keys are derived, so a manifest re-read from CSV names the
/// same payloads.
pub fn build_manifest_sized(
    labeled: &SegmentCollection,
    n: usize,
    seed: u64,
    width: u32,
    height: u32,
) -> Result<Vec<SampleRecord>, SampleError> {
    let labels = labeled.segments().iter().map(segment_label).collect::<Result<Vec<_>, _>>()?;
    let mut rng = Rng::seed_from_u64(seed);
    let chosen = sample_indices(labeled.len(), n, &mut rng)?;

    let mut out = Vec::with_capacity(n);
    for (k, &i) in chosen.iter().enumerate() {
        let seg = &labeled.segments()[i];
        let t = rng.next_f64();
        let p = point_at_fraction(seg, t)?;
        let location =
            LatLon { lat: round_sig(p.location.lat, MANIFEST_DIGITS), lon: round_sig(p.location.lon, MANIFEST_DIGITS) };
        let road_bearing = round_angle(p.road_bearing);
        let cams = camera_headings(road_bearing);
        let entry = |side: Side, heading: f64| {
            let heading = round_angle(heading);
            let req = ImageRequest::new(location, heading, width, height);
            ImageEntry { side, heading, image_path: req.cache_relative_path() }
        };
        out.push(SampleRecord {
            sample_id: format!("p{k:06}"),
            segment_id: seg.id().to_string(),
            location,
            road_bearing,
            label: labels[i],
            images: [entry(Side::Left, cams.left), entry(Side::Right, cams.right)],
        });
    }
    Ok(out)
}

/// Manifest CSV, two rows per sample point.
pub fn write_manifest_csv(records: &[SampleRecord]) -> String {
    let mut out = String::with_capacity(records.len() * 200);
    out.push_str(MANIFEST_HEADER);
    out.push('\n');
    for r in records {
        for img in &r.images {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{}\n",
                r.sample_id,
                r.segment_id,
                format_sig(r.location.lat, MANIFEST_DIGITS),
                format_sig(r.location.lon, MANIFEST_DIGITS),
                format_sig(r.road_bearing, MANIFEST_DIGITS),
                img.side,
                format_sig(img.heading, MANIFEST_DIGITS),
                r.label,
                img.image_path,
            ));
        }
    }
    out
}

pub fn parse_manifest_csv(text: &str) -> Result<Vec<SampleRecord>, SampleError> {
    let err = |line: usize, message: String| SampleError::Manifest { line, message };
    let mut reader = csv::ReaderBuilder::new().from_reader(text.as_bytes());
    let headers = reader.headers().map_err(|e| err(1, e.to_string()))?;
    if headers.iter().collect::<Vec<_>>().join(",") != MANIFEST_HEADER {
        return Err(err(1, format!("header must be {MANIFEST_HEADER}")));
    }
    let mut out: Vec<SampleRecord> = Vec::new();
    let mut pending: Option<SampleRecord> = None;
    for (i, rec) in reader.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| err(line, e.to_string()))?;
        let num = |col: usize| rec[col].parse::<f64>().map_err(|_| err(line, format!("bad number '{}'", &rec[col])));
        let side: Side = rec[5].parse().map_err(|m| err(line, m))?;
        let location = LatLon::new(num(2)?, num(3)?).ok_or_else(|| err(line, "coordinate out of range".into()))?;
        let label: StreetContext = rec[7].parse().map_err(|e: crate::labeler::LabelError| err(line, e.to_string()))?;
        let entry = ImageEntry { side, heading: num(6)?, image_path: rec[8].to_string() };
        match (side, pending.take()) {
            (Side::Left, None) => {
                pending = Some(SampleRecord {
                    sample_id: rec[0].to_string(),
                    segment_id: rec[1].to_string(),
                    location,
                    road_bearing: num(4)?,
                    label,
                    images: [entry.clone(), entry],
                });
            }
            (Side::Right, Some(mut r)) if r.sample_id == rec[0] => {
                r.images[1] = entry;
                out.push(r);
            }
            _ => return Err(err(line, format!("sample '{}' is not an L row followed by its R row", &rec[0]))),
        }
    }
    if let Some(r) = pending {
        return Err(err(0, format!("sample '{}' has no R row", r.sample_id)));
    }
    Ok(out)
}
