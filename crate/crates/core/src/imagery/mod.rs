//! Street-view image acquisition: request canonicalization, a disk cache,
//! a live HTTP provider, a synthetic offline provider and the PPM codec
//! used as the internal raster format.

mod cache;
mod fetch;
mod ppm;
mod provider;
mod synth;

use thiserror::Error;

use crate::geodata::LatLon;
use crate::util::sha256_hex;

pub use cache::{CacheEntry, CacheMeta, DiskCache};
pub use fetch::{fetch_pair, FetchOutcome, FetchStats, Fetcher};
pub use ppm::{decode_ppm, encode_ppm, PpmError};
pub use provider::{
    ImageDecoder, ImageProvider, PpmDecoder, StreetViewProvider, TokenBucket, API_KEY_ENV, DEFAULT_ENDPOINT, DEFAULT_RATE_PER_SEC,
};
pub use synth::{motif_palette, motif_quadrant, quadrant_bounds, synth_render, SyntheticProvider};

/// Camera field of view, degrees.
pub const FOV_DEG: u32 = 90;
/// Largest image edge the provider serves.
pub const MAX_IMAGE_SIZE: u32 = 640;

#[derive(Debug, Error)]
pub enum ImageryError {
    #[error("HTTP {status} for request {request}")]
    Http { status: u16, request: String },
    #[error("authorization rejected (HTTP {status}) for request {request}")]
    Auth { status: u16, request: String },
    #[error("provider rate limit or quota exceeded for request {request}")]
    RateLimited { request: String },
    #[error("no imagery coverage for request {request}")]
    NoCoverage { request: String },
    #[error("transport error for request {request}: {message}")]
    Transport { request: String, message: String },
    #[error("could not decode {len}-byte payload: {source}")]
    Decode { len: usize, source: PpmError },
    #[error("cache entry {key} is corrupt: {message}")]
    CorruptCache { key: String, message: String },
    #[error("missing API key: set {0}")]
    MissingApiKey(&'static str),
    #[error("invalid image request: {0}")]
    InvalidRequest(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl ImageryError {
    /// Errors worth retrying after a pause.
    pub fn is_retryable(&self) -> bool {
        matches!(self, ImageryError::RateLimited { .. } | ImageryError::Transport { .. })
    }
}

/// One provider request: a location, a camera heading and an image size.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImageRequest {
    pub location: LatLon,
    /// Degrees in `[0, 360)`.
    pub heading: f64,
    pub width: u32,
    pub height: u32,
}

impl ImageRequest {
    pub const DEFAULT_SIZE: u32 = 640;

    pub fn new(location: LatLon, heading: f64, width: u32, height: u32) -> Self {
        Self { location, heading, width, height }
    }

    pub fn validate(&self) -> Result<(), ImageryError> {
        if self.width == 0 || self.height == 0 || self.width > MAX_IMAGE_SIZE || self.height > MAX_IMAGE_SIZE {
            return Err(ImageryError::InvalidRequest(format!(
                "size {}x{} outside 1..={MAX_IMAGE_SIZE}",
                self.width, self.height
            )));
        }
        if !self.heading.is_finite() {
            return Err(ImageryError::InvalidRequest("heading is not finite".into()));
        }
        Ok(())
    }

    pub fn fov(&self) -> u32 {
        FOV_DEG
    }

    /// See [`canonical_request`].
    pub fn canonical(&self) -> String {
        canonical_request(self)
    }

    /// SHA-256 of the canonical request, 64 lowercase hex digits.
    pub fn cache_key(&self) -> String {
        sha256_hex(self.canonical().as_bytes())
    }

    /// `{first 2 hex}/{key}.bin`, relative to a cache root.
    pub fn cache_relative_path(&self) -> String {
        let key = self.cache_key();
        format!("{}/{key}.bin", &key[..2])
    }
}

/// Fixed-order query string identifying a request:
/// `size={w}x{h}&location={lat:.6},{lon:.6}&heading={heading:.1}&fov=90`.
pub fn canonical_request(req: &ImageRequest) -> String {
    format!(
        "size={}x{}&location={:.6},{:.6}&heading={:.1}&fov={FOV_DEG}",
        req.width, req.height, req.location.lat, req.location.lon, req.heading
    )
}

/// Row-major 8-bit RGB raster.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbImage {
    width: u32,
    height: u32,
    pixels: Vec<u8>,
}

impl RgbImage {
    /// Returns `None` unless `pixels.len() == 3 * width * height`.
    pub fn new(width: u32, height: u32, pixels: Vec<u8>) -> Option<Self> {
        (pixels.len() == 3 * width as usize * height as usize).then_some(Self { width, height, pixels })
    }

    pub fn filled(width: u32, height: u32, rgb: [u8; 3]) -> Self {
        let pixels = rgb.iter().copied().cycle().take(3 * width as usize * height as usize).collect();
        Self { width, height, pixels }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn pixel(&self, x: u32, y: u32) -> [u8; 3] {
        let i = 3 * (y as usize * self.width as usize + x as usize);
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    pub fn set_pixel(&mut self, x: u32, y: u32, rgb: [u8; 3]) {
        let i = 3 * (y as usize * self.width as usize + x as usize);
        self.pixels[i..i + 3].copy_from_slice(&rgb);
    }

    /// Nearest-neighbour resampling; source pixel for `x` is
    /// `floor((x + 0.5) * src_w / dst_w)`.
    pub fn resize_nearest(&self, width: u32, height: u32) -> RgbImage {
        if width == self.width && height == self.height {
            return self.clone();
        }
        let mut out = Vec::with_capacity(3 * width as usize * height as usize);
        for y in 0..height as u64 {
            let sy = ((2 * y + 1) * self.height as u64 / (2 * height as u64)) as u32;
            for x in 0..width as u64 {
                let sx = ((2 * x + 1) * self.width as u64 / (2 * width as u64)) as u32;
                out.extend_from_slice(&self.pixel(sx, sy));
            }
        }
        RgbImage { width, height, pixels: out }
    }

    /// Mean of each channel over the rectangle `[x0, x1) x [y0, y1)`.
    pub fn channel_means(&self, x0: u32, y0: u32, x1: u32, y1: u32) -> [f64; 3] {
        let mut sum = [0.0; 3];
        for y in y0..y1 {
            for x in x0..x1 {
                let p = self.pixel(x, y);
                for c in 0..3 {
                    sum[c] += f64::from(p[c]);
                }
            }
        }
        let n = f64::from((x1 - x0) * (y1 - y0)).max(1.0);
        sum.map(|s| s / n)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn req(lat: f64, lon: f64, heading: f64) -> ImageRequest {
        ImageRequest::new(LatLon::new(lat, lon).unwrap(), heading, 640, 640)
    }

    #[test]
    fn canonical_form() {
        assert_eq!(
            canonical_request(&req(42.35, -71.06, 45.0)),
            "size=640x640&location=42.350000,-71.060000&heading=45.0&fov=90"
        );
        assert!(canonical_request(&req(42.35, -71.06, 0.0)).contains("&heading=0.0&"));
        let a = req(1.0, 2.0, 10.0);
        let b = req(1.0, 2.0, 10.5);
        assert_ne!(a.canonical(), b.canonical());
        assert_ne!(a.cache_key(), b.cache_key());
        assert_eq!(a.cache_key().len(), 64);
        assert!(a.cache_relative_path().starts_with(&a.cache_key()[..2]));
    }

    #[test]
    fn request_validation() {
        assert!(req(0.0, 0.0, 0.0).validate().is_ok());
        let mut r = req(0.0, 0.0, 0.0);
        r.width = 641;
        assert!(r.validate().is_err());
        assert_eq!(r.fov(), 90);
    }

    #[test]
    fn image_buffer_invariant() {
        assert!(RgbImage::new(2, 2, vec![0; 12]).is_some());
        assert!(RgbImage::new(2, 2, vec![0; 11]).is_none());
    }

    #[test]
    fn nearest_resize() {
        let mut img = RgbImage::filled(2, 2, [0, 0, 0]);
        img.set_pixel(1, 1, [9, 9, 9]);
        let big = img.resize_nearest(4, 4);
        assert_eq!(big.pixel(0, 0), [0, 0, 0]);
        assert_eq!(big.pixel(3, 3), [9, 9, 9]);
        assert_eq!(big.pixel(2, 2), [9, 9, 9]);
        assert_eq!(big.pixel(1, 2), [0, 0, 0]);
        assert_eq!(big.resize_nearest(2, 2), img);
    }
}
