//! Procedural stand-in for street-view imagery.
//!
//! Every image is grey luminance noise with one striped rectangle (the
//! motif) placed inside quadrant `code % 4` of the frame: 0 top-left,
//! 1 top-right, 2 bottom-left, 3 bottom-right. The motif's two stripe
//! colours identify the class.

use std::sync::atomic::{AtomicUsize, Ordering};

use super::{encode_ppm, ImageProvider, ImageRequest, ImageryError, RgbImage};
use crate::labeler::StreetContext;
use crate::rng::Rng;

/// Primary and secondary stripe colours of each class motif.
pub fn motif_palette(label: StreetContext) -> ([u8; 3], [u8; 3]) {
    use StreetContext as C;
    match label {
        C::Alley => ([150, 55, 40], [70, 30, 20]),
        C::CommercialThroughway => ([235, 165, 30], [120, 80, 20]),
        C::DowntownCommercial => ([205, 40, 165], [70, 20, 60]),
        C::DowntownResidential => ([90, 60, 205], [200, 195, 235]),
        C::Highway => ([105, 105, 105], [235, 235, 235]),
        C::HighwayRamp => ([60, 60, 60], [240, 215, 40]),
        C::Industrial => ([55, 145, 160], [25, 35, 40]),
        C::NeighborhoodCommercial => ([245, 110, 110], [250, 240, 195]),
        C::NeighborhoodResidential => ([150, 205, 85], [105, 75, 45]),
        C::Park => ([40, 175, 50], [20, 95, 30]),
        C::ResidentialThroughway => ([75, 150, 235], [230, 230, 230]),
    }
}

/// Quadrant index holding the class motif.
pub fn motif_quadrant(label: StreetContext) -> u32 {
    u32::from(label.code()) % 4
}

/// Pixel rectangle `(x0, y0, x1, y1)` of a quadrant.
pub fn quadrant_bounds(quadrant: u32, width: u32, height: u32) -> (u32, u32, u32, u32) {
    let (hw, hh) = (width / 2, height / 2);
    let x0 = if quadrant % 2 == 1 { hw } else { 0 };
    let y0 = if quadrant >= 2 { hh } else { 0 };
    let x1 = if quadrant % 2 == 1 { width } else { hw };
    let y1 = if quadrant >= 2 { height } else { hh };
    (x0, y0, x1, y1)
}

fn clamp_u8(v: f64) -> u8 {
    v.round().clamp(0.0, 255.0) as u8
}

/// Deterministic image for a class; pure in `(label, seed, width, height)`.
pub fn synth_render(label: StreetContext, seed: u64, width: u32, height: u32) -> RgbImage {
    let mut rng = Rng::seed_from_u64(seed);
    let mut img = RgbImage::filled(width, height, [0, 0, 0]);
    for y in 0..height {
        for x in 0..width {
            let lum = rng.uniform(90.0, 165.0);
            let px = [0, 1, 2].map(|_| clamp_u8(lum + rng.uniform(-8.0, 8.0)));
            img.set_pixel(x, y, px);
        }
    }

    let (qx0, qy0, qx1, qy1) = quadrant_bounds(motif_quadrant(label), width, height);
    let (qw, qh) = (qx1 - qx0, qy1 - qy0);
    let mw = ((f64::from(qw) * rng.uniform(0.6, 0.8)).round() as u32).clamp(1, qw.max(1));
    let mh = ((f64::from(qh) * rng.uniform(0.6, 0.8)).round() as u32).clamp(1, qh.max(1));
    let ox = qx0 + rng.below(u64::from(qw - mw + 1)) as u32;
    let oy = qy0 + rng.below(u64::from(qh - mh + 1)) as u32;
    let (primary, secondary) = motif_palette(label);
    let horizontal = label.code().is_multiple_of(2);
    let period = 2 + (label.code() as u32 % 3);
    for y in oy..oy + mh {
        for x in ox..ox + mw {
            let phase = if horizontal { y - oy } else { x - ox };
            let base = if (phase / period).is_multiple_of(2) { primary } else { secondary };
            let jitter = rng.uniform(-12.0, 12.0);
            img.set_pixel(x, y, base.map(|c| clamp_u8(f64::from(c) + jitter)));
        }
    }
    img
}

/// Offline provider rendering [`synth_render`] images as PPM payloads.
///
/// The render seed mixes the provider seed with the first 8 bytes of the
/// request's cache key, so each request maps to one fixed image.
#[derive(Debug, Default)]
pub struct SyntheticProvider {
    seed: u64,
    renders: AtomicUsize,
}

impl SyntheticProvider {
    pub fn new(seed: u64) -> Self {
        Self { seed, renders: AtomicUsize::new(0) }
    }

    /// Number of images rendered so far.
    pub fn render_count(&self) -> usize {
        self.renders.load(Ordering::SeqCst)
    }

    pub fn seed_for(&self, req: &ImageRequest) -> u64 {
        let key = req.cache_key();
        let prefix = u64::from_str_radix(&key[..16], 16).expect("hex key");
        prefix ^ self.seed
    }
}

impl ImageProvider for SyntheticProvider {
    fn name(&self) -> &str {
        "synthetic"
    }

    fn fetch(&self, req: &ImageRequest, label: StreetContext) -> Result<Vec<u8>, ImageryError> {
        req.validate()?;
        self.renders.fetch_add(1, Ordering::SeqCst);
        Ok(encode_ppm(&synth_render(label, self.seed_for(req), req.width, req.height)))
    }
}
