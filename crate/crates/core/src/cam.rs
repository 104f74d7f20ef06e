//! Class activation maps: the final-layer weights of one class applied to
//! the last convolutional feature maps, normalized to `[0, 1]`.

use serde::Serialize;
use thiserror::Error;

use crate::imagery::RgbImage;
use crate::nn::Tensor;

#[derive(Debug, Error, PartialEq)]
pub enum CamError {
    #[error("class index {index} out of range for {classes} classes")]
    ClassOutOfRange { index: usize, classes: usize },
    #[error("shape mismatch: feature maps {features:?}, weights {weights:?}")]
    Shape { features: Vec<usize>, weights: Vec<usize> },
    #[error("invalid output size {width}x{height}")]
    BadSize { width: usize, height: usize },
    #[error("map is {map_w}x{map_h} but image is {image_w}x{image_h}")]
    DimMismatch { map_w: usize, map_h: usize, image_w: usize, image_h: usize },
    #[error("alpha {0} is outside [0, 1]")]
    BadAlpha(f64),
}

/// Row-major heat map with values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationMap {
    pub width: usize,
    pub height: usize,
    pub values: Vec<f64>,
}

impl ActivationMap {
    pub fn at(&self, x: usize, y: usize) -> f64 {
        self.values[y * self.width + x]
    }

    /// `(x, y)` of the largest value, first in row-major order on ties.
    pub fn argmax(&self) -> (usize, usize) {
        let i = crate::nn::argmax(&self.values);
        (i % self.width, i / self.width)
    }
}

/// `raw[y,x] = sum_k W[c,k] * f_k[y,x]`, then min-max normalized. A flat
/// raw map (max = min) becomes all zeros.
pub fn class_activation_map(last_conv: &Tensor, linear_weight: &Tensor, class_index: usize) -> Result<ActivationMap, CamError> {
    let (fs, ws) = (last_conv.shape(), linear_weight.shape());
    if fs.len() != 3 || ws.len() != 2 || fs[0] != ws[1] {
        return Err(CamError::Shape { features: fs.to_vec(), weights: ws.to_vec() });
    }
    if class_index >= ws[0] {
        return Err(CamError::ClassOutOfRange { index: class_index, classes: ws[0] });
    }
    let (k, h, w) = (fs[0], fs[1], fs[2]);
    let weights = &linear_weight.data()[class_index * k..(class_index + 1) * k];
    let mut raw = vec![0.0; h * w];
    for (f, &wk) in last_conv.data().chunks(h * w).zip(weights) {
        for (r, v) in raw.iter_mut().zip(f) {
            *r += wk * v;
        }
    }
    Ok(ActivationMap { width: w, height: h, values: min_max_normalize(raw) })
}

fn min_max_normalize(mut values: Vec<f64>) -> Vec<f64> {
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = max - min;
    if span <= 0.0 || !span.is_finite() {
        values.iter_mut().for_each(|v| *v = 0.0);
    } else {
        values.iter_mut().for_each(|v| *v = ((*v - min) / span).clamp(0.0, 1.0));
    }
    values
}

/// Corner-aligned bilinear resampling: output corners coincide with input
/// corners. Only enlarging (or equal) sizes are accepted.
pub fn bilinear_upsample(map: &ActivationMap, out_w: usize, out_h: usize) -> Result<ActivationMap, CamError> {
    if out_w == 0 || out_h == 0 || out_w < map.width || out_h < map.height {
        return Err(CamError::BadSize { width: out_w, height: out_h });
    }
    let scale = |src: usize, dst: usize| if dst > 1 { (src - 1) as f64 / (dst - 1) as f64 } else { 0.0 };
    let (sx, sy) = (scale(map.width, out_w), scale(map.height, out_h));
    let mut values = Vec::with_capacity(out_w * out_h);
    for y in 0..out_h {
        let fy = y as f64 * sy;
        let y0 = (fy.floor() as usize).min(map.height - 1);
        let y1 = (y0 + 1).min(map.height - 1);
        let ty = fy - y0 as f64;
        for x in 0..out_w {
            let fx = x as f64 * sx;
            let x0 = (fx.floor() as usize).min(map.width - 1);
            let x1 = (x0 + 1).min(map.width - 1);
            let tx = fx - x0 as f64;
            let top = map.at(x0, y0) * (1.0 - tx) + map.at(x1, y0) * tx;
            let bottom = map.at(x0, y1) * (1.0 - tx) + map.at(x1, y1) * tx;
            values.push(top * (1.0 - ty) + bottom * ty);
        }
    }
    Ok(ActivationMap { width: out_w, height: out_h, values })
}

/// Colormap stops: blue, cyan, green, yellow, red at 0, 0.25, 0.5, 0.75, 1.
pub const COLORMAP_STOPS: [[f64; 3]; 5] =
    [[0.0, 0.0, 255.0], [0.0, 255.0, 255.0], [0.0, 255.0, 0.0], [255.0, 255.0, 0.0], [255.0, 0.0, 0.0]];

/// Linear interpolation along [`COLORMAP_STOPS`].
pub fn colormap(value: f64) -> [f64; 3] {
    let v = value.clamp(0.0, 1.0) * 4.0;
    let i = (v.floor() as usize).min(3);
    let t = v - i as f64;
    let (a, b) = (COLORMAP_STOPS[i], COLORMAP_STOPS[i + 1]);
    [0, 1, 2].map(|c| a[c] + (b[c] - a[c]) * t)
}

/// `out = round((1 - alpha) * image + alpha * colormap(value))` per channel.
pub fn render_overlay(image: &RgbImage, map: &ActivationMap, alpha: f64) -> Result<RgbImage, CamError> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(CamError::BadAlpha(alpha));
    }
    let (iw, ih) = (image.width() as usize, image.height() as usize);
    if map.width != iw || map.height != ih {
        return Err(CamError::DimMismatch { map_w: map.width, map_h: map.height, image_w: iw, image_h: ih });
    }
    let mut pixels = Vec::with_capacity(3 * iw * ih);
    for (px, &v) in image.pixels().chunks_exact(3).zip(&map.values) {
        let cm = colormap(v);
        for c in 0..3 {
            let blended = (1.0 - alpha) * f64::from(px[c]) + alpha * cm[c];
            pixels.push(blended.round().clamp(0.0, 255.0) as u8);
        }
    }
    Ok(RgbImage::new(image.width(), image.height(), pixels).expect("sizes match"))
}

/// Sidecar written next to each overlay.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CamSidecar {
    pub sample_id: String,
    pub class: String,
    pub cam_argmax: [usize; 2],
}
