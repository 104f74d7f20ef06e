//! Exact t-SNE: perplexity-calibrated Gaussian affinities in feature space,
//! a Student-t kernel in the plane, and gradient descent with momentum,
//! per-coordinate gains and early exaggeration.
//!
//! Matrices are dense, row-major `n * n` slices.

use std::collections::BTreeMap;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::imagery::RgbImage;
use crate::labeler::StreetContext;
use crate::rng::Rng;
use crate::util::format_sig;

/// Lower bound applied to joint `P` and `Q` entries.
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Debug, Error, PartialEq)]
pub enum TsneError {
    #[error("need at least 4 points, got {0}")]
    TooFewPoints(usize),
    #[error("feature matrix has {rows} values, expected {n}x{d}")]
    Shape { rows: usize, n: usize, d: usize },
    #[error("non-finite feature at row {row}, column {col}")]
    NonFinite { row: usize, col: usize },
    #[error("perplexity {perplexity} too large for {n} points (need 3*perplexity <= n-1)")]
    Perplexity { perplexity: f64, n: usize },
    #[error("invalid t-SNE config: {0}")]
    Config(String),
    #[error("{labels} labels for {n} rows")]
    LabelCount { labels: usize, n: usize },
    #[error("embedding has {points} points but {ids} sample ids")]
    CountMismatch { points: usize, ids: usize },
    #[error("feature CSV: {0}")]
    Csv(String),
}

/// `n` feature vectors of dimension `d`, with optional per-row labels.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    n: usize,
    d: usize,
    rows: Vec<f64>,
    labels: Option<Vec<StreetContext>>,
}

impl FeatureMatrix {
    pub fn new(n: usize, d: usize, rows: Vec<f64>) -> Result<Self, TsneError> {
        if n < 4 {
            return Err(TsneError::TooFewPoints(n));
        }
        if d == 0 || rows.len() != n * d {
            return Err(TsneError::Shape { rows: rows.len(), n, d });
        }
        if let Some(i) = rows.iter().position(|v| !v.is_finite()) {
            return Err(TsneError::NonFinite { row: i / d, col: i % d });
        }
        Ok(Self { n, d, rows, labels: None })
    }

    pub fn with_labels(mut self, labels: Vec<StreetContext>) -> Result<Self, TsneError> {
        if labels.len() != self.n {
            return Err(TsneError::LabelCount { labels: labels.len(), n: self.n });
        }
        self.labels = Some(labels);
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.rows[i * self.d..(i + 1) * self.d]
    }

    pub fn labels(&self) -> Option<&[StreetContext]> {
        self.labels.as_deref()
    }

    /// Per-column zero mean, unit variance. Constant columns become zero.
    pub fn standardized(&self) -> Self {
        let (n, d) = (self.n, self.d);
        let mut rows = self.rows.clone();
        for c in 0..d {
            let mean = (0..n).map(|i| self.rows[i * d + c]).sum::<f64>() / n as f64;
            let var = (0..n).map(|i| (self.rows[i * d + c] - mean).powi(2)).sum::<f64>() / n as f64;
            let sd = var.sqrt();
            for i in 0..n {
                rows[i * d + c] = if sd > 0.0 { (self.rows[i * d + c] - mean) / sd } else { 0.0 };
            }
        }
        Self { rows, ..self.clone() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TsneConfig {
    /// `None` means `min(30, (n - 1) / 3)`.
    pub perplexity: Option<f64>,
    pub iterations: usize,
    pub learning_rate: f64,
    pub initial_momentum: f64,
    pub final_momentum: f64,
    pub momentum_switch: usize,
    pub exaggeration: f64,
    pub exaggeration_iters: usize,
    pub seed: u64,
    pub tolerance: f64,
    pub max_steps: usize,
    pub standardize: bool,
}

impl Default for TsneConfig {
    fn default() -> Self {
        Self {
            perplexity: None,
            iterations: 1000,
            learning_rate: 200.0,
            initial_momentum: 0.5,
            final_momentum: 0.8,
            momentum_switch: 250,
            exaggeration: 4.0,
            exaggeration_iters: 100,
            seed: 0,
            tolerance: 1e-5,
            max_steps: 50,
            standardize: false,
        }
    }
}

impl TsneConfig {
    pub fn perplexity_for(&self, n: usize) -> f64 {
        self.perplexity.unwrap_or_else(|| 30f64.min((n - 1) as f64 / 3.0))
    }

    fn validate(&self, n: usize) -> Result<(), TsneError> {
        let positive = [self.learning_rate, self.exaggeration, self.tolerance];
        if self.iterations == 0 || self.max_steps == 0 || positive.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
            return Err(TsneError::Config(
                "iterations, max_steps, learning_rate, exaggeration and tolerance must be positive".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.initial_momentum) || !(0.0..1.0).contains(&self.final_momentum) {
            return Err(TsneError::Config("momentum must be in [0, 1)".into()));
        }
        check_perplexity(self.perplexity_for(n), n)
    }
}

fn check_perplexity(perplexity: f64, n: usize) -> Result<(), TsneError> {
    if perplexity.is_nan() || perplexity <= 0.0 || 3.0 * perplexity > (n - 1) as f64 {
        return Err(TsneError::Perplexity { perplexity, n });
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    /// `n * 2` row-major coordinates.
    pub coords: Vec<f64>,
    pub kl: f64,
    /// KL divergence after each iteration, against the unexaggerated `P`.
    pub kl_trace: Vec<f64>,
}

impl Embedding {
    pub fn n(&self) -> usize {
        self.coords.len() / 2
    }

    pub fn point(&self, i: usize) -> [f64; 2] {
        [self.coords[2 * i], self.coords[2 * i + 1]]
    }
}

/// Squared Euclidean distances between all rows.
pub fn pairwise_sq_dists(x: &FeatureMatrix) -> Vec<f64> {
    sq_dists(&x.rows, x.n, x.d)
}

fn sq_dists(rows: &[f64], n: usize, d: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * n];
    for i in 0..n {
        let a = &rows[i * d..(i + 1) * d];
        for j in i + 1..n {
            let b = &rows[j * d..(j + 1) * d];
            let s: f64 = a.iter().zip(b).map(|(u, v)| (u - v) * (u - v)).sum();
            out[i * n + j] = s;
            out[j * n + i] = s;
        }
    }
    out
}

/// Conditional affinities `P(j|i)` with per-row precisions.
#[derive(Debug, Clone, PartialEq)]
pub struct Calibration {
    pub p: Vec<f64>,
    pub betas: Vec<f64>,
    /// Rows whose search hit `max_steps` before reaching `tol`; the last
    /// iterate is kept.
    pub unconverged: Vec<usize>,
}

/// Row `i` of `P(.|i)` for precision `beta`, and its entropy in bits.
/// Distances are shifted by the row minimum so the exponentials never all
/// underflow.
fn row_affinities(dist: &[f64], i: usize, beta: f64, min: f64, out: &mut [f64]) -> f64 {
    let mut sum = 0.0;
    for (j, (o, &d)) in out.iter_mut().zip(dist).enumerate() {
        *o = if j == i { 0.0 } else { (-beta * (d - min)).exp() };
        sum += *o;
    }
    let mut h = 0.0;
    for o in out.iter_mut() {
        *o /= sum;
        if *o > 0.0 {
            h -= *o * o.log2();
        }
    }
    h
}

/// Bisection on each row's precision so that the entropy of `P(.|i)` is
/// `log2(perplexity)` within `tol` bits.
pub fn perplexity_calibrate(
    dist: &[f64],
    n: usize,
    perplexity: f64,
    tol: f64,
    max_steps: usize,
) -> Result<Calibration, TsneError> {
    if n < 4 {
        return Err(TsneError::TooFewPoints(n));
    }
    check_perplexity(perplexity, n)?;
    let target = perplexity.log2();
    let mut p = vec![0.0; n * n];
    let mut betas = vec![0.0; n];
    let mut unconverged = Vec::new();
    for i in 0..n {
        let row = &dist[i * n..(i + 1) * n];
        let others = || row.iter().enumerate().filter(|&(j, _)| j != i).map(|(_, &d)| d);
        let min = others().fold(f64::INFINITY, f64::min);
        let spread = others().map(|d| d - min).sum::<f64>() / (n - 1) as f64;
        let mut beta = if spread > 0.0 { 1.0 / spread } else { 1.0 };
        let (mut lo, mut hi) = (0.0, f64::INFINITY);
        let out = &mut p[i * n..(i + 1) * n];
        let mut converged = false;
        for _ in 0..max_steps {
            let h = row_affinities(row, i, beta, min, out);
            if (h - target).abs() <= tol {
                converged = true;
                break;
            }
            if h > target {
                lo = beta;
                beta = if hi.is_finite() { (beta + hi) / 2.0 } else { beta * 2.0 };
            } else {
                hi = beta;
                beta = (beta + lo) / 2.0;
            }
        }
        if !converged {
            // the loop exits having moved beta once more; keep the final iterate consistent
            let h = row_affinities(row, i, beta, min, out);
            if (h - target).abs() <= tol {
                converged = true;
            }
        }
        if !converged {
            unconverged.push(i);
        }
        betas[i] = beta;
    }
    Ok(Calibration { p, betas, unconverged })
}

/// `P_ij = (P(j|i) + P(i|j)) / 2n`, floored at [`PROB_FLOOR`] off the
/// diagonal and renormalized to total mass 1.
pub fn symmetrize(pcond: &[f64], n: usize) -> Vec<f64> {
    let mut p = vec![0.0; n * n];
    let mut total = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                let v = ((pcond[i * n + j] + pcond[j * n + i]) / (2.0 * n as f64)).max(PROB_FLOOR);
                p[i * n + j] = v;
                total += v;
            }
        }
    }
    p.iter_mut().for_each(|v| *v /= total);
    p
}

/// `sum p * ln(p / q)` over entries with `p > 0`.
pub fn kl_divergence(p: &[f64], q: &[f64]) -> f64 {
    p.iter().zip(q).filter(|(&a, _)| a > 0.0).map(|(&a, &b)| a * (a / b).ln()).sum()
}

/// Student-t kernel values `w_ij = 1 / (1 + |y_i - y_j|^2)` (zero diagonal)
/// and their sum.
fn student_t(y: &[f64], n: usize) -> (Vec<f64>, f64) {
    let mut w = vec![0.0; n * n];
    let mut sum = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            let dx = y[2 * i] - y[2 * j];
            let dy = y[2 * i + 1] - y[2 * j + 1];
            let v = 1.0 / (1.0 + dx * dx + dy * dy);
            w[i * n + j] = v;
            w[j * n + i] = v;
            sum += 2.0 * v;
        }
    }
    (w, sum)
}

/// Low-dimensional joint affinities `Q`, floored at [`PROB_FLOOR`] off the
/// diagonal.
pub fn low_dim_affinities(y: &[f64], n: usize) -> Vec<f64> {
    let (mut w, sum) = student_t(y, n);
    for i in 0..n {
        for j in 0..n {
            w[i * n + j] = if i == j { 0.0 } else { (w[i * n + j] / sum).max(PROB_FLOOR) };
        }
    }
    w
}

/// The t-SNE objective `KL(P || Q(y))` for 2-D coordinates `y`.
pub fn tsne_objective(p: &[f64], y: &[f64], n: usize) -> f64 {
    kl_divergence(p, &low_dim_affinities(y, n))
}

/// `dC/dy_i = 4 * sum_j (p_ij - q_ij) (y_i - y_j) / (1 + |y_i - y_j|^2)`.
pub fn tsne_gradient(p: &[f64], y: &[f64], n: usize) -> Vec<f64> {
    let (w, sum) = student_t(y, n);
    let mut grad = vec![0.0; 2 * n];
    for i in 0..n {
        let (mut gx, mut gy) = (0.0, 0.0);
        for j in 0..n {
            if i == j {
                continue;
            }
            let wij = w[i * n + j];
            let m = (p[i * n + j] - wij / sum) * wij;
            gx += m * (y[2 * i] - y[2 * j]);
            gy += m * (y[2 * i + 1] - y[2 * j + 1]);
        }
        grad[2 * i] = 4.0 * gx;
        grad[2 * i + 1] = 4.0 * gy;
    }
    grad
}

const MIN_GAIN: f64 = 0.01;

/// Embeds `x` in two dimensions.
pub fn tsne_embed(x: &FeatureMatrix, cfg: &TsneConfig) -> Result<Embedding, TsneError> {
    let n = x.n;
    cfg.validate(n)?;
    let standardized;
    let x = if cfg.standardize {
        standardized = x.standardized();
        &standardized
    } else {
        x
    };
    let dist = pairwise_sq_dists(x);
    let cal = perplexity_calibrate(&dist, n, cfg.perplexity_for(n), cfg.tolerance, cfg.max_steps)?;
    let p = symmetrize(&cal.p, n);

    let mut rng = Rng::seed_from_u64(cfg.seed);
    let mut y: Vec<f64> = (0..2 * n).map(|_| 1e-2 * rng.gaussian()).collect();
    let mut velocity = vec![0.0; 2 * n];
    let mut gains = vec![1.0f64; 2 * n];
    let exaggerated: Vec<f64> = p.iter().map(|v| v * cfg.exaggeration).collect();
    let mut kl_trace = Vec::with_capacity(cfg.iterations);

    for it in 0..cfg.iterations {
        let target = if it < cfg.exaggeration_iters { &exaggerated } else { &p };
        let grad = tsne_gradient(target, &y, n);
        let momentum = if it < cfg.momentum_switch { cfg.initial_momentum } else { cfg.final_momentum };
        for k in 0..2 * n {
            gains[k] = if (grad[k] > 0.0) != (velocity[k] > 0.0) { gains[k] + 0.2 } else { gains[k] * 0.8 };
            gains[k] = gains[k].max(MIN_GAIN);
            velocity[k] = momentum * velocity[k] - cfg.learning_rate * gains[k] * grad[k];
            y[k] += velocity[k];
        }
        for c in 0..2 {
            let mean = (0..n).map(|i| y[2 * i + c]).sum::<f64>() / n as f64;
            (0..n).for_each(|i| y[2 * i + c] -= mean);
        }
        kl_trace.push(tsne_objective(&p, &y, n));
    }
    let kl = *kl_trace.last().expect("at least one iteration");
    Ok(Embedding { coords: y, kl, kl_trace })
}

/// `sample_id,label,x,y` rows with coordinates at 9 significant digits.
pub fn export_embedding(
    embedding: &Embedding,
    sample_ids: &[String],
    labels: Option<&[StreetContext]>,
) -> Result<String, TsneError> {
    let n = embedding.n();
    if sample_ids.len() != n {
        return Err(TsneError::CountMismatch { points: n, ids: sample_ids.len() });
    }
    if let Some(l) = labels {
        if l.len() != n {
            return Err(TsneError::LabelCount { labels: l.len(), n });
        }
    }
    let mut out = String::from("sample_id,label,x,y\n");
    for (i, id) in sample_ids.iter().enumerate() {
        let label = labels.map(|l| l[i].name()).unwrap_or("");
        let [x, y] = embedding.point(i);
        out.push_str(&format!("{id},{label},{},{}\n", format_sig(x, 9), format_sig(y, 9)));
    }
    Ok(out)
}

/// One parsed embedding row: `(sample_id, label, [x, y])`.
pub type EmbeddingRow = (String, Option<StreetContext>, [f64; 2]);

/// Reads an embedding CSV back into rows.
pub fn parse_embedding_csv(text: &str) -> Result<Vec<EmbeddingRow>, TsneError> {
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    let mut out = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| TsneError::Csv(e.to_string()))?;
        let field = |k: usize| rec.get(k).ok_or_else(|| TsneError::Csv(format!("row has {} fields", rec.len())));
        let label = match field(1)? {
            "" => None,
            s => Some(StreetContext::from_str(s).map_err(|e| TsneError::Csv(e.to_string()))?),
        };
        let num = |k: usize| field(k)?.parse::<f64>().map_err(|e| TsneError::Csv(e.to_string()));
        out.push((field(0)?.to_string(), label, [num(2)?, num(3)?]));
    }
    Ok(out)
}

pub const SCATTER_SIZE: u32 = 800;

/// Distinct colour per class code; unlabeled points are black.
pub fn class_colour(label: Option<StreetContext>) -> [u8; 3] {
    const PALETTE: [[u8; 3]; 11] = [
        [230, 25, 75],
        [60, 180, 75],
        [0, 130, 200],
        [245, 130, 48],
        [145, 30, 180],
        [70, 240, 240],
        [240, 50, 230],
        [128, 128, 0],
        [0, 128, 128],
        [170, 110, 40],
        [128, 0, 0],
    ];
    label.map(|l| PALETTE[l.code() as usize]).unwrap_or([0, 0, 0])
}

/// 800x800 scatter on white: each point is a 3x3 square in its class colour.
pub fn render_scatter(embedding: &Embedding, labels: Option<&[StreetContext]>) -> RgbImage {
    let size = SCATTER_SIZE;
    let mut img = RgbImage::filled(size, size, [255, 255, 255]);
    let n = embedding.n();
    if n == 0 {
        return img;
    }
    let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
    for i in 0..n {
        let p = embedding.point(i);
        for c in 0..2 {
            lo[c] = lo[c].min(p[c]);
            hi[c] = hi[c].max(p[c]);
        }
    }
    let margin = 20.0;
    let span = f64::from(size) - 2.0 * margin;
    let to_px = |v: f64, c: usize| {
        let r = hi[c] - lo[c];
        let t = if r > 0.0 { (v - lo[c]) / r } else { 0.5 };
        (margin + t * span).round() as i64
    };
    for i in 0..n {
        let [x, y] = embedding.point(i);
        // image y grows downward
        let (px, py) = (to_px(x, 0), i64::from(size) - 1 - to_px(y, 1));
        let colour = class_colour(labels.map(|l| l[i]));
        for yy in py - 1..=py + 1 {
            for xx in px - 1..=px + 1 {
                if (0..i64::from(size)).contains(&xx) && (0..i64::from(size)).contains(&yy) {
                    img.set_pixel(xx as u32, yy as u32, colour);
                }
            }
        }
    }
    img
}

/// Feature CSV: `sample_id,label,f0..f{d-1}` (label may be empty).
pub fn write_feature_csv(sample_ids: &[String], x: &FeatureMatrix) -> String {
    let mut out = String::from("sample_id,label");
    for k in 0..x.d {
        out.push_str(&format!(",f{k}"));
    }
    out.push('\n');
    for (i, id) in sample_ids.iter().enumerate().take(x.n) {
        let label = x.labels().map(|l| l[i].name()).unwrap_or("");
        out.push_str(&format!("{id},{label}"));
        for v in x.row(i) {
            out.push_str(&format!(",{v:?}"));
        }
        out.push('\n');
    }
    out
}

/// Parses a feature CSV. Labels are attached only when every row has one.
pub fn parse_feature_csv(text: &str) -> Result<(Vec<String>, FeatureMatrix), TsneError> {
    let err = |m: String| TsneError::Csv(m);
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    let header = reader.headers().map_err(|e| err(e.to_string()))?.clone();
    if header.len() < 3 || &header[0] != "sample_id" || &header[1] != "label" {
        return Err(err("header must start with sample_id,label and have at least one feature column".into()));
    }
    for (k, h) in header.iter().skip(2).enumerate() {
        if h != format!("f{k}") {
            return Err(err(format!("feature column {k} is named '{h}'")));
        }
    }
    let d = header.len() - 2;
    let (mut ids, mut rows, mut labels) = (Vec::new(), Vec::new(), BTreeMap::new());
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| err(e.to_string()))?;
        ids.push(rec[0].to_string());
        if !rec[1].is_empty() {
            labels.insert(i, StreetContext::from_str(&rec[1]).map_err(|e| err(format!("row {i}: {e}")))?);
        }
        for v in rec.iter().skip(2) {
            rows.push(v.trim().parse::<f64>().map_err(|e| err(format!("row {i}: {e}")))?);
        }
    }
    let n = ids.len();
    let mut x = FeatureMatrix::new(n, d, rows)?;
    if n > 0 && labels.len() == n {
        x = x.with_labels(labels.into_values().collect())?;
    }
    Ok((ids, x))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn matrix(n: usize, d: usize, seed: u64) -> FeatureMatrix {
        let mut rng = Rng::seed_from_u64(seed);
        FeatureMatrix::new(n, d, (0..n * d).map(|_| rng.gaussian()).collect()).unwrap()
    }

    #[test]
    fn distances_small() {
        let x = FeatureMatrix::new(4, 1, vec![0.0, 3.0, 3.0, 3.0]).unwrap();
        let d = pairwise_sq_dists(&x);
        assert_eq!(&d[..2], &[0.0, 9.0]);
        assert_eq!(d[4], 9.0);
        assert_eq!(d[4 + 2], 0.0);
    }

    #[test]
    fn equidistant_rows_are_uniform() {
        // 4 points, all pairwise distances 1: any beta yields a uniform row
        let mut dist = vec![1.0; 16];
        (0..4).for_each(|i| dist[i * 4 + i] = 0.0);
        let cal = perplexity_calibrate(&dist, 4, 1.0, 1e-5, 50).unwrap();
        // entropy is log2(3) for every beta, far from log2(1): flagged, rows still uniform
        assert_eq!(cal.unconverged, vec![0, 1, 2, 3]);
        for i in 0..4 {
            for j in 0..4 {
                let want = if i == j { 0.0 } else { 1.0 / 3.0 };
                assert!((cal.p[i * 4 + j] - want).abs() < 1e-15);
            }
        }
        let p = symmetrize(&cal.p, 4);
        for (k, v) in p.iter().enumerate() {
            let want = if k % 5 == 0 { 0.0 } else { 1.0 / 12.0 };
            assert!((v - want).abs() < 1e-15);
        }
    }

    #[test]
    fn symmetrize_three_equidistant() {
        let pcond = [0.0, 0.5, 0.5, 0.5, 0.0, 0.5, 0.5, 0.5, 0.0];
        let p = symmetrize(&pcond, 3);
        for (k, v) in p.iter().enumerate() {
            let want = if k % 4 == 0 { 0.0 } else { 1.0 / 6.0 };
            assert!((v - want).abs() < 1e-15);
        }
    }

    #[test]
    fn calibration_hits_entropy() {
        let x = matrix(30, 5, 3);
        let cal = perplexity_calibrate(&pairwise_sq_dists(&x), 30, 5.0, 1e-5, 50).unwrap();
        assert!(cal.unconverged.is_empty());
        for i in 0..30 {
            let row = &cal.p[i * 30..(i + 1) * 30];
            let h: f64 = row.iter().filter(|&&v| v > 0.0).map(|v| -v * v.log2()).sum();
            assert!((h - 5f64.log2()).abs() <= 1e-5);
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn duplicates_stay_finite() {
        let mut rows = vec![0.0; 12];
        rows[6..].copy_from_slice(&[1.0, 2.0, 5.0, 1.0, 0.5, -3.0]);
        let x = FeatureMatrix::new(6, 2, rows).unwrap();
        let cal = perplexity_calibrate(&pairwise_sq_dists(&x), 6, 1.5, 1e-5, 50).unwrap();
        assert!(cal.betas.iter().all(|b| b.is_finite()));
        assert!(cal.p.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn perplexity_limit() {
        let d = vec![0.0; 100];
        assert_eq!(perplexity_calibrate(&d, 10, 3.5, 1e-5, 50), Err(TsneError::Perplexity { perplexity: 3.5, n: 10 }));
        assert!(perplexity_calibrate(&d, 10, 3.0, 1e-5, 50).is_ok());
    }

    #[test]
    fn kl_closed_forms() {
        let p = [0.2, 0.3, 0.5];
        assert_eq!(kl_divergence(&p, &p), 0.0);
        let kl = kl_divergence(&[1.0, PROB_FLOOR], &[0.5, 0.5]);
        let want = 2f64.ln() + PROB_FLOOR * (PROB_FLOOR / 0.5).ln();
        assert!((kl - want).abs() < 1e-15);
        assert!(kl > 0.0 && kl < 2f64.ln());
    }

    #[test]
    fn default_perplexity_caps() {
        let cfg = TsneConfig::default();
        assert_eq!(cfg.perplexity_for(1000), 30.0);
        assert_eq!(cfg.perplexity_for(31), 10.0);
    }

    #[test]
    fn embedding_is_deterministic() {
        let x = matrix(20, 3, 9);
        let cfg = TsneConfig { iterations: 150, seed: 5, ..Default::default() };
        let a = tsne_embed(&x, &cfg).unwrap();
        assert_eq!(a, tsne_embed(&x, &cfg).unwrap());
        assert_eq!(a.kl_trace.len(), 150);
        assert!(a.kl >= 0.0 && a.coords.iter().all(|v| v.is_finite()));
        let other = tsne_embed(&x, &TsneConfig { seed: 6, ..cfg }).unwrap();
        assert_ne!(a.coords, other.coords);
    }

    #[test]
    fn export_and_parse() {
        let e = Embedding { coords: vec![0.1, -2.5, 1.0 / 3.0, 7.0, 1e-7, 123456.789], kl: 0.0, kl_trace: vec![] };
        let ids: Vec<String> = ["a", "b", "c"].iter().map(|s| s.to_string()).collect();
        let labels = [StreetContext::Park, StreetContext::Alley, StreetContext::Park];
        let csv = export_embedding(&e, &ids, Some(&labels)).unwrap();
        assert_eq!(csv.lines().count(), 4);
        let back = parse_embedding_csv(&csv).unwrap();
        for (i, (id, label, xy)) in back.iter().enumerate() {
            assert_eq!(id, &ids[i]);
            assert_eq!(*label, Some(labels[i]));
            let [x, y] = e.point(i);
            assert_eq!(xy[0], crate::util::round_sig(x, 9));
            assert_eq!(xy[1], crate::util::round_sig(y, 9));
        }
        assert!(export_embedding(&e, &ids[..2], None).is_err());
    }

    #[test]
    fn scatter_is_mostly_background() {
        let x = matrix(40, 3, 2);
        let e = tsne_embed(&x, &TsneConfig { iterations: 50, ..Default::default() }).unwrap();
        let img = render_scatter(&e, None);
        assert_eq!((img.width(), img.height()), (800, 800));
        let ink = img.pixels().chunks(3).filter(|p| p != &[255, 255, 255]).count();
        assert!(ink > 0 && (ink as f64) < 0.05 * 640_000.0);
    }

    #[test]
    fn feature_csv_round_trip() {
        let x = matrix(5, 3, 1).with_labels(vec![StreetContext::Park; 5]).unwrap();
        let ids: Vec<String> = (0..5).map(|i| format!("p{i:06}")).collect();
        let (ids2, x2) = parse_feature_csv(&write_feature_csv(&ids, &x)).unwrap();
        assert_eq!(ids2, ids);
        assert_eq!(x2, x);
        assert!(parse_feature_csv("sample_id,label,g0\na,,1\n").is_err());
    }

    #[test]
    fn standardize_columns() {
        let x = FeatureMatrix::new(4, 2, vec![1.0, 5.0, 2.0, 5.0, 3.0, 5.0, 4.0, 5.0]).unwrap().standardized();
        let col0: Vec<f64> = (0..4).map(|i| x.row(i)[0]).collect();
        assert!(col0.iter().sum::<f64>().abs() < 1e-12);
        assert!((col0.iter().map(|v| v * v).sum::<f64>() / 4.0 - 1.0).abs() < 1e-12);
        assert!((0..4).all(|i| x.row(i)[1] == 0.0));
    }
}
