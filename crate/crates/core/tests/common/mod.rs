//! Shared oracles for the integration and acceptance tests.
#![allow(dead_code)]

use streetctx::imagery::{DiskCache, SyntheticProvider};
use streetctx::labeler::{StreetContext, DEFAULT_COMMERCIAL_THRESHOLD};
use streetctx::nn::*;
use streetctx::pipeline::{fetch_manifest, label_segments, sample_manifest, synthetic_city, SYNTHETIC_CLASSES};
use streetctx::rng::Rng;
use streetctx::sampler::SampleRecord;
use streetctx::tsne::FeatureMatrix;

pub const EPS: f64 = 1e-5;

pub fn tensor(rng: &mut Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.gaussian()).collect()).unwrap()
}

/// Values bounded away from zero, so ReLU kinks sit far outside `EPS`.
pub fn tensor_off_zero(rng: &mut Rng, shape: &[usize]) -> Tensor {
    let mut t = tensor(rng, shape);
    t.data_mut().iter_mut().for_each(|v| *v = v.signum() * (0.05 + v.abs()));
    t
}

/// Distinct values at least 0.01 apart, so max-pool winners are stable
/// under `EPS` perturbations.
pub fn tensor_distinct(rng: &mut Rng, shape: &[usize]) -> Tensor {
    let n: usize = shape.iter().product();
    let mut order: Vec<usize> = (0..n).collect();
    rng.shuffle(&mut order);
    Tensor::from_vec(shape, order.iter().map(|&i| i as f64 * 0.01 - 0.5).collect()).unwrap()
}

/// Central-difference gradient of `L(x) = sum(f(x) * r)`. The difference
/// `f(x+e) - f(x-e)` is formed elementwise before the weighted sum, which
/// keeps untouched outputs exactly cancelled.
pub fn numeric_grad(x: &Tensor, r: &Tensor, f: impl Fn(&Tensor) -> Tensor) -> Vec<f64> {
    (0..x.len())
        .map(|i| {
            let mut xp = x.clone();
            xp.data_mut()[i] += EPS;
            let mut xm = x.clone();
            xm.data_mut()[i] -= EPS;
            let (op, om) = (f(&xp), f(&xm));
            op.data().iter().zip(om.data()).zip(r.data()).map(|((a, b), w)| (a - b) * w).sum::<f64>() / (2.0 * EPS)
        })
        .collect()
}

/// Central-difference gradient of a scalar function.
pub fn numeric_grad_scalar(x: &[f64], f: impl Fn(&[f64]) -> f64) -> Vec<f64> {
    (0..x.len())
        .map(|i| {
            let mut xp = x.to_vec();
            xp[i] += EPS;
            let mut xm = x.to_vec();
            xm[i] -= EPS;
            (f(&xp) - f(&xm)) / (2.0 * EPS)
        })
        .collect()
}

/// Largest `|a - n| / max(|a|, |n|, 1e-8)` over all elements.
pub fn max_rel_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    analytic.iter().zip(numeric).map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(1e-8)).fold(0.0, f64::max)
}

/// Per-layer worst relative errors for one randomized shape draw.
pub fn gradcheck_round(seed: u64) -> Vec<(&'static str, f64)> {
    let mut rng = Rng::seed_from_u64(seed);
    let mut pick = |lo: usize, hi: usize| lo + rng.below((hi - lo + 1) as u64) as usize;
    let (n, c, h, w) = (pick(1, 2), pick(1, 3), pick(4, 7), pick(4, 7));
    let (o, k, stride, pad) = (pick(1, 4), pick(1, 3), pick(1, 2), pick(0, 1));
    let (window, pool_stride) = (pick(2, 3), pick(1, 2));
    let (ln, lk, lc) = (pick(1, 3), pick(1, 6), pick(1, 5));
    let (sn, sc) = (pick(1, 4), pick(2, 6));
    let mut rng = Rng::seed_from_u64(seed ^ 0xabcdef);
    let mut out = Vec::new();

    // convolution: input, kernel and bias
    let x = tensor(&mut rng, &[n, c, h, w]);
    let ker = tensor(&mut rng, &[o, c, k, k]);
    let bias = tensor(&mut rng, &[o]);
    let y = conv2d_forward(&x, &ker, &bias, stride, pad).unwrap();
    let r = tensor(&mut rng, y.shape());
    let (dx, dk, db) = conv2d_backward(&x, &ker, stride, pad, &r, true).unwrap();
    let nx = numeric_grad(&x, &r, |v| conv2d_forward(v, &ker, &bias, stride, pad).unwrap());
    let nk = numeric_grad(&ker, &r, |v| conv2d_forward(&x, v, &bias, stride, pad).unwrap());
    let nb = numeric_grad(&bias, &r, |v| conv2d_forward(&x, &ker, v, stride, pad).unwrap());
    out.push(("conv input", max_rel_error(dx.data(), &nx)));
    out.push(("conv kernel", max_rel_error(dk.data(), &nk)));
    out.push(("conv bias", max_rel_error(db.data(), &nb)));

    let x = tensor_off_zero(&mut rng, &[n, c, h, w]);
    let r = tensor(&mut rng, x.shape());
    let dx = relu_backward(&x, &r).unwrap();
    out.push(("relu", max_rel_error(dx.data(), &numeric_grad(&x, &r, relu_forward))));

    let x = tensor_distinct(&mut rng, &[n, c, h, w]);
    let (y, arg) = maxpool_forward(&x, window, pool_stride).unwrap();
    let r = tensor(&mut rng, y.shape());
    let dx = maxpool_backward(x.shape(), &arg, &r).unwrap();
    let nx = numeric_grad(&x, &r, |v| maxpool_forward(v, window, pool_stride).unwrap().0);
    out.push(("maxpool", max_rel_error(dx.data(), &nx)));

    let x = tensor(&mut rng, &[n, c, h, w]);
    let r = tensor(&mut rng, &[n, c]);
    let dx = global_avg_pool_backward(x.shape(), &r).unwrap();
    let nx = numeric_grad(&x, &r, |v| global_avg_pool_forward(v).unwrap());
    out.push(("global avg pool", max_rel_error(dx.data(), &nx)));

    let x = tensor(&mut rng, &[ln, lk]);
    let wt = tensor(&mut rng, &[lc, lk]);
    let b = tensor(&mut rng, &[lc]);
    let r = tensor(&mut rng, &[ln, lc]);
    let (dx, dw, db) = linear_backward(&x, &wt, &r).unwrap();
    out.push(("linear input", max_rel_error(dx.data(), &numeric_grad(&x, &r, |v| linear_forward(v, &wt, &b).unwrap()))));
    out.push(("linear weight", max_rel_error(dw.data(), &numeric_grad(&wt, &r, |v| linear_forward(&x, v, &b).unwrap()))));
    out.push(("linear bias", max_rel_error(db.data(), &numeric_grad(&b, &r, |v| linear_forward(&x, &wt, v).unwrap()))));

    let logits = tensor(&mut rng, &[sn, sc]);
    let labels: Vec<usize> = (0..sn).map(|_| rng.below(sc as u64) as usize).collect();
    let (_, dl) = softmax_cross_entropy(&logits, &labels).unwrap();
    let nl = numeric_grad_scalar(logits.data(), |v| {
        softmax_cross_entropy(&Tensor::from_vec(&[sn, sc], v.to_vec()).unwrap(), &labels).unwrap().0
    });
    out.push(("softmax cross-entropy", max_rel_error(dl.data(), &nl)));
    out
}

/// Labeled synthetic city, manifest and fetched cache at `size` pixels.
pub fn synthetic_corpus(per_class: usize, n: usize, size: u32, cache: &DiskCache) -> Vec<SampleRecord> {
    let city = synthetic_city(per_class, &SYNTHETIC_CLASSES, 3);
    let labeled = label_segments(city, None, "SanFrancisco", DEFAULT_COMMERCIAL_THRESHOLD).unwrap();
    let manifest = sample_manifest(&labeled, n, 7, (size, size)).unwrap();
    let summary = fetch_manifest(&manifest, &SyntheticProvider::new(0), cache, (size, size), 2);
    assert!(summary.first_failure().is_none());
    manifest
}

/// Silhouette score of 2-D points with the given cluster labels.
pub fn silhouette(points: &[[f64; 2]], labels: &[StreetContext]) -> f64 {
    let n = points.len();
    let dist = |i: usize, j: usize| ((points[i][0] - points[j][0]).powi(2) + (points[i][1] - points[j][1]).powi(2)).sqrt();
    let mut total = 0.0;
    for i in 0..n {
        let mut by_cluster: std::collections::BTreeMap<u8, (f64, usize)> = Default::default();
        for (j, label) in labels.iter().enumerate() {
            if i != j {
                let e = by_cluster.entry(label.code()).or_insert((0.0, 0));
                e.0 += dist(i, j);
                e.1 += 1;
            }
        }
        let own = labels[i].code();
        let a = by_cluster.get(&own).map(|(s, c)| s / *c as f64).unwrap_or(0.0);
        let b = by_cluster.iter().filter(|(k, _)| **k != own).map(|(_, (s, c))| s / *c as f64).fold(f64::INFINITY, f64::min);
        total += if a.max(b) > 0.0 { (b - a) / a.max(b) } else { 0.0 };
    }
    total / n as f64
}

/// Independent PolyLine `.shp` encoder, written from the file layout rather
/// than shared with the library writer. Points are `(lon, lat)`.
pub fn shp_bytes(records: &[Vec<Vec<(f64, f64)>>]) -> Vec<u8> {
    fn bbox<'a>(pts: impl Iterator<Item = &'a (f64, f64)>) -> [f64; 4] {
        pts.fold([f64::MAX, f64::MAX, f64::MIN, f64::MIN], |b, &(x, y)| [b[0].min(x), b[1].min(y), b[2].max(x), b[3].max(y)])
    }
    let mut body = Vec::new();
    for (i, parts) in records.iter().enumerate() {
        let mut content = Vec::new();
        content.extend(3i32.to_le_bytes());
        for v in bbox(parts.iter().flatten()) {
            content.extend(v.to_le_bytes());
        }
        content.extend((parts.len() as i32).to_le_bytes());
        content.extend((parts.iter().map(Vec::len).sum::<usize>() as i32).to_le_bytes());
        let mut start = 0i32;
        for p in parts {
            content.extend(start.to_le_bytes());
            start += p.len() as i32;
        }
        for &(x, y) in parts.iter().flatten() {
            content.extend(x.to_le_bytes());
            content.extend(y.to_le_bytes());
        }
        body.extend((i as i32 + 1).to_be_bytes());
        body.extend(((content.len() / 2) as i32).to_be_bytes());
        body.extend(content);
    }
    let mut out = Vec::new();
    out.extend(9994i32.to_be_bytes());
    out.extend([0u8; 20]);
    out.extend((((100 + body.len()) / 2) as i32).to_be_bytes());
    out.extend(1000i32.to_le_bytes());
    out.extend(3i32.to_le_bytes());
    for v in bbox(records.iter().flatten().flatten()) {
        out.extend(v.to_le_bytes());
    }
    out.extend([0u8; 32]);
    out.extend(body);
    out
}

/// Six points, random symmetric P and layout.
pub fn toy_problem() -> (Vec<f64>, Vec<f64>) {
    let n = 6;
    let mut rng = Rng::seed_from_u64(6);
    let mut p = vec![0.0; n * n];
    for i in 0..n {
        for j in i + 1..n {
            let v = rng.next_f64() + 0.1;
            p[i * n + j] = v;
            p[j * n + i] = v;
        }
    }
    let s: f64 = p.iter().sum();
    p.iter_mut().for_each(|v| *v /= s);
    let y = (0..2 * n).map(|_| rng.gaussian()).collect();
    (p, y)
}

/// Three 10-D Gaussian blobs of 30 points, centres 10 apart, unit noise.
pub fn three_clusters(seed: u64) -> FeatureMatrix {
    let mut rng = Rng::seed_from_u64(seed);
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for (c, label) in [StreetContext::Alley, StreetContext::Park, StreetContext::Highway].into_iter().enumerate() {
        for _ in 0..30 {
            for k in 0..10 {
                let centre = if k == c { 10.0 / 2f64.sqrt() } else { 0.0 };
                rows.push(centre + rng.gaussian());
            }
            labels.push(label);
        }
    }
    FeatureMatrix::new(90, 10, rows).unwrap().with_labels(labels).unwrap()
}

/// Small pipeline settings shared by the CLI and determinism tests.
pub const SMALL_CONFIG: &str = r#"{
  "sampler.n": 120,
  "imagery.width": 64,
  "imagery.height": 64,
  "train.epochs": 3,
  "tsne.iterations": 300,
  "cam.limit": 4
}"#;

pub fn streetctx(dir: &std::path::Path, args: &[&str]) -> std::process::Output {
    std::process::Command::new(env!("CARGO_BIN_EXE_streetctx")).current_dir(dir).args(args).output().expect("binary runs")
}

/// Runs a command with `--config config.json`, panicking on failure.
pub fn stage(dir: &std::path::Path, args: &[&str]) -> String {
    let mut full = args.to_vec();
    full.extend(["--config", "config.json"]);
    let out = streetctx(dir, &full);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

/// Every stage from a synthetic city to the embedding, in `dir`.
pub fn run_pipeline(dir: &std::path::Path) {
    std::fs::write(dir.join("config.json"), SMALL_CONFIG).unwrap();
    stage(dir, &["synth-city", "--per-class", "40", "--out", "city.geojson"]);
    stage(dir, &["ingest", "--geojson", "city.geojson"]);
    stage(dir, &["label"]);
    stage(dir, &["sample"]);
    stage(dir, &["fetch"]);
    stage(dir, &["train"]);
    stage(dir, &["eval"]);
    stage(dir, &["cam"]);
    stage(dir, &["embed"]);
}
