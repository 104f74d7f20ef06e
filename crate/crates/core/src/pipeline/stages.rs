//! The pipeline stages as plain functions over in-memory values and files.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::cam::{bilinear_upsample, class_activation_map, render_overlay, ActivationMap, CamError, CamSidecar};
use crate::eval::{report, split_dataset, EvalError, Report, SplitAssignment};
use crate::geodata::{parse_geojson_streets, parse_shapefile_polylines, GeoError, SegmentCollection};
use crate::imagery::{DiskCache, FetchOutcome, Fetcher, ImageDecoder, ImageProvider, ImageryError, PpmDecoder, RgbImage};
use crate::labeler::{context_catalog, label_collection, parse_attribute_csv, LabelError, StreetContext};
use crate::nn::{image_tensor, train, EpochStats, LabeledImage, ModelParams, NnError, Prediction, TrainConfig};
use crate::sampler::{build_manifest_sized, SampleError, SampleRecord};
use crate::tsne::{tsne_embed, Embedding, FeatureMatrix, TsneConfig, TsneError};

/// Failure of a stage, prefixed with the module that raised it.
#[derive(Debug, Error)]
pub enum StageError {
    #[error("geodata: {0}")]
    Geo(#[from] GeoError),
    #[error("labeler: {0}")]
    Label(#[from] LabelError),
    #[error("sampler: {0}")]
    Sample(#[from] SampleError),
    #[error("imagery: {0}")]
    Imagery(#[from] ImageryError),
    #[error("nn: {0}")]
    Nn(#[from] NnError),
    #[error("cam: {0}")]
    Cam(#[from] CamError),
    #[error("tsne: {0}")]
    Tsne(#[from] TsneError),
    #[error("eval: {0}")]
    Eval(#[from] EvalError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{0}")]
    Invalid(String),
}

pub fn read_bytes(path: &Path) -> Result<Vec<u8>, StageError> {
    fs::read(path).map_err(|source| StageError::Io { path: path.to_path_buf(), source })
}

pub fn read_text(path: &Path) -> Result<String, StageError> {
    fs::read_to_string(path).map_err(|source| StageError::Io { path: path.to_path_buf(), source })
}

/// Writes `bytes`, creating parent directories.
pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<(), StageError> {
    let io = |source| StageError::Io { path: path.to_path_buf(), source };
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(io)?;
    }
    fs::write(path, bytes).map_err(io)
}

pub fn ingest_geojson(path: &Path) -> Result<SegmentCollection, StageError> {
    Ok(parse_geojson_streets(&read_text(path)?)?)
}

pub fn ingest_shapefile(path: &Path, labels: Option<&Path>) -> Result<SegmentCollection, StageError> {
    let labels = labels.map(read_text).transpose()?;
    Ok(parse_shapefile_polylines(&read_bytes(path)?, labels.as_deref())?)
}

/// Labels every segment under the named city profile.
pub fn label_segments(
    mut collection: SegmentCollection,
    attribute_csv: Option<&str>,
    profile: &str,
    threshold: f64,
) -> Result<SegmentCollection, StageError> {
    let rows = attribute_csv.map(parse_attribute_csv).transpose()?.unwrap_or_default();
    label_collection(&mut collection, &rows, &context_catalog(profile)?, threshold)?;
    Ok(collection)
}

pub fn sample_manifest(
    labeled: &SegmentCollection,
    n: usize,
    seed: u64,
    size: (u32, u32),
) -> Result<Vec<SampleRecord>, StageError> {
    Ok(build_manifest_sized(labeled, n, seed, size.0, size.1)?)
}

/// Per-sample fetch result plus cache statistics.
#[derive(Debug)]
pub struct FetchSummary {
    pub outcomes: Vec<(String, FetchOutcome)>,
    pub cache_hits: usize,
    pub provider_calls: usize,
}

impl FetchSummary {
    /// `sample_id,status` with status `ok`, `no_coverage` or `failed`.
    pub fn status_csv(&self) -> String {
        let mut out = String::from("sample_id,status\n");
        for (id, o) in &self.outcomes {
            let status = match o {
                FetchOutcome::Ok => "ok",
                FetchOutcome::NoCoverage => "no_coverage",
                FetchOutcome::Failed(_) => "failed",
            };
            out.push_str(&format!("{id},{status}\n"));
        }
        out
    }

    pub fn first_failure(&self) -> Option<(&str, &ImageryError)> {
        self.outcomes.iter().find_map(|(id, o)| match o {
            FetchOutcome::Failed(e) => Some((id.as_str(), e)),
            _ => None,
        })
    }
}

pub fn fetch_manifest(
    manifest: &[SampleRecord],
    provider: &dyn ImageProvider,
    cache: &DiskCache,
    size: (u32, u32),
    parallelism: usize,
) -> FetchSummary {
    let fetcher = Fetcher::new(provider, cache, size.0, size.1);
    let outcomes = fetcher.prefetch(manifest, parallelism);
    FetchSummary {
        outcomes: manifest.iter().map(|r| r.sample_id.clone()).zip(outcomes).collect(),
        cache_hits: fetcher.stats.hits(),
        provider_calls: fetcher.stats.calls(),
    }
}

/// Sample ids marked `no_coverage` in a fetch status CSV.
pub fn no_coverage_ids(status_csv: &str) -> BTreeSet<String> {
    status_csv
        .lines()
        .skip(1)
        .filter_map(|l| l.split_once(','))
        .filter(|(_, s)| s.trim() == "no_coverage")
        .map(|(id, _)| id.to_string())
        .collect()
}

/// One cached image with its identity.
#[derive(Debug, Clone)]
pub struct DatasetImage {
    pub image_id: String,
    pub sample_id: String,
    pub item: LabeledImage,
}

/// Reads both views of each selected sample from the cache, in manifest
/// order (left before right). `only` restricts to the given sample ids;
/// samples in `skip` are left out. A missing payload is an error.
pub fn load_images(
    manifest: &[SampleRecord],
    cache: &DiskCache,
    only: Option<&[String]>,
    skip: &BTreeSet<String>,
) -> Result<Vec<DatasetImage>, StageError> {
    let only: Option<BTreeSet<&str>> = only.map(|ids| ids.iter().map(String::as_str).collect());
    let decoder = PpmDecoder;
    let mut out = Vec::new();
    for rec in manifest {
        if skip.contains(&rec.sample_id) || only.as_ref().is_some_and(|o| !o.contains(rec.sample_id.as_str())) {
            continue;
        }
        for img in &rec.images {
            let (side, path) = (img.side, &img.image_path);
            let key = Path::new(path).file_stem().and_then(|s| s.to_str()).unwrap_or_default();
            let entry = cache.get(key)?.ok_or_else(|| {
                StageError::Invalid(format!("image {path} for {} is not cached; run fetch first", rec.image_id(side)))
            })?;
            out.push(DatasetImage {
                image_id: rec.image_id(side),
                sample_id: rec.sample_id.clone(),
                item: LabeledImage { image: decoder.decode(&entry.bytes)?, label: rec.label },
            });
        }
    }
    Ok(out)
}

/// Distinct manifest labels in code order; the model's class catalog.
pub fn manifest_catalog(manifest: &[SampleRecord]) -> Vec<StreetContext> {
    let set: BTreeSet<u8> = manifest.iter().map(|r| r.label.code()).collect();
    set.into_iter().filter_map(StreetContext::from_code).collect()
}

/// Splits the manifest, then trains StreetNet on the training images.
pub fn train_model(
    manifest: &[SampleRecord],
    cache: &DiskCache,
    split: &SplitAssignment,
    skip: &BTreeSet<String>,
    cfg: &TrainConfig,
) -> Result<(ModelParams, Vec<EpochStats>), StageError> {
    let catalog = manifest_catalog(manifest);
    let images = load_images(manifest, cache, Some(&split.train_ids), skip)?;
    let items: Vec<LabeledImage> = images.into_iter().map(|d| d.item).collect();
    Ok(train(&items, &crate::nn::street_net(catalog.len()), &catalog, cfg)?)
}

pub fn split_manifest(manifest: &[SampleRecord], ratio: f64, seed: u64) -> Result<SplitAssignment, StageError> {
    Ok(split_dataset(manifest, ratio, seed)?)
}

pub fn evaluate(model: &ModelParams, images: &[DatasetImage], config: Vec<(String, String)>) -> Result<Report, StageError> {
    let items: Vec<LabeledImage> = images.iter().map(|d| d.item.clone()).collect();
    Ok(report(model, &items, config)?)
}

/// Runs the model on an image after resizing it to the model input.
pub fn predict_image(model: &ModelParams, image: &RgbImage) -> Result<Prediction, StageError> {
    let [c, h, w] = model.input;
    let x = image_tensor(image, (w as u32, h as u32)).reshape(&[1, c, h, w])?;
    Ok(model.predict_tensor(&x)?)
}

/// CAM of one image for `class` (the predicted class when `None`),
/// upsampled to the model input size.
pub fn image_cam(
    model: &ModelParams,
    image: &RgbImage,
    class: Option<StreetContext>,
) -> Result<(Prediction, ActivationMap), StageError> {
    let pred = predict_image(model, image)?;
    let index = match class {
        None => pred.class_index,
        Some(c) => model
            .catalog
            .iter()
            .position(|&k| k == c)
            .ok_or_else(|| StageError::Invalid(format!("class {c} is not in the model catalog")))?,
    };
    let weight = model.linear_weight().ok_or_else(|| StageError::Invalid("model has no linear layer".into()))?;
    let map = class_activation_map(&pred.last_conv, weight, index)?;
    let [_, h, w] = model.input;
    let up = bilinear_upsample(&map, w, h)?;
    Ok((pred, up))
}

/// Overlay image and sidecar for one dataset image.
#[derive(Debug, Clone)]
pub struct CamOutput {
    pub overlay: RgbImage,
    pub sidecar: CamSidecar,
}

pub fn render_cams(
    model: &ModelParams,
    images: &[DatasetImage],
    class: Option<StreetContext>,
    alpha: f64,
) -> Result<Vec<CamOutput>, StageError> {
    let [_, h, w] = model.input;
    images
        .iter()
        .map(|d| {
            let (pred, map) = image_cam(model, &d.item.image, class)?;
            let base = d.item.image.resize_nearest(w as u32, h as u32);
            let (x, y) = map.argmax();
            let shown = class.unwrap_or(model.catalog[pred.class_index]);
            Ok(CamOutput {
                overlay: render_overlay(&base, &map, alpha)?,
                sidecar: CamSidecar { sample_id: d.image_id.clone(), class: shown.name().to_string(), cam_argmax: [x, y] },
            })
        })
        .collect()
}

/// Penultimate features of every image, labeled with the true class.
pub fn extract_features(model: &ModelParams, images: &[DatasetImage]) -> Result<(Vec<String>, FeatureMatrix), StageError> {
    let mut rows = Vec::new();
    let mut d = 0;
    for img in images {
        let f = predict_image(model, &img.item.image)?.penultimate;
        d = f.len();
        rows.extend(f);
    }
    let ids = images.iter().map(|i| i.image_id.clone()).collect();
    let labels = images.iter().map(|i| i.item.label).collect();
    Ok((ids, FeatureMatrix::new(images.len(), d, rows)?.with_labels(labels)?))
}

pub fn embed_features(features: &FeatureMatrix, cfg: &TsneConfig) -> Result<Embedding, StageError> {
    Ok(tsne_embed(features, cfg)?)
}
