//! Command-line front end.
//!
//! Exit codes: 0 success, 1 domain error, 2 usage error. Any `--a.b value`
//! argument overrides config key `a.b` and may appear anywhere.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use crate::eval::reference_table;
use crate::imagery::{encode_ppm, DiskCache, ImageProvider, StreetViewProvider, SyntheticProvider};
use crate::labeler::StreetContext;
use crate::nn::{history_csv, load_model, save_model, ModelParams};
use crate::pipeline::runlog::{self, RunRecord};
use crate::pipeline::*;
use crate::sampler::{parse_manifest_csv, write_manifest_csv, SampleRecord};
use crate::tsne::{export_embedding, parse_feature_csv, render_scatter};

#[derive(Debug, Parser)]
#[command(name = "streetctx", version, about = "Street context classification from street-level imagery")]
struct Cli {
    /// JSON file of flat dotted keys, e.g. {"train.epochs": 5}.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Run log to append to (default: config `paths.runlog`).
    #[arg(long, global = true)]
    runlog: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Parse a GeoJSON or shapefile street network into segments.json.
    Ingest {
        #[arg(long, conflicts_with = "shp")]
        geojson: Option<PathBuf>,
        #[arg(long)]
        shp: Option<PathBuf>,
        /// `record_index,key,value` attributes for shapefile records.
        #[arg(long, requires = "shp")]
        shp_labels: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Assign a street context to every segment.
    Label {
        #[arg(long)]
        segments: Option<PathBuf>,
        /// `segment_id,commercial_frac,transport,special` rows.
        #[arg(long)]
        attributes: Option<PathBuf>,
        #[arg(long)]
        profile: Option<String>,
        #[arg(long)]
        threshold: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Sample points on labeled segments into a manifest.
    Sample {
        #[arg(long)]
        segments: Option<PathBuf>,
        #[arg(long)]
        n: Option<u64>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Retrieve both images of every sample into the cache.
    Fetch {
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        cache: Option<PathBuf>,
        /// `synthetic` or `streetview`.
        #[arg(long)]
        provider: Option<String>,
        #[arg(long)]
        parallelism: Option<u64>,
        #[arg(long)]
        status: Option<PathBuf>,
    },
    /// Train StreetNet on the training split.
    Train {
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        cache: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        history: Option<PathBuf>,
    },
    /// Evaluate a model on the validation split.
    Eval {
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        cache: Option<PathBuf>,
        #[arg(long)]
        model: Option<PathBuf>,
        /// Report directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Render class activation map overlays for validation images.
    Cam {
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        cache: Option<PathBuf>,
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Class to explain instead of the predicted one.
        #[arg(long)]
        class: Option<String>,
        #[arg(long)]
        limit: Option<u64>,
        #[arg(long)]
        alpha: Option<f64>,
    },
    /// Embed penultimate features of validation images with t-SNE.
    Embed {
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        cache: Option<PathBuf>,
        #[arg(long)]
        model: Option<PathBuf>,
        /// Feature CSV to embed instead of model features.
        #[arg(long, conflicts_with_all = ["manifest", "cache", "model"])]
        features: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        scatter: Option<PathBuf>,
        #[arg(long)]
        standardize: bool,
    },
    /// Write a procedural street network with raw labeling attributes.
    SynthCity {
        #[arg(long, default_value_t = 100)]
        per_class: usize,
        #[arg(long, default_value_t = 3)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug)]
enum Failure {
    Usage(String),
    Domain(String),
}

impl From<StageError> for Failure {
    fn from(e: StageError) -> Self {
        Failure::Domain(e.to_string())
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Usage(e.to_string())
    }
}

type Overrides = Vec<(String, String)>;

/// Removes `--a.b value` and `--a.b=value` pairs from `args`.
fn extract_overrides(args: Vec<String>) -> Result<(Vec<String>, Overrides), Failure> {
    let mut rest = Vec::with_capacity(args.len());
    let mut overrides = Vec::new();
    let mut it = args.into_iter();
    while let Some(a) = it.next() {
        match a.strip_prefix("--") {
            Some(name) if name.contains('.') && !name.starts_with('-') => {
                let (key, value) = match name.split_once('=') {
                    Some((k, v)) => (k.to_string(), v.to_string()),
                    None => {
                        let v = it.next().ok_or_else(|| Failure::Usage(format!("--{name} needs a value")))?;
                        (name.to_string(), v)
                    }
                };
                overrides.push((key, value));
            }
            _ => rest.push(a),
        }
    }
    Ok((rest, overrides))
}

/// Parses `args` (including the program name), runs the command and
/// returns the process exit code.
pub fn run(args: Vec<String>) -> i32 {
    match try_run(args) {
        Ok(()) => 0,
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            2
        }
        Err(Failure::Domain(m)) => {
            eprintln!("error: {m}");
            1
        }
    }
}

fn try_run(args: Vec<String>) -> Result<(), Failure> {
    let (args, overrides) = extract_overrides(args)?;
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let usage = e.use_stderr();
            let _ = e.print();
            return if usage { Err(Failure::Usage("invalid arguments".into())) } else { Ok(()) };
        }
    };
    let mut cfg = match &cli.config {
        Some(p) => PipelineConfig::from_json(&read_text(p).map_err(|e| Failure::Usage(e.to_string()))?)?,
        None => PipelineConfig::default(),
    };
    for (k, v) in &overrides {
        cfg.set(k, v)?;
    }
    let mut ctx = Context { cfg, inputs: Vec::new(), outputs: Vec::new() };
    let name = command_name(&cli.command);
    ctx.apply_flags(&cli.command)?;
    ctx.execute(cli.command)?;

    let log = cli.runlog.unwrap_or_else(|| PathBuf::from(ctx.cfg.str("paths.runlog")));
    let hashes =
        |paths: &[PathBuf]| runlog::hash_paths(paths.iter().map(PathBuf::as_path)).map_err(|e| Failure::Domain(e.to_string()));
    let record = RunRecord {
        command: name.to_string(),
        config_hash: ctx.cfg.hash(),
        inputs: hashes(&ctx.inputs)?,
        outputs: hashes(&ctx.outputs)?,
    };
    runlog::append(&log, &record).map_err(|e| Failure::Domain(format!("{}: {e}", log.display())))
}

fn command_name(c: &Command) -> &'static str {
    match c {
        Command::Ingest { .. } => "ingest",
        Command::Label { .. } => "label",
        Command::Sample { .. } => "sample",
        Command::Fetch { .. } => "fetch",
        Command::Train { .. } => "train",
        Command::Eval { .. } => "eval",
        Command::Cam { .. } => "cam",
        Command::Embed { .. } => "embed",
        Command::SynthCity { .. } => "synth-city",
    }
}

struct Context {
    cfg: PipelineConfig,
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
}

impl Context {
    /// Folds value flags into the config so they count towards its hash.
    fn apply_flags(&mut self, c: &Command) -> Result<(), Failure> {
        let mut set = |key: &str, v: Option<String>| -> Result<(), Failure> {
            if let Some(v) = v {
                self.cfg.set(key, &v)?;
            }
            Ok(())
        };
        match c {
            Command::Label { profile, threshold, .. } => {
                set("city.profile", profile.clone())?;
                set("label.threshold", threshold.map(|t| t.to_string()))?;
            }
            Command::Sample { n, seed, .. } => {
                set("sampler.n", n.map(|v| v.to_string()))?;
                set("sampler.seed", seed.map(|v| v.to_string()))?;
            }
            Command::Fetch { provider, parallelism, .. } => {
                set("imagery.provider", provider.clone())?;
                set("fetch.parallelism", parallelism.map(|v| v.to_string()))?;
            }
            Command::Cam { limit, alpha, .. } => {
                set("cam.limit", limit.map(|v| v.to_string()))?;
                set("cam.alpha", alpha.map(|v| v.to_string()))?;
            }
            Command::Embed { standardize: true, .. } => set("tsne.standardize", Some("true".into()))?,
            _ => {}
        }
        Ok(())
    }

    /// Flag value or the config path; the file must exist.
    fn input(&mut self, flag: Option<PathBuf>, key: &str) -> Result<PathBuf, Failure> {
        let p = flag.unwrap_or_else(|| PathBuf::from(self.cfg.str(key)));
        if !p.exists() {
            return Err(Failure::Usage(format!("input {} does not exist (flag or config '{key}')", p.display())));
        }
        self.inputs.push(p.clone());
        Ok(p)
    }

    fn output(&mut self, flag: Option<PathBuf>, key: &str) -> PathBuf {
        let p = flag.unwrap_or_else(|| PathBuf::from(self.cfg.str(key)));
        self.outputs.push(p.clone());
        p
    }

    fn write(&mut self, path: PathBuf, bytes: &[u8]) -> Result<(), Failure> {
        write_bytes(&path, bytes)?;
        if !self.outputs.contains(&path) {
            self.outputs.push(path);
        }
        Ok(())
    }

    fn manifest(&mut self, flag: Option<PathBuf>) -> Result<Vec<SampleRecord>, Failure> {
        let p = self.input(flag, "paths.manifest")?;
        parse_manifest_csv(&read_text(&p)?).map_err(|e| Failure::Domain(format!("sampler: {e}")))
    }

    /// Sample ids to leave out, from the fetch status file when present.
    fn skipped(&mut self) -> Result<BTreeSet<String>, Failure> {
        let p = PathBuf::from(self.cfg.str("paths.fetch_status"));
        if !p.exists() {
            return Ok(BTreeSet::new());
        }
        self.inputs.push(p.clone());
        Ok(no_coverage_ids(&read_text(&p)?))
    }

    fn model(&mut self, flag: Option<PathBuf>) -> Result<ModelParams, Failure> {
        let p = self.input(flag, "paths.model")?;
        load_model(&read_bytes(&p)?).map_err(|e| Failure::Domain(format!("nn: {e}")))
    }

    /// Cached validation images of the configured split.
    fn validation(
        &mut self,
        manifest: Option<PathBuf>,
        cache: Option<PathBuf>,
    ) -> Result<(Vec<SampleRecord>, Vec<DatasetImage>), Failure> {
        let records = self.manifest(manifest)?;
        let cache = DiskCache::new(self.input(cache, "paths.cache")?);
        let skip = self.skipped()?;
        let split = split_manifest(&records, self.cfg.float("split.ratio"), self.cfg.int("split.seed"))?;
        let images = load_images(&records, &cache, Some(&split.val_ids), &skip)?;
        Ok((records, images))
    }

    fn execute(&mut self, command: Command) -> Result<(), Failure> {
        match command {
            Command::Ingest { geojson, shp, shp_labels, out } => {
                let collection = match (geojson, shp) {
                    (Some(g), None) => {
                        let g = self.input(Some(g), "paths.segments")?;
                        ingest_geojson(&g)?
                    }
                    (None, Some(s)) => {
                        let s = self.input(Some(s), "paths.segments")?;
                        let labels = shp_labels.map(|l| self.input(Some(l), "paths.segments")).transpose()?;
                        ingest_shapefile(&s, labels.as_deref())?
                    }
                    _ => return Err(Failure::Usage("ingest needs --geojson or --shp".into())),
                };
                let out = self.output(out, "paths.segments");
                self.write(out, collection.to_geojson().as_bytes())?;
                println!("ingested {} segments", collection.len());
            }
            Command::Label { segments, attributes, out, .. } => {
                let seg = self.input(segments, "paths.segments")?;
                let collection = ingest_geojson(&seg)?;
                let attrs = match attributes {
                    Some(a) => Some(read_text(&self.input(Some(a), "paths.segments")?)?),
                    None => None,
                };
                let labeled = label_segments(
                    collection,
                    attrs.as_deref(),
                    self.cfg.str("city.profile"),
                    self.cfg.float("label.threshold"),
                )?;
                let out = self.output(out, "paths.labeled");
                self.write(out, labeled.to_geojson().as_bytes())?;
                println!("labeled {} segments", labeled.len());
            }
            Command::Sample { segments, out, .. } => {
                let seg = self.input(segments, "paths.labeled")?;
                let labeled = ingest_geojson(&seg)?;
                let manifest = sample_manifest(
                    &labeled,
                    self.cfg.int("sampler.n") as usize,
                    self.cfg.int("sampler.seed"),
                    self.cfg.image_size(),
                )?;
                let out = self.output(out, "paths.manifest");
                self.write(out, write_manifest_csv(&manifest).as_bytes())?;
                println!("sampled {} points", manifest.len());
            }
            Command::Fetch { manifest, cache, status, .. } => {
                let records = self.manifest(manifest)?;
                let cache_dir = self.output(cache, "paths.cache");
                let cache = DiskCache::new(&cache_dir);
                let provider: Box<dyn ImageProvider> = match self.cfg.str("imagery.provider") {
                    "synthetic" => Box::new(SyntheticProvider::new(self.cfg.int("imagery.seed"))),
                    "streetview" => Box::new(
                        StreetViewProvider::from_env(self.cfg.str("imagery.endpoint"), self.cfg.float("imagery.rate"))
                            .map_err(|e| Failure::Domain(format!("imagery: {e}")))?,
                    ),
                    other => return Err(Failure::Usage(format!("unknown provider '{other}' (synthetic, streetview)"))),
                };
                let summary = fetch_manifest(
                    &records,
                    provider.as_ref(),
                    &cache,
                    self.cfg.image_size(),
                    self.cfg.int("fetch.parallelism") as usize,
                );
                std::fs::create_dir_all(&cache_dir).map_err(|e| Failure::Domain(format!("{}: {e}", cache_dir.display())))?;
                let status = self.output(status, "paths.fetch_status");
                self.write(status, summary.status_csv().as_bytes())?;
                println!(
                    "fetched {} samples: {} cache hits, {} provider calls",
                    records.len(),
                    summary.cache_hits,
                    summary.provider_calls
                );
                if let Some((id, e)) = summary.first_failure() {
                    return Err(Failure::Domain(format!("imagery: sample {id}: {e}")));
                }
            }
            Command::Train { manifest, cache, out, history } => {
                let records = self.manifest(manifest)?;
                let cache = DiskCache::new(self.input(cache, "paths.cache")?);
                let skip = self.skipped()?;
                let split = split_manifest(&records, self.cfg.float("split.ratio"), self.cfg.int("split.seed"))?;
                let (model, hist) = train_model(&records, &cache, &split, &skip, &self.cfg.train_config())?;
                let out = self.output(out, "paths.model");
                self.write(out, &save_model(&model))?;
                let history = history.unwrap_or_else(|| Path::new(self.cfg.str("paths.reports")).join("history.csv"));
                self.write(history, history_csv(&hist).as_bytes())?;
                if let Some(last) = hist.last() {
                    println!("trained {} epochs: loss {:.6}, train accuracy {:.4}", hist.len(), last.loss, last.train_acc);
                }
            }
            Command::Eval { manifest, cache, model, out } => {
                let model = self.model(model)?;
                let (_, images) = self.validation(manifest, cache)?;
                let report = evaluate(&model, &images, self.cfg.echo())?;
                let dir = out.unwrap_or_else(|| PathBuf::from(self.cfg.str("paths.reports")));
                self.write(dir.join("report.csv"), report.to_csv().as_bytes())?;
                self.write(dir.join("confusion.csv"), report.confusion.to_csv().as_bytes())?;
                self.write(dir.join("reference_accuracy.md"), reference_table().as_bytes())?;
                println!("validation accuracy {:.4} on {} images", report.accuracy, images.len());
            }
            Command::Cam { manifest, cache, model, out, class, .. } => {
                let model = self.model(model)?;
                let class = class.map(|c| c.parse::<StreetContext>().map_err(|e| Failure::Usage(e.to_string()))).transpose()?;
                let (_, mut images) = self.validation(manifest, cache)?;
                let limit = self.cfg.int("cam.limit") as usize;
                if limit > 0 {
                    images.truncate(limit);
                }
                let cams = render_cams(&model, &images, class, self.cfg.float("cam.alpha"))?;
                let dir = out.unwrap_or_else(|| Path::new(self.cfg.str("paths.reports")).join("cam"));
                for c in &cams {
                    let json = serde_json::to_string_pretty(&c.sidecar).expect("sidecar serializes");
                    self.write(dir.join(format!("{}.ppm", c.sidecar.sample_id)), &encode_ppm(&c.overlay))?;
                    self.write(dir.join(format!("{}.json", c.sidecar.sample_id)), json.as_bytes())?;
                }
                println!("rendered {} overlays", cams.len());
            }
            Command::Embed { manifest, cache, model, features, out, scatter, .. } => {
                let (ids, matrix) = match features {
                    Some(f) => {
                        let f = self.input(Some(f), "paths.manifest")?;
                        parse_feature_csv(&read_text(&f)?).map_err(|e| Failure::Domain(format!("tsne: {e}")))?
                    }
                    None => {
                        let model = self.model(model)?;
                        let (_, images) = self.validation(manifest, cache)?;
                        extract_features(&model, &images)?
                    }
                };
                let embedding = embed_features(&matrix, &self.cfg.tsne_config())?;
                let out = out.unwrap_or_else(|| Path::new(self.cfg.str("paths.reports")).join("embedding.csv"));
                let csv =
                    export_embedding(&embedding, &ids, matrix.labels()).map_err(|e| Failure::Domain(format!("tsne: {e}")))?;
                let scatter = scatter.unwrap_or_else(|| out.with_extension("ppm"));
                self.write(out, csv.as_bytes())?;
                self.write(scatter, &encode_ppm(&render_scatter(&embedding, matrix.labels())))?;
                println!("embedded {} points, KL {:.6}", embedding.n(), embedding.kl);
            }
            Command::SynthCity { per_class, seed, out } => {
                let city = synthetic_city(per_class, &SYNTHETIC_CLASSES, seed);
                self.write(out, city.to_geojson().as_bytes())?;
                println!("wrote {} segments", city.len());
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn strings(a: &[&str]) -> Vec<String> {
        a.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn overrides_are_extracted() {
        let (rest, ov) =
            extract_overrides(strings(&["x", "train", "--train.lr", "0.01", "--out", "m", "--tsne.seed=4"])).unwrap();
        assert_eq!(rest, strings(&["x", "train", "--out", "m"]));
        assert_eq!(ov, vec![("train.lr".into(), "0.01".into()), ("tsne.seed".into(), "4".into())]);
        assert!(extract_overrides(strings(&["x", "--train.lr"])).is_err());
    }

    #[test]
    fn exit_codes() {
        assert_eq!(run(strings(&["streetctx", "bogus"])), 2);
        assert_eq!(run(strings(&["streetctx", "ingest", "--train.nope", "1", "--geojson", "x"])), 2);
        assert_eq!(run(strings(&["streetctx", "ingest", "--geojson", "/definitely/missing.json"])), 2);
    }
}
