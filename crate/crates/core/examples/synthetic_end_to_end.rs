//! Runs the whole pipeline offline: synthetic city, labels, sampling,
//! synthetic imagery, training, evaluation, CAM localization and t-SNE.
//!
//! `cargo run --release --example synthetic_end_to_end [out_dir]`

use std::collections::BTreeSet;
use std::time::Instant;

use streetctx::eval::TRAIN_RATIO;
use streetctx::imagery::{motif_quadrant, quadrant_bounds, DiskCache, SyntheticProvider};
use streetctx::labeler::DEFAULT_COMMERCIAL_THRESHOLD;
use streetctx::nn::TrainConfig;
use streetctx::pipeline::*;
use streetctx::tsne::{export_embedding, TsneConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out =
        std::env::args().nth(1).map(std::path::PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("streetctx-demo"));
    let start = Instant::now();

    let city = synthetic_city(100, &SYNTHETIC_CLASSES, 3);
    let labeled = label_segments(city, None, "SanFrancisco", DEFAULT_COMMERCIAL_THRESHOLD)?;
    let manifest = sample_manifest(&labeled, 600, 7, (64, 64))?;

    let cache = DiskCache::new(out.join("cache"));
    let provider = SyntheticProvider::new(0);
    let fetched = fetch_manifest(&manifest, &provider, &cache, (64, 64), 4);
    println!("fetch: {} renders, {} cache hits", fetched.provider_calls, fetched.cache_hits);

    let split = split_manifest(&manifest, TRAIN_RATIO, 11)?;
    let skip = BTreeSet::new();
    let t = Instant::now();
    let (model, history) = train_model(&manifest, &cache, &split, &skip, &TrainConfig::default())?;
    for h in &history {
        println!("epoch {:2}  loss {:.4}  train acc {:.3}", h.epoch, h.loss, h.train_acc);
    }
    println!("training took {:.1?}", t.elapsed());

    let val = load_images(&manifest, &cache, Some(&split.val_ids), &skip)?;
    let report = evaluate(&model, &val, vec![])?;
    println!("validation accuracy {:.4} on {} images", report.accuracy, val.len());

    let (mut correct, mut inside) = (0, 0);
    for d in &val {
        let (pred, map) = image_cam(&model, &d.item.image, None)?;
        if model.catalog[pred.class_index] != d.item.label {
            continue;
        }
        correct += 1;
        let (x, y) = map.argmax();
        let (x0, y0, x1, y1) = quadrant_bounds(motif_quadrant(d.item.label), map.width as u32, map.height as u32);
        if (x0..x1).contains(&(x as u32)) && (y0..y1).contains(&(y as u32)) {
            inside += 1;
        }
    }
    println!("CAM argmax inside the motif quadrant: {inside}/{correct}");

    let (ids, features) = extract_features(&model, &val)?;
    let embedding = embed_features(&features, &TsneConfig::default())?;
    write_bytes(&out.join("embedding.csv"), export_embedding(&embedding, &ids, features.labels())?.as_bytes())?;
    println!("t-SNE KL {:.4}; outputs in {}", embedding.kl, out.display());
    println!("total {:.1?}", start.elapsed());
    Ok(())
}
