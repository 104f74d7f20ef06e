//! Embeds three Gaussian clusters with t-SNE and writes the CSV and the
//! scatter raster.
//!
//! `cargo run --release --example tsne_embedding [out_dir]`

use std::path::PathBuf;

use streetctx::imagery::encode_ppm;
use streetctx::labeler::StreetContext::{self, *};
use streetctx::pipeline::write_bytes;
use streetctx::rng::Rng;
use streetctx::tsne::{export_embedding, render_scatter, tsne_embed, FeatureMatrix, TsneConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("streetctx-tsne"));
    let mut rng = Rng::seed_from_u64(1);
    let (mut rows, mut labels, mut ids) = (Vec::new(), Vec::new(), Vec::new());
    for (c, label) in [Park, Highway, Industrial].into_iter().enumerate() {
        for i in 0..40 {
            rows.extend((0..8).map(|k| if k == c { 8.0 } else { 0.0 } + rng.gaussian()));
            labels.push(label);
            ids.push(format!("{label}-{i}"));
        }
    }
    let x = FeatureMatrix::new(120, 8, rows)?.with_labels(labels.clone())?;
    let emb = tsne_embed(&x, &TsneConfig::default())?;
    println!(
        "perplexity {:.1}, KL after 100 / 500 / 1000 iterations: {:.4} / {:.4} / {:.4}",
        TsneConfig::default().perplexity_for(120),
        emb.kl_trace[99],
        emb.kl_trace[499],
        emb.kl
    );

    for label in [Park, Highway, Industrial] {
        let pts: Vec<[f64; 2]> = (0..120).filter(|&i| labels[i] == label).map(|i| emb.point(i)).collect();
        let cx = pts.iter().map(|p| p[0]).sum::<f64>() / pts.len() as f64;
        let cy = pts.iter().map(|p| p[1]).sum::<f64>() / pts.len() as f64;
        println!("{:<12} centroid ({cx:7.2}, {cy:7.2})", StreetContext::name(label));
    }
    write_bytes(&out.join("embedding.csv"), export_embedding(&emb, &ids, Some(&labels))?.as_bytes())?;
    write_bytes(&out.join("embedding.ppm"), &encode_ppm(&render_scatter(&emb, Some(&labels))))?;
    println!("outputs in {}", out.display());
    Ok(())
}
