//! Renders one synthetic street image per class and shows the disk cache
//! absorbing a repeated fetch.
//!
//! `cargo run --example synthetic_imagery [out_dir]`

use std::path::PathBuf;

use streetctx::imagery::{encode_ppm, motif_quadrant, synth_render, DiskCache, Fetcher, SyntheticProvider};
use streetctx::labeler::StreetContext;
use streetctx::pipeline::{label_segments, synthetic_city, write_bytes, SYNTHETIC_CLASSES};
use streetctx::sampler::build_manifest_sized;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("streetctx-imagery"));
    for label in StreetContext::ALL {
        let img = synth_render(label, 1, 128, 128);
        write_bytes(&out.join(format!("{label}.ppm")), &encode_ppm(&img))?;
        println!("{label:<24} motif quadrant {}", motif_quadrant(label));
    }

    let city = label_segments(synthetic_city(4, &SYNTHETIC_CLASSES, 3), None, "SanFrancisco", 0.5)?;
    let manifest = build_manifest_sized(&city, 8, 7, 64, 64)?;
    let cache = DiskCache::new(out.join("cache"));
    let provider = SyntheticProvider::new(0);
    for round in 1..=2 {
        let fetcher = Fetcher::new(&provider, &cache, 64, 64);
        fetcher.prefetch(&manifest, 2);
        println!("round {round}: {} provider calls, {} cache hits", fetcher.stats.calls(), fetcher.stats.hits());
    }
    println!("images in {}", out.display());
    Ok(())
}
