//! Samples points along a synthetic street network and prints the first
//! rows of the image manifest.
//!
//! `cargo run --example sample_manifest`

use streetctx::labeler::DEFAULT_COMMERCIAL_THRESHOLD;
use streetctx::pipeline::{label_segments, synthetic_city, SYNTHETIC_CLASSES};
use streetctx::sampler::{build_manifest, camera_headings, write_manifest_csv};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let city = synthetic_city(20, &SYNTHETIC_CLASSES, 3);
    let labeled = label_segments(city, None, "SanFrancisco", DEFAULT_COMMERCIAL_THRESHOLD)?;
    let manifest = build_manifest(&labeled, 10, 7)?;
    for line in write_manifest_csv(&manifest).lines().take(7) {
        println!("{line}");
    }
    let cams = camera_headings(350.0);
    println!("road bearing 350 -> left {} / right {}", cams.left, cams.right);
    Ok(())
}
