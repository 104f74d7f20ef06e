//! Trains a small model, then renders class activation map overlays and
//! reports where each map peaks.
//!
//! `cargo run --release --example class_activation_maps [out_dir]`

use std::path::PathBuf;

use streetctx::cam::{bilinear_upsample, class_activation_map, render_overlay};
use streetctx::imagery::{encode_ppm, motif_quadrant, synth_render};
use streetctx::labeler::StreetContext::{self, *};
use streetctx::nn::{street_net, train, LabeledImage, TrainConfig};
use streetctx::pipeline::write_bytes;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("streetctx-cam"));
    let catalog = [Alley, CommercialThroughway, DowntownCommercial, DowntownResidential];
    let data: Vec<LabeledImage> = (0..200u64)
        .map(|i| {
            let label: StreetContext = catalog[i as usize % 4];
            LabeledImage { image: synth_render(label, i, 32, 32), label }
        })
        .collect();
    let cfg = TrainConfig { epochs: 8, input_size: (32, 32), ..TrainConfig::default() };
    let (model, _) = train(&data, &street_net(4), &catalog, &cfg)?;
    let weight = model.linear_weight().expect("StreetNet ends in a linear layer");

    for (k, &label) in catalog.iter().enumerate() {
        let image = synth_render(label, 10_000 + k as u64, 32, 32);
        let pred = model.predict(&image)?;
        let map = bilinear_upsample(&class_activation_map(&pred.last_conv, weight, pred.class_index)?, 32, 32)?;
        let (x, y) = map.argmax();
        println!(
            "{label:<20} predicted {:<20} peak ({x:2},{y:2}) motif quadrant {}",
            model.catalog[pred.class_index],
            motif_quadrant(label)
        );
        write_bytes(&out.join(format!("{label}.ppm")), &encode_ppm(&render_overlay(&image, &map, 0.5)?))?;
    }
    println!("overlays in {}", out.display());
    Ok(())
}
