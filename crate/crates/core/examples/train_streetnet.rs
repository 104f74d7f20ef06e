//! Trains StreetNet on a small synthetic corpus and saves the model.
//!
//! `cargo run --release --example train_streetnet [model_path]`

use streetctx::imagery::synth_render;
use streetctx::labeler::StreetContext::{self, *};
use streetctx::nn::{history_csv, load_model, save_model, street_net, train, LabeledImage, TrainConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let path = std::env::args().nth(1).unwrap_or_else(|| std::env::temp_dir().join("streetnet.sctx").display().to_string());
    let catalog = [Alley, CommercialThroughway, DowntownCommercial, DowntownResidential];
    let data: Vec<LabeledImage> = (0..160u64)
        .map(|i| {
            let label: StreetContext = catalog[i as usize % catalog.len()];
            LabeledImage { image: synth_render(label, i, 32, 32), label }
        })
        .collect();
    let cfg = TrainConfig { epochs: 6, input_size: (32, 32), ..TrainConfig::default() };
    let (model, history) = train(&data, &street_net(catalog.len()), &catalog, &cfg)?;
    print!("{}", history_csv(&history));

    let bytes = save_model(&model);
    std::fs::write(&path, &bytes)?;
    assert_eq!(load_model(&bytes)?, model);
    println!("saved {} bytes to {path}", bytes.len());

    let probe = synth_render(DowntownCommercial, 999, 32, 32);
    let p = model.predict(&probe)?;
    println!("probe predicted {} (p = {:.3})", model.catalog[p.class_index], p.probabilities[p.class_index]);
    Ok(())
}
