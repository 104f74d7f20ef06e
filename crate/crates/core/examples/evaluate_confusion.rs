//! Splits a manifest, tallies a confusion matrix and prints the report
//! files next to the published reference accuracies.
//!
//! `cargo run --example evaluate_confusion`

use streetctx::eval::{confusion_matrix, reference_table, split_ids, Report, TRAIN_RATIO};
use streetctx::labeler::StreetContext::*;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let ids: Vec<String> = (0..10).map(|i| format!("p{i:06}")).collect();
    let split = split_ids(&ids, TRAIN_RATIO, 11)?;
    println!("train {:?}\nval   {:?}\n", split.train_ids, split.val_ids);

    let catalog = [Alley, Highway, Park, Industrial];
    let truth = [Alley, Alley, Highway, Park, Highway, Park, Park, Alley];
    let pred = [Alley, Highway, Highway, Park, Highway, Alley, Park, Alley];
    let cm = confusion_matrix(&truth, &pred, &catalog)?;
    let report = Report::new(cm, vec![("split.seed".into(), "11".into())])?;
    print!("{}\n{}\n{}", report.to_csv(), report.confusion.to_csv(), reference_table());
    Ok(())
}
