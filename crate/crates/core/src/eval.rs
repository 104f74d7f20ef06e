//! Train/validation splitting, confusion matrices and accuracy reports.

use std::collections::BTreeSet;

use thiserror::Error;

use crate::labeler::StreetContext;
use crate::nn::{image_tensor, LabeledImage, ModelParams, NnError};
use crate::rng::Rng;
use crate::sampler::SampleRecord;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("cannot split an empty manifest")]
    EmptyManifest,
    #[error("split ratio {0} is outside [0, 1]")]
    BadRatio(f64),
    #[error("duplicate sample id '{0}'")]
    DuplicateId(String),
    #[error("{truth} true labels but {pred} predictions")]
    LengthMismatch { truth: usize, pred: usize },
    #[error("label {0} is not in the catalog")]
    OutOfCatalog(StreetContext),
    #[error("accuracy is undefined for an empty confusion matrix")]
    EmptyMatrix,
    #[error(transparent)]
    Model(#[from] NnError),
}

/// Disjoint train and validation sample ids, each in manifest order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitAssignment {
    pub train_ids: Vec<String>,
    pub val_ids: Vec<String>,
}

/// Default share of sample points used for training.
pub const TRAIN_RATIO: f64 = 0.8;

/// Splits whole sample points (never the two images of a pair) into train
/// and validation sets.
pub fn split_dataset(manifest: &[SampleRecord], ratio: f64, seed: u64) -> Result<SplitAssignment, EvalError> {
    let ids: Vec<String> = manifest.iter().map(|r| r.sample_id.clone()).collect();
    split_ids(&ids, ratio, seed)
}

/// Seeded shuffle, then the first `floor(ratio * n + 0.5)` ids train.
pub fn split_ids(ids: &[String], ratio: f64, seed: u64) -> Result<SplitAssignment, EvalError> {
    if ids.is_empty() {
        return Err(EvalError::EmptyManifest);
    }
    if !(0.0..=1.0).contains(&ratio) {
        return Err(EvalError::BadRatio(ratio));
    }
    let mut seen = BTreeSet::new();
    if let Some(dup) = ids.iter().find(|id| !seen.insert(id.as_str())) {
        return Err(EvalError::DuplicateId(dup.clone()));
    }
    let n = ids.len();
    let n_train = ((ratio * n as f64 + 0.5).floor() as usize).min(n);
    let mut order: Vec<usize> = (0..n).collect();
    Rng::seed_from_u64(seed).shuffle(&mut order);
    let mut is_train = vec![false; n];
    order[..n_train].iter().for_each(|&i| is_train[i] = true);
    let (mut train_ids, mut val_ids) = (Vec::new(), Vec::new());
    for (id, t) in ids.iter().zip(is_train) {
        if t { &mut train_ids } else { &mut val_ids }.push(id.clone());
    }
    Ok(SplitAssignment { train_ids, val_ids })
}

/// Rows are true labels, columns predictions, both in catalog order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    pub classes: Vec<StreetContext>,
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.classes.len()).map(|i| self.counts[i][i]).sum()
    }

    pub fn row_sum(&self, i: usize) -> u64 {
        self.counts[i].iter().sum()
    }

    /// `confusion.csv`: header row and first column hold class names.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("true\\predicted");
        for c in &self.classes {
            out.push(',');
            out.push_str(c.name());
        }
        out.push('\n');
        for (c, row) in self.classes.iter().zip(&self.counts) {
            out.push_str(c.name());
            for v in row {
                out.push_str(&format!(",{v}"));
            }
            out.push('\n');
        }
        out
    }
}

pub fn confusion_matrix(
    truth: &[StreetContext],
    pred: &[StreetContext],
    catalog: &[StreetContext],
) -> Result<ConfusionMatrix, EvalError> {
    if truth.len() != pred.len() {
        return Err(EvalError::LengthMismatch { truth: truth.len(), pred: pred.len() });
    }
    let index = |l: StreetContext| catalog.iter().position(|&c| c == l).ok_or(EvalError::OutOfCatalog(l));
    let c = catalog.len();
    let mut counts = vec![vec![0u64; c]; c];
    for (&t, &p) in truth.iter().zip(pred) {
        counts[index(t)?][index(p)?] += 1;
    }
    Ok(ConfusionMatrix { classes: catalog.to_vec(), counts })
}

/// `trace / total`.
pub fn accuracy(cm: &ConfusionMatrix) -> Result<f64, EvalError> {
    match cm.total() {
        0 => Err(EvalError::EmptyMatrix),
        total => Ok(cm.trace() as f64 / total as f64),
    }
}

/// Diagonal over row sum; `None` for classes with no true samples.
pub fn per_class_accuracy(cm: &ConfusionMatrix) -> Vec<Option<f64>> {
    (0..cm.classes.len())
        .map(|i| match cm.row_sum(i) {
            0 => None,
            n => Some(cm.counts[i][i] as f64 / n as f64),
        })
        .collect()
}

/// Predicted labels for `items`, resized to the model input if needed.
pub fn predict_labels(model: &ModelParams, items: &[LabeledImage]) -> Result<Vec<StreetContext>, EvalError> {
    let [c, h, w] = model.input;
    items
        .iter()
        .map(|item| {
            let x = image_tensor(&item.image, (w as u32, h as u32)).reshape(&[1, c, h, w])?;
            Ok(model.catalog[model.predict_tensor(&x)?.class_index])
        })
        .collect()
}

/// Accuracy summary plus the settings that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub confusion: ConfusionMatrix,
    pub accuracy: f64,
    pub per_class: Vec<Option<f64>>,
    /// `(key, value)` pairs echoed as `config.<key>` rows.
    pub config: Vec<(String, String)>,
}

impl Report {
    pub fn new(confusion: ConfusionMatrix, config: Vec<(String, String)>) -> Result<Self, EvalError> {
        let accuracy = accuracy(&confusion)?;
        let per_class = per_class_accuracy(&confusion);
        Ok(Self { confusion, accuracy, per_class, config })
    }

    /// `report.csv`: `metric,value` rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("metric,value\n");
        out.push_str(&format!("samples,{}\n", self.confusion.total()));
        out.push_str(&format!("accuracy,{}\n", self.accuracy));
        for (c, acc) in self.confusion.classes.iter().zip(&self.per_class) {
            match acc {
                Some(a) => out.push_str(&format!("accuracy.{},{a}\n", c.name())),
                None => out.push_str(&format!("accuracy.{},n/a\n", c.name())),
            }
        }
        for (k, v) in &self.config {
            out.push_str(&format!("config.{k},{v}\n"));
        }
        out
    }
}

/// Evaluates `model` on `items` and builds the report.
pub fn report(model: &ModelParams, items: &[LabeledImage], config: Vec<(String, String)>) -> Result<Report, EvalError> {
    let truth: Vec<StreetContext> = items.iter().map(|i| i.label).collect();
    let pred = predict_labels(model, items)?;
    Report::new(confusion_matrix(&truth, &pred, &model.catalog)?, config)
}

/// Published validation accuracies (percent) for full-scale backbones on
/// the Boston and San Francisco corpora. Documentation only: this crate
/// does not reproduce them.
pub const REFERENCE_ACCURACY: [(&str, f64, f64); 5] = [
    ("ResNet18", 85.64, 81.72),
    ("ResNet34", 85.45, 82.02),
    ("ResNet50", 85.64, 82.71),
    ("AlexNet", 83.16, 81.69),
    ("Inception-v3", 87.79, 84.17),
];

/// Markdown rendering of [`REFERENCE_ACCURACY`].
pub fn reference_table() -> String {
    let mut out = String::from(
        "Published reference values, not reproduced here.\n\n| Architecture | Boston (%) | San Francisco (%) |\n|---|---|---|\n",
    );
    for (arch, boston, sf) in REFERENCE_ACCURACY {
        out.push_str(&format!("| {arch} | {boston:.2} | {sf:.2} |\n"));
    }
    out
}
