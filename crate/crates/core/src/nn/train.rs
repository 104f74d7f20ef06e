use serde::{Deserialize, Serialize};

use super::loss::softmax_cross_entropy;
use super::model::{argmax, preprocess, LayerSpec, ModelParams};
use super::optim::Sgd;
use super::{NnError, Tensor};
use crate::imagery::RgbImage;
use crate::labeler::StreetContext;
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub seed: u64,
    /// Model input `(width, height)`; images are resized by nearest neighbour.
    pub input_size: (u32, u32),
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { epochs: 20, batch_size: 16, learning_rate: 0.05, momentum: 0.9, seed: 1, input_size: (64, 64) }
    }
}

impl TrainConfig {
    fn validate(&self, dataset_len: usize) -> Result<(), NnError> {
        let bad = |m: String| Err(NnError::Config(m));
        if self.epochs == 0 || self.batch_size == 0 || self.input_size.0 == 0 || self.input_size.1 == 0 {
            return bad("epochs, batch_size and input_size must be positive".into());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("momentum must be in [0, 1), got {}", self.momentum));
        }
        if self.batch_size > dataset_len {
            return bad(format!("batch_size {} exceeds dataset size {dataset_len}", self.batch_size));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub loss: f64,
    pub train_acc: f64,
}

/// A training image and its label.
#[derive(Debug, Clone)]
pub struct LabeledImage {
    pub image: RgbImage,
    pub label: StreetContext,
}

/// History CSV: `epoch,loss,train_acc`.
pub fn history_csv(history: &[EpochStats]) -> String {
    let mut out = String::from("epoch,loss,train_acc\n");
    for h in history {
        out.push_str(&format!("{},{},{}\n", h.epoch, h.loss, h.train_acc));
    }
    out
}

/// Builds the model input tensor for an image, resizing if needed.
pub fn image_tensor(image: &RgbImage, input_size: (u32, u32)) -> Tensor {
    let (w, h) = input_size;
    if image.width() == w && image.height() == h {
        preprocess(image)
    } else {
        preprocess(&image.resize_nearest(w, h))
    }
}

/// Minibatch SGD with momentum on softmax cross-entropy.
///
/// The seed drives weight initialisation and then the per-epoch shuffles,
/// in that order, so equal inputs give bit-identical parameters. The last
/// minibatch of an epoch may be smaller than `batch_size`.
pub fn train(
    dataset: &[LabeledImage],
    arch: &[LayerSpec],
    catalog: &[StreetContext],
    cfg: &TrainConfig,
) -> Result<(ModelParams, Vec<EpochStats>), NnError> {
    if dataset.is_empty() {
        return Err(NnError::Config("dataset is empty".into()));
    }
    cfg.validate(dataset.len())?;
    let (w0, h0) = (dataset[0].image.width(), dataset[0].image.height());
    let mut inputs = Vec::with_capacity(dataset.len());
    let mut labels = Vec::with_capacity(dataset.len());
    for (i, item) in dataset.iter().enumerate() {
        if item.image.width() != w0 || item.image.height() != h0 {
            return Err(NnError::Config(format!(
                "image {i} is {}x{}, expected {w0}x{h0}",
                item.image.width(),
                item.image.height()
            )));
        }
        let label = catalog
            .iter()
            .position(|&c| c == item.label)
            .ok_or_else(|| NnError::Config(format!("image {i} label {} is not in the catalog", item.label)))?;
        inputs.push(image_tensor(&item.image, cfg.input_size));
        labels.push(label);
    }

    let input = [3, cfg.input_size.1 as usize, cfg.input_size.0 as usize];
    let mut model = ModelParams::init(arch.to_vec(), input, catalog.to_vec(), cfg.seed)?;
    let mut rng = Rng::seed_from_u64(cfg.seed ^ 0x5851_f42d_4c95_7f2d);
    let mut sgd = Sgd::new(cfg.learning_rate, cfg.momentum, &model.params);
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);

    for epoch in 1..=cfg.epochs {
        rng.shuffle(&mut order);
        let (mut loss_sum, mut correct) = (0.0, 0usize);
        for batch in order.chunks(cfg.batch_size) {
            let x = Tensor::stack(&batch.iter().map(|&i| &inputs[i]).collect::<Vec<_>>())?;
            let y: Vec<usize> = batch.iter().map(|&i| labels[i]).collect();
            let (logits, tape) = model.forward(&x)?;
            let (loss, dlogits) = softmax_cross_entropy(&logits, &y)?;
            if !loss.is_finite() {
                return Err(NnError::NonFinite("training loss"));
            }
            let c = logits.shape()[1];
            correct += logits.data().chunks(c).zip(&y).filter(|(row, &t)| argmax(row) == t).count();
            loss_sum += loss * batch.len() as f64;
            let (grads, _) = model.backward(&tape, &dlogits)?;
            sgd.step(&mut model.params, &grads)?;
        }
        history.push(EpochStats {
            epoch,
            loss: loss_sum / dataset.len() as f64,
            train_acc: correct as f64 / dataset.len() as f64,
        });
    }
    Ok((model, history))
}
