use serde::{Deserialize, Serialize};

use super::layers::*;
use super::loss::softmax;
use super::{NnError, Tensor};
use crate::imagery::RgbImage;
use crate::labeler::StreetContext;
use crate::rng::Rng;

/// One layer of a sequential network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type")]
pub enum LayerSpec {
    Conv { out_channels: usize, kernel: usize, stride: usize, padding: usize },
    ReLU,
    MaxPool { window: usize, stride: usize },
    GlobalAvgPool,
    Linear { out_features: usize },
}

/// Conv16-ReLU-Pool, Conv32-ReLU-Pool, Conv64-ReLU, GAP, Linear.
pub fn street_net(classes: usize) -> Vec<LayerSpec> {
    let conv = |out_channels| LayerSpec::Conv { out_channels, kernel: 3, stride: 1, padding: 1 };
    vec![
        conv(16),
        LayerSpec::ReLU,
        LayerSpec::MaxPool { window: 2, stride: 2 },
        conv(32),
        LayerSpec::ReLU,
        LayerSpec::MaxPool { window: 2, stride: 2 },
        conv(64),
        LayerSpec::ReLU,
        LayerSpec::GlobalAvgPool,
        LayerSpec::Linear { out_features: classes },
    ]
}

/// Per-sample output shape of every layer (batch axis excluded), checking
/// that the chain is valid for `input` (`[C, H, W]`).
pub fn propagate_shapes(arch: &[LayerSpec], input: [usize; 3]) -> Result<Vec<Vec<usize>>, NnError> {
    let mut shape = input.to_vec();
    let mut out = Vec::with_capacity(arch.len());
    for (i, layer) in arch.iter().enumerate() {
        let bad = |msg: String| NnError::Architecture(format!("layer {i} ({layer:?}): {msg}"));
        shape = match *layer {
            LayerSpec::Conv { out_channels, kernel, stride, padding } => {
                if shape.len() != 3 || out_channels == 0 {
                    return Err(bad(format!("needs a CHW input, got {shape:?}")));
                }
                let g = ConvGeom::new(shape[0], shape[1], shape[2], kernel, stride, padding)
                    .ok_or_else(|| bad(format!("empty output for input {shape:?}")))?;
                vec![out_channels, g.out_h, g.out_w]
            }
            LayerSpec::ReLU => shape,
            LayerSpec::MaxPool { window, stride } => {
                if shape.len() != 3 || window == 0 || stride == 0 || shape[1] < window || shape[2] < window {
                    return Err(bad(format!("invalid for input {shape:?}")));
                }
                vec![shape[0], (shape[1] - window) / stride + 1, (shape[2] - window) / stride + 1]
            }
            LayerSpec::GlobalAvgPool => {
                if shape.len() != 3 {
                    return Err(bad(format!("needs a CHW input, got {shape:?}")));
                }
                vec![shape[0]]
            }
            LayerSpec::Linear { out_features } => {
                if shape.len() != 1 || out_features == 0 {
                    return Err(bad(format!("needs a flat input, got {shape:?}")));
                }
                vec![out_features]
            }
        };
        out.push(shape.clone());
    }
    Ok(out)
}

/// Architecture, class catalog and learned parameters of a classifier.
///
/// `params[i]` holds layer `i`'s tensors: `[weight, bias]` for Conv
/// (`O x C x k x k`, `O`) and Linear (`C x K`, `C`), nothing otherwise.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub arch: Vec<LayerSpec>,
    /// `[channels, height, width]` of the expected input.
    pub input: [usize; 3],
    pub catalog: Vec<StreetContext>,
    pub params: Vec<Vec<Tensor>>,
}

/// Activations saved by the forward pass for backpropagation.
#[derive(Debug, Clone)]
pub struct Tape {
    inputs: Vec<Tensor>,
    argmax: Vec<Option<Vec<usize>>>,
}

/// Output of [`ModelParams::predict`].
#[derive(Debug, Clone)]
pub struct Prediction {
    pub class_index: usize,
    pub probabilities: Vec<f64>,
    /// Input of the global average pool, `K x H x W`.
    pub last_conv: Tensor,
    /// Output of the global average pool, length `K`.
    pub penultimate: Vec<f64>,
}

impl ModelParams {
    /// Glorot-uniform weights (bound `sqrt(6 / (fan_in + fan_out))`) drawn
    /// layer by layer in row-major order; zero biases.
    pub fn init(arch: Vec<LayerSpec>, input: [usize; 3], catalog: Vec<StreetContext>, seed: u64) -> Result<Self, NnError> {
        let shapes = propagate_shapes(&arch, input)?;
        match arch.last() {
            Some(LayerSpec::Linear { out_features }) if *out_features == catalog.len() => {}
            _ => {
                return Err(NnError::Architecture(format!(
                    "final layer must be Linear with {} outputs (one per catalog class)",
                    catalog.len()
                )))
            }
        }
        let mut rng = Rng::seed_from_u64(seed);
        let mut params = Vec::with_capacity(arch.len());
        let mut in_shape = input.to_vec();
        for (layer, out_shape) in arch.iter().zip(&shapes) {
            let p = match *layer {
                LayerSpec::Conv { out_channels, kernel, .. } => {
                    let c = in_shape[0];
                    let bound = (6.0 / ((c + out_channels) * kernel * kernel) as f64).sqrt();
                    vec![random_tensor(&[out_channels, c, kernel, kernel], bound, &mut rng), Tensor::zeros(&[out_channels])]
                }
                LayerSpec::Linear { out_features } => {
                    let k = in_shape[0];
                    let bound = (6.0 / (k + out_features) as f64).sqrt();
                    vec![random_tensor(&[out_features, k], bound, &mut rng), Tensor::zeros(&[out_features])]
                }
                _ => Vec::new(),
            };
            params.push(p);
            in_shape = out_shape.clone();
        }
        Ok(Self { arch, input, catalog, params })
    }

    pub fn num_classes(&self) -> usize {
        self.catalog.len()
    }

    /// Weight matrix (`C x K`) of the final linear layer.
    pub fn linear_weight(&self) -> Option<&Tensor> {
        self.arch.iter().rposition(|l| matches!(l, LayerSpec::Linear { .. })).map(|i| &self.params[i][0])
    }

    /// Checks parameter shapes against the architecture.
    pub fn validate(&self) -> Result<(), NnError> {
        let fresh = Self::init(self.arch.clone(), self.input, self.catalog.clone(), 0)?;
        for (i, (a, b)) in fresh.params.iter().zip(&self.params).enumerate() {
            let sa: Vec<&[usize]> = a.iter().map(Tensor::shape).collect();
            let sb: Vec<&[usize]> = b.iter().map(Tensor::shape).collect();
            if sa != sb {
                return Err(NnError::Architecture(format!("layer {i}: parameter shapes {sb:?}, expected {sa:?}")));
            }
        }
        if fresh.params.len() != self.params.len() {
            return Err(NnError::Architecture("parameter list length does not match architecture".into()));
        }
        Ok(())
    }

    /// Runs the network on an NCHW batch, recording what backprop needs.
    pub fn forward(&self, x: &Tensor) -> Result<(Tensor, Tape), NnError> {
        let s = x.shape();
        if s.len() != 4 || s[1..] != self.input {
            return Err(NnError::Shape(format!("input {s:?} does not match model input {:?}", self.input)));
        }
        let mut tape = Tape { inputs: Vec::with_capacity(self.arch.len()), argmax: Vec::with_capacity(self.arch.len()) };
        let mut cur = x.clone();
        for (layer, p) in self.arch.iter().zip(&self.params) {
            let mut arg = None;
            let next = match *layer {
                LayerSpec::Conv { stride, padding, .. } => conv2d_forward(&cur, &p[0], &p[1], stride, padding)?,
                LayerSpec::ReLU => relu_forward(&cur),
                LayerSpec::MaxPool { window, stride } => {
                    let (out, a) = maxpool_forward(&cur, window, stride)?;
                    arg = Some(a);
                    out
                }
                LayerSpec::GlobalAvgPool => global_avg_pool_forward(&cur)?,
                LayerSpec::Linear { .. } => linear_forward(&cur, &p[0], &p[1])?,
            };
            tape.inputs.push(std::mem::replace(&mut cur, next));
            tape.argmax.push(arg);
        }
        if !cur.all_finite() {
            return Err(NnError::NonFinite("forward pass"));
        }
        Ok((cur, tape))
    }

    /// Parameter gradients for an upstream gradient on the logits. Also
    /// returns the gradient with respect to the network input.
    pub fn backward(&self, tape: &Tape, dlogits: &Tensor) -> Result<(Vec<Vec<Tensor>>, Tensor), NnError> {
        if tape.inputs.len() != self.arch.len() || tape.argmax.len() != self.arch.len() {
            return Err(NnError::MissingCache);
        }
        let mut grads: Vec<Vec<Tensor>> = vec![Vec::new(); self.arch.len()];
        let mut d = dlogits.clone();
        for i in (0..self.arch.len()).rev() {
            let x = &tape.inputs[i];
            let p = &self.params[i];
            d = match self.arch[i] {
                LayerSpec::Conv { stride, padding, .. } => {
                    let (dx, dw, db) = conv2d_backward(x, &p[0], stride, padding, &d, true)?;
                    grads[i] = vec![dw, db];
                    dx
                }
                LayerSpec::ReLU => relu_backward(x, &d)?,
                LayerSpec::MaxPool { .. } => {
                    let arg = tape.argmax[i].as_ref().ok_or(NnError::MissingCache)?;
                    maxpool_backward(x.shape(), arg, &d)?
                }
                LayerSpec::GlobalAvgPool => global_avg_pool_backward(x.shape(), &d)?,
                LayerSpec::Linear { .. } => {
                    let (dx, dw, db) = linear_backward(x, &p[0], &d)?;
                    grads[i] = vec![dw, db];
                    dx
                }
            };
        }
        Ok((grads, d))
    }

    /// Classifies one image, which must already be at the model input size.
    pub fn predict(&self, image: &RgbImage) -> Result<Prediction, NnError> {
        let [c, h, w] = self.input;
        if c != 3 || image.height() as usize != h || image.width() as usize != w {
            return Err(NnError::Shape(format!("image {}x{} does not match model input {w}x{h}", image.width(), image.height())));
        }
        let x = preprocess(image).reshape(&[1, c, h, w])?;
        self.predict_tensor(&x)
    }

    /// As [`Self::predict`] for an already preprocessed `1 x C x H x W` tensor.
    pub fn predict_tensor(&self, x: &Tensor) -> Result<Prediction, NnError> {
        let (logits, tape) = self.forward(x)?;
        let probs = softmax(&logits)?.into_data();
        let class_index = argmax(&probs);
        let gap = self
            .arch
            .iter()
            .position(|l| matches!(l, LayerSpec::GlobalAvgPool))
            .ok_or_else(|| NnError::Architecture("model has no GlobalAvgPool layer".into()))?;
        let fmap = &tape.inputs[gap];
        let last_conv = Tensor::from_vec(&fmap.shape()[1..], fmap.data().to_vec())?;
        let penultimate = tape.inputs.get(gap + 1).map(|t| t.data().to_vec()).unwrap_or_default();
        Ok(Prediction { class_index, probabilities: probs, last_conv, penultimate })
    }
}

fn random_tensor(shape: &[usize], bound: f64, rng: &mut Rng) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.uniform(-bound, bound)).collect();
    Tensor::from_vec(shape, data).expect("length matches shape")
}

/// Index of the largest value; the first one wins ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// CHW tensor with every channel value mapped to `v / 255 - 0.5`.
pub fn preprocess(image: &RgbImage) -> Tensor {
    let (w, h) = (image.width() as usize, image.height() as usize);
    let mut data = vec![0.0; 3 * w * h];
    for (i, px) in image.pixels().chunks_exact(3).enumerate() {
        for c in 0..3 {
            data[c * w * h + i] = f64::from(px[c]) / 255.0 - 0.5;
        }
    }
    Tensor::from_vec(&[3, h, w], data).expect("length matches shape")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> ModelParams {
        let arch = vec![
            LayerSpec::Conv { out_channels: 4, kernel: 3, stride: 1, padding: 1 },
            LayerSpec::ReLU,
            LayerSpec::MaxPool { window: 2, stride: 2 },
            LayerSpec::GlobalAvgPool,
            LayerSpec::Linear { out_features: 3 },
        ];
        ModelParams::init(arch, [3, 8, 8], vec![StreetContext::Alley, StreetContext::Park, StreetContext::Highway], 1).unwrap()
    }

    #[test]
    fn street_net_shapes() {
        let shapes = propagate_shapes(&street_net(6), [3, 64, 64]).unwrap();
        assert_eq!(shapes[0], vec![16, 64, 64]);
        assert_eq!(shapes[2], vec![16, 32, 32]);
        assert_eq!(shapes[5], vec![32, 16, 16]);
        assert_eq!(shapes[7], vec![64, 16, 16]);
        assert_eq!(shapes[8], vec![64]);
        assert_eq!(shapes[9], vec![6]);
    }

    #[test]
    fn invalid_chains() {
        assert!(propagate_shapes(&[LayerSpec::Linear { out_features: 2 }], [3, 4, 4]).is_err());
        assert!(propagate_shapes(&[LayerSpec::MaxPool { window: 5, stride: 1 }], [3, 4, 4]).is_err());
        assert!(propagate_shapes(&[LayerSpec::GlobalAvgPool, LayerSpec::GlobalAvgPool], [3, 4, 4]).is_err());
        let err = ModelParams::init(street_net(3), [3, 16, 16], vec![StreetContext::Park], 0).unwrap_err();
        assert!(matches!(err, NnError::Architecture(_)));
    }

    #[test]
    fn init_is_seeded_and_bounded() {
        let a = tiny();
        assert_eq!(a, tiny());
        let bound = (6.0f64 / ((3 + 4) * 9) as f64).sqrt();
        assert!(a.params[0][0].data().iter().all(|v| v.abs() <= bound));
        assert!(a.params[0][1].data().iter().all(|&v| v == 0.0));
        a.validate().unwrap();
    }

    #[test]
    fn zeroed_classifier_gives_uniform_probabilities() {
        let mut m = tiny();
        let li = m.params.len() - 1;
        m.params[li][0].data_mut().fill(0.0);
        let p = m.predict(&RgbImage::filled(8, 8, [10, 200, 30])).unwrap();
        for v in &p.probabilities {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
        assert_eq!(p.last_conv.shape(), &[4, 4, 4]);
        assert_eq!(p.penultimate.len(), 4);
    }

    #[test]
    fn backward_requires_tape() {
        let m = tiny();
        let empty = Tape { inputs: Vec::new(), argmax: Vec::new() };
        assert!(matches!(m.backward(&empty, &Tensor::zeros(&[1, 3])), Err(NnError::MissingCache)));
    }

    #[test]
    fn predict_rejects_wrong_size() {
        assert!(tiny().predict(&RgbImage::filled(9, 8, [0, 0, 0])).is_err());
    }

    #[test]
    fn preprocessing_range() {
        let t = preprocess(&RgbImage::filled(2, 1, [0, 255, 51]));
        assert_eq!(t.shape(), &[3, 1, 2]);
        assert_eq!(t.data(), &[-0.5, -0.5, 0.5, 0.5, -0.3, -0.3]);
    }
}
