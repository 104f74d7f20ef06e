//! Model file: `SCTX`, a version byte, a little-endian `u32` header length,
//! a JSON header (architecture, input shape, catalog, parameter shapes),
//! then every parameter tensor as little-endian `f64` in layer order.

use serde::{Deserialize, Serialize};

use super::model::{LayerSpec, ModelParams};
use super::{NnError, Tensor};
use crate::labeler::StreetContext;

pub const MODEL_MAGIC: &[u8; 4] = b"SCTX";
pub const MODEL_VERSION: u8 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    arch: Vec<LayerSpec>,
    input: [usize; 3],
    catalog: Vec<StreetContext>,
    param_shapes: Vec<Vec<Vec<usize>>>,
}

pub fn save_model(model: &ModelParams) -> Vec<u8> {
    let header = Header {
        arch: model.arch.clone(),
        input: model.input,
        catalog: model.catalog.clone(),
        param_shapes: model.params.iter().map(|l| l.iter().map(|t| t.shape().to_vec()).collect()).collect(),
    };
    let json = serde_json::to_vec(&header).expect("header serializes");
    let mut out = Vec::new();
    out.extend_from_slice(MODEL_MAGIC);
    out.push(MODEL_VERSION);
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    for t in model.params.iter().flatten() {
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn load_model(bytes: &[u8]) -> Result<ModelParams, NnError> {
    let bad = |m: &str| NnError::ModelFile(m.to_string());
    if bytes.len() < 9 || &bytes[..4] != MODEL_MAGIC {
        return Err(bad("missing SCTX magic"));
    }
    if bytes[4] != MODEL_VERSION {
        return Err(NnError::ModelFile(format!("unsupported version {}", bytes[4])));
    }
    let len = u32::from_le_bytes(bytes[5..9].try_into().unwrap()) as usize;
    let json = bytes.get(9..9 + len).ok_or_else(|| bad("truncated header"))?;
    let header: Header = serde_json::from_slice(json).map_err(|e| NnError::ModelFile(e.to_string()))?;
    let mut pos = 9 + len;
    let mut params = Vec::with_capacity(header.param_shapes.len());
    for layer in &header.param_shapes {
        let mut tensors = Vec::with_capacity(layer.len());
        for shape in layer {
            let n: usize = shape.iter().product();
            let raw = bytes.get(pos..pos + 8 * n).ok_or_else(|| bad("truncated parameter data"))?;
            pos += 8 * n;
            let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
            tensors.push(Tensor::from_vec(shape, data)?);
        }
        params.push(tensors);
    }
    if pos != bytes.len() {
        return Err(bad("trailing bytes after parameters"));
    }
    let model = ModelParams { arch: header.arch, input: header.input, catalog: header.catalog, params };
    model.validate()?;
    Ok(model)
}
