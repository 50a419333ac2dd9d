//! Parameter checkpoints: one flat little-endian `f64` blob plus a JSON
//! manifest naming each tensor, its shape and its offset (in elements).

use std::fs;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{EncoderParams, FusionMode, FusionParams, Model, Variant};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: [usize; 2],
    pub offset: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub variant: Variant,
    pub fusion: FusionMode,
    pub dim: usize,
    pub num_features: usize,
    pub tensors: Vec<TensorEntry>,
}

pub fn save(model: &Model, blob: &Path, manifest: &Path) -> Result<()> {
    let mut bytes = Vec::new();
    let mut tensors = Vec::new();
    let mut offset = 0;
    for (name, t) in model.named() {
        let (r, c) = t.dim();
        tensors.push(TensorEntry {
            name: name.to_string(),
            shape: [r, c],
            offset,
        });
        for v in t.iter() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        offset += r * c;
    }
    let meta = CheckpointManifest {
        variant: model.variant(),
        fusion: model.fusion.mode,
        dim: model.dim(),
        num_features: model.encoder.weight.nrows(),
        tensors,
    };
    fs::write(blob, bytes).map_err(|e| Error::io(blob, e))?;
    let body = serde_json::to_string_pretty(&meta).expect("manifest serializes");
    fs::write(manifest, body + "\n").map_err(|e| Error::io(manifest, e))
}

pub fn load(blob: &Path, manifest: &Path) -> Result<Model> {
    let text = fs::read_to_string(manifest).map_err(|e| Error::io(manifest, e))?;
    let meta: CheckpointManifest = serde_json::from_str(&text).map_err(|e| Error::json(manifest, e))?;
    let bytes = fs::read(blob).map_err(|e| Error::io(blob, e))?;
    if bytes.len() % 8 != 0 {
        return Err(Error::InvalidInput(format!("{}: length is not a multiple of 8", blob.display())));
    }
    let values: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();

    let tensor = |name: &str| -> Result<Option<Array2<f64>>> {
        let Some(entry) = meta.tensors.iter().find(|t| t.name == name) else {
            return Ok(None);
        };
        let [r, c] = entry.shape;
        let end = entry.offset + r * c;
        if end > values.len() {
            return Err(Error::InvalidInput(format!("tensor {name} runs past the end of the blob")));
        }
        let data = values[entry.offset..end].to_vec();
        Ok(Some(Array2::from_shape_vec((r, c), data).expect("length checked")))
    };

    let weight = tensor("encoder.weight")?.ok_or_else(|| Error::InvalidInput("checkpoint lacks encoder.weight".into()))?;
    let model = Model {
        encoder: EncoderParams {
            variant: meta.variant,
            weight,
            weight_log_var: tensor("encoder.weight_log_var")?,
        },
        fusion: FusionParams {
            mode: meta.fusion,
            w_local: tensor("fusion.w_local")?,
            w_diffused: tensor("fusion.w_diffused")?,
        },
    };
    if (meta.variant == Variant::Bvgae) != model.encoder.weight_log_var.is_some()
        || (meta.fusion == FusionMode::Attention) != model.fusion.w_local.is_some()
    {
        return Err(Error::InvalidInput("checkpoint tensors do not match its variant/fusion".into()));
    }
    Ok(model)
}
