//! Single-file checkpoint: magic bytes, a length-prefixed JSON manifest and
//! raw little-endian `f32` arrays in manifest order.
//!
//! Layout: `UEDL1\0`, manifest length as `u64` LE, manifest JSON, parameter
//! values, then (when training state is present) the Adam first and second
//! moments in the same tensor order.

use std::io::Write;
use std::path::Path;

use autograd::Tensor;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::features::EncodingModel;
use crate::setting::{HyperparameterSetting, OptimizerKind};
use crate::ulstm::{Architecture, Model, ModelParams};

pub const MAGIC: &[u8; 6] = b"UEDL1\0";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerManifest {
    pub kind: OptimizerKind,
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingManifest {
    /// Completed epochs.
    pub epoch: usize,
    pub task_names: Vec<String>,
    pub task_weights: Vec<f64>,
    pub initial_losses: Option<Vec<f64>>,
    pub optimizer: OptimizerManifest,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub setting: HyperparameterSetting,
    pub architecture: Architecture,
    pub encoding_hash: String,
    pub seed: u64,
    pub tensors: Vec<TensorEntry>,
    pub training: Option<TrainingManifest>,
}

/// Adam first and second moments, one tensor per parameter.
pub type Moments = (Vec<Tensor<f32>>, Vec<Tensor<f32>>);

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub manifest: Manifest,
    pub params: ModelParams<f32>,
    /// Adam `(m, v)` aligned with `params`, present iff `manifest.training` is.
    pub moments: Option<Moments>,
}

impl Checkpoint {
    pub fn for_model(model: &Model, enc: &EncodingModel, seed: u64) -> Self {
        Self {
            manifest: Manifest {
                format_version: FORMAT_VERSION,
                setting: model.setting.clone(),
                architecture: model.arch.clone(),
                encoding_hash: enc.hash(),
                seed,
                tensors: model
                    .params
                    .names
                    .iter()
                    .zip(&model.params.tensors)
                    .map(|(n, t)| TensorEntry {
                        name: n.clone(),
                        shape: t.shape().to_vec(),
                    })
                    .collect(),
                training: None,
            },
            params: model.params.clone(),
            moments: None,
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let json = serde_json::to_vec(&self.manifest)?;
        let mut out = Vec::with_capacity(json.len() + 14 + 4 * self.params.n_values() * 3);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        let mut put = |ts: &[Tensor<f32>]| {
            for t in ts {
                for x in t.data() {
                    out.extend_from_slice(&x.to_le_bytes());
                }
            }
        };
        put(&self.params.tensors);
        if let Some((m, v)) = &self.moments {
            put(m);
            put(v);
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |s: &str| CoreError::Checkpoint(s.to_string());
        if bytes.len() < 14 || &bytes[..6] != MAGIC {
            return Err(bad("missing UEDL1 magic"));
        }
        let len = u64::from_le_bytes(bytes[6..14].try_into().expect("8 bytes")) as usize;
        let body = bytes.get(14..14 + len).ok_or_else(|| bad("truncated manifest"))?;
        let manifest: Manifest = serde_json::from_slice(body)?;
        if manifest.format_version != FORMAT_VERSION {
            return Err(CoreError::Checkpoint(format!(
                "format version {} is not supported (expected {FORMAT_VERSION})",
                manifest.format_version
            )));
        }
        let mut pos = 14 + len;
        let mut take = |entries: &[TensorEntry]| -> Result<Vec<Tensor<f32>>> {
            entries
                .iter()
                .map(|e| {
                    let n: usize = e.shape.iter().product();
                    let raw = bytes.get(pos..pos + 4 * n).ok_or_else(|| bad("truncated tensor data"))?;
                    pos += 4 * n;
                    let data = raw
                        .chunks_exact(4)
                        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                        .collect();
                    Ok(Tensor::new(&e.shape, data)?)
                })
                .collect()
        };
        let tensors = take(&manifest.tensors)?;
        let moments = if manifest.training.is_some() {
            let m = take(&manifest.tensors)?;
            let v = take(&manifest.tensors)?;
            Some((m, v))
        } else {
            None
        };
        if pos != bytes.len() {
            return Err(bad("trailing bytes after tensor data"));
        }
        let params = ModelParams {
            names: manifest.tensors.iter().map(|e| e.name.clone()).collect(),
            tensors,
        };
        Ok(Self {
            manifest,
            params,
            moments,
        })
    }

    /// Writes to a sibling temporary file and renames it into place.
    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        let tmp = path.with_extension("tmp");
        {
            let mut f = std::fs::File::create(&tmp)?;
            f.write_all(&bytes)?;
            f.sync_all()?;
        }
        std::fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }

    /// Rebuilds the model, checking that it was trained with `enc` and that
    /// every tensor has the shape the architecture implies.
    pub fn model(&self, enc: &EncodingModel) -> Result<Model> {
        let hash = enc.hash();
        if hash != self.manifest.encoding_hash {
            return Err(CoreError::HashMismatch {
                checkpoint: self.manifest.encoding_hash.clone(),
                encoding: hash,
            });
        }
        let arch = Architecture::new(&self.manifest.setting, enc)?;
        if arch != self.manifest.architecture {
            return Err(CoreError::Checkpoint("architecture does not match the encoding model".into()));
        }
        let specs = arch.param_specs(Some(enc));
        let ok = specs.len() == self.params.len()
            && specs
                .iter()
                .zip(self.params.names.iter().zip(&self.params.tensors))
                .all(|((n, s), (name, t))| n == name && s.as_slice() == t.shape());
        if !ok {
            return Err(CoreError::Checkpoint("tensor names or shapes do not match the architecture".into()));
        }
        Ok(Model {
            setting: self.manifest.setting.clone(),
            arch,
            params: self.params.clone(),
        })
    }
}
