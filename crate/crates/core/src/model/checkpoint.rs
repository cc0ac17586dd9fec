//! JSON checkpoints. Tensors are stored as base64 of little-endian `f64` bytes so
//! a load followed by a save reproduces the file byte for byte.

use std::path::Path;

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

use super::{AdamW, AdamWConfig, Model, ModelConfig};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorRecord {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: String,
}

impl TensorRecord {
    fn encode(name: &str, t: &Tensor) -> Self {
        let bytes: Vec<u8> = t.data().iter().flat_map(|v| v.to_le_bytes()).collect();
        TensorRecord {
            name: name.to_string(),
            shape: t.shape().to_vec(),
            data: STANDARD.encode(bytes),
        }
    }

    fn decode(&self) -> Result<Tensor> {
        let bytes = STANDARD
            .decode(&self.data)
            .map_err(|e| Error::Config(format!("tensor {}: {e}", self.name)))?;
        if bytes.len() % 8 != 0 {
            return Err(Error::Config(format!("tensor {}: truncated data", self.name)));
        }
        let data = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        Tensor::new(self.shape.clone(), data)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerRecord {
    pub config: AdamWConfig,
    pub step: u64,
    pub m: Vec<TensorRecord>,
    pub v: Vec<TensorRecord>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub version: u32,
    /// Seed the weights were initialized from.
    pub seed: u64,
    pub model: ModelConfig,
    pub params: Vec<TensorRecord>,
    pub optimizer: Option<OptimizerRecord>,
}

impl Checkpoint {
    pub fn capture(model: &Model, optimizer: Option<&AdamW>, seed: u64) -> Self {
        let names: Vec<&str> = model.params.iter().map(|(_, p)| p.name.as_str()).collect();
        let encode_all = |ts: &[Tensor]| {
            names
                .iter()
                .zip(ts)
                .map(|(n, t)| TensorRecord::encode(n, t))
                .collect()
        };
        Checkpoint {
            version: CHECKPOINT_VERSION,
            seed,
            model: model.config.clone(),
            params: model
                .params
                .iter()
                .map(|(_, p)| TensorRecord::encode(&p.name, &p.value))
                .collect(),
            optimizer: optimizer.map(|o| OptimizerRecord {
                config: o.config.clone(),
                step: o.step,
                m: encode_all(&o.m),
                v: encode_all(&o.v),
            }),
        }
    }

    /// Rebuilds the model (and optimizer, when saved) with the stored tensors.
    pub fn restore(&self) -> Result<(Model, Option<AdamW>)> {
        if self.version != CHECKPOINT_VERSION {
            return Err(Error::Version {
                expected: CHECKPOINT_VERSION,
                found: self.version,
            });
        }
        let mut model = Model::new(self.model.clone(), self.seed)?;
        let expected = model.params.len();
        let decode_all = |records: &[TensorRecord], what: &str| -> Result<Vec<Tensor>> {
            if records.len() != expected {
                return Err(Error::Config(format!(
                    "checkpoint has {} {what} tensors, model has {expected}",
                    records.len()
                )));
            }
            records
                .iter()
                .zip(model.params.iter())
                .map(|(r, (_, p))| {
                    if r.name != p.name || r.shape != p.value.shape() {
                        return Err(Error::Config(format!(
                            "{what} tensor {} {:?} does not fit model tensor {} {:?}",
                            r.name,
                            r.shape,
                            p.name,
                            p.value.shape()
                        )));
                    }
                    r.decode()
                })
                .collect()
        };
        let values = decode_all(&self.params, "parameter")?;
        let optimizer = match &self.optimizer {
            None => None,
            Some(o) => {
                o.config.validate()?;
                Some(AdamW {
                    config: o.config.clone(),
                    step: o.step,
                    m: decode_all(&o.m, "first-moment")?,
                    v: decode_all(&o.v, "second-moment")?,
                })
            }
        };
        for (p, v) in model.params.iter_mut().zip(values) {
            p.value = v;
        }
        Ok((model, optimizer))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        // Check the version before the schema so old files fail clearly.
        let raw: serde_json::Value = serde_json::from_str(text)?;
        let found = raw
            .get("version")
            .and_then(|v| v.as_u64())
            .ok_or_else(|| Error::Config("checkpoint has no version field".into()))?;
        if found != CHECKPOINT_VERSION as u64 {
            return Err(Error::Version {
                expected: CHECKPOINT_VERSION,
                found: found as u32,
            });
        }
        Ok(serde_json::from_value(raw)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}
