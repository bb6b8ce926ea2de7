//! Checkpoint container.
//!
//! ```text
//! "SGCK" | version u32 = 1 | header length u32 | JSON header | f64 blobs
//! ```
//!
//! Blobs follow the header's order: every parameter, then the language
//! prototypes if present, then the optimizer's moment buffers per parameter.
//! All integers and floats are little-endian.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::diff::Tensor;
use crate::error::{Error, Result};
use crate::model::{Model, ModelConfig};
use crate::trainer::{Optimizer, TrainConfig, Trainer};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"SGCK";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ParamEntry {
    name: String,
    shape: Vec<usize>,
    frozen: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    model: ModelConfig,
    train: TrainConfig,
    config_hash: String,
    step: u64,
    optimizer_updates: u64,
    params: Vec<ParamEntry>,
    language: Option<Vec<usize>>,
    first_moments: bool,
    second_moments: bool,
}

/// SHA-256 of the JSON-serialized model and training configurations, hex encoded.
pub fn config_hash(model: &ModelConfig, train: &TrainConfig) -> Result<String> {
    let mut h = Sha256::new();
    h.update(serde_json::to_vec(model)?);
    h.update(serde_json::to_vec(train)?);
    Ok(h.finalize().iter().map(|b| format!("{b:02x}")).collect())
}

/// Everything needed to resume training or evaluate.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model_config: ModelConfig,
    pub train_config: TrainConfig,
    pub params: Vec<(String, Tensor, bool)>,
    pub language: Option<Tensor>,
    pub optimizer: Optimizer,
    pub step: u64,
}

fn put_f64s(out: &mut Vec<u8>, v: &[f64]) {
    for x in v {
        out.extend_from_slice(&x.to_le_bytes());
    }
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Format {
                offset: self.pos,
                msg: format!("truncated checkpoint: need {n} more bytes"),
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        Ok(self
            .take(n * 8)?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }
}

impl Checkpoint {
    pub fn from_trainer(t: &Trainer) -> Self {
        Checkpoint {
            model_config: t.model.config.clone(),
            train_config: t.config.clone(),
            params: t
                .model
                .params
                .iter()
                .map(|(_, p)| (p.name.clone(), p.value.clone(), p.frozen))
                .collect(),
            language: t.model.language.as_ref().map(|l| l.values.clone()),
            optimizer: t.optimizer.clone(),
            step: t.step,
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = Header {
            model: self.model_config.clone(),
            train: self.train_config.clone(),
            config_hash: config_hash(&self.model_config, &self.train_config)?,
            step: self.step,
            optimizer_updates: self.optimizer.t,
            params: self
                .params
                .iter()
                .map(|(n, v, f)| ParamEntry {
                    name: n.clone(),
                    shape: v.shape().to_vec(),
                    frozen: *f,
                })
                .collect(),
            language: self.language.as_ref().map(|l| l.shape().to_vec()),
            first_moments: !self.optimizer.m.is_empty(),
            second_moments: !self.optimizer.v.is_empty(),
        };
        let json = serde_json::to_vec(&header)?;
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(&json);
        for (_, v, _) in &self.params {
            put_f64s(&mut out, v.data());
        }
        if let Some(l) = &self.language {
            put_f64s(&mut out, l.data());
        }
        for m in self.optimizer.m.iter().chain(&self.optimizer.v) {
            put_f64s(&mut out, m);
        }
        Ok(out)
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        let mut c = Cursor { buf, pos: 0 };
        if c.take(4)? != CHECKPOINT_MAGIC {
            return Err(Error::Format {
                offset: 0,
                msg: "not a checkpoint (bad magic)".into(),
            });
        }
        let version = c.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Format {
                offset: 4,
                msg: format!("unsupported checkpoint version {version}"),
            });
        }
        let len = c.u32()? as usize;
        let header: Header = serde_json::from_slice(c.take(len)?)?;
        let expected = config_hash(&header.model, &header.train)?;
        if expected != header.config_hash {
            return Err(Error::Validation("checkpoint configuration hash mismatch".into()));
        }
        let mut params = Vec::with_capacity(header.params.len());
        for e in &header.params {
            let n = e.shape.iter().product();
            params.push((e.name.clone(), Tensor::new(e.shape.clone(), c.f64s(n)?)?, e.frozen));
        }
        let language = match &header.language {
            Some(s) => Some(Tensor::new(s.clone(), c.f64s(s.iter().product())?)?),
            None => None,
        };
        let mut read_slots = |on: bool| -> Result<Vec<Vec<f64>>> {
            if !on {
                return Ok(Vec::new());
            }
            params.iter().map(|(_, v, _)| c.f64s(v.len())).collect()
        };
        let m = read_slots(header.first_moments)?;
        let v = read_slots(header.second_moments)?;
        if c.pos != buf.len() {
            return Err(Error::Format {
                offset: c.pos,
                msg: format!("{} trailing bytes after checkpoint", buf.len() - c.pos),
            });
        }
        Ok(Checkpoint {
            optimizer: Optimizer {
                config: header.train.optimizer_config(),
                t: header.optimizer_updates,
                m,
                v,
            },
            model_config: header.model,
            train_config: header.train,
            params,
            language,
            step: header.step,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }

    pub fn into_model(self) -> Result<Model> {
        Ok(self.into_trainer()?.model)
    }

    pub fn into_trainer(self) -> Result<Trainer> {
        let mut model = Model::new(self.model_config, self.language)?;
        if model.params.len() != self.params.len() {
            return Err(Error::Validation(format!(
                "checkpoint has {} parameters, the model {}",
                self.params.len(),
                model.params.len()
            )));
        }
        for (name, value, frozen) in self.params {
            let id = model
                .params
                .id(&name)
                .ok_or_else(|| Error::Validation(format!("unknown parameter `{name}` in checkpoint")))?;
            let p = model.params.get_mut(id);
            if p.value.shape() != value.shape() {
                return Err(Error::Validation(format!(
                    "checkpoint parameter `{name}` has shape {:?}, the model {:?}",
                    value.shape(),
                    p.value.shape()
                )));
            }
            p.value = value;
            p.frozen = frozen;
        }
        Ok(Trainer {
            model,
            config: self.train_config,
            optimizer: self.optimizer,
            step: self.step,
        })
    }
}
