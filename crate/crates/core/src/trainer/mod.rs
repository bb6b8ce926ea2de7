//! Optimization: presets, learning-rate schedule, batched training steps and
//! checkpoints.

mod checkpoint;
mod optim;

use std::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use checkpoint::{config_hash, Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use optim::{clip_grad_norm, Optimizer, OptimizerConfig, OptimizerKind, ADAM_EPS};

use crate::dataio::{Clip, ClipInput, Dataset};
use crate::diff::{Tape, Tensor};
use crate::error::{Error, Result};
use crate::model::{LossValues, Model, ModelConfig, Toggles};
use crate::semantic::{class_mean_prototypes, LossWeights, ProtoInit};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub preset: String,
    pub optimizer: OptimizerKind,
    pub lr: f64,
    pub momentum: f64,
    pub betas: (f64, f64),
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub warmup_epochs: usize,
    pub loss_weights: LossWeights,
    pub toggles: Toggles,
    pub grad_clip: Option<f64>,
    pub seed: u64,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.warmup_epochs > self.epochs {
            return Err(Error::config(format!(
                "warmup ({}) longer than training ({} epochs)",
                self.warmup_epochs, self.epochs
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch size must be positive"));
        }
        if !(self.lr.is_finite() && self.lr >= 0.0) {
            return Err(Error::config(format!("invalid learning rate {}", self.lr)));
        }
        Ok(())
    }

    pub fn optimizer_config(&self) -> OptimizerConfig {
        OptimizerConfig {
            kind: self.optimizer,
            momentum: self.momentum,
            betas: self.betas,
            weight_decay: self.weight_decay,
        }
    }

    pub fn steps_per_epoch(&self, clips: usize) -> usize {
        clips.div_ceil(self.batch_size).max(1)
    }
}

/// Named training configurations: `ek100`, `ek55`, `eg`, `50s` and `desk`.
pub fn make_preset(name: &str) -> Result<TrainConfig> {
    let sgd = |lr, warmup, epochs, w: LossWeights| TrainConfig {
        preset: name.to_string(),
        optimizer: OptimizerKind::Sgd,
        lr,
        momentum: 0.9,
        betas: (0.9, 0.999),
        weight_decay: 1e-5,
        batch_size: 3,
        epochs,
        warmup_epochs: warmup,
        loss_weights: w,
        toggles: Toggles::FULL,
        grad_clip: None,
        seed: 0,
    };
    Ok(match name {
        "ek100" => sgd(1e-4, 20, 50, LossWeights::new(4.0, 1.0, 1.0, 1.0, 1.0)),
        "ek55" => sgd(1e-4, 10, 35, LossWeights::new(2.0, 1.0, 1.0, 1.0, 1.0)),
        "eg" => sgd(4.75e-4, 5, 10, LossWeights::new(2.0, 1.0, 1.0, 0.1, 1.0)),
        "50s" => TrainConfig {
            optimizer: OptimizerKind::AdamW,
            momentum: 0.0,
            weight_decay: 1e-4,
            batch_size: 2,
            ..sgd(5e-6, 20, 100, LossWeights::new(1.0, 0.1, 1.0, 0.1, 1.0))
        },
        "desk" => TrainConfig {
            optimizer: OptimizerKind::AdamW,
            momentum: 0.0,
            weight_decay: 0.0,
            batch_size: 10,
            ..sgd(3e-3, 2, 30, LossWeights::new(1.0, 1.0, 1.0, 1.0, 0.1))
        },
        other => return Err(Error::config(format!("unknown preset `{other}`"))),
    })
}

/// Architecture matching a preset; the benchmark presets use width 768, a 6-layer
/// decoder with MLP width 2048, 2 aggregation blocks and patch size 16.
pub fn model_preset(name: &str, num_classes: usize, frames: usize) -> Result<ModelConfig> {
    use crate::decoder::DecoderConfig;
    use crate::encoder::EncoderConfig;
    match name {
        "ek100" | "ek55" | "eg" | "50s" => {
            let mut c = ModelConfig::desk(num_classes, frames, 197, 768);
            c.encoder = EncoderConfig::VitLite {
                patch_size: 16,
                depth: 12,
                heads: 12,
                input_size: (224, 224),
                channels: 3,
            };
            c.tca_heads = 12;
            c.decoder = DecoderConfig {
                layers: 6,
                heads: 4,
                mlp_hidden: 2048,
                max_rollout: 16,
            };
            Ok(c)
        }
        "desk" => Ok(ModelConfig::desk(num_classes, frames, 5, 16)),
        other => Err(Error::config(format!("unknown preset `{other}`"))),
    }
}

/// Linear warmup from 0 to `lr` over `warmup` steps, then cosine decay to 0 at `total`.
pub fn lr_at(step: usize, warmup: usize, total: usize, lr: f64) -> f64 {
    if step < warmup {
        return lr * step as f64 / warmup as f64;
    }
    if total <= warmup {
        return lr;
    }
    let progress = ((step - warmup) as f64 / (total - warmup) as f64).min(1.0);
    lr * (1.0 + (PI * progress).cos()) / 2.0
}

/// Mean loss of one epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub loss: LossValues,
}

/// Model plus optimizer state and step counter.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub model: Model,
    pub config: TrainConfig,
    pub optimizer: Optimizer,
    pub step: u64,
}

impl Trainer {
    /// Builds a model from `model_config` with the trainer's toggles and seed.
    pub fn new(mut model_config: ModelConfig, config: TrainConfig, language: Option<Tensor>) -> Result<Self> {
        config.validate()?;
        model_config.toggles = config.toggles;
        model_config.seed = config.seed;
        let model = Model::new(model_config, language)?;
        Ok(Self::from_model(model, config))
    }

    pub fn from_model(model: Model, config: TrainConfig) -> Self {
        let optimizer = Optimizer::new(config.optimizer_config(), &model.params);
        Trainer {
            model,
            config,
            optimizer,
            step: 0,
        }
    }

    /// Mean loss and accumulated gradients of `batch`, without updating parameters.
    pub fn batch_gradients(&mut self, batch: &[&Clip]) -> Result<LossValues> {
        if batch.is_empty() {
            return Err(Error::Validation("empty batch".into()));
        }
        let model = &self.model;
        let weights = self.config.loss_weights;
        let per_clip: Vec<Result<(Vec<Option<Vec<f64>>>, LossValues)>> = batch
            .par_iter()
            .map(|clip| {
                let mut tape = Tape::new();
                let p = tape.bind(&model.params);
                let (total, parts) = model.clip_loss(&mut tape, &p, clip, &weights, None)?;
                let values = LossValues::read(&tape, &parts, total);
                if let Some(name) = values.non_finite() {
                    return Err(Error::Numeric {
                        op: format!("loss `{name}` on clip {}", clip.id),
                    });
                }
                let grads = tape.backward(total)?;
                let g = model
                    .params
                    .iter()
                    .map(|(id, prm)| {
                        if prm.frozen {
                            None
                        } else {
                            grads.get(p[id]).map(<[f64]>::to_vec)
                        }
                    })
                    .collect();
                Ok((g, values))
            })
            .collect();
        self.model.params.zero_grad();
        let scale = 1.0 / batch.len() as f64;
        let mut mean = LossValues::default();
        for r in per_clip {
            let (g, values) = r?;
            mean.add_scaled(&values, scale);
            for ((_, prm), g) in self.model.params.iter_mut().zip(g) {
                if let Some(g) = g {
                    prm.grad.iter_mut().zip(g).for_each(|(a, b)| *a += scale * b);
                }
            }
        }
        Ok(mean)
    }

    /// One optimization step on `batch` at learning rate `lr`.
    pub fn train_step(&mut self, batch: &[&Clip], lr: f64) -> Result<LossValues> {
        let values = self.batch_gradients(batch)?;
        if let Some(max) = self.config.grad_clip {
            clip_grad_norm(&mut self.model.params, max);
        }
        self.optimizer.step(&mut self.model.params, lr)?;
        self.step += 1;
        Ok(values)
    }

    /// Full training run over `data` with the configured schedule.
    pub fn fit(&mut self, data: &Dataset, mut on_epoch: impl FnMut(&EpochRecord)) -> Result<Vec<EpochRecord>> {
        let c = self.config.clone();
        let per_epoch = c.steps_per_epoch(data.len());
        let (warmup, total) = (c.warmup_epochs * per_epoch, c.epochs * per_epoch);
        let mut history = Vec::with_capacity(c.epochs);
        for epoch in 0..c.epochs {
            let mut order: Vec<usize> = (0..data.len()).collect();
            order.shuffle(&mut ChaCha8Rng::seed_from_u64(c.seed.wrapping_add(epoch as u64)));
            let mut mean = LossValues::default();
            let mut lr = 0.0;
            for chunk in order.chunks(c.batch_size) {
                let batch: Vec<&Clip> = chunk.iter().map(|&i| &data.clips[i]).collect();
                lr = lr_at(self.step as usize, warmup, total, c.lr);
                let v = self.train_step(&batch, lr)?;
                mean.add_scaled(&v, 1.0 / per_epoch as f64);
            }
            let rec = EpochRecord { epoch, lr, loss: mean };
            on_epoch(&rec);
            history.push(rec);
        }
        Ok(history)
    }
}

/// Prototypes from class means of a recognition model's final embeddings.
///
/// A copy of the architecture without prototype attention or semantic terms
/// is trained to recognize the last observed frame's action; its final
/// decoder embeddings are then averaged per recognized class.
pub fn recognition_mean_prototypes(
    model_config: &ModelConfig,
    config: &TrainConfig,
    data: &Dataset,
) -> Result<(Tensor, Vec<usize>)> {
    let mut rc = config.clone();
    rc.toggles = Toggles {
        pa: false,
        sem: false,
        language_as_visual: false,
        ..config.toggles
    };
    let mut recog = data.clone();
    recog
        .clips
        .retain(|c| c.frame_labels.last().copied().flatten().is_some());
    for c in &mut recog.clips {
        c.target = c.frame_labels.last().copied().flatten().expect("retained");
        c.frame_labels = c
            .frame_labels
            .iter()
            .map(|_| c.frame_labels.last().copied().flatten())
            .collect();
    }
    let mut t = Trainer::new(model_config.clone(), rc, None)?;
    t.fit(&recog, |_| {})?;
    let samples = recog
        .clips
        .par_iter()
        .map(|c| Ok((c.target, t.model.embed(c)?)))
        .collect::<Result<Vec<_>>>()?;
    class_mean_prototypes(&samples, model_config.num_classes, model_config.dim, config.seed)
}

/// Prototypes from class means of raw features: the first token of each
/// labeled frame, averaged per frame label.
pub fn feature_mean_prototypes(data: &Dataset, dim: usize, seed: u64) -> Result<(Tensor, Vec<usize>)> {
    let mut samples = Vec::new();
    for c in &data.clips {
        let ClipInput::Tokens(x) = &c.input else {
            return Err(Error::config("class-mean initialization needs token features"));
        };
        let per_frame = x.len() / x.shape()[0];
        let width = x.shape()[2];
        for (t, label) in c.frame_labels.iter().enumerate() {
            if let Some(y) = label {
                samples.push((*y, x.data()[t * per_frame..t * per_frame + width].to_vec()));
            }
        }
    }
    class_mean_prototypes(&samples, data.num_classes, dim, seed)
}

/// Initial visual prototypes for `init`; `None` keeps the model's random draw.
pub fn initial_prototypes(
    init: ProtoInit,
    model_config: &ModelConfig,
    config: &TrainConfig,
    data: &Dataset,
) -> Result<Option<Tensor>> {
    Ok(match init {
        ProtoInit::Random => None,
        ProtoInit::ClassMean => Some(feature_mean_prototypes(data, model_config.dim, config.seed)?.0),
        ProtoInit::RecognitionMean => Some(recognition_mean_prototypes(model_config, config, data)?.0),
    })
}
