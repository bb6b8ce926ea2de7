//! Causal transformer decoder predicting future features.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::diff::{Bound, ParamId, ParamStore, Tape, Tensor, Var};
use crate::encoder::POS_INIT_STD;
use crate::error::{Error, Result};
use crate::layers::{LayerNorm, TransformerBlock};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecoderConfig {
    pub layers: usize,
    pub heads: usize,
    pub mlp_hidden: usize,
    /// Longest rollout accepted, in appended steps.
    #[serde(default = "default_max_rollout")]
    pub max_rollout: usize,
}

fn default_max_rollout() -> usize {
    16
}

impl Default for DecoderConfig {
    fn default() -> Self {
        DecoderConfig {
            layers: 2,
            heads: 2,
            mlp_hidden: 128,
            max_rollout: default_max_rollout(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Decoder {
    pub config: DecoderConfig,
    pub pos: ParamId,
    pub frames: usize,
    pub blocks: Vec<TransformerBlock>,
    pub norm: LayerNorm,
}

/// Inputs fed to the decoder and its outputs after a rollout.
#[derive(Debug, Clone)]
pub struct Rollout {
    /// `(T + n) × d`: the original sequence followed by each re-injected prediction.
    pub inputs: Var,
    /// `(T + n) × d` decoder outputs on `inputs`.
    pub outputs: Var,
}

impl Rollout {
    /// Embedding used to anticipate `n` steps past the observed window.
    pub fn last(&self, tape: &mut Tape) -> Result<Var> {
        let n = tape.shape(self.outputs)[0];
        tape.slice_rows(self.outputs, n - 1, n)
    }
}

impl Decoder {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        config: &DecoderConfig,
        dim: usize,
        frames: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let pos = store.register("decoder.pos", Tensor::randn(&[frames, dim], POS_INIT_STD, rng))?;
        let blocks = (0..config.layers)
            .map(|i| {
                TransformerBlock::new(
                    store,
                    &format!("decoder.block{i}"),
                    dim,
                    config.heads,
                    config.mlp_hidden,
                    rng,
                )
            })
            .collect::<Result<_>>()?;
        Ok(Decoder {
            config: config.clone(),
            pos,
            frames,
            blocks,
            norm: LayerNorm::new(store, "decoder.norm", dim)?,
        })
    }

    fn positions(&self, tape: &mut Tape, p: &Bound, n: usize) -> Result<Var> {
        if n <= self.frames {
            return tape.slice_rows(p[self.pos], 0, n);
        }
        let rows: Vec<usize> = (0..n).map(|i| i.min(self.frames - 1)).collect();
        tape.gather_rows(p[self.pos], &rows)
    }

    /// Maps `x: n × d` to `n × d` predictions; row `t` depends on rows `0..=t` only.
    pub fn decode(&self, tape: &mut Tape, p: &Bound, x: Var) -> Result<Var> {
        let s = tape.shape(x).to_vec();
        let d = tape.shape(p[self.pos])[1];
        if s.len() != 2 || s[1] != d {
            return Err(Error::dim("decode", &s, &[s[0], d]));
        }
        if s[0] > self.frames + self.config.max_rollout {
            return Err(Error::config(format!(
                "sequence of {} exceeds {} frames plus {} rollout steps",
                s[0], self.frames, self.config.max_rollout
            )));
        }
        let pos = self.positions(tape, p, s[0])?;
        let mut h = tape.add(x, pos)?;
        for b in &self.blocks {
            h = b.forward_grouped(tape, p, h, s[0], true)?;
        }
        self.norm.forward(tape, p, h)
    }

    /// Decodes, then `steps` times appends the last prediction as the next input and decodes again.
    pub fn rollout(&self, tape: &mut Tape, p: &Bound, x: Var, steps: usize) -> Result<Rollout> {
        let t = tape.shape(x)[0];
        if t + steps > self.frames + self.config.max_rollout {
            return Err(Error::config(format!(
                "rollout of {steps} steps exceeds the limit of {}",
                self.config.max_rollout
            )));
        }
        let mut inputs = x;
        let mut outputs = self.decode(tape, p, inputs)?;
        for _ in 0..steps {
            let n = tape.shape(outputs)[0];
            let last = tape.slice_rows(outputs, n - 1, n)?;
            inputs = tape.concat_rows(&[inputs, last])?;
            outputs = self.decode(tape, p, inputs)?;
        }
        Ok(Rollout { inputs, outputs })
    }
}
