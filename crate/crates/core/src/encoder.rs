//! Per-frame visual features.
//!
//! Three input paths produce a token sequence of `T` frames × `n` tokens × `d`:
//!
//! * `VitLite`: patch embedding, positional encodings and a prepended class
//!   token, followed by transformer blocks applied to each frame on its own.
//! * `Tokens`: token features read from a feature file are used as-is.
//! * `Adapter`: one global feature per frame, mapped by a learnable affine
//!   layer and standardized with the visual prototypes' channel statistics.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dataio::ClipInput;
use crate::diff::{Bound, ParamId, ParamStore, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::layers::{Linear, TransformerBlock};

pub const POS_INIT_STD: f64 = 0.02;
pub const SIGMA_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case")]
pub enum EncoderConfig {
    VitLite {
        patch_size: usize,
        depth: usize,
        heads: usize,
        /// Frame height and width in pixels.
        input_size: (usize, usize),
        channels: usize,
    },
    Tokens {
        tokens: usize,
    },
    Adapter {
        input_dim: usize,
    },
}

impl EncoderConfig {
    /// Tokens per frame produced by this encoder.
    pub fn tokens(&self) -> Result<usize> {
        match *self {
            EncoderConfig::VitLite {
                patch_size,
                input_size: (h, w),
                ..
            } => {
                if patch_size == 0 || h % patch_size != 0 || w % patch_size != 0 {
                    return Err(Error::config(format!(
                        "input {h}x{w} is not divisible by patch size {patch_size}"
                    )));
                }
                Ok((h / patch_size) * (w / patch_size) + 1)
            }
            EncoderConfig::Tokens { tokens } => Ok(tokens),
            EncoderConfig::Adapter { .. } => Ok(1),
        }
    }

    pub fn is_adapter(&self) -> bool {
        matches!(self, EncoderConfig::Adapter { .. })
    }
}

/// Token features of a clip on a tape: `frames * tokens` rows of width `d`,
/// frame-major, token 0 of each frame being its class token.
#[derive(Debug, Clone, Copy)]
pub struct TokenSeq {
    pub x: Var,
    pub frames: usize,
    pub tokens: usize,
}

impl TokenSeq {
    /// `T × d` class-token rows.
    pub fn class_tokens(&self, tape: &mut Tape) -> Result<Var> {
        if self.tokens == 1 {
            return Ok(self.x);
        }
        let rows: Vec<usize> = (0..self.frames).map(|t| t * self.tokens).collect();
        tape.gather_rows(self.x, &rows)
    }

    pub fn frame(&self, tape: &mut Tape, t: usize) -> Result<Var> {
        tape.slice_rows(self.x, t * self.tokens, (t + 1) * self.tokens)
    }
}

/// Splits an `H × W × C` frame into `P = (H/p)(W/p)` flattened patches in
/// row-major patch order; each patch is flattened row, column, channel.
pub fn patchify(frame: &Tensor, patch: usize) -> Result<Tensor> {
    let s = frame.shape();
    let (h, w, c) = match s.len() {
        2 => (s[0], s[1], 1),
        3 => (s[0], s[1], s[2]),
        _ => return Err(Error::dim("patchify", s, &[patch, patch])),
    };
    if patch == 0 || h % patch != 0 || w % patch != 0 {
        return Err(Error::dim("patchify", s, &[patch, patch]));
    }
    let (ph, pw) = (h / patch, w / patch);
    let pd = patch * patch * c;
    let src = frame.data();
    let mut out = Vec::with_capacity(ph * pw * pd);
    for py in 0..ph {
        for px in 0..pw {
            for y in 0..patch {
                let row = py * patch + y;
                let start = (row * w + px * patch) * c;
                out.extend_from_slice(&src[start..start + patch * c]);
            }
        }
    }
    Tensor::new(vec![ph * pw, pd], out)
}

/// Channel-wise mean and standard deviation (population, floored) of a `K × d` store.
pub fn prototype_stats(protos: &Tensor) -> (Vec<f64>, Vec<f64>) {
    let (k, d) = protos.matrix_dims();
    let mut mean = vec![0.0; d];
    for row in protos.rows() {
        mean.iter_mut().zip(row).for_each(|(m, v)| *m += v / k as f64);
    }
    let mut std = vec![0.0; d];
    for row in protos.rows() {
        std.iter_mut()
            .zip(row.iter().zip(&mean))
            .for_each(|(s, (v, m))| *s += (v - m) * (v - m) / k as f64);
    }
    std.iter_mut().for_each(|s| *s = s.sqrt().max(SIGMA_FLOOR));
    (mean, std)
}

#[derive(Debug, Clone)]
enum Kind {
    VitLite {
        patch_size: usize,
        embed: Linear,
        pos: ParamId,
        cls: ParamId,
        blocks: Vec<TransformerBlock>,
        patches: usize,
    },
    Tokens {
        tokens: usize,
    },
    Adapter {
        lin: Linear,
    },
}

#[derive(Debug, Clone)]
pub struct Encoder {
    pub config: EncoderConfig,
    pub dim: usize,
    kind: Kind,
}

impl Encoder {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        config: &EncoderConfig,
        dim: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let kind = match *config {
            EncoderConfig::VitLite {
                patch_size,
                depth,
                heads,
                channels,
                ..
            } => {
                let patches = config.tokens()? - 1;
                let embed = Linear::new(
                    store,
                    "encoder.patch_embed",
                    patch_size * patch_size * channels,
                    dim,
                    rng,
                )?;
                let pos = store.register("encoder.pos", Tensor::randn(&[patches, dim], POS_INIT_STD, rng))?;
                let cls = store.register("encoder.cls", Tensor::randn(&[1, dim], POS_INIT_STD, rng))?;
                let blocks = (0..depth)
                    .map(|i| TransformerBlock::new(store, &format!("encoder.block{i}"), dim, heads, 4 * dim, rng))
                    .collect::<Result<_>>()?;
                Kind::VitLite {
                    patch_size,
                    embed,
                    pos,
                    cls,
                    blocks,
                    patches,
                }
            }
            EncoderConfig::Tokens { tokens } => Kind::Tokens { tokens },
            EncoderConfig::Adapter { input_dim } => Kind::Adapter {
                lin: Linear::new(store, "encoder.adapter", input_dim, dim, rng)?,
            },
        };
        Ok(Encoder {
            config: config.clone(),
            dim,
            kind,
        })
    }

    /// Adapter layer, when in adapter mode.
    pub fn adapter(&self) -> Option<&Linear> {
        match &self.kind {
            Kind::Adapter { lin } => Some(lin),
            _ => None,
        }
    }

    /// Runs the encoder on one clip. `proto_stats` (channel mean and std of the
    /// visual prototypes) is required in adapter mode.
    pub fn forward(
        &self,
        tape: &mut Tape,
        p: &Bound,
        input: &ClipInput,
        proto_stats: Option<&(Vec<f64>, Vec<f64>)>,
    ) -> Result<TokenSeq> {
        match (&self.kind, input) {
            (
                Kind::VitLite {
                    patch_size,
                    embed,
                    pos,
                    cls,
                    blocks,
                    patches,
                },
                ClipInput::Frames(frames),
            ) => {
                let s = frames.shape();
                let t = s[0];
                let per = frames.len() / t;
                let mut all = Vec::with_capacity(t);
                for i in 0..t {
                    let f = Tensor::new(s[1..].to_vec(), frames.data()[i * per..(i + 1) * per].to_vec())?;
                    let pt = patchify(&f, *patch_size)?;
                    if pt.shape()[0] != *patches || pt.shape()[1] != embed.in_dim {
                        return Err(Error::dim("encode_clip", pt.shape(), &[*patches, embed.in_dim]));
                    }
                    all.push(pt);
                }
                let stacked = Tensor::new(
                    vec![t * patches, embed.in_dim],
                    all.into_iter().flat_map(Tensor::into_data).collect(),
                )?;
                let sv = tape.constant(stacked);
                let emb = embed.forward(tape, p, sv)?;
                let mut frames_out = Vec::with_capacity(2 * t);
                for i in 0..t {
                    let e = tape.slice_rows(emb, i * patches, (i + 1) * patches)?;
                    let e = tape.add(e, p[*pos])?;
                    frames_out.push(p[*cls]);
                    frames_out.push(e);
                }
                let mut x = tape.concat_rows(&frames_out)?;
                for b in blocks {
                    x = b.forward_grouped(tape, p, x, patches + 1, false)?;
                }
                Ok(TokenSeq {
                    x,
                    frames: t,
                    tokens: patches + 1,
                })
            }
            (Kind::Tokens { tokens }, ClipInput::Tokens(feat)) => {
                let s = feat.shape();
                if s.len() != 3 || s[1] != *tokens || s[2] != self.dim {
                    return Err(Error::dim("encode_clip", s, &[s[0], *tokens, self.dim]));
                }
                let x = tape.constant(feat.clone().reshape(vec![s[0] * s[1], s[2]])?);
                Ok(TokenSeq {
                    x,
                    frames: s[0],
                    tokens: *tokens,
                })
            }
            (Kind::Adapter { lin }, ClipInput::Tokens(feat)) => {
                let (mean, std) =
                    proto_stats.ok_or_else(|| Error::config("adapter mode needs visual prototype statistics"))?;
                let s = feat.shape();
                if s.len() != 3 || s[1] != 1 || s[2] != lin.in_dim {
                    return Err(Error::dim("adapt_features", s, &[s[0], 1, lin.in_dim]));
                }
                let chi = tape.constant(feat.clone().reshape(vec![s[0], s[2]])?);
                let x = adapt_features(tape, p, lin, chi, mean, std)?;
                Ok(TokenSeq {
                    x,
                    frames: s[0],
                    tokens: 1,
                })
            }
            _ => Err(Error::config(format!(
                "encoder mode {:?} cannot consume this clip input",
                self.config
            ))),
        }
    }
}

/// `(lin(χ_t) − μ) / σ` row-wise for `χ: T × d_in`.
pub fn adapt_features(tape: &mut Tape, p: &Bound, lin: &Linear, chi: Var, mean: &[f64], std: &[f64]) -> Result<Var> {
    let y = lin.forward(tape, p, chi)?;
    let rows = tape.shape(y)[0];
    let d = tape.shape(y)[1];
    if mean.len() != d || std.len() != d {
        return Err(Error::dim("adapt_features", &[d], &[mean.len()]));
    }
    let neg_mean = tape.constant(Tensor::vector(mean.iter().map(|m| -m).collect()));
    let centered = tape.add_row(y, neg_mean)?;
    let inv: Vec<f64> = (0..rows)
        .flat_map(|_| std.iter().map(|s| 1.0 / s.max(SIGMA_FLOOR)))
        .collect();
    let inv = tape.constant(Tensor::new(vec![rows, d], inv)?);
    tape.mul(centered, inv)
}
