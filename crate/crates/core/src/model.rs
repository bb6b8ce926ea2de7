//! The full anticipation model: encoder, optional temporal aggregation and
//! prototype attention, causal decoder and classification head.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataio::Clip;
use crate::decoder::{Decoder, DecoderConfig};
use crate::diff::{Bound, ParamId, ParamStore, Tape, Tensor, Var};
use crate::encoder::{prototype_stats, Encoder, EncoderConfig};
use crate::error::{Error, Result};
use crate::pa::{PaBlock, PaScale};
use crate::semantic::{
    loss_cls, loss_feat, loss_past, loss_reg, loss_sem, probabilities, random_prototypes, total_loss, FeatNorm, Head,
    LanguageTargets, LossParts, LossWeights, PrototypeSubset,
};
use crate::tca::Tca;

/// Which components are active.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Toggles {
    pub tca: bool,
    pub pa: bool,
    pub sem: bool,
    /// Use the language prototypes, frozen, in place of visual prototypes.
    pub language_as_visual: bool,
}

impl Default for Toggles {
    fn default() -> Self {
        Toggles::FULL
    }
}

impl Toggles {
    pub const FULL: Toggles = Toggles {
        tca: true,
        pa: true,
        sem: true,
        language_as_visual: false,
    };

    /// Ablation settings: `"1"` baseline, `"2"` +Sem, `"3"` +TCA, `"4"` PA+Sem,
    /// `"5"` TCA+PA on frozen language prototypes, `"full"`.
    pub fn setting(name: &str) -> Result<Self> {
        let t = |tca, pa, sem, language_as_visual| Toggles {
            tca,
            pa,
            sem,
            language_as_visual,
        };
        Ok(match name {
            "1" => t(false, false, false, false),
            "2" => t(false, false, true, false),
            "3" => t(true, false, false, false),
            "4" => t(false, true, true, false),
            "5" => t(true, true, false, true),
            "full" => Toggles::FULL,
            other => return Err(Error::config(format!("unknown ablation setting `{other}`"))),
        })
    }

    /// Prototype-based cosine head and the regularizer are on.
    pub fn cosine_head(&self) -> bool {
        self.sem || self.language_as_visual
    }

    pub fn needs_prototypes(&self) -> bool {
        self.sem || self.pa || self.language_as_visual
    }

    pub fn needs_language(&self) -> bool {
        self.sem || self.language_as_visual
    }

    /// The semantic loss is active.
    pub fn sem_loss(&self) -> bool {
        self.sem && !self.language_as_visual
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub dim: usize,
    pub frames: usize,
    pub num_classes: usize,
    pub encoder: EncoderConfig,
    pub tca_blocks: usize,
    pub tca_heads: usize,
    pub pa_k: usize,
    pub pa_scale: PaScale,
    pub decoder: DecoderConfig,
    pub toggles: Toggles,
    pub subset_ratio: f64,
    pub subset_seed: u64,
    pub feat_norm: FeatNorm,
    /// Keep the visual prototypes fixed during training.
    pub freeze_visual: bool,
    pub seed: u64,
}

impl ModelConfig {
    /// Small defaults for token features of width `dim`.
    pub fn desk(num_classes: usize, frames: usize, tokens: usize, dim: usize) -> Self {
        ModelConfig {
            dim,
            frames,
            num_classes,
            encoder: if tokens == 1 {
                EncoderConfig::Adapter { input_dim: dim }
            } else {
                EncoderConfig::Tokens { tokens }
            },
            tca_blocks: crate::tca::DEFAULT_BLOCKS,
            tca_heads: 2,
            pa_k: 1,
            pa_scale: PaScale::D,
            decoder: DecoderConfig {
                layers: 2,
                heads: 2,
                mlp_hidden: 4 * dim,
                max_rollout: 16,
            },
            toggles: if tokens == 1 {
                Toggles {
                    tca: false,
                    ..Toggles::FULL
                }
            } else {
                Toggles::FULL
            },
            subset_ratio: 1.0,
            subset_seed: 0,
            feat_norm: FeatNorm::Mse,
            freeze_visual: false,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.frames == 0 || self.dim == 0 || self.num_classes == 0 {
            return Err(Error::config("frames, dim and classes must be positive"));
        }
        if self.toggles.tca && (self.encoder.is_adapter() || self.encoder.tokens()? == 1) {
            return Err(Error::config(
                "temporal aggregation needs patch tokens; disable `tca` for single-token features",
            ));
        }
        if self.pa_k > self.num_classes {
            return Err(Error::config(format!(
                "pa_k {} exceeds {} classes",
                self.pa_k, self.num_classes
            )));
        }
        if !(self.subset_ratio > 0.0 && self.subset_ratio <= 1.0) {
            return Err(Error::config(format!(
                "subset ratio {} is outside (0, 1]",
                self.subset_ratio
            )));
        }
        Ok(())
    }
}

/// Language prototypes and their cached self-similarities.
#[derive(Debug, Clone)]
pub struct Language {
    pub values: Tensor,
    pub targets: LanguageTargets,
}

#[derive(Debug, Clone)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ParamStore,
    pub encoder: Encoder,
    pub tca: Option<Tca>,
    pub pa: Option<PaBlock>,
    pub decoder: Decoder,
    pub head: Head,
    pub visual: Option<ParamId>,
    pub language: Option<Language>,
    pub subset: PrototypeSubset,
}

/// Values produced by one forward pass.
#[derive(Debug, Clone)]
pub struct Forward {
    /// `T × d` decoder inputs.
    pub i_hat: Var,
    /// `T × d` decoder outputs.
    pub z: Var,
    /// `T × K` logits for every step.
    pub logits: Var,
    pub protos: Option<Var>,
    pub selection: Option<Vec<Vec<usize>>>,
}

/// Scalar loss values of one clip; zero for inactive terms.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossValues {
    pub sem: f64,
    pub reg: f64,
    pub cls: f64,
    pub past: f64,
    pub feat: f64,
    pub total: f64,
}

impl LossValues {
    pub fn read(tape: &Tape, parts: &LossParts, total: Var) -> Self {
        let v = |p: Option<Var>| p.map(|v| tape.value(v).item()).unwrap_or(0.0);
        LossValues {
            sem: v(parts.sem),
            reg: v(parts.reg),
            cls: v(parts.cls),
            past: v(parts.past),
            feat: v(parts.feat),
            total: tape.value(total).item(),
        }
    }

    pub fn add_scaled(&mut self, o: &LossValues, s: f64) {
        self.sem += s * o.sem;
        self.reg += s * o.reg;
        self.cls += s * o.cls;
        self.past += s * o.past;
        self.feat += s * o.feat;
        self.total += s * o.total;
    }

    /// Name of the first non-finite term, if any.
    pub fn non_finite(&self) -> Option<&'static str> {
        [
            ("sem", self.sem),
            ("reg", self.reg),
            ("cls", self.cls),
            ("past", self.past),
            ("feat", self.feat),
            ("total", self.total),
        ]
        .into_iter()
        .find(|(_, v)| !v.is_finite())
        .map(|(n, _)| n)
    }
}

impl Model {
    /// Builds a model. `language` (K × d) is required when the semantic
    /// loss or frozen-language setting is on.
    pub fn new(config: ModelConfig, language: Option<Tensor>) -> Result<Self> {
        config.validate()?;
        let t = config.toggles;
        let (k, d) = (config.num_classes, config.dim);
        let language = match (t.needs_language(), language) {
            (true, None) => return Err(Error::config("this configuration needs language prototypes")),
            (_, Some(l)) => {
                if l.shape() != [k, d] {
                    return Err(Error::dim("language prototypes", l.shape(), &[k, d]));
                }
                Some(Language {
                    targets: LanguageTargets::new(&l),
                    values: l,
                })
            }
            (false, None) => None,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut params = ParamStore::new();
        let encoder = Encoder::new(&mut params, &config.encoder, d, &mut rng)?;
        let tca = if t.tca {
            Some(Tca::new(
                &mut params,
                d,
                config.tca_heads,
                config.frames,
                config.tca_blocks,
                &mut rng,
            )?)
        } else {
            None
        };
        let pa = if t.pa {
            Some(PaBlock::new(
                &mut params,
                d,
                config.frames,
                config.pa_k,
                config.pa_scale,
                &mut rng,
            )?)
        } else {
            None
        };
        let decoder = Decoder::new(&mut params, &config.decoder, d, config.frames, &mut rng)?;
        let head = Head::new(&mut params, d, k, t.cosine_head(), &mut rng)?;
        let visual = if t.needs_prototypes() || config.encoder.is_adapter() {
            let init = match (&language, t.language_as_visual) {
                (Some(l), true) => l.values.clone(),
                _ => random_prototypes(k, d, config.seed ^ 0x9e37_79b9),
            };
            let id = params.register("prototypes.visual", init)?;
            params.set_frozen(id, t.language_as_visual || config.freeze_visual);
            Some(id)
        } else {
            None
        };
        let subset = PrototypeSubset::sample(k, config.subset_ratio, config.subset_seed)?;
        Ok(Model {
            config,
            params,
            encoder,
            tca,
            pa,
            decoder,
            head,
            visual,
            language,
            subset,
        })
    }

    pub fn visual_prototypes(&self) -> Option<&Tensor> {
        self.visual.map(|id| &self.params.get(id).value)
    }

    pub fn set_visual_prototypes(&mut self, values: Tensor) -> Result<()> {
        let id = self
            .visual
            .ok_or_else(|| Error::config("this configuration has no visual prototypes"))?;
        let want = self.params.get(id).value.shape().to_vec();
        if values.shape() != want.as_slice() {
            return Err(Error::dim("visual prototypes", values.shape(), &want));
        }
        self.params.get_mut(id).value = values;
        Ok(())
    }

    /// Replaces the relative-representation subset with `⌈ratio·K⌉` seeded indices.
    pub fn set_subset_ratio(&mut self, ratio: f64, seed: u64) -> Result<()> {
        self.subset = PrototypeSubset::sample(self.config.num_classes, ratio, seed)?;
        self.config.subset_ratio = ratio;
        self.config.subset_seed = seed;
        Ok(())
    }

    fn subset_protos(&self, tape: &mut Tape, protos: Var) -> Result<Var> {
        if self.subset.is_full() {
            Ok(protos)
        } else {
            tape.gather_rows(protos, &self.subset.indices)
        }
    }

    /// Decoder inputs `Î` (T × d) for one clip.
    pub fn features(
        &self,
        tape: &mut Tape,
        p: &Bound,
        clip: &Clip,
        selection: Option<&[Vec<usize>]>,
    ) -> Result<(Var, Option<Vec<Vec<usize>>>)> {
        let stats = match (self.config.encoder.is_adapter(), self.visual_prototypes()) {
            (true, Some(v)) => Some(prototype_stats(v)),
            _ => None,
        };
        let seq = self.encoder.forward(tape, p, &clip.input, stats.as_ref())?;
        if seq.frames != self.config.frames {
            return Err(Error::dim("clip frames", &[seq.frames], &[self.config.frames]));
        }
        let cls = seq.class_tokens(tape)?;
        let context = match &self.tca {
            Some(tca) => tca.forward(tape, p, seq)?.class_tokens(tape)?,
            None => cls,
        };
        match (&self.pa, self.visual) {
            (Some(pa), Some(v)) => {
                let out = pa.forward(tape, p, cls, p[v], selection)?;
                Ok((pa.merge(tape, p, context, out.fused)?, Some(out.selection)))
            }
            _ => Ok((context, None)),
        }
    }

    pub fn forward(
        &self,
        tape: &mut Tape,
        p: &Bound,
        clip: &Clip,
        selection: Option<&[Vec<usize>]>,
    ) -> Result<Forward> {
        let (i_hat, selection) = self.features(tape, p, clip, selection)?;
        let z = self.decoder.decode(tape, p, i_hat)?;
        let protos = match self.visual {
            Some(v) if self.head.cosine => Some(p[v]),
            _ => None,
        };
        let sub = protos.map(|v| self.subset_protos(tape, v)).transpose()?;
        let logits = self.head.logits(tape, p, z, sub)?;
        Ok(Forward {
            i_hat,
            z,
            logits,
            protos,
            selection,
        })
    }

    /// Label predicted by step `t`: the next frame's label, or the target for the last step.
    pub fn step_labels(&self, clip: &Clip) -> Vec<Option<usize>> {
        let t = clip.frame_labels.len();
        (0..t)
            .map(|i| {
                if i + 1 < t {
                    clip.frame_labels[i + 1]
                } else {
                    Some(clip.target)
                }
            })
            .collect()
    }

    pub fn loss_parts(&self, tape: &mut Tape, f: &Forward, clip: &Clip) -> Result<LossParts> {
        let t = tape.shape(f.z)[0];
        let labels = self.step_labels(clip);
        let mut parts = LossParts::default();
        let last = tape.slice_rows(f.logits, t - 1, t)?;
        parts.cls = Some(loss_cls(tape, last, clip.target)?);
        parts.past = loss_past(tape, f.logits, &labels[..t - 1])?;
        parts.feat = loss_feat(tape, f.z, f.i_hat, self.config.feat_norm)?;

        let tg = self.config.toggles;
        if let (Some(protos), true) = (f.protos, tg.cosine_head()) {
            let (rows, ys): (Vec<usize>, Vec<usize>) =
                labels.iter().enumerate().filter_map(|(i, l)| l.map(|y| (i, y))).unzip();
            let zr = tape.gather_rows(f.z, &rows)?;
            parts.reg = Some(loss_reg(tape, zr, protos, &ys)?);
            if tg.sem_loss() {
                let lang = self.language.as_ref().expect("validated at build");
                let sub = self.subset_protos(tape, protos)?;
                parts.sem = Some(loss_sem(tape, zr, sub, &ys, &lang.targets, &self.subset)?);
            }
        }
        Ok(parts)
    }

    /// Forward pass and weighted loss of one clip.
    pub fn clip_loss(
        &self,
        tape: &mut Tape,
        p: &Bound,
        clip: &Clip,
        weights: &LossWeights,
        selection: Option<&[Vec<usize>]>,
    ) -> Result<(Var, LossParts)> {
        let f = self.forward(tape, p, clip, selection)?;
        let parts = self.loss_parts(tape, &f, clip)?;
        Ok((total_loss(tape, &parts, weights)?, parts))
    }

    /// Class probabilities `steps` rollout steps past the observed window.
    pub fn predict(&self, clip: &Clip, steps: usize) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let p = tape.bind(&self.params);
        let logits = self.predict_logits(&mut tape, &p, clip, steps)?;
        Ok(probabilities(tape.value(logits).data()))
    }

    pub fn predict_logits(&self, tape: &mut Tape, p: &Bound, clip: &Clip, steps: usize) -> Result<Var> {
        let (i_hat, _) = self.features(tape, p, clip, None)?;
        let r = self.decoder.rollout(tape, p, i_hat, steps)?;
        let last = r.last(tape)?;
        let protos = match self.visual {
            Some(v) if self.head.cosine => Some(self.subset_protos(tape, p[v])?),
            _ => None,
        };
        self.head.logits(tape, p, last, protos)
    }

    /// Final decoder embedding `z_{T−1}` of a clip.
    pub fn embed(&self, clip: &Clip) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let p = tape.bind(&self.params);
        let (i_hat, _) = self.features(&mut tape, &p, clip, None)?;
        let z = self.decoder.decode(&mut tape, &p, i_hat)?;
        let t = tape.shape(z)[0];
        Ok(tape.value(z).row(t - 1).to_vec())
    }

    /// Number of prototype comparisons per relative representation.
    pub fn comparisons(&self) -> usize {
        self.subset.len()
    }
}
