//! Synthetic anticipation datasets with controllable action co-occurrence.
//!
//! Each clip is a Markov chain of actions over a row-stochastic co-occurrence
//! graph. Frames carry class-dependent Gaussian token features, and the
//! language prototypes are a spectral embedding of the symmetrized graph so
//! their cosine geometry mirrors co-occurrence strength.

use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::dataio::files::{write_feature_file, write_prototype_file, FeatureArray, PrototypeArray};
use crate::dataio::manifest::{DatasetManifest, SegmentRecord};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub num_classes: usize,
    /// Observed frames per clip.
    pub frames: usize,
    /// Tokens per frame (1 for global features, `P + 1` for token features).
    pub tokens: usize,
    pub dim: usize,
    pub clips: usize,
    /// Row-stochastic `K × K` transition matrix.
    pub co_graph: Vec<Vec<f64>>,
    pub seed: u64,
    pub fps: f64,
    pub tau_a: f64,
    /// Frames stored before the training window, so larger `τ_a` can be evaluated.
    pub extra_history: usize,
    pub noise_std: f64,
}

impl SynthConfig {
    pub fn new(
        num_classes: usize,
        frames: usize,
        dim: usize,
        clips: usize,
        co_graph: Vec<Vec<f64>>,
        seed: u64,
    ) -> Self {
        SynthConfig {
            num_classes,
            frames,
            tokens: 1,
            dim,
            clips,
            co_graph,
            seed,
            fps: 1.0,
            tau_a: 1.0,
            extra_history: 4,
            noise_std: 0.25,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticDataset {
    pub manifest: DatasetManifest,
    /// Feature arrays, one per manifest record, in record order.
    pub features: Vec<FeatureArray>,
    pub language: PrototypeArray,
    /// Full action sequence of each clip (stored frames followed by the target).
    pub sequences: Vec<Vec<usize>>,
}

pub fn validate_co_graph(graph: &[Vec<f64>]) -> Result<()> {
    let k = graph.len();
    if k < 2 {
        return Err(Error::Validation(format!("co-occurrence graph needs K >= 2, got {k}")));
    }
    for (i, row) in graph.iter().enumerate() {
        if row.len() != k {
            return Err(Error::Validation(format!(
                "co-occurrence row {i} has {} entries, expected {k}",
                row.len()
            )));
        }
        let sum: f64 = row.iter().sum();
        if row.iter().any(|&p| !(p >= 0.0)) || (sum - 1.0).abs() > 1e-6 {
            return Err(Error::Validation(format!(
                "co-occurrence row {i} is not stochastic (sum {sum})"
            )));
        }
    }
    Ok(())
}

pub fn uniform_graph(k: usize) -> Vec<Vec<f64>> {
    vec![vec![1.0 / k as f64; k]; k]
}

pub fn identity_graph(k: usize) -> Vec<Vec<f64>> {
    (0..k)
        .map(|i| (0..k).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
        .collect()
}

/// Classes split into `blocks` contiguous groups; each row puts `within` mass
/// uniformly inside its own group and the rest uniformly outside.
pub fn block_graph(k: usize, blocks: usize, within: f64) -> Vec<Vec<f64>> {
    let block_of = |c: usize| c * blocks / k;
    (0..k)
        .map(|i| {
            let inside = (0..k).filter(|&j| block_of(j) == block_of(i)).count();
            let outside = k - inside;
            (0..k)
                .map(|j| {
                    if block_of(j) == block_of(i) {
                        within / inside as f64
                    } else if outside > 0 {
                        (1.0 - within) / outside as f64
                    } else {
                        0.0
                    }
                })
                .collect()
        })
        .collect()
}

/// Each class moves to the next class of its group (cyclically) with
/// probability `p_next`; the remaining mass is spread over the other members
/// of the group, itself included.
pub fn successor_graph(k: usize, blocks: usize, p_next: f64) -> Vec<Vec<f64>> {
    let block_of = |c: usize| c * blocks / k;
    (0..k)
        .map(|i| {
            let members: Vec<usize> = (0..k).filter(|&j| block_of(j) == block_of(i)).collect();
            let mut row = vec![0.0; k];
            if members.len() == 1 {
                row[i] = 1.0;
                return row;
            }
            let pos = members.iter().position(|&j| j == i).unwrap();
            let next = members[(pos + 1) % members.len()];
            let rest = (1.0 - p_next) / (members.len() - 1) as f64;
            for &j in &members {
                row[j] = if j == next { p_next } else { rest };
            }
            row
        })
        .collect()
}

fn sample_row<R: Rng + ?Sized>(row: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (j, &p) in row.iter().enumerate() {
        acc += p;
        if u < acc {
            return j;
        }
    }
    row.iter().rposition(|&p| p > 0.0).unwrap_or(row.len() - 1)
}

/// Markov chain of `len` states starting at `start`.
pub fn sample_chain<R: Rng + ?Sized>(graph: &[Vec<f64>], start: usize, len: usize, rng: &mut R) -> Vec<usize> {
    let mut seq = Vec::with_capacity(len);
    let mut s = start;
    for i in 0..len {
        if i > 0 {
            s = sample_row(&graph[s], rng);
        }
        seq.push(s);
    }
    seq
}

/// Unit-norm `K × d` embedding whose cosine geometry follows the symmetrized graph.
///
/// With `S = (C + Cᵀ)/2`, `N = D^{-1/2} S D^{-1/2}` and `M = (I + N)/2` (positive
/// semi-definite), rows of `U·Λ^{1/2}` from the leading `d` eigenpairs of `M`
/// are row-normalized, then rotated by a seeded random orthogonal matrix.
pub fn spectral_prototypes(graph: &[Vec<f64>], dim: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
    validate_co_graph(graph)?;
    let k = graph.len();
    let s = DMatrix::from_fn(k, k, |i, j| 0.5 * (graph[i][j] + graph[j][i]));
    let deg: Vec<f64> = (0..k).map(|i| s.row(i).sum()).collect();
    let m = DMatrix::from_fn(k, k, |i, j| {
        let n = if deg[i] > 0.0 && deg[j] > 0.0 {
            s[(i, j)] / (deg[i] * deg[j]).sqrt()
        } else {
            0.0
        };
        0.5 * (if i == j { 1.0 } else { 0.0 } + n)
    });
    let eig = SymmetricEigen::new(m);
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let keep = dim.min(k);
    let mut rows = vec![vec![0.0; dim]; k];
    for (c, &e) in order.iter().take(keep).enumerate() {
        let scale = eig.eigenvalues[e].max(0.0).sqrt();
        // fix the eigenvector sign so the embedding is deterministic
        let col = eig.eigenvectors.column(e);
        let pivot = col
            .iter()
            .cloned()
            .fold(0.0f64, |a, b| if b.abs() > a.abs() { b } else { a });
        let sign = if pivot < 0.0 { -1.0 } else { 1.0 };
        for i in 0..k {
            rows[i][c] = sign * col[i] * scale;
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_1a9e);
    let g = DMatrix::from_fn(dim, dim, |_, _| StandardNormal.sample(&mut rng));
    let q = g.qr().q();
    let mut out = Vec::with_capacity(k);
    for row in rows {
        let v = nalgebra::RowDVector::from_vec(row) * &q;
        let norm = v.norm();
        out.push(v.iter().map(|x| if norm > 0.0 { x / norm } else { 0.0 }).collect());
    }
    Ok(out)
}

pub fn generate_synthetic_dataset(cfg: &SynthConfig) -> Result<SyntheticDataset> {
    validate_co_graph(&cfg.co_graph)?;
    let k = cfg.num_classes;
    if cfg.co_graph.len() != k {
        return Err(Error::Validation(format!(
            "co-occurrence graph is {}x{}, expected K = {k}",
            cfg.co_graph.len(),
            cfg.co_graph.len()
        )));
    }
    if cfg.frames == 0 || cfg.tokens == 0 || cfg.dim == 0 || !(cfg.fps > 0.0) {
        return Err(Error::Validation("frames, tokens, dim and fps must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let noise = Normal::new(0.0, cfg.noise_std).map_err(|e| Error::Validation(e.to_string()))?;

    // per-class, per-token feature means
    let means: Vec<Vec<Vec<f64>>> = (0..k)
        .map(|_| {
            let base: Vec<f64> = (0..cfg.dim).map(|_| StandardNormal.sample(&mut rng)).collect();
            (0..cfg.tokens)
                .map(|j| {
                    base.iter()
                        .map(|b| {
                            let offset: f64 = StandardNormal.sample(&mut rng);
                            if j == 0 {
                                *b
                            } else {
                                b + 0.5 * offset
                            }
                        })
                        .collect()
                })
                .collect()
        })
        .collect();

    let gap = (cfg.tau_a * cfg.fps).round() as usize;
    let stored = cfg.extra_history + cfg.frames + gap;
    let start_time = stored as f64 / cfg.fps;

    let mut records = Vec::with_capacity(cfg.clips);
    let mut features = Vec::with_capacity(cfg.clips);
    let mut sequences = Vec::with_capacity(cfg.clips);
    for c in 0..cfg.clips {
        let first = rng.random_range(0..k);
        let seq = sample_chain(&cfg.co_graph, first, stored + 1, &mut rng);
        let mut values = Vec::with_capacity(stored * cfg.tokens * cfg.dim);
        for &class in &seq[..stored] {
            for tok in &means[class] {
                for &m in tok {
                    values.push((m + noise.sample(&mut rng)) as f32);
                }
            }
        }
        features.push(FeatureArray::new(stored, cfg.tokens, cfg.dim, values)?);
        records.push(SegmentRecord {
            clip_id: format!("clip_{c:05}"),
            feature_path: format!("clip_{c:05}.sgft"),
            start_time,
            frame_labels: seq[..stored]
                .iter()
                .enumerate()
                .map(|(i, &class)| (i as f64 / cfg.fps, class))
                .collect(),
            target_class: seq[stored],
        });
        sequences.push(seq);
    }

    let language = spectral_prototypes(&cfg.co_graph, cfg.dim, cfg.seed)?;
    let manifest = DatasetManifest {
        num_classes: k,
        class_names: (0..k).map(|i| format!("action_{i:03}")).collect(),
        tau_o: cfg.frames as f64 / cfg.fps,
        tau_a: cfg.tau_a,
        fps: cfg.fps,
        records,
    };
    manifest.validate()?;
    Ok(SyntheticDataset {
        manifest,
        features,
        language: PrototypeArray {
            classes: k,
            dim: cfg.dim,
            values: language.concat().into_iter().map(|v| v as f32).collect(),
        },
        sequences,
    })
}

impl SyntheticDataset {
    /// Writes `manifest.jsonl`, one feature file per clip and `language.sglp`
    /// into `dir`, returning the manifest path.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<PathBuf> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        for (r, f) in self.manifest.records.iter().zip(&self.features) {
            write_feature_file(dir.join(&r.feature_path), f)?;
        }
        write_prototype_file(dir.join("language.sglp"), &self.language)?;
        let path = dir.join("manifest.jsonl");
        self.manifest.write(&path)?;
        Ok(path)
    }
}
