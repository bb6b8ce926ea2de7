//! In-memory clips assembled from manifests and feature arrays.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dataio::files::{read_feature_file, FeatureArray};
use crate::dataio::manifest::{DatasetManifest, SegmentRecord};
use crate::dataio::synth::SyntheticDataset;
use crate::dataio::window::{frame_index, label_at, sample_observation_window};
use crate::diff::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub enum ClipInput {
    /// `T × tokens × d` per-frame token features.
    Tokens(Tensor),
    /// `T × H × W × C` raw frames for the patch encoder.
    Frames(Tensor),
}

impl ClipInput {
    pub fn frames(&self) -> usize {
        match self {
            ClipInput::Tokens(t) | ClipInput::Frames(t) => t.shape()[0],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Clip {
    pub id: String,
    pub input: ClipInput,
    /// Label of each observed frame, when annotated.
    pub frame_labels: Vec<Option<usize>>,
    pub target: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub num_classes: usize,
    pub class_names: Vec<String>,
    pub fps: f64,
    pub tau_o: f64,
    pub tau_a: f64,
    pub clips: Vec<Clip>,
}

/// Builds the observed clip for `record` from the frames stored in `features`.
pub fn clip_from_record(
    record: &SegmentRecord,
    features: &FeatureArray,
    tau_o: f64,
    tau_a: f64,
    fps: f64,
) -> Result<Clip> {
    let times = sample_observation_window(record.start_time, tau_o, tau_a, fps);
    let per_frame = features.tokens * features.dim;
    let mut data = Vec::with_capacity(times.len() * per_frame);
    for &t in &times {
        let idx = frame_index(t, fps);
        if idx >= features.frames {
            return Err(Error::Validation(format!(
                "{}: frame at {t}s (index {idx}) not present in a {}-frame feature file",
                record.clip_id, features.frames
            )));
        }
        data.extend(features.frame(idx).iter().map(|&v| f64::from(v)));
    }
    let tensor = Tensor::new(vec![times.len(), features.tokens, features.dim], data)?;
    Ok(Clip {
        id: record.clip_id.clone(),
        input: ClipInput::Tokens(tensor),
        frame_labels: times.iter().map(|&t| label_at(&record.frame_labels, t, fps)).collect(),
        target: record.target_class,
    })
}

impl Dataset {
    fn empty_like(manifest: &DatasetManifest, tau_a: f64) -> Self {
        Dataset {
            num_classes: manifest.num_classes,
            class_names: manifest.class_names.clone(),
            fps: manifest.fps,
            tau_o: manifest.tau_o,
            tau_a,
            clips: Vec::with_capacity(manifest.records.len()),
        }
    }

    /// Loads every record of the manifest at `path` with the manifest's `τ_a`.
    pub fn from_manifest(path: impl AsRef<Path>) -> Result<Self> {
        let manifest = DatasetManifest::read(path.as_ref())?;
        Self::from_manifest_at(path, &manifest, manifest.tau_a)
    }

    /// Loads the records of `manifest` observed `tau_a` seconds before each action.
    pub fn from_manifest_at(path: impl AsRef<Path>, manifest: &DatasetManifest, tau_a: f64) -> Result<Self> {
        let mut ds = Self::empty_like(manifest, tau_a);
        for r in &manifest.records {
            let fp = DatasetManifest::feature_path(path.as_ref(), r).ok_or_else(|| {
                Error::Validation(format!("{}: inline features cannot be loaded from disk", r.clip_id))
            })?;
            let f = read_feature_file(&fp)?;
            ds.clips
                .push(clip_from_record(r, &f, manifest.tau_o, tau_a, manifest.fps)?);
        }
        Ok(ds)
    }

    pub fn from_synthetic(synth: &SyntheticDataset, tau_a: f64) -> Result<Self> {
        let m = &synth.manifest;
        let mut ds = Self::empty_like(m, tau_a);
        for (r, f) in m.records.iter().zip(&synth.features) {
            ds.clips.push(clip_from_record(r, f, m.tau_o, tau_a, m.fps)?);
        }
        Ok(ds)
    }

    pub fn len(&self) -> usize {
        self.clips.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clips.is_empty()
    }

    /// Keeps the clips at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Self {
        Dataset {
            clips: indices.iter().map(|&i| self.clips[i].clone()).collect(),
            ..self.clone_meta()
        }
    }

    fn clone_meta(&self) -> Self {
        Dataset {
            num_classes: self.num_classes,
            class_names: self.class_names.clone(),
            fps: self.fps,
            tau_o: self.tau_o,
            tau_a: self.tau_a,
            clips: Vec::new(),
        }
    }

    /// Seeded shuffle split into `(train, held_out)` with `train_fraction` of the clips in train.
    pub fn split(&self, train_fraction: f64, seed: u64) -> (Self, Self) {
        let mut idx: Vec<usize> = (0..self.len()).collect();
        idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let n_train = ((self.len() as f64) * train_fraction).round() as usize;
        let (a, b) = idx.split_at(n_train.min(self.len()));
        let (mut a, mut b) = (a.to_vec(), b.to_vec());
        a.sort_unstable();
        b.sort_unstable();
        (self.subset(&a), self.subset(&b))
    }
}
