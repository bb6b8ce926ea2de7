//! Dataset manifests, binary feature/prototype files, observation windows and
//! synthetic data generation.

pub mod files;
pub mod loader;
pub mod manifest;
pub mod synth;
pub mod window;

pub use files::{
    read_feature_file, read_prototype_file, write_feature_file, write_prototype_file, FeatureArray, PrototypeArray,
};
pub use loader::{Clip, ClipInput, Dataset};
pub use manifest::{DatasetManifest, SegmentRecord};
pub use synth::{generate_synthetic_dataset, SynthConfig, SyntheticDataset};
pub use window::sample_observation_window;
