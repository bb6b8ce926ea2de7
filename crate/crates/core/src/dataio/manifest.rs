//! Line-delimited dataset manifests.
//!
//! The first line is a JSON header carrying the format tag and version; every
//! following non-empty line is one JSON segment record.
//!
//! ```text
//! {"format":"sgear-manifest","version":1,"num_classes":3,"class_names":[...],"tau_o":8.0,"tau_a":1.0,"fps":1.0}
//! {"clip_id":"c0","feature_path":"c0.sgft","start_time":10.0,"frame_labels":[[0.0,2],[1.0,2]],"target_class":1}
//! ```

use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MANIFEST_FORMAT: &str = "sgear-manifest";
pub const MANIFEST_VERSION: u32 = 1;

/// Marker for records whose features are supplied in memory.
pub const INLINE_FEATURES: &str = "inline";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentRecord {
    pub clip_id: String,
    /// Path relative to the manifest's directory, or [`INLINE_FEATURES`].
    pub feature_path: String,
    /// Action start time `τ_s` in seconds.
    pub start_time: f64,
    /// `(time, class)` labels of frames preceding the action.
    #[serde(default)]
    pub frame_labels: Vec<(f64, usize)>,
    pub target_class: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    format: String,
    version: u32,
    num_classes: usize,
    class_names: Vec<String>,
    tau_o: f64,
    tau_a: f64,
    fps: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub num_classes: usize,
    pub class_names: Vec<String>,
    /// Observation length in seconds.
    pub tau_o: f64,
    /// Anticipation gap in seconds.
    pub tau_a: f64,
    pub fps: f64,
    pub records: Vec<SegmentRecord>,
}

impl DatasetManifest {
    /// Number of observed frames, `round(τ_o · fps)`.
    pub fn frames(&self) -> usize {
        (self.tau_o * self.fps).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        if self.class_names.len() != self.num_classes {
            return Err(Error::Validation(format!(
                "{} class names for {} classes",
                self.class_names.len(),
                self.num_classes
            )));
        }
        let mut seen = HashSet::new();
        for n in &self.class_names {
            if !seen.insert(n) {
                return Err(Error::Validation(format!("duplicate class name {n:?}")));
            }
        }
        if !(self.fps > 0.0) || self.tau_o < 0.0 || self.tau_a < 0.0 {
            return Err(Error::Validation("fps must be positive and times non-negative".into()));
        }
        if self.frames() < 1 {
            return Err(Error::Validation(format!(
                "round(tau_o * fps) = round({} * {}) must be at least 1",
                self.tau_o, self.fps
            )));
        }
        for r in &self.records {
            if r.start_time < 0.0 {
                return Err(Error::Validation(format!("{}: negative start time", r.clip_id)));
            }
            if r.target_class >= self.num_classes {
                return Err(Error::Validation(format!(
                    "{}: target class {} out of range",
                    r.clip_id, r.target_class
                )));
            }
            for &(time, class) in &r.frame_labels {
                if time >= r.start_time || class >= self.num_classes {
                    return Err(Error::Validation(format!(
                        "{}: frame label ({time}, {class}) must precede the action and name a valid class",
                        r.clip_id
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn to_text(&self) -> Result<String> {
        let header = Header {
            format: MANIFEST_FORMAT.into(),
            version: MANIFEST_VERSION,
            num_classes: self.num_classes,
            class_names: self.class_names.clone(),
            tau_o: self.tau_o,
            tau_a: self.tau_a,
            fps: self.fps,
        };
        let mut out = serde_json::to_string(&header)?;
        out.push('\n');
        for r in &self.records {
            writeln!(out, "{}", serde_json::to_string(r)?).unwrap();
        }
        Ok(out)
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, first) = lines.next().ok_or_else(|| Error::Validation("empty manifest".into()))?;
        let header: Header = serde_json::from_str(first)?;
        if header.format != MANIFEST_FORMAT || header.version != MANIFEST_VERSION {
            return Err(Error::Validation(format!(
                "unsupported manifest {} v{}",
                header.format, header.version
            )));
        }
        let mut records = Vec::new();
        for (lineno, line) in lines {
            let r: SegmentRecord = serde_json::from_str(line)
                .map_err(|e| Error::Validation(format!("manifest line {}: {e}", lineno + 1)))?;
            records.push(r);
        }
        let m = DatasetManifest {
            num_classes: header.num_classes,
            class_names: header.class_names,
            tau_o: header.tau_o,
            tau_a: header.tau_a,
            fps: header.fps,
            records,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_text()?)?;
        Ok(())
    }

    /// Resolves a record's feature path against the manifest location.
    pub fn feature_path(manifest_path: &Path, record: &SegmentRecord) -> Option<PathBuf> {
        if record.feature_path == INLINE_FEATURES {
            return None;
        }
        let base = manifest_path.parent().unwrap_or_else(|| Path::new("."));
        Some(base.join(&record.feature_path))
    }
}
