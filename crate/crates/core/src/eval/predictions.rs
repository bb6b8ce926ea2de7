use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const PREDICTION_FORMAT: &str = "sgear-predictions";
pub const PREDICTION_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub clip_id: String,
    pub scores: Vec<f64>,
    pub target: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub verb: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noun: Option<usize>,
}

impl PredictionRecord {
    pub fn new(clip_id: impl Into<String>, scores: Vec<f64>, target: usize) -> Self {
        PredictionRecord {
            clip_id: clip_id.into(),
            scores,
            target,
            verb: None,
            noun: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PredictionSet {
    pub records: Vec<PredictionRecord>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    format: String,
    version: u32,
    num_classes: usize,
}

impl PredictionSet {
    pub fn num_classes(&self) -> usize {
        self.records.first().map(|r| r.scores.len()).unwrap_or(0)
    }

    /// Every record has `K` scores summing to 1 within `1e-6` and an in-range target.
    pub fn validate(&self) -> Result<()> {
        let k = self.num_classes();
        let mut seen = BTreeSet::new();
        for r in &self.records {
            if r.scores.len() != k {
                return Err(Error::Validation(format!(
                    "{}: {} scores, expected {k}",
                    r.clip_id,
                    r.scores.len()
                )));
            }
            let s: f64 = r.scores.iter().sum();
            if (s - 1.0).abs() > 1e-6 || r.scores.iter().any(|v| !(0.0..=1.0 + 1e-12).contains(v)) {
                return Err(Error::Validation(format!(
                    "{}: scores are not a probability vector",
                    r.clip_id
                )));
            }
            if r.target >= k {
                return Err(Error::Index {
                    index: r.target,
                    len: k,
                    context: "prediction target",
                });
            }
            if !seen.insert(&r.clip_id) {
                return Err(Error::Validation(format!("duplicate clip id {}", r.clip_id)));
            }
        }
        Ok(())
    }

    pub fn to_text(&self) -> Result<String> {
        let mut out = serde_json::to_string(&Header {
            format: PREDICTION_FORMAT.into(),
            version: PREDICTION_VERSION,
            num_classes: self.num_classes(),
        })?;
        out.push('\n');
        for r in &self.records {
            out.push_str(&serde_json::to_string(r)?);
            out.push('\n');
        }
        Ok(out)
    }

    pub fn from_reader(reader: impl BufRead) -> Result<Self> {
        let mut lines = reader.lines();
        let first = lines
            .next()
            .ok_or_else(|| Error::Validation("empty prediction file".into()))??;
        let h: Header = serde_json::from_str(&first)?;
        if h.format != PREDICTION_FORMAT || h.version != PREDICTION_VERSION {
            return Err(Error::Validation(format!(
                "unsupported prediction file {} v{}",
                h.format, h.version
            )));
        }
        let mut records = Vec::new();
        for line in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            records.push(serde_json::from_str(&line)?);
        }
        let set = PredictionSet { records };
        if set.num_classes() != h.num_classes && !set.records.is_empty() {
            return Err(Error::Validation(format!(
                "header says {} classes, records have {}",
                h.num_classes,
                set.num_classes()
            )));
        }
        Ok(set)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_reader(BufReader::new(std::fs::File::open(path)?))
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_text()?)?;
        Ok(())
    }

    /// `clip_id,target,p_0,…,p_{K−1}` rows with a header.
    pub fn write_csv(&self, out: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["clip_id".to_string(), "target".to_string()];
        header.extend((0..self.num_classes()).map(|j| format!("p{j}")));
        w.write_record(&header)?;
        for r in &self.records {
            let mut row = vec![r.clip_id.clone(), r.target.to_string()];
            row.extend(r.scores.iter().map(|s| s.to_string()));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    fn by_id(&self) -> BTreeMap<&str, &PredictionRecord> {
        self.records.iter().map(|r| (r.clip_id.as_str(), r)).collect()
    }
}

/// Named fusion weights: `ek100` (ViT, ViT↓, TSN, irCSN, objects) and
/// `ek55` (ViT, irCSN, TSN, flow, objects).
pub fn fusion_preset(name: &str) -> Result<Vec<(&'static str, f64)>> {
    match name {
        "ek100" => Ok(vec![
            ("vit", 2.5),
            ("vit_low", 1.5),
            ("tsn", 1.0),
            ("ircsn", 1.0),
            ("obj", 0.5),
        ]),
        "ek55" => Ok(vec![
            ("vit", 1.5),
            ("ircsn", 1.5),
            ("tsn", 1.5),
            ("flow", 1.0),
            ("obj", 1.0),
        ]),
        other => Err(Error::config(format!("unknown fusion preset `{other}`"))),
    }
}

/// Weighted sum of probability vectors per clip, renormalized. Output follows the first set's clip order.
pub fn late_fuse(sets: &[(&PredictionSet, f64)]) -> Result<PredictionSet> {
    let Some(&(first, _)) = sets.first() else {
        return Err(Error::Evaluation("nothing to fuse".into()));
    };
    if sets.iter().any(|(_, w)| !w.is_finite() || *w < 0.0) || sets.iter().all(|(_, w)| *w == 0.0) {
        return Err(Error::config("fusion weights must be non-negative and not all zero"));
    }
    let ids: BTreeSet<&str> = first.records.iter().map(|r| r.clip_id.as_str()).collect();
    let maps: Vec<_> = sets.iter().map(|(s, _)| s.by_id()).collect();
    let mut missing = BTreeSet::new();
    for m in &maps {
        let other: BTreeSet<&str> = m.keys().copied().collect();
        missing.extend(ids.symmetric_difference(&other).map(|s| s.to_string()));
    }
    if !missing.is_empty() {
        return Err(Error::Alignment {
            missing: missing.into_iter().collect(),
        });
    }
    let k = first.num_classes();
    let mut records = Vec::with_capacity(first.records.len());
    for r in &first.records {
        let mut acc = vec![0.0; k];
        for (m, (_, w)) in maps.iter().zip(sets) {
            let o = m[r.clip_id.as_str()];
            if o.scores.len() != k {
                return Err(Error::dim("late_fuse", &[k], &[o.scores.len()]));
            }
            acc.iter_mut().zip(&o.scores).for_each(|(a, s)| *a += w * s);
        }
        let total: f64 = acc.iter().sum();
        acc.iter_mut().for_each(|a| *a /= total);
        records.push(PredictionRecord {
            scores: acc,
            ..r.clone()
        });
    }
    Ok(PredictionSet { records })
}

/// Action → (verb, noun) map read from a CSV with columns `action,verb,noun`.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionMap {
    pub pairs: Vec<(usize, usize)>,
}

impl ActionMap {
    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        #[derive(Deserialize)]
        struct Row {
            action: usize,
            verb: usize,
            noun: usize,
        }
        let mut rows: Vec<Row> = csv::Reader::from_path(path)?
            .deserialize()
            .collect::<std::result::Result<_, _>>()?;
        rows.sort_by_key(|r| r.action);
        if rows.iter().enumerate().any(|(i, r)| r.action != i) {
            return Err(Error::Validation(
                "action map must list actions 0..K exactly once".into(),
            ));
        }
        Ok(ActionMap {
            pairs: rows.into_iter().map(|r| (r.verb, r.noun)).collect(),
        })
    }

    /// Verb-level and noun-level prediction sets obtained by summing action scores.
    pub fn marginalize(&self, p: &PredictionSet) -> Result<(PredictionSet, PredictionSet)> {
        if p.num_classes() != self.pairs.len() {
            return Err(Error::dim("marginalize", &[p.num_classes()], &[self.pairs.len()]));
        }
        let verbs = self.pairs.iter().map(|v| v.0).max().unwrap_or(0) + 1;
        let nouns = self.pairs.iter().map(|v| v.1).max().unwrap_or(0) + 1;
        let mut vs = PredictionSet::default();
        let mut ns = PredictionSet::default();
        for r in &p.records {
            let mut v = vec![0.0; verbs];
            let mut n = vec![0.0; nouns];
            for (a, s) in r.scores.iter().enumerate() {
                v[self.pairs[a].0] += s;
                n[self.pairs[a].1] += s;
            }
            let (tv, tn) = self.pairs[r.target];
            vs.records.push(PredictionRecord::new(r.clip_id.clone(), v, tv));
            ns.records.push(PredictionRecord::new(r.clip_id.clone(), n, tn));
        }
        Ok((vs, ns))
    }
}
