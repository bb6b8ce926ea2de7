//! Binary feature and prototype files.
//!
//! Both formats are a little-endian header followed by an `f32` payload in
//! row-major order:
//!
//! ```text
//! feature file:    "SGFT" | version u32 = 1 | T u32 | tokens u32 | d u32 | T*tokens*d f32
//! prototype file:  "SGLP" | version u32 = 1 | K u32 | d u32 | K*d f32
//! ```

use std::path::Path;

use crate::diff::Tensor;
use crate::error::{Error, Result};

pub const FEATURE_MAGIC: &[u8; 4] = b"SGFT";
pub const PROTOTYPE_MAGIC: &[u8; 4] = b"SGLP";
pub const FORMAT_VERSION: u32 = 1;

/// Contents of a feature file: `frames × tokens × d` values.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureArray {
    pub frames: usize,
    pub tokens: usize,
    pub dim: usize,
    pub values: Vec<f32>,
}

impl FeatureArray {
    pub fn new(frames: usize, tokens: usize, dim: usize, values: Vec<f32>) -> Result<Self> {
        if values.len() != frames * tokens * dim {
            return Err(Error::dim("feature array", &[frames, tokens, dim], &[values.len()]));
        }
        Ok(FeatureArray {
            frames,
            tokens,
            dim,
            values,
        })
    }

    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        let s = t.shape();
        if s.len() != 3 {
            return Err(Error::dim("feature array", s, &[0, 0, 0]));
        }
        Self::new(s[0], s[1], s[2], t.data().iter().map(|&v| v as f32).collect())
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(
            vec![self.frames, self.tokens, self.dim],
            self.values.iter().map(|&v| f64::from(v)).collect(),
        )
        .expect("validated on construction")
    }

    /// `tokens × d` slice for one frame.
    pub fn frame(&self, t: usize) -> &[f32] {
        let n = self.tokens * self.dim;
        &self.values[t * n..(t + 1) * n]
    }
}

/// A `K × d` prototype matrix as stored on disk.
#[derive(Debug, Clone, PartialEq)]
pub struct PrototypeArray {
    pub classes: usize,
    pub dim: usize,
    pub values: Vec<f32>,
}

impl PrototypeArray {
    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        let s = t.shape();
        if s.len() != 2 {
            return Err(Error::dim("prototype array", s, &[0, 0]));
        }
        Ok(PrototypeArray {
            classes: s[0],
            dim: s[1],
            values: t.data().iter().map(|&v| v as f32).collect(),
        })
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(
            vec![self.classes, self.dim],
            self.values.iter().map(|&v| f64::from(v)).collect(),
        )
        .expect("validated on construction")
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn magic(&mut self, expected: &[u8; 4]) -> Result<()> {
        let got = self.take(4, "magic")?;
        if got != expected {
            return Err(Error::Format {
                offset: 0,
                msg: format!(
                    "bad magic {:?}, expected {:?}",
                    String::from_utf8_lossy(got),
                    String::from_utf8_lossy(expected)
                ),
            });
        }
        Ok(())
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() < self.pos + n {
            return Err(Error::Format {
                offset: self.buf.len(),
                msg: format!("truncated while reading {what}: need {n} bytes at offset {}", self.pos),
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes(b.try_into().unwrap()))
    }

    fn version(&mut self) -> Result<()> {
        let off = self.pos;
        let v = self.u32("version")?;
        if v != FORMAT_VERSION {
            return Err(Error::Format {
                offset: off,
                msg: format!("unsupported version {v}"),
            });
        }
        Ok(())
    }

    fn extent(&mut self, what: &str) -> Result<usize> {
        let off = self.pos;
        let v = self.u32(what)?;
        if v == 0 {
            return Err(Error::Format {
                offset: off,
                msg: format!("{what} must be positive"),
            });
        }
        Ok(v as usize)
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        let bytes = self.take(n * 4, "payload")?;
        let out = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        if self.pos != self.buf.len() {
            return Err(Error::Format {
                offset: self.pos,
                msg: format!("{} trailing bytes after payload", self.buf.len() - self.pos),
            });
        }
        Ok(out)
    }
}

fn put_f32s(out: &mut Vec<u8>, values: &[f32]) {
    out.reserve(values.len() * 4);
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

fn u32_of(n: usize, what: &str) -> Result<[u8; 4]> {
    u32::try_from(n)
        .map(u32::to_le_bytes)
        .map_err(|_| Error::Validation(format!("{what} {n} does not fit in u32")))
}

pub fn encode_features(f: &FeatureArray) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(20 + f.values.len() * 4);
    out.extend_from_slice(FEATURE_MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&u32_of(f.frames, "T")?);
    out.extend_from_slice(&u32_of(f.tokens, "tokens")?);
    out.extend_from_slice(&u32_of(f.dim, "d")?);
    put_f32s(&mut out, &f.values);
    Ok(out)
}

pub fn decode_features(buf: &[u8]) -> Result<FeatureArray> {
    let mut r = Reader { buf, pos: 0 };
    r.magic(FEATURE_MAGIC)?;
    r.version()?;
    let frames = r.extent("T")?;
    let tokens = r.extent("tokens")?;
    let dim = r.extent("d")?;
    let values = r.f32s(frames * tokens * dim)?;
    FeatureArray::new(frames, tokens, dim, values)
}

pub fn encode_prototypes(p: &PrototypeArray) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(16 + p.values.len() * 4);
    out.extend_from_slice(PROTOTYPE_MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&u32_of(p.classes, "K")?);
    out.extend_from_slice(&u32_of(p.dim, "d")?);
    put_f32s(&mut out, &p.values);
    Ok(out)
}

pub fn decode_prototypes(buf: &[u8]) -> Result<PrototypeArray> {
    let mut r = Reader { buf, pos: 0 };
    r.magic(PROTOTYPE_MAGIC)?;
    r.version()?;
    let classes = r.extent("K")?;
    let dim = r.extent("d")?;
    let values = r.f32s(classes * dim)?;
    Ok(PrototypeArray { classes, dim, values })
}

pub fn read_feature_file(path: impl AsRef<Path>) -> Result<FeatureArray> {
    decode_features(&std::fs::read(path)?)
}

pub fn write_feature_file(path: impl AsRef<Path>, f: &FeatureArray) -> Result<()> {
    std::fs::write(path, encode_features(f)?)?;
    Ok(())
}

pub fn read_prototype_file(path: impl AsRef<Path>) -> Result<PrototypeArray> {
    decode_prototypes(&std::fs::read(path)?)
}

pub fn write_prototype_file(path: impl AsRef<Path>, p: &PrototypeArray) -> Result<()> {
    std::fs::write(path, encode_prototypes(p)?)?;
    Ok(())
}
