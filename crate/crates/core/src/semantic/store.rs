use std::path::Path;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataio::{read_prototype_file, write_prototype_file, PrototypeArray};
use crate::diff::{cosine, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProtoKind {
    Visual,
    Language,
}

/// A `K × d` prototype matrix with its class names.
#[derive(Debug, Clone, PartialEq)]
pub struct ProtoStore {
    pub kind: ProtoKind,
    pub values: Tensor,
    pub class_names: Vec<String>,
    pub frozen: bool,
}

impl ProtoStore {
    pub fn new(kind: ProtoKind, values: Tensor, class_names: Vec<String>) -> Result<Self> {
        let (k, _) = values.matrix_dims();
        if values.shape().len() != 2 || class_names.len() != k {
            return Err(Error::dim("prototype store", values.shape(), &[class_names.len()]));
        }
        Ok(ProtoStore {
            kind,
            values,
            class_names,
            frozen: kind == ProtoKind::Language,
        })
    }

    pub fn language(values: Tensor) -> Result<Self> {
        let k = values.matrix_dims().0;
        Self::new(ProtoKind::Language, values, default_names(k))
    }

    pub fn read(path: impl AsRef<Path>, kind: ProtoKind) -> Result<Self> {
        let arr = read_prototype_file(path)?;
        Self::new(kind, arr.to_tensor(), default_names(arr.classes))
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        write_prototype_file(path, &PrototypeArray::from_tensor(&self.values)?)
    }

    pub fn classes(&self) -> usize {
        self.values.shape()[0]
    }

    pub fn dim(&self) -> usize {
        self.values.shape()[1]
    }
}

pub fn default_names(k: usize) -> Vec<String> {
    (0..k).map(|i| format!("class_{i}")).collect()
}

/// Fixed set of prototype indices used for relative representations.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PrototypeSubset {
    pub indices: Vec<usize>,
    pub total: usize,
}

impl PrototypeSubset {
    pub fn full(k: usize) -> Self {
        PrototypeSubset {
            indices: (0..k).collect(),
            total: k,
        }
    }

    /// `⌈ratio·K⌉` indices drawn uniformly without replacement, sorted ascending.
    pub fn sample(k: usize, ratio: f64, seed: u64) -> Result<Self> {
        if !(ratio > 0.0 && ratio <= 1.0) {
            return Err(Error::config(format!("prototype ratio {ratio} is outside (0, 1]")));
        }
        let n = subset_size(k, ratio);
        if n == k {
            return Ok(Self::full(k));
        }
        let mut indices = sample(&mut ChaCha8Rng::seed_from_u64(seed), k, n).into_vec();
        indices.sort_unstable();
        Ok(PrototypeSubset { indices, total: k })
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn is_full(&self) -> bool {
        self.indices.len() == self.total
    }

    /// Rows of `store` restricted to the subset.
    pub fn restrict(&self, store: &Tensor) -> Tensor {
        if self.is_full() {
            return store.clone();
        }
        let rows: Vec<Vec<f64>> = self.indices.iter().map(|&i| store.row(i).to_vec()).collect();
        Tensor::from_rows(&rows).expect("non-empty subset")
    }
}

/// `⌈ratio·K⌉`, tolerant of floating-point products landing just above an integer.
pub fn subset_size(k: usize, ratio: f64) -> usize {
    let exact = ratio * k as f64;
    let n = if (exact - exact.round()).abs() < 1e-9 {
        exact.round()
    } else {
        exact.ceil()
    };
    (n as usize).clamp(1, k)
}

/// Cosine similarities of `x` against the subset rows of `store`.
pub fn relative_repr(x: &[f64], store: &Tensor, subset: &PrototypeSubset) -> Result<Vec<f64>> {
    if x.len() != store.shape()[1] {
        return Err(Error::dim("relative_repr", &[x.len()], store.shape()));
    }
    Ok(subset.indices.iter().map(|&j| cosine(x, store.row(j))).collect())
}

/// Cached language self-similarities; row `y` is the target relative representation of class `y`.
#[derive(Debug, Clone, PartialEq)]
pub struct LanguageTargets {
    sim: Tensor,
}

impl LanguageTargets {
    pub fn new(language: &Tensor) -> Self {
        LanguageTargets {
            sim: crate::semantic::similarity_matrix(language),
        }
    }

    pub fn classes(&self) -> usize {
        self.sim.shape()[0]
    }

    pub fn row(&self, y: usize, subset: &PrototypeSubset) -> Result<Vec<f64>> {
        let k = self.classes();
        if y >= k {
            return Err(Error::Index {
                index: y,
                len: k,
                context: "language target",
            });
        }
        Ok(subset.indices.iter().map(|&j| self.sim.at(y, j)).collect())
    }

    /// Target rows for several classes stacked into a matrix.
    pub fn rows(&self, ys: &[usize], subset: &PrototypeSubset) -> Result<Tensor> {
        let rows = ys.iter().map(|&y| self.row(y, subset)).collect::<Result<Vec<_>>>()?;
        Tensor::from_rows(&rows)
    }
}
