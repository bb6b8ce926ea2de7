use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::diff::{cosine, Tensor};
use crate::error::{Error, Result};

/// `K × K` pairwise cosine similarities.
pub fn similarity_matrix(store: &Tensor) -> Tensor {
    let (k, _) = store.matrix_dims();
    let mut out = Vec::with_capacity(k * k);
    for i in 0..k {
        for j in 0..k {
            out.push(if i == j && store.row(i).iter().any(|v| *v != 0.0) {
                1.0
            } else {
                cosine(store.row(i), store.row(j))
            });
        }
    }
    Tensor::new(vec![k, k], out).expect("square")
}

fn off_diagonal(m: &Tensor) -> Vec<f64> {
    let k = m.shape()[0];
    (0..k)
        .flat_map(|i| (0..k).filter(move |&j| j != i).map(move |j| (i, j)))
        .map(|(i, j)| m.at(i, j))
        .collect()
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut cov, mut va, mut vb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        cov += (x - ma) * (y - mb);
        va += (x - ma) * (x - ma);
        vb += (y - mb) * (y - mb);
    }
    if va == 0.0 || vb == 0.0 {
        return 0.0;
    }
    cov / (va.sqrt() * vb.sqrt())
}

/// Pearson correlation between the off-diagonal similarities of two stores.
pub fn alignment_score(visual: &Tensor, language: &Tensor) -> Result<f64> {
    if visual.shape()[0] != language.shape()[0] {
        return Err(Error::dim("alignment_score", visual.shape(), language.shape()));
    }
    if visual.shape()[0] < 2 {
        return Err(Error::Validation("alignment needs at least two classes".into()));
    }
    let a = off_diagonal(&similarity_matrix(visual));
    let b = off_diagonal(&similarity_matrix(language));
    Ok(pearson(&a, &b))
}

/// The `n` classes most similar to `class` (self excluded), most similar first.
pub fn nearest_actions(class: usize, store: &Tensor, n: usize) -> Result<Vec<(usize, f64)>> {
    let k = store.shape()[0];
    if class >= k {
        return Err(Error::Index {
            index: class,
            len: k,
            context: "nearest_actions",
        });
    }
    let mut sims: Vec<(usize, f64)> = (0..k)
        .filter(|&j| j != class)
        .map(|j| (j, cosine(store.row(class), store.row(j))))
        .collect();
    sims.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    sims.truncate(n);
    Ok(sims)
}

/// How visual prototypes are initialized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProtoInit {
    RecognitionMean,
    ClassMean,
    Random,
}

/// `K × d` prototypes drawn from `N(0, σ²)` with `σ = 1/√d`.
pub fn random_prototypes(k: usize, d: usize, seed: u64) -> Tensor {
    Tensor::randn(&[k, d], 1.0 / (d as f64).sqrt(), &mut ChaCha8Rng::seed_from_u64(seed))
}

/// Per-class means of `samples` (class, embedding). Classes without samples
/// get a random row; their indices are returned alongside.
pub fn class_mean_prototypes(
    samples: &[(usize, Vec<f64>)],
    k: usize,
    d: usize,
    seed: u64,
) -> Result<(Tensor, Vec<usize>)> {
    let mut sums = vec![vec![0.0; d]; k];
    let mut counts = vec![0usize; k];
    for (c, e) in samples {
        if *c >= k {
            return Err(Error::Index {
                index: *c,
                len: k,
                context: "prototype class",
            });
        }
        if e.len() != d {
            return Err(Error::dim("class_mean_prototypes", &[e.len()], &[d]));
        }
        counts[*c] += 1;
        sums[*c].iter_mut().zip(e).for_each(|(s, v)| *s += v);
    }
    let fallback = random_prototypes(k, d, seed);
    let mut missing = Vec::new();
    let rows: Vec<Vec<f64>> = (0..k)
        .map(|c| {
            if counts[c] == 0 {
                missing.push(c);
                fallback.row(c).to_vec()
            } else {
                sums[c].iter().map(|s| s / counts[c] as f64).collect()
            }
        })
        .collect();
    Ok((Tensor::from_rows(&rows)?, missing))
}
