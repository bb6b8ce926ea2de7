//! Wengert tape for reverse-mode differentiation.
//!
//! Every operation appends a node holding its forward value. `backward`
//! replays the tape in reverse and returns one gradient buffer per node.
//! Gradients of a node used several times are summed.

use crate::diff::tensor::{ParamId, ParamStore, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

pub const COSINE_EPS: f64 = 1e-8;
pub const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    MatMulBt(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    ScaleBy(Var, Var),
    OneMinus(Var),
    Sigmoid(Var),
    Gelu(Var),
    Sqrt(Var),
    Abs(Var),
    Sum(Var),
    Mean(Var),
    SoftmaxRows(Var),
    CausalSoftmaxRows(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        normed: Vec<f64>,
        inv_std: Vec<f64>,
    },
    CosineRows(Var, Var),
    CrossEntropyRows {
        logits: Var,
        targets: Vec<usize>,
        probs: Vec<f64>,
    },
    Gather {
        src: Var,
        index: Vec<usize>,
    },
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    Reshape(Var),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul(..) => "matmul",
            Op::MatMulBt(..) => "matmul_bt",
            Op::Transpose(_) => "transpose",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::AddRow(..) => "add_row",
            Op::Scale(..) => "scale",
            Op::ScaleBy(..) => "scale_by",
            Op::OneMinus(_) => "one_minus",
            Op::Sigmoid(_) => "sigmoid",
            Op::Gelu(_) => "gelu",
            Op::Sqrt(_) => "sqrt",
            Op::Abs(_) => "abs",
            Op::Sum(_) => "sum",
            Op::Mean(_) => "mean",
            Op::SoftmaxRows(_) => "softmax",
            Op::CausalSoftmaxRows(_) => "causal_softmax",
            Op::LayerNorm { .. } => "layer_norm",
            Op::CosineRows(..) => "cosine",
            Op::CrossEntropyRows { .. } => "cross_entropy",
            Op::Gather { .. } => "gather",
            Op::ConcatRows(_) => "concat_rows",
            Op::ConcatCols(_) => "concat_cols",
            Op::Reshape(_) => "reshape",
        }
    }
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
    param: Option<ParamId>,
}

/// Parameter handles produced by [`Tape::bind`], indexed by [`ParamId`].
#[derive(Debug, Clone)]
pub struct Bound(Vec<Var>);

impl std::ops::Index<ParamId> for Bound {
    type Output = Var;
    fn index(&self, id: ParamId) -> &Var {
        &self.0[id.0]
    }
}

/// Per-node gradients returned by [`Tape::backward`].
#[derive(Debug)]
pub struct Grads(Vec<Option<Vec<f64>>>);

impl Grads {
    /// Gradient of the loss with respect to `v`; `None` when no gradient reached it.
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.0.get(v.0).and_then(|g| g.as_deref())
    }

    /// Like [`Grads::get`] but yields zeros of the right length for unreached nodes.
    pub fn get_or_zeros(&self, tape: &Tape, v: Var) -> Vec<f64> {
        self.get(v)
            .map(<[f64]>::to_vec)
            .unwrap_or_else(|| vec![0.0; tape.value(v).len()])
    }
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    /// Values produced by `detach`, in call order.
    detached: Vec<Tensor>,
    /// When set, `detach` returns these values in order instead of its input's.
    replay: Option<Vec<Tensor>>,
}

fn mm(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    out
}

fn transpose(a: &[f64], m: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            out[j * m + i] = a[i * n + j];
        }
    }
    out
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let u = GELU_C * (x + 0.044715 * x * x * x);
    let t = u.tanh();
    let du = GELU_C * (1.0 + 3.0 * 0.044715 * x * x);
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du
}

pub(crate) fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softmax_row(row: &[f64], out: &mut [f64]) {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (o, &x) in out.iter_mut().zip(row) {
        *o = (x - max).exp();
        sum += *o;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
}

fn cosine_parts(a: &[f64], b: &[f64]) -> (f64, f64, f64) {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    (dot, na, nb)
}

/// `a·b / (‖a‖‖b‖ + 1e-8)`. Two zero vectors give 0.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let (dot, na, nb) = cosine_parts(a, b);
    dot / (na * nb + COSINE_EPS)
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    /// A tape whose `detach` calls yield `values` in order, holding every
    /// stop-gradient input at a fixed point.
    pub fn replaying(values: Vec<Tensor>) -> Self {
        Tape {
            replay: Some(values),
            ..Self::default()
        }
    }

    /// Values of every `detach` call so far, in order.
    pub fn detached(&self) -> &[Tensor] {
        &self.detached
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::Numeric {
                op: op.name().to_string(),
            });
        }
        let requires_grad = match &op {
            Op::Leaf => false,
            Op::MatMul(a, b)
            | Op::MatMulBt(a, b)
            | Op::Add(a, b)
            | Op::Sub(a, b)
            | Op::Mul(a, b)
            | Op::AddRow(a, b)
            | Op::ScaleBy(a, b)
            | Op::CosineRows(a, b) => self.rg(*a) || self.rg(*b),
            Op::Transpose(a)
            | Op::Scale(a, _)
            | Op::OneMinus(a)
            | Op::Sigmoid(a)
            | Op::Gelu(a)
            | Op::Sqrt(a)
            | Op::Abs(a)
            | Op::Sum(a)
            | Op::Mean(a)
            | Op::SoftmaxRows(a)
            | Op::CausalSoftmaxRows(a)
            | Op::Reshape(a) => self.rg(*a),
            Op::LayerNorm { x, gain, bias, .. } => self.rg(*x) || self.rg(*gain) || self.rg(*bias),
            Op::CrossEntropyRows { logits, .. } => self.rg(*logits),
            Op::Gather { src, .. } => self.rg(*src),
            Op::ConcatRows(vs) | Op::ConcatCols(vs) => vs.iter().any(|v| self.rg(*v)),
        };
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            param: None,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.rg(v)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn dims(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.matrix_dims()
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
            param: None,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    /// Copies `v`'s value into a new constant node; no gradient flows back.
    pub fn detach(&mut self, v: Var) -> Result<Var> {
        let i = self.detached.len();
        let value = match &self.replay {
            Some(r) => {
                let fixed = r
                    .get(i)
                    .ok_or_else(|| Error::Validation(format!("no replay value for detach #{i}")))?;
                if fixed.shape() != self.shape(v) {
                    return Err(Error::dim("detach replay", self.shape(v), fixed.shape()));
                }
                fixed.clone()
            }
            None => self.nodes[v.0].value.clone(),
        };
        self.detached.push(value.clone());
        Ok(self.constant(value))
    }

    /// Binds every parameter of `store` as a leaf. Frozen parameters become constants.
    pub fn bind(&mut self, store: &ParamStore) -> Bound {
        let vars = store
            .iter()
            .map(|(id, p)| {
                let v = self.leaf(p.value.clone(), !p.frozen);
                self.nodes[v.0].param = Some(id);
                v
            })
            .collect();
        Bound(vars)
    }

    // ---- linear algebra ------------------------------------------------

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::dim("matmul", &sa, &sb));
        }
        let out = mm(self.value(a).data(), self.value(b).data(), sa[0], sa[1], sb[1]);
        self.push(Tensor::new(vec![sa[0], sb[1]], out)?, Op::MatMul(a, b))
    }

    /// `a · bᵀ` for `a: m×k`, `b: n×k`.
    pub fn matmul_bt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[1] {
            return Err(Error::dim("matmul_bt", &sa, &sb));
        }
        let (m, k, n) = (sa[0], sa[1], sb[0]);
        let bt = transpose(self.value(b).data(), n, k);
        let out = mm(self.value(a).data(), &bt, m, k, n);
        self.push(Tensor::new(vec![m, n], out)?, Op::MatMulBt(a, b))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let s = self.shape(a).to_vec();
        if s.len() != 2 {
            return Err(Error::dim("transpose", &s, &[]));
        }
        let out = transpose(self.value(a).data(), s[0], s[1]);
        self.push(Tensor::new(vec![s[1], s[0]], out)?, Op::Transpose(a))
    }

    // ---- elementwise ---------------------------------------------------

    fn zip_same(&mut self, a: Var, b: Var, name: &'static str, f: impl Fn(f64, f64) -> f64, op: Op) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::dim(name, self.shape(a), self.shape(b)));
        }
        let out: Vec<f64> = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let shape = self.shape(a).to_vec();
        self.push(Tensor::new(shape, out)?, op)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_same(a, b, "add", |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_same(a, b, "sub", |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_same(a, b, "mul", |x, y| x * y, Op::Mul(a, b))
    }

    /// Adds vector `b` (length n) to every row of `a` (m×n).
    pub fn add_row(&mut self, a: Var, b: Var) -> Result<Var> {
        let (_, n) = self.dims(a);
        if self.value(b).len() != n {
            return Err(Error::dim("add_row", self.shape(a), self.shape(b)));
        }
        let bv = self.value(b).data().to_vec();
        let mut out = self.value(a).clone();
        for row in out.data_mut().chunks_mut(n) {
            for (o, x) in row.iter_mut().zip(&bv) {
                *o += x;
            }
        }
        self.push(out, Op::AddRow(a, b))
    }

    fn map(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Result<Var> {
        let mut out = self.value(a).clone();
        out.data_mut().iter_mut().for_each(|x| *x = f(*x));
        self.push(out, op)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        self.map(a, |x| x * c, Op::Scale(a, c))
    }

    /// Multiplies every entry of `a` by the single-element tensor `s`.
    pub fn scale_by(&mut self, a: Var, s: Var) -> Result<Var> {
        if self.value(s).len() != 1 {
            return Err(Error::dim("scale_by", self.shape(a), self.shape(s)));
        }
        let c = self.value(s).item();
        self.map(a, |x| x * c, Op::ScaleBy(a, s))
    }

    pub fn one_minus(&mut self, a: Var) -> Result<Var> {
        self.map(a, |x| 1.0 - x, Op::OneMinus(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.map(a, sigmoid_scalar, Op::Sigmoid(a))
    }

    /// Tanh-approximated GELU.
    pub fn gelu(&mut self, a: Var) -> Result<Var> {
        self.map(a, gelu, Op::Gelu(a))
    }

    pub fn sqrt(&mut self, a: Var) -> Result<Var> {
        self.map(a, f64::sqrt, Op::Sqrt(a))
    }

    pub fn abs(&mut self, a: Var) -> Result<Var> {
        self.map(a, f64::abs, Op::Abs(a))
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s = self.value(a).data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a);
        let s = v.data().iter().sum::<f64>() / v.len() as f64;
        self.push(Tensor::scalar(s), Op::Mean(a))
    }

    /// `σ(s)·a + (1 − σ(s))·b` for an unconstrained scalar `s`.
    pub fn sigmoid_mix(&mut self, s: Var, a: Var, b: Var) -> Result<Var> {
        let w = self.sigmoid(s)?;
        let wc = self.one_minus(w)?;
        let lhs = self.scale_by(a, w)?;
        let rhs = self.scale_by(b, wc)?;
        self.add(lhs, rhs)
    }

    // ---- row-wise ------------------------------------------------------

    pub fn softmax_rows(&mut self, a: Var) -> Result<Var> {
        let (_, n) = self.dims(a);
        let mut out = self.value(a).clone();
        let src = self.value(a).data().to_vec();
        for (orow, irow) in out.data_mut().chunks_mut(n).zip(src.chunks(n)) {
            softmax_row(irow, orow);
        }
        self.push(out, Op::SoftmaxRows(a))
    }

    /// Softmax of row i over columns `0..=i`; later columns are exactly 0.
    pub fn causal_softmax_rows(&mut self, a: Var) -> Result<Var> {
        let (m, n) = self.dims(a);
        if m != n {
            return Err(Error::dim("causal_softmax", self.shape(a), &[n, n]));
        }
        let src = self.value(a).data().to_vec();
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            softmax_row(&src[i * n..i * n + i + 1], &mut out[i * n..i * n + i + 1]);
        }
        self.push(Tensor::new(vec![m, n], out)?, Op::CausalSoftmaxRows(a))
    }

    /// Normalizes each row to zero mean and unit variance, then applies `gain`/`bias`.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var> {
        let (m, n) = self.dims(x);
        if self.value(gain).len() != n || self.value(bias).len() != n {
            return Err(Error::dim("layer_norm", self.shape(x), self.shape(gain)));
        }
        let xs = self.value(x).data();
        let g = self.value(gain).data();
        let b = self.value(bias).data();
        let mut normed = vec![0.0; m * n];
        let mut inv_std = vec![0.0; m];
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let row = &xs[i * n..(i + 1) * n];
            let mu = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / n as f64;
            let is = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            inv_std[i] = is;
            for j in 0..n {
                let h = (row[j] - mu) * is;
                normed[i * n + j] = h;
                out[i * n + j] = h * g[j] + b[j];
            }
        }
        let shape = self.shape(x).to_vec();
        self.push(
            Tensor::new(shape, out)?,
            Op::LayerNorm {
                x,
                gain,
                bias,
                normed,
                inv_std,
            },
        )
    }

    /// Pairwise cosine similarities between rows of `a` (m×d) and rows of `b` (n×d).
    pub fn cosine_rows(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, da) = self.dims(a);
        let (n, db) = self.dims(b);
        if da != db {
            return Err(Error::dim("cosine", self.shape(a), self.shape(b)));
        }
        let av = self.value(a);
        let bv = self.value(b);
        let mut out = Vec::with_capacity(m * n);
        for i in 0..m {
            for j in 0..n {
                out.push(cosine(av.row(i), bv.row(j)));
            }
        }
        self.push(Tensor::new(vec![m, n], out)?, Op::CosineRows(a, b))
    }

    /// Sum over rows of `-log softmax(logits_i)[targets_i]`.
    pub fn cross_entropy_rows(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let (m, k) = self.dims(logits);
        if targets.len() != m {
            return Err(Error::dim("cross_entropy", self.shape(logits), &[targets.len()]));
        }
        let lv = self.value(logits).data();
        let mut probs = vec![0.0; m * k];
        let mut loss = 0.0;
        for (i, &t) in targets.iter().enumerate() {
            if t >= k {
                return Err(Error::Index {
                    index: t,
                    len: k,
                    context: "cross-entropy target",
                });
            }
            let row = &lv[i * k..(i + 1) * k];
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
            loss += lse - row[t];
            softmax_row(row, &mut probs[i * k..(i + 1) * k]);
        }
        self.push(
            Tensor::scalar(loss),
            Op::CrossEntropyRows {
                logits,
                targets: targets.to_vec(),
                probs,
            },
        )
    }

    pub fn cross_entropy(&mut self, logits: Var, target: usize) -> Result<Var> {
        let k = self.value(logits).len();
        let row = self.reshape(logits, vec![1, k])?;
        self.cross_entropy_rows(row, &[target])
    }

    // ---- indexing ------------------------------------------------------

    /// Output element `i` is `src.data[index[i]]`.
    pub fn gather(&mut self, src: Var, index: Vec<usize>, shape: Vec<usize>) -> Result<Var> {
        let sv = self.value(src).data();
        if let Some(&bad) = index.iter().find(|&&i| i >= sv.len()) {
            return Err(Error::Index {
                index: bad,
                len: sv.len(),
                context: "gather",
            });
        }
        let out: Vec<f64> = index.iter().map(|&i| sv[i]).collect();
        let t = Tensor::new(shape, out)?;
        self.push(t, Op::Gather { src, index })
    }

    /// Single element as a scalar.
    pub fn element(&mut self, src: Var, i: usize) -> Result<Var> {
        self.gather(src, vec![i], vec![])
    }

    pub fn gather_rows(&mut self, src: Var, rows: &[usize]) -> Result<Var> {
        let (m, n) = self.dims(src);
        if let Some(&bad) = rows.iter().find(|&&r| r >= m) {
            return Err(Error::Index {
                index: bad,
                len: m,
                context: "gather_rows",
            });
        }
        let index = rows.iter().flat_map(|&r| r * n..(r + 1) * n).collect();
        self.gather(src, index, vec![rows.len(), n])
    }

    pub fn slice_rows(&mut self, src: Var, start: usize, end: usize) -> Result<Var> {
        let rows: Vec<usize> = (start..end).collect();
        self.gather_rows(src, &rows)
    }

    pub fn slice_cols(&mut self, src: Var, start: usize, end: usize) -> Result<Var> {
        let (m, n) = self.dims(src);
        if end > n || start >= end {
            return Err(Error::dim("slice_cols", self.shape(src), &[start, end]));
        }
        let index = (0..m).flat_map(|i| (start..end).map(move |j| i * n + j)).collect();
        self.gather(src, index, vec![m, end - start])
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let n = self.dims(parts[0]).1;
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let (m, pn) = self.dims(p);
            if pn != n {
                return Err(Error::dim("concat_rows", self.shape(parts[0]), self.shape(p)));
            }
            rows += m;
            data.extend_from_slice(self.value(p).data());
        }
        self.push(Tensor::new(vec![rows, n], data)?, Op::ConcatRows(parts.to_vec()))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let m = self.dims(parts[0]).0;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (pm, pn) = self.dims(p);
            if pm != m {
                return Err(Error::dim("concat_cols", self.shape(parts[0]), self.shape(p)));
            }
            widths.push(pn);
        }
        let total: usize = widths.iter().sum();
        let mut data = vec![0.0; m * total];
        let mut off = 0;
        for (&p, &w) in parts.iter().zip(&widths) {
            let pv = self.value(p).data();
            for i in 0..m {
                data[i * total + off..i * total + off + w].copy_from_slice(&pv[i * w..(i + 1) * w]);
            }
            off += w;
        }
        self.push(Tensor::new(vec![m, total], data)?, Op::ConcatCols(parts.to_vec()))
    }

    pub fn reshape(&mut self, a: Var, shape: Vec<usize>) -> Result<Var> {
        let t = self.value(a).clone().reshape(shape)?;
        self.push(t, Op::Reshape(a))
    }

    // ---- composite losses ----------------------------------------------

    /// Mean absolute difference over all elements.
    pub fn l1_mean(&mut self, a: Var, b: Var) -> Result<Var> {
        let d = self.sub(a, b)?;
        let ad = self.abs(d)?;
        self.mean(ad)
    }

    /// Mean squared difference over all elements.
    pub fn mse(&mut self, a: Var, b: Var) -> Result<Var> {
        let d = self.sub(a, b)?;
        let sq = self.mul(d, d)?;
        self.mean(sq)
    }

    // ---- reverse pass --------------------------------------------------

    /// Reverse pass from the scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Grads> {
        if self.value(loss).len() != 1 {
            return Err(Error::dim("backward", self.shape(loss), &[]));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backprop(node, &g, &mut grads);
            grads[i] = Some(g);
        }
        Ok(Grads(grads))
    }

    fn backprop(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [f64])| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            let len = self.nodes[v.0].value.len();
            let buf = grads[v.0].get_or_insert_with(|| vec![0.0; len]);
            f(buf);
        };
        let out = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = self.dims(*a);
                let n = self.dims(*b).1;
                let av = self.value(*a).data();
                let bv = self.value(*b).data();
                acc(*a, &mut |buf| {
                    let bt = transpose(bv, k, n);
                    let d = mm(g, &bt, m, n, k);
                    buf.iter_mut().zip(d).for_each(|(x, y)| *x += y);
                });
                acc(*b, &mut |buf| {
                    let at = transpose(av, m, k);
                    let d = mm(&at, g, k, m, n);
                    buf.iter_mut().zip(d).for_each(|(x, y)| *x += y);
                });
            }
            Op::MatMulBt(a, b) => {
                let (m, k) = self.dims(*a);
                let n = self.dims(*b).0;
                let av = self.value(*a).data();
                let bv = self.value(*b).data();
                acc(*a, &mut |buf| {
                    let d = mm(g, bv, m, n, k);
                    buf.iter_mut().zip(d).for_each(|(x, y)| *x += y);
                });
                acc(*b, &mut |buf| {
                    let gt = transpose(g, m, n);
                    let d = mm(&gt, av, n, m, k);
                    buf.iter_mut().zip(d).for_each(|(x, y)| *x += y);
                });
            }
            Op::Transpose(a) => {
                let (m, n) = self.dims(*a);
                acc(*a, &mut |buf| {
                    let d = transpose(g, n, m);
                    buf.iter_mut().zip(d).for_each(|(x, y)| *x += y);
                });
            }
            Op::Add(a, b) => {
                acc(*a, &mut |buf| buf.iter_mut().zip(g).for_each(|(x, y)| *x += y));
                acc(*b, &mut |buf| buf.iter_mut().zip(g).for_each(|(x, y)| *x += y));
            }
            Op::Sub(a, b) => {
                acc(*a, &mut |buf| buf.iter_mut().zip(g).for_each(|(x, y)| *x += y));
                acc(*b, &mut |buf| buf.iter_mut().zip(g).for_each(|(x, y)| *x -= y));
            }
            Op::Mul(a, b) => {
                let av = self.value(*a).data();
                let bv = self.value(*b).data();
                acc(*a, &mut |buf| {
                    for ((x, gi), bi) in buf.iter_mut().zip(g).zip(bv) {
                        *x += gi * bi;
                    }
                });
                acc(*b, &mut |buf| {
                    for ((x, gi), ai) in buf.iter_mut().zip(g).zip(av) {
                        *x += gi * ai;
                    }
                });
            }
            Op::AddRow(a, b) => {
                let n = self.value(*b).len();
                acc(*a, &mut |buf| buf.iter_mut().zip(g).for_each(|(x, y)| *x += y));
                acc(*b, &mut |buf| {
                    for row in g.chunks(n) {
                        buf.iter_mut().zip(row).for_each(|(x, y)| *x += y);
                    }
                });
            }
            Op::Scale(a, c) => {
                acc(*a, &mut |buf| buf.iter_mut().zip(g).for_each(|(x, y)| *x += c * y));
            }
            Op::ScaleBy(a, s) => {
                let c = self.value(*s).item();
                let av = self.value(*a).data();
                acc(*a, &mut |buf| buf.iter_mut().zip(g).for_each(|(x, y)| *x += c * y));
                acc(*s, &mut |buf| {
                    buf[0] += g.iter().zip(av).map(|(x, y)| x * y).sum::<f64>();
                });
            }
            Op::OneMinus(a) => {
                acc(*a, &mut |buf| buf.iter_mut().zip(g).for_each(|(x, y)| *x -= y));
            }
            Op::Sigmoid(a) => {
                let y = out.data();
                acc(*a, &mut |buf| {
                    for ((x, gi), yi) in buf.iter_mut().zip(g).zip(y) {
                        *x += gi * yi * (1.0 - yi);
                    }
                });
            }
            Op::Gelu(a) => {
                let av = self.value(*a).data();
                acc(*a, &mut |buf| {
                    for ((x, gi), ai) in buf.iter_mut().zip(g).zip(av) {
                        *x += gi * gelu_grad(*ai);
                    }
                });
            }
            Op::Sqrt(a) => {
                let y = out.data();
                acc(*a, &mut |buf| {
                    for ((x, gi), yi) in buf.iter_mut().zip(g).zip(y) {
                        if *yi > 0.0 {
                            *x += gi / (2.0 * yi);
                        }
                    }
                });
            }
            Op::Abs(a) => {
                let av = self.value(*a).data();
                acc(*a, &mut |buf| {
                    for ((x, gi), ai) in buf.iter_mut().zip(g).zip(av) {
                        if *ai > 0.0 {
                            *x += gi;
                        } else if *ai < 0.0 {
                            *x -= gi;
                        }
                    }
                });
            }
            Op::Sum(a) => {
                acc(*a, &mut |buf| buf.iter_mut().for_each(|x| *x += g[0]));
            }
            Op::Mean(a) => {
                let n = self.value(*a).len() as f64;
                acc(*a, &mut |buf| buf.iter_mut().for_each(|x| *x += g[0] / n));
            }
            Op::SoftmaxRows(a) | Op::CausalSoftmaxRows(a) => {
                let (_, n) = self.dims(*a);
                let y = out.data();
                acc(*a, &mut |buf| {
                    for ((brow, grow), yrow) in buf.chunks_mut(n).zip(g.chunks(n)).zip(y.chunks(n)) {
                        let dot: f64 = grow.iter().zip(yrow).map(|(p, q)| p * q).sum();
                        for ((x, gi), yi) in brow.iter_mut().zip(grow).zip(yrow) {
                            *x += yi * (gi - dot);
                        }
                    }
                });
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                normed,
                inv_std,
            } => {
                let (m, n) = self.dims(*x);
                let gv = self.value(*gain).data();
                acc(*gain, &mut |buf| {
                    for i in 0..m {
                        for j in 0..n {
                            buf[j] += g[i * n + j] * normed[i * n + j];
                        }
                    }
                });
                acc(*bias, &mut |buf| {
                    for row in g.chunks(n) {
                        buf.iter_mut().zip(row).for_each(|(p, q)| *p += q);
                    }
                });
                acc(*x, &mut |buf| {
                    for i in 0..m {
                        let dh: Vec<f64> = (0..n).map(|j| g[i * n + j] * gv[j]).collect();
                        let h = &normed[i * n..(i + 1) * n];
                        let mean_dh = dh.iter().sum::<f64>() / n as f64;
                        let mean_dhh = dh.iter().zip(h).map(|(p, q)| p * q).sum::<f64>() / n as f64;
                        for j in 0..n {
                            buf[i * n + j] += inv_std[i] * (dh[j] - mean_dh - h[j] * mean_dhh);
                        }
                    }
                });
            }
            Op::CosineRows(a, b) => {
                let av = self.value(*a);
                let bv = self.value(*b);
                let (m, d) = av.matrix_dims();
                let n = bv.matrix_dims().0;
                // d cos / d a_i = b_j / D - dot * nb * (a_i / na) / D^2, D = na nb + eps
                let mut ga = vec![0.0; m * d];
                let mut gb = vec![0.0; n * d];
                for i in 0..m {
                    let ai = av.row(i);
                    for j in 0..n {
                        let gij = g[i * n + j];
                        if gij == 0.0 {
                            continue;
                        }
                        let bj = bv.row(j);
                        let (dot, na, nb) = cosine_parts(ai, bj);
                        let den = na * nb + COSINE_EPS;
                        let coef = dot / (den * den);
                        for k in 0..d {
                            let da = bj[k] / den - if na > 0.0 { coef * nb * ai[k] / na } else { 0.0 };
                            let db = ai[k] / den - if nb > 0.0 { coef * na * bj[k] / nb } else { 0.0 };
                            ga[i * d + k] += gij * da;
                            gb[j * d + k] += gij * db;
                        }
                    }
                }
                acc(*a, &mut |buf| buf.iter_mut().zip(&ga).for_each(|(x, y)| *x += y));
                acc(*b, &mut |buf| buf.iter_mut().zip(&gb).for_each(|(x, y)| *x += y));
            }
            Op::CrossEntropyRows { logits, targets, probs } => {
                let k = self.dims(*logits).1;
                acc(*logits, &mut |buf| {
                    for (i, &t) in targets.iter().enumerate() {
                        for j in 0..k {
                            let onehot = if j == t { 1.0 } else { 0.0 };
                            buf[i * k + j] += g[0] * (probs[i * k + j] - onehot);
                        }
                    }
                });
            }
            Op::Gather { src, index } => {
                acc(*src, &mut |buf| {
                    for (&i, gi) in index.iter().zip(g) {
                        buf[i] += gi;
                    }
                });
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for &p in parts {
                    let len = self.value(p).len();
                    let slice = &g[off..off + len];
                    acc(p, &mut |buf| buf.iter_mut().zip(slice).for_each(|(x, y)| *x += y));
                    off += len;
                }
            }
            Op::ConcatCols(parts) => {
                let (m, total) = out.matrix_dims();
                let mut off = 0;
                for &p in parts {
                    let w = self.dims(p).1;
                    acc(p, &mut |buf| {
                        for i in 0..m {
                            for j in 0..w {
                                buf[i * w + j] += g[i * total + off + j];
                            }
                        }
                    });
                    off += w;
                }
            }
            Op::Reshape(a) => {
                acc(*a, &mut |buf| buf.iter_mut().zip(g).for_each(|(x, y)| *x += y));
            }
        }
    }

    /// Adds the gradients of every bound, non-frozen parameter into `store`.
    pub fn accumulate(&self, grads: &Grads, store: &mut ParamStore) {
        for (i, node) in self.nodes.iter().enumerate() {
            if let (Some(id), Some(g)) = (node.param, grads.0[i].as_ref()) {
                let p = store.get_mut(id);
                if !p.frozen {
                    p.grad.iter_mut().zip(g).for_each(|(x, y)| *x += y);
                }
            }
        }
    }
}
