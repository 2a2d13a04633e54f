//! Tape-based reverse-mode differentiation over [`Tensor`]s.
//!
//! A [`Graph`] records every operation of one forward pass. Parameters enter
//! the tape by reference to a [`ParamStore`], so building a graph never copies
//! weights. [`Graph::backward`] walks the tape in reverse and returns
//! gradients for every parameter that influenced the loss.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::params::{Grads, ParamId, ParamStore};
use crate::tensor::{dot, Tensor};

/// SELU scale, from the self-normalizing networks construction.
pub const SELU_LAMBDA: f64 = 1.050_700_987_355_480_5;
/// SELU negative saturation coefficient.
pub const SELU_ALPHA: f64 = 1.673_263_242_354_377_3;

const LAYER_NORM_EPS: f64 = 1e-6;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

/// Discrete-time survival target for one sample: interval index (0-based)
/// and event flag.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct HazardTarget {
    pub interval: usize,
    pub event: bool,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Param(ParamId),
    MatMul(Var, Var),
    MatMulBt(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    MulRow(Var, Var),
    Scale(Var, f64),
    Softmax(Var),
    LayerNorm { input: Var, inv_std: Vec<f64> },
    Selu(Var),
    Gelu(Var),
    Tanh(Var),
    Sigmoid(Var),
    Transpose(Var),
    SliceCols { input: Var, start: usize },
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    GatherRows { input: Var, index: Vec<usize> },
    GatherCols { input: Var, index: Vec<usize> },
    /// `y = x ⊙ m + c`; only the multiplier matters for the backward pass.
    MaskAffine { input: Var, multiplier: Vec<f64> },
    Sum(Vec<Var>),
    Mean(Var),
    L1 { input: Var, target: Vec<f64> },
    HazardNll { input: Var, targets: Vec<HazardTarget> },
    CrossEntropy { input: Var, labels: Vec<usize> },
}

struct Node {
    value: Option<Tensor>,
    op: Op,
}

/// Forward-pass tape.
pub struct Graph<'s> {
    store: &'s ParamStore,
    nodes: Vec<Node>,
    param_vars: Vec<Option<Var>>,
    dropout: f64,
    rng: Option<ChaCha8Rng>,
    kink_margin: f64,
    kink_signature: u64,
}

impl<'s> Graph<'s> {
    /// Evaluation graph: dropout disabled.
    pub fn new(store: &'s ParamStore) -> Self {
        Self {
            store,
            nodes: Vec::with_capacity(256),
            param_vars: vec![None; store.len()],
            dropout: 0.0,
            rng: None,
            kink_margin: f64::INFINITY,
            kink_signature: 0xcbf2_9ce4_8422_2325,
        }
    }

    /// Training graph with dropout at `rate`, drawing masks from `rng`.
    pub fn training(store: &'s ParamStore, rate: f64, rng: ChaCha8Rng) -> Self {
        let mut g = Self::new(store);
        g.dropout = rate;
        g.rng = Some(rng);
        g
    }

    pub fn store(&self) -> &'s ParamStore {
        self.store
    }

    pub fn dropout_rate(&self) -> f64 {
        if self.rng.is_some() {
            self.dropout
        } else {
            0.0
        }
    }

    /// Smallest |input| seen by any non-differentiable point (SELU at 0,
    /// absolute value at 0). Used by gradient checking to skip kinks.
    pub fn kink_margin(&self) -> f64 {
        self.kink_margin
    }

    /// Hash of the side of every kink each non-smooth input fell on. Two
    /// evaluations with equal signatures lie on the same smooth piece.
    pub fn kink_signature(&self) -> u64 {
        self.kink_signature
    }

    fn record_kinks(&mut self, inputs: impl Iterator<Item = f64>) {
        let mut margin = self.kink_margin;
        let mut h = self.kink_signature;
        for v in inputs {
            margin = margin.min(v.abs());
            h = (h ^ ((v > 0.0) as u64 + 2 * (v < 0.0) as u64)).wrapping_mul(0x0000_0100_0000_01b3);
        }
        self.kink_margin = margin;
        self.kink_signature = h;
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node {
            value: Some(value),
            op,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        value_of(&self.nodes, self.store, v)
    }

    pub fn scalar(&self, v: Var) -> f64 {
        let t = self.value(v);
        debug_assert_eq!(t.len(), 1);
        t.data()[0]
    }

    pub fn shape(&self, v: Var) -> [usize; 2] {
        self.value(v).shape()
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_vars[id.index()] {
            return v;
        }
        self.nodes.push(Node {
            value: None,
            op: Op::Param(id),
        });
        let v = Var(self.nodes.len() - 1);
        self.param_vars[id.index()] = Some(v);
        v
    }

    fn check(&self, ok: bool, what: impl FnOnce() -> String) -> Result<()> {
        if ok {
            Ok(())
        } else {
            Err(Error::Shape(what()))
        }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        self.check(ta.cols() == tb.rows(), || {
            format!("matmul {:?} x {:?}", ta.shape(), tb.shape())
        })?;
        let y = ta.matmul(tb);
        Ok(self.push(y, Op::MatMul(a, b)))
    }

    /// `a · bᵀ`.
    pub fn matmul_bt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        self.check(ta.cols() == tb.cols(), || {
            format!("matmul_bt {:?} x {:?}ᵀ", ta.shape(), tb.shape())
        })?;
        let y = ta.matmul_bt(tb);
        Ok(self.push(y, Op::MatMulBt(a, b)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        self.check(ta.shape() == tb.shape(), || {
            format!("add {:?} + {:?}", ta.shape(), tb.shape())
        })?;
        let mut y = ta.clone();
        y.add_assign(tb);
        Ok(self.push(y, Op::Add(a, b)))
    }

    /// `x + row`, broadcasting a `1 × n` row over every row of `x`.
    pub fn add_row(&mut self, x: Var, row: Var) -> Result<Var> {
        let (tx, tr) = (self.value(x), self.value(row));
        self.check(tr.rows() == 1 && tr.cols() == tx.cols(), || {
            format!("add_row {:?} + {:?}", tx.shape(), tr.shape())
        })?;
        let mut y = tx.clone();
        for r in 0..y.rows() {
            for (a, b) in y.row_mut(r).iter_mut().zip(tr.data()) {
                *a += b;
            }
        }
        Ok(self.push(y, Op::AddRow(x, row)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        self.check(ta.shape() == tb.shape(), || {
            format!("mul {:?} * {:?}", ta.shape(), tb.shape())
        })?;
        let mut y = ta.clone();
        for (a, b) in y.data_mut().iter_mut().zip(tb.data()) {
            *a *= b;
        }
        Ok(self.push(y, Op::Mul(a, b)))
    }

    /// `x ⊙ row`, broadcasting a `1 × n` row.
    pub fn mul_row(&mut self, x: Var, row: Var) -> Result<Var> {
        let (tx, tr) = (self.value(x), self.value(row));
        self.check(tr.rows() == 1 && tr.cols() == tx.cols(), || {
            format!("mul_row {:?} * {:?}", tx.shape(), tr.shape())
        })?;
        let mut y = tx.clone();
        for r in 0..y.rows() {
            for (a, b) in y.row_mut(r).iter_mut().zip(tr.data()) {
                *a *= b;
            }
        }
        Ok(self.push(y, Op::MulRow(x, row)))
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Var {
        let mut y = self.value(x).clone();
        y.scale_assign(s);
        self.push(y, Op::Scale(x, s))
    }

    /// Row-wise softmax.
    pub fn softmax(&mut self, x: Var) -> Var {
        let y = softmax_rows(self.value(x));
        self.push(y, Op::Softmax(x))
    }

    /// Row-wise normalization to zero mean and unit variance (no affine).
    pub fn normalize_rows(&mut self, x: Var) -> Var {
        let tx = self.value(x);
        let n = tx.cols() as f64;
        let mut y = tx.clone();
        let mut inv_std = Vec::with_capacity(tx.rows());
        for r in 0..y.rows() {
            let row = y.row_mut(r);
            let mean = row.iter().sum::<f64>() / n;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            let is = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            for v in row.iter_mut() {
                *v = (*v - mean) * is;
            }
            inv_std.push(is);
        }
        self.push(y, Op::LayerNorm { input: x, inv_std })
    }

    pub fn selu(&mut self, x: Var) -> Var {
        let y = self.value(x).map(selu);
        let inputs = value_of(&self.nodes, self.store, x).data().to_vec();
        self.record_kinks(inputs.into_iter());
        self.push(y, Op::Selu(x))
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, x: Var) -> Var {
        let y = self.value(x).map(|v| 0.5 * v * (1.0 + (GELU_C * (v + 0.044715 * v * v * v)).tanh()));
        self.push(y, Op::Gelu(x))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let y = self.value(x).map(f64::tanh);
        self.push(y, Op::Tanh(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let y = self.value(x).map(sigmoid);
        self.push(y, Op::Sigmoid(x))
    }

    pub fn transpose(&mut self, x: Var) -> Var {
        let y = self.value(x).transpose();
        self.push(y, Op::Transpose(x))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let tx = self.value(x);
        self.check(start + len <= tx.cols(), || {
            format!("slice_cols {start}..{} of {:?}", start + len, tx.shape())
        })?;
        let y = Tensor::from_fn(tx.rows(), len, |r, c| tx.get(r, start + c));
        Ok(self.push(y, Op::SliceCols { input: x, start }))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = self.value(parts[0]).rows();
        let mut cols = 0;
        for &p in parts {
            let t = self.value(p);
            self.check(t.rows() == rows, || format!("concat_cols rows {} vs {rows}", t.rows()))?;
            cols += t.cols();
        }
        let mut y = Tensor::zeros(rows, cols);
        let mut off = 0;
        for &p in parts {
            let t = value_of(&self.nodes, self.store, p);
            for r in 0..rows {
                y.row_mut(r)[off..off + t.cols()].copy_from_slice(t.row(r));
            }
            off += t.cols();
        }
        Ok(self.push(y, Op::ConcatCols(parts.to_vec())))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let cols = self.value(parts[0]).cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let t = self.value(p);
            self.check(t.cols() == cols, || format!("concat_rows cols {} vs {cols}", t.cols()))?;
            data.extend_from_slice(t.data());
            rows += t.rows();
        }
        let y = Tensor::from_vec(rows, cols, data)?;
        Ok(self.push(y, Op::ConcatRows(parts.to_vec())))
    }

    /// Rows of `x` by index; indices may repeat.
    pub fn gather_rows(&mut self, x: Var, index: &[usize]) -> Result<Var> {
        let tx = self.value(x);
        if let Some(&bad) = index.iter().find(|&&i| i >= tx.rows()) {
            return Err(Error::Shape(format!("row {bad} out of range for {:?}", tx.shape())));
        }
        let y = tx.select_rows(index);
        Ok(self.push(
            y,
            Op::GatherRows {
                input: x,
                index: index.to_vec(),
            },
        ))
    }

    /// Columns of `x` by index.
    pub fn gather_cols(&mut self, x: Var, index: &[usize]) -> Result<Var> {
        let tx = self.value(x);
        if let Some(&bad) = index.iter().find(|&&i| i >= tx.cols()) {
            return Err(Error::Shape(format!("column {bad} out of range for {:?}", tx.shape())));
        }
        let y = Tensor::from_fn(tx.rows(), index.len(), |r, c| tx.get(r, index[c]));
        Ok(self.push(
            y,
            Op::GatherCols {
                input: x,
                index: index.to_vec(),
            },
        ))
    }

    /// Inverted dropout; identity when the graph is not training.
    pub fn dropout(&mut self, x: Var) -> Var {
        let p = self.dropout_rate();
        if p <= 0.0 {
            return x;
        }
        let n = self.value(x).len();
        let rng = self.rng.as_mut().expect("training graph has rng");
        let keep = 1.0 / (1.0 - p);
        let multiplier: Vec<f64> = (0..n)
            .map(|_| if rng.random::<f64>() < p { 0.0 } else { keep })
            .collect();
        let mut y = self.value(x).clone();
        for (v, m) in y.data_mut().iter_mut().zip(&multiplier) {
            *v *= m;
        }
        self.push(y, Op::MaskAffine { input: x, multiplier })
    }

    /// Alpha-dropout: dropped units are set to SELU's negative saturation
    /// value and the result is affinely corrected to preserve zero mean and
    /// unit variance. Identity when not training.
    pub fn alpha_dropout(&mut self, x: Var) -> Var {
        let p = self.dropout_rate();
        if p <= 0.0 {
            return x;
        }
        let n = self.value(x).len();
        let rng = self.rng.as_mut().expect("training graph has rng");
        let dropped: Vec<bool> = (0..n).map(|_| rng.random::<f64>() < p).collect();
        let (a, b) = alpha_dropout_affine(p);
        let sat = -SELU_LAMBDA * SELU_ALPHA;
        let mut y = self.value(x).clone();
        let mut multiplier = Vec::with_capacity(n);
        for (v, &d) in y.data_mut().iter_mut().zip(&dropped) {
            if d {
                *v = a * sat + b;
                multiplier.push(0.0);
            } else {
                *v = a * *v + b;
                multiplier.push(a);
            }
        }
        self.push(y, Op::MaskAffine { input: x, multiplier })
    }

    /// Elementwise sum of same-shaped nodes.
    pub fn sum(&mut self, parts: &[Var]) -> Result<Var> {
        let mut y = self.value(parts[0]).clone();
        for &p in &parts[1..] {
            let t = value_of(&self.nodes, self.store, p);
            self.check(t.shape() == y.shape(), || format!("sum {:?} vs {:?}", t.shape(), y.shape()))?;
            y.add_assign(t);
        }
        Ok(self.push(y, Op::Sum(parts.to_vec())))
    }

    /// Mean of all entries, as a `1 × 1` node.
    pub fn mean(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let y = Tensor::row_vector(vec![t.sum() / t.len() as f64]);
        self.push(y, Op::Mean(x))
    }

    /// Mean absolute error against a constant target.
    pub fn l1_loss(&mut self, x: Var, target: &[f64]) -> Result<Var> {
        let tx = self.value(x);
        self.check(tx.len() == target.len() && !target.is_empty(), || {
            format!("l1_loss over {} values vs {} targets", tx.len(), target.len())
        })?;
        let residuals: Vec<f64> = tx.data().iter().zip(target).map(|(p, t)| p - t).collect();
        let total: f64 = residuals.iter().map(|r| r.abs()).sum();
        let y = Tensor::row_vector(vec![total / target.len() as f64]);
        self.record_kinks(residuals.into_iter());
        Ok(self.push(
            y,
            Op::L1 {
                input: x,
                target: target.to_vec(),
            },
        ))
    }

    /// Batch-mean discrete-time hazard negative log-likelihood.
    /// `logits` is `batch × Q` with hazards `σ(a)`.
    pub fn hazard_nll(&mut self, logits: Var, targets: &[HazardTarget]) -> Result<Var> {
        let t = self.value(logits);
        self.check(t.rows() == targets.len() && !targets.is_empty(), || {
            format!("hazard_nll: {} rows vs {} targets", t.rows(), targets.len())
        })?;
        if let Some(bad) = targets.iter().find(|h| h.interval >= t.cols()) {
            return Err(Error::Shape(format!(
                "interval {} out of range for Q={}",
                bad.interval,
                t.cols()
            )));
        }
        let total: f64 = targets
            .iter()
            .enumerate()
            .map(|(i, h)| hazard_nll_row(t.row(i), *h))
            .sum();
        let y = Tensor::row_vector(vec![total / targets.len() as f64]);
        Ok(self.push(
            y,
            Op::HazardNll {
                input: logits,
                targets: targets.to_vec(),
            },
        ))
    }

    /// Batch-mean softmax cross-entropy.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let t = self.value(logits);
        self.check(t.rows() == labels.len() && labels.iter().all(|&l| l < t.cols()), || {
            format!("cross_entropy: {:?} logits vs labels {labels:?}", t.shape())
        })?;
        let total: f64 = labels
            .iter()
            .enumerate()
            .map(|(i, &l)| log_sum_exp(t.row(i)) - t.get(i, l))
            .sum();
        let y = Tensor::row_vector(vec![total / labels.len() as f64]);
        Ok(self.push(
            y,
            Op::CrossEntropy {
                input: logits,
                labels: labels.to_vec(),
            },
        ))
    }

    /// Reverse pass from a `1 × 1` node; returns parameter gradients.
    pub fn backward(&self, loss: Var) -> Result<Grads> {
        let lt = self.value(loss);
        if lt.len() != 1 {
            return Err(Error::Shape(format!("backward from non-scalar {:?}", lt.shape())));
        }
        if !lt.is_finite() {
            return Err(Error::NonFinite(format!("loss = {}", lt.data()[0])));
        }
        let nodes = &self.nodes;
        let store = self.store;
        let val = |v: Var| value_of(nodes, store, v);
        let mut grads: Vec<Option<Tensor>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::filled(1, 1, 1.0));
        let mut out = Grads::new(store.len());

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            match &nodes[i].op {
                Op::Leaf => {}
                Op::Param(id) => out.accumulate_owned(*id, g),
                Op::MatMul(a, b) => {
                    acc(&mut grads, *a, g.matmul_bt(val(*b)));
                    acc(&mut grads, *b, val(*a).matmul_at(&g));
                }
                Op::MatMulBt(a, b) => {
                    acc(&mut grads, *a, g.matmul(val(*b)));
                    acc(&mut grads, *b, g.matmul_at(val(*a)));
                }
                Op::Add(a, b) => {
                    acc(&mut grads, *b, g.clone());
                    acc(&mut grads, *a, g);
                }
                Op::AddRow(x, row) => {
                    acc(&mut grads, *row, Tensor::row_vector(g.column_sums()));
                    acc(&mut grads, *x, g);
                }
                Op::Mul(a, b) => {
                    let (ta, tb) = (val(*a), val(*b));
                    acc(&mut grads, *a, zip_map(&g, tb, |g, b| g * b));
                    acc(&mut grads, *b, zip_map(&g, ta, |g, a| g * a));
                }
                Op::MulRow(x, row) => {
                    let (tx, tr) = (val(*x), val(*row));
                    let mut gx = g.clone();
                    let mut grow = vec![0.0; tr.cols()];
                    for r in 0..g.rows() {
                        for c in 0..g.cols() {
                            gx.set(r, c, g.get(r, c) * tr.data()[c]);
                            grow[c] += g.get(r, c) * tx.get(r, c);
                        }
                    }
                    acc(&mut grads, *x, gx);
                    acc(&mut grads, *row, Tensor::row_vector(grow));
                }
                Op::Scale(x, s) => {
                    let mut gx = g;
                    gx.scale_assign(*s);
                    acc(&mut grads, *x, gx);
                }
                Op::Softmax(x) => {
                    let y = val(Var(i));
                    let mut gx = g.clone();
                    for r in 0..y.rows() {
                        let s = dot(g.row(r), y.row(r));
                        for (c, v) in gx.row_mut(r).iter_mut().enumerate() {
                            *v = y.get(r, c) * (g.get(r, c) - s);
                        }
                    }
                    acc(&mut grads, *x, gx);
                }
                Op::LayerNorm { input, inv_std } => {
                    let y = val(Var(i));
                    let n = y.cols() as f64;
                    let mut gx = g.clone();
                    for r in 0..y.rows() {
                        let gr = g.row(r);
                        let yr = y.row(r);
                        let sg: f64 = gr.iter().sum();
                        let sgy = dot(gr, yr);
                        for (c, v) in gx.row_mut(r).iter_mut().enumerate() {
                            *v = inv_std[r] / n * (n * gr[c] - sg - yr[c] * sgy);
                        }
                    }
                    acc(&mut grads, *input, gx);
                }
                Op::Selu(x) => {
                    let (tx, y) = (val(*x), val(Var(i)));
                    let mut gx = g;
                    for ((gv, &xv), &yv) in gx.data_mut().iter_mut().zip(tx.data()).zip(y.data()) {
                        *gv *= if xv > 0.0 {
                            SELU_LAMBDA
                        } else {
                            yv + SELU_LAMBDA * SELU_ALPHA
                        };
                    }
                    acc(&mut grads, *x, gx);
                }
                Op::Gelu(x) => {
                    let tx = val(*x);
                    acc(&mut grads, *x, zip_map(&g, tx, |g, v| g * gelu_grad(v)));
                }
                Op::Tanh(x) => {
                    let y = val(Var(i));
                    acc(&mut grads, *x, zip_map(&g, y, |g, y| g * (1.0 - y * y)));
                }
                Op::Sigmoid(x) => {
                    let y = val(Var(i));
                    acc(&mut grads, *x, zip_map(&g, y, |g, y| g * y * (1.0 - y)));
                }
                Op::Transpose(x) => acc(&mut grads, *x, g.transpose()),
                Op::SliceCols { input, start } => {
                    let tx = val(*input);
                    let mut gx = Tensor::zeros(tx.rows(), tx.cols());
                    for r in 0..g.rows() {
                        gx.row_mut(r)[*start..*start + g.cols()].copy_from_slice(g.row(r));
                    }
                    acc(&mut grads, *input, gx);
                }
                Op::ConcatCols(parts) => {
                    let mut off = 0;
                    for &p in parts {
                        let w = val(p).cols();
                        let gp = Tensor::from_fn(g.rows(), w, |r, c| g.get(r, off + c));
                        acc(&mut grads, p, gp);
                        off += w;
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut off = 0;
                    for &p in parts {
                        let h = val(p).rows();
                        let idx: Vec<usize> = (off..off + h).collect();
                        acc(&mut grads, p, g.select_rows(&idx));
                        off += h;
                    }
                }
                Op::GatherRows { input, index } => {
                    let tx = val(*input);
                    let mut gx = Tensor::zeros(tx.rows(), tx.cols());
                    for (r, &src) in index.iter().enumerate() {
                        for (a, b) in gx.row_mut(src).iter_mut().zip(g.row(r)) {
                            *a += b;
                        }
                    }
                    acc(&mut grads, *input, gx);
                }
                Op::GatherCols { input, index } => {
                    let tx = val(*input);
                    let mut gx = Tensor::zeros(tx.rows(), tx.cols());
                    for r in 0..g.rows() {
                        for (c, &src) in index.iter().enumerate() {
                            let v = gx.get(r, src) + g.get(r, c);
                            gx.set(r, src, v);
                        }
                    }
                    acc(&mut grads, *input, gx);
                }
                Op::MaskAffine { input, multiplier } => {
                    let mut gx = g;
                    for (v, m) in gx.data_mut().iter_mut().zip(multiplier) {
                        *v *= m;
                    }
                    acc(&mut grads, *input, gx);
                }
                Op::Sum(parts) => {
                    for &p in parts {
                        acc(&mut grads, p, g.clone());
                    }
                }
                Op::Mean(x) => {
                    let tx = val(*x);
                    let s = g.data()[0] / tx.len() as f64;
                    acc(&mut grads, *x, Tensor::filled(tx.rows(), tx.cols(), s));
                }
                Op::L1 { input, target } => {
                    let tx = val(*input);
                    let s = g.data()[0] / target.len() as f64;
                    let gx = Tensor::from_vec(
                        tx.rows(),
                        tx.cols(),
                        tx.data()
                            .iter()
                            .zip(target)
                            .map(|(p, t)| s * sign(p - t))
                            .collect(),
                    )?;
                    acc(&mut grads, *input, gx);
                }
                Op::HazardNll { input, targets } => {
                    let tx = val(*input);
                    let s = g.data()[0] / targets.len() as f64;
                    let mut gx = Tensor::zeros(tx.rows(), tx.cols());
                    for (r, h) in targets.iter().enumerate() {
                        hazard_nll_grad_row(tx.row(r), *h, s, gx.row_mut(r));
                    }
                    acc(&mut grads, *input, gx);
                }
                Op::CrossEntropy { input, labels } => {
                    let tx = val(*input);
                    let s = g.data()[0] / labels.len() as f64;
                    let mut gx = softmax_rows(tx);
                    for (r, &l) in labels.iter().enumerate() {
                        let row = gx.row_mut(r);
                        row[l] -= 1.0;
                        row.iter_mut().for_each(|v| *v *= s);
                    }
                    acc(&mut grads, *input, gx);
                }
            }
        }
        Ok(out)
    }
}

fn value_of<'a>(nodes: &'a [Node], store: &'a ParamStore, v: Var) -> &'a Tensor {
    let node = &nodes[v.0];
    match (&node.value, &node.op) {
        (Some(t), _) => t,
        (None, Op::Param(id)) => store.value(*id),
        (None, _) => unreachable!("non-parameter node without value"),
    }
}

fn acc(grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
    match &mut grads[v.0] {
        Some(a) => a.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

fn zip_map(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::from_vec(a.rows(), a.cols(), data).expect("same shape")
}

#[inline]
fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

#[inline]
pub fn selu(x: f64) -> f64 {
    if x > 0.0 {
        SELU_LAMBDA * x
    } else {
        SELU_LAMBDA * SELU_ALPHA * x.exp_m1()
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + e^x)` without overflow.
#[inline]
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn gelu_grad(x: f64) -> f64 {
    let u = GELU_C * (x + 0.044715 * x * x * x);
    let t = u.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * 0.044715 * x * x)
}

fn log_sum_exp(row: &[f64]) -> f64 {
    let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

pub(crate) fn softmax_rows(x: &Tensor) -> Tensor {
    let mut y = x.clone();
    for r in 0..y.rows() {
        let row = y.row_mut(r);
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut s = 0.0;
        for v in row.iter_mut() {
            *v = (*v - m).exp();
            s += *v;
        }
        row.iter_mut().for_each(|v| *v /= s);
    }
    y
}

/// `(a, b)` such that alpha-dropout output is `a·x + b` for kept units and
/// `a·α' + b` for dropped units, with `α' = −λα`.
pub fn alpha_dropout_affine(p: f64) -> (f64, f64) {
    let sat = -SELU_LAMBDA * SELU_ALPHA;
    let q = 1.0 - p;
    let a = 1.0 / (q + sat * sat * q * p).sqrt();
    let b = -a * p * sat;
    (a, b)
}

/// `−[δ·log h_q + Σ_{j<q+1−δ} log(1 − h_j)]` with `h = σ(a)`, for one sample.
/// `interval` is 0-based, so the survival sum covers `interval + 1 − δ` terms.
pub fn hazard_nll_row(logits: &[f64], h: HazardTarget) -> f64 {
    let q = h.interval;
    let survived = if h.event { q } else { q + 1 };
    // log σ(a) = −softplus(−a); log(1 − σ(a)) = −softplus(a)
    let mut loss: f64 = logits[..survived].iter().map(|&a| softplus(a)).sum();
    if h.event {
        loss += softplus(-logits[q]);
    }
    loss
}

fn hazard_nll_grad_row(logits: &[f64], h: HazardTarget, scale: f64, out: &mut [f64]) {
    let q = h.interval;
    let survived = if h.event { q } else { q + 1 };
    for j in 0..survived {
        out[j] += scale * sigmoid(logits[j]);
    }
    if h.event {
        out[q] += scale * (sigmoid(logits[q]) - 1.0);
    }
}
