//! Neural building blocks composed on a [`Graph`].
//!
//! Each layer owns only [`ParamId`]s; weights live in the [`ParamStore`]
//! passed at construction and read back through the graph.

use rand::Rng;

use crate::autograd::{softmax_rows, Graph, Var};
use crate::error::{Error, Result};
use crate::params::{lecun_init, normal_init, ParamId, ParamStore};
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let weight = store.add(format!("{name}.weight"), lecun_init(in_dim, out_dim, rng))?;
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(1, out_dim))?;
        Ok(Self {
            weight,
            bias,
            in_dim,
            out_dim,
        })
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let w = g.param(self.weight);
        let b = g.param(self.bias);
        let h = g.matmul(x, w)?;
        g.add_row(h, b)
    }
}

#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize) -> Result<Self> {
        let gamma = store.add(format!("{name}.gamma"), Tensor::filled(1, dim, 1.0))?;
        let beta = store.add(format!("{name}.beta"), Tensor::zeros(1, dim))?;
        Ok(Self { gamma, beta })
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let n = g.normalize_rows(x);
        let gamma = g.param(self.gamma);
        let beta = g.param(self.beta);
        let s = g.mul_row(n, gamma)?;
        g.add_row(s, beta)
    }
}

fn check_heads(d: usize, heads: usize) -> Result<()> {
    if heads == 0 || !d.is_multiple_of(heads) {
        return Err(Error::Shape(format!("{heads} heads do not divide width {d}")));
    }
    Ok(())
}

/// Multi-head scaled dot-product attention without projections.
///
/// `queries` is `n × d`, `keys`/`values` are `m × d`; output is `n × d`.
pub fn scaled_dot_attention(
    g: &mut Graph,
    queries: Var,
    keys: Var,
    values: Var,
    heads: usize,
) -> Result<Var> {
    let [_, d] = g.shape(queries);
    let [m, dk] = g.shape(keys);
    let [mv, dv] = g.shape(values);
    if dk != d || dv != d {
        return Err(Error::Shape(format!(
            "attention widths q={d} k={dk} v={dv} must agree"
        )));
    }
    if m != mv {
        return Err(Error::Shape(format!("{m} keys but {mv} values")));
    }
    check_heads(d, heads)?;
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut outs = Vec::with_capacity(heads);
    for h in 0..heads {
        let (q, k, v) = if heads == 1 {
            (queries, keys, values)
        } else {
            (
                g.slice_cols(queries, h * dh, dh)?,
                g.slice_cols(keys, h * dh, dh)?,
                g.slice_cols(values, h * dh, dh)?,
            )
        };
        let scores = g.matmul_bt(q, k)?;
        let scores = g.scale(scores, scale);
        let weights = g.softmax(scores);
        outs.push(g.matmul(weights, v)?);
    }
    if heads == 1 {
        Ok(outs[0])
    } else {
        g.concat_cols(&outs)
    }
}

/// Per-head attention weight matrices (`n × m` each) for plain tensors.
pub fn attention_weights(queries: &Tensor, keys: &Tensor, heads: usize) -> Result<Vec<Tensor>> {
    check_heads(queries.cols(), heads)?;
    let dh = queries.cols() / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    (0..heads)
        .map(|h| {
            let q = Tensor::from_fn(queries.rows(), dh, |r, c| queries.get(r, h * dh + c));
            let k = Tensor::from_fn(keys.rows(), dh, |r, c| keys.get(r, h * dh + c));
            let mut s = q.matmul_bt(&k);
            s.scale_assign(scale);
            Ok(softmax_rows(&s))
        })
        .collect()
}

/// Projected multi-head attention. Query and key/value inputs may have
/// different widths; both are projected to `dim`.
#[derive(Clone, Debug)]
pub struct MultiHeadAttention {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub out: Linear,
    pub heads: usize,
}

impl MultiHeadAttention {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        query_dim: usize,
        context_dim: usize,
        dim: usize,
        heads: usize,
        rng: &mut R,
    ) -> Result<Self> {
        check_heads(dim, heads)?;
        Ok(Self {
            q: Linear::new(store, &format!("{name}.q"), query_dim, dim, rng)?,
            k: Linear::new(store, &format!("{name}.k"), context_dim, dim, rng)?,
            v: Linear::new(store, &format!("{name}.v"), context_dim, dim, rng)?,
            out: Linear::new(store, &format!("{name}.out"), dim, dim, rng)?,
            heads,
        })
    }

    pub fn forward(&self, g: &mut Graph, x: Var, context: Var) -> Result<Var> {
        let q = self.q.forward(g, x)?;
        let k = self.k.forward(g, context)?;
        let v = self.v.forward(g, context)?;
        let a = scaled_dot_attention(g, q, k, v, self.heads)?;
        self.out.forward(g, a)
    }
}

/// Linear map, SELU, alpha-dropout.
#[derive(Clone, Debug)]
pub struct SnnBlock {
    pub linear: Linear,
}

impl SnnBlock {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(Self {
            linear: Linear::new(store, &format!("{name}.linear"), in_dim, out_dim, rng)?,
        })
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let [_, cols] = g.shape(x);
        if cols != self.linear.in_dim {
            return Err(Error::Shape(format!(
                "snn block expects width {}, got {cols}",
                self.linear.in_dim
            )));
        }
        let h = self.linear.forward(g, x)?;
        let h = g.selu(h);
        Ok(g.alpha_dropout(h))
    }
}

#[derive(Clone, Debug)]
pub struct Mlp {
    pub fc1: Linear,
    pub fc2: Linear,
}

impl Mlp {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        dim: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(Self {
            fc1: Linear::new(store, &format!("{name}.fc1"), dim, hidden, rng)?,
            fc2: Linear::new(store, &format!("{name}.fc2"), hidden, dim, rng)?,
        })
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let h = self.fc1.forward(g, x)?;
        let h = g.gelu(h);
        self.fc2.forward(g, h)
    }
}

/// Pre-norm self-attention block: `x + drop(attn(ln x))`, then
/// `x + drop(mlp(ln x))`.
#[derive(Clone, Debug)]
pub struct EncoderBlock {
    pub norm_attn: LayerNorm,
    pub attn: MultiHeadAttention,
    pub norm_mlp: LayerNorm,
    pub mlp: Mlp,
}

impl EncoderBlock {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        dim: usize,
        heads: usize,
        mlp_dim: usize,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(Self {
            norm_attn: LayerNorm::new(store, &format!("{name}.norm_attn"), dim)?,
            attn: MultiHeadAttention::new(store, &format!("{name}.attn"), dim, dim, dim, heads, rng)?,
            norm_mlp: LayerNorm::new(store, &format!("{name}.norm_mlp"), dim)?,
            mlp: Mlp::new(store, &format!("{name}.mlp"), dim, mlp_dim, rng)?,
        })
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let h = self.norm_attn.forward(g, x)?;
        let a = self.attn.forward(g, h, h)?;
        let a = g.dropout(a);
        let x = g.add(x, a)?;
        let h = self.norm_mlp.forward(g, x)?;
        let m = self.mlp.forward(g, h)?;
        let m = g.dropout(m);
        g.add(x, m)
    }
}

/// Pre-norm decoder block: cross-attention to a context sequence, then
/// self-attention, then MLP, each residual.
#[derive(Clone, Debug)]
pub struct DecoderBlock {
    pub norm_query: LayerNorm,
    pub norm_context: LayerNorm,
    pub cross: MultiHeadAttention,
    pub self_block: EncoderBlock,
}

impl DecoderBlock {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        dim: usize,
        heads: usize,
        mlp_dim: usize,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(Self {
            norm_query: LayerNorm::new(store, &format!("{name}.norm_query"), dim)?,
            norm_context: LayerNorm::new(store, &format!("{name}.norm_context"), dim)?,
            cross: MultiHeadAttention::new(store, &format!("{name}.cross"), dim, dim, dim, heads, rng)?,
            self_block: EncoderBlock::new(store, &format!("{name}.self"), dim, heads, mlp_dim, rng)?,
        })
    }

    pub fn forward(&self, g: &mut Graph, x: Var, context: Var) -> Result<Var> {
        let q = self.norm_query.forward(g, x)?;
        let c = self.norm_context.forward(g, context)?;
        let a = self.cross.forward(g, q, c)?;
        let a = g.dropout(a);
        let x = g.add(x, a)?;
        self.self_block.forward(g, x)
    }
}

/// Learned embedding table (`rows × dim`), std-0.02 normal init.
pub fn embedding<R: Rng + ?Sized>(
    store: &mut ParamStore,
    name: &str,
    rows: usize,
    dim: usize,
    rng: &mut R,
) -> Result<ParamId> {
    store.add(name, normal_init(rows, dim, 0.02, rng))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{SeedTree, Stream};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rand_tensor(rows: usize, cols: usize, seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        normal_init(rows, cols, 1.0, &mut rng)
    }

    #[test]
    fn attention_saturates_on_matching_key() {
        // orthogonal keys, query equal to key 2 scaled large
        let d = 4;
        let keys = Tensor::from_fn(4, d, |r, c| if r == c { 1.0 } else { 0.0 });
        let values = rand_tensor(4, d, 3);
        let q = Tensor::from_fn(1, d, |_, c| if c == 2 { 100.0 } else { 0.0 });
        let s = ParamStore::new();
        let mut g = Graph::new(&s);
        let (qv, kv, vv) = (g.constant(q), g.constant(keys), g.constant(values.clone()));
        let out = scaled_dot_attention(&mut g, qv, kv, vv, 1).unwrap();
        for c in 0..d {
            assert!((g.value(out).get(0, c) - values.get(2, c)).abs() < 1e-6);
        }
    }

    #[test]
    fn attention_of_identical_values_is_that_value() {
        let s = ParamStore::new();
        let mut g = Graph::new(&s);
        let v = Tensor::from_fn(5, 8, |_, c| c as f64 - 3.5);
        let q = g.constant(rand_tensor(3, 8, 1));
        let k = g.constant(rand_tensor(5, 8, 2));
        let vv = g.constant(v.clone());
        let out = scaled_dot_attention(&mut g, q, k, vv, 2).unwrap();
        for r in 0..3 {
            for c in 0..8 {
                assert!((g.value(out).get(r, c) - v.get(0, c)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn attention_weights_are_distributions() {
        let w = attention_weights(&rand_tensor(4, 8, 5), &rand_tensor(4, 8, 6), 2).unwrap();
        assert_eq!(w.len(), 2);
        for head in &w {
            for r in 0..4 {
                assert!((head.row(r).iter().sum::<f64>() - 1.0).abs() < 1e-12);
                assert!(head.row(r).iter().all(|&p| p >= 0.0));
            }
        }
    }

    #[test]
    fn attention_rejects_bad_heads_and_lengths() {
        let s = ParamStore::new();
        let mut g = Graph::new(&s);
        let q = g.constant(rand_tensor(2, 6, 1));
        let k = g.constant(rand_tensor(3, 6, 2));
        let v = g.constant(rand_tensor(4, 6, 3));
        assert!(scaled_dot_attention(&mut g, q, k, k, 4).is_err());
        assert!(scaled_dot_attention(&mut g, q, k, v, 2).is_err());
    }

    #[test]
    fn snn_block_zero_weights_give_zero() {
        let mut s = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let snn = SnnBlock::new(&mut s, "snn", 3, 4, &mut rng).unwrap();
        *s.value_mut(snn.linear.weight) = Tensor::zeros(3, 4);
        let mut g = Graph::new(&s);
        let x = g.constant(rand_tensor(2, 3, 9));
        let y = snn.forward(&mut g, x).unwrap();
        assert!(g.value(y).data().iter().all(|&v| v == 0.0));

        let mut g = Graph::new(&s);
        let x = g.constant(rand_tensor(2, 5, 9));
        assert!(snn.forward(&mut g, x).is_err());
    }

    #[test]
    fn snn_identity_map_of_zero_is_zero() {
        let mut s = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let snn = SnnBlock::new(&mut s, "snn", 4, 4, &mut rng).unwrap();
        *s.value_mut(snn.linear.weight) = Tensor::from_fn(4, 4, |r, c| (r == c) as u8 as f64);
        let mut g = Graph::new(&s);
        let x = g.constant(Tensor::zeros(1, 4));
        let y = snn.forward(&mut g, x).unwrap();
        assert_eq!(g.value(y).data(), &[0.0; 4]);
    }

    #[test]
    fn alpha_dropout_rate_matches() {
        let mut s = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let snn = SnnBlock::new(&mut s, "snn", 1, 10_000, &mut rng).unwrap();
        *s.value_mut(snn.linear.weight) = Tensor::filled(1, 10_000, 1.0);
        let seeds = SeedTree::new(11);
        let mut g = Graph::training(&s, 0.15, seeds.stream(Stream::Dropout, &[0]));
        let x = g.constant(Tensor::filled(1, 1, 0.5));
        let y = snn.forward(&mut g, x).unwrap();
        let (a, b) = crate::autograd::alpha_dropout_affine(0.15);
        let kept = a * crate::autograd::selu(0.5) + b;
        let dropped = g.value(y).data().iter().filter(|&&v| (v - kept).abs() > 1e-12).count();
        let frac = dropped as f64 / 10_000.0;
        assert!((frac - 0.15).abs() < 0.02, "dropped fraction {frac}");
    }

    #[test]
    fn dropout_disabled_in_eval() {
        let s = ParamStore::new();
        let mut g = Graph::new(&s);
        let x = g.constant(rand_tensor(3, 3, 1));
        assert_eq!(g.dropout(x), x);
        assert_eq!(g.alpha_dropout(x), x);
    }
}
