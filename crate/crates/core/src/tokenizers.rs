//! Modality tokenizers into the shared width-`d` token space.

use rand::seq::index;
use rand::Rng;

use crate::autograd::{Graph, Var};
use crate::data::{GroupingScheme, Modality, PatchEmbeddingSet};
use crate::error::{Error, Result};
use crate::nn::{embedding, LayerNorm, Linear, MultiHeadAttention, SnnBlock};
use crate::params::{ParamId, ParamStore};
use crate::tensor::Tensor;

/// Learned prototype queries cross-attending over a patient's patches.
/// Token `k` is `ρ_k + attn(ln ρ_k, ln S)`, so the output always has one row
/// per prototype.
#[derive(Clone, Debug)]
pub struct PrototypeTokenizer {
    pub prototypes: ParamId,
    pub norm_query: LayerNorm,
    pub norm_patches: LayerNorm,
    pub attn: MultiHeadAttention,
    pub num_prototypes: usize,
    pub patch_dim: usize,
}

impl PrototypeTokenizer {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        num_prototypes: usize,
        patch_dim: usize,
        dim: usize,
        heads: usize,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(Self {
            prototypes: embedding(store, &format!("{name}.prototypes"), num_prototypes, dim, rng)?,
            norm_query: LayerNorm::new(store, &format!("{name}.norm_query"), dim)?,
            norm_patches: LayerNorm::new(store, &format!("{name}.norm_patches"), patch_dim)?,
            attn: MultiHeadAttention::new(store, &format!("{name}.attn"), dim, patch_dim, dim, heads, rng)?,
            num_prototypes,
            patch_dim,
        })
    }

    /// `patches` is `n × d_H` with `n ≥ 1`; output is `N_h × d`.
    pub fn forward(&self, g: &mut Graph, patches: Var) -> Result<Var> {
        check_patches(g.shape(patches), self.patch_dim)?;
        let p = g.param(self.prototypes);
        let q = self.norm_query.forward(g, p)?;
        let s = self.norm_patches.forward(g, patches)?;
        let a = self.attn.forward(g, q, s)?;
        g.add(p, a)
    }
}

fn check_patches([n, w]: [usize; 2], patch_dim: usize) -> Result<()> {
    if n == 0 {
        return Err(Error::validation("empty patch set"));
    }
    if w != patch_dim {
        return Err(Error::Shape(format!("patch width {w}, tokenizer expects {patch_dim}")));
    }
    Ok(())
}

/// Gated-attention multiple-instance pooling of patches into one slide
/// vector.
#[derive(Clone, Debug)]
pub struct AbmilPooling {
    pub project: Linear,
    pub attn_v: Linear,
    pub attn_u: Linear,
    pub attn_w: Linear,
    pub patch_dim: usize,
}

impl AbmilPooling {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        patch_dim: usize,
        dim: usize,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(Self {
            project: Linear::new(store, &format!("{name}.project"), patch_dim, dim, rng)?,
            attn_v: Linear::new(store, &format!("{name}.attn_v"), dim, dim, rng)?,
            attn_u: Linear::new(store, &format!("{name}.attn_u"), dim, dim, rng)?,
            attn_w: Linear::new(store, &format!("{name}.attn_w"), dim, 1, rng)?,
            patch_dim,
        })
    }

    /// Per-patch attention weights (`1 × n`) and the pooled `1 × d` vector.
    pub fn forward_with_weights(&self, g: &mut Graph, patches: Var) -> Result<(Var, Var)> {
        check_patches(g.shape(patches), self.patch_dim)?;
        let h = self.project.forward(g, patches)?;
        let v = self.attn_v.forward(g, h)?;
        let v = g.tanh(v);
        let u = self.attn_u.forward(g, h)?;
        let u = g.sigmoid(u);
        let gated = g.mul(v, u)?;
        let scores = self.attn_w.forward(g, gated)?;
        let scores = g.transpose(scores);
        let weights = g.softmax(scores);
        let pooled = g.matmul(weights, h)?;
        Ok((weights, pooled))
    }

    pub fn forward(&self, g: &mut Graph, patches: Var) -> Result<Var> {
        Ok(self.forward_with_weights(g, patches)?.1)
    }
}

/// One SNN projection per feature group.
#[derive(Clone, Debug)]
pub struct OmicsGroupTokenizer {
    pub scheme: GroupingScheme,
    pub projections: Vec<SnnBlock>,
}

impl OmicsGroupTokenizer {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        scheme: GroupingScheme,
        dim: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let projections = scheme
            .groups
            .iter()
            .enumerate()
            .map(|(k, grp)| SnnBlock::new(store, &format!("{name}.group{k}"), grp.len(), dim, rng))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            scheme,
            projections,
        })
    }

    pub fn modality(&self) -> Modality {
        self.scheme.modality
    }

    /// Token rows for the listed groups, in the listed order. Only the
    /// features of those groups enter the graph.
    pub fn forward(&self, g: &mut Graph, values: &[f64], groups: &[usize]) -> Result<Option<Var>> {
        if values.len() != self.scheme.num_features {
            return Err(Error::Shape(format!(
                "{} profile has {} values, grouping expects {}",
                self.modality(),
                values.len(),
                self.scheme.num_features
            )));
        }
        let mut rows = Vec::with_capacity(groups.len());
        for &k in groups {
            let idx = self.scheme.groups.get(k).ok_or_else(|| {
                Error::Shape(format!("{} has no group {k}", self.modality()))
            })?;
            let x = g.constant(Tensor::row_vector(idx.iter().map(|&i| values[i]).collect()));
            rows.push(self.projections[k].forward(g, x)?);
        }
        match rows.len() {
            0 => Ok(None),
            1 => Ok(Some(rows[0])),
            _ => g.concat_rows(&rows).map(Some),
        }
    }
}

/// `n` patch rows drawn uniformly: without replacement when the set is large
/// enough, otherwise with replacement so shapes stay fixed. `None` keeps
/// every patch.
pub fn sample_patches<R: Rng + ?Sized>(
    patches: &PatchEmbeddingSet,
    n: Option<usize>,
    rng: &mut R,
) -> Tensor {
    let all = patches.embeddings();
    match n {
        None => all.clone(),
        Some(n) if n <= all.rows() => {
            let mut idx = index::sample(rng, all.rows(), n).into_vec();
            idx.sort_unstable();
            all.select_rows(&idx)
        }
        Some(n) => {
            let idx: Vec<usize> = (0..n).map(|_| rng.random_range(0..all.rows())).collect();
            all.select_rows(&idx)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::grad_check;
    use proptest::prelude::{any, prop_assert, prop_assert_eq, prop_assume, proptest, ProptestConfig};
    use rand::seq::SliceRandom;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Tensor {
        Tensor::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
    }

    fn proto(n_h: usize, d_h: usize, d: usize, heads: usize) -> (ParamStore, PrototypeTokenizer) {
        let mut s = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let t = PrototypeTokenizer::new(&mut s, "histo", n_h, d_h, d, heads, &mut rng).unwrap();
        (s, t)
    }

    fn run_proto(s: &ParamStore, t: &PrototypeTokenizer, patches: &Tensor) -> Tensor {
        let mut g = Graph::new(s);
        let x = g.constant(patches.clone());
        let y = t.forward(&mut g, x).unwrap();
        g.value(y).clone()
    }

    #[test]
    fn single_patch_gives_identical_value_offsets() {
        let (s, t) = proto(4, 6, 8, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let patch = random(1, 6, &mut rng);
        let out = run_proto(&s, &t, &patch);
        let rho = s.value(t.prototypes);
        let first: Vec<f64> = (0..8).map(|c| out.get(0, c) - rho.get(0, c)).collect();
        for k in 1..4 {
            for c in 0..8 {
                assert!((out.get(k, c) - rho.get(k, c) - first[c]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn token_count_is_independent_of_patch_count() {
        let (s, t) = proto(3, 4, 8, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for n in [1, 10, 1000] {
            assert_eq!(run_proto(&s, &t, &random(n, 4, &mut rng)).shape(), [3, 8]);
        }
        let mut g = Graph::new(&s);
        let empty = g.constant(Tensor::zeros(0, 4));
        assert!(t.forward(&mut g, empty).is_err());
    }

    #[test]
    fn duplicating_a_patch_changes_output_continuously() {
        // An extra patch slides from patch 1 onto patch 0; at t = 1 it is an
        // exact duplicate. Halving the step must roughly halve the jump.
        let (s, t) = proto(2, 4, 8, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = random(5, 4, &mut rng);
        let with_extra = |t: f64| {
            let mut rows: Vec<Vec<f64>> = (0..5).map(|r| p.row(r).to_vec()).collect();
            rows.push((0..4).map(|c| (1.0 - t) * p.get(1, c) + t * p.get(0, c)).collect());
            Tensor::from_rows(&rows).unwrap()
        };
        let at_one = run_proto(&s, &t, &with_extra(1.0));
        let coarse = run_proto(&s, &t, &with_extra(1.0 - 1e-3)).max_abs_diff(&at_one);
        let fine = run_proto(&s, &t, &with_extra(1.0 - 5e-4)).max_abs_diff(&at_one);
        assert!(coarse > 0.0 && coarse < 1e-2, "{coarse}");
        assert!((fine / coarse - 0.5).abs() < 0.05, "{fine} {coarse}");
    }

    #[test]
    fn abmil_single_and_identical_patches() {
        let mut s = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let t = AbmilPooling::new(&mut s, "abmil", 5, 8, &mut rng).unwrap();
        let patch = random(1, 5, &mut rng);
        let pooled = |x: &Tensor| {
            let mut g = Graph::new(&s);
            let v = g.constant(x.clone());
            let y = t.forward(&mut g, v).unwrap();
            g.value(y).clone()
        };
        let single = pooled(&patch);
        let mut g = Graph::new(&s);
        let v = g.constant(patch.clone());
        let h = t.project.forward(&mut g, v).unwrap();
        assert_eq!(g.value(h), &single);
        let many = Tensor::from_fn(7, 5, |_, c| patch.get(0, c));
        assert!(pooled(&many).max_abs_diff(&single) < 1e-12);
    }

    #[test]
    fn omics_gather_semantics() {
        let mut s = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let scheme = GroupingScheme::parse("a\t1,3\nb\t0,2\n", Modality::Rna, 4).unwrap();
        let t = OmicsGroupTokenizer::new(&mut s, "rna", scheme, 8, &mut rng).unwrap();
        assert_eq!(t.projections[0].linear.in_dim, 2);
        let x = [9.0, 7.0, 5.0, 3.0];
        let mut g = Graph::new(&s);
        let out = t.forward(&mut g, &x, &[0]).unwrap().unwrap();
        let mut g2 = Graph::new(&s);
        let direct = g2.constant(Tensor::row_vector(vec![7.0, 3.0]));
        let expect = t.projections[0].forward(&mut g2, direct).unwrap();
        assert_eq!(g.value(out), g2.value(expect));
        assert!(t.forward(&mut g, &x[..3], &[0]).is_err());
        assert!(t.forward(&mut g, &x, &[]).unwrap().is_none());
    }

    #[test]
    fn zero_profile_with_zero_bias_gives_zero_tokens() {
        let mut s = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let scheme = GroupingScheme::contiguous(Modality::Cnv, 6, 3).unwrap();
        let t = OmicsGroupTokenizer::new(&mut s, "cnv", scheme, 4, &mut rng).unwrap();
        let mut g = Graph::new(&s);
        let out = t.forward(&mut g, &[0.0; 6], &[0, 1, 2]).unwrap().unwrap();
        assert_eq!(g.value(out), &Tensor::zeros(3, 4));
    }

    #[test]
    fn tokenizers_pass_gradient_check() {
        let mut s = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let pt = PrototypeTokenizer::new(&mut s, "histo", 2, 3, 4, 2, &mut rng).unwrap();
        let ab = AbmilPooling::new(&mut s, "abmil", 3, 4, &mut rng).unwrap();
        let scheme = GroupingScheme::contiguous(Modality::Dnam, 4, 2).unwrap();
        let om = OmicsGroupTokenizer::new(&mut s, "dnam", scheme, 4, &mut rng).unwrap();
        let patches = random(5, 3, &mut rng);
        let values = [0.2, 0.9, 0.4, 0.7];
        let report = grad_check(&s, 1e-5, |g| {
            let x = g.constant(patches.clone());
            let a = pt.forward(g, x)?;
            let b = ab.forward(g, x)?;
            let c = om.forward(g, &values, &[1, 0])?.expect("two groups");
            let all = g.concat_rows(&[a, b, c])?;
            let sq = g.mul(all, all)?;
            let t = g.tanh(sq);
            Ok(g.mean(t))
        })
        .unwrap();
        assert!(report.max_rel_error < 1e-4, "{report:?}");
    }

    #[test]
    fn patch_sampling_shapes() {
        let set = PatchEmbeddingSet::new(Tensor::from_fn(3, 2, |r, _| r as f64), vec![]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        assert_eq!(sample_patches(&set, Some(8), &mut rng).rows(), 8);
        let sub = sample_patches(&set, Some(2), &mut rng);
        assert_ne!(sub.get(0, 0), sub.get(1, 0));
        assert_eq!(sample_patches(&set, None, &mut rng).rows(), 3);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn histo_tokenizers_are_permutation_invariant(seed in any::<u64>(), n in 1usize..40) {
            let (s, t) = proto(3, 4, 8, 2);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut ab_store = ParamStore::new();
            let ab = AbmilPooling::new(&mut ab_store, "abmil", 4, 8, &mut rng).unwrap();
            let p = random(n, 4, &mut rng);
            let mut perm: Vec<usize> = (0..n).collect();
            perm.shuffle(&mut rng);
            let q = p.select_rows(&perm);
            prop_assert!(run_proto(&s, &t, &p).max_abs_diff(&run_proto(&s, &t, &q)) < 1e-9);
            let pool = |x: &Tensor| {
                let mut g = Graph::new(&ab_store);
                let v = g.constant(x.clone());
                let y = ab.forward(&mut g, v).unwrap();
                g.value(y).clone()
            };
            prop_assert!(pool(&p).max_abs_diff(&pool(&q)) < 1e-9);
        }

        #[test]
        fn omics_row_ignores_unselected_features(k in 0usize..3, j in 0usize..9, delta in -5.0f64..5.0) {
            let mut s = ParamStore::new();
            let mut rng = ChaCha8Rng::seed_from_u64(9);
            let scheme = GroupingScheme::contiguous(Modality::Dnam, 9, 3).unwrap();
            let t = OmicsGroupTokenizer::new(&mut s, "dnam", scheme, 4, &mut rng).unwrap();
            prop_assume!(!t.scheme.groups[k].contains(&j));
            let base: Vec<f64> = (0..9).map(|i| i as f64 * 0.1).collect();
            let mut moved = base.clone();
            moved[j] += delta;
            let mut g = Graph::new(&s);
            let a = t.forward(&mut g, &base, &[k]).unwrap().unwrap();
            let b = t.forward(&mut g, &moved, &[k]).unwrap().unwrap();
            prop_assert_eq!(g.value(a), g.value(b));
        }
    }
}
