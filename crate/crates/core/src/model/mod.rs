//! The masked multimodal model: tokenizers, shared encoder, per-modality
//! decoders, the masked reconstruction loss and any-to-any generation.

mod train;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, Var};
use crate::data::{GroupingScheme, Modality, PatientRecord};
use crate::error::{Error, Result};
use crate::masking::{explicit_mask_plan, MaskPlan};
use crate::nn::{embedding, DecoderBlock, EncoderBlock, LayerNorm, Linear, SnnBlock};
use crate::params::{ParamId, ParamStore};
use crate::rng::{SeedTree, Stream};
use crate::tensor::Tensor;
use crate::tokenizers::{AbmilPooling, OmicsGroupTokenizer, PrototypeTokenizer};

pub use train::{
    check_complete, pretrain_epoch, pretrain_step, EpochRecord, PretrainConfig, PretrainItem, StepRecord,
    TrainState,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HistoMode {
    Prototype,
    Abmil,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub dim: usize,
    pub heads: usize,
    pub mlp_dim: usize,
    pub encoder_layers: usize,
    pub decoder_layers: usize,
    pub dropout: f64,
    pub num_prototypes: usize,
    pub histo_mode: HistoMode,
    pub mask_ratio: f64,
    pub alpha: f64,
    /// Patches drawn per patient and step; 0 uses every patch.
    pub patch_sample: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            dim: 256,
            heads: 8,
            mlp_dim: 256,
            encoder_layers: 1,
            decoder_layers: 1,
            dropout: 0.15,
            num_prototypes: 32,
            histo_mode: HistoMode::Prototype,
            mask_ratio: 0.75,
            alpha: 1.0,
            patch_sample: 1024,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, msg: String| Err(Error::config(format!("model.{key}"), msg));
        if self.dim == 0 || self.heads == 0 || !self.dim.is_multiple_of(self.heads) {
            return bad("heads", format!("{} heads must divide dim {}", self.heads, self.dim));
        }
        if self.mlp_dim == 0 {
            return bad("mlp_dim", "must be positive".into());
        }
        if self.encoder_layers == 0 {
            return bad("encoder_layers", "must be at least 1".into());
        }
        if self.decoder_layers == 0 {
            return bad("decoder_layers", "must be at least 1".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout", format!("{} outside [0, 1)", self.dropout));
        }
        if self.histo_mode == HistoMode::Prototype && self.num_prototypes == 0 {
            return bad("num_prototypes", "must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.mask_ratio) {
            return bad("mask_ratio", format!("{} outside [0, 1]", self.mask_ratio));
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return bad("alpha", format!("{} must be positive", self.alpha));
        }
        Ok(())
    }

    pub fn patch_sample(&self) -> Option<usize> {
        (self.patch_sample > 0).then_some(self.patch_sample)
    }
}

#[derive(Clone, Debug)]
enum HistoTokenizer {
    Prototype(PrototypeTokenizer),
    Abmil(AbmilPooling),
}

#[derive(Clone, Debug)]
struct GroupHead {
    snn: SnnBlock,
    out: Linear,
}

#[derive(Clone, Debug)]
struct ModalityDecoder {
    input_proj: Linear,
    mask_token: ParamId,
    group_embed: ParamId,
    blocks: Vec<DecoderBlock>,
    norm: LayerNorm,
    heads: Vec<GroupHead>,
}

#[derive(Clone, Debug)]
struct Layers {
    histo: HistoTokenizer,
    cls: Option<ParamId>,
    type_embed: ParamId,
    tokenizers: Vec<OmicsGroupTokenizer>,
    group_embed: Vec<ParamId>,
    encoder: Vec<EncoderBlock>,
    encoder_norm: LayerNorm,
    decoders: Vec<ModalityDecoder>,
}

/// Type-embedding rows: histopathology first, then omics in `Modality`
/// order.
const HISTO_TYPE: usize = 0;

fn type_row(m: Modality) -> usize {
    1 + m.index()
}

/// Encoder output for one patient.
#[derive(Clone, Debug)]
pub struct Encoded {
    /// `(1 + histo tokens + L_vis) × d`.
    pub z: Var,
    /// Leading rows before the omics tokens (`<cls>` plus histo tokens).
    pub prefix_len: usize,
    /// Visible group indices per modality, in sequence order.
    pub visible: Vec<(Modality, Vec<usize>)>,
}

impl Encoded {
    fn rows_of(&self, modality: Modality) -> (usize, &[usize]) {
        let mut start = self.prefix_len;
        for (m, groups) in &self.visible {
            if *m == modality {
                return (start, groups);
            }
            start += groups.len();
        }
        (start, &[])
    }
}

/// Per-modality breakdown of a reconstruction loss.
#[derive(Clone, Debug, PartialEq)]
pub struct LossBreakdown {
    pub total: f64,
    pub per_modality: Vec<(Modality, f64)>,
}

/// Model parameters plus the structure needed to interpret them.
#[derive(Clone, Debug)]
pub struct Morpheus {
    pub config: ModelConfig,
    pub patch_dim: usize,
    pub schemes: Vec<GroupingScheme>,
    pub store: ParamStore,
    layers: Layers,
}

impl Morpheus {
    /// Fresh model with parameters drawn from the init stream of `seeds`.
    pub fn new(
        config: ModelConfig,
        patch_dim: usize,
        schemes: Vec<GroupingScheme>,
        seeds: &SeedTree,
    ) -> Result<Self> {
        config.validate()?;
        let mut schemes = schemes;
        schemes.sort_by_key(|s| s.modality);
        if schemes.windows(2).any(|w| w[0].modality == w[1].modality) {
            return Err(Error::config("model", "duplicate modality scheme"));
        }
        for s in &schemes {
            s.validate()?;
        }
        let mut rng = seeds.stream(Stream::Init, &[]);
        let mut store = ParamStore::new();
        let layers = build_layers(&config, patch_dim, &schemes, &mut store, &mut rng)?;
        Ok(Self {
            config,
            patch_dim,
            schemes,
            store,
            layers,
        })
    }

    /// Rebuild the structure for `config`/`schemes` and take parameter
    /// values from `store`, which must match by name and shape.
    pub fn from_parts(
        config: ModelConfig,
        patch_dim: usize,
        schemes: Vec<GroupingScheme>,
        store: &ParamStore,
    ) -> Result<Self> {
        let mut m = Self::new(config, patch_dim, schemes, &SeedTree::new(0))?;
        m.store.load_from(store)?;
        Ok(m)
    }

    pub fn modalities(&self) -> Vec<Modality> {
        self.schemes.iter().map(|s| s.modality).collect()
    }

    pub fn scheme(&self, m: Modality) -> Option<&GroupingScheme> {
        self.schemes.iter().find(|s| s.modality == m)
    }

    fn slot(&self, m: Modality) -> Result<usize> {
        self.schemes
            .iter()
            .position(|s| s.modality == m)
            .ok_or_else(|| Error::config("modality", format!("model has no {m} branch")))
    }

    /// Token counts of the modalities `record` carries, for mask sampling.
    pub fn token_counts(&self, record: &PatientRecord) -> Vec<(Modality, usize)> {
        self.schemes
            .iter()
            .filter(|s| record.has(s.modality))
            .map(|s| (s.modality, s.num_groups()))
            .collect()
    }

    /// Number of histopathology rows in the encoder sequence (besides
    /// `<cls>`); zero in ABMIL mode, where the slide vector is the first row.
    pub fn histo_tokens(&self) -> usize {
        match self.layers.histo {
            HistoTokenizer::Prototype(_) => self.config.num_prototypes,
            HistoTokenizer::Abmil(_) => 0,
        }
    }

    /// Run the encoder on `patches` plus the visible omics groups of `plan`.
    /// Only visible groups' values are read from `omics`.
    pub fn encode(
        &self,
        g: &mut Graph,
        patches: &Tensor,
        omics: &dyn Fn(Modality) -> Option<Vec<f64>>,
        plan: &MaskPlan,
    ) -> Result<Encoded> {
        let l = &self.layers;
        let d = self.config.dim;
        let x = g.constant(patches.clone());
        let types = g.param(l.type_embed);
        let mut seq = Vec::new();
        match &l.histo {
            HistoTokenizer::Prototype(t) => {
                seq.push(g.param(l.cls.expect("prototype mode has cls")));
                let h = t.forward(g, x)?;
                let ty = g.gather_rows(types, &[HISTO_TYPE])?;
                seq.push(g.add_row(h, ty)?);
            }
            HistoTokenizer::Abmil(t) => {
                let s = t.forward(g, x)?;
                let ty = g.gather_rows(types, &[HISTO_TYPE])?;
                seq.push(g.add_row(s, ty)?);
            }
        }
        let prefix_len = 1 + self.histo_tokens();
        let mut visible = Vec::new();
        for (m, vis) in &plan.visibility {
            let slot = self.slot(*m)?;
            let scheme = &self.schemes[slot];
            if vis.len() != scheme.num_groups() {
                return Err(Error::Shape(format!(
                    "plan has {} {m} tokens, model has {}",
                    vis.len(),
                    scheme.num_groups()
                )));
            }
            let groups: Vec<usize> = (0..vis.len()).filter(|&k| vis[k]).collect();
            if !groups.is_empty() {
                let values = omics(*m).ok_or_else(|| {
                    Error::validation(format!("{m} tokens visible but no {m} profile"))
                })?;
                let tok = l.tokenizers[slot].forward(g, &values, &groups)?.expect("non-empty");
                let ty = g.gather_rows(types, &[type_row(*m)])?;
                let tok = g.add_row(tok, ty)?;
                let table = g.param(l.group_embed[slot]);
                let pos = g.gather_rows(table, &groups)?;
                seq.push(g.add(tok, pos)?);
            }
            visible.push((*m, groups));
        }
        let mut z = if seq.len() == 1 { seq[0] } else { g.concat_rows(&seq)? };
        debug_assert_eq!(g.shape(z)[1], d);
        for block in &l.encoder {
            z = block.forward(g, z)?;
        }
        let z = l.encoder_norm.forward(g, z)?;
        Ok(Encoded {
            z,
            prefix_len,
            visible,
        })
    }

    /// Decoder hidden states for every token position of `modality`
    /// (`num_groups × d`).
    fn decode_hidden(&self, g: &mut Graph, enc: &Encoded, modality: Modality) -> Result<Var> {
        let slot = self.slot(modality)?;
        let dec = &self.layers.decoders[slot];
        let n = self.schemes[slot].num_groups();
        let context = dec.input_proj.forward(g, enc.z)?;
        let (start, vis) = enc.rows_of(modality);
        let mask = g.param(dec.mask_token);
        let rows = if vis.is_empty() {
            g.gather_rows(mask, &vec![0; n])?
        } else {
            let idx: Vec<usize> = (start..start + vis.len()).collect();
            let projected = g.gather_rows(context, &idx)?;
            let pool = g.concat_rows(&[projected, mask])?;
            let mut place = vec![vis.len(); n];
            for (j, &k) in vis.iter().enumerate() {
                place[k] = j;
            }
            g.gather_rows(pool, &place)?
        };
        let types = g.param(self.layers.type_embed);
        let ty = g.gather_rows(types, &[type_row(modality)])?;
        let rows = g.add_row(rows, ty)?;
        let pos = g.param(dec.group_embed);
        let mut h = g.add(rows, pos)?;
        for block in &dec.blocks {
            h = block.forward(g, h, context)?;
        }
        dec.norm.forward(g, h)
    }

    /// Reconstructions (`1 × group size` each) of the listed groups.
    pub fn decode_groups(
        &self,
        g: &mut Graph,
        enc: &Encoded,
        modality: Modality,
        groups: &[usize],
    ) -> Result<Vec<Var>> {
        let slot = self.slot(modality)?;
        let h = self.decode_hidden(g, enc, modality)?;
        let dec = &self.layers.decoders[slot];
        groups
            .iter()
            .map(|&k| {
                let head = dec.heads.get(k).ok_or_else(|| {
                    Error::Shape(format!("{modality} has no group {k}"))
                })?;
                let row = g.gather_rows(h, &[k])?;
                let s = head.snn.forward(g, row)?;
                head.out.forward(g, s)
            })
            .collect()
    }

    /// Reconstructions of every group of `modality`.
    pub fn decode_modality(&self, g: &mut Graph, enc: &Encoded, modality: Modality) -> Result<Vec<Var>> {
        let n = self.scheme(modality).map(GroupingScheme::num_groups).unwrap_or(0);
        self.decode_groups(g, enc, modality, &(0..n).collect::<Vec<_>>())
    }

    /// Mean absolute error over the masked groups of each modality, averaged
    /// over the modalities that have at least one masked group.
    pub fn masked_mae_loss(
        &self,
        g: &mut Graph,
        enc: &Encoded,
        targets: &dyn Fn(Modality) -> Option<Vec<f64>>,
        plan: &MaskPlan,
    ) -> Result<(Var, LossBreakdown)> {
        let mut terms = Vec::new();
        let mut per_modality = Vec::new();
        for m in plan.modalities() {
            let masked = plan.masked_groups(m);
            if masked.is_empty() {
                continue;
            }
            let truth = targets(m).ok_or_else(|| {
                Error::validation(format!("{m} groups masked but no {m} target"))
            })?;
            let scheme = self.scheme(m).expect("plan validated by encode");
            let target: Vec<f64> = masked
                .iter()
                .flat_map(|&k| scheme.groups[k].iter().map(|&i| truth[i]))
                .collect();
            let outs = self.decode_groups(g, enc, m, &masked)?;
            let pred = if outs.len() == 1 { outs[0] } else { g.concat_cols(&outs)? };
            let loss = g.l1_loss(pred, &target)?;
            per_modality.push((m, g.scalar(loss)));
            terms.push(loss);
        }
        if terms.is_empty() {
            return Err(Error::validation("no masked groups in any modality"));
        }
        let total = if terms.len() == 1 {
            terms[0]
        } else {
            let s = g.concat_cols(&terms)?;
            g.mean(s)
        };
        Ok((
            total,
            LossBreakdown {
                total: g.scalar(total),
                per_modality,
            },
        ))
    }

    /// Reconstruct each target modality of `record` conditioned on its
    /// patches and the `visible` modalities. Overlapping groups are averaged
    /// per feature; features in no group come back as NaN.
    pub fn generate(
        &self,
        record: &PatientRecord,
        visible: &[Modality],
        targets: &[Modality],
    ) -> Result<Vec<(Modality, Vec<f64>)>> {
        if targets.is_empty() {
            return Ok(Vec::new());
        }
        for &m in visible {
            if !record.has(m) {
                return Err(Error::patient(&record.id, m.name(), "visible modality missing from record"));
            }
        }
        let counts: Vec<(Modality, usize)> = self
            .schemes
            .iter()
            .map(|s| (s.modality, s.num_groups()))
            .collect();
        let plan = explicit_mask_plan(visible, targets, &counts)?;
        let mut g = Graph::new(&self.store);
        let omics = |m: Modality| record.omics(m).map(|p| p.values.clone());
        let enc = self.encode(&mut g, record.patches.embeddings(), &omics, &plan)?;
        let mut out = Vec::with_capacity(targets.len());
        for &m in targets {
            let scheme = self
                .scheme(m)
                .ok_or_else(|| Error::config("targets", format!("model has no {m} branch")))?;
            let groups = self.decode_modality(&mut g, &enc, m)?;
            let mut sum = vec![0.0; scheme.num_features];
            let mut hits = vec![0usize; scheme.num_features];
            for (k, v) in groups.iter().enumerate() {
                for (&i, &x) in scheme.groups[k].iter().zip(g.value(*v).data()) {
                    sum[i] += x;
                    hits[i] += 1;
                }
            }
            let values = sum
                .iter()
                .zip(&hits)
                .map(|(&s, &h)| if h == 0 { f64::NAN } else { s / h as f64 })
                .collect();
            out.push((m, values));
        }
        Ok(out)
    }

    /// The `<cls>` output (slide vector in ABMIL mode) with every token of
    /// `visible` shown and all other omics hidden, as `1 × d`.
    pub fn cls_embedding(
        &self,
        g: &mut Graph,
        patches: &Tensor,
        record: &PatientRecord,
        visible: &[Modality],
    ) -> Result<Var> {
        for &m in visible {
            if !record.has(m) {
                return Err(Error::patient(&record.id, m.name(), "configured modality missing"));
            }
        }
        let counts: Vec<(Modality, usize)> = self
            .schemes
            .iter()
            .filter(|s| visible.contains(&s.modality))
            .map(|s| (s.modality, s.num_groups()))
            .collect();
        let plan = explicit_mask_plan(visible, &[], &counts)?;
        let omics = |m: Modality| record.omics(m).map(|p| p.values.clone());
        let enc = self.encode(g, patches, &omics, &plan)?;
        g.gather_rows(enc.z, &[0])
    }
}

fn build_layers<R: Rng + ?Sized>(
    c: &ModelConfig,
    patch_dim: usize,
    schemes: &[GroupingScheme],
    store: &mut ParamStore,
    rng: &mut R,
) -> Result<Layers> {
    let d = c.dim;
    let (histo, cls) = match c.histo_mode {
        HistoMode::Prototype => {
            let cls = embedding(store, "cls", 1, d, rng)?;
            let t = PrototypeTokenizer::new(store, "histo", c.num_prototypes, patch_dim, d, c.heads, rng)?;
            (HistoTokenizer::Prototype(t), Some(cls))
        }
        HistoMode::Abmil => (
            HistoTokenizer::Abmil(AbmilPooling::new(store, "histo", patch_dim, d, rng)?),
            None,
        ),
    };
    let type_embed = embedding(store, "embed.type", 1 + Modality::ALL.len(), d, rng)?;
    let mut tokenizers = Vec::new();
    let mut group_embed = Vec::new();
    for s in schemes {
        let m = s.modality;
        tokenizers.push(OmicsGroupTokenizer::new(store, &format!("tokenizer.{m}"), s.clone(), d, rng)?);
        group_embed.push(embedding(store, &format!("embed.group.{m}"), s.num_groups(), d, rng)?);
    }
    let encoder = (0..c.encoder_layers)
        .map(|i| EncoderBlock::new(store, &format!("encoder.block{i}"), d, c.heads, c.mlp_dim, rng))
        .collect::<Result<Vec<_>>>()?;
    let encoder_norm = LayerNorm::new(store, "encoder.norm", d)?;
    let mut decoders = Vec::new();
    for s in schemes {
        let name = format!("decoder.{}", s.modality);
        let input_proj = Linear::new(store, &format!("{name}.input_proj"), d, d, rng)?;
        let mask_token = embedding(store, &format!("{name}.mask_token"), 1, d, rng)?;
        let group = embedding(store, &format!("{name}.group_embed"), s.num_groups(), d, rng)?;
        let blocks = (0..c.decoder_layers)
            .map(|i| DecoderBlock::new(store, &format!("{name}.block{i}"), d, c.heads, c.mlp_dim, rng))
            .collect::<Result<Vec<_>>>()?;
        let norm = LayerNorm::new(store, &format!("{name}.norm"), d)?;
        let heads = s
            .groups
            .iter()
            .enumerate()
            .map(|(k, grp)| {
                Ok(GroupHead {
                    snn: SnnBlock::new(store, &format!("{name}.head{k}.snn"), d, d, rng)?,
                    out: Linear::new(store, &format!("{name}.head{k}.out"), d, grp.len(), rng)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        decoders.push(ModalityDecoder {
            input_proj,
            mask_token,
            group_embed: group,
            blocks,
            norm,
            heads,
        });
    }
    Ok(Layers {
        histo,
        cls,
        type_embed,
        tokenizers,
        group_embed,
        encoder,
        encoder_norm,
        decoders,
    })
}
