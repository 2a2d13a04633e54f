//! Masked-reconstruction pre-training loop.
//!
//! Every random draw is keyed by `(root seed, stream, global step, patient)`
//! so a run resumed from a checkpoint replays exactly.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{LossBreakdown, Morpheus};
use crate::autograd::Graph;
use crate::data::{Cohort, Modality};
use crate::error::{Error, Result};
use crate::masking::{sample_mask_plan, MaskPlan};
use crate::optim::{adamw_step, LrSchedule, OptimizerState};
use crate::params::Grads;
use crate::rng::{SeedTree, Stream};
use crate::tensor::Tensor;
use crate::tokenizers::sample_patches;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PretrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub weight_decay: f64,
    pub warmup_epochs: f64,
    pub lr_start: f64,
    pub lr_peak: f64,
    pub lr_final: f64,
    /// Save a checkpoint every this many epochs; 0 saves only the final one.
    pub checkpoint_every: usize,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            batch_size: 128,
            weight_decay: 1e-3,
            warmup_epochs: 10.0,
            lr_start: 5e-5,
            lr_peak: 5e-4,
            lr_final: 1.5e-4,
            checkpoint_every: 10,
        }
    }
}

impl PretrainConfig {
    pub fn schedule(&self) -> LrSchedule {
        LrSchedule {
            warmup_epochs: self.warmup_epochs,
            lr_start: self.lr_start,
            lr_peak: self.lr_peak,
            lr_final: self.lr_final,
            total_epochs: self.epochs as f64,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::config("pretrain.batch_size", "must be positive"));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::config("pretrain.weight_decay", "must be nonnegative"));
        }
        self.schedule().validate().map_err(|e| match e {
            Error::Config { key, message } => Error::config(format!("pretrain.{key}"), message),
            other => other,
        })
    }
}

/// Progress that a checkpoint must capture to resume bit-exactly.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainState {
    /// Completed epochs.
    pub epoch: usize,
    /// Completed optimizer steps.
    pub step: u64,
    pub optimizer: OptimizerState,
}

impl TrainState {
    pub fn new(model: &Morpheus, weight_decay: f64) -> Self {
        Self {
            epoch: 0,
            step: 0,
            optimizer: OptimizerState::new(&model.store, weight_decay),
        }
    }
}

/// One patient's inputs for a step.
#[derive(Clone, Debug)]
pub struct PretrainItem {
    pub patient: usize,
    pub patches: Tensor,
    pub plan: MaskPlan,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StepRecord {
    pub epoch: usize,
    pub step: u64,
    pub lr: f64,
    pub loss: f64,
    /// Batch mean per modality over patients with a masked group there.
    pub per_modality: Vec<(Modality, f64)>,
    #[serde(skip)]
    pub mask_lines: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub steps: usize,
    pub loss: f64,
    pub per_modality: Vec<(Modality, f64)>,
}

/// Every pre-training patient must carry every modality the model has.
pub fn check_complete(model: &Morpheus, cohort: &Cohort) -> Result<()> {
    for p in &cohort.patients {
        for m in model.modalities() {
            if !p.has(m) {
                return Err(Error::patient(&p.id, m.name(), "pre-training requires every modality"));
            }
        }
    }
    Ok(())
}

fn prepare_items(
    model: &Morpheus,
    cohort: &Cohort,
    batch: &[usize],
    step: u64,
    seeds: &SeedTree,
) -> Result<Vec<PretrainItem>> {
    batch
        .iter()
        .map(|&p| {
            let record = &cohort.patients[p];
            let mut prng = seeds.stream(Stream::Patches, &[step, p as u64]);
            let patches = sample_patches(&record.patches, model.config.patch_sample(), &mut prng);
            let mut mrng = seeds.stream(Stream::Mask, &[step, p as u64]);
            let plan = sample_mask_plan(
                &model.token_counts(record),
                model.config.mask_ratio,
                model.config.alpha,
                &mut mrng,
            )?;
            Ok(PretrainItem {
                patient: p,
                patches,
                plan,
            })
        })
        .collect()
}

/// Forward and backward for one patient on a training graph.
pub(crate) fn item_gradients(
    model: &Morpheus,
    cohort: &Cohort,
    item: &PretrainItem,
    step: u64,
    seeds: &SeedTree,
) -> Result<(Grads, LossBreakdown)> {
    let record = &cohort.patients[item.patient];
    let rng = seeds.stream(Stream::Dropout, &[step, item.patient as u64]);
    let mut g = Graph::training(&model.store, model.config.dropout, rng);
    let omics = |m: Modality| record.omics(m).map(|p| p.values.clone());
    let enc = model.encode(&mut g, &item.patches, &omics, &item.plan)?;
    let (loss, breakdown) = model.masked_mae_loss(&mut g, &enc, &omics, &item.plan)?;
    if !breakdown.total.is_finite() {
        return Err(Error::NonFinite(format!(
            "loss {} for patient {} at step {step}",
            breakdown.total, record.id
        )));
    }
    Ok((g.backward(loss)?, breakdown))
}

/// One optimizer step on the patients `batch` (cohort indices). Gradients
/// are reduced in batch order, so the result does not depend on threading.
pub fn pretrain_step(
    model: &mut Morpheus,
    state: &mut TrainState,
    cohort: &Cohort,
    batch: &[usize],
    lr: f64,
    seeds: &SeedTree,
) -> Result<StepRecord> {
    if batch.is_empty() {
        return Err(Error::validation("empty batch"));
    }
    let step = state.step;
    let items = prepare_items(model, cohort, batch, step, seeds)?;
    let results = {
        let m: &Morpheus = model;
        crate::parallel::try_map(&items, |item| item_gradients(m, cohort, item, step, seeds))?
    };
    let mut grads = Grads::new(model.store.len());
    let mut total = 0.0;
    let mut sums = [0.0; 3];
    let mut counts = [0usize; 3];
    for (g, b) in results {
        grads.merge(g);
        total += b.total;
        for (m, v) in b.per_modality {
            sums[m.index()] += v;
            counts[m.index()] += 1;
        }
    }
    let n = batch.len() as f64;
    grads.scale(1.0 / n);
    if !grads.is_finite() {
        return Err(Error::NonFinite(format!("gradient at step {step}")));
    }
    grads.densify(&model.store);
    adamw_step(&mut state.optimizer, &mut model.store, &grads, lr)?;
    state.step += 1;
    Ok(StepRecord {
        epoch: state.epoch,
        step,
        lr,
        loss: total / n,
        per_modality: Modality::ALL
            .into_iter()
            .filter(|m| counts[m.index()] > 0)
            .map(|m| (m, sums[m.index()] / counts[m.index()] as f64))
            .collect(),
        mask_lines: items.iter().map(|i| i.plan.to_bitmask_line()).collect(),
    })
}

/// Run epoch `state.epoch` over the whole cohort in a seeded shuffled order.
pub fn pretrain_epoch(
    model: &mut Morpheus,
    state: &mut TrainState,
    cohort: &Cohort,
    cfg: &PretrainConfig,
    seeds: &SeedTree,
    on_step: &mut dyn FnMut(&StepRecord),
) -> Result<EpochRecord> {
    if cohort.is_empty() {
        return Err(Error::validation("empty pre-training cohort"));
    }
    let epoch = state.epoch;
    let mut order: Vec<usize> = (0..cohort.len()).collect();
    order.shuffle(&mut seeds.stream(Stream::Split, &[epoch as u64]));
    let batches: Vec<&[usize]> = order.chunks(cfg.batch_size).collect();
    let schedule = cfg.schedule();
    let mut loss = 0.0;
    let mut sums = [0.0; 3];
    let mut counts = [0usize; 3];
    for (b, batch) in batches.iter().enumerate() {
        let lr = schedule.lr(epoch as f64 + b as f64 / batches.len() as f64);
        let rec = pretrain_step(model, state, cohort, batch, lr, seeds)?;
        loss += rec.loss;
        for (m, v) in &rec.per_modality {
            sums[m.index()] += v;
            counts[m.index()] += 1;
        }
        on_step(&rec);
    }
    state.epoch += 1;
    Ok(EpochRecord {
        epoch,
        steps: batches.len(),
        loss: loss / batches.len() as f64,
        per_modality: Modality::ALL
            .into_iter()
            .filter(|m| counts[m.index()] > 0)
            .map(|m| (m, sums[m.index()] / counts[m.index()] as f64))
            .collect(),
    })
}
