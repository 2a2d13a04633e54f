//! Fine-tuning heads on the `<cls>` output, survival and classification
//! metrics, and the few-shot and cross-validation harnesses.

use std::path::Path;

use log::warn;
use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{hazard_nll_row, sigmoid, Graph, HazardTarget};
use crate::data::{Cohort, Modality, SurvivalLabel};
use crate::error::{Error, Result};
use crate::model::Morpheus;
use crate::nn::Linear;
use crate::optim::{adamw_step, LrSchedule, OptimizerState};
use crate::params::{Grads, ParamStore};
use crate::rng::{SeedTree, Stream};
use crate::tokenizers::sample_patches;

/// Linear map from `<cls>` to class logits.
#[derive(Clone, Debug)]
pub struct SubtypeHead {
    pub linear: Linear,
    pub num_classes: usize,
}

impl SubtypeHead {
    pub fn new<R: rand::Rng + ?Sized>(
        store: &mut ParamStore,
        dim: usize,
        num_classes: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if num_classes < 2 {
            return Err(Error::config("finetune.num_classes", "need at least 2 classes"));
        }
        Ok(Self {
            linear: Linear::new(store, "head.subtype", dim, num_classes, rng)?,
            num_classes,
        })
    }
}

/// Interval upper edges `t_1 < ... < t_Q`; interval `q` is
/// `(t_{q-1}, t_q]` with `t_0 = 0`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiscretizationRule {
    pub edges: Vec<f64>,
}

/// Type-7 (linear interpolation) quantile of ascending `sorted`.
pub fn quantile(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

impl DiscretizationRule {
    pub fn new(edges: Vec<f64>) -> Result<Self> {
        if edges.len() < 2 {
            return Err(Error::config("survival.num_intervals", "need at least 2 intervals"));
        }
        if edges[0] <= 0.0 || edges.windows(2).any(|w| w[1] <= w[0]) || edges.iter().any(|e| !e.is_finite()) {
            return Err(Error::config(
                "survival.num_intervals",
                format!("interval edges must be positive and strictly increasing, got {edges:?}"),
            ));
        }
        Ok(Self { edges })
    }

    /// Edges at the `q/Q` quantiles of `times` (censored included).
    pub fn from_times(times: &[f64], num_intervals: usize) -> Result<Self> {
        if times.is_empty() {
            return Err(Error::validation("no survival times to discretize"));
        }
        let mut sorted = times.to_vec();
        sorted.sort_by(f64::total_cmp);
        let q = num_intervals as f64;
        Self::new((1..=num_intervals).map(|k| quantile(&sorted, k as f64 / q)).collect())
    }

    pub fn num_intervals(&self) -> usize {
        self.edges.len()
    }

    /// Zero-based interval of `time` and whether it was clamped into the
    /// last interval.
    pub fn interval(&self, time: f64) -> (usize, bool) {
        match self.edges.iter().position(|&e| time <= e) {
            Some(q) => (q, false),
            None => (self.edges.len() - 1, true),
        }
    }

    pub fn target(&self, label: SurvivalLabel) -> HazardTarget {
        let (interval, clamped) = self.interval(label.time);
        if clamped {
            warn!(
                "survival time {} beyond last edge {}; clamped into interval {}",
                label.time,
                self.edges[interval],
                interval + 1
            );
        }
        HazardTarget {
            interval,
            event: label.event,
        }
    }
}

/// Linear map from `<cls>` to `Q` hazard logits.
#[derive(Clone, Debug)]
pub struct SurvivalHead {
    pub linear: Linear,
    pub rule: DiscretizationRule,
}

impl SurvivalHead {
    pub fn new<R: rand::Rng + ?Sized>(
        store: &mut ParamStore,
        dim: usize,
        rule: DiscretizationRule,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(Self {
            linear: Linear::new(store, "head.survival", dim, rule.num_intervals(), rng)?,
            rule,
        })
    }
}

/// Mean discrete-time hazard negative log-likelihood of `logits`
/// (one row of `Q` per sample).
pub fn hazard_nll(logits: &[Vec<f64>], labels: &[SurvivalLabel], rule: &DiscretizationRule) -> Result<f64> {
    if logits.len() != labels.len() || logits.is_empty() {
        return Err(Error::Shape(format!("{} logit rows vs {} labels", logits.len(), labels.len())));
    }
    let q = rule.num_intervals();
    if let Some(row) = logits.iter().find(|r| r.len() != q) {
        return Err(Error::Shape(format!("{} logits for Q={q}", row.len())));
    }
    let total: f64 = logits
        .iter()
        .zip(labels)
        .map(|(row, &l)| hazard_nll_row(row, rule.target(l)))
        .sum();
    Ok(total / logits.len() as f64)
}

/// Sum of interval hazards.
pub fn risk_score(logits: &[f64]) -> f64 {
    logits.iter().map(|&a| sigmoid(a)).sum()
}

/// Harrell's C over pairs with `T_i < T_j` and `δ_i = 1`; equal risks count
/// one half. `Undefined` when no pair is comparable.
pub fn concordance_index(risks: &[f64], labels: &[SurvivalLabel]) -> Result<f64> {
    if risks.len() != labels.len() {
        return Err(Error::Shape(format!("{} risks vs {} labels", risks.len(), labels.len())));
    }
    let (mut comparable, mut score) = (0u64, 0u64);
    for (i, li) in labels.iter().enumerate() {
        if !li.event {
            continue;
        }
        for (j, lj) in labels.iter().enumerate() {
            if li.time < lj.time {
                comparable += 1;
                score += match risks[i].partial_cmp(&risks[j]) {
                    Some(std::cmp::Ordering::Greater) => 2,
                    Some(std::cmp::Ordering::Equal) => 1,
                    _ => 0,
                };
            }
        }
    }
    if comparable == 0 {
        return Err(Error::Undefined("no comparable pairs".into()));
    }
    Ok(score as f64 / (2 * comparable) as f64)
}

/// Mann-Whitney AUC of `scores` for `labels == true`, ties one half.
/// The complementary labelling always yields exactly `1 - auc`.
pub fn auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::Shape(format!("{} scores vs {} labels", scores.len(), labels.len())));
    }
    let pos: Vec<f64> = scores.iter().zip(labels).filter(|(_, &l)| l).map(|(s, _)| *s).collect();
    let neg: Vec<f64> = scores.iter().zip(labels).filter(|(_, &l)| !l).map(|(s, _)| *s).collect();
    if pos.is_empty() || neg.is_empty() {
        return Err(Error::validation("AUC needs both classes"));
    }
    let (mut above, mut below) = (0u64, 0u64);
    for p in &pos {
        for n in &neg {
            if p > n {
                above += 2;
            } else if p < n {
                below += 2;
            } else {
                above += 1;
                below += 1;
            }
        }
    }
    let total = (above + below) as f64;
    Ok(if above <= below {
        above as f64 / total
    } else {
        1.0 - below as f64 / total
    })
}

/// Mean and sample standard deviation (zero for a single value).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Fine-tuning hyperparameters shared by both tasks.
#[derive(Clone, Debug, PartialEq)]
pub struct FinetuneOptions {
    pub epochs: usize,
    pub batch_size: usize,
    pub warmup_epochs: f64,
    pub lr_start: f64,
    pub lr_peak: f64,
    pub lr_final: f64,
    pub weight_decay: f64,
    pub dropout: f64,
    /// Patches sampled per slide; 0 keeps every patch.
    pub patch_sample: usize,
    /// Omics modalities shown alongside the slide.
    pub visible: Vec<Modality>,
}

impl FinetuneOptions {
    pub fn schedule(&self) -> LrSchedule {
        LrSchedule {
            warmup_epochs: self.warmup_epochs,
            lr_start: self.lr_start,
            lr_peak: self.lr_peak,
            lr_final: self.lr_final,
            total_epochs: self.epochs as f64,
        }
    }

    pub fn validate(&self, section: &str) -> Result<()> {
        let key = |k: &str| format!("{section}.{k}");
        if self.batch_size == 0 {
            return Err(Error::config(key("batch_size"), "must be positive"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::config(key("dropout"), format!("{} outside [0, 1)", self.dropout)));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::config(key("weight_decay"), "must be nonnegative"));
        }
        self.schedule().validate().map_err(|e| match e {
            Error::Config { key: k, message } => Error::config(key(&k), message),
            other => other,
        })
    }

    fn patch_sample(&self) -> Option<usize> {
        (self.patch_sample > 0).then_some(self.patch_sample)
    }
}

enum Label {
    Class(usize),
    Hazard(HazardTarget),
}

/// A copy of the backbone with a task head in its parameter store.
pub struct Tuned {
    pub model: Morpheus,
    pub head: Linear,
}

fn forward_logits(
    tuned: &Tuned,
    g: &mut Graph,
    cohort: &Cohort,
    patient: usize,
    visible: &[Modality],
    patch_sample: Option<usize>,
    patch_coords: &[u64],
    seeds: &SeedTree,
) -> Result<crate::autograd::Var> {
    let record = &cohort.patients[patient];
    let mut prng = seeds.stream(Stream::Patches, patch_coords);
    let patches = sample_patches(&record.patches, patch_sample, &mut prng);
    let cls = tuned.model.cls_embedding(g, &patches, record, visible)?;
    tuned.head.forward(g, cls)
}

fn fine_tune(
    base: &Morpheus,
    cohort: &Cohort,
    train: &[(usize, Label)],
    make_head: impl FnOnce(&mut ParamStore, usize, &mut ChaCha8Rng) -> Result<Linear>,
    opts: &FinetuneOptions,
    seeds: &SeedTree,
) -> Result<Tuned> {
    if train.is_empty() {
        return Err(Error::validation("no fine-tuning samples"));
    }
    let mut model = base.clone();
    let dim = model.config.dim;
    let head = make_head(&mut model.store, dim, &mut seeds.stream(Stream::Init, &[1]))?;
    let mut tuned = Tuned { model, head };
    let mut optimizer = OptimizerState::new(&tuned.model.store, opts.weight_decay);
    let schedule = opts.schedule();
    let mut step = 0u64;
    for epoch in 0..opts.epochs {
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut seeds.stream(Stream::Split, &[epoch as u64]));
        let batches: Vec<&[usize]> = order.chunks(opts.batch_size).collect();
        for (b, batch) in batches.iter().enumerate() {
            let lr = schedule.lr(epoch as f64 + b as f64 / batches.len() as f64);
            let t = &tuned;
            let results = crate::parallel::try_map(batch, |&k| {
                let (patient, label) = &train[k];
                let rng = seeds.stream(Stream::Dropout, &[step, *patient as u64]);
                let mut g = Graph::training(&t.model.store, opts.dropout, rng);
                let logits = forward_logits(
                    t,
                    &mut g,
                    cohort,
                    *patient,
                    &opts.visible,
                    opts.patch_sample(),
                    &[step, *patient as u64],
                    seeds,
                )?;
                let loss = match label {
                    Label::Class(c) => g.cross_entropy(logits, &[*c])?,
                    Label::Hazard(h) => g.hazard_nll(logits, &[*h])?,
                };
                let value = g.scalar(loss);
                if !value.is_finite() {
                    return Err(Error::NonFinite(format!(
                        "fine-tuning loss {value} for patient {} at step {step}",
                        cohort.patients[*patient].id
                    )));
                }
                g.backward(loss)
            })?;
            let mut grads = Grads::new(tuned.model.store.len());
            for g in results {
                grads.merge(g);
            }
            grads.scale(1.0 / batch.len() as f64);
            if !grads.is_finite() {
                return Err(Error::NonFinite(format!("fine-tuning gradient at step {step}")));
            }
            grads.densify(&tuned.model.store);
            adamw_step(&mut optimizer, &mut tuned.model.store, &grads, lr)?;
            step += 1;
        }
    }
    Ok(tuned)
}

/// Evaluation-mode logits for `patients`.
pub fn predict_logits(
    tuned: &Tuned,
    cohort: &Cohort,
    patients: &[usize],
    opts: &FinetuneOptions,
    seeds: &SeedTree,
) -> Result<Vec<Vec<f64>>> {
    crate::parallel::try_map(patients, |&p| {
        let mut g = Graph::new(&tuned.model.store);
        let v = forward_logits(tuned, &mut g, cohort, p, &opts.visible, opts.patch_sample(), &[u64::MAX, p as u64], seeds)?;
        Ok(g.value(v).data().to_vec())
    })
}

fn check_visible(model: &Morpheus, cohort: &Cohort, patients: &[usize], visible: &[Modality]) -> Result<()> {
    for &m in visible {
        if model.scheme(m).is_none() {
            return Err(Error::config("finetune.visible", format!("model has no {m} branch")));
        }
        if let Some(&p) = patients.iter().find(|&&p| !cohort.patients[p].has(m)) {
            return Err(Error::patient(&cohort.patients[p].id, m.name(), "configured modality absent"));
        }
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FewShotConfig {
    /// Training samples per class.
    pub k: usize,
    pub runs: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub dropout: f64,
    /// Patches sampled per slide; 0 keeps every patch.
    pub patch_sample: usize,
    /// Omics modalities shown alongside the slide.
    pub visible: Vec<Modality>,
}

impl Default for FewShotConfig {
    fn default() -> Self {
        Self {
            k: 10,
            runs: 10,
            epochs: 5,
            batch_size: 1,
            lr: 5e-5,
            weight_decay: 1e-2,
            dropout: 0.35,
            patch_sample: 1024,
            visible: Vec::new(),
        }
    }
}

impl FewShotConfig {
    pub fn options(&self) -> FinetuneOptions {
        FinetuneOptions {
            epochs: self.epochs,
            batch_size: self.batch_size,
            warmup_epochs: 0.0,
            lr_start: self.lr,
            lr_peak: self.lr,
            lr_final: self.lr,
            weight_decay: self.weight_decay,
            dropout: self.dropout,
            patch_sample: self.patch_sample,
            visible: self.visible.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FewShotReport {
    pub auc: Vec<f64>,
    pub mean: f64,
    pub std: f64,
}

/// Class scores for AUC: the logit margin of class 1 for binary tasks,
/// otherwise the macro one-vs-rest average over softmax probabilities.
fn subtype_auc(logits: &[Vec<f64>], labels: &[usize], classes: usize) -> Result<f64> {
    if classes == 2 {
        let s: Vec<f64> = logits.iter().map(|l| l[1] - l[0]).collect();
        let y: Vec<bool> = labels.iter().map(|&c| c == 1).collect();
        return auc(&s, &y);
    }
    let probs: Vec<Vec<f64>> = logits
        .iter()
        .map(|l| {
            let m = l.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = l.iter().map(|v| (v - m).exp()).collect();
            let z: f64 = e.iter().sum();
            e.into_iter().map(|v| v / z).collect()
        })
        .collect();
    let mut sum = 0.0;
    for c in 0..classes {
        let s: Vec<f64> = probs.iter().map(|p| p[c]).collect();
        let y: Vec<bool> = labels.iter().map(|&l| l == c).collect();
        sum += auc(&s, &y)?;
    }
    Ok(sum / classes as f64)
}

/// Per run: draw `k` labelled patients per class, fine-tune the whole model
/// plus a fresh head, and score AUC on every remaining labelled patient.
pub fn few_shot_protocol(
    model: &Morpheus,
    cohort: &Cohort,
    cfg: &FewShotConfig,
    seeds: &SeedTree,
) -> Result<FewShotReport> {
    let opts = cfg.options();
    opts.validate("subtype")?;
    if cfg.k == 0 || cfg.runs == 0 {
        return Err(Error::config("subtype.k", "k and runs must be positive"));
    }
    let labelled: Vec<usize> = (0..cohort.len()).filter(|&i| cohort.patients[i].subtype.is_some()).collect();
    check_visible(model, cohort, &labelled, &opts.visible)?;
    let classes = labelled
        .iter()
        .map(|&i| cohort.patients[i].subtype.unwrap() + 1)
        .max()
        .unwrap_or(0);
    let by_class: Vec<Vec<usize>> = (0..classes)
        .map(|c| labelled.iter().copied().filter(|&i| cohort.patients[i].subtype == Some(c)).collect())
        .collect();
    if classes < 2 {
        return Err(Error::validation("subtyping needs at least two classes"));
    }
    if let Some((c, v)) = by_class.iter().enumerate().find(|(_, v)| v.len() <= cfg.k) {
        return Err(Error::validation(format!(
            "class {c} has {} samples; need more than k={} to leave an evaluation set",
            v.len(),
            cfg.k
        )));
    }
    let mut aucs = Vec::with_capacity(cfg.runs);
    for run in 0..cfg.runs {
        let rs = seeds.child(&[run as u64]);
        let mut train = Vec::new();
        let mut held = Vec::new();
        for (c, members) in by_class.iter().enumerate() {
            let mut m = members.clone();
            m.shuffle(&mut rs.stream(Stream::Split, &[u64::MAX, c as u64]));
            train.extend(m[..cfg.k].iter().map(|&p| (p, Label::Class(c))));
            held.extend_from_slice(&m[cfg.k..]);
        }
        held.sort_unstable();
        let tuned = fine_tune(
            model,
            cohort,
            &train,
            |store, dim, rng| Ok(SubtypeHead::new(store, dim, classes, rng)?.linear),
            &opts,
            &rs,
        )?;
        let logits = predict_logits(&tuned, cohort, &held, &opts, &rs)?;
        let labels: Vec<usize> = held.iter().map(|&p| cohort.patients[p].subtype.unwrap()).collect();
        aucs.push(subtype_auc(&logits, &labels, classes)?);
    }
    let (mean, std) = mean_std(&aucs);
    Ok(FewShotReport { auc: aucs, mean, std })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SurvivalConfig {
    pub folds: usize,
    pub num_intervals: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub warmup_epochs: f64,
    pub lr_start: f64,
    pub lr_peak: f64,
    pub lr_final: f64,
    pub weight_decay: f64,
    pub dropout: f64,
    /// Patches sampled per slide; 0 keeps every patch.
    pub patch_sample: usize,
    /// Omics modalities shown alongside the slide.
    pub visible: Vec<Modality>,
}

impl Default for SurvivalConfig {
    fn default() -> Self {
        Self {
            folds: 5,
            num_intervals: 4,
            epochs: 20,
            batch_size: 32,
            warmup_epochs: 5.0,
            lr_start: 1e-5,
            lr_peak: 5e-5,
            lr_final: 6e-6,
            weight_decay: 1e-2,
            dropout: 0.35,
            patch_sample: 1024,
            visible: Vec::new(),
        }
    }
}

impl SurvivalConfig {
    pub fn options(&self) -> FinetuneOptions {
        FinetuneOptions {
            epochs: self.epochs,
            batch_size: self.batch_size,
            warmup_epochs: self.warmup_epochs,
            lr_start: self.lr_start,
            lr_peak: self.lr_peak,
            lr_final: self.lr_final,
            weight_decay: self.weight_decay,
            dropout: self.dropout,
            patch_sample: self.patch_sample,
            visible: self.visible.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SurvivalReport {
    /// C-index per fold; `None` when the fold had no comparable pair.
    pub c_index: Vec<Option<f64>>,
    pub mean: f64,
    pub std: f64,
}

/// Deterministic assignment of `n` patients to `folds` non-overlapping
/// folds of near-equal size.
pub fn fold_assignment(n: usize, folds: usize, seeds: &SeedTree) -> Vec<Vec<usize>> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut seeds.stream(Stream::Split, &[u64::MAX]));
    let mut out = vec![Vec::new(); folds];
    for (pos, i) in idx.into_iter().enumerate() {
        out[pos % folds].push(i);
    }
    for f in &mut out {
        f.sort_unstable();
    }
    out
}

/// k-fold cross-validated survival fine-tuning.
pub fn survival_cv(
    model: &Morpheus,
    cohort: &Cohort,
    cfg: &SurvivalConfig,
    seeds: &SeedTree,
) -> Result<SurvivalReport> {
    let opts = cfg.options();
    opts.validate("survival")?;
    if cfg.folds < 2 {
        return Err(Error::config("survival.folds", "need at least 2 folds"));
    }
    if cfg.num_intervals < 2 {
        return Err(Error::config("survival.num_intervals", "need at least 2 intervals"));
    }
    let labelled: Vec<usize> = (0..cohort.len()).filter(|&i| cohort.patients[i].survival.is_some()).collect();
    if labelled.len() < cfg.folds {
        return Err(Error::validation(format!(
            "{} patients with survival labels for {} folds",
            labelled.len(),
            cfg.folds
        )));
    }
    check_visible(model, cohort, &labelled, &opts.visible)?;
    let label = |p: usize| cohort.patients[p].survival.unwrap();
    let folds: Vec<Vec<usize>> = fold_assignment(labelled.len(), cfg.folds, seeds)
        .into_iter()
        .map(|f| f.into_iter().map(|k| labelled[k]).collect())
        .collect();
    let mut scores = Vec::with_capacity(cfg.folds);
    for (f, test) in folds.iter().enumerate() {
        let fs = seeds.child(&[f as u64]);
        let train_ids: Vec<usize> = folds
            .iter()
            .enumerate()
            .filter(|(g, _)| *g != f)
            .flat_map(|(_, v)| v.iter().copied())
            .collect();
        let times: Vec<f64> = train_ids.iter().map(|&p| label(p).time).collect();
        let rule = DiscretizationRule::from_times(&times, cfg.num_intervals)?;
        let train: Vec<(usize, Label)> = train_ids
            .iter()
            .map(|&p| (p, Label::Hazard(rule.target(label(p)))))
            .collect();
        let head_rule = rule.clone();
        let tuned = fine_tune(
            model,
            cohort,
            &train,
            |store, dim, rng| Ok(SurvivalHead::new(store, dim, head_rule, rng)?.linear),
            &opts,
            &fs,
        )?;
        let logits = predict_logits(&tuned, cohort, test, &opts, &fs)?;
        let risks: Vec<f64> = logits.iter().map(|l| risk_score(l)).collect();
        let labels: Vec<SurvivalLabel> = test.iter().map(|&p| label(p)).collect();
        match concordance_index(&risks, &labels) {
            Ok(c) => scores.push(Some(c)),
            Err(Error::Undefined(why)) => {
                warn!("fold {f}: C-index undefined ({why}); excluded from the mean");
                scores.push(None);
            }
            Err(e) => return Err(e),
        }
    }
    let defined: Vec<f64> = scores.iter().flatten().copied().collect();
    if defined.is_empty() {
        return Err(Error::Undefined("no fold had a comparable pair".into()));
    }
    let (mean, std) = mean_std(&defined);
    Ok(SurvivalReport {
        c_index: scores,
        mean,
        std,
    })
}

/// One tidy result row.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub task: String,
    /// `run3`, `fold0`, or `summary`.
    pub split: String,
    pub metric: String,
    pub value: f64,
    pub seed: u64,
}

impl FewShotReport {
    pub fn rows(&self, task: &str, seed: u64) -> Vec<MetricRow> {
        let row = |split: String, metric: &str, value| MetricRow {
            task: task.into(),
            split,
            metric: metric.into(),
            value,
            seed,
        };
        let mut out: Vec<MetricRow> = self.auc.iter().enumerate().map(|(i, &v)| row(format!("run{i}"), "auc", v)).collect();
        out.push(row("summary".into(), "auc_mean", self.mean));
        out.push(row("summary".into(), "auc_std", self.std));
        out
    }
}

impl SurvivalReport {
    pub fn rows(&self, task: &str, seed: u64) -> Vec<MetricRow> {
        let row = |split: String, metric: &str, value| MetricRow {
            task: task.into(),
            split,
            metric: metric.into(),
            value,
            seed,
        };
        let mut out: Vec<MetricRow> = self
            .c_index
            .iter()
            .enumerate()
            .map(|(i, v)| row(format!("fold{i}"), "c_index", v.unwrap_or(f64::NAN)))
            .collect();
        out.push(row("summary".into(), "c_index_mean", self.mean));
        out.push(row("summary".into(), "c_index_std", self.std));
        out
    }
}

pub fn write_metrics_csv(path: &Path, rows: &[MetricRow]) -> Result<()> {
    let wrap = |e: csv::Error| match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Format {
            path: path.to_path_buf(),
            message: format!("{other:?}"),
        },
    };
    let mut w = csv::Writer::from_path(path).map_err(wrap)?;
    for r in rows {
        w.serialize(r).map_err(wrap)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests;
