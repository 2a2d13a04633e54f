use std::path::{Path, PathBuf};

use morpheus::checkpoint::{encode, load_checkpoint, save_checkpoint};
use morpheus::config::RunConfig;
use morpheus::data::{load_cohort, write_cohort, Cohort, Modality};
use morpheus::downstream::{few_shot_protocol, survival_cv, write_metrics_csv};
use morpheus::model::{check_complete, pretrain_epoch, EpochRecord, Morpheus, StepRecord, TrainState};
use morpheus::recon::{direction_accuracy, generate_combinations, significant_features, write_reports, Combo, ComboOutput};
use morpheus::rng::SeedTree;
use morpheus::synth::generate_cohort;
use morpheus::tensor::Tensor;
use morpheus::{Error, Result};
use serde_json::{json, Map, Value};

use crate::jsonlog::JsonLog;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Command {
    SynthData,
    Pretrain,
    FinetuneSubtype,
    FinetuneSurvival,
    Generate,
    Evaluate,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::SynthData => "synth-data",
            Command::Pretrain => "pretrain",
            Command::FinetuneSubtype => "finetune-subtype",
            Command::FinetuneSurvival => "finetune-survival",
            Command::Generate => "generate",
            Command::Evaluate => "evaluate",
        }
    }
}

/// Resolved command-line overrides.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub config: Option<PathBuf>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub force: bool,
    pub dry_run: bool,
}

pub fn effective_config(o: &Overrides) -> Result<RunConfig> {
    let mut cfg = match &o.config {
        Some(p) if !p.exists() => return Err(Error::config("--config", format!("{} does not exist", p.display()))),
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = o.seed {
        cfg.seed = s;
        cfg.synth.seed = s;
    }
    if let Some(out) = &o.out {
        cfg.out = Some(out.clone());
    }
    if let Some(c) = &o.checkpoint {
        cfg.checkpoint = Some(c.clone());
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn run(cmd: Command, o: &Overrides) -> Result<()> {
    let cfg = effective_config(o)?;
    let out = cfg
        .out
        .clone()
        .ok_or_else(|| Error::config("out", "no output directory; pass --out or set `out`"))?;
    check_inputs(cmd, &cfg)?;
    if o.dry_run {
        println!("{}", plan(cmd, &cfg, &out));
        return Ok(());
    }
    prepare_out(&out, o.force)?;
    let mut effective = cfg.clone();
    effective.out = None;
    let path = out.join("config.toml");
    std::fs::write(&path, effective.to_toml()?).map_err(|e| Error::io(&path, e))?;

    let mut log = JsonLog::stdout();
    log.header(cmd.name(), cfg.seed);
    match cmd {
        Command::SynthData => synth_data(&cfg, &out, &mut log),
        Command::Pretrain => pretrain(&cfg, &out),
        Command::FinetuneSubtype => finetune(&cfg, &out, false, &mut log),
        Command::FinetuneSurvival => finetune(&cfg, &out, true, &mut log),
        Command::Generate => generate(&cfg, &out, false, &mut log),
        Command::Evaluate => generate(&cfg, &out, true, &mut log),
    }
}

fn manifest(cfg: &RunConfig) -> Result<&Path> {
    cfg.data
        .manifest
        .as_deref()
        .ok_or_else(|| Error::config("data.manifest", "no cohort manifest configured"))
}

fn eval_manifest(cfg: &RunConfig) -> Result<&Path> {
    match &cfg.data.eval_manifest {
        Some(p) => Ok(p),
        None => manifest(cfg),
    }
}

fn must_exist(key: &str, p: &Path) -> Result<()> {
    if p.is_file() {
        Ok(())
    } else {
        Err(Error::config(key, format!("{} does not exist", p.display())))
    }
}

/// Fail before any work if a required input path is missing.
fn check_inputs(cmd: Command, cfg: &RunConfig) -> Result<()> {
    match cmd {
        Command::SynthData => Ok(()),
        Command::Pretrain | Command::FinetuneSubtype | Command::FinetuneSurvival => {
            must_exist("data.manifest", manifest(cfg)?)?;
            match &cfg.checkpoint {
                Some(c) => must_exist("checkpoint", c),
                None => Ok(()),
            }
        }
        Command::Generate | Command::Evaluate => {
            must_exist("data.manifest", eval_manifest(cfg)?)?;
            let c = cfg
                .checkpoint
                .as_deref()
                .ok_or_else(|| Error::config("checkpoint", "a trained checkpoint is required"))?;
            must_exist("checkpoint", c)
        }
    }
}

fn plan(cmd: Command, cfg: &RunConfig, out: &Path) -> Value {
    let path = |p: Option<&Path>| p.map(|p| p.display().to_string());
    let steps: Vec<String> = match cmd {
        Command::SynthData => vec![
            format!(
                "generate {} synthetic patients (latent dim {}, seed {})",
                cfg.synth.num_patients, cfg.synth.latent_dim, cfg.synth.seed
            ),
            format!("write manifest and payloads to {}", out.display()),
        ],
        Command::Pretrain => vec![
            match &cfg.checkpoint {
                Some(c) => format!("resume from {}", c.display()),
                None => "initialize a fresh model".into(),
            },
            format!(
                "pre-train to epoch {} with batch size {}, mask ratio {}",
                cfg.pretrain.epochs, cfg.pretrain.batch_size, cfg.model.mask_ratio
            ),
            format!("checkpoint every {} epochs, then write model.ckpt", cfg.pretrain.checkpoint_every),
        ],
        Command::FinetuneSubtype => vec![
            init_step(cfg),
            format!("{} few-shot runs with k={} per class", cfg.subtype.runs, cfg.subtype.k),
            "write metrics.csv".into(),
        ],
        Command::FinetuneSurvival => vec![
            init_step(cfg),
            format!("{}-fold survival fine-tuning with Q={}", cfg.survival.folds, cfg.survival.num_intervals),
            "write metrics.csv".into(),
        ],
        Command::Generate | Command::Evaluate => vec![
            format!("load {}", path(cfg.checkpoint.as_deref()).unwrap_or_default()),
            if cfg.generate.combos.is_empty() {
                "reconstruct every standard combo".into()
            } else {
                format!(
                    "reconstruct {}",
                    cfg.generate.combos.iter().map(|c| c.to_string()).collect::<Vec<_>>().join(", ")
                )
            },
            if cmd == Command::Generate {
                "write profiles and correlation reports".into()
            } else {
                "write correlation reports and direction accuracy".into()
            },
        ],
    };
    json!({
        "event": "plan",
        "command": cmd.name(),
        "seed": cfg.seed,
        "out": out.display().to_string(),
        "manifest": path(cfg.data.manifest.as_deref()),
        "checkpoint": path(cfg.checkpoint.as_deref()),
        "steps": steps,
    })
}

fn init_step(cfg: &RunConfig) -> String {
    match &cfg.checkpoint {
        Some(c) => format!("initialize from {}", c.display()),
        None => "initialize from scratch".into(),
    }
}

fn prepare_out(out: &Path, force: bool) -> Result<()> {
    if let Ok(mut entries) = std::fs::read_dir(out) {
        if entries.next().is_some() && !force {
            return Err(Error::config(
                "out",
                format!("{} exists and is not empty; pass --force to write into it", out.display()),
            ));
        }
    }
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))
}

fn per_modality(values: &[(Modality, f64)]) -> Value {
    let mut m = Map::new();
    for (k, v) in values {
        m.insert(k.name().to_string(), json!(v));
    }
    Value::Object(m)
}

fn step_record(r: &StepRecord) -> Value {
    json!({
        "event": "step",
        "epoch": r.epoch,
        "step": r.step,
        "lr": r.lr,
        "loss": r.loss,
        "per_modality": per_modality(&r.per_modality),
    })
}

fn epoch_record(r: &EpochRecord) -> Value {
    json!({
        "event": "epoch",
        "epoch": r.epoch,
        "steps": r.steps,
        "loss": r.loss,
        "per_modality": per_modality(&r.per_modality),
    })
}

fn synth_data(cfg: &RunConfig, out: &Path, log: &mut JsonLog) -> Result<()> {
    let s = generate_cohort(&cfg.synth)?;
    let manifest = write_cohort(&s.cohort, out)?;
    let back = load_cohort(&manifest)?;
    if back != s.cohort {
        return Err(Error::validation("written cohort does not reload identically"));
    }
    log.record(json!({
        "event": "done",
        "patients": s.cohort.len(),
        "manifest": manifest.display().to_string(),
    }))
}

/// Model and schemes must agree with the cohort they are applied to.
fn check_compatible(model: &Morpheus, cohort: &Cohort) -> Result<()> {
    if model.patch_dim != cohort.patch_dim {
        return Err(Error::validation(format!(
            "checkpoint expects patch dimension {}, cohort has {}",
            model.patch_dim, cohort.patch_dim
        )));
    }
    for s in &cohort.schemes {
        if let Some(ms) = model.scheme(s.modality) {
            if ms.groups != s.groups || ms.num_features != s.num_features {
                return Err(Error::validation(format!(
                    "{} grouping differs between checkpoint and cohort",
                    s.modality
                )));
            }
        }
    }
    Ok(())
}

fn pretrain(cfg: &RunConfig, out: &Path) -> Result<()> {
    let cohort = load_cohort(manifest(cfg)?)?;
    let seeds = SeedTree::new(cfg.seed);
    let (mut model, mut state) = match &cfg.checkpoint {
        Some(path) => {
            let ck = load_checkpoint(path)?;
            if ck.seed != cfg.seed {
                return Err(Error::config(
                    "seed",
                    format!("checkpoint was trained with seed {}, run uses {}", ck.seed, cfg.seed),
                ));
            }
            if ck.model.config != cfg.model {
                log::warn!("using the model configuration stored in {}", path.display());
            }
            let state = ck.train.unwrap_or_else(|| TrainState::new(&ck.model, cfg.pretrain.weight_decay));
            (ck.model, state)
        }
        None => {
            let m = Morpheus::new(cfg.model.clone(), cohort.patch_dim, cohort.schemes.clone(), &seeds)?;
            let s = TrainState::new(&m, cfg.pretrain.weight_decay);
            (m, s)
        }
    };
    check_compatible(&model, &cohort)?;
    check_complete(&model, &cohort)?;

    let ck_dir = out.join("checkpoints");
    std::fs::create_dir_all(&ck_dir).map_err(|e| Error::io(&ck_dir, e))?;
    let mut log = JsonLog::with_file(&out.join("train.jsonl"))?;
    let mut failed = None;
    while state.epoch < cfg.pretrain.epochs {
        let rec = pretrain_epoch(&mut model, &mut state, &cohort, &cfg.pretrain, &seeds, &mut |r| {
            if let Err(e) = log.record(step_record(r)) {
                failed.get_or_insert(e);
            }
        })?;
        if let Some(e) = failed.take() {
            return Err(e);
        }
        if !rec.loss.is_finite() {
            return Err(Error::NonFinite(format!("loss at epoch {}", rec.epoch)));
        }
        log.record(epoch_record(&rec))?;
        let every = cfg.pretrain.checkpoint_every;
        if every > 0 && state.epoch % every == 0 && state.epoch < cfg.pretrain.epochs {
            let name = format!("checkpoints/epoch-{:04}.ckpt", state.epoch);
            save_checkpoint(&out.join(&name), &model, cfg.seed, Some(&state))?;
            log.record(json!({"event": "checkpoint", "epoch": state.epoch, "path": name}))?;
        }
    }
    let path = out.join("model.ckpt");
    save_checkpoint(&path, &model, cfg.seed, Some(&state))?;
    verify_checkpoint(&path, &model, cfg.seed, &state)?;
    log.record(json!({"event": "checkpoint", "epoch": state.epoch, "path": "model.ckpt", "verified": true}))?;
    log.finish()
}

/// Reload `path` and require that it re-encodes to the in-memory state.
fn verify_checkpoint(path: &Path, model: &Morpheus, seed: u64, state: &TrainState) -> Result<()> {
    let expected = encode(model, seed, Some(state))?;
    let back = load_checkpoint(path)?;
    if encode(&back.model, back.seed, back.train.as_ref())? != expected {
        return Err(Error::Checkpoint(format!("{} did not reload identically", path.display())));
    }
    Ok(())
}

fn load_model(cfg: &RunConfig, cohort: &Cohort) -> Result<Morpheus> {
    let model = match &cfg.checkpoint {
        Some(p) => load_checkpoint(p)?.model,
        None => Morpheus::new(cfg.model.clone(), cohort.patch_dim, cohort.schemes.clone(), &SeedTree::new(cfg.seed))?,
    };
    check_compatible(&model, cohort)?;
    Ok(model)
}

fn finetune(cfg: &RunConfig, out: &Path, survival: bool, log: &mut JsonLog) -> Result<()> {
    let cohort = load_cohort(manifest(cfg)?)?;
    let model = load_model(cfg, &cohort)?;
    let seeds = SeedTree::new(cfg.seed);
    let init = if cfg.checkpoint.is_some() { "checkpoint" } else { "scratch" };
    let rows = if survival {
        let rep = survival_cv(&model, &cohort, &cfg.survival, &seeds)?;
        for (i, c) in rep.c_index.iter().enumerate() {
            log.record(json!({"event": "fold", "fold": i, "c_index": c}))?;
        }
        log.record(json!({"event": "summary", "init": init, "c_index_mean": rep.mean, "c_index_std": rep.std}))?;
        rep.rows("survival", cfg.seed)
    } else {
        let rep = few_shot_protocol(&model, &cohort, &cfg.subtype, &seeds)?;
        for (i, a) in rep.auc.iter().enumerate() {
            log.record(json!({"event": "run", "run": i, "auc": a}))?;
        }
        log.record(json!({"event": "summary", "init": init, "auc_mean": rep.mean, "auc_std": rep.std}))?;
        rep.rows("subtype", cfg.seed)
    };
    write_metrics_csv(&out.join("metrics.csv"), &rows)
}

fn feature_name(m: Modality, j: usize) -> String {
    format!("{m}_{j}")
}

fn write_profiles(path: &Path, cohort: &Cohort, patients: &[usize], o: &ComboOutput) -> Result<()> {
    let wrap = |e: csv::Error| Error::Format {
        path: path.to_path_buf(),
        message: e.to_string(),
    };
    let mut w = csv::Writer::from_path(path).map_err(wrap)?;
    let mut header = vec!["patient_id".to_string()];
    header.extend((0..o.predicted.cols()).map(|j| feature_name(o.report.target, j)));
    w.write_record(&header).map_err(wrap)?;
    for (r, &p) in patients.iter().enumerate() {
        let mut row = vec![cohort.patients[p].id.clone()];
        row.extend(o.predicted.row(r).iter().map(|v| if v.is_nan() { "NA".to_string() } else { v.to_string() }));
        w.write_record(&row).map_err(wrap)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn generate(cfg: &RunConfig, out: &Path, evaluate: bool, log: &mut JsonLog) -> Result<()> {
    let cohort = load_cohort(eval_manifest(cfg)?)?;
    let ck = cfg.checkpoint.as_deref().expect("checked in check_inputs");
    let model = load_checkpoint(ck)?.model;
    check_compatible(&model, &cohort)?;
    let combos = if cfg.generate.combos.is_empty() {
        let available: Vec<Modality> = cohort
            .modalities()
            .into_iter()
            .filter(|m| model.scheme(*m).is_some())
            .collect();
        Combo::standard(&available)
    } else {
        cfg.generate.combos.clone()
    };
    let needed: Vec<Modality> = Modality::ALL
        .into_iter()
        .filter(|m| combos.iter().any(|c| c.target == *m || c.inputs.contains(m)))
        .collect();
    let patients: Vec<usize> = (0..cohort.len())
        .filter(|&i| needed.iter().all(|m| cohort.patients[i].has(*m)))
        .collect();
    if patients.len() < 3 {
        return Err(Error::validation(format!(
            "{} patients carry every modality the combos need; at least 3 required",
            patients.len()
        )));
    }
    let outputs = generate_combinations(&model, &cohort, &patients, &combos, &cfg.generate.grid)?;
    for o in &outputs {
        log.record(json!({
            "event": "combo",
            "combo": o.report.combo,
            "median_r": o.report.median,
            "excluded": o.report.excluded.len(),
        }))?;
    }
    let reports: Vec<_> = outputs.iter().map(|o| o.report.clone()).collect();
    write_reports(out, &reports, &feature_name)?;
    if evaluate {
        direction_report(cfg, out, &cohort, &patients, &outputs, log)
    } else {
        let dir = out.join("profiles");
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        for o in &outputs {
            let path = dir.join(format!("{}.csv", o.report.combo.replace("->", "_to_")));
            write_profiles(&path, &cohort, &patients, o)?;
        }
        Ok(())
    }
}

/// Direction-of-change accuracy between subtype 0 and subtype 1 patients.
fn direction_report(
    cfg: &RunConfig,
    out: &Path,
    cohort: &Cohort,
    patients: &[usize],
    outputs: &[ComboOutput],
    log: &mut JsonLog,
) -> Result<()> {
    let rows_of = |class: usize| -> Vec<usize> {
        patients
            .iter()
            .enumerate()
            .filter(|(_, &p)| cohort.patients[p].subtype == Some(class))
            .map(|(r, _)| r)
            .collect()
    };
    let (a, b) = (rows_of(0), rows_of(1));
    let path = out.join("direction.csv");
    let wrap = |e: csv::Error| Error::Format {
        path: path.clone(),
        message: e.to_string(),
    };
    let mut w = csv::Writer::from_path(&path).map_err(wrap)?;
    w.write_record(["combo", "significant", "accuracy_percent"]).map_err(wrap)?;
    for o in outputs {
        let pick = |t: &Tensor, rows: &[usize]| t.select_rows(rows);
        let (acc, n) = if a.len() < 2 || b.len() < 2 {
            (None, 0)
        } else {
            let sig = significant_features(&pick(&o.truth, &a), &pick(&o.truth, &b), cfg.generate.alpha)?;
            match direction_accuracy(
                &pick(&o.predicted, &a),
                &pick(&o.predicted, &b),
                &pick(&o.truth, &a),
                &pick(&o.truth, &b),
                &sig,
            ) {
                Ok(v) => (Some(v), sig.len()),
                Err(Error::Undefined(_)) => (None, 0),
                Err(e) => return Err(e),
            }
        };
        log.record(json!({"event": "direction", "combo": o.report.combo, "significant": n, "accuracy_percent": acc}))?;
        w.write_record([
            o.report.combo.clone(),
            n.to_string(),
            acc.map(|v| v.to_string()).unwrap_or_else(|| "NA".into()),
        ])
        .map_err(wrap)?;
    }
    w.flush().map_err(|e| Error::io(&path, e))
}
