//! Browser demo: masking plans, survival curves from hazard logits, and the
//! learning-rate schedule, exported through wasm-bindgen.

use morpheus::data::{Modality, SurvivalLabel};
use morpheus::downstream::{hazard_nll, risk_score, DiscretizationRule};
use morpheus::masking::sample_mask_plan;
use morpheus::optim::LrSchedule;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use wasm_bindgen::prelude::*;

#[derive(Debug, Serialize)]
pub struct PlanView {
    pub total_tokens: usize,
    pub visible_tokens: usize,
    /// Per modality: name, Dirichlet weight, visibility bits.
    pub modalities: Vec<(String, f64, Vec<bool>)>,
}

pub fn plan_view(counts: [usize; 3], ratio: f64, alpha: f64, seed: u64) -> Result<PlanView, String> {
    let token_counts: Vec<(Modality, usize)> = Modality::ALL.into_iter().zip(counts).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let plan = sample_mask_plan(&token_counts, ratio, alpha, &mut rng).map_err(|e| e.to_string())?;
    Ok(PlanView {
        total_tokens: plan.num_tokens(),
        visible_tokens: plan.num_visible(),
        modalities: plan
            .visibility
            .iter()
            .zip(&plan.weights)
            .map(|((m, v), w)| (m.name().to_string(), *w, v.clone()))
            .collect(),
    })
}

#[derive(Debug, Serialize)]
pub struct SurvivalView {
    pub hazards: Vec<f64>,
    /// Probability of surviving past each interval.
    pub survival: Vec<f64>,
    pub risk: f64,
    /// Loss for an event in each interval, then for censoring in each.
    pub event_loss: Vec<f64>,
    pub censored_loss: Vec<f64>,
}

pub fn survival_view(logits: &[f64]) -> Result<SurvivalView, String> {
    if logits.len() < 2 {
        return Err("need at least two interval logits".into());
    }
    let hazards: Vec<f64> = logits.iter().map(|a| 1.0 / (1.0 + (-a).exp())).collect();
    let survival = hazards
        .iter()
        .scan(1.0, |s, h| {
            *s *= 1.0 - h;
            Some(*s)
        })
        .collect();
    let q = logits.len();
    let rule = DiscretizationRule::new((1..=q).map(|i| i as f64).collect()).map_err(|e| e.to_string())?;
    let loss = |event: bool| -> Result<Vec<f64>, String> {
        (0..q)
            .map(|i| {
                let label = SurvivalLabel::new(i as f64 + 0.5, event).map_err(|e| e.to_string())?;
                hazard_nll(&[logits.to_vec()], &[label], &rule).map_err(|e| e.to_string())
            })
            .collect()
    };
    Ok(SurvivalView {
        risk: risk_score(logits),
        event_loss: loss(true)?,
        censored_loss: loss(false)?,
        hazards,
        survival,
    })
}

pub fn schedule_points(
    warmup_epochs: f64,
    lr_start: f64,
    lr_peak: f64,
    lr_final: f64,
    epochs: f64,
    points: usize,
) -> Result<Vec<f64>, String> {
    let s = LrSchedule {
        warmup_epochs,
        lr_start,
        lr_peak,
        lr_final,
        total_epochs: epochs,
    };
    s.validate().map_err(|e| e.to_string())?;
    let n = points.max(2);
    Ok((0..n).map(|i| s.lr(epochs * i as f64 / (n - 1) as f64)).collect())
}

fn to_js<T: Serialize>(v: Result<T, String>) -> Result<String, JsError> {
    let v = v.map_err(|e| JsError::new(&e))?;
    serde_json::to_string(&v).map_err(|e| JsError::new(&e.to_string()))
}

/// JSON [`PlanView`] for the given omics token counts.
#[wasm_bindgen(js_name = maskPlan)]
pub fn mask_plan(rna: usize, dnam: usize, cnv: usize, ratio: f64, alpha: f64, seed: u64) -> Result<String, JsError> {
    to_js(plan_view([rna, dnam, cnv], ratio, alpha, seed))
}

/// JSON [`SurvivalView`] for one patient's interval logits.
#[wasm_bindgen(js_name = survivalCurve)]
pub fn survival_curve(logits: Vec<f64>) -> Result<String, JsError> {
    to_js(survival_view(&logits))
}

#[wasm_bindgen(js_name = lrSchedule)]
pub fn lr_schedule(
    warmup_epochs: f64,
    lr_start: f64,
    lr_peak: f64,
    lr_final: f64,
    epochs: f64,
    points: usize,
) -> Result<Vec<f64>, JsError> {
    schedule_points(warmup_epochs, lr_start, lr_peak, lr_final, epochs, points).map_err(|e| JsError::new(&e))
}
