//! AdamW with decoupled weight decay, and the warmup + cosine learning-rate
//! schedule.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::{Grads, ParamStore};
use crate::tensor::Tensor;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub first_moment: Vec<Tensor>,
    pub second_moment: Vec<Tensor>,
    pub step: u64,
    pub weight_decay: f64,
    pub lr: f64,
}

impl OptimizerState {
    pub fn new(store: &ParamStore, weight_decay: f64) -> Self {
        let zeros: Vec<Tensor> = store
            .iter()
            .map(|(_, p)| Tensor::zeros(p.value.rows(), p.value.cols()))
            .collect();
        Self {
            first_moment: zeros.clone(),
            second_moment: zeros,
            step: 0,
            weight_decay,
            lr: 0.0,
        }
    }
}

/// One AdamW update of every parameter in `store`.
pub fn adamw_step(
    state: &mut OptimizerState,
    store: &mut ParamStore,
    grads: &Grads,
    lr: f64,
) -> Result<()> {
    if state.first_moment.len() != store.len() {
        return Err(Error::Shape(format!(
            "optimizer tracks {} parameters, store has {}",
            state.first_moment.len(),
            store.len()
        )));
    }
    // Validate before mutating anything.
    for (id, p) in store.iter() {
        let g = grads
            .get(id)
            .ok_or_else(|| Error::validation(format!("missing gradient for `{}`", p.name)))?;
        if g.shape() != p.value.shape() {
            return Err(Error::Shape(format!(
                "gradient for `{}` has shape {:?}, parameter {:?}",
                p.name,
                g.shape(),
                p.value.shape()
            )));
        }
    }
    state.step += 1;
    state.lr = lr;
    let t = state.step as i32;
    let bc1 = 1.0 - BETA1.powi(t);
    let bc2 = 1.0 - BETA2.powi(t);
    let decay = lr * state.weight_decay;
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        let g = grads.get(id).expect("validated");
        let m = &mut state.first_moment[id.index()];
        let v = &mut state.second_moment[id.index()];
        let w = store.value_mut(id);
        for (((w, &g), m), v) in w
            .data_mut()
            .iter_mut()
            .zip(g.data())
            .zip(m.data_mut())
            .zip(v.data_mut())
        {
            *m = BETA1 * *m + (1.0 - BETA1) * g;
            *v = BETA2 * *v + (1.0 - BETA2) * g * g;
            let update = (*m / bc1) / ((*v / bc2).sqrt() + EPSILON);
            *w -= decay * *w + lr * update;
        }
    }
    Ok(())
}

/// Linear warmup from `lr_start` to `lr_peak`, then cosine decay to
/// `lr_final` at `total_epochs`. Evaluated at fractional epochs.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub warmup_epochs: f64,
    pub lr_start: f64,
    pub lr_peak: f64,
    pub lr_final: f64,
    pub total_epochs: f64,
}

impl LrSchedule {
    pub fn constant(lr: f64, total_epochs: f64) -> Self {
        Self {
            warmup_epochs: 0.0,
            lr_start: lr,
            lr_peak: lr,
            lr_final: lr,
            total_epochs,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [self.lr_start, self.lr_peak, self.lr_final]
            .iter()
            .all(|v| v.is_finite() && *v > 0.0);
        if !positive {
            return Err(Error::config("lr", "learning rates must be positive"));
        }
        if !(self.warmup_epochs >= 0.0 && self.warmup_epochs <= self.total_epochs) {
            return Err(Error::config(
                "warmup_epochs",
                format!(
                    "warmup {} must lie in [0, total epochs {}]",
                    self.warmup_epochs, self.total_epochs
                ),
            ));
        }
        Ok(())
    }

    pub fn lr(&self, epoch: f64) -> f64 {
        let e = epoch.max(0.0);
        if e < self.warmup_epochs {
            return self.lr_start + (self.lr_peak - self.lr_start) * e / self.warmup_epochs;
        }
        let span = self.total_epochs - self.warmup_epochs;
        if span <= 0.0 || e >= self.total_epochs {
            return if span <= 0.0 && e < self.total_epochs {
                self.lr_peak
            } else {
                self.lr_final
            };
        }
        let progress = (e - self.warmup_epochs) / span;
        self.lr_final
            + (self.lr_peak - self.lr_final) * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::ParamStore;

    fn one_param(w: f64) -> ParamStore {
        let mut s = ParamStore::new();
        s.add("w", Tensor::filled(1, 1, w)).unwrap();
        s
    }

    fn grad_of(s: &ParamStore, g: f64) -> Grads {
        let mut grads = Grads::new(s.len());
        grads.accumulate(s.ids().next().unwrap(), &Tensor::filled(1, 1, g));
        grads
    }

    #[test]
    fn zero_gradient_no_decay_is_identity() {
        let mut s = one_param(0.7);
        let mut st = OptimizerState::new(&s, 0.0);
        let g = grad_of(&s, 0.0);
        adamw_step(&mut st, &mut s, &g, 1e-2).unwrap();
        assert_eq!(s.value(s.ids().next().unwrap()).data()[0], 0.7);
        assert_eq!(st.step, 1);
    }

    #[test]
    fn zero_gradient_applies_decoupled_decay() {
        let mut s = one_param(2.0);
        let mut st = OptimizerState::new(&s, 0.1);
        let g = grad_of(&s, 0.0);
        adamw_step(&mut st, &mut s, &g, 0.5).unwrap();
        let w = s.value(s.ids().next().unwrap()).data()[0];
        assert!((w - 2.0 * (1.0 - 0.5 * 0.1)).abs() < 1e-15);
    }

    #[test]
    fn constant_gradient_drifts_opposite() {
        let mut s = one_param(0.0);
        let mut st = OptimizerState::new(&s, 0.0);
        let mut prev = 0.0;
        for _ in 0..100 {
            let g = grad_of(&s, 3.0);
            adamw_step(&mut st, &mut s, &g, 1e-3).unwrap();
            let w = s.value(s.ids().next().unwrap()).data()[0];
            assert!(w < prev);
            prev = w;
        }
        assert_eq!(st.step, 100);
    }

    #[test]
    fn missing_gradient_is_an_error() {
        let mut s = one_param(1.0);
        let mut st = OptimizerState::new(&s, 0.0);
        let g = Grads::new(1);
        assert!(adamw_step(&mut st, &mut s, &g, 1e-3).is_err());
        assert_eq!(st.step, 0);
    }

    #[test]
    fn schedule_anchors() {
        let s = LrSchedule {
            warmup_epochs: 10.0,
            lr_start: 5e-5,
            lr_peak: 5e-4,
            lr_final: 1.5e-4,
            total_epochs: 200.0,
        };
        s.validate().unwrap();
        assert!((s.lr(0.0) - 5e-5).abs() < 1e-12);
        assert!((s.lr(10.0) - 5e-4).abs() < 1e-12);
        assert!((s.lr(200.0) - 1.5e-4).abs() < 1e-12);
        assert!((s.lr(10.0 - 1e-9) - s.lr(10.0)).abs() < 1e-12);
        for i in 0..=2000 {
            let lr = s.lr(i as f64 * 0.1);
            assert!(lr > 0.0);
        }
        // monotone decay after warmup
        assert!(s.lr(50.0) > s.lr(150.0));
    }

    #[test]
    fn schedule_rejects_bad_values() {
        let mut s = LrSchedule::constant(1e-3, 5.0);
        s.validate().unwrap();
        s.lr_peak = -1.0;
        assert!(s.validate().is_err());
    }
}
