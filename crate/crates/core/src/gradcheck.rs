//! Central finite-difference verification of reverse-mode gradients.

use crate::autograd::{Graph, Var};
use crate::error::{Error, Result};
use crate::params::ParamStore;

/// Denominator floor for the relative error, so coordinates whose true
/// gradient is ~0 are judged on absolute error instead.
pub const REL_ERROR_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Parameter name and flat coordinate of the worst error.
    pub worst: Option<(String, usize)>,
    pub checked: usize,
    /// Coordinates whose `±ε` probes straddle a kink (SELU at 0, |·| at 0).
    pub skipped: usize,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERROR_FLOOR)
}

/// Compare reverse-mode gradients of `loss_fn` against central differences
/// over every coordinate of every parameter in `store`.
///
/// `loss_fn` must be deterministic: it is called on evaluation graphs
/// (dropout off) once per probe.
pub fn grad_check<F>(store: &ParamStore, epsilon: f64, loss_fn: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph) -> Result<Var>,
{
    let mut g = Graph::new(store);
    let loss = loss_fn(&mut g)?;
    let base = g.scalar(loss);
    if !base.is_finite() {
        return Err(Error::NonFinite(format!("loss {base} at the base point")));
    }
    let mut analytic = g.backward(loss)?;
    analytic.densify(store);
    drop(g);

    let probe = |s: &ParamStore| -> Result<(f64, u64)> {
        let mut g = Graph::new(s);
        let l = loss_fn(&mut g)?;
        let v = g.scalar(l);
        if !v.is_finite() {
            return Err(Error::NonFinite(format!("loss {v} during probing")));
        }
        Ok((v, g.kink_signature()))
    };

    let mut work = store.clone();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        checked: 0,
        skipped: 0,
    };
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        let n = store.value(id).len();
        for i in 0..n {
            let orig = store.value(id).data()[i];
            work.value_mut(id).data_mut()[i] = orig + epsilon;
            let (plus, sig_plus) = probe(&work)?;
            work.value_mut(id).data_mut()[i] = orig - epsilon;
            let (minus, sig_minus) = probe(&work)?;
            work.value_mut(id).data_mut()[i] = orig;
            if sig_plus != sig_minus {
                report.skipped += 1;
                continue;
            }
            let numeric = (plus - minus) / (2.0 * epsilon);
            let a = analytic.get(id).expect("densified").data()[i];
            let err = relative_error(a, numeric);
            report.checked += 1;
            if err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst = Some((store.get(id).name.clone(), i));
            }
        }
    }
    Ok(report)
}
