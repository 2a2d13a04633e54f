//! Omics token masking: a global visibility budget split across modalities
//! by Dirichlet weights, and explicit plans for conditional generation.
//!
//! Histopathology tokens never appear in a plan; they are always visible.

use rand::seq::index;
use rand::Rng;
use rand_distr::{Distribution, Gamma};

use crate::data::Modality;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct MaskPlan {
    /// Visibility per omics token, for each modality the patient carries,
    /// in `Modality` order.
    pub visibility: Vec<(Modality, Vec<bool>)>,
    pub ratio: f64,
    /// Visibility weights over the modalities of `visibility`.
    pub weights: Vec<f64>,
}

impl MaskPlan {
    pub fn modalities(&self) -> impl Iterator<Item = Modality> + '_ {
        self.visibility.iter().map(|(m, _)| *m)
    }

    pub fn visibility(&self, modality: Modality) -> Option<&[bool]> {
        self.visibility
            .iter()
            .find(|(m, _)| *m == modality)
            .map(|(_, v)| v.as_slice())
    }

    /// Visible group indices of `modality`, ascending.
    pub fn visible_groups(&self, modality: Modality) -> Vec<usize> {
        self.visibility(modality)
            .map(|v| (0..v.len()).filter(|&k| v[k]).collect())
            .unwrap_or_default()
    }

    /// Masked group indices of `modality`, ascending.
    pub fn masked_groups(&self, modality: Modality) -> Vec<usize> {
        self.visibility(modality)
            .map(|v| (0..v.len()).filter(|&k| !v[k]).collect())
            .unwrap_or_default()
    }

    pub fn num_visible(&self) -> usize {
        self.visibility
            .iter()
            .map(|(_, v)| v.iter().filter(|&&b| b).count())
            .sum()
    }

    pub fn num_tokens(&self) -> usize {
        self.visibility.iter().map(|(_, v)| v.len()).sum()
    }

    /// One-line replay record, e.g. `rna=0110 dnam=1000 cnv=`.
    pub fn to_bitmask_line(&self) -> String {
        self.visibility
            .iter()
            .map(|(m, v)| {
                let bits: String = v.iter().map(|&b| if b { '1' } else { '0' }).collect();
                format!("{m}={bits}")
            })
            .collect::<Vec<_>>()
            .join(" ")
    }

    pub fn from_bitmask_line(line: &str) -> Result<Self> {
        let mut visibility = Vec::new();
        for field in line.split_whitespace() {
            let (m, bits) = field
                .split_once('=')
                .ok_or_else(|| Error::validation(format!("bad mask field `{field}`")))?;
            let m: Modality = m.parse()?;
            let v = bits
                .chars()
                .map(|c| match c {
                    '1' => Ok(true),
                    '0' => Ok(false),
                    _ => Err(Error::validation(format!("bad mask bit `{c}`"))),
                })
                .collect::<Result<Vec<_>>>()?;
            visibility.push((m, v));
        }
        visibility.sort_by_key(|(m, _)| *m);
        let total: usize = visibility.iter().map(|(_, v)| v.len()).sum();
        let vis: Vec<usize> = visibility
            .iter()
            .map(|(_, v)| v.iter().filter(|&&b| b).count())
            .collect();
        let seen: usize = vis.iter().sum();
        Ok(Self {
            ratio: if total == 0 { 0.0 } else { 1.0 - seen as f64 / total as f64 },
            weights: share(&vis),
            visibility,
        })
    }
}

fn share(counts: &[usize]) -> Vec<f64> {
    let total: usize = counts.iter().sum();
    if total == 0 {
        return vec![1.0 / counts.len().max(1) as f64; counts.len()];
    }
    counts.iter().map(|&c| c as f64 / total as f64).collect()
}

/// `⌊(1 − r)·L⌋`, robust to `1 − r` landing one ulp under an integer.
pub fn visible_budget(total_tokens: usize, ratio: f64) -> usize {
    (((1.0 - ratio) * total_tokens as f64) + 1e-9).floor() as usize
}

/// Largest-remainder rounding of `total · weights[i]`, ties to the lower
/// index.
fn largest_remainder(total: usize, weights: &[f64]) -> Vec<usize> {
    let sum: f64 = weights.iter().sum();
    let quota: Vec<f64> = weights.iter().map(|w| total as f64 * w / sum).collect();
    let mut out: Vec<usize> = quota.iter().map(|q| q.floor() as usize).collect();
    let assigned: usize = out.iter().sum();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        (quota[b] - quota[b].floor())
            .total_cmp(&(quota[a] - quota[a].floor()))
            .then(a.cmp(&b))
    });
    for &i in order.iter().take(total.saturating_sub(assigned)) {
        out[i] += 1;
    }
    out
}

/// Per-modality visible counts for `visible` tokens split by `weights`,
/// clamped to `capacity` with the overflow shared out in proportion to the
/// capacity left in the other modalities.
pub fn budgets(capacity: &[usize], visible: usize, weights: &[f64]) -> Result<Vec<usize>> {
    if capacity.len() != weights.len() {
        return Err(Error::Shape(format!(
            "{} capacities for {} weights",
            capacity.len(),
            weights.len()
        )));
    }
    if visible > capacity.iter().sum() {
        return Err(Error::validation(format!("{visible} visible tokens exceed capacity")));
    }
    if weights.iter().any(|w| !(*w >= 0.0)) || weights.iter().sum::<f64>() <= 0.0 {
        return Err(Error::validation("weights must be nonnegative with a positive sum"));
    }
    let mut n = largest_remainder(visible, weights);
    loop {
        let mut overflow = 0;
        for (b, &c) in n.iter_mut().zip(capacity) {
            if *b > c {
                overflow += *b - c;
                *b = c;
            }
        }
        if overflow == 0 {
            return Ok(n);
        }
        let room: Vec<f64> = n.iter().zip(capacity).map(|(&b, &c)| (c - b) as f64).collect();
        for (b, extra) in n.iter_mut().zip(largest_remainder(overflow, &room)) {
            *b += extra;
        }
    }
}

fn dirichlet<R: Rng + ?Sized>(k: usize, alpha: f64, rng: &mut R) -> Vec<f64> {
    let gamma = Gamma::new(alpha, 1.0).expect("alpha validated");
    let draws: Vec<f64> = (0..k).map(|_| gamma.sample(rng)).collect();
    let sum: f64 = draws.iter().sum();
    if sum > 0.0 {
        return draws.iter().map(|g| g / sum).collect();
    }
    // every draw underflowed (tiny alpha): the limit is a random vertex
    let mut w = vec![0.0; k];
    w[rng.random_range(0..k)] = 1.0;
    w
}

fn validate_ratio(ratio: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&ratio) {
        return Err(Error::config("mask_ratio", format!("{ratio} outside [0, 1]")));
    }
    Ok(())
}

/// Random plan: `⌊(1 − r)·L⌋` visible tokens split by `w ~ Dir(α·1)`, drawn
/// uniformly without replacement within each modality.
pub fn sample_mask_plan<R: Rng + ?Sized>(
    token_counts: &[(Modality, usize)],
    ratio: f64,
    alpha: f64,
    rng: &mut R,
) -> Result<MaskPlan> {
    validate_ratio(ratio)?;
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::config("alpha", format!("{alpha} must be positive")));
    }
    let weights = dirichlet(token_counts.len(), alpha, rng);
    plan_with_weights(token_counts, ratio, weights, rng)
}

/// As [`sample_mask_plan`] with fixed modality weights.
pub fn plan_with_weights<R: Rng + ?Sized>(
    token_counts: &[(Modality, usize)],
    ratio: f64,
    weights: Vec<f64>,
    rng: &mut R,
) -> Result<MaskPlan> {
    validate_ratio(ratio)?;
    let mut order: Vec<usize> = (0..token_counts.len()).collect();
    order.sort_by_key(|&i| token_counts[i].0);
    if order.windows(2).any(|w| token_counts[w[0]].0 == token_counts[w[1]].0) {
        return Err(Error::validation("modality listed twice in token counts"));
    }
    let capacity: Vec<usize> = token_counts.iter().map(|(_, c)| *c).collect();
    let total: usize = capacity.iter().sum();
    let visible = visible_budget(total, ratio);
    let n = if token_counts.is_empty() {
        Vec::new()
    } else {
        budgets(&capacity, visible, &weights)?
    };
    let visibility = order
        .iter()
        .map(|&i| {
            let (m, count) = token_counts[i];
            let mut v = vec![false; count];
            for j in index::sample(rng, count, n[i]) {
                v[j] = true;
            }
            (m, v)
        })
        .collect();
    Ok(MaskPlan {
        visibility,
        ratio,
        weights: order.iter().map(|&i| weights[i]).collect(),
    })
}

/// Deterministic plan: every token of `visible` modalities shown, every
/// other omics token masked.
pub fn explicit_mask_plan(
    visible: &[Modality],
    targets: &[Modality],
    token_counts: &[(Modality, usize)],
) -> Result<MaskPlan> {
    if let Some(m) = visible.iter().find(|m| targets.contains(m)) {
        return Err(Error::validation(format!("{m} is both visible and a target")));
    }
    let mut counts = token_counts.to_vec();
    counts.sort_by_key(|(m, _)| *m);
    let visibility: Vec<(Modality, Vec<bool>)> = counts
        .iter()
        .map(|&(m, c)| (m, vec![visible.contains(&m); c]))
        .collect();
    let shown: Vec<usize> = visibility
        .iter()
        .map(|(_, v)| v.iter().filter(|&&b| b).count())
        .collect();
    let total: usize = counts.iter().map(|(_, c)| c).sum();
    let seen: usize = shown.iter().sum();
    Ok(MaskPlan {
        ratio: if total == 0 { 0.0 } else { 1.0 - seen as f64 / total as f64 },
        weights: share(&shown),
        visibility,
    })
}
