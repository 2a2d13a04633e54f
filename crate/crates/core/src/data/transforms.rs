//! Per-modality preprocessing.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// `log2(x + 1)` expression normalization.
pub fn transform_rna(raw: &[f64]) -> Result<Vec<f64>> {
    if let Some(i) = raw.iter().position(|&v| !(v >= 0.0)) {
        return Err(Error::Validation {
            patient: None,
            field: Some("rna".into()),
            message: format!("negative or non-finite expression {} at index {i}", raw[i]),
        });
    }
    Ok(raw.iter().map(|&v| (v + 1.0).log2()).collect())
}

/// Copy-number transform `log10(x/2 + 1)`. Entries flagged in `missing` are
/// imputed to the diploid value 2 first; their stored value is ignored.
pub fn transform_cnv(raw: &[f64], missing: &[bool]) -> Result<Vec<f64>> {
    if !missing.is_empty() && missing.len() != raw.len() {
        return Err(Error::Shape(format!(
            "cnv missing mask has {} entries for {} values",
            missing.len(),
            raw.len()
        )));
    }
    raw.iter()
        .enumerate()
        .map(|(i, &v)| {
            let v = if missing.get(i).copied().unwrap_or(false) {
                2.0
            } else {
                v
            };
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Validation {
                    patient: None,
                    field: Some("cnv".into()),
                    message: format!("invalid copy number {v} at index {i}"),
                });
            }
            Ok((v / 2.0 + 1.0).log10())
        })
        .collect()
}

/// Methylation β-values pass through unchanged when every value is in
/// `[0, 1]` and the length matches the manifest.
pub fn validate_dnam(raw: &[f64], expected_len: usize) -> Result<Vec<f64>> {
    if raw.len() != expected_len || raw.is_empty() {
        return Err(Error::Validation {
            patient: None,
            field: Some("dnam".into()),
            message: format!("length {} does not match manifest length {expected_len}", raw.len()),
        });
    }
    if let Some(i) = raw.iter().position(|v| !(0.0..=1.0).contains(v)) {
        return Err(Error::Validation {
            patient: None,
            field: Some("dnam".into()),
            message: format!("beta value {} at index {i} outside [0, 1]", raw[i]),
        });
    }
    Ok(raw.to_vec())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum VarianceSelection {
    /// The `n` highest-variance features; ties go to the lower index.
    TopK(usize),
    /// Every feature with sample standard deviation strictly above the value.
    StdAbove(f64),
}

/// Indices (ascending) of the retained features of a `cohort × features`
/// matrix. Variances use the unbiased (n − 1) estimator.
pub fn select_by_variance(matrix: &Tensor, mode: VarianceSelection) -> Result<Vec<usize>> {
    let n = matrix.rows();
    let means = matrix.column_means();
    let mut var = vec![0.0; matrix.cols()];
    for r in 0..n {
        for ((acc, v), m) in var.iter_mut().zip(matrix.row(r)).zip(&means) {
            *acc += (v - m).powi(2);
        }
    }
    let denom = (n.max(2) - 1) as f64;
    var.iter_mut().for_each(|v| *v /= denom);

    match mode {
        VarianceSelection::TopK(k) => {
            if k == 0 {
                return Err(Error::config("keep", "must be positive"));
            }
            if k > matrix.cols() {
                return Err(Error::config(
                    "keep",
                    format!("{k} exceeds the {} available features", matrix.cols()),
                ));
            }
            let mut order: Vec<usize> = (0..matrix.cols()).collect();
            order.sort_by(|&a, &b| var[b].total_cmp(&var[a]).then(a.cmp(&b)));
            let mut keep = order[..k].to_vec();
            keep.sort_unstable();
            Ok(keep)
        }
        VarianceSelection::StdAbove(t) => Ok((0..matrix.cols())
            .filter(|&j| var[j].sqrt() > t)
            .collect()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn rna_reference_values() {
        assert_eq!(transform_rna(&[0.0, 3.0, 1.0]).unwrap(), vec![0.0, 2.0, 1.0]);
        assert!(transform_rna(&[1.0, -0.5]).is_err());
    }

    #[test]
    fn cnv_reference_values() {
        let out = transform_cnv(&[123.0, 2.0, 0.0], &[true, false, false]).unwrap();
        assert_eq!(out[0], 2f64.log10());
        assert_eq!(out[1], 2f64.log10());
        assert_eq!(out[2], 0.0);
        assert!((out[1] - 2f64.ln() / 10f64.ln()).abs() < 1e-15);
        assert!(transform_cnv(&[-1.0], &[]).is_err());
        // a missing entry may carry any placeholder, even a negative one
        assert!(transform_cnv(&[-1.0], &[true]).is_ok());
    }

    #[test]
    fn dnam_validation() {
        assert_eq!(validate_dnam(&[0.0, 0.5, 1.0], 3).unwrap(), vec![0.0, 0.5, 1.0]);
        let err = validate_dnam(&[1.2], 1).unwrap_err().to_string();
        assert!(err.contains("index 0"), "{err}");
        assert!(validate_dnam(&[], 4).is_err());
    }

    fn matrix_with_stds(stds: &[f64]) -> Tensor {
        // two rows ±s/√2 give sample std s
        let h = std::f64::consts::FRAC_1_SQRT_2;
        Tensor::from_fn(2, stds.len(), |r, c| if r == 0 { stds[c] * h } else { -stds[c] * h })
    }

    #[test]
    fn top_k_selection() {
        let m = matrix_with_stds(&[0.0, 1.0, 0.5]);
        assert_eq!(select_by_variance(&m, VarianceSelection::TopK(2)).unwrap(), vec![1, 2]);
        let constant = Tensor::filled(4, 3, 1.0);
        assert_eq!(select_by_variance(&constant, VarianceSelection::TopK(1)).unwrap(), vec![0]);
        assert!(select_by_variance(&m, VarianceSelection::TopK(0)).is_err());
        assert!(select_by_variance(&m, VarianceSelection::TopK(4)).is_err());
    }

    #[test]
    fn threshold_selection() {
        let m = matrix_with_stds(&[0.1, 0.2]);
        assert_eq!(select_by_variance(&m, VarianceSelection::StdAbove(0.15)).unwrap(), vec![1]);
    }

    proptest! {
        #[test]
        fn transforms_are_monotone(a in 0.0f64..1e6, b in 0.0f64..1e6) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            let r = transform_rna(&[lo, hi]).unwrap();
            let c = transform_cnv(&[lo, hi], &[]).unwrap();
            prop_assert!(r[0] <= r[1]);
            prop_assert!(c[0] <= c[1]);
        }

        #[test]
        fn top_k_is_permutation_equivariant(
            values in proptest::collection::vec(-5.0f64..5.0, 4 * 6),
            k in 1usize..6,
            seed in any::<u64>(),
        ) {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            // distinct variances so the tie rule does not interfere
            let m = Tensor::from_fn(4, 6, |r, c| values[r * 6 + c] * (1.0 + c as f64 * 1e-3));
            let mut perm: Vec<usize> = (0..6).collect();
            perm.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            let permuted = Tensor::from_fn(4, 6, |r, c| m.get(r, perm[c]));
            let a = select_by_variance(&m, VarianceSelection::TopK(k)).unwrap();
            let mut b: Vec<usize> = select_by_variance(&permuted, VarianceSelection::TopK(k))
                .unwrap()
                .into_iter()
                .map(|j| perm[j])
                .collect();
            b.sort_unstable();
            prop_assert_eq!(a, b);
        }
    }
}
