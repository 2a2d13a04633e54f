use std::f64::consts::LN_2;

use proptest::prelude::{prop_assert, prop_assert_eq, proptest, ProptestConfig};
use rand::{Rng, SeedableRng};

use super::*;
use crate::gradcheck::grad_check;
use crate::model::ModelConfig;
use crate::synth::{generate_cohort, OmicsSpec, SynthConfig};
use crate::tensor::Tensor;

fn label(time: f64, event: bool) -> SurvivalLabel {
    SurvivalLabel::new(time, event).unwrap()
}

fn rule4() -> DiscretizationRule {
    DiscretizationRule::new(vec![1.0, 2.0, 3.0, 4.0]).unwrap()
}

#[test]
fn hazard_zero_logits_event_and_censored() {
    let z = vec![vec![0.0; 4]];
    // time 1.5 lies in the second interval
    let event = hazard_nll(&z, &[label(1.5, true)], &rule4()).unwrap();
    let censored = hazard_nll(&z, &[label(1.5, false)], &rule4()).unwrap();
    assert!((event - 2.0 * LN_2).abs() < 1e-12);
    assert!((censored - 2.0 * LN_2).abs() < 1e-12);
}

#[test]
fn hazard_perfect_prediction_limit() {
    let logits = vec![vec![-40.0, 40.0, 0.0, 0.0]];
    let l = hazard_nll(&logits, &[label(1.5, true)], &rule4()).unwrap();
    assert!(l < 1e-15);
}

#[test]
fn hazard_order_invariant_and_monotone() {
    let logits = vec![vec![0.1, -0.3, 0.5, 0.2], vec![-1.0, 0.4, 0.0, 2.0], vec![0.3, 0.3, -0.2, 0.9]];
    let labels = [label(0.5, true), label(3.2, false), label(2.5, true)];
    let a = hazard_nll(&logits, &labels, &rule4()).unwrap();
    let rev_l: Vec<Vec<f64>> = logits.iter().rev().cloned().collect();
    let rev_y: Vec<SurvivalLabel> = labels.iter().rev().copied().collect();
    let b = hazard_nll(&rev_l, &rev_y, &rule4()).unwrap();
    assert!((a - b).abs() < 1e-12);

    let mut prev = f64::INFINITY;
    for a in [-3.0, -1.0, 0.0, 1.0, 3.0] {
        let l = hazard_nll(&[vec![0.0, a, 0.0, 0.0]], &[label(1.5, true)], &rule4()).unwrap();
        assert!(l < prev);
        prev = l;
    }
}

#[test]
fn hazard_clamps_late_times() {
    let r = rule4();
    assert_eq!(r.interval(9.0), (3, true));
    assert_eq!(r.interval(4.0), (3, false));
    assert_eq!(r.interval(0.2), (0, false));
    let z = vec![vec![0.0; 4]];
    let l = hazard_nll(&z, &[label(9.0, true)], &r).unwrap();
    assert!((l - 4.0 * LN_2).abs() < 1e-12);
}

#[test]
fn discretization_covers_training_times() {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
    let times: Vec<f64> = (0..97).map(|_| rng.random_range(0.01..10.0)).collect();
    let r = DiscretizationRule::from_times(&times, 4).unwrap();
    let mut counts = [0usize; 4];
    for &t in &times {
        let (q, clamped) = r.interval(t);
        assert!(!clamped);
        counts[q] += 1;
    }
    assert_eq!(counts.iter().sum::<usize>(), 97);
    assert!(counts.iter().all(|&c| (23..=26).contains(&c)), "{counts:?}");
    assert!(DiscretizationRule::from_times(&[1.0, 1.0, 1.0], 4).is_err());
    assert!(DiscretizationRule::new(vec![1.0]).is_err());
}

#[test]
fn quantile_type7() {
    // numpy.quantile([1, 2, 4, 8], [0.25, 0.5, 1.0])
    let s = [1.0, 2.0, 4.0, 8.0];
    assert!((quantile(&s, 0.25) - 1.75).abs() < 1e-12);
    assert!((quantile(&s, 0.5) - 3.0).abs() < 1e-12);
    assert_eq!(quantile(&s, 1.0), 8.0);
}

#[test]
fn head_gradcheck() {
    let mut store = ParamStore::new();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
    let head = SurvivalHead::new(&mut store, 6, rule4(), &mut rng).unwrap();
    let x = Tensor::from_fn(3, 6, |_, _| rng.random_range(-1.0..1.0));
    let targets = [
        HazardTarget { interval: 1, event: true },
        HazardTarget { interval: 3, event: false },
        HazardTarget { interval: 0, event: true },
    ];
    let rep = grad_check(&store, 1e-5, |g| {
        let xv = g.constant(x.clone());
        let logits = head.linear.forward(g, xv)?;
        g.hazard_nll(logits, &targets)
    })
    .unwrap();
    assert!(rep.max_rel_error < 1e-4, "{rep:?}");
}

#[test]
fn cindex_examples() {
    let ys = [label(1.0, true), label(2.0, true), label(3.0, true)];
    assert_eq!(concordance_index(&[0.9, 0.5, 0.1], &ys).unwrap(), 1.0);
    assert_eq!(concordance_index(&[0.3, 0.3, 0.3], &ys).unwrap(), 0.5);
    let err = concordance_index(&[0.1, 0.2], &[label(1.0, false), label(2.0, true)]);
    assert!(matches!(err, Err(Error::Undefined(_))));
}

#[test]
fn risk_score_examples() {
    assert_eq!(risk_score(&[0.0; 4]), 2.0);
    assert!(risk_score(&[-800.0; 4]) < 1e-300);
    assert!(risk_score(&[0.0, 0.1, 0.0, 0.0]) > risk_score(&[0.0; 4]));
}

#[test]
fn auc_examples() {
    let y = [false, false, true, true];
    assert_eq!(auc(&[0.1, 0.2, 0.8, 0.9], &y).unwrap(), 1.0);
    assert_eq!(auc(&[0.5; 4], &y).unwrap(), 0.5);
    assert_eq!(auc(&[0.1, 0.2, 0.8, 0.9], &[true, true, false, false]).unwrap(), 0.0);
    assert!(auc(&[0.1, 0.2], &[true, true]).is_err());
}

#[test]
fn mean_std_is_sample_std() {
    let (m, s) = mean_std(&[1.0, 2.0, 3.0, 4.0]);
    assert_eq!(m, 2.5);
    assert!((s - 1.2909944487358056).abs() < 1e-12);
    assert_eq!(mean_std(&[7.0]), (7.0, 0.0));
}

#[test]
fn folds_partition_patients() {
    let folds = fold_assignment(23, 5, &SeedTree::new(1));
    let mut all: Vec<usize> = folds.iter().flatten().copied().collect();
    all.sort_unstable();
    assert_eq!(all, (0..23).collect::<Vec<_>>());
    assert!(folds.iter().all(|f| f.len() == 4 || f.len() == 5));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn auc_labels_complement_exactly(
        scores in proptest::collection::vec(0u8..6, 2..40),
        flips in proptest::collection::vec(proptest::bool::ANY, 2..40),
    ) {
        let n = scores.len().min(flips.len());
        let s: Vec<f64> = scores[..n].iter().map(|&v| v as f64 / 7.0).collect();
        let y = &flips[..n];
        let inv: Vec<bool> = y.iter().map(|b| !b).collect();
        if let (Ok(a), Ok(b)) = (auc(&s, y), auc(&s, &inv)) {
            prop_assert_eq!(a + b, 1.0);
        }
    }

    #[test]
    fn cindex_rank_invariant(
        raw in proptest::collection::vec((0.01f64..10.0, proptest::bool::ANY, -3.0f64..3.0), 2..30),
    ) {
        let labels: Vec<SurvivalLabel> = raw.iter().map(|&(t, e, _)| label(t, e)).collect();
        let risks: Vec<f64> = raw.iter().map(|r| r.2).collect();
        let warped: Vec<f64> = risks.iter().map(|r| r.exp() * 3.0 + 1.0).collect();
        match (concordance_index(&risks, &labels), concordance_index(&warped, &labels)) {
            (Ok(a), Ok(b)) => prop_assert_eq!(a, b),
            (Err(_), Err(_)) => {}
            _ => prop_assert!(false, "definedness differs"),
        }
    }
}

fn tiny_setup(n: usize) -> (Morpheus, Cohort) {
    let spec = OmicsSpec {
        features: 6,
        groups: 2,
        noise_std: 0.1,
    };
    let s = generate_cohort(&SynthConfig {
        num_patients: n,
        latent_dim: 2,
        min_patches: 2,
        max_patches: 4,
        patch_dim: 4,
        rna: spec.clone(),
        dnam: spec.clone(),
        cnv: spec,
        ..SynthConfig::default()
    })
    .unwrap();
    let config = ModelConfig {
        dim: 8,
        heads: 2,
        mlp_dim: 8,
        num_prototypes: 2,
        patch_sample: 0,
        ..ModelConfig::default()
    };
    let m = Morpheus::new(config, 4, s.cohort.schemes.clone(), &SeedTree::new(5)).unwrap();
    (m, s.cohort)
}

#[test]
fn few_shot_is_reproducible_and_tidy() {
    let (m, cohort) = tiny_setup(24);
    let cfg = FewShotConfig {
        k: 2,
        runs: 1,
        epochs: 1,
        patch_sample: 0,
        ..FewShotConfig::default()
    };
    let a = few_shot_protocol(&m, &cohort, &cfg, &SeedTree::new(8)).unwrap();
    let b = few_shot_protocol(&m, &cohort, &cfg, &SeedTree::new(8)).unwrap();
    assert_eq!(a.auc[0].to_bits(), b.auc[0].to_bits());
    let cfg = FewShotConfig { runs: 3, ..cfg };
    let r = few_shot_protocol(&m, &cohort, &cfg, &SeedTree::new(8)).unwrap();
    let rows = r.rows("subtype", 8);
    assert_eq!(rows.iter().filter(|r| r.split.starts_with("run")).count(), 3);
    assert_eq!(rows.iter().filter(|r| r.split == "summary").count(), 2);
}

#[test]
fn few_shot_rejects_small_classes_and_missing_modalities() {
    let (m, mut cohort) = tiny_setup(12);
    let cfg = FewShotConfig { k: 20, ..FewShotConfig::default() };
    assert!(matches!(few_shot_protocol(&m, &cohort, &cfg, &SeedTree::new(0)), Err(Error::Validation { .. })));
    cohort.patients[3].remove_omics(Modality::Rna);
    let cfg = FewShotConfig {
        k: 1,
        visible: vec![Modality::Rna],
        ..FewShotConfig::default()
    };
    let err = few_shot_protocol(&m, &cohort, &cfg, &SeedTree::new(0)).unwrap_err().to_string();
    assert!(err.contains("SYN00003") && err.contains("rna"), "{err}");
}

#[test]
fn survival_cv_reports_every_fold() {
    let (m, cohort) = tiny_setup(30);
    let cfg = SurvivalConfig {
        folds: 3,
        epochs: 1,
        batch_size: 8,
        warmup_epochs: 0.0,
        patch_sample: 0,
        visible: vec![Modality::Rna],
        ..SurvivalConfig::default()
    };
    let r = survival_cv(&m, &cohort, &cfg, &SeedTree::new(2)).unwrap();
    assert_eq!(r.c_index.len(), 3);
    let rows = r.rows("survival", 2);
    assert_eq!(rows.len(), 5);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.csv");
    write_metrics_csv(&path, &rows).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    assert!(text.starts_with("task,split,metric,value,seed\n"));
    assert_eq!(text.lines().count(), 6);
    assert!(matches!(
        survival_cv(&m, &cohort, &SurvivalConfig { folds: 1, ..cfg }, &SeedTree::new(2)),
        Err(Error::Config { .. })
    ));
}

#[test]
fn config_defaults_match_tables() {
    let f = FewShotConfig::default();
    assert_eq!((f.epochs, f.batch_size, f.lr, f.dropout, f.weight_decay), (5, 1, 5e-5, 0.35, 1e-2));
    assert_eq!(f.patch_sample, 1024);
    let s = SurvivalConfig::default();
    assert_eq!((s.epochs, s.batch_size, s.num_intervals, s.warmup_epochs), (20, 32, 4, 5.0));
    assert_eq!((s.lr_start, s.lr_peak, s.lr_final), (1e-5, 5e-5, 6e-6));
    assert_eq!((s.weight_decay, s.dropout, s.folds), (1e-2, 0.35, 5));
}
