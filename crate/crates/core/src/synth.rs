//! Synthetic cohorts with a known linear latent structure, and a ridge
//! regression baseline that serves as their reconstruction oracle.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Exp1, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{
    Cohort, GroupingScheme, Modality, OmicsProfile, PatchEmbeddingSet, PatientRecord, SurvivalLabel,
};
use crate::error::{Error, Result};
use crate::recon::pearson_per_feature;
use crate::rng::{SeedTree, Stream};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OmicsSpec {
    pub features: usize,
    pub groups: usize,
    pub noise_std: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub num_patients: usize,
    pub latent_dim: usize,
    pub min_patches: usize,
    pub max_patches: usize,
    pub patch_dim: usize,
    pub patch_noise_std: f64,
    pub rna: OmicsSpec,
    pub dnam: OmicsSpec,
    pub cnv: OmicsSpec,
    /// Subtype is 1 when latent coordinate `subtype_coordinate` exceeds
    /// `subtype_threshold`.
    pub subtype_coordinate: usize,
    pub subtype_threshold: f64,
    /// Risk is `risk_weights · z`; empty means every coordinate weighted
    /// `1/√p`.
    pub risk_weights: Vec<f64>,
    pub censoring_rate: f64,
    /// Exponential event times with rate `exp(risk)`; when false the time is
    /// exactly `exp(−risk)`.
    pub random_survival_times: bool,
    pub seed: u64,
}

impl Default for OmicsSpec {
    fn default() -> Self {
        Self {
            features: 64,
            groups: 8,
            noise_std: 0.3,
        }
    }
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            num_patients: 512,
            latent_dim: 8,
            min_patches: 8,
            max_patches: 24,
            patch_dim: 16,
            patch_noise_std: 1.5,
            rna: OmicsSpec::default(),
            dnam: OmicsSpec::default(),
            cnv: OmicsSpec::default(),
            subtype_coordinate: 0,
            subtype_threshold: 0.0,
            risk_weights: Vec::new(),
            censoring_rate: 0.3,
            random_survival_times: true,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn omics(&self, m: Modality) -> &OmicsSpec {
        match m {
            Modality::Rna => &self.rna,
            Modality::Dnam => &self.dnam,
            Modality::Cnv => &self.cnv,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, msg: String| Err(Error::config(format!("synth.{key}"), msg));
        if self.num_patients == 0 {
            return bad("num_patients", "must be positive".into());
        }
        if self.latent_dim == 0 {
            return bad("latent_dim", "must be positive".into());
        }
        if self.patch_dim == 0 {
            return bad("patch_dim", "must be positive".into());
        }
        if self.min_patches == 0 || self.min_patches > self.max_patches {
            return bad(
                "min_patches",
                format!("need 1 <= min_patches <= max_patches, got {}..{}", self.min_patches, self.max_patches),
            );
        }
        if !(self.patch_noise_std >= 0.0 && self.patch_noise_std.is_finite()) {
            return bad("patch_noise_std", "must be nonnegative".into());
        }
        for m in Modality::ALL {
            let s = self.omics(m);
            if s.features == 0 || s.groups == 0 || s.groups > s.features {
                return bad(
                    &format!("{m}.groups"),
                    format!("{} groups over {} features", s.groups, s.features),
                );
            }
            if !(s.noise_std >= 0.0 && s.noise_std.is_finite()) {
                return bad(&format!("{m}.noise_std"), "must be nonnegative".into());
            }
        }
        if self.subtype_coordinate >= self.latent_dim {
            return bad("subtype_coordinate", format!("must be below latent_dim {}", self.latent_dim));
        }
        if !self.risk_weights.is_empty() && self.risk_weights.len() != self.latent_dim {
            return bad(
                "risk_weights",
                format!("{} weights for latent_dim {}", self.risk_weights.len(), self.latent_dim),
            );
        }
        if !(0.0..1.0).contains(&self.censoring_rate) {
            return bad("censoring_rate", format!("{} outside [0, 1)", self.censoring_rate));
        }
        Ok(())
    }

    fn risk(&self, z: &[f64]) -> f64 {
        if self.risk_weights.is_empty() {
            z.iter().sum::<f64>() / (z.len() as f64).sqrt()
        } else {
            z.iter().zip(&self.risk_weights).map(|(a, b)| a * b).sum()
        }
    }
}

fn normal_matrix<R: Rng + ?Sized>(rows: usize, cols: usize, std: f64, rng: &mut R) -> Tensor {
    Tensor::from_fn(rows, cols, |_, _| std * rng.sample::<f64, _>(StandardNormal))
}

/// Generated cohort plus the latent draws, for oracle checks.
#[derive(Clone, Debug)]
pub struct SynthCohort {
    pub cohort: Cohort,
    /// `num_patients × latent_dim`.
    pub latent: Tensor,
    pub risk: Vec<f64>,
}

/// Draw a cohort. Patient `i` depends only on `(seed, i)` and the shared
/// linear maps; omics features are then min-max rescaled to `[0, 1]` over the
/// cohort, which keeps them exact affine functions of `z` plus noise.
pub fn generate_cohort(cfg: &SynthConfig) -> Result<SynthCohort> {
    cfg.validate()?;
    let seeds = SeedTree::new(cfg.seed);
    let p = cfg.latent_dim;
    let scale = 1.0 / (p as f64).sqrt();
    let mut maps_rng = seeds.stream(Stream::Data, &[u64::MAX]);
    let patch_map = normal_matrix(p, cfg.patch_dim, scale, &mut maps_rng);
    let omics_maps: Vec<Tensor> = Modality::ALL
        .iter()
        .map(|&m| normal_matrix(p, cfg.omics(m).features, scale, &mut maps_rng))
        .collect();

    let n = cfg.num_patients;
    let mut latent = Tensor::zeros(n, p);
    let mut raw: Vec<Tensor> = Modality::ALL
        .iter()
        .map(|&m| Tensor::zeros(n, cfg.omics(m).features))
        .collect();
    let mut patients = Vec::with_capacity(n);
    let mut risks = Vec::with_capacity(n);
    for i in 0..n {
        let mut rng = seeds.stream(Stream::Data, &[i as u64]);
        let z: Vec<f64> = (0..p).map(|_| rng.sample(StandardNormal)).collect();
        latent.row_mut(i).copy_from_slice(&z);
        let zt = Tensor::row_vector(z.clone());

        let count = rng.random_range(cfg.min_patches..=cfg.max_patches);
        let signal = zt.matmul(&patch_map);
        let patches = Tensor::from_fn(count, cfg.patch_dim, |_, c| {
            signal.get(0, c) + cfg.patch_noise_std * rng.sample::<f64, _>(StandardNormal)
        });
        for (k, &m) in Modality::ALL.iter().enumerate() {
            let s = zt.matmul(&omics_maps[k]);
            let noise = cfg.omics(m).noise_std;
            for (j, v) in raw[k].row_mut(i).iter_mut().enumerate() {
                *v = s.get(0, j) + noise * rng.sample::<f64, _>(StandardNormal);
            }
        }

        let risk = cfg.risk(&z);
        let event_time = if cfg.random_survival_times {
            let e: f64 = rng.sample(Exp1);
            e / risk.exp()
        } else {
            (-risk).exp()
        };
        let censored = rng.random::<f64>() < cfg.censoring_rate;
        // u in (0, 1] keeps censored times positive
        let u = 1.0 - rng.random::<f64>();
        let time = if censored { u * event_time } else { event_time };
        let mut record = PatientRecord::new(
            format!("SYN{i:05}"),
            PatchEmbeddingSet::new(patches, vec![format!("SYN{i:05}-slide")])?,
        );
        record.subtype = Some(usize::from(z[cfg.subtype_coordinate] > cfg.subtype_threshold));
        record.survival = Some(SurvivalLabel::new(time, !censored)?);
        patients.push(record);
        risks.push(risk);
    }

    for (k, &m) in Modality::ALL.iter().enumerate() {
        for j in 0..raw[k].cols() {
            let col: Vec<f64> = (0..n).map(|i| raw[k].get(i, j)).collect();
            let lo = col.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let span = if hi > lo { hi - lo } else { 1.0 };
            for (i, v) in col.iter().enumerate() {
                raw[k].set(i, j, ((v - lo) / span).clamp(0.0, 1.0));
            }
        }
        for (i, record) in patients.iter_mut().enumerate() {
            record.set_omics(OmicsProfile::transformed(m, raw[k].row(i).to_vec())?);
        }
    }

    let schemes = Modality::ALL
        .iter()
        .map(|&m| GroupingScheme::contiguous(m, cfg.omics(m).features, cfg.omics(m).groups))
        .collect::<Result<Vec<_>>>()?;
    let cohort = Cohort {
        patch_dim: cfg.patch_dim,
        schemes,
        patients,
    };
    cohort.validate()?;
    Ok(SynthCohort {
        cohort,
        latent,
        risk: risks,
    })
}

/// Deterministic half split: even positions of a seeded shuffle fit, odd
/// positions evaluate.
pub fn split_halves(n: usize, seed: u64) -> (Vec<usize>, Vec<usize>) {
    use rand::seq::SliceRandom;
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut SeedTree::new(seed).stream(Stream::Split, &[u64::MAX]));
    let (mut fit, mut eval): (Vec<usize>, Vec<usize>) = (Vec::new(), Vec::new());
    for (k, i) in idx.into_iter().enumerate() {
        if k % 2 == 0 {
            fit.push(i);
        } else {
            eval.push(i);
        }
    }
    fit.sort_unstable();
    eval.sort_unstable();
    (fit, eval)
}

fn design_row(record: &PatientRecord, use_wsi: bool, inputs: &[Modality]) -> Result<Vec<f64>> {
    let mut row = Vec::new();
    if use_wsi {
        row.extend(record.patches.mean());
    }
    for &m in inputs {
        let p = record
            .omics(m)
            .ok_or_else(|| Error::patient(&record.id, m.name(), "input modality missing"))?;
        row.extend_from_slice(&p.values);
    }
    Ok(row)
}

/// Ridge regression (λ = 1e-3·n on standardized inputs) from the patient-mean
/// patch embedding and/or the `inputs` profiles to every `target` feature,
/// fit on `fit` and scored on `eval`. Returns per-feature Pearson r on the
/// evaluation patients; `None` marks an undefined (constant) column.
pub fn linear_oracle(
    cohort: &Cohort,
    fit: &[usize],
    eval: &[usize],
    use_wsi: bool,
    inputs: &[Modality],
    target: Modality,
) -> Result<Vec<Option<f64>>> {
    if !use_wsi && inputs.is_empty() {
        return Err(Error::config("inputs", "oracle needs at least one input"));
    }
    let rows = |idx: &[usize]| -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>)> {
        let mut x = Vec::with_capacity(idx.len());
        let mut y = Vec::with_capacity(idx.len());
        for &i in idx {
            let r = &cohort.patients[i];
            x.push(design_row(r, use_wsi, inputs)?);
            y.push(
                r.omics(target)
                    .ok_or_else(|| Error::patient(&r.id, target.name(), "target modality missing"))?
                    .values
                    .clone(),
            );
        }
        Ok((x, y))
    };
    let (xf, yf) = rows(fit)?;
    let (xe, ye) = rows(eval)?;
    let n = xf.len();
    if n < 2 {
        return Err(Error::validation("oracle needs at least two fit patients"));
    }
    let p = xf[0].len();
    let f = yf[0].len();
    let mut mean = vec![0.0; p];
    for r in &xf {
        for (m, v) in mean.iter_mut().zip(r) {
            *m += v / n as f64;
        }
    }
    let mut std = vec![0.0; p];
    for r in &xf {
        for ((s, v), m) in std.iter_mut().zip(r).zip(&mean) {
            *s += (v - m).powi(2) / (n - 1) as f64;
        }
    }
    // constant inputs carry no information; zero them rather than divide
    let inv: Vec<f64> = std.iter().map(|s| if s.sqrt() > 1e-12 { 1.0 / s.sqrt() } else { 0.0 }).collect();
    let standardize = |rows: &[Vec<f64>]| {
        DMatrix::from_fn(rows.len(), p, |i, j| (rows[i][j] - mean[j]) * inv[j])
    };
    let x = standardize(&xf);
    let y_mean: Vec<f64> = (0..f).map(|j| yf.iter().map(|r| r[j]).sum::<f64>() / n as f64).collect();
    let y = DMatrix::from_fn(n, f, |i, j| yf[i][j] - y_mean[j]);
    let lambda = 1e-3 * n as f64;
    let gram = x.transpose() * &x + DMatrix::identity(p, p) * lambda;
    let chol = gram
        .cholesky()
        .ok_or_else(|| Error::NonFinite("ridge system is not positive definite".into()))?;
    let beta = chol.solve(&(x.transpose() * y));
    let pred = standardize(&xe) * beta;
    let pred = Tensor::from_fn(xe.len(), f, |i, j| pred[(i, j)] + y_mean[j]);
    let truth = Tensor::from_fn(ye.len(), f, |i, j| ye[i][j]);
    pearson_per_feature(&pred, &truth)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::recon::median;

    fn small(noise: f64) -> SynthConfig {
        let spec = OmicsSpec {
            features: 20,
            groups: 4,
            noise_std: noise,
        };
        SynthConfig {
            num_patients: 200,
            patch_noise_std: noise,
            rna: spec.clone(),
            dnam: spec.clone(),
            cnv: spec,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn generation_is_deterministic_and_valid() {
        let a = generate_cohort(&small(0.3)).unwrap();
        let b = generate_cohort(&small(0.3)).unwrap();
        assert_eq!(a.cohort, b.cohort);
        a.cohort.validate().unwrap();
        let c = generate_cohort(&SynthConfig { seed: 1, ..small(0.3) }).unwrap();
        assert_ne!(a.cohort, c.cohort);
    }

    #[test]
    fn no_censoring_means_all_events() {
        let s = generate_cohort(&SynthConfig { censoring_rate: 0.0, ..small(0.3) }).unwrap();
        assert!(s.cohort.patients.iter().all(|p| p.survival.unwrap().event));
    }

    #[test]
    fn deterministic_times_follow_risk() {
        let cfg = SynthConfig {
            censoring_rate: 0.0,
            random_survival_times: false,
            ..small(0.3)
        };
        let s = generate_cohort(&cfg).unwrap();
        for (p, r) in s.cohort.patients.iter().zip(&s.risk) {
            assert!((p.survival.unwrap().time - (-r).exp()).abs() < 1e-12);
        }
    }

    #[test]
    fn config_validation() {
        let bad = SynthConfig { censoring_rate: 1.5, ..SynthConfig::default() };
        let err = bad.validate().unwrap_err().to_string();
        assert!(err.contains("synth.censoring_rate"), "{err}");
        assert!(SynthConfig { latent_dim: 0, ..SynthConfig::default() }.validate().is_err());
    }

    #[test]
    fn noiseless_oracle_is_exact() {
        let s = generate_cohort(&small(0.0)).unwrap();
        let (fit, eval) = split_halves(s.cohort.len(), 0);
        for target in Modality::ALL {
            let r = linear_oracle(&s.cohort, &fit, &eval, true, &[], target).unwrap();
            assert!(median(&r).unwrap() >= 0.999);
        }
        let r = linear_oracle(&s.cohort, &fit, &eval, false, &[Modality::Dnam], Modality::Dnam).unwrap();
        assert!(median(&r).unwrap() > 1.0 - 1e-6);
    }

    #[test]
    fn pure_noise_target_is_uncorrelated() {
        // A feature with no latent signal: swap in independent noise.
        let mut s = generate_cohort(&SynthConfig { num_patients: 500, ..small(0.3) }).unwrap();
        let mut rng = SeedTree::new(77).stream(Stream::Data, &[]);
        for p in &mut s.cohort.patients {
            let v = p.omics_mut(Modality::Cnv).unwrap();
            v.values[0] = rng.random::<f64>();
        }
        let (fit, eval) = split_halves(500, 1);
        let r = linear_oracle(&s.cohort, &fit, &eval, true, &[Modality::Rna], Modality::Cnv).unwrap();
        assert!(r[0].unwrap().abs() < 0.1, "{:?}", r[0]);
    }

    #[test]
    fn adding_an_informative_modality_helps() {
        let mut wsi = Vec::new();
        let mut both = Vec::new();
        for seed in 0..5 {
            let cfg = SynthConfig {
                seed,
                num_patients: 400,
                min_patches: 4,
                max_patches: 8,
                patch_noise_std: 3.0,
                ..small(0.3)
            };
            let s = generate_cohort(&cfg).unwrap();
            let (fit, eval) = split_halves(s.cohort.len(), seed);
            wsi.push(median(&linear_oracle(&s.cohort, &fit, &eval, true, &[], Modality::Dnam).unwrap()).unwrap());
            both.push(
                median(&linear_oracle(&s.cohort, &fit, &eval, true, &[Modality::Rna], Modality::Dnam).unwrap())
                    .unwrap(),
            );
        }
        let m = |v: &[f64]| median(&v.iter().map(|&x| Some(x)).collect::<Vec<_>>()).unwrap();
        assert!(m(&both) >= m(&wsi), "{both:?} vs {wsi:?}");
    }

    #[test]
    fn generated_cohort_round_trips_through_disk() {
        let s = generate_cohort(&SynthConfig { num_patients: 12, ..small(0.3) }).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let manifest = crate::data::write_cohort(&s.cohort, dir.path()).unwrap();
        let back = crate::data::load_cohort(&manifest).unwrap();
        assert_eq!(back, s.cohort);
    }
}
