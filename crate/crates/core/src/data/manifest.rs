//! Cohort manifest (TOML) and directory layout.
//!
//! All paths in a manifest are relative to the manifest's directory.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::grouping::{GenomicLocus, GroupingScheme};
use super::{
    payload, transform_cnv, transform_rna, validate_dnam, Cohort, Modality, OmicsProfile,
    PatchEmbeddingSet, PatientRecord, SurvivalLabel,
};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format_version: u32,
    pub patch_dim: usize,
    /// Drop features on chromosomes X and Y for modalities that declare loci.
    #[serde(default)]
    pub exclude_sex_chromosomes: bool,
    /// Free-text record of how features were selected (e.g. on which split).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub variance_selection: Option<String>,
    #[serde(default)]
    pub modalities: BTreeMap<String, ModalityEntry>,
    #[serde(default)]
    pub patients: Vec<PatientEntry>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModalityEntry {
    /// Feature count of the payload files.
    pub features: usize,
    pub grouping: String,
    /// Whether payloads already hold model-space values.
    #[serde(default)]
    pub transformed: bool,
    /// Optional `chromosome<TAB>position` file, one line per feature.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub loci: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PatientEntry {
    pub id: String,
    pub patches: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub slides: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rna: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dnam: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cnv: Option<String>,
    /// Payload of 0/1 flags marking missing CNV entries.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cnv_missing: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subtype: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub survival_time: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub survival_event: Option<bool>,
}

impl PatientEntry {
    fn omics_path(&self, m: Modality) -> Option<&str> {
        match m {
            Modality::Rna => self.rna.as_deref(),
            Modality::Dnam => self.dnam.as_deref(),
            Modality::Cnv => self.cnv.as_deref(),
        }
    }
}

fn read_loci(path: &Path) -> Result<Vec<GenomicLocus>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let format = |message: String| Error::Format {
        path: path.to_path_buf(),
        message,
    };
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty() && !l.starts_with('#'))
        .map(|(n, l)| {
            let (c, p) = l
                .split_once('\t')
                .ok_or_else(|| format(format!("line {}: expected `chromosome<TAB>position`", n + 1)))?;
            let pos = p
                .trim()
                .parse::<u64>()
                .map_err(|e| format(format!("line {}: {e}", n + 1)))?;
            Ok(GenomicLocus::new(c.trim(), pos))
        })
        .collect()
}

struct ModalityPlan {
    modality: Modality,
    entry: ModalityEntry,
    /// Indices of payload features kept after the sex-chromosome filter.
    retained: Option<Vec<usize>>,
    scheme: GroupingScheme,
}

fn tag_patient(e: Error, id: &str, field: &str) -> Error {
    match e {
        Error::Validation { message, field: f, .. } => Error::Validation {
            patient: Some(id.to_string()),
            field: Some(f.unwrap_or_else(|| field.to_string())),
            message,
        },
        Error::Format { path, message } => Error::Validation {
            patient: Some(id.to_string()),
            field: Some(field.to_string()),
            message: format!("{}: {message}", path.display()),
        },
        Error::Io { path, source } => Error::Validation {
            patient: Some(id.to_string()),
            field: Some(field.to_string()),
            message: format!("{}: {source}", path.display()),
        },
        other => other,
    }
}

/// Load and fully validate a cohort.
pub fn load_cohort(manifest_path: &Path) -> Result<Cohort> {
    let text = std::fs::read_to_string(manifest_path).map_err(|e| Error::io(manifest_path, e))?;
    let manifest: Manifest = toml::from_str(&text).map_err(|e| Error::Format {
        path: manifest_path.to_path_buf(),
        message: e.to_string(),
    })?;
    if manifest.format_version != FORMAT_VERSION {
        return Err(Error::Format {
            path: manifest_path.to_path_buf(),
            message: format!("unsupported format_version {}", manifest.format_version),
        });
    }
    if manifest.patch_dim == 0 {
        return Err(Error::validation("patch_dim must be positive"));
    }
    let root = manifest_path.parent().unwrap_or(Path::new("."));

    let mut plans = Vec::new();
    for (name, entry) in &manifest.modalities {
        let modality: Modality = name.parse()?;
        let retained = match (&entry.loci, manifest.exclude_sex_chromosomes) {
            (Some(loci), true) => {
                let loci = read_loci(&root.join(loci))?;
                if loci.len() != entry.features {
                    return Err(Error::Validation {
                        patient: None,
                        field: Some(name.clone()),
                        message: format!("{} loci for {} features", loci.len(), entry.features),
                    });
                }
                Some(super::retain_autosomes(&loci))
            }
            _ => None,
        };
        let kept = retained.as_ref().map_or(entry.features, Vec::len);
        let scheme = GroupingScheme::read(&root.join(&entry.grouping), modality, kept)?;
        plans.push(ModalityPlan {
            modality,
            entry: entry.clone(),
            retained,
            scheme,
        });
    }

    plans.sort_by_key(|p| p.modality);

    let mut patients = Vec::with_capacity(manifest.patients.len());
    for p in &manifest.patients {
        patients.push(load_patient(root, &manifest, &plans, p)?);
    }
    let cohort = Cohort {
        patch_dim: manifest.patch_dim,
        schemes: plans.into_iter().map(|p| p.scheme).collect(),
        patients,
    };
    cohort.validate()?;
    Ok(cohort)
}

fn load_patient(
    root: &Path,
    manifest: &Manifest,
    plans: &[ModalityPlan],
    p: &PatientEntry,
) -> Result<PatientRecord> {
    let raw = payload::read(&root.join(&p.patches)).map_err(|e| tag_patient(e, &p.id, "patches"))?;
    if raw.is_empty() || raw.len() % manifest.patch_dim != 0 {
        return Err(Error::patient(
            &p.id,
            "patches",
            format!("{} values is not a positive multiple of patch_dim {}", raw.len(), manifest.patch_dim),
        ));
    }
    let rows = raw.len() / manifest.patch_dim;
    let patches = PatchEmbeddingSet::new(Tensor::from_vec(rows, manifest.patch_dim, raw)?, p.slides.clone())
        .map_err(|e| tag_patient(e, &p.id, "patches"))?;
    let mut record = PatientRecord::new(p.id.clone(), patches);

    for m in Modality::ALL {
        let Some(rel) = p.omics_path(m) else { continue };
        let plan = plans
            .iter()
            .find(|pl| pl.modality == m)
            .ok_or_else(|| Error::patient(&p.id, m.name(), "modality not declared in the manifest"))?;
        let values = payload::read(&root.join(rel)).map_err(|e| tag_patient(e, &p.id, m.name()))?;
        if values.len() != plan.entry.features {
            return Err(Error::patient(
                &p.id,
                m.name(),
                format!("length {} does not match manifest length {}", values.len(), plan.entry.features),
            ));
        }
        let values = if plan.entry.transformed {
            values
        } else {
            match m {
                Modality::Rna => transform_rna(&values),
                Modality::Dnam => validate_dnam(&values, plan.entry.features),
                Modality::Cnv => {
                    let missing: Vec<bool> = match &p.cnv_missing {
                        Some(rel) => payload::read(&root.join(rel))
                            .map_err(|e| tag_patient(e, &p.id, "cnv_missing"))?
                            .into_iter()
                            .map(|v| v != 0.0)
                            .collect(),
                        None => Vec::new(),
                    };
                    transform_cnv(&values, &missing)
                }
            }
            .map_err(|e| tag_patient(e, &p.id, m.name()))?
        };
        let values = match &plan.retained {
            Some(keep) => keep.iter().map(|&i| values[i]).collect(),
            None => values,
        };
        let profile = OmicsProfile {
            modality: m,
            values,
            transformed: true,
        };
        profile
            .validate(Some(plan.scheme.num_features))
            .map_err(|e| tag_patient(e, &p.id, m.name()))?;
        record.set_omics(profile);
    }
    record.subtype = p.subtype;
    record.survival = match (p.survival_time, p.survival_event) {
        (Some(t), Some(e)) => {
            Some(SurvivalLabel::new(t, e).map_err(|e| tag_patient(e, &p.id, "survival_time"))?)
        }
        (None, None) => None,
        _ => {
            return Err(Error::patient(
                &p.id,
                "survival",
                "survival_time and survival_event must be given together",
            ))
        }
    };
    Ok(record)
}

/// Write a cohort in the on-disk format under `dir`, returning the manifest
/// path. Output is deterministic: the same cohort always yields the same
/// bytes.
pub fn write_cohort(cohort: &Cohort, dir: &Path) -> Result<PathBuf> {
    cohort.validate()?;
    let mkdir = |p: &Path| std::fs::create_dir_all(p).map_err(|e| Error::io(p, e));
    mkdir(dir)?;
    mkdir(&dir.join("groups"))?;
    mkdir(&dir.join("patients"))?;

    let mut modalities = BTreeMap::new();
    for s in &cohort.schemes {
        let rel = format!("groups/{}.tsv", s.modality);
        let path = dir.join(&rel);
        std::fs::write(&path, s.to_text()).map_err(|e| Error::io(&path, e))?;
        modalities.insert(
            s.modality.name().to_string(),
            ModalityEntry {
                features: s.num_features,
                grouping: rel,
                transformed: true,
                loci: None,
            },
        );
    }

    let mut entries = Vec::with_capacity(cohort.len());
    for (i, p) in cohort.patients.iter().enumerate() {
        // index prefix keeps file names unique whatever the ids contain
        let stem = format!("patients/{i:06}");
        let patches = format!("{stem}.patches");
        payload::write(&dir.join(&patches), p.patches.embeddings().data())?;
        let mut entry = PatientEntry {
            id: p.id.clone(),
            patches,
            slides: p.patches.source_slide_ids.clone(),
            rna: None,
            dnam: None,
            cnv: None,
            cnv_missing: None,
            subtype: p.subtype,
            survival_time: p.survival.map(|s| s.time),
            survival_event: p.survival.map(|s| s.event),
        };
        for m in p.available() {
            let rel = format!("{stem}.{m}");
            payload::write(&dir.join(&rel), &p.omics(m).expect("available").values)?;
            match m {
                Modality::Rna => entry.rna = Some(rel),
                Modality::Dnam => entry.dnam = Some(rel),
                Modality::Cnv => entry.cnv = Some(rel),
            }
        }
        entries.push(entry);
    }
    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        patch_dim: cohort.patch_dim,
        exclude_sex_chromosomes: false,
        variance_selection: None,
        modalities,
        patients: entries,
    };
    let path = dir.join("manifest.toml");
    let text = toml::to_string_pretty(&manifest).map_err(|e| Error::Format {
        path: path.clone(),
        message: e.to_string(),
    })?;
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}
