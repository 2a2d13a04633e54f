//! Multimodal patient records, grouping schemes, preprocessing transforms
//! and the on-disk cohort format.

mod grouping;
mod manifest;
pub mod payload;
mod transforms;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub use grouping::{cluster_by_position, retain_autosomes, GenomicLocus, GroupingScheme};
pub use manifest::{load_cohort, write_cohort, Manifest, ModalityEntry, PatientEntry};
pub use transforms::{
    select_by_variance, transform_cnv, transform_rna, validate_dnam, VarianceSelection,
};

/// Omics modality. WSI is not a variant: it is always present and never
/// masked, so it is modelled separately.
#[derive(
    Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize,
)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Rna,
    Dnam,
    Cnv,
}

impl Modality {
    pub const ALL: [Modality; 3] = [Modality::Rna, Modality::Dnam, Modality::Cnv];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Modality::Rna => "rna",
            Modality::Dnam => "dnam",
            Modality::Cnv => "cnv",
        }
    }

    /// Whether groups of this modality must partition the features.
    pub fn requires_partition(self) -> bool {
        !matches!(self, Modality::Rna)
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Modality {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "rna" => Ok(Modality::Rna),
            "dnam" => Ok(Modality::Dnam),
            "cnv" => Ok(Modality::Cnv),
            other => Err(Error::config("modality", format!("unknown modality `{other}`"))),
        }
    }
}

/// Precomputed patch embeddings of one patient's slide(s), `𝒩_H × d_H`.
#[derive(Clone, Debug, PartialEq)]
pub struct PatchEmbeddingSet {
    embeddings: Tensor,
    pub source_slide_ids: Vec<String>,
}

impl PatchEmbeddingSet {
    pub fn new(embeddings: Tensor, source_slide_ids: Vec<String>) -> Result<Self> {
        if embeddings.rows() == 0 || embeddings.cols() == 0 {
            return Err(Error::validation("patch embedding set is empty"));
        }
        if !embeddings.is_finite() {
            return Err(Error::validation("patch embeddings contain non-finite values"));
        }
        Ok(Self {
            embeddings,
            source_slide_ids,
        })
    }

    pub fn embeddings(&self) -> &Tensor {
        &self.embeddings
    }

    pub fn len(&self) -> usize {
        self.embeddings.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.embeddings.rows() == 0
    }

    pub fn dim(&self) -> usize {
        self.embeddings.cols()
    }

    /// Patient-level mean embedding.
    pub fn mean(&self) -> Vec<f64> {
        self.embeddings.column_means()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OmicsProfile {
    pub modality: Modality,
    pub values: Vec<f64>,
    pub transformed: bool,
}

impl OmicsProfile {
    /// A profile already in model space (post-transform).
    pub fn transformed(modality: Modality, values: Vec<f64>) -> Result<Self> {
        let p = Self {
            modality,
            values,
            transformed: true,
        };
        p.validate(None)?;
        Ok(p)
    }

    pub fn validate(&self, expected_len: Option<usize>) -> Result<()> {
        let field = self.modality.name();
        if let Some(n) = expected_len {
            if self.values.len() != n {
                return Err(Error::Validation {
                    patient: None,
                    field: Some(field.into()),
                    message: format!("length {} does not match manifest length {n}", self.values.len()),
                });
            }
        }
        if self.values.is_empty() {
            return Err(Error::Validation {
                patient: None,
                field: Some(field.into()),
                message: "empty profile".into(),
            });
        }
        if let Some(i) = self.values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Validation {
                patient: None,
                field: Some(field.into()),
                message: format!("non-finite value at index {i}"),
            });
        }
        if self.transformed {
            let bad = match self.modality {
                Modality::Dnam => self.values.iter().position(|v| !(0.0..=1.0).contains(v)),
                Modality::Rna | Modality::Cnv => self.values.iter().position(|&v| v < 0.0),
            };
            if let Some(i) = bad {
                return Err(Error::Validation {
                    patient: None,
                    field: Some(field.into()),
                    message: format!("value {} at index {i} outside the valid range", self.values[i]),
                });
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SurvivalLabel {
    pub time: f64,
    pub event: bool,
}

impl SurvivalLabel {
    pub fn new(time: f64, event: bool) -> Result<Self> {
        if !(time.is_finite() && time > 0.0) {
            return Err(Error::validation(format!("survival time {time} must be positive")));
        }
        Ok(Self { time, event })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PatientRecord {
    pub id: String,
    pub patches: PatchEmbeddingSet,
    omics: [Option<OmicsProfile>; 3],
    pub subtype: Option<usize>,
    pub survival: Option<SurvivalLabel>,
}

impl PatientRecord {
    pub fn new(id: impl Into<String>, patches: PatchEmbeddingSet) -> Self {
        Self {
            id: id.into(),
            patches,
            omics: [None, None, None],
            subtype: None,
            survival: None,
        }
    }

    pub fn with_omics(mut self, profile: OmicsProfile) -> Self {
        let i = profile.modality.index();
        self.omics[i] = Some(profile);
        self
    }

    pub fn set_omics(&mut self, profile: OmicsProfile) {
        let i = profile.modality.index();
        self.omics[i] = Some(profile);
    }

    pub fn remove_omics(&mut self, modality: Modality) -> Option<OmicsProfile> {
        self.omics[modality.index()].take()
    }

    pub fn omics(&self, modality: Modality) -> Option<&OmicsProfile> {
        self.omics[modality.index()].as_ref()
    }

    pub fn omics_mut(&mut self, modality: Modality) -> Option<&mut OmicsProfile> {
        self.omics[modality.index()].as_mut()
    }

    pub fn has(&self, modality: Modality) -> bool {
        self.omics[modality.index()].is_some()
    }

    pub fn available(&self) -> Vec<Modality> {
        Modality::ALL.into_iter().filter(|&m| self.has(m)).collect()
    }
}

/// A validated cohort: records plus one grouping scheme per declared
/// omics modality.
#[derive(Clone, Debug, PartialEq)]
pub struct Cohort {
    pub patch_dim: usize,
    pub schemes: Vec<GroupingScheme>,
    pub patients: Vec<PatientRecord>,
}

impl Cohort {
    pub fn modalities(&self) -> Vec<Modality> {
        self.schemes.iter().map(|s| s.modality).collect()
    }

    pub fn scheme(&self, modality: Modality) -> Option<&GroupingScheme> {
        self.schemes.iter().find(|s| s.modality == modality)
    }

    pub fn len(&self) -> usize {
        self.patients.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patients.is_empty()
    }

    /// Check every record against the declared modalities and invariants.
    pub fn validate(&self) -> Result<()> {
        for s in &self.schemes {
            s.validate()?;
        }
        let mut seen = std::collections::HashSet::new();
        for p in &self.patients {
            if !seen.insert(p.id.as_str()) {
                return Err(Error::patient(&p.id, "id", "duplicate patient id"));
            }
            if p.patches.dim() != self.patch_dim {
                return Err(Error::patient(
                    &p.id,
                    "patches",
                    format!("embedding width {} but dataset declares {}", p.patches.dim(), self.patch_dim),
                ));
            }
            for m in Modality::ALL {
                if let Some(profile) = p.omics(m) {
                    let scheme = self.scheme(m).ok_or_else(|| {
                        Error::patient(&p.id, m.name(), "modality not declared in the dataset")
                    })?;
                    profile.validate(Some(scheme.num_features)).map_err(|e| match e {
                        Error::Validation { field, message, .. } => Error::Validation {
                            patient: Some(p.id.clone()),
                            field,
                            message,
                        },
                        other => other,
                    })?;
                }
            }
            if let Some(s) = p.survival {
                if !(s.time.is_finite() && s.time > 0.0) {
                    return Err(Error::patient(&p.id, "survival_time", "must be positive"));
                }
            }
        }
        Ok(())
    }

    /// Patients holding every listed modality.
    pub fn complete_for(&self, modalities: &[Modality]) -> Vec<&PatientRecord> {
        self.patients
            .iter()
            .filter(|p| modalities.iter().all(|&m| p.has(m)))
            .collect()
    }

    /// Sub-cohort of the given patient indices, sharing schemes.
    pub fn subset(&self, indices: &[usize]) -> Cohort {
        Cohort {
            patch_dim: self.patch_dim,
            schemes: self.schemes.clone(),
            patients: indices.iter().map(|&i| self.patients[i].clone()).collect(),
        }
    }
}
