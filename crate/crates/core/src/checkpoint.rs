//! Versioned binary checkpoints.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! b"MRPHCKPT"  u32 version  u64 meta_len  meta (JSON, UTF-8)
//! u64 entry_count
//! per entry: u32 name_len  name  u32 ndim  u64 dims[ndim]
//!            f64 values[prod(dims)]  [u8; 32] sha256(name ‖ dims ‖ values)
//! ```
//!
//! Model parameters use their store names; AdamW moments are stored as
//! `optim.m.<name>` and `optim.v.<name>`.

use std::io::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{GroupingScheme, Modality};
use crate::error::{Error, Result};
use crate::model::{ModelConfig, Morpheus, TrainState};
use crate::optim::OptimizerState;
use crate::params::ParamStore;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"MRPHCKPT";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct SchemeRecord {
    modality: Modality,
    num_features: usize,
    groups: Vec<Vec<usize>>,
    names: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct TrainRecord {
    epoch: usize,
    step: u64,
    optimizer_step: u64,
    weight_decay: f64,
    lr: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Meta {
    model: ModelConfig,
    patch_dim: usize,
    schemes: Vec<SchemeRecord>,
    seed: u64,
    train: Option<TrainRecord>,
}

/// Everything a checkpoint restores.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub model: Morpheus,
    pub seed: u64,
    pub train: Option<TrainState>,
}

fn entry_digest(name: &str, dims: &[u64], payload: &[u8]) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(name.as_bytes());
    for d in dims {
        h.update(d.to_le_bytes());
    }
    h.update(payload);
    h.finalize().into()
}

fn push_entry(out: &mut Vec<u8>, name: &str, t: &Tensor) {
    let dims = [t.rows() as u64, t.cols() as u64];
    let mut payload = Vec::with_capacity(8 * t.len());
    for v in t.data() {
        payload.extend_from_slice(&v.to_le_bytes());
    }
    out.extend_from_slice(&(name.len() as u32).to_le_bytes());
    out.extend_from_slice(name.as_bytes());
    out.extend_from_slice(&(dims.len() as u32).to_le_bytes());
    for d in dims {
        out.extend_from_slice(&d.to_le_bytes());
    }
    out.extend_from_slice(&payload);
    out.extend_from_slice(&entry_digest(name, &dims, &payload));
}

pub fn encode(model: &Morpheus, seed: u64, train: Option<&TrainState>) -> Result<Vec<u8>> {
    let meta = Meta {
        model: model.config.clone(),
        patch_dim: model.patch_dim,
        schemes: model
            .schemes
            .iter()
            .map(|s| SchemeRecord {
                modality: s.modality,
                num_features: s.num_features,
                groups: s.groups.clone(),
                names: s.names.clone(),
            })
            .collect(),
        seed,
        train: train.map(|t| TrainRecord {
            epoch: t.epoch,
            step: t.step,
            optimizer_step: t.optimizer.step,
            weight_decay: t.optimizer.weight_decay,
            lr: t.optimizer.lr,
        }),
    };
    let meta = serde_json::to_vec(&meta).map_err(|e| Error::Checkpoint(e.to_string()))?;
    let mut entries: Vec<(String, &Tensor)> = model
        .store
        .iter()
        .map(|(_, p)| (p.name.clone(), &p.value))
        .collect();
    if let Some(t) = train {
        if t.optimizer.first_moment.len() != model.store.len() {
            return Err(Error::Checkpoint("optimizer does not match the model".into()));
        }
        for ((_, p), m) in model.store.iter().zip(&t.optimizer.first_moment) {
            entries.push((format!("optim.m.{}", p.name), m));
        }
        for ((_, p), v) in model.store.iter().zip(&t.optimizer.second_moment) {
            entries.push((format!("optim.v.{}", p.name), v));
        }
    }
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(meta.len() as u64).to_le_bytes());
    out.extend_from_slice(&meta);
    out.extend_from_slice(&(entries.len() as u64).to_le_bytes());
    for (name, t) in entries {
        push_entry(&mut out, &name, t);
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Checkpoint(format!("truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn len(&mut self) -> Result<usize> {
        usize::try_from(self.u64()?).map_err(|_| Error::Checkpoint("length overflow".into()))
    }
}

pub fn decode(bytes: &[u8]) -> Result<Checkpoint> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err(Error::Checkpoint("not a checkpoint (bad magic)".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let meta_len = r.len()?;
    let meta: Meta = serde_json::from_slice(r.take(meta_len)?)
        .map_err(|e| Error::Checkpoint(format!("metadata: {e}")))?;
    let count = r.len()?;
    let mut entries = ParamStore::new();
    for _ in 0..count {
        let name_len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(name_len)?)
            .map_err(|_| Error::Checkpoint("entry name is not UTF-8".into()))?
            .to_string();
        let ndim = r.u32()?;
        if ndim != 2 {
            return Err(Error::Checkpoint(format!("`{name}` has {ndim} dims, expected 2")));
        }
        let dims = [r.u64()?, r.u64()?];
        let n = dims[0]
            .checked_mul(dims[1])
            .and_then(|n| usize::try_from(n).ok())
            .and_then(|n| n.checked_mul(8))
            .ok_or_else(|| Error::Checkpoint(format!("`{name}` size overflow")))?;
        let payload = r.take(n)?;
        let digest = r.take(32)?;
        if entry_digest(&name, &dims, payload) != digest {
            return Err(Error::Checkpoint(format!("checksum mismatch in `{name}`")));
        }
        let values = payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        let t = Tensor::from_vec(dims[0] as usize, dims[1] as usize, values)?;
        entries
            .add(name.clone(), t)
            .map_err(|_| Error::Checkpoint(format!("duplicate entry `{name}`")))?;
    }
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint("trailing bytes after the last entry".into()));
    }

    let schemes = meta
        .schemes
        .into_iter()
        .map(|s| GroupingScheme::new(s.modality, s.num_features, s.groups, s.names))
        .collect::<Result<Vec<_>>>()?;
    let mut model = Morpheus::new(meta.model, meta.patch_dim, schemes, &crate::rng::SeedTree::new(0))?;
    let moment = |prefix: &str, model: &Morpheus| -> Result<Vec<Tensor>> {
        model
            .store
            .iter()
            .map(|(_, p)| {
                let name = format!("{prefix}{}", p.name);
                let id = entries
                    .id(&name)
                    .ok_or_else(|| Error::Checkpoint(format!("missing entry `{name}`")))?;
                Ok(entries.value(id).clone())
            })
            .collect()
    };
    let ids: Vec<_> = model.store.ids().collect();
    for id in ids {
        let name = model.store.get(id).name.clone();
        let src = entries
            .id(&name)
            .ok_or_else(|| Error::Checkpoint(format!("missing parameter `{name}`")))?;
        let v = entries.value(src);
        if v.shape() != model.store.value(id).shape() {
            return Err(Error::Checkpoint(format!(
                "`{name}` has shape {:?}, model expects {:?}",
                v.shape(),
                model.store.value(id).shape()
            )));
        }
        *model.store.value_mut(id) = v.clone();
    }
    let train = match meta.train {
        Some(t) => Some(TrainState {
            epoch: t.epoch,
            step: t.step,
            optimizer: OptimizerState {
                first_moment: moment("optim.m.", &model)?,
                second_moment: moment("optim.v.", &model)?,
                step: t.optimizer_step,
                weight_decay: t.weight_decay,
                lr: t.lr,
            },
        }),
        None => None,
    };
    Ok(Checkpoint {
        model,
        seed: meta.seed,
        train,
    })
}

/// Write via a temporary sibling and rename, so a crash never leaves a
/// half-written checkpoint under `path`.
pub fn save_checkpoint(path: &Path, model: &Morpheus, seed: u64, train: Option<&TrainState>) -> Result<()> {
    let bytes = encode(model, seed, train)?;
    let tmp = path.with_extension("tmp");
    let mut f = std::fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}
