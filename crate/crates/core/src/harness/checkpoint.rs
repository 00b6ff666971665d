//! `MINDCKPT`, a little-endian u64 manifest length, the JSON manifest, then
//! every tensor as little-endian f32 in manifest order.

use std::io::Write;
use std::path::Path;

use ndnet::{ParamStore, Tensor};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::trainer::{Models, Stage};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"MINDCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;
const MODEL_NAME: &str = "mind-eqa";

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("not a checkpoint (bad magic)")]
    Magic,
    #[error("truncated checkpoint: need {needed} bytes, have {have}")]
    Truncated { needed: usize, have: usize },
    #[error("corrupt manifest: {0}")]
    Manifest(String),
    #[error("unsupported checkpoint version {0}")]
    Version(u32),
    #[error("checkpoint lacks tensor {0}")]
    MissingTensor(String),
    #[error("checkpoint has unexpected tensor {0}")]
    UnknownTensor(String),
    #[error("tensor {0} appears twice")]
    Duplicate(String),
    #[error("tensor {name} has shape {found:?}, model expects {expected:?}")]
    Shape {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Element offset into the data section.
    pub offset: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub model: String,
    pub version: u32,
    pub config_hash: String,
    pub stages: Vec<Stage>,
    pub tensors: Vec<TensorEntry>,
}

/// Raw checkpoint contents, independent of any model.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub manifest: Manifest,
    pub tensors: Vec<(String, Tensor<f32>)>,
}

fn groups(models: &Models) -> [(&'static str, &ParamStore<f32>); 4] {
    [
        ("vae", &models.mind.vae_params),
        ("imagery", &models.mind.imagery_params),
        ("nav", &models.agent.nav_params),
        ("qa", &models.agent.qa_params),
    ]
}

impl Checkpoint {
    pub fn from_models(models: &Models, config_hash: &str) -> Self {
        let mut tensors = Vec::new();
        let mut entries = Vec::new();
        let mut offset = 0;
        for (g, store) in groups(models) {
            for (_, name, t) in store.iter() {
                let full = format!("{g}/{name}");
                entries.push(TensorEntry {
                    name: full.clone(),
                    shape: t.shape().to_vec(),
                    offset,
                });
                offset += t.numel();
                tensors.push((full, t.clone()));
            }
        }
        Self {
            manifest: Manifest {
                model: MODEL_NAME.into(),
                version: CHECKPOINT_VERSION,
                config_hash: config_hash.into(),
                stages: models.stages.clone(),
                tensors: entries,
            },
            tensors,
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let manifest = serde_json::to_vec(&self.manifest).expect("manifest serializes");
        let mut out = Vec::with_capacity(16 + manifest.len());
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&(manifest.len() as u64).to_le_bytes());
        out.extend_from_slice(&manifest);
        for (_, t) in &self.tensors {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CheckpointError> {
        let need = |n: usize| {
            if bytes.len() < n {
                Err(CheckpointError::Truncated {
                    needed: n,
                    have: bytes.len(),
                })
            } else {
                Ok(())
            }
        };
        need(16)?;
        if &bytes[..8] != CHECKPOINT_MAGIC {
            return Err(CheckpointError::Magic);
        }
        let mlen = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        need(16usize.saturating_add(mlen))?;
        let manifest: Manifest = serde_json::from_slice(&bytes[16..16 + mlen])
            .map_err(|e| CheckpointError::Manifest(e.to_string()))?;
        if manifest.version != CHECKPOINT_VERSION {
            return Err(CheckpointError::Version(manifest.version));
        }
        let data = &bytes[16 + mlen..];
        let mut tensors = Vec::with_capacity(manifest.tensors.len());
        let mut seen = std::collections::HashSet::new();
        for e in &manifest.tensors {
            if !seen.insert(e.name.as_str()) {
                return Err(CheckpointError::Duplicate(e.name.clone()));
            }
            let n: usize = e.shape.iter().product();
            let (start, end) = (e.offset * 4, (e.offset + n) * 4);
            if end > data.len() {
                return Err(CheckpointError::Truncated {
                    needed: 16 + mlen + end,
                    have: bytes.len(),
                });
            }
            let vals = data[start..end]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            let t = Tensor::new(e.shape.clone(), vals)
                .map_err(|err| CheckpointError::Manifest(err.to_string()))?;
            tensors.push((e.name.clone(), t));
        }
        Ok(Self { manifest, tensors })
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self, CheckpointError> {
        Self::from_bytes(&std::fs::read(path)?)
    }

    /// Copies every tensor into `models`, which must have been built with a
    /// matching architecture. Returns warnings, e.g. a config-hash mismatch.
    pub fn apply(
        &self,
        models: &mut Models,
        config_hash: &str,
    ) -> Result<Vec<String>, CheckpointError> {
        let mut warnings = Vec::new();
        if self.manifest.config_hash != config_hash {
            warnings.push(format!(
                "checkpoint config hash {} differs from current {}",
                self.manifest.config_hash, config_hash
            ));
        }
        let mut by_name: std::collections::HashMap<&str, &Tensor<f32>> =
            self.tensors.iter().map(|(n, t)| (n.as_str(), t)).collect();
        let mut updated = models.clone();
        for (g, store) in [
            ("vae", &mut updated.mind.vae_params),
            ("imagery", &mut updated.mind.imagery_params),
            ("nav", &mut updated.agent.nav_params),
            ("qa", &mut updated.agent.qa_params),
        ] {
            let names: Vec<(String, Vec<usize>)> = store
                .iter()
                .map(|(_, n, t)| (n.to_string(), t.shape().to_vec()))
                .collect();
            for (name, shape) in names {
                let full = format!("{g}/{name}");
                let t = by_name
                    .remove(full.as_str())
                    .ok_or(CheckpointError::MissingTensor(full.clone()))?;
                if t.shape() != shape.as_slice() {
                    return Err(CheckpointError::Shape {
                        name: full,
                        expected: shape,
                        found: t.shape().to_vec(),
                    });
                }
                store
                    .set(&name, t.clone())
                    .map_err(|e| CheckpointError::Manifest(e.to_string()))?;
            }
        }
        if let Some(extra) = by_name.keys().min() {
            return Err(CheckpointError::UnknownTensor(extra.to_string()));
        }
        updated.stages = self.manifest.stages.clone();
        *models = updated;
        Ok(warnings)
    }
}

/// Writes to a sibling temporary file first so an interrupted save leaves
/// the previous checkpoint intact.
pub fn save_checkpoint(
    models: &Models,
    config_hash: &str,
    path: impl AsRef<Path>,
) -> Result<(), CheckpointError> {
    let path = path.as_ref();
    let tmp = path.with_extension("ckpt.tmp");
    {
        let mut f = std::io::BufWriter::new(std::fs::File::create(&tmp)?);
        f.write_all(&Checkpoint::from_models(models, config_hash).to_bytes())?;
        f.flush()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load_checkpoint(
    models: &mut Models,
    config_hash: &str,
    path: impl AsRef<Path>,
) -> Result<Vec<String>, CheckpointError> {
    Checkpoint::read(path)?.apply(models, config_hash)
}
