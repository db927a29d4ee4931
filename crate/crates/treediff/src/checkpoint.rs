//! Versioned JSON checkpoints: a map from parameter name to shape and values.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use treediff_core::nn::{ParamStore, Tensor};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub model: String,
    pub params: BTreeMap<String, ParamEntry>,
}

impl Checkpoint {
    pub fn from_store(model: &str, store: &ParamStore) -> Self {
        let params = store
            .ids()
            .map(|id| {
                let v = store.value(id);
                let entry = ParamEntry {
                    shape: v.shape().to_vec(),
                    values: v.data().to_vec(),
                };
                (store.name(id).to_string(), entry)
            })
            .collect();
        Self {
            version: CHECKPOINT_VERSION,
            model: model.to_string(),
            params,
        }
    }

    /// Overwrites the values of `store`, whose names and shapes must match.
    pub fn load_into(&self, model: &str, store: &mut ParamStore) -> Result<()> {
        if self.version != CHECKPOINT_VERSION {
            bail!("checkpoint version {} is not supported", self.version);
        }
        if self.model != model {
            bail!("checkpoint holds a {} model, expected {model}", self.model);
        }
        if self.params.len() != store.len() {
            bail!(
                "checkpoint has {} parameters, model has {}",
                self.params.len(),
                store.len()
            );
        }
        let ids: Vec<_> = store.ids().collect();
        for id in ids {
            let name = store.name(id).to_string();
            let Some(entry) = self.params.get(&name) else {
                bail!("checkpoint lacks parameter {name}");
            };
            let tensor = Tensor::new(entry.shape.clone(), entry.values.clone())?;
            if tensor.shape() != store.value(id).shape() {
                bail!("shape mismatch for {name}");
            }
            *store.value_mut(id) = tensor;
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, serde_json::to_string(self)?.as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading checkpoint {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing checkpoint {}", path.display()))
    }
}

/// Writes through a sibling temporary file so readers never see a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).with_context(|| format!("writing {}", tmp.display()))?;
    fs::rename(&tmp, path).with_context(|| format!("renaming onto {}", path.display()))
}
