use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::autodiff::{ParamStore, Tensor};
use crate::schema::TripletLabel;

use super::{Model, ModelConfig, ModelError, Task};

pub const CHECKPOINT_VERSION: u32 = 1;

/// JSON checkpoint: named parameter arrays with shapes, seed, catalog hash and
/// enough configuration to rebuild the model. Floats round-trip exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub stage: u8,
    pub seed: u64,
    pub catalog_hash: String,
    pub config: ModelConfig,
    pub task: Option<Task>,
    pub task_labels: Vec<String>,
    pub vocabulary: Vec<TripletLabel>,
    pub params: BTreeMap<String, Tensor>,
}

impl Checkpoint {
    pub fn from_model(model: &Model) -> Self {
        Checkpoint {
            version: CHECKPOINT_VERSION,
            stage: if model.has_decoder() { 2 } else { 1 },
            seed: model.params.seed(),
            catalog_hash: model.catalog_hash.clone(),
            config: model.config.clone(),
            task: model.task,
            task_labels: model.task_labels.clone(),
            vocabulary: model.vocabulary.clone(),
            params: model.params.iter().map(|(k, v)| (k.to_string(), v.clone())).collect(),
        }
    }

    pub fn into_model(self) -> Result<Model, ModelError> {
        if self.version != CHECKPOINT_VERSION {
            return Err(ModelError::Checkpoint(format!("unsupported version {}", self.version)));
        }
        let mut params = ParamStore::new(self.seed);
        for (name, t) in self.params {
            if t.data.len() != t.shape[0] * t.shape[1] {
                return Err(ModelError::Checkpoint(format!("{name}: {} values for shape {:?}", t.data.len(), t.shape)));
            }
            params.insert(&name, t)?;
        }
        Ok(Model {
            config: self.config,
            params,
            catalog_hash: self.catalog_hash,
            task: self.task,
            task_labels: self.task_labels,
            vocabulary: self.vocabulary,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("checkpoint serializes") + "\n"
    }

    pub fn from_json(text: &str) -> Result<Self, ModelError> {
        serde_json::from_str(text).map_err(|e| ModelError::Checkpoint(e.to_string()))
    }
}
