//! The scene-graph network: edge-existence proposal, a GCN encoder over the
//! latent graph, spatial/action/hand heads, the composite loss and two-stage
//! training with a graph-level task decoder.

mod checkpoint;
mod net;
mod train;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{AutodiffError, Init};
use crate::graph::{FeatureProvider, GraphError, DEFAULT_TAU};
use crate::schema::Split;

pub use checkpoint::{Checkpoint, CHECKPOINT_VERSION};
pub use net::{encode, task_targets, Embeddings, FramePrediction, Model, Prepared};
pub use train::{train_stage1, train_stage2, EpochRecord, History, Stage1Output, Stage2Output};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("{0} split is empty")]
    EmptySplit(Split),
    #[error("checkpoint catalog {found} does not match dataset catalog {expected}")]
    CatalogMismatch { expected: String, found: String },
    #[error("dataset has no {0} labels")]
    MissingTaskLabels(Task),
    #[error("non-finite loss term: {0}")]
    NonFinite(&'static str),
    #[error("bad checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Cvs,
    Triplet,
}

impl Task {
    pub fn as_str(self) -> &'static str {
        match self {
            Task::Cvs => "cvs",
            Task::Triplet => "triplet",
        }
    }
}

impl FromStr for Task {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "cvs" => Ok(Task::Cvs),
            "triplet" => Ok(Task::Triplet),
            other => Err(format!("unknown task '{other}' (expected cvs or triplet)")),
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// How the task decoder reads the latent graph.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Readout {
    /// 2-layer MLP on mean node embedding ‖ mean retained-edge embedding.
    Mean,
    /// `Mean` plus the column-wise max, over retained edges, of a second
    /// 2-layer MLP applied to `[h_src ‖ e ‖ h_dst]`.
    MeanEdgeMax,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub d_node: usize,
    pub d_edge: usize,
    pub d_hidden: usize,
    pub gcn_layers: usize,
    pub readout: Readout,
    pub lambda_action: f64,
    pub lambda_hand: f64,
    pub tau: f64,
    pub seed: u64,
    pub init: Init,
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Build without action and hand heads at all (the spatial-only baseline).
    pub heads_detached: bool,
    /// Keep the stage-1 loss terms active during stage 2.
    pub stage2_aux: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            d_node: 15,
            d_edge: 19,
            d_hidden: 32,
            gcn_layers: 2,
            readout: Readout::MeanEdgeMax,
            lambda_action: 0.6,
            lambda_hand: 0.001,
            tau: DEFAULT_TAU,
            seed: 0,
            init: Init::Glorot,
            lr: 1e-3,
            epochs: 50,
            batch_size: 8,
            heads_detached: false,
            stage2_aux: true,
        }
    }
}

impl ModelConfig {
    /// Defaults with input dimensions taken from a feature provider.
    pub fn for_features(fp: &dyn FeatureProvider) -> Self {
        ModelConfig {
            d_node: fp.node_dim(),
            d_edge: fp.edge_dim(),
            ..ModelConfig::default()
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: &str| Err(ModelError::Config(m.to_string()));
        if self.d_node == 0 || self.d_edge == 0 || self.d_hidden == 0 {
            return bad("dimensions must be positive");
        }
        if self.gcn_layers == 0 {
            return bad("gcn_layers must be at least 1");
        }
        for (name, l) in [("lambda_action", self.lambda_action), ("lambda_hand", self.lambda_hand)] {
            if !(l.is_finite() && l >= 0.0) {
                return Err(ModelError::Config(format!("{name} must be finite and >= 0, got {l}")));
            }
        }
        if !(0.0..=1.0).contains(&self.tau) {
            return bad("tau must lie in [0, 1]");
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return bad("lr must be positive");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        Ok(())
    }
}

/// Individual loss terms before weighting.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossParts {
    pub edge_exist: f64,
    pub spatial: f64,
    pub action: f64,
    pub hand: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub edge_exist: f64,
    pub spatial: f64,
    pub action: f64,
    pub hand: f64,
    /// `edge_exist + spatial`
    pub lg: f64,
    /// `lg + lambda_action * action + lambda_hand * hand`
    pub total: f64,
}

pub fn total_loss(parts: &LossParts, lambda_action: f64, lambda_hand: f64) -> Result<LossBreakdown, ModelError> {
    for (name, v) in [
        ("edge_exist", parts.edge_exist),
        ("spatial", parts.spatial),
        ("action", parts.action),
        ("hand", parts.hand),
    ] {
        if !v.is_finite() {
            return Err(ModelError::NonFinite(name));
        }
    }
    let lg = parts.edge_exist + parts.spatial;
    Ok(LossBreakdown {
        edge_exist: parts.edge_exist,
        spatial: parts.spatial,
        action: parts.action,
        hand: parts.hand,
        lg,
        total: lg + lambda_action * parts.action + lambda_hand * parts.hand,
    })
}
