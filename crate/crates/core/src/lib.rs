//! Surgical scene graphs from annotated frames.
//!
//! Frames are turned into latent graphs with typed tool/anatomy nodes,
//! spatial edges and tool-to-anatomy action edges. A small GCN encoder is
//! trained with a weighted multi-task loss (edge existence, spatial relation,
//! action, hand identity) and then fine-tuned with a task decoder for CVS
//! assessment or triplet recognition, scored by mean average precision.

pub mod autodiff;
pub mod dot;
pub mod eval;
pub mod fixture;
pub mod geometry;
pub mod graph;
pub mod model;
pub mod schema;
pub mod synth;
