//! Forward pass, losses and baseline variants.

mod forward;
mod params;
mod persist;

pub use forward::{
    argmax, attention_scores, blend, confidence, consistency_loss, edge_conv, forward,
    loss_and_gradients, project, total_loss, Aggregation, ConsistencyTarget, ForwardOptions,
    ForwardTrace, LossBreakdown, Variant,
};
pub use params::{ModelParams, PARAM_NAMES};
pub use persist::{ModelFile, NamedTensor, MODEL_SCHEMA_VERSION};
