// SPDX-License-Identifier: MIT OR Apache-2.0

//! Decoder-only transformer: configuration, parameters and the plan-driven
//! forward pass.

mod config;
mod forward;
mod weights;

pub use config::{FfnKind, ModelConfig, NormKind, PositionalKind};
pub use forward::{
    apply_layer, embed, execute_plan, execute_plan_with, forward, logits, middle_block_wallclock,
    ForwardOutput, LayerContext, TokenSequence, TraceBundle,
};
pub use weights::{tensor_schema, LayerWeights, Linear, ModelWeights, Norm, TensorRole, TensorSpec};
