//! The pilot-aware power-control transformer and the fully-connected
//! baseline: parameter containers with a canonical serialization order,
//! and forward passes expressed on the autodiff tape.

pub mod forward;
pub mod params;

pub use forward::{
    fcn_forward, fcn_infer, mmha_node, papc_block_node, papc_forward, papc_infer, FcnForward,
    PapcForward, ProjectionMode,
};
pub use params::{
    fcn_width_for_parity, AttentionHead, Block, FcnParams, LayerNorm, Linear, Model, PapcHyper,
    PapcParams,
};
