//! Toy hybrid decoder: architecture presets, seeded parameters and per-layer forward passes.

mod arch;
mod forward;
mod params;
mod sequence;

pub use arch::{ArchitectureSpec, Dims, LayerKind, DESK_DIMS, NEMOTRON62_ATTENTION};
pub use forward::{
    forward_layer, rms_norm, AttentionIntermediates, LayerIntermediates, MambaIntermediates,
    DELTA_MAX, DELTA_MIN,
};
pub use params::{
    init_parameters, init_parameters_with, AttentionParams, InitScheme, LayerParams, MambaParams,
    MlpParams, Parameters,
};
pub use sequence::{HiddenSequence, TokenRole};
