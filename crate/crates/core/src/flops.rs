//! FLOP model of a prefill pass as a function of live tokens per layer.
//!
//! A multiply-add counts as two FLOPs. With `T` live tokens, hidden width `d`:
//!
//! * attention: `2 * 4 T d^2` for the Q/K/V/O projections plus `2 * 2 T^2 d` for
//!   scores and the value mix. The causal mask is not used to halve the second term.
//! * Mamba: `2 T P + 2 T p n H` where `P = d (d + 2 G n + G) + d^2` is the
//!   per-token projection cost (x, b, c, step size, output) and `H` the head count.
//! * MLP: `2 * 2 T d d_ff`.

use serde::{Deserialize, Serialize};

use crate::model::{ArchitectureSpec, LayerKind};
use crate::schedule::RetentionPlan;

pub fn layer_flops(kind: LayerKind, tokens: usize, arch: &ArchitectureSpec) -> u64 {
    let t = tokens as u64;
    let dims = arch.dims;
    let d = dims.hidden_dim as u64;
    match kind {
        LayerKind::Attention => 2 * 4 * t * d * d + 2 * 2 * t * t * d,
        LayerKind::Mamba => {
            let (g, n) = (dims.mamba_groups as u64, dims.state_dim as u64);
            let projection = d * (d + 2 * g * n + g) + d * d;
            let scan = dims.mamba_head_dim as u64 * n * dims.mamba_heads as u64;
            2 * t * projection + 2 * t * scan
        }
        LayerKind::Mlp => 2 * 2 * t * d * dims.mlp_dim as u64,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlopsBreakdown {
    pub per_layer: Vec<u64>,
    pub total: u64,
    pub baseline_total: u64,
    pub speedup: f64,
}

/// FLOPs of `plan` on `arch` with `text_tokens` text tokens, against the unreduced pass.
///
/// Layer `l` processes `plan.tokens_entering(l) + text_tokens` tokens.
pub fn account(
    plan: &RetentionPlan,
    arch: &ArchitectureSpec,
    text_tokens: usize,
) -> FlopsBreakdown {
    let per_layer: Vec<u64> = arch
        .layer_kinds
        .iter()
        .enumerate()
        .map(|(l, &kind)| layer_flops(kind, plan.tokens_entering(l) + text_tokens, arch))
        .collect();
    let total = per_layer.iter().sum();
    let baseline_total = arch
        .layer_kinds
        .iter()
        .map(|&kind| layer_flops(kind, plan.num_visual + text_tokens, arch))
        .sum();
    FlopsBreakdown {
        per_layer,
        total,
        baseline_total,
        speedup: baseline_total as f64 / total as f64,
    }
}
