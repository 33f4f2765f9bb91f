//! End-to-end runs: config loading, synthetic prompts, prefill with reduction,
//! analysis passes and heatmap export.

mod analyze;
mod config;
mod heatmap;
mod inputs;
pub mod named;
mod pool;
mod prefill;

pub use analyze::{run_analysis, AnalysisRun};
pub use config::{
    AnalysisToggles, ConfigOverrides, PatternRef, PlantedSignal, ReductionMode, RunConfig,
    ScheduleRef, CONFIG_VERSION, TOKENS_PER_FRAME,
};
pub use heatmap::{emit_heatmap, Heatmap, HeatmapMode, HeatmapOptions};
pub use inputs::{synthetic_prompt, SyntheticPrompt};
pub use pool::{avg_pool_visual, pool_windows};
pub use prefill::{
    plan_for, run_prefill, LayerAction, LayerTrace, PlantedSummary, ReductionReport, Runtime,
};
