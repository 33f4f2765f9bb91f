use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::{ReductionMode, RunConfig, CONFIG_VERSION};
use super::inputs::{synthetic_prompt, SyntheticPrompt};
use super::pool::{avg_pool_visual, pool_windows};
use crate::analysis::{stability_report, StabilityReport};
use crate::error::{Error, Result};
use crate::flops::{account, FlopsBreakdown};
use crate::importance::{layer_importance, ImportanceMap};
use crate::model::{
    forward_layer, init_parameters_with, ArchitectureSpec, HiddenSequence, LayerKind, Parameters,
};
use crate::schedule::{build_plan, PatternKind, RetentionPlan};
use crate::selection::{apply_reduction, select_top_k};

/// Scalar type of every end-to-end run.
pub type Runtime = f32;

/// Model, weights and prompt for one config.
pub(crate) struct Setup {
    pub arch: ArchitectureSpec,
    pub params: Parameters<Runtime>,
    pub prompt: SyntheticPrompt<Runtime>,
}

pub(crate) fn setup(cfg: &RunConfig, arch: ArchitectureSpec) -> Result<Setup> {
    let params = init_parameters_with(&arch, cfg.seed, cfg.init_scheme());
    let prompt = synthetic_prompt(
        cfg.num_visual()?,
        cfg.text_tokens,
        arch.dims.hidden_dim,
        cfg.seed,
        cfg.planted,
    )?;
    Ok(Setup {
        arch,
        params,
        prompt,
    })
}

/// Importance maps of every attention and Mamba layer on an unreduced forward pass.
pub(crate) fn collect_maps(setup: &Setup) -> Result<Vec<ImportanceMap<Runtime>>> {
    let mut h = setup.prompt.sequence.clone();
    let n = h.num_visual();
    let mut maps = Vec::new();
    for layer in 0..setup.arch.num_layers {
        let (out, inter) = forward_layer(layer, &setup.params, &h)?;
        if let Some(map) = layer_importance(layer, &inter, n)? {
            maps.push(map);
        }
        h = out;
    }
    Ok(maps)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerAction {
    None,
    Select,
    Pool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerTrace {
    pub layer: usize,
    pub kind: LayerKind,
    pub tokens_in: usize,
    pub tokens_out: usize,
    pub action: LayerAction,
    /// SHA-256 (first 16 hex digits) of the position ids of the visual tokens leaving the layer.
    pub kept_digest: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlantedSummary {
    pub positions: Vec<usize>,
    /// Per planted token: 1 if kept intact, divided by the window length at each
    /// pooling that absorbs it, 0 once dropped.
    pub credit: Vec<f64>,
    pub survival: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReductionReport {
    pub version: u32,
    pub architecture: String,
    pub layout: String,
    pub seed: u64,
    pub num_visual: usize,
    pub num_text: usize,
    pub plan: RetentionPlan,
    pub trace: Vec<LayerTrace>,
    pub final_visual_tokens: usize,
    /// Layer mean of planned visual tokens entering each layer, in percent of `N`.
    pub compression_rate: f64,
    /// The same mean over the tokens that actually entered each layer.
    pub realized_compression_rate: f64,
    pub flops: FlopsBreakdown,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub planted: Option<PlantedSummary>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stability: Option<StabilityReport>,
    /// The config that produced the report, without its output directory.
    pub config: RunConfig,
    /// Diagnostic only; never serialized into the report so reports stay reproducible.
    #[serde(skip)]
    pub wall_clock_ms: Option<f64>,
}

impl ReductionReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Writes `report.json`, plus `timing.json` when a wall-clock time was recorded.
    pub fn write_to(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("report.json"), self.to_json()? + "\n")?;
        if let Some(ms) = self.wall_clock_ms {
            let timing = serde_json::json!({ "wall_clock_ms": ms });
            std::fs::write(
                dir.join("timing.json"),
                serde_json::to_string_pretty(&timing)? + "\n",
            )?;
        }
        Ok(())
    }
}

/// The plan a config asks for; baseline when the pattern reduces nothing.
pub fn plan_for(cfg: &RunConfig, arch: &ArchitectureSpec) -> Result<RetentionPlan> {
    let pattern = cfg.pattern()?;
    let n = cfg.num_visual()?;
    match cfg.schedule()? {
        Some(sched) => build_plan(arch, &pattern, &sched, n),
        None if pattern.kind == PatternKind::Baseline => {
            Ok(RetentionPlan::baseline(arch.num_layers, n))
        }
        None => Err(Error::Config("pattern needs a schedule".into())),
    }
}

fn digest(ids: &[usize]) -> String {
    let mut hasher = Sha256::new();
    for &id in ids {
        hasher.update((id as u64).to_le_bytes());
    }
    hex::encode(&hasher.finalize()[..8])
}

/// Where each planted token currently lives and how much of it is left.
struct PlantedTracker {
    positions: Vec<usize>,
    carrier: Vec<Option<usize>>,
    credit: Vec<f64>,
}

impl PlantedTracker {
    fn new(positions: &[usize]) -> Self {
        Self {
            positions: positions.to_vec(),
            carrier: positions.iter().map(|&p| Some(p)).collect(),
            credit: vec![1.0; positions.len()],
        }
    }

    fn after_select(&mut self, kept_ids: &[usize]) {
        for (carrier, credit) in self.carrier.iter_mut().zip(&mut self.credit) {
            if let Some(id) = *carrier {
                if kept_ids.binary_search(&id).is_err() {
                    *carrier = None;
                    *credit = 0.0;
                }
            }
        }
    }

    /// `window_ids[w]` lists the ids pooled into window `w`.
    fn after_pool(&mut self, window_ids: &[Vec<usize>]) {
        for (carrier, credit) in self.carrier.iter_mut().zip(&mut self.credit) {
            let Some(id) = *carrier else { continue };
            let w = window_ids.partition_point(|ids| ids[0] <= id) - 1;
            *carrier = Some(window_ids[w][0]);
            *credit /= window_ids[w].len() as f64;
        }
    }

    fn summary(self) -> PlantedSummary {
        let survival = if self.credit.is_empty() {
            0.0
        } else {
            self.credit.iter().sum::<f64>() / self.credit.len() as f64
        };
        PlantedSummary {
            positions: self.positions,
            credit: self.credit,
            survival,
        }
    }
}

/// Runs one reduction step on the output of layer `layer`.
#[allow(clippy::too_many_arguments)]
fn reduce(
    layer: usize,
    kind: LayerKind,
    mode: ReductionMode,
    budget: usize,
    min_tokens: usize,
    input: &HiddenSequence<Runtime>,
    output: HiddenSequence<Runtime>,
    inter: &crate::model::LayerIntermediates<Runtime>,
    tracker: &mut Option<PlantedTracker>,
) -> Result<(HiddenSequence<Runtime>, LayerAction)> {
    let live = input.num_visual();
    let budget = if budget > live {
        log::warn!("layer {layer}: budget {budget} exceeds {live} live visual tokens, clamped");
        live
    } else {
        budget
    };
    if budget >= live {
        return Ok((output, LayerAction::None));
    }
    if mode.pools_at(kind) {
        let windows = pool_windows(live, budget)?;
        if let Some(t) = tracker {
            let ids: Vec<Vec<usize>> = windows
                .iter()
                .map(|w| output.position_ids[w.clone()].to_vec())
                .collect();
            t.after_pool(&ids);
        }
        Ok((avg_pool_visual(&output, &windows)?, LayerAction::Pool))
    } else {
        let map = layer_importance(layer, inter, live)?.ok_or_else(|| {
            Error::InvalidPattern(format!("layer {layer} ({kind}) cannot score tokens"))
        })?;
        let scores = map.scores.to_vec();
        let sel = select_top_k(&scores, budget, min_tokens)?;
        let reduced = apply_reduction(&output, &sel)?;
        if let Some(t) = tracker {
            t.after_select(&reduced.position_ids[..reduced.num_visual()]);
        }
        Ok((reduced, LayerAction::Select))
    }
}

/// Prefill with per-layer reduction as configured.
///
/// A reduction layer scores tokens from its own intermediates on its input and
/// reduces its output.
pub fn run_prefill(cfg: &RunConfig) -> Result<ReductionReport> {
    cfg.validate()?;
    let start = Instant::now();
    let arch = cfg.architecture()?;
    let plan = plan_for(cfg, &arch)?;
    let setup = setup(cfg, arch)?;
    let arch = &setup.arch;
    let mut tracker = cfg
        .planted
        .map(|_| PlantedTracker::new(&setup.prompt.planted));
    let mut h = setup.prompt.sequence.clone();
    let mut trace = Vec::with_capacity(arch.num_layers);
    for layer in 0..arch.num_layers {
        let kind = arch.layer_kinds[layer];
        let tokens_in = h.num_visual();
        let (out, inter) = forward_layer(layer, &setup.params, &h)?;
        let (next, action) = if plan.is_reduction_layer(layer) {
            reduce(
                layer,
                kind,
                cfg.mode,
                plan.budgets[layer],
                plan.min_tokens,
                &h,
                out,
                &inter,
                &mut tracker,
            )?
        } else {
            (out, LayerAction::None)
        };
        log::debug!("layer {layer} {kind}: {tokens_in} -> {}", next.num_visual());
        trace.push(LayerTrace {
            layer,
            kind,
            tokens_in,
            tokens_out: next.num_visual(),
            action,
            kept_digest: digest(&next.position_ids[..next.num_visual()]),
        });
        h = next;
    }
    let stability = if cfg.analysis.stability {
        Some(stability_report(&collect_maps(&setup)?)?)
    } else {
        None
    };
    let n = plan.num_visual;
    let realized = if trace.is_empty() {
        100.0
    } else {
        100.0 * trace.iter().map(|t| t.tokens_in as f64).sum::<f64>() / (trace.len() * n) as f64
    };
    let report = ReductionReport {
        version: CONFIG_VERSION,
        architecture: cfg.arch_name(),
        layout: arch.layout(),
        seed: cfg.seed,
        num_visual: n,
        num_text: cfg.text_tokens,
        final_visual_tokens: h.num_visual(),
        compression_rate: plan.compression_rate(),
        realized_compression_rate: realized,
        flops: account(&plan, arch, cfg.text_tokens),
        plan,
        trace,
        planted: tracker.map(PlantedTracker::summary),
        stability,
        config: RunConfig {
            out_dir: None,
            ..cfg.clone()
        },
        wall_clock_ms: cfg
            .record_timing
            .then(|| start.elapsed().as_secs_f64() * 1e3),
    };
    Ok(report)
}
