//! Retention schedules, reduction patterns and per-layer token budgets.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ArchitectureSpec, LayerKind};

/// Budget floor applied by every shipped configuration.
pub const DEFAULT_MIN_TOKENS: usize = 144;

fn default_min_tokens() -> usize {
    DEFAULT_MIN_TOKENS
}

/// One entry of a step table: `ratio` holds for layers `first..=last`
/// (`last = None` extends to the final layer).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRange {
    pub first: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub last: Option<usize>,
    pub ratio: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SigmoidParams {
    /// Steepness.
    pub k: f64,
    /// Midpoint as a fraction of depth.
    pub x0: f64,
    pub r_start: f64,
    pub r_end: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ScheduleKind {
    StepDecay { steps: Vec<StepRange> },
    Sigmoid(SigmoidParams),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScheduleSpec {
    #[serde(flatten)]
    pub kind: ScheduleKind,
    #[serde(default = "default_min_tokens")]
    pub min_tokens: usize,
}

impl ScheduleSpec {
    pub fn sigmoid(k: f64, x0: f64, r_start: f64, r_end: f64) -> Self {
        Self {
            kind: ScheduleKind::Sigmoid(SigmoidParams {
                k,
                x0,
                r_start,
                r_end,
            }),
            min_tokens: DEFAULT_MIN_TOKENS,
        }
    }

    pub fn step(steps: Vec<StepRange>) -> Self {
        Self {
            kind: ScheduleKind::StepDecay { steps },
            min_tokens: DEFAULT_MIN_TOKENS,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let spec: Self = serde_json::from_str(text)?;
        spec.validate_ratios()?;
        Ok(spec)
    }

    fn validate_ratios(&self) -> Result<()> {
        let in_unit = |r: f64| r > 0.0 && r <= 1.0;
        match &self.kind {
            ScheduleKind::StepDecay { steps } => {
                if steps.is_empty() {
                    return Err(Error::InvalidSchedule("empty step table".into()));
                }
                if let Some(s) = steps.iter().find(|s| !in_unit(s.ratio)) {
                    return Err(Error::InvalidSchedule(format!(
                        "ratio {} outside (0, 1]",
                        s.ratio
                    )));
                }
            }
            ScheduleKind::Sigmoid(p) => {
                if !in_unit(p.r_start) || !in_unit(p.r_end) || p.r_end > p.r_start {
                    return Err(Error::InvalidSchedule(format!(
                        "need 0 < r_end <= r_start <= 1, got r_start {} r_end {}",
                        p.r_start, p.r_end
                    )));
                }
                if !p.k.is_finite() || !p.x0.is_finite() {
                    return Err(Error::InvalidSchedule(
                        "non-finite sigmoid parameter".into(),
                    ));
                }
            }
        }
        Ok(())
    }

    /// Checks ratios and, for step tables, that the ranges partition `0..num_layers`.
    pub fn validate(&self, num_layers: usize) -> Result<()> {
        self.validate_ratios()?;
        if let ScheduleKind::StepDecay { steps } = &self.kind {
            let mut next = 0usize;
            for (i, s) in steps.iter().enumerate() {
                if s.first != next {
                    return Err(Error::InvalidSchedule(format!(
                        "step {i} starts at layer {} but layer {next} is next",
                        s.first
                    )));
                }
                let last = s.last.unwrap_or(num_layers.saturating_sub(1));
                if last < s.first {
                    return Err(Error::InvalidSchedule(format!("step {i} is empty")));
                }
                next = last + 1;
            }
            if next != num_layers {
                return Err(Error::InvalidSchedule(format!(
                    "step table covers layers 0..{next}, model has {num_layers}"
                )));
            }
        }
        Ok(())
    }

    /// Retention ratio the schedule prescribes at `layer` of a `num_layers`-deep model.
    pub fn ratio(&self, layer: usize, num_layers: usize) -> Result<f64> {
        match &self.kind {
            ScheduleKind::StepDecay { steps } => step_retention(layer, steps, num_layers),
            ScheduleKind::Sigmoid(p) => Ok(sigmoid_retention(layer, num_layers, p)),
        }
    }
}

/// `r_end + (r_start - r_end) * sigmoid(-k (layer / L - x0))`.
pub fn sigmoid_retention(layer: usize, num_layers: usize, p: &SigmoidParams) -> f64 {
    let z = -p.k * (layer as f64 / num_layers as f64 - p.x0);
    p.r_end + (p.r_start - p.r_end) * logistic(z)
}

fn logistic(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Ratio of the step range covering `layer`.
pub fn step_retention(layer: usize, steps: &[StepRange], num_layers: usize) -> Result<f64> {
    let mut hits = steps.iter().filter(|s| {
        let last = s.last.unwrap_or(num_layers.saturating_sub(1));
        s.first <= layer && layer <= last
    });
    match (hits.next(), hits.next()) {
        (Some(s), None) => Ok(s.ratio),
        _ => Err(Error::UncoveredLayer(layer)),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PatternKind {
    Baseline,
    FirstAttn,
    AllAttn,
    FirstMamba,
    SecondMamba,
    AllAttnPlusM,
    AllLayers,
}

/// Which layers reduce tokens.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReductionPattern {
    pub kind: PatternKind,
    /// Mamba reductions per inter-attention gap (`AllAttnPlusM`).
    #[serde(default)]
    pub mamba_per_gap: usize,
    /// 1-based Mamba ordinals inside each gap; empty picks the default placement.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub mamba_gap_positions: Vec<usize>,
}

impl ReductionPattern {
    pub fn new(kind: PatternKind) -> Self {
        Self {
            kind,
            mamba_per_gap: 0,
            mamba_gap_positions: Vec::new(),
        }
    }

    pub fn all_attn_plus_mamba(per_gap: usize, positions: Vec<usize>) -> Self {
        Self {
            kind: PatternKind::AllAttnPlusM,
            mamba_per_gap: per_gap,
            mamba_gap_positions: positions,
        }
    }

    /// Short names used on the command line.
    pub fn from_name(name: &str) -> Result<Self> {
        let p = match name {
            "baseline" | "none" => Self::new(PatternKind::Baseline),
            "first-attn" => Self::new(PatternKind::FirstAttn),
            "all-attn" => Self::new(PatternKind::AllAttn),
            "first-mamba" => Self::new(PatternKind::FirstMamba),
            "second-mamba" => Self::new(PatternKind::SecondMamba),
            "all-attn+1m" => Self::all_attn_plus_mamba(1, vec![2]),
            "all-attn+2m" => Self::all_attn_plus_mamba(2, vec![2, 3]),
            "all-attn+2m-1-3" => Self::all_attn_plus_mamba(2, vec![1, 3]),
            "all" | "all-layers" => Self::new(PatternKind::AllLayers),
            other => {
                return Err(Error::InvalidPattern(format!(
                    "unknown pattern name `{other}`"
                )))
            }
        };
        Ok(p)
    }

    fn gap_positions(&self) -> Result<Vec<usize>> {
        if !self.mamba_gap_positions.is_empty() {
            if self.mamba_gap_positions.contains(&0) {
                return Err(Error::InvalidPattern("gap positions are 1-based".into()));
            }
            if self.mamba_per_gap != 0 && self.mamba_per_gap != self.mamba_gap_positions.len() {
                return Err(Error::InvalidPattern(format!(
                    "mamba_per_gap {} disagrees with {} gap positions",
                    self.mamba_per_gap,
                    self.mamba_gap_positions.len()
                )));
            }
            return Ok(self.mamba_gap_positions.clone());
        }
        match self.mamba_per_gap {
            0 => Err(Error::InvalidPattern(
                "mamba_per_gap must be positive".into(),
            )),
            1 => Ok(vec![2]),
            2 => Ok(vec![2, 3]),
            k => Ok((1..=k).collect()),
        }
    }

    /// Resolves the pattern to an ascending list of layer indices of `arch`.
    ///
    /// `AllLayers` takes every attention and Mamba layer except the first layer of
    /// the model and the last scoring-capable layer. `AllAttnPlusM` splits the
    /// Mamba layers into the gaps around the attention layers (before the first,
    /// between each pair, after the last) and adds the requested ordinals of
    /// each gap; gaps without that ordinal contribute nothing.
    pub fn resolve(&self, arch: &ArchitectureSpec) -> Result<Vec<usize>> {
        let attn = arch.layers_of(LayerKind::Attention);
        let mamba = arch.layers_of(LayerKind::Mamba);
        let need = |layers: &[usize], what: &str| -> Result<()> {
            if layers.is_empty() {
                Err(Error::InvalidPattern(format!(
                    "pattern {:?} needs {what} layers, architecture has none",
                    self.kind
                )))
            } else {
                Ok(())
            }
        };
        let layers = match self.kind {
            PatternKind::Baseline => Vec::new(),
            PatternKind::FirstAttn => {
                need(&attn, "attention")?;
                vec![attn[0]]
            }
            PatternKind::AllAttn => {
                need(&attn, "attention")?;
                attn
            }
            PatternKind::FirstMamba => {
                need(&mamba, "Mamba")?;
                vec![mamba[0]]
            }
            PatternKind::SecondMamba => {
                if mamba.len() < 2 {
                    return Err(Error::InvalidPattern(
                        "second-mamba needs at least two Mamba layers".into(),
                    ));
                }
                vec![mamba[1]]
            }
            PatternKind::AllAttnPlusM => {
                need(&attn, "attention")?;
                need(&mamba, "Mamba")?;
                let positions = self.gap_positions()?;
                let mut set: BTreeSet<usize> = attn.iter().copied().collect();
                let mut bounds = vec![None];
                bounds.extend(attn.iter().map(|&a| Some(a)));
                bounds.push(None);
                for w in bounds.windows(2) {
                    let lo = w[0];
                    let hi = w[1];
                    let gap: Vec<usize> = mamba
                        .iter()
                        .copied()
                        .filter(|&m| lo.is_none_or(|lo| m > lo) && hi.is_none_or(|hi| m < hi))
                        .collect();
                    for &pos in &positions {
                        if let Some(&layer) = gap.get(pos - 1) {
                            set.insert(layer);
                        }
                    }
                }
                set.into_iter().collect()
            }
            PatternKind::AllLayers => {
                let scoring: Vec<usize> = (0..arch.num_layers)
                    .filter(|&i| arch.layer_kinds[i].is_scoring())
                    .collect();
                if scoring.is_empty() {
                    return Err(Error::InvalidPattern(
                        "architecture has no attention or Mamba layers".into(),
                    ));
                }
                let last = *scoring.last().expect("non-empty");
                scoring
                    .into_iter()
                    .filter(|&i| i != 0 && i != last)
                    .collect()
            }
        };
        Ok(layers)
    }
}

/// Per-layer ratios and budgets of one plan. `budgets[l]` is the number of visual
/// tokens alive after layer `l`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RetentionPlan {
    pub num_visual: usize,
    pub min_tokens: usize,
    pub ratios: Vec<f64>,
    pub budgets: Vec<usize>,
    pub reduction_layers: Vec<usize>,
}

impl RetentionPlan {
    pub fn baseline(num_layers: usize, num_visual: usize) -> Self {
        Self {
            num_visual,
            min_tokens: DEFAULT_MIN_TOKENS,
            ratios: vec![1.0; num_layers],
            budgets: vec![num_visual; num_layers],
            reduction_layers: Vec::new(),
        }
    }

    pub fn num_layers(&self) -> usize {
        self.budgets.len()
    }

    /// Visual tokens entering layer `layer`.
    pub fn tokens_entering(&self, layer: usize) -> usize {
        if layer == 0 {
            self.num_visual
        } else {
            self.budgets[layer - 1]
        }
    }

    pub fn is_reduction_layer(&self, layer: usize) -> bool {
        self.reduction_layers.binary_search(&layer).is_ok()
    }

    /// Visual tokens left after the last layer.
    pub fn final_budget(&self) -> usize {
        self.budgets.last().copied().unwrap_or(self.num_visual)
    }

    /// Layer-averaged share of visual tokens alive at the input of each layer, in percent.
    pub fn compression_rate(&self) -> f64 {
        if self.num_layers() == 0 || self.num_visual == 0 {
            return 100.0;
        }
        let total: f64 = (0..self.num_layers())
            .map(|l| self.tokens_entering(l) as f64)
            .sum();
        100.0 * total / (self.num_layers() as f64 * self.num_visual as f64)
    }
}

/// Resolves a pattern and schedule into per-layer budgets for `num_visual` tokens.
///
/// Ratios are sampled at reduction layers, made non-increasing with a running
/// minimum, and held between reductions. A budget is
/// `max(min_tokens, round(r * N))`, never above the previous budget; when
/// `N <= min_tokens` nothing is reduced.
pub fn build_plan(
    arch: &ArchitectureSpec,
    pattern: &ReductionPattern,
    sched: &ScheduleSpec,
    num_visual: usize,
) -> Result<RetentionPlan> {
    if num_visual == 0 {
        return Err(Error::InvalidArgument(
            "plan needs at least one visual token".into(),
        ));
    }
    let num_layers = arch.num_layers;
    let reduction_layers = pattern.resolve(arch)?;
    if !reduction_layers.is_empty() {
        sched.validate(num_layers)?;
    }
    let mut ratios = Vec::with_capacity(num_layers);
    let mut budgets = Vec::with_capacity(num_layers);
    let mut ratio = 1.0f64;
    let mut budget = num_visual;
    for layer in 0..num_layers {
        if reduction_layers.binary_search(&layer).is_ok() {
            ratio = ratio.min(sched.ratio(layer, num_layers)?);
            if num_visual > sched.min_tokens {
                let target = (ratio * num_visual as f64).round() as usize;
                budget = target.max(sched.min_tokens).min(budget);
            }
        }
        ratios.push(ratio);
        budgets.push(budget);
    }
    Ok(RetentionPlan {
        num_visual,
        min_tokens: sched.min_tokens,
        ratios,
        budgets,
        reduction_layers,
    })
}
