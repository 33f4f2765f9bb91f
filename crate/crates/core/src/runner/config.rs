use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::named;
use crate::error::{Error, Result};
use crate::model::{ArchitectureSpec, Dims, InitScheme, LayerKind};
use crate::schedule::{PatternKind, ReductionPattern, ScheduleSpec};

pub const CONFIG_VERSION: u32 = 1;
/// Visual tokens produced per video frame.
pub const TOKENS_PER_FRAME: usize = 144;

fn version() -> u32 {
    CONFIG_VERSION
}

fn default_text_tokens() -> usize {
    32
}

fn default_compare() -> Option<String> {
    Some("transformer-only-4".into())
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReductionMode {
    /// Query-conditioned top-K at every reduction layer.
    #[default]
    QueryBased,
    /// Window mean-pooling of visual tokens at every reduction layer.
    AvgPool,
    /// Query-based at attention layers, mean-pooling at Mamba layers.
    QueryAttnAvgPoolMamba,
}

impl ReductionMode {
    pub fn pools_at(self, kind: LayerKind) -> bool {
        match self {
            ReductionMode::QueryBased => false,
            ReductionMode::AvgPool => true,
            ReductionMode::QueryAttnAvgPoolMamba => kind == LayerKind::Mamba,
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "query" | "query-based" | "query_based" => Ok(Self::QueryBased),
            "avg-pool" | "avg_pool" | "avgpool" => Ok(Self::AvgPool),
            "query-attn-avg-pool-mamba" | "query_attn_avg_pool_mamba" | "mixed" => {
                Ok(Self::QueryAttnAvgPoolMamba)
            }
            other => Err(Error::Config(format!("unknown reduction mode `{other}`"))),
        }
    }
}

/// Plants `count` visual tokens aligned with the text query.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlantedSignal {
    pub count: usize,
    /// Weight of the query direction in a planted token (noise has weight 1).
    #[serde(default = "default_strength")]
    pub strength: f64,
}

fn default_strength() -> f64 {
    2.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnalysisToggles {
    /// Attach a stability report (reduction disabled) to prefill reports.
    #[serde(default)]
    pub stability: bool,
    /// Second preset analysed next to the main one by `analyze`.
    #[serde(default = "default_compare")]
    pub compare_preset: Option<String>,
}

impl Default for AnalysisToggles {
    fn default() -> Self {
        Self {
            stability: false,
            compare_preset: default_compare(),
        }
    }
}

/// A pattern given inline or by short name (`all-attn`, `all-attn+1m`, ...).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PatternRef {
    Named(String),
    Inline(ReductionPattern),
}

impl PatternRef {
    pub fn resolve(&self) -> Result<ReductionPattern> {
        match self {
            PatternRef::Named(name) => match named::pattern(name) {
                Some(text) => Ok(serde_json::from_str(text)?),
                None => ReductionPattern::from_name(name),
            },
            PatternRef::Inline(p) => Ok(p.clone()),
        }
    }
}

impl Default for PatternRef {
    fn default() -> Self {
        PatternRef::Inline(ReductionPattern::new(PatternKind::Baseline))
    }
}

/// A schedule given inline, by shipped name (`sigmoid-25`, ...) or by JSON file path.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ScheduleRef {
    Named(String),
    Inline(ScheduleSpec),
}

impl ScheduleRef {
    pub fn resolve(&self) -> Result<ScheduleSpec> {
        match self {
            ScheduleRef::Inline(s) => Ok(s.clone()),
            ScheduleRef::Named(name) => {
                if let Some(text) = named::schedule(name) {
                    return ScheduleSpec::from_json(text);
                }
                let path = Path::new(name);
                if path.is_file() {
                    return ScheduleSpec::from_json(&std::fs::read_to_string(path)?);
                }
                Err(Error::Config(format!(
                    "`{name}` is neither a shipped schedule ({}) nor a readable file",
                    named::schedule_names().join(", ")
                )))
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    #[serde(default = "version")]
    pub version: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preset: Option<String>,
    /// Inline architecture; takes precedence over `preset`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub architecture: Option<ArchitectureSpec>,
    /// Width override applied on top of the preset.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dims: Option<Dims>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub visual_tokens: Option<usize>,
    /// Alternative to `visual_tokens`: `frames * 144` visual tokens.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frames: Option<usize>,
    #[serde(default = "default_text_tokens")]
    pub text_tokens: usize,
    #[serde(default)]
    pub pattern: PatternRef,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schedule: Option<ScheduleRef>,
    #[serde(default)]
    pub mode: ReductionMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub planted: Option<PlantedSignal>,
    /// Defaults to `query_key_tied` when a signal is planted, `gaussian` otherwise.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub init: Option<InitScheme>,
    #[serde(default)]
    pub analysis: AnalysisToggles,
    /// Write wall-clock timing to a `timing.json` sidecar.
    #[serde(default)]
    pub record_timing: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            version: CONFIG_VERSION,
            preset: Some("tiny8".into()),
            architecture: None,
            dims: None,
            seed: 0,
            visual_tokens: None,
            frames: Some(4),
            text_tokens: default_text_tokens(),
            pattern: PatternRef::default(),
            schedule: None,
            mode: ReductionMode::default(),
            planted: None,
            init: None,
            analysis: AnalysisToggles::default(),
            record_timing: false,
            out_dir: None,
        }
    }
}

/// Command-line overrides; `None` leaves the config value alone.
#[derive(Clone, Debug, Default)]
pub struct ConfigOverrides {
    pub preset: Option<String>,
    pub frames: Option<usize>,
    pub seed: Option<u64>,
    pub pattern: Option<String>,
    pub schedule: Option<String>,
    pub mode: Option<String>,
    pub out_dir: Option<PathBuf>,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Loads a config file, or a shipped run config by name.
    pub fn load(path_or_name: &str) -> Result<Self> {
        if let Some(text) = named::run(path_or_name) {
            return Self::from_json(text);
        }
        Self::from_json(&std::fs::read_to_string(path_or_name)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn apply(&mut self, o: &ConfigOverrides) -> Result<()> {
        if let Some(p) = &o.preset {
            self.preset = Some(p.clone());
            self.architecture = None;
        }
        if let Some(f) = o.frames {
            self.frames = Some(f);
            self.visual_tokens = None;
        }
        if let Some(s) = o.seed {
            self.seed = s;
        }
        if let Some(p) = &o.pattern {
            self.pattern = PatternRef::Named(p.clone());
        }
        if let Some(s) = &o.schedule {
            self.schedule = Some(ScheduleRef::Named(s.clone()));
        }
        if let Some(m) = &o.mode {
            self.mode = ReductionMode::from_name(m)?;
        }
        if let Some(d) = &o.out_dir {
            self.out_dir = Some(d.clone());
        }
        self.validate()
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != CONFIG_VERSION {
            return Err(Error::Config(format!(
                "config version {} is not supported (expected {CONFIG_VERSION})",
                self.version
            )));
        }
        if self.visual_tokens.is_some() && self.frames.is_some() {
            return Err(Error::Config(
                "give either visual_tokens or frames, not both".into(),
            ));
        }
        if self.num_visual()? == 0 {
            return Err(Error::Config(
                "at least one visual token is required".into(),
            ));
        }
        if self.text_tokens == 0 {
            return Err(Error::Config("at least one text token is required".into()));
        }
        let pattern = self.pattern.resolve()?;
        if pattern.kind != PatternKind::Baseline && self.schedule.is_none() {
            return Err(Error::Config(format!(
                "pattern {:?} needs a schedule",
                pattern.kind
            )));
        }
        if let Some(p) = &self.planted {
            if p.count == 0 || p.count > self.num_visual()? {
                return Err(Error::Config(format!(
                    "cannot plant {} tokens among {} visual tokens",
                    p.count,
                    self.num_visual()?
                )));
            }
        }
        Ok(())
    }

    pub fn num_visual(&self) -> Result<usize> {
        match (self.visual_tokens, self.frames) {
            (Some(n), None) => Ok(n),
            (None, Some(f)) => Ok(f * TOKENS_PER_FRAME),
            (None, None) => Err(Error::Config("visual_tokens or frames is required".into())),
            (Some(_), Some(_)) => Err(Error::Config(
                "give either visual_tokens or frames, not both".into(),
            )),
        }
    }

    pub fn architecture(&self) -> Result<ArchitectureSpec> {
        let arch = match (&self.architecture, &self.preset) {
            (Some(a), _) => {
                a.validate()?;
                a.clone()
            }
            (None, Some(p)) => ArchitectureSpec::preset(p)?,
            (None, None) => return Err(Error::Config("preset or architecture is required".into())),
        };
        match self.dims {
            Some(d) => arch.with_dims(d),
            None => Ok(arch),
        }
    }

    pub fn arch_name(&self) -> String {
        match (&self.architecture, &self.preset) {
            (Some(_), _) => "custom".into(),
            (None, Some(p)) => p.clone(),
            (None, None) => "unnamed".into(),
        }
    }

    pub fn init_scheme(&self) -> InitScheme {
        self.init.unwrap_or(if self.planted.is_some() {
            InitScheme::QueryKeyTied
        } else {
            InitScheme::Gaussian
        })
    }

    pub fn pattern(&self) -> Result<ReductionPattern> {
        self.pattern.resolve()
    }

    pub fn schedule(&self) -> Result<Option<ScheduleSpec>> {
        self.schedule.as_ref().map(|s| s.resolve()).transpose()
    }
}
