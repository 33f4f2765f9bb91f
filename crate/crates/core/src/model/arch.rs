use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LayerKind {
    #[serde(rename = "A")]
    Attention,
    #[serde(rename = "M")]
    Mamba,
    #[serde(rename = "F")]
    Mlp,
}

impl LayerKind {
    pub fn code(self) -> char {
        match self {
            LayerKind::Attention => 'A',
            LayerKind::Mamba => 'M',
            LayerKind::Mlp => 'F',
        }
    }

    /// Attention and Mamba layers can score tokens; MLP layers cannot.
    pub fn is_scoring(self) -> bool {
        !matches!(self, LayerKind::Mlp)
    }
}

impl fmt::Display for LayerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            LayerKind::Attention => "attention",
            LayerKind::Mamba => "mamba",
            LayerKind::Mlp => "mlp",
        };
        f.write_str(name)
    }
}

/// Width parameters shared by every layer of a model.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    pub hidden_dim: usize,
    pub attn_heads: usize,
    pub attn_head_dim: usize,
    pub kv_heads: usize,
    pub mamba_heads: usize,
    pub mamba_head_dim: usize,
    pub state_dim: usize,
    pub mamba_groups: usize,
    pub mlp_dim: usize,
}

/// Widths used by all presets: small enough to run a 62-layer forward on a laptop.
pub const DESK_DIMS: Dims = Dims {
    hidden_dim: 64,
    attn_heads: 4,
    attn_head_dim: 16,
    kv_heads: 2,
    mamba_heads: 4,
    mamba_head_dim: 16,
    state_dim: 16,
    mamba_groups: 2,
    mlp_dim: 128,
};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchitectureSpec {
    pub num_layers: usize,
    pub layer_kinds: Vec<LayerKind>,
    #[serde(flatten)]
    pub dims: Dims,
}

/// Attention layer positions of the 62-layer hybrid preset (0-indexed).
pub const NEMOTRON62_ATTENTION: [usize; 6] = [7, 16, 25, 34, 43, 52];

impl ArchitectureSpec {
    pub fn new(layer_kinds: Vec<LayerKind>, dims: Dims) -> Result<Self> {
        let spec = Self {
            num_layers: layer_kinds.len(),
            layer_kinds,
            dims,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Looks up a named preset: `nemotron62`, `tiny8` or `transformer-only-<pairs>`.
    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "nemotron62" => Self::new(hybrid_layout(62, &NEMOTRON62_ATTENTION), DESK_DIMS),
            "tiny8" => Self::new(hybrid_layout(8, &[1, 5]), DESK_DIMS),
            other => {
                let pairs = other
                    .strip_prefix("transformer-only-")
                    .and_then(|n| n.parse::<usize>().ok())
                    .filter(|&n| n > 0)
                    .ok_or_else(|| Error::UnknownPreset(other.to_string()))?;
                let kinds = (0..pairs)
                    .flat_map(|_| [LayerKind::Attention, LayerKind::Mlp])
                    .collect();
                Self::new(kinds, DESK_DIMS)
            }
        }
    }

    pub fn with_dims(mut self, dims: Dims) -> Result<Self> {
        self.dims = dims;
        self.validate()?;
        Ok(self)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let spec: Self = serde_json::from_str(text)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        let d = &self.dims;
        let bad = |msg: String| Err(Error::InvalidArchitecture(msg));
        if self.layer_kinds.len() != self.num_layers {
            return bad(format!(
                "num_layers is {} but {} layer kinds are listed",
                self.num_layers,
                self.layer_kinds.len()
            ));
        }
        if self.num_layers == 0 {
            return bad("an architecture needs at least one layer".into());
        }
        let counts = [
            d.hidden_dim,
            d.attn_heads,
            d.attn_head_dim,
            d.kv_heads,
            d.mamba_heads,
            d.mamba_head_dim,
            d.state_dim,
            d.mamba_groups,
            d.mlp_dim,
        ];
        if counts.contains(&0) {
            return bad("all dimensions must be positive".into());
        }
        if d.attn_heads * d.attn_head_dim != d.hidden_dim {
            return bad(format!(
                "attn_heads x attn_head_dim = {} != hidden_dim {}",
                d.attn_heads * d.attn_head_dim,
                d.hidden_dim
            ));
        }
        if d.mamba_heads * d.mamba_head_dim != d.hidden_dim {
            return bad(format!(
                "mamba_heads x mamba_head_dim = {} != hidden_dim {}",
                d.mamba_heads * d.mamba_head_dim,
                d.hidden_dim
            ));
        }
        if !d.mamba_heads.is_multiple_of(d.mamba_groups) {
            return bad(format!(
                "{} mamba heads do not split into {} groups",
                d.mamba_heads, d.mamba_groups
            ));
        }
        if !d.attn_heads.is_multiple_of(d.kv_heads) {
            return bad(format!(
                "{} query heads do not split over {} kv heads",
                d.attn_heads, d.kv_heads
            ));
        }
        Ok(())
    }

    pub fn layers_of(&self, kind: LayerKind) -> Vec<usize> {
        self.layer_kinds
            .iter()
            .enumerate()
            .filter(|(_, &k)| k == kind)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn count(&self, kind: LayerKind) -> usize {
        self.layer_kinds.iter().filter(|&&k| k == kind).count()
    }

    /// Compact layout string, one character per layer (`A`, `M`, `F`).
    pub fn layout(&self) -> String {
        self.layer_kinds.iter().map(|k| k.code()).collect()
    }

    pub fn heads_per_group(&self) -> usize {
        self.dims.mamba_heads / self.dims.mamba_groups
    }

    pub fn queries_per_kv(&self) -> usize {
        self.dims.attn_heads / self.dims.kv_heads
    }
}

impl FromStr for ArchitectureSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::preset(s)
    }
}

/// Places attention at `attention`, filling the remaining slots with Mamba and MLP
/// alternately (starting with Mamba at the first free slot).
fn hybrid_layout(num_layers: usize, attention: &[usize]) -> Vec<LayerKind> {
    let mut next_is_mamba = true;
    (0..num_layers)
        .map(|i| {
            if attention.contains(&i) {
                LayerKind::Attention
            } else {
                let kind = if next_is_mamba {
                    LayerKind::Mamba
                } else {
                    LayerKind::Mlp
                };
                next_is_mamba = !next_is_mamba;
                kind
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nemotron62_layout() {
        let spec = ArchitectureSpec::preset("nemotron62").unwrap();
        assert_eq!(spec.num_layers, 62);
        assert_eq!(spec.count(LayerKind::Mamba), 28);
        assert_eq!(spec.count(LayerKind::Mlp), 28);
        assert_eq!(spec.count(LayerKind::Attention), 6);
        assert_eq!(
            spec.layers_of(LayerKind::Attention),
            NEMOTRON62_ATTENTION.to_vec()
        );
        assert_eq!(spec.layer_kinds[7], LayerKind::Attention);
        assert_eq!(spec.layer_kinds[52], LayerKind::Attention);
        assert_eq!(
            spec.layout(),
            "MFMFMFMAFMFMFMFMAFMFMFMFMAFMFMFMFMAFMFMFMFMAFMFMFMFMAFMFMFMFMF"
        );
    }

    #[test]
    fn tiny8_layout() {
        let spec = ArchitectureSpec::preset("tiny8").unwrap();
        assert_eq!(spec.num_layers, 8);
        assert_eq!(spec.layers_of(LayerKind::Attention), vec![1, 5]);
        assert_eq!(spec.layout(), "MAFMFAMF");
    }

    #[test]
    fn transformer_only_pairs() {
        let spec = ArchitectureSpec::preset("transformer-only-3").unwrap();
        assert_eq!(spec.layout(), "AFAFAF");
        assert!(ArchitectureSpec::preset("transformer-only-0").is_err());
    }

    #[test]
    fn unknown_preset_is_an_error() {
        assert!(matches!(
            ArchitectureSpec::preset("llama"),
            Err(Error::UnknownPreset(name)) if name == "llama"
        ));
    }

    #[test]
    fn json_uses_layer_codes() {
        let spec = ArchitectureSpec::preset("tiny8").unwrap();
        let json = spec.to_json().unwrap();
        assert!(json.contains("\"M\""));
        assert!(json.contains("\"hidden_dim\": 64"));
        assert_eq!(ArchitectureSpec::from_json(&json).unwrap(), spec);
    }

    #[test]
    fn invariants_are_checked() {
        let mut dims = DESK_DIMS;
        dims.attn_heads = 3;
        assert!(ArchitectureSpec::new(vec![LayerKind::Attention], dims).is_err());
        let mut dims = DESK_DIMS;
        dims.mamba_groups = 3;
        assert!(ArchitectureSpec::new(vec![LayerKind::Mamba], dims).is_err());
        let json = r#"{"num_layers":2,"layer_kinds":["A"],"hidden_dim":64,"attn_heads":4,
            "attn_head_dim":16,"kv_heads":2,"mamba_heads":4,"mamba_head_dim":16,
            "state_dim":16,"mamba_groups":2,"mlp_dim":128}"#;
        assert!(ArchitectureSpec::from_json(json).is_err());
    }
}
