use std::io::Write;

use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use super::prefill::{setup, Runtime};
use crate::error::{Error, Result};
use crate::model::{forward_layer, LayerIntermediates, LayerKind, MambaIntermediates};
use crate::scan::implicit_weight_block;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeatmapMode {
    /// `|w_{t,j}|` with the decay product, averaged over heads.
    WithDecay,
    /// `|b_j . c_t|` without decay, averaged over groups.
    DecayFree,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct HeatmapOptions {
    pub layer: usize,
    pub mode: HeatmapMode,
    /// Write `log10(value)` instead of the raw value.
    pub log: bool,
    /// Also emit causal text columns `N <= j <= t`.
    pub text_columns: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Heatmap {
    pub layer: usize,
    pub mode: HeatmapMode,
    /// `(t, j, value)` for text rows `t` and visual (optionally text) columns `j`.
    pub cells: Vec<(usize, usize, f64)>,
}

impl Heatmap {
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(writer);
        out.write_record(["t", "j", "value"])?;
        for &(t, j, v) in &self.cells {
            out.write_record([t.to_string(), j.to_string(), v.to_string()])?;
        }
        out.flush()?;
        Ok(())
    }
}

fn decay_free(m: &MambaIntermediates<Runtime>, t: usize, j: usize) -> f64 {
    let groups = m.num_groups();
    let sum: f64 = (0..groups)
        .map(|g| {
            let b = m.b_bar.slice(ndarray::s![j, g, ..]);
            let c = m.c.slice(ndarray::s![t, g, ..]);
            (b.dot(&c) as f64).abs()
        })
        .sum();
    sum / groups as f64
}

/// Text-to-visual implicit weights of a Mamba layer on an unreduced forward pass.
pub fn emit_heatmap(cfg: &RunConfig, opts: HeatmapOptions) -> Result<Heatmap> {
    cfg.validate()?;
    let arch = cfg.architecture()?;
    let kind = *arch.layer_kinds.get(opts.layer).ok_or_else(|| {
        Error::InvalidArgument(format!(
            "layer {} out of range for {} layers",
            opts.layer, arch.num_layers
        ))
    })?;
    if kind != LayerKind::Mamba {
        return Err(Error::NotMamba(opts.layer));
    }
    let s = setup(cfg, arch)?;
    let mut h = s.prompt.sequence.clone();
    let n = h.num_visual();
    let t_len = h.len();
    let mut found = None;
    for layer in 0..=opts.layer {
        let (out, inter) = forward_layer(layer, &s.params, &h)?;
        if layer == opts.layer {
            found = Some(inter);
        }
        h = out;
    }
    let Some(LayerIntermediates::Mamba(m)) = found else {
        return Err(Error::NotMamba(opts.layer));
    };
    let col_end = |t: usize| if opts.text_columns { t + 1 } else { n };
    let mut values = vec![vec![0.0f64; t_len]; t_len - n];
    match opts.mode {
        HeatmapMode::DecayFree => {
            for t in n..t_len {
                for j in 0..col_end(t) {
                    values[t - n][j] = decay_free(&m, t, j);
                }
            }
        }
        HeatmapMode::WithDecay => {
            let heads = m.num_heads();
            let cols = if opts.text_columns { t_len } else { n };
            for head in 0..heads {
                let w = implicit_weight_block(&m.scan_inputs(head)?, n..t_len, 0..cols)?;
                for ((r, j), v) in w.indexed_iter() {
                    values[r][j] += (*v as f64).abs() / heads as f64;
                }
            }
        }
    }
    let mut cells = Vec::new();
    for t in n..t_len {
        for j in 0..col_end(t) {
            let v = values[t - n][j];
            let v = if opts.log {
                v.max(f64::MIN_POSITIVE).log10()
            } else {
                v
            };
            cells.push((t, j, v));
        }
    }
    Ok(Heatmap {
        layer: opts.layer,
        mode: opts.mode,
        cells,
    })
}
