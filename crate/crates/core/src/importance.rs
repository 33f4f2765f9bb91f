//! Query-conditioned importance of visual tokens.
//!
//! Attention layers score a visual token by the softmax attention it receives
//! from the text tokens; Mamba layers by the magnitude of the alignment
//! `b_bar_i . c_m` between the visual token's input projection and the text
//! tokens' output projections, with the cumulative decay left out. The
//! with-decay variant is kept as a diagnostic.

use std::io::Write;
use std::ops::Range;

use ndarray::{s, Array1, Array2, ArrayView3, Axis};

use crate::error::{Error, Result};
use crate::model::{AttentionIntermediates, LayerIntermediates, MambaIntermediates};
use crate::scalar::{all_finite, Scalar};
use crate::scan::{implicit_weight_block, ScanInputs};

/// Scores of the visual tokens at one layer.
///
/// `per_unit` holds one row per attention head or Mamba group; `scores` is
/// their mean.
#[derive(Clone, Debug, PartialEq)]
pub struct ImportanceMap<F> {
    pub layer_index: usize,
    pub scores: Array1<F>,
    pub per_unit: Array2<F>,
}

impl<F: Scalar> ImportanceMap<F> {
    pub fn from_units(layer_index: usize, per_unit: Array2<F>) -> Self {
        let scores = per_unit
            .mean_axis(Axis(0))
            .unwrap_or_else(|| Array1::zeros(per_unit.ncols()));
        Self {
            layer_index,
            scores,
            per_unit,
        }
    }

    pub fn num_tokens(&self) -> usize {
        self.scores.len()
    }

    pub fn num_units(&self) -> usize {
        self.per_unit.nrows()
    }

    /// Writes `(layer, token, score)` rows.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        write_maps_csv(std::slice::from_ref(self), writer)
    }
}

/// Writes `(layer, token, score)` rows for a sequence of maps.
pub fn write_maps_csv<F: Scalar, W: Write>(maps: &[ImportanceMap<F>], writer: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(writer);
    out.write_record(["layer", "token", "score"])?;
    for map in maps {
        for (i, s) in map.scores.iter().enumerate() {
            out.write_record([map.layer_index.to_string(), i.to_string(), s.to_string()])?;
        }
    }
    out.flush()?;
    Ok(())
}

fn require_tokens(m: usize, n: usize) -> Result<()> {
    if m == 0 || n == 0 {
        return Err(Error::InvalidArgument(format!(
            "need at least one text and one visual token, got M={m}, N={n}"
        )));
    }
    Ok(())
}

/// Mean text-to-visual softmax attention.
///
/// `q_text` is `M x H x d_h`, `k_vis` is `N x KV x d_h` with `H` a multiple of
/// `KV`; query head `h` attends through KV head `h / (H / KV)`. The softmax runs
/// over the `N` visual keys only, so each per-query distribution and the
/// averaged score vector sum to one.
pub fn attn_importance<F: Scalar>(
    layer_index: usize,
    q_text: ArrayView3<F>,
    k_vis: ArrayView3<F>,
) -> Result<ImportanceMap<F>> {
    let (m, heads, hd) = q_text.dim();
    let (n, kv_heads, k_hd) = k_vis.dim();
    require_tokens(m, n)?;
    if hd != k_hd || kv_heads == 0 || heads % kv_heads != 0 {
        return Err(Error::DimensionMismatch(format!(
            "queries {:?} and keys {:?} are incompatible",
            q_text.dim(),
            k_vis.dim()
        )));
    }
    if !all_finite(q_text.iter()) {
        return Err(Error::NonFinite("queries"));
    }
    if !all_finite(k_vis.iter()) {
        return Err(Error::NonFinite("keys"));
    }
    let per_kv = heads / kv_heads;
    let scale = F::of(1.0 / (hd as f64).sqrt());
    let inv_m = F::of(1.0 / m as f64);
    let mut per_unit = Array2::<F>::zeros((heads, n));
    let mut logits = vec![F::zero(); n];
    for h in 0..heads {
        let keys = k_vis.slice(s![.., h / per_kv, ..]);
        for q in q_text.slice(s![.., h, ..]).rows() {
            for (l, k) in logits.iter_mut().zip(keys.rows()) {
                *l = q.dot(&k) * scale;
            }
            let max = logits.iter().fold(F::neg_infinity(), |a, &b| a.max(b));
            let mut total = F::zero();
            for l in logits.iter_mut() {
                *l = (*l - max).exp();
                total = total + *l;
            }
            let norm = inv_m / total;
            for (acc, &e) in per_unit.row_mut(h).iter_mut().zip(&logits) {
                *acc = *acc + e * norm;
            }
        }
    }
    Ok(ImportanceMap::from_units(layer_index, per_unit))
}

/// Decay-free state-space score `s_i = mean_{m,g} |b_bar_i^(g) . c_m^(g)|`.
///
/// `b_bar_vis` is `N x G x n`, `c_text` is `M x G x n`. Scores are not
/// normalized; only their ranking is used.
pub fn ssm_importance<F: Scalar>(
    layer_index: usize,
    b_bar_vis: ArrayView3<F>,
    c_text: ArrayView3<F>,
) -> Result<ImportanceMap<F>> {
    let (n, groups, state) = b_bar_vis.dim();
    let (m, c_groups, c_state) = c_text.dim();
    require_tokens(m, n)?;
    if groups != c_groups || state != c_state {
        return Err(Error::DimensionMismatch(format!(
            "b_bar {:?} and c {:?} are incompatible",
            b_bar_vis.dim(),
            c_text.dim()
        )));
    }
    if !all_finite(b_bar_vis.iter()) {
        return Err(Error::NonFinite("b_bar"));
    }
    if !all_finite(c_text.iter()) {
        return Err(Error::NonFinite("c"));
    }
    let inv_m = F::of(1.0 / m as f64);
    let mut per_unit = Array2::<F>::zeros((groups, n));
    for g in 0..groups {
        let b = b_bar_vis.slice(s![.., g, ..]);
        let c = c_text.slice(s![.., g, ..]);
        // N x M alignments
        let align = b.dot(&c.t());
        for (i, row) in align.rows().into_iter().enumerate() {
            per_unit[[g, i]] = row.iter().fold(F::zero(), |a, &v| a + v.abs()) * inv_m;
        }
    }
    Ok(ImportanceMap::from_units(layer_index, per_unit))
}

/// With-decay diagnostic `s_i = mean_{t in text} |w_{t,i}|` for each scan unit.
///
/// Each entry of `units` contributes one row of `per_unit`; a Mamba layer passes
/// one [`ScanInputs`] per head. Not used for selection.
pub fn ssm_importance_with_decay<F: Scalar>(
    layer_index: usize,
    units: &[ScanInputs<F>],
    text_range: Range<usize>,
    vis_range: Range<usize>,
) -> Result<ImportanceMap<F>> {
    if units.is_empty() {
        return Err(Error::InvalidArgument("no scan units supplied".into()));
    }
    if text_range.is_empty() || vis_range.is_empty() {
        return Err(Error::InvalidRange(
            "text and visual ranges must be non-empty".into(),
        ));
    }
    if vis_range.end > text_range.start {
        return Err(Error::InvalidRange(format!(
            "visual range {vis_range:?} must precede text range {text_range:?}"
        )));
    }
    let n = vis_range.len();
    let inv_m = F::of(1.0 / text_range.len() as f64);
    let mut per_unit = Array2::<F>::zeros((units.len(), n));
    for (u, inputs) in units.iter().enumerate() {
        let w = implicit_weight_block(inputs, text_range.clone(), vis_range.clone())?;
        for (i, col) in w.columns().into_iter().enumerate() {
            per_unit[[u, i]] = col.iter().fold(F::zero(), |a, &v| a + v.abs()) * inv_m;
        }
    }
    Ok(ImportanceMap::from_units(layer_index, per_unit))
}

/// Attention-layer score from a forward pass over `num_visual` visual tokens followed by text.
pub fn attention_layer_importance<F: Scalar>(
    layer_index: usize,
    inter: &AttentionIntermediates<F>,
    num_visual: usize,
) -> Result<ImportanceMap<F>> {
    attn_importance(
        layer_index,
        inter.queries.slice(s![num_visual.., .., ..]),
        inter.keys.slice(s![..num_visual, .., ..]),
    )
}

/// Decay-free Mamba-layer score from a forward pass.
pub fn mamba_layer_importance<F: Scalar>(
    layer_index: usize,
    inter: &MambaIntermediates<F>,
    num_visual: usize,
) -> Result<ImportanceMap<F>> {
    ssm_importance(
        layer_index,
        inter.b_bar.slice(s![..num_visual, .., ..]),
        inter.c.slice(s![num_visual.., .., ..]),
    )
}

/// With-decay Mamba-layer score from a forward pass, one unit per head.
pub fn mamba_layer_importance_with_decay<F: Scalar>(
    layer_index: usize,
    inter: &MambaIntermediates<F>,
    num_visual: usize,
) -> Result<ImportanceMap<F>> {
    let t_len = inter.x.dim().0;
    let units = (0..inter.num_heads())
        .map(|h| inter.scan_inputs(h))
        .collect::<Result<Vec<_>>>()?;
    ssm_importance_with_decay(layer_index, &units, num_visual..t_len, 0..num_visual)
}

/// Kind-appropriate score for any layer; `None` for MLP layers.
pub fn layer_importance<F: Scalar>(
    layer_index: usize,
    inter: &LayerIntermediates<F>,
    num_visual: usize,
) -> Result<Option<ImportanceMap<F>>> {
    match inter {
        LayerIntermediates::Attention(a) => {
            attention_layer_importance(layer_index, a, num_visual).map(Some)
        }
        LayerIntermediates::Mamba(m) => {
            mamba_layer_importance(layer_index, m, num_visual).map(Some)
        }
        LayerIntermediates::Mlp => Ok(None),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use ndarray::{Array1, Array3};

    #[test]
    fn identical_keys_give_uniform_scores() {
        let q = Array3::from_shape_fn((1, 1, 4), |(_, _, k)| k as f64 - 1.0);
        let k = Array3::from_elem((5, 1, 4), 0.3);
        let map = attn_importance(0, q.view(), k.view()).unwrap();
        for &s in map.scores.iter() {
            assert_relative_eq!(s, 0.2, epsilon = 1e-15);
        }
    }

    #[test]
    fn two_token_softmax() {
        // logits q.k / sqrt(d_h) with d_h = 1: [0, ln 3]
        let q = Array3::from_elem((1, 1, 1), 1.0);
        let k = Array3::from_shape_vec((2, 1, 1), vec![0.0, 3f64.ln()]).unwrap();
        let map = attn_importance(0, q.view(), k.view()).unwrap();
        assert_relative_eq!(map.scores[0], 0.25, epsilon = 1e-15);
        assert_relative_eq!(map.scores[1], 0.75, epsilon = 1e-15);
    }

    #[test]
    fn heads_are_averaged() {
        // head 0 sees identical keys (uniform); head 1 puts all mass on token 0
        let q = Array3::from_shape_vec((1, 2, 1), vec![1.0, 1.0]).unwrap();
        let mut k = Array3::<f64>::zeros((4, 2, 1));
        k[[0, 1, 0]] = 1e4;
        let map = attn_importance(0, q.view(), k.view()).unwrap();
        let expected = [0.625, 0.125, 0.125, 0.125];
        for (s, e) in map.scores.iter().zip(expected) {
            assert_relative_eq!(*s, e, epsilon = 1e-12);
        }
        assert_relative_eq!(map.scores.sum(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn grouped_query_heads_share_keys() {
        let q = Array3::from_shape_fn((3, 4, 2), |(m, h, k)| (m + h * 2 + k) as f64 * 0.1);
        let k = Array3::from_shape_fn((6, 2, 2), |(i, g, c)| ((i * 3 + g + c) % 5) as f64 * 0.2);
        let gqa = attn_importance(0, q.view(), k.view()).unwrap();
        // expand keys to one per query head and compare
        let expanded = Array3::from_shape_fn((6, 4, 2), |(i, h, c)| k[[i, h / 2, c]]);
        let mha = attn_importance(0, q.view(), expanded.view()).unwrap();
        assert_eq!(gqa, mha);
        for row in gqa.per_unit.rows() {
            assert_relative_eq!(row.sum(), 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn ssm_dot_product_example() {
        let b = Array3::from_shape_vec((1, 1, 2), vec![1.0, 2.0]).unwrap();
        let c = Array3::from_shape_vec((1, 1, 2), vec![0.5, -1.0]).unwrap();
        let map = ssm_importance(3, b.view(), c.view()).unwrap();
        assert_eq!(map.layer_index, 3);
        assert_relative_eq!(map.scores[0], 1.5);
    }

    #[test]
    fn orthogonal_alignment_scores_zero() {
        let b = Array3::from_shape_vec((2, 1, 2), vec![1.0, 0.0, 0.0, 2.0]).unwrap();
        let c = Array3::from_shape_vec((2, 1, 2), vec![0.0, 1.0, 0.0, -3.0]).unwrap();
        let map = ssm_importance(0, b.view(), c.view()).unwrap();
        assert_eq!(map.scores[0], 0.0);
        assert!(map.scores[1] > 0.0);
    }

    #[test]
    fn ssm_scores_are_homogeneous_in_c() {
        let b = Array3::from_shape_fn((5, 2, 3), |(i, g, k)| ((i + g * 2 + k) % 4) as f64 - 1.5);
        let c = Array3::from_shape_fn((3, 2, 3), |(m, g, k)| ((m * 2 + g + k) % 3) as f64 - 0.7);
        let base = ssm_importance(0, b.view(), c.view()).unwrap();
        let scaled = ssm_importance(0, b.view(), (&c * 2.5).view()).unwrap();
        for (a, s) in base.scores.iter().zip(scaled.scores.iter()) {
            assert_relative_eq!(a * 2.5, *s, max_relative = 1e-14);
        }
    }

    #[test]
    fn decay_geometric_closed_form() {
        // one text position at t = 6, visual tokens 0..6, b_bar . c = 1, a_bar = 0.5
        let t = 7;
        let inputs = ScanInputs::new(
            Array2::ones((t, 1)),
            Array1::from_elem(t, 0.5),
            Array2::ones((t, 1)),
            Array2::ones((t, 1)),
        )
        .unwrap();
        let map = ssm_importance_with_decay(0, &[inputs], 6..7, 0..6).unwrap();
        for i in 0..6 {
            assert_relative_eq!(
                map.scores[i],
                0.5f64.powi(6 - i as i32),
                max_relative = 1e-14
            );
        }
    }

    #[test]
    fn decay_favours_late_tokens() {
        let t = 70;
        let inputs = ScanInputs::new(
            Array2::ones((t, 2)),
            Array1::from_elem(t, 0.5),
            Array2::from_elem((t, 3), 0.4),
            Array2::from_elem((t, 3), 0.9),
        )
        .unwrap();
        let map = ssm_importance_with_decay(0, &[inputs], 64..70, 0..64).unwrap();
        assert!(map.scores[63] > map.scores[0]);
    }

    #[test]
    fn near_unit_decay_approaches_decay_free_score() {
        let t = 12;
        let b = Array2::from_shape_fn((t, 2), |(i, k)| ((i + k) % 3) as f64 - 0.5);
        let c = Array2::from_shape_fn((t, 2), |(i, k)| ((2 * i + k) % 5) as f64 * 0.3 - 0.2);
        let inputs = ScanInputs::new(
            Array2::ones((t, 1)),
            Array1::from_elem(t, 1.0 - 1e-12),
            b.clone(),
            c.clone(),
        )
        .unwrap();
        let with = ssm_importance_with_decay(0, &[inputs], 8..12, 0..8).unwrap();
        let b3 = b.slice(s![..8, ..]).to_owned().insert_axis(Axis(1));
        let c3 = c.slice(s![8.., ..]).to_owned().insert_axis(Axis(1));
        let free = ssm_importance(0, b3.view(), c3.view()).unwrap();
        for (w, f) in with.scores.iter().zip(free.scores.iter()) {
            assert!(*w <= *f + 1e-12);
            assert_relative_eq!(*w, *f, max_relative = 1e-9);
        }
    }

    #[test]
    fn errors_are_explicit() {
        let q = Array3::<f64>::zeros((0, 1, 2));
        let k = Array3::<f64>::zeros((3, 1, 2));
        assert!(attn_importance(0, q.view(), k.view()).is_err());
        let q = Array3::from_elem((1, 1, 2), f64::NAN);
        assert!(matches!(
            attn_importance(0, q.view(), k.view()),
            Err(Error::NonFinite(_))
        ));
        let inputs = ScanInputs::new(
            Array2::ones((4, 1)),
            Array1::from_elem(4, 0.5),
            Array2::ones((4, 1)),
            Array2::ones((4, 1)),
        )
        .unwrap();
        assert!(matches!(
            ssm_importance_with_decay(0, &[inputs], 1..3, 2..4),
            Err(Error::InvalidRange(_))
        ));
    }

    #[test]
    fn csv_rows() {
        let map = ImportanceMap::from_units(
            2,
            Array2::from_shape_vec((1, 2), vec![0.25f64, 0.75]).unwrap(),
        );
        let mut buf = Vec::new();
        map.write_csv(&mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "layer,token,score\n2,0,0.25\n2,1,0.75\n"
        );
    }
}
