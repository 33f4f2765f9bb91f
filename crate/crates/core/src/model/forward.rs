use ndarray::{s, Array2, Array3, ArrayView2};

use super::params::{AttentionParams, LayerParams, MambaParams, MlpParams, Parameters};
use super::sequence::HiddenSequence;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::scan::{selective_scan, ScanInputs};

/// Step sizes are clamped into `[DELTA_MIN, DELTA_MAX]` so that `exp(-delta * A)` stays
/// strictly inside `(0, 1)` in `f32` for decay rates up to a few hundred.
pub const DELTA_MIN: f64 = 1e-4;
pub const DELTA_MAX: f64 = 1.0;

const RMS_EPS: f64 = 1e-6;

/// Query/key projections of an attention layer, laid out `T x heads x head_dim`.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionIntermediates<F> {
    pub queries: Array3<F>,
    pub keys: Array3<F>,
}

/// Projected scan inputs of a Mamba layer. `b_bar`, `c` and `delta` are per group,
/// `x`, `a_bar` and the scan outputs per head.
#[derive(Clone, Debug, PartialEq)]
pub struct MambaIntermediates<F> {
    /// `T x heads x p`
    pub x: Array3<F>,
    /// `T x groups x n`, already scaled by `delta`.
    pub b_bar: Array3<F>,
    /// `T x groups x n`
    pub c: Array3<F>,
    /// `T x groups`
    pub delta: Array2<F>,
    /// `T x heads`
    pub a_bar: Array2<F>,
    /// `T x heads x p`, scan output before the output projection.
    pub head_outputs: Array3<F>,
    pub heads_per_group: usize,
}

impl<F: Scalar> MambaIntermediates<F> {
    pub fn num_heads(&self) -> usize {
        self.x.dim().1
    }

    pub fn num_groups(&self) -> usize {
        self.b_bar.dim().1
    }

    pub fn group_of(&self, head: usize) -> usize {
        head / self.heads_per_group
    }

    /// Scan inputs of one head, with its group's `b_bar` and `c` broadcast in.
    pub fn scan_inputs(&self, head: usize) -> Result<ScanInputs<F>> {
        let g = self.group_of(head);
        ScanInputs::new(
            self.x.slice(s![.., head, ..]).to_owned(),
            self.a_bar.column(head).to_owned(),
            self.b_bar.slice(s![.., g, ..]).to_owned(),
            self.c.slice(s![.., g, ..]).to_owned(),
        )
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum LayerIntermediates<F> {
    Attention(AttentionIntermediates<F>),
    Mamba(MambaIntermediates<F>),
    Mlp,
}

/// Parameter-free RMS normalization of each row; a zero row stays zero.
pub fn rms_norm<F: Scalar>(h: ArrayView2<F>) -> Array2<F> {
    let d = F::of(h.ncols().max(1) as f64);
    let eps = F::of(RMS_EPS);
    let mut out = h.to_owned();
    for mut row in out.rows_mut() {
        let ms = row.iter().fold(F::zero(), |acc, &v| acc + v * v) / d;
        let inv = (ms + eps).sqrt().recip();
        row.mapv_inplace(|v| v * inv);
    }
    out
}

/// Runs layer `layer_index` on `h` as a pre-norm residual block `h + f(rms_norm(h))`.
///
/// Attention is causal grouped-query softmax attention; Mamba runs one selective
/// scan per head; MLP is `relu(u W_in) W_out`. No positional encoding is applied.
pub fn forward_layer<F: Scalar>(
    layer_index: usize,
    params: &Parameters<F>,
    h: &HiddenSequence<F>,
) -> Result<(HiddenSequence<F>, LayerIntermediates<F>)> {
    let layer = params.layers.get(layer_index).ok_or_else(|| {
        Error::InvalidArgument(format!(
            "layer {layer_index} out of range for {} layers",
            params.layers.len()
        ))
    })?;
    let d = params.spec.dims.hidden_dim;
    if h.hidden_dim() != d {
        return Err(Error::DimensionMismatch(format!(
            "hidden vectors have width {}, parameters expect {d}",
            h.hidden_dim()
        )));
    }
    if !crate::scalar::all_finite(h.vectors.iter()) {
        return Err(Error::NonFinite("hidden vectors"));
    }
    let u = rms_norm(h.vectors.view());
    let (delta_h, inter) = match layer {
        LayerParams::Attention(p) => {
            let (out, inter) = attention(p, &params.spec, &u)?;
            (out, LayerIntermediates::Attention(inter))
        }
        LayerParams::Mamba(p) => {
            let (out, inter) = mamba(p, &params.spec, &u)?;
            (out, LayerIntermediates::Mamba(inter))
        }
        LayerParams::Mlp(p) => (mlp(p, &u)?, LayerIntermediates::Mlp),
    };
    let out = &h.vectors + &delta_h;
    Ok((h.with_vectors(out), inter))
}

fn check_shape<F>(name: &str, w: &Array2<F>, rows: usize, cols: usize) -> Result<()> {
    if w.dim() != (rows, cols) {
        return Err(Error::DimensionMismatch(format!(
            "{name} is {:?}, expected ({rows}, {cols})",
            w.dim()
        )));
    }
    Ok(())
}

fn attention<F: Scalar>(
    p: &AttentionParams<F>,
    spec: &super::ArchitectureSpec,
    u: &Array2<F>,
) -> Result<(Array2<F>, AttentionIntermediates<F>)> {
    let dims = spec.dims;
    let (t_len, d) = u.dim();
    let hd = dims.attn_head_dim;
    check_shape("wq", &p.wq, d, dims.attn_heads * hd)?;
    check_shape("wk", &p.wk, d, dims.kv_heads * hd)?;
    check_shape("wv", &p.wv, d, dims.kv_heads * hd)?;
    check_shape("wo", &p.wo, dims.attn_heads * hd, d)?;

    let q = u.dot(&p.wq);
    let k = u.dot(&p.wk);
    let v = u.dot(&p.wv);
    let scale = F::of(1.0 / (hd as f64).sqrt());
    let per_kv = spec.queries_per_kv();
    let mut heads_out = Array2::<F>::zeros((t_len, dims.attn_heads * hd));
    for head in 0..dims.attn_heads {
        let g = head / per_kv;
        let q_h = q.slice(s![.., head * hd..(head + 1) * hd]);
        let k_h = k.slice(s![.., g * hd..(g + 1) * hd]);
        let v_h = v.slice(s![.., g * hd..(g + 1) * hd]);
        let mut scores = q_h.dot(&k_h.t());
        for (t, mut row) in scores.rows_mut().into_iter().enumerate() {
            causal_softmax_row(row.as_slice_mut().expect("row-major scores"), t, scale);
        }
        heads_out
            .slice_mut(s![.., head * hd..(head + 1) * hd])
            .assign(&scores.dot(&v_h));
    }
    let out = heads_out.dot(&p.wo);
    let inter = AttentionIntermediates {
        queries: q
            .into_shape_with_order((t_len, dims.attn_heads, hd))
            .expect("contiguous projection"),
        keys: k
            .into_shape_with_order((t_len, dims.kv_heads, hd))
            .expect("contiguous projection"),
    };
    Ok((out, inter))
}

/// Softmax over `row[..=t]` of `row * scale`; entries after `t` are zeroed.
fn causal_softmax_row<F: Scalar>(row: &mut [F], t: usize, scale: F) {
    let (live, masked) = row.split_at_mut(t + 1);
    masked.iter_mut().for_each(|v| *v = F::zero());
    let max = live
        .iter()
        .fold(F::neg_infinity(), |m, &v| m.max(v * scale));
    let mut total = F::zero();
    for v in live.iter_mut() {
        *v = (*v * scale - max).exp();
        total = total + *v;
    }
    live.iter_mut().for_each(|v| *v = *v / total);
}

fn softplus<F: Scalar>(z: F) -> F {
    // log(1 + e^z) = max(z, 0) + log1p(e^{-|z|})
    z.max(F::zero()) + (-z.abs()).exp().ln_1p()
}

fn mamba<F: Scalar>(
    p: &MambaParams<F>,
    spec: &super::ArchitectureSpec,
    u: &Array2<F>,
) -> Result<(Array2<F>, MambaIntermediates<F>)> {
    let dims = spec.dims;
    let (t_len, d) = u.dim();
    let (heads, hp, n, groups) = (
        dims.mamba_heads,
        dims.mamba_head_dim,
        dims.state_dim,
        dims.mamba_groups,
    );
    check_shape("w_x", &p.w_x, d, heads * hp)?;
    check_shape("w_b", &p.w_b, d, groups * n)?;
    check_shape("w_c", &p.w_c, d, groups * n)?;
    check_shape("w_delta", &p.w_delta, d, groups)?;
    check_shape("w_out", &p.w_out, heads * hp, d)?;
    if p.delta_bias.len() != groups || p.a.len() != heads {
        return Err(Error::DimensionMismatch(
            "delta_bias / decay rate length does not match group / head count".into(),
        ));
    }
    if p.a.iter().any(|&a| a.is_nan() || a <= F::zero()) {
        return Err(Error::InvalidArgument(
            "decay rates must be positive".into(),
        ));
    }

    let x = u.dot(&p.w_x);
    let b = u.dot(&p.w_b);
    let c = u.dot(&p.w_c);
    let (dmin, dmax) = (F::of(DELTA_MIN), F::of(DELTA_MAX));
    let mut delta = u.dot(&p.w_delta);
    delta.rows_mut().into_iter().for_each(|mut row| {
        row.iter_mut()
            .zip(p.delta_bias.iter())
            .for_each(|(v, &bias)| *v = softplus(*v + bias).max(dmin).min(dmax));
    });

    let x = x
        .into_shape_with_order((t_len, heads, hp))
        .expect("contiguous projection");
    let c = c
        .into_shape_with_order((t_len, groups, n))
        .expect("contiguous projection");
    let mut b_bar = b
        .into_shape_with_order((t_len, groups, n))
        .expect("contiguous projection");
    for ((t, g, _), v) in b_bar.indexed_iter_mut() {
        *v = *v * delta[[t, g]];
    }
    let per_group = spec.heads_per_group();
    let a_bar = Array2::from_shape_fn((t_len, heads), |(t, head)| {
        (-(delta[[t, head / per_group]] * p.a[head])).exp()
    });

    let mut inter = MambaIntermediates {
        x,
        b_bar,
        c,
        delta,
        a_bar,
        head_outputs: Array3::zeros((t_len, heads, hp)),
        heads_per_group: per_group,
    };
    for head in 0..heads {
        let y = selective_scan(&inter.scan_inputs(head)?)?;
        inter.head_outputs.slice_mut(s![.., head, ..]).assign(&y);
    }
    let flat = inter
        .head_outputs
        .view()
        .into_shape_with_order((t_len, heads * hp))
        .expect("contiguous head outputs");
    let out = flat.dot(&p.w_out);
    Ok((out, inter))
}

fn mlp<F: Scalar>(p: &MlpParams<F>, u: &Array2<F>) -> Result<Array2<F>> {
    let d = u.ncols();
    let hidden = p.w_in.ncols();
    check_shape("w_in", &p.w_in, d, hidden)?;
    check_shape("w_out", &p.w_out, hidden, d)?;
    let mut act = u.dot(&p.w_in);
    act.mapv_inplace(|v| v.max(F::zero()));
    Ok(act.dot(&p.w_out))
}
