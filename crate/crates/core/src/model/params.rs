use ndarray::{s, Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::arch::{ArchitectureSpec, LayerKind};
use crate::scalar::Scalar;

/// Weight layout is `input_dim x output_dim`; activations multiply from the left.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionParams<F> {
    pub wq: Array2<F>,
    pub wk: Array2<F>,
    pub wv: Array2<F>,
    pub wo: Array2<F>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MambaParams<F> {
    /// `d x (heads * p)` head inputs.
    pub w_x: Array2<F>,
    /// `d x (groups * n)`.
    pub w_b: Array2<F>,
    /// `d x (groups * n)`.
    pub w_c: Array2<F>,
    /// `d x groups` step-size logits.
    pub w_delta: Array2<F>,
    pub delta_bias: Array1<F>,
    /// Per-head decay rate, strictly positive.
    pub a: Array1<F>,
    /// `(heads * p) x d`.
    pub w_out: Array2<F>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MlpParams<F> {
    pub w_in: Array2<F>,
    pub w_out: Array2<F>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum LayerParams<F> {
    Attention(AttentionParams<F>),
    Mamba(MambaParams<F>),
    Mlp(MlpParams<F>),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitScheme {
    /// Every projection i.i.d. `N(0, 1/d)`.
    #[default]
    Gaussian,
    /// As `Gaussian`, then every query head and the key head of a KV group share the
    /// group's first query projection, and `w_c` is copied from `w_b`, so queries and
    /// keys live in the same subspace.
    QueryKeyTied,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Parameters<F> {
    pub spec: ArchitectureSpec,
    pub seed: u64,
    pub scheme: InitScheme,
    pub layers: Vec<LayerParams<F>>,
}

pub fn init_parameters<F: Scalar>(spec: &ArchitectureSpec, seed: u64) -> Parameters<F> {
    init_parameters_with(spec, seed, InitScheme::Gaussian)
}

/// Draws all weights from a ChaCha8 stream seeded with `seed`, layer by layer in order.
///
/// Projections are `N(0, 1/d)` with `d = hidden_dim`. Mamba decay rates `A` are
/// uniform on `[1, 16]` and step-size biases are the inverse softplus of a
/// log-uniform step in `[1e-3, 1e-1]`. Values are drawn in `f64` and cast, so
/// `f32` and `f64` parameter sets agree up to rounding.
pub fn init_parameters_with<F: Scalar>(
    spec: &ArchitectureSpec,
    seed: u64,
    scheme: InitScheme,
) -> Parameters<F> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = spec.dims.hidden_dim;
    let dims = spec.dims;
    let std = 1.0 / (d as f64).sqrt();
    let layers = spec
        .layer_kinds
        .iter()
        .map(|kind| match kind {
            LayerKind::Attention => {
                let q_width = dims.attn_heads * dims.attn_head_dim;
                let kv_width = dims.kv_heads * dims.attn_head_dim;
                let mut wq = gaussian(&mut rng, d, q_width, std);
                let mut wk = gaussian(&mut rng, d, kv_width, std);
                let wv = gaussian(&mut rng, d, kv_width, std);
                let wo = gaussian(&mut rng, q_width, d, std);
                if scheme == InitScheme::QueryKeyTied {
                    let hd = dims.attn_head_dim;
                    let per_kv = spec.queries_per_kv();
                    for g in 0..dims.kv_heads {
                        let first = wq
                            .slice(s![.., g * per_kv * hd..(g * per_kv + 1) * hd])
                            .to_owned();
                        wk.slice_mut(s![.., g * hd..(g + 1) * hd]).assign(&first);
                        for q_head in g * per_kv + 1..(g + 1) * per_kv {
                            wq.slice_mut(s![.., q_head * hd..(q_head + 1) * hd])
                                .assign(&first);
                        }
                    }
                }
                LayerParams::Attention(AttentionParams { wq, wk, wv, wo })
            }
            LayerKind::Mamba => {
                let inner = dims.mamba_heads * dims.mamba_head_dim;
                let bc_width = dims.mamba_groups * dims.state_dim;
                let w_x = gaussian(&mut rng, d, inner, std);
                let w_b = gaussian(&mut rng, d, bc_width, std);
                let mut w_c = gaussian(&mut rng, d, bc_width, std);
                let w_delta = gaussian(&mut rng, d, dims.mamba_groups, std);
                let delta_bias = Array1::from_shape_fn(dims.mamba_groups, |_| {
                    let log_dt = rng.random_range((1e-3f64).ln()..(1e-1f64).ln());
                    F::of(inverse_softplus(log_dt.exp()))
                });
                let a =
                    Array1::from_shape_fn(dims.mamba_heads, |_| F::of(rng.random_range(1.0..16.0)));
                let w_out = gaussian(&mut rng, inner, d, std);
                if scheme == InitScheme::QueryKeyTied {
                    w_c.assign(&w_b);
                }
                LayerParams::Mamba(MambaParams {
                    w_x,
                    w_b,
                    w_c,
                    w_delta,
                    delta_bias,
                    a,
                    w_out,
                })
            }
            LayerKind::Mlp => LayerParams::Mlp(MlpParams {
                w_in: gaussian(&mut rng, d, dims.mlp_dim, std),
                w_out: gaussian(&mut rng, dims.mlp_dim, d, std),
            }),
        })
        .collect();
    Parameters {
        spec: spec.clone(),
        seed,
        scheme,
        layers,
    }
}

fn gaussian<F: Scalar>(rng: &mut ChaCha8Rng, rows: usize, cols: usize, std: f64) -> Array2<F> {
    Array2::from_shape_simple_fn((rows, cols), || {
        let z: f64 = rng.sample(StandardNormal);
        F::of(z * std)
    })
}

fn inverse_softplus(y: f64) -> f64 {
    y + (-(-y).exp_m1()).ln()
}

impl<F: Scalar> Parameters<F> {
    /// Copy with every projection matrix zeroed; decay rates and biases are kept.
    pub fn zeroed_projections(&self) -> Self {
        let mut out = self.clone();
        for layer in &mut out.layers {
            match layer {
                LayerParams::Attention(p) => {
                    p.wq.fill(F::zero());
                    p.wk.fill(F::zero());
                    p.wv.fill(F::zero());
                    p.wo.fill(F::zero());
                }
                LayerParams::Mamba(p) => {
                    p.w_x.fill(F::zero());
                    p.w_b.fill(F::zero());
                    p.w_c.fill(F::zero());
                    p.w_delta.fill(F::zero());
                    p.w_out.fill(F::zero());
                }
                LayerParams::Mlp(p) => {
                    p.w_in.fill(F::zero());
                    p.w_out.fill(F::zero());
                }
            }
        }
        out
    }
}
