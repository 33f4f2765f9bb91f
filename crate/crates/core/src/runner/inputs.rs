//! Seeded synthetic prompts.

use ndarray::{Array1, Array2};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::config::PlantedSignal;
use crate::error::Result;
use crate::model::HiddenSequence;
use crate::scalar::Scalar;

/// Input draws use their own ChaCha stream so they never alias the weight draws.
const INPUT_STREAM: u64 = 1;
/// Noise scale on text tokens in planted mode.
const TEXT_NOISE: f64 = 0.25;

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticPrompt<F> {
    pub sequence: HiddenSequence<F>,
    /// Ascending positions of planted visual tokens.
    pub planted: Vec<usize>,
}

/// Visual and text tokens with i.i.d. `N(0, 1)` entries.
///
/// With a planted signal, every text token becomes `q + 0.25 e` for a shared unit-RMS
/// query direction `q`, and `count` random visual tokens become `strength * q + e`.
pub fn synthetic_prompt<F: Scalar>(
    num_visual: usize,
    num_text: usize,
    hidden_dim: usize,
    seed: u64,
    planted: Option<PlantedSignal>,
) -> Result<SyntheticPrompt<F>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(INPUT_STREAM);
    let t_len = num_visual + num_text;
    let mut v =
        Array2::<f64>::from_shape_simple_fn((t_len, hidden_dim), || rng.sample(StandardNormal));
    let mut positions = Vec::new();
    if let Some(signal) = planted {
        let mut q = Array1::<f64>::from_shape_simple_fn(hidden_dim, || rng.sample(StandardNormal));
        let rms = (q.dot(&q) / hidden_dim as f64).sqrt();
        q /= rms;
        positions = sample(&mut rng, num_visual, signal.count.min(num_visual)).into_vec();
        positions.sort_unstable();
        for &i in &positions {
            let mut row = v.row_mut(i);
            row.scaled_add(signal.strength, &q);
        }
        for t in num_visual..t_len {
            let mut row = v.row_mut(t);
            row *= TEXT_NOISE;
            row += &q;
        }
    }
    Ok(SyntheticPrompt {
        sequence: HiddenSequence::new(v.mapv(F::of), num_visual)?,
        planted: positions,
    })
}
