//! Average-pooling ablation.

use std::ops::Range;

use ndarray::{s, Array2, Axis};

use crate::error::{Error, Result};
use crate::model::HiddenSequence;
use crate::scalar::Scalar;

/// Contiguous windows of `ceil(live / budget)` visual tokens; the last may be shorter.
pub fn pool_windows(live: usize, budget: usize) -> Result<Vec<Range<usize>>> {
    if budget == 0 {
        return Err(Error::ZeroBudget);
    }
    let width = live.div_ceil(budget).max(1);
    Ok((0..live)
        .step_by(width)
        .map(|start| start..(start + width).min(live))
        .collect())
}

/// Replaces each window of visual tokens with its mean; text tokens pass through.
/// A pooled token keeps the position id of its window's first member.
pub fn avg_pool_visual<F: Scalar>(
    h: &HiddenSequence<F>,
    windows: &[Range<usize>],
) -> Result<HiddenSequence<F>> {
    let n_vis = h.num_visual();
    let covered: usize = windows.iter().map(|w| w.len()).sum();
    if covered != n_vis || windows.iter().any(|w| w.is_empty()) {
        return Err(Error::InvalidRange(format!(
            "pooling windows cover {covered} of {n_vis} visual tokens"
        )));
    }
    let rows = windows.len() + h.num_text();
    let mut vectors = Array2::<F>::zeros((rows, h.hidden_dim()));
    let mut roles = Vec::with_capacity(rows);
    let mut ids = Vec::with_capacity(rows);
    for (out, w) in windows.iter().enumerate() {
        let len = F::of(w.len() as f64);
        let mean = h.vectors.slice(s![w.clone(), ..]).sum_axis(Axis(0)) / len;
        vectors.row_mut(out).assign(&mean);
        roles.push(h.roles[w.start]);
        ids.push(h.position_ids[w.start]);
    }
    for (k, t) in (n_vis..h.len()).enumerate() {
        vectors.row_mut(windows.len() + k).assign(&h.vectors.row(t));
        roles.push(h.roles[t]);
        ids.push(h.position_ids[t]);
    }
    HiddenSequence::from_parts(vectors, roles, ids)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ragged_last_window() {
        assert_eq!(pool_windows(10, 4).unwrap(), vec![0..3, 3..6, 6..9, 9..10]);
        assert_eq!(pool_windows(8, 2).unwrap(), vec![0..4, 4..8]);
        assert_eq!(pool_windows(5, 5).unwrap().len(), 5);
        assert_eq!(pool_windows(3, 7).unwrap().len(), 3);
    }

    #[test]
    fn means_and_ids() {
        let v = Array2::from_shape_fn((5, 2), |(i, k)| (i * 2 + k) as f64);
        let h = HiddenSequence::new(v, 4).unwrap();
        let p = avg_pool_visual(&h, &pool_windows(4, 2).unwrap()).unwrap();
        assert_eq!(p.position_ids, vec![0, 2, 4]);
        assert_eq!(p.vectors.row(0).to_vec(), vec![1.0, 2.0]);
        assert_eq!(p.vectors.row(1).to_vec(), vec![5.0, 6.0]);
        assert_eq!(p.vectors.row(2), h.vectors.row(4));
        assert_eq!(p.num_visual(), 2);
    }

    #[test]
    fn unit_windows_are_identity() {
        let v = Array2::from_shape_fn((6, 3), |(i, k)| (i + k) as f32);
        let h = HiddenSequence::new(v, 4).unwrap();
        assert_eq!(
            avg_pool_visual(&h, &pool_windows(4, 4).unwrap()).unwrap(),
            h
        );
    }
}
