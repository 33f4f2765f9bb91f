//! Order-preserving top-K selection of visual tokens.

use ndarray::{Array2, Axis};

use crate::error::{Error, Result};
use crate::model::{HiddenSequence, TokenRole};
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SelectionResult {
    /// Visual-token indices, strictly increasing.
    pub kept_indices: Vec<usize>,
    pub dropped_count: usize,
}

impl SelectionResult {
    pub fn keep_all(n: usize) -> Self {
        Self {
            kept_indices: (0..n).collect(),
            dropped_count: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.kept_indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.kept_indices.is_empty()
    }
}

/// Keeps the `k` highest-scoring tokens, returned in ascending index order.
///
/// Nothing is dropped when `N <= max(k, min_tokens)`. Equal scores prefer the
/// lower index.
pub fn select_top_k<F: Scalar>(
    scores: &[F],
    k: usize,
    min_tokens: usize,
) -> Result<SelectionResult> {
    if k == 0 {
        return Err(Error::ZeroBudget);
    }
    let n = scores.len();
    if n == 0 {
        return Err(Error::InvalidArgument(
            "no visual tokens to select from".into(),
        ));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::NonFinite("scores"));
    }
    if n <= k.max(min_tokens) {
        return Ok(SelectionResult::keep_all(n));
    }
    let mut order: Vec<usize> = (0..n).collect();
    let by_score = |&a: &usize, &b: &usize| {
        scores[b]
            .partial_cmp(&scores[a])
            .expect("finite scores")
            .then(a.cmp(&b))
    };
    order.select_nth_unstable_by(k - 1, by_score);
    let mut kept = order[..k].to_vec();
    kept.sort_unstable();
    Ok(SelectionResult {
        kept_indices: kept,
        dropped_count: n - k,
    })
}

/// Restricts `h` to the selected visual tokens plus every text token.
pub fn apply_reduction<F: Scalar>(
    h: &HiddenSequence<F>,
    sel: &SelectionResult,
) -> Result<HiddenSequence<F>> {
    let n_vis = h.num_visual();
    if sel.kept_indices.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::UnsortedSelection);
    }
    if let Some(&bad) = sel.kept_indices.iter().find(|&&i| i >= n_vis) {
        return Err(Error::IndexOutOfRange {
            index: bad,
            len: n_vis,
        });
    }
    let rows: Vec<usize> = sel
        .kept_indices
        .iter()
        .copied()
        .chain(n_vis..h.len())
        .collect();
    let vectors: Array2<F> = h.vectors.select(Axis(0), &rows);
    let roles = rows.iter().map(|&r| h.roles[r]).collect::<Vec<TokenRole>>();
    let ids = rows.iter().map(|&r| h.position_ids[r]).collect();
    HiddenSequence::from_parts(vectors, roles, ids)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn seq(n_vis: usize, n_text: usize) -> HiddenSequence<f64> {
        let t = n_vis + n_text;
        let v = Array2::from_shape_fn((t, 3), |(i, k)| (i * 3 + k) as f64);
        HiddenSequence::new(v, n_vis).unwrap()
    }

    #[test]
    fn full_budget_is_identity() {
        let sel = select_top_k(&[0.3, 0.1, 0.2], 3, 0).unwrap();
        assert_eq!(sel.kept_indices, vec![0, 1, 2]);
        let h = seq(3, 2);
        assert_eq!(apply_reduction(&h, &sel).unwrap(), h);
    }

    #[test]
    fn temporal_order_and_tie_break() {
        let sel = select_top_k(&[0.1, 0.9, 0.3, 0.9], 2, 0).unwrap();
        assert_eq!(sel.kept_indices, vec![1, 3]);
        let sel = select_top_k(&[0.5, 0.5, 0.5, 0.5], 2, 0).unwrap();
        assert_eq!(sel.kept_indices, vec![0, 1]);
        assert_eq!(sel.dropped_count, 2);
    }

    #[test]
    fn floor_keeps_small_inputs() {
        let scores: Vec<f64> = (0..100).map(|i| i as f64).collect();
        let sel = select_top_k(&scores, 25, 144).unwrap();
        assert_eq!(sel.len(), 100);
    }

    #[test]
    fn zero_budget_and_bad_scores() {
        assert!(matches!(select_top_k(&[1.0], 0, 0), Err(Error::ZeroBudget)));
        assert!(select_top_k(&[1.0, f64::NAN, 0.0], 1, 0).is_err());
    }

    #[test]
    fn reduction_bookkeeping() {
        let h = seq(4, 2);
        let sel = SelectionResult {
            kept_indices: vec![0, 2],
            dropped_count: 2,
        };
        let r = apply_reduction(&h, &sel).unwrap();
        assert_eq!(r.position_ids, vec![0, 2, 4, 5]);
        assert_eq!(r.num_visual(), 2);
        assert_eq!(r.num_text(), 2);
        assert_eq!(r.vectors.row(1), h.vectors.row(2));
    }

    #[test]
    fn out_of_range_selection() {
        let h = seq(4, 2);
        let sel = SelectionResult {
            kept_indices: vec![1, 4],
            dropped_count: 0,
        };
        assert!(matches!(
            apply_reduction(&h, &sel),
            Err(Error::IndexOutOfRange { index: 4, len: 4 })
        ));
    }

    #[test]
    fn nested_reductions_compose() {
        let h = seq(8, 3);
        let a = SelectionResult {
            kept_indices: vec![1, 2, 5, 6, 7],
            dropped_count: 3,
        };
        let b = SelectionResult {
            kept_indices: vec![0, 3, 4],
            dropped_count: 2,
        };
        let composed = SelectionResult {
            kept_indices: b.kept_indices.iter().map(|&i| a.kept_indices[i]).collect(),
            dropped_count: 5,
        };
        let twice = apply_reduction(&apply_reduction(&h, &a).unwrap(), &b).unwrap();
        assert_eq!(twice, apply_reduction(&h, &composed).unwrap());
    }

    proptest! {
        #[test]
        fn permuting_scores_permutes_selection(
            scores in prop::collection::vec(0u32..1_000_000, 2..60),
            k_frac in 0.05f64..1.0,
            seed in any::<u64>(),
        ) {
            // distinct scores so ties cannot interfere
            let mut seen = std::collections::HashSet::new();
            let scores: Vec<f64> = scores.into_iter().filter(|s| seen.insert(*s)).map(f64::from).collect();
            prop_assume!(scores.len() >= 2);
            let n = scores.len();
            let k = ((k_frac * n as f64) as usize).max(1);
            let mut perm: Vec<usize> = (0..n).collect();
            let mut state = seed;
            for i in (1..n).rev() {
                state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                perm.swap(i, (state >> 33) as usize % (i + 1));
            }
            // permuted[j] = scores[perm[j]]
            let permuted: Vec<f64> = perm.iter().map(|&p| scores[p]).collect();
            let base = select_top_k(&scores, k, 0).unwrap();
            let other = select_top_k(&permuted, k, 0).unwrap();
            let mut mapped: Vec<usize> = other.kept_indices.iter().map(|&j| perm[j]).collect();
            mapped.sort_unstable();
            prop_assert_eq!(mapped, base.kept_indices);
        }
    }
}
