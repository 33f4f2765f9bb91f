//! Selective state-space recurrence with a scalar decay per step.
//!
//! One head of a Mamba-2 style layer keeps a `p x n` state and updates it as
//!
//! ```text
//! S_t = a_t * S_{t-1} + x_t b_t^T      (S_0 = 0)
//! y_t = S_t c_t
//! ```
//!
//! Unrolling the recurrence gives `y_t = sum_{j<=t} w_{t,j} x_j` with
//! `w_{t,j} = (prod_{u=j+1..t} a_u) * (b_j . c_t)`. [`selective_scan`] runs the
//! linear-time recurrence, [`unrolled_output`] evaluates the quadratic form
//! through [`implicit_weights`]; the two must agree to rounding error.

use std::io::Write;
use std::ops::Range;

use ndarray::{Array1, Array2, ArrayView1};

use crate::error::{Error, Result};
use crate::scalar::{all_finite, Scalar};

/// Cumulative decays below this are stored as exact zeros.
pub const DECAY_FLOOR: f64 = 1e-300;

/// Inputs of one scan head. `b_bar` already carries the step size (`delta * b`).
#[derive(Clone, Debug, PartialEq)]
pub struct ScanInputs<F> {
    /// `T x p` head inputs.
    pub x: Array2<F>,
    /// Per-step scalar decay, each in `(0, 1)`.
    pub a_bar: Array1<F>,
    /// `T x n` effective input projections.
    pub b_bar: Array2<F>,
    /// `T x n` output projections.
    pub c: Array2<F>,
}

impl<F: Scalar> ScanInputs<F> {
    pub fn new(x: Array2<F>, a_bar: Array1<F>, b_bar: Array2<F>, c: Array2<F>) -> Result<Self> {
        let inputs = Self { x, a_bar, b_bar, c };
        inputs.validate()?;
        Ok(inputs)
    }

    pub fn len(&self) -> usize {
        self.a_bar.len()
    }

    pub fn is_empty(&self) -> bool {
        self.a_bar.is_empty()
    }

    pub fn head_dim(&self) -> usize {
        self.x.ncols()
    }

    pub fn state_dim(&self) -> usize {
        self.b_bar.ncols()
    }

    pub fn validate(&self) -> Result<()> {
        let t = self.a_bar.len();
        if self.x.nrows() != t || self.b_bar.nrows() != t || self.c.nrows() != t {
            return Err(Error::DimensionMismatch(format!(
                "scan inputs disagree on length: x {}, a_bar {}, b_bar {}, c {}",
                self.x.nrows(),
                t,
                self.b_bar.nrows(),
                self.c.nrows()
            )));
        }
        if self.b_bar.ncols() != self.c.ncols() {
            return Err(Error::DimensionMismatch(format!(
                "b_bar has state dim {}, c has {}",
                self.b_bar.ncols(),
                self.c.ncols()
            )));
        }
        if !all_finite(self.x.iter()) {
            return Err(Error::NonFinite("x"));
        }
        if !all_finite(self.b_bar.iter()) {
            return Err(Error::NonFinite("b_bar"));
        }
        if !all_finite(self.c.iter()) {
            return Err(Error::NonFinite("c"));
        }
        for (step, &a) in self.a_bar.iter().enumerate() {
            if !a.is_finite() {
                return Err(Error::NonFinite("a_bar"));
            }
            if a <= F::zero() || a >= F::one() {
                return Err(Error::DecayOutOfRange {
                    step,
                    value: a.as_f64(),
                });
            }
        }
        Ok(())
    }
}

fn dot<F: Scalar>(a: ArrayView1<F>, b: ArrayView1<F>) -> F {
    a.iter()
        .zip(b.iter())
        .fold(F::zero(), |acc, (&u, &v)| acc + u * v)
}

/// Runs the recurrence left to right. `O(T p n)` time, one `p x n` state.
pub fn selective_scan<F: Scalar>(inputs: &ScanInputs<F>) -> Result<Array2<F>> {
    inputs.validate()?;
    let (t_len, p) = inputs.x.dim();
    let n = inputs.state_dim();
    let mut state = Array2::<F>::zeros((p, n));
    let mut y = Array2::<F>::zeros((t_len, p));
    for t in 0..t_len {
        let a = inputs.a_bar[t];
        let x_t = inputs.x.row(t);
        let b_t = inputs.b_bar.row(t);
        let c_t = inputs.c.row(t);
        for i in 0..p {
            let xi = x_t[i];
            let mut acc = F::zero();
            for k in 0..n {
                let s = a * state[[i, k]] + xi * b_t[k];
                state[[i, k]] = s;
                acc = acc + s * c_t[k];
            }
            y[[t, i]] = acc;
        }
    }
    Ok(y)
}

/// Full lower-triangular `T x T` matrix of implicit weights `w_{t,j}`.
pub fn implicit_weights<F: Scalar>(inputs: &ScanInputs<F>) -> Result<Array2<F>> {
    let t_len = inputs.len();
    implicit_weight_block(inputs, 0..t_len, 0..t_len)
}

/// The block `rows x cols` of the implicit weight matrix; entries with `j > t` are zero.
///
/// Each row accumulates `sum log a_u` leftward from the diagonal, so the
/// decay for `(t, j)` never subtracts two large prefix sums.
pub fn implicit_weight_block<F: Scalar>(
    inputs: &ScanInputs<F>,
    rows: Range<usize>,
    cols: Range<usize>,
) -> Result<Array2<F>> {
    inputs.validate()?;
    let t_len = inputs.len();
    if rows.end > t_len || cols.end > t_len || rows.start > rows.end || cols.start > cols.end {
        return Err(Error::InvalidRange(format!(
            "rows {rows:?} / cols {cols:?} outside sequence of length {t_len}"
        )));
    }
    let log_a: Vec<F> = inputs.a_bar.iter().map(|a| a.ln()).collect();
    let log_floor = F::of(DECAY_FLOOR.ln());
    let mut w = Array2::<F>::zeros((rows.len(), cols.len()));
    for (ri, t) in rows.clone().enumerate() {
        let c_t = inputs.c.row(t);
        // decay(t, j) = exp(sum_{u=j+1..t} log a_u), walked from j = t downward
        let mut log_decay = F::zero();
        let upper = t.min(cols.end.saturating_sub(1));
        if cols.is_empty() || upper < cols.start {
            continue;
        }
        for j in (cols.start..=t).rev() {
            if j < t {
                log_decay = log_decay + log_a[j + 1];
            }
            if log_decay < log_floor {
                break;
            }
            if j > upper {
                continue;
            }
            let decay = log_decay.exp();
            w[[ri, j - cols.start]] = decay * dot(inputs.b_bar.row(j), c_t);
        }
    }
    Ok(w)
}

/// `y_t = sum_{j<=t} w_{t,j} x_j`, evaluated through the explicit weight matrix in `O(T^2)`.
pub fn unrolled_output<F: Scalar>(inputs: &ScanInputs<F>) -> Result<Array2<F>> {
    let w = implicit_weights(inputs)?;
    Ok(w.dot(&inputs.x))
}

/// Frobenius-norm relative error `|a - b| / |b|`; absolute error when `b` is zero.
pub fn relative_error<F: Scalar>(a: &Array2<F>, b: &Array2<F>) -> f64 {
    let mut diff = 0.0f64;
    let mut base = 0.0f64;
    for (&u, &v) in a.iter().zip(b.iter()) {
        let d = u.as_f64() - v.as_f64();
        diff += d * d;
        base += v.as_f64() * v.as_f64();
    }
    if base == 0.0 {
        diff.sqrt()
    } else {
        (diff / base).sqrt()
    }
}

/// Writes `(t, j, value)` rows for every entry of `weights`, offsetting indices by the block origin.
pub fn write_weights_csv<F: Scalar, W: Write>(
    weights: &Array2<F>,
    row_offset: usize,
    col_offset: usize,
    writer: W,
) -> Result<()> {
    let mut out = csv::Writer::from_writer(writer);
    out.write_record(["t", "j", "value"])?;
    for ((r, c), v) in weights.indexed_iter() {
        out.write_record([
            (r + row_offset).to_string(),
            (c + col_offset).to_string(),
            v.to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use ndarray::array;

    fn inputs(t: usize, p: usize, n: usize, a: f64) -> ScanInputs<f64> {
        let x = Array2::from_shape_fn((t, p), |(i, k)| ((i * 7 + k * 3) % 5) as f64 - 2.0);
        let b = Array2::from_shape_fn((t, n), |(i, k)| ((i * 5 + k) % 4) as f64 * 0.25 - 0.3);
        let c = Array2::from_shape_fn((t, n), |(i, k)| ((i + 2 * k) % 3) as f64 * 0.5 - 0.4);
        ScanInputs::new(x, Array1::from_elem(t, a), b, c).unwrap()
    }

    #[test]
    fn single_step_is_alignment_times_input() {
        let x = array![[1.5, -2.0]];
        let b = array![[0.5, 1.0, -1.0]];
        let c = array![[2.0, 0.25, 1.0]];
        let inp = ScanInputs::new(x.clone(), array![0.3], b, c).unwrap();
        let y = selective_scan(&inp).unwrap();
        // b . c = 1.0 + 0.25 - 1.0
        assert_relative_eq!(y[[0, 0]], 0.25 * 1.5);
        assert_relative_eq!(y[[0, 1]], 0.25 * -2.0);
    }

    #[test]
    fn zero_output_projection_gives_zero() {
        let mut inp = inputs(6, 2, 3, 0.7);
        inp.c.fill(0.0);
        let y = selective_scan(&inp).unwrap();
        assert!(y.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn zero_input_unrolls_to_zero() {
        let mut inp = inputs(5, 3, 2, 0.4);
        inp.x.fill(0.0);
        assert!(unrolled_output(&inp).unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn two_step_expansion() {
        let inp = ScanInputs::new(
            array![[1.0], [2.0]],
            array![0.9, 0.5],
            array![[1.0, 2.0], [0.5, -1.0]],
            array![[0.3, 0.1], [2.0, 1.0]],
        )
        .unwrap();
        let w21 = 0.5 * (1.0 * 2.0 + 2.0 * 1.0);
        let w22 = 0.5 * 2.0 - 1.0;
        let y = selective_scan(&inp).unwrap();
        assert_relative_eq!(y[[1, 0]], w21 * 1.0 + w22 * 2.0, epsilon = 1e-14);
        let w = implicit_weights(&inp).unwrap();
        assert_relative_eq!(w[[1, 0]], w21, epsilon = 1e-14);
        assert_relative_eq!(w[[1, 1]], w22, epsilon = 1e-14);
        assert_eq!(w[[0, 1]], 0.0);
    }

    #[test]
    fn constant_decay_and_alignment_is_geometric() {
        let t = 10;
        let b = Array2::from_elem((t, 1), 2.0);
        let c = Array2::from_elem((t, 1), 1.5);
        let inp = ScanInputs::new(Array2::ones((t, 1)), Array1::from_elem(t, 0.8), b, c).unwrap();
        let w = implicit_weights(&inp).unwrap();
        for r in 0..t {
            for j in 0..t {
                let expected = if j <= r {
                    0.8f64.powi((r - j) as i32) * 3.0
                } else {
                    0.0
                };
                assert_relative_eq!(w[[r, j]], expected, max_relative = 1e-12);
            }
        }
    }

    #[test]
    fn block_matches_full_matrix() {
        let inp = inputs(12, 2, 3, 0.6);
        let full = implicit_weights(&inp).unwrap();
        let block = implicit_weight_block(&inp, 8..12, 0..8).unwrap();
        for r in 0..4 {
            for c in 0..8 {
                assert_eq!(block[[r, c]], full[[r + 8, c]]);
            }
        }
    }

    #[test]
    fn tiny_decay_underflows_to_zero() {
        let t = 400;
        let inp = ScanInputs::new(
            Array2::ones((t, 1)),
            Array1::from_elem(t, 0.1),
            Array2::ones((t, 1)),
            Array2::ones((t, 1)),
        )
        .unwrap();
        let w = implicit_weights(&inp).unwrap();
        // 0.1^300 = 1e-300 sits at the floor; 0.1^301 is cleared
        assert_eq!(w[[t - 1, t - 1 - 301]], 0.0);
        assert!(w[[t - 1, t - 1 - 299]] > 0.0);
    }

    #[test]
    fn rejects_invalid_inputs() {
        let mut inp = inputs(4, 2, 2, 0.5);
        inp.a_bar[2] = 1.0;
        assert!(matches!(
            selective_scan(&inp),
            Err(Error::DecayOutOfRange { step: 2, .. })
        ));
        let mut inp = inputs(4, 2, 2, 0.5);
        inp.x[[1, 1]] = f64::NAN;
        assert!(matches!(unrolled_output(&inp), Err(Error::NonFinite("x"))));
        let inp = inputs(4, 2, 2, 0.5);
        let bad = ScanInputs::new(
            inp.x.clone(),
            Array1::from_elem(3, 0.5),
            inp.b_bar.clone(),
            inp.c.clone(),
        );
        assert!(matches!(bad, Err(Error::DimensionMismatch(_))));
    }

    #[test]
    fn csv_export_has_header_and_offsets() {
        let w = array![[1.0f64, 0.0], [0.5, 2.0]];
        let mut buf = Vec::new();
        write_weights_csv(&w, 10, 3, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines[0], "t,j,value");
        assert_eq!(lines[1], "10,3,1");
        assert_eq!(lines[4], "11,4,2");
    }
}
