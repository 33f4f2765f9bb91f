//! Sparsity and cross-layer stability diagnostics for importance scores.

use std::cmp::Ordering;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::importance::ImportanceMap;
use crate::scalar::Scalar;

/// Mass threshold used for the layerwise density diagnostic.
pub const DENSITY_MASS: f64 = 0.8;

/// Relative slack when comparing accumulated mass against its target.
const MASS_SLACK: f64 = 1e-12;

fn to_f64<F: Scalar>(v: &[F], what: &'static str) -> Result<Vec<f64>> {
    let out: Vec<f64> = v.iter().map(|x| x.as_f64()).collect();
    if out.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite(what));
    }
    Ok(out)
}

/// Kendall's tau-a: `(C - D) / binom(n, 2)`; tied pairs count as neither.
///
/// Knight's `O(n log n)` scheme: sort by `(a, b)`, count the exchanges a merge
/// sort of `b` needs (the discordant pairs), then correct for ties.
pub fn kendall_tau<F: Scalar>(a: &[F], b: &[F]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch(a.len(), b.len()));
    }
    let n = a.len();
    if n < 2 {
        return Err(Error::TooShort);
    }
    let a = to_f64(a, "first ranking")?;
    let b = to_f64(b, "second ranking")?;
    let mut pairs: Vec<(f64, f64)> = a.into_iter().zip(b).collect();
    pairs.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.total_cmp(&y.1)));

    let n0 = (n as i64) * (n as i64 - 1) / 2;
    let tied_pairs = |len: i64| len * (len - 1) / 2;
    let (mut ties_a, mut ties_joint) = (0i64, 0i64);
    let (mut run_a, mut run_joint) = (1i64, 1i64);
    for w in pairs.windows(2) {
        if w[0].0 == w[1].0 {
            run_a += 1;
            if w[0].1 == w[1].1 {
                run_joint += 1;
            } else {
                ties_joint += tied_pairs(run_joint);
                run_joint = 1;
            }
        } else {
            ties_a += tied_pairs(run_a);
            ties_joint += tied_pairs(run_joint);
            run_a = 1;
            run_joint = 1;
        }
    }
    ties_a += tied_pairs(run_a);
    ties_joint += tied_pairs(run_joint);

    let mut ys: Vec<f64> = pairs.into_iter().map(|p| p.1).collect();
    let mut scratch = ys.clone();
    let discordant = merge_count(&mut ys, &mut scratch);

    let mut ties_b = 0i64;
    let mut run = 1i64;
    for w in ys.windows(2) {
        if w[0] == w[1] {
            run += 1;
        } else {
            ties_b += tied_pairs(run);
            run = 1;
        }
    }
    ties_b += tied_pairs(run);

    let s = n0 - ties_a - ties_b + ties_joint - 2 * discordant;
    Ok(s as f64 / n0 as f64)
}

/// Sorts `v` ascending and returns the number of strict inversions.
fn merge_count(v: &mut [f64], scratch: &mut [f64]) -> i64 {
    let n = v.len();
    if n < 2 {
        return 0;
    }
    let mid = n / 2;
    let mut swaps = {
        let (lo, hi) = v.split_at_mut(mid);
        let (slo, shi) = scratch.split_at_mut(mid);
        merge_count(lo, slo) + merge_count(hi, shi)
    };
    let (mut i, mut j, mut k) = (0, mid, 0);
    while i < mid && j < n {
        if v[j] < v[i] {
            scratch[k] = v[j];
            swaps += (mid - i) as i64;
            j += 1;
        } else {
            scratch[k] = v[i];
            i += 1;
        }
        k += 1;
    }
    scratch[k..k + mid - i].copy_from_slice(&v[i..mid]);
    let k = k + mid - i;
    scratch[k..n].copy_from_slice(&v[j..n]);
    v.copy_from_slice(&scratch[..n]);
    swaps
}

fn check_mass_vector(scores: &[f64]) -> Result<f64> {
    if scores.is_empty() {
        return Err(Error::InvalidArgument("empty score vector".into()));
    }
    if scores.iter().any(|&s| s < 0.0) {
        return Err(Error::InvalidArgument("scores must be non-negative".into()));
    }
    let total: f64 = scores.iter().sum();
    if total <= 0.0 {
        return Err(Error::ZeroMass);
    }
    Ok(total)
}

/// Smallest fraction of tokens whose largest scores reach `mass` of the total.
pub fn density_at_mass<F: Scalar>(scores: &[F], mass: f64) -> Result<f64> {
    if !(mass > 0.0 && mass <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "mass {mass} outside (0, 1]"
        )));
    }
    let mut s = to_f64(scores, "scores")?;
    let total = check_mass_vector(&s)?;
    s.sort_by(|x, y| y.partial_cmp(x).unwrap_or(Ordering::Equal));
    let target = mass * total - MASS_SLACK * total;
    let mut acc = 0.0;
    for (i, v) in s.iter().enumerate() {
        acc += v;
        if acc >= target {
            return Ok((i + 1) as f64 / s.len() as f64);
        }
    }
    Ok(1.0)
}

/// Share of the total score carried by the last `ceil(tail_fraction * N)` tokens.
pub fn recency_mass<F: Scalar>(scores: &[F], tail_fraction: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&tail_fraction) {
        return Err(Error::InvalidArgument(format!(
            "tail fraction {tail_fraction} outside [0, 1]"
        )));
    }
    let s = to_f64(scores, "scores")?;
    let total = check_mass_vector(&s)?;
    let n = s.len();
    let tail = ((tail_fraction * n as f64) - 1e-9)
        .ceil()
        .clamp(0.0, n as f64) as usize;
    let tail_sum: f64 = s[n - tail..].iter().sum();
    Ok(tail_sum / total)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TauEntry {
    pub from_layer: usize,
    pub to_layer: usize,
    pub tau: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DensityEntry {
    pub layer: usize,
    pub unit: usize,
    pub density: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    pub taus: Vec<TauEntry>,
    pub densities: Vec<DensityEntry>,
}

impl StabilityReport {
    pub fn mean_density(&self) -> Option<f64> {
        if self.densities.is_empty() {
            return None;
        }
        Some(self.densities.iter().map(|d| d.density).sum::<f64>() / self.densities.len() as f64)
    }

    /// `(layer_pair, tau)` rows, the pair written as `from-to`.
    pub fn write_tau_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(writer);
        out.write_record(["layer_pair", "tau"])?;
        for t in &self.taus {
            out.write_record([
                format!("{}-{}", t.from_layer, t.to_layer),
                t.tau.to_string(),
            ])?;
        }
        out.flush()?;
        Ok(())
    }

    /// `(layer, unit, density)` rows.
    pub fn write_density_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(writer);
        out.write_record(["layer", "unit", "density"])?;
        for d in &self.densities {
            out.write_record([
                d.layer.to_string(),
                d.unit.to_string(),
                d.density.to_string(),
            ])?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Tau between consecutive maps and per-unit density at [`DENSITY_MASS`].
///
/// All maps must score the same token set. Units whose scores are all zero
/// are skipped for density.
pub fn stability_report<F: Scalar>(maps: &[ImportanceMap<F>]) -> Result<StabilityReport> {
    let mut report = StabilityReport::default();
    if let Some(first) = maps.first() {
        if let Some(bad) = maps.iter().find(|m| m.num_tokens() != first.num_tokens()) {
            return Err(Error::LengthMismatch(first.num_tokens(), bad.num_tokens()));
        }
    }
    for w in maps.windows(2) {
        let a = w[0].scores.to_vec();
        let b = w[1].scores.to_vec();
        report.taus.push(TauEntry {
            from_layer: w[0].layer_index,
            to_layer: w[1].layer_index,
            tau: kendall_tau(&a, &b)?,
        });
    }
    for map in maps {
        for (unit, row) in map.per_unit.rows().into_iter().enumerate() {
            let row = row.to_vec();
            match density_at_mass(&row, DENSITY_MASS) {
                Ok(density) => report.densities.push(DensityEntry {
                    layer: map.layer_index,
                    unit,
                    density,
                }),
                Err(Error::ZeroMass) => continue,
                Err(e) => return Err(e),
            }
        }
    }
    Ok(report)
}
