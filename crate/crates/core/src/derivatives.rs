//! Weighted symmetric-difference derivative estimates on uniform grids.
//!
//! For a half-window `k` the estimate at interior sample `i` is
//!
//! ```text
//! ẏ_i = Σ_{j=1..k} w_j (y_{i+j} − y_{i−j}) / (t_{i+j} − t_{i−j}),   w_j = 6j² / (k(k+1)(2k+1))
//! ```
//!
//! which is exact for polynomials of degree two. The first and last `k`
//! samples have no estimate and are trimmed.

use std::ops::Range;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::datamodel::TimeSeriesExperiment;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundaryPolicy {
    #[default]
    Trim,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DifferenceSpec {
    pub k: usize,
    #[serde(default)]
    pub boundary_policy: BoundaryPolicy,
}

impl DifferenceSpec {
    pub fn new(k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::InvalidConfig("difference half-window k must be ≥ 1".into()));
        }
        Ok(DifferenceSpec {
            k,
            boundary_policy: BoundaryPolicy::Trim,
        })
    }

    /// k = 1 for noiseless data, k = 2 otherwise.
    pub fn default_for_noise(sigma: f64) -> Self {
        DifferenceSpec {
            k: if sigma > 0.0 { 2 } else { 1 },
            boundary_policy: BoundaryPolicy::Trim,
        }
    }

    /// Number of samples needed to leave `rows` regression rows.
    pub fn samples_for_rows(&self, rows: usize) -> usize {
        rows + 2 * self.k
    }
}

impl Default for DifferenceSpec {
    fn default() -> Self {
        DifferenceSpec {
            k: 1,
            boundary_policy: BoundaryPolicy::Trim,
        }
    }
}

/// `w_j = 6j² / (k(k+1)(2k+1))`, `j = 1..=k`.
///
/// The last weight absorbs the rounding so that the weights sum to exactly one.
pub fn lpr_weights(k: usize) -> Vec<f64> {
    assert!(k >= 1, "k must be at least 1");
    let denom = (k * (k + 1) * (2 * k + 1)) as f64;
    let mut w: Vec<f64> = (1..=k).map(|j| (6 * j * j) as f64 / denom).collect();
    let head: f64 = w[..k - 1].iter().sum();
    w[k - 1] = 1.0 - head;
    w
}

#[derive(Debug, Clone, PartialEq)]
pub struct DerivativeEstimate {
    /// Sample indices (0-based) that carry an estimate.
    pub indices: Range<usize>,
    pub values: Vec<f64>,
}

fn check_grid(times: &[f64], k: usize) -> Result<()> {
    let needed = 2 * k + 1;
    if times.len() < needed {
        return Err(Error::SeriesTooShort {
            len: times.len(),
            needed,
        });
    }
    let dt = times[1] - times[0];
    let tol = 1e-8 * dt.abs().max(f64::MIN_POSITIVE);
    for i in 1..times.len() - 1 {
        let step = times[i + 1] - times[i];
        if (step - dt).abs() > tol || !(step > 0.0) {
            return Err(Error::NonUniformGrid { index: i + 1 });
        }
    }
    Ok(())
}

pub fn estimate_derivative(series: &[f64], times: &[f64], spec: &DifferenceSpec) -> Result<DerivativeEstimate> {
    if series.len() != times.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} samples for {} time points",
            series.len(),
            times.len()
        )));
    }
    let k = spec.k;
    if k == 0 {
        return Err(Error::InvalidConfig("difference half-window k must be ≥ 1".into()));
    }
    check_grid(times, k)?;
    let w = lpr_weights(k);
    let indices = k..times.len() - k;
    let values = indices
        .clone()
        .map(|i| {
            (1..=k)
                .map(|j| w[j - 1] * (series[i + j] - series[i - j]) / (times[i + j] - times[i - j]))
                .sum()
        })
        .collect();
    Ok(DerivativeEstimate { indices, values })
}

/// Derivatives of every state of one experiment: `(M − 2k) × n_x`.
pub fn estimate_experiment(e: &TimeSeriesExperiment, spec: &DifferenceSpec) -> Result<(Range<usize>, DMatrix<f64>)> {
    let rows = e.len().saturating_sub(2 * spec.k);
    let mut out = DMatrix::zeros(rows, e.states.ncols());
    let mut range = spec.k..spec.k;
    for n in 0..e.states.ncols() {
        let series: Vec<f64> = e.states.column(n).iter().copied().collect();
        let est = estimate_derivative(&series, &e.times, spec)?;
        out.column_mut(n).copy_from_slice(&est.values);
        range = est.indices;
    }
    if e.states.ncols() == 0 {
        check_grid(&e.times, spec.k)?;
        range = spec.k..e.len() - spec.k;
    }
    Ok((range, out))
}
