//! Experiments, regression targets and the stacked multi-experiment problem.
//!
//! A stacked problem collects `C` per-experiment regressions `y[c] = A[c] w[c]`
//! that share the same `N` candidate basis functions. The weight vector is
//! ordered block-major: block `i` holds `w_i = [w_i[1], …, w_i[C]]`, so the
//! stacked index of `(basis i, experiment c)` is `i * C + c`. The stacked
//! design matrix is never materialized outside of tests; each block is stored
//! as its per-experiment columns.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// One experiment: sampled states (rows are sample instants) and optional inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeSeriesExperiment {
    /// 1-based experiment index.
    pub id: usize,
    pub times: Vec<f64>,
    /// `M × n_x`.
    pub states: DMatrix<f64>,
    /// `M × n_u`.
    pub inputs: Option<DMatrix<f64>>,
    #[serde(default)]
    pub meta: serde_json::Value,
}

impl TimeSeriesExperiment {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Keeps the first `samples` rows.
    pub fn truncated(&self, samples: usize) -> TimeSeriesExperiment {
        let m = samples.min(self.len());
        TimeSeriesExperiment {
            id: self.id,
            times: self.times[..m].to_vec(),
            states: self.states.rows(0, m).into_owned(),
            inputs: self.inputs.as_ref().map(|u| u.rows(0, m).into_owned()),
            meta: self.meta.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeterogeneousDataset {
    pub experiments: Vec<TimeSeriesExperiment>,
    pub n_x: usize,
    pub n_u: usize,
}

impl HeterogeneousDataset {
    pub fn n_experiments(&self) -> usize {
        self.experiments.len()
    }

    /// The first `c` experiments, each cut to `samples` rows.
    pub fn subset(&self, c: usize, samples: usize) -> HeterogeneousDataset {
        HeterogeneousDataset {
            experiments: self
                .experiments
                .iter()
                .take(c)
                .map(|e| e.truncated(samples))
                .collect(),
            n_x: self.n_x,
            n_u: self.n_u,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    /// 1-based experiment id, if the violation is local to one experiment.
    pub experiment: Option<usize>,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }

    fn push(&mut self, experiment: Option<usize>, message: impl Into<String>) {
        self.violations.push(Violation {
            experiment,
            message: message.into(),
        });
    }
}

impl std::fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        for v in &self.violations {
            match v.experiment {
                Some(id) => writeln!(f, "experiment {id}: {}", v.message)?,
                None => writeln!(f, "{}", v.message)?,
            }
        }
        Ok(())
    }
}

pub fn validate_dataset(ds: &HeterogeneousDataset) -> ValidationReport {
    let mut report = ValidationReport::default();
    if ds.experiments.is_empty() {
        report.push(None, "dataset has no experiments");
        return report;
    }
    for e in &ds.experiments {
        let id = Some(e.id);
        if e.times.windows(2).any(|w| w[1] <= w[0]) {
            report.push(id, "times not increasing");
        }
        if e.states.nrows() != e.times.len() {
            report.push(
                id,
                format!(
                    "state rows ({}) differ from time samples ({})",
                    e.states.nrows(),
                    e.times.len()
                ),
            );
        }
        if e.states.ncols() != ds.n_x {
            report.push(
                id,
                format!("has {} states, dataset declares {}", e.states.ncols(), ds.n_x),
            );
        }
        match &e.inputs {
            Some(u) => {
                if u.ncols() != ds.n_u {
                    report.push(
                        id,
                        format!("has {} inputs, dataset declares {}", u.ncols(), ds.n_u),
                    );
                }
                if u.nrows() != e.times.len() {
                    report.push(id, "input rows differ from time samples");
                }
                if u.iter().any(|v| !v.is_finite()) {
                    report.push(id, "non-finite input value");
                }
            }
            None if ds.n_u > 0 => report.push(id, "missing inputs"),
            None => {}
        }
        if e.times.iter().chain(e.states.iter()).any(|v| !v.is_finite()) {
            report.push(id, "non-finite value");
        }
    }
    let m0 = ds.experiments[0].len();
    if ds.experiments.iter().any(|e| e.len() != m0) {
        let lengths: Vec<String> = ds
            .experiments
            .iter()
            .map(|e| format!("{}:{}", e.id, e.len()))
            .collect();
        report.push(
            None,
            format!("unequal experiment lengths ({})", lengths.join(", ")),
        );
    }
    report
}

/// Regression targets `δ(x_n)` for one state across all experiments.
#[derive(Debug, Clone, PartialEq)]
pub struct RegressionTarget {
    pub state_index: usize,
    pub y_per_experiment: Vec<DVector<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SignConstraint {
    #[default]
    Free,
    Nonnegative,
    Nonpositive,
}

impl SignConstraint {
    pub fn project(self, v: f64) -> f64 {
        match self {
            SignConstraint::Free => v,
            SignConstraint::Nonnegative => v.max(0.0),
            SignConstraint::Nonpositive => v.min(0.0),
        }
    }

    pub fn admits(self, v: f64) -> bool {
        match self {
            SignConstraint::Free => true,
            SignConstraint::Nonnegative => v >= 0.0,
            SignConstraint::Nonpositive => v <= 0.0,
        }
    }
}

/// Block-structured regression `y = Σ_i A_i w_i` with `A_i = blkdiag(A[1]_{:,i}, …, A[C]_{:,i})`.
#[derive(Debug, Clone, PartialEq)]
pub struct StackedProblem {
    targets: Vec<DVector<f64>>,
    dictionaries: Vec<DMatrix<f64>>,
    constraints: Vec<SignConstraint>,
}

impl StackedProblem {
    pub fn n_experiments(&self) -> usize {
        self.targets.len()
    }

    pub fn n_samples(&self) -> usize {
        self.targets[0].len()
    }

    pub fn n_blocks(&self) -> usize {
        self.dictionaries[0].ncols()
    }

    /// `(C, M, N)`.
    pub fn layout(&self) -> (usize, usize, usize) {
        (self.n_experiments(), self.n_samples(), self.n_blocks())
    }

    pub fn n_weights(&self) -> usize {
        self.n_experiments() * self.n_blocks()
    }

    pub fn weight_index(&self, block: usize, experiment: usize) -> usize {
        block * self.n_experiments() + experiment
    }

    pub fn target(&self, experiment: usize) -> &DVector<f64> {
        &self.targets[experiment]
    }

    pub fn dictionary(&self, experiment: usize) -> &DMatrix<f64> {
        &self.dictionaries[experiment]
    }

    pub fn constraints(&self) -> &[SignConstraint] {
        &self.constraints
    }

    pub fn with_constraints(mut self, constraints: Vec<SignConstraint>) -> Result<Self> {
        if constraints.len() != self.n_blocks() {
            return Err(Error::DimensionMismatch(format!(
                "{} sign constraints for {} blocks",
                constraints.len(),
                self.n_blocks()
            )));
        }
        self.constraints = constraints;
        Ok(self)
    }

    /// Column `i` of experiment `c`, i.e. the nonzero part of stacked column `(i, c)`.
    pub fn block_column(&self, block: usize, experiment: usize) -> DVector<f64> {
        self.dictionaries[experiment].column(block).into_owned()
    }

    pub fn stacked_target(&self) -> DVector<f64> {
        let m = self.n_samples();
        DVector::from_fn(self.n_experiments() * m, |r, _| self.targets[r / m][r % m])
    }

    /// Weights of experiment `c` in dictionary column order.
    pub fn experiment_weights(&self, w: &DVector<f64>, experiment: usize) -> DVector<f64> {
        DVector::from_fn(self.n_blocks(), |i, _| w[self.weight_index(i, experiment)])
    }

    /// `A w`, returned per experiment.
    pub fn predict(&self, w: &DVector<f64>) -> Vec<DVector<f64>> {
        (0..self.n_experiments())
            .map(|c| &self.dictionaries[c] * self.experiment_weights(w, c))
            .collect()
    }

    pub fn predict_stacked(&self, w: &DVector<f64>) -> DVector<f64> {
        concat(&self.predict(w))
    }

    /// `A w − y` per experiment.
    pub fn residuals(&self, w: &DVector<f64>) -> Vec<DVector<f64>> {
        self.predict(w)
            .into_iter()
            .zip(&self.targets)
            .map(|(p, y)| p - y)
            .collect()
    }

    /// Dense `CM × NC` design matrix. Intended for tests and small oracles.
    pub fn dense_matrix(&self) -> DMatrix<f64> {
        let (c_count, m, n) = self.layout();
        let mut a = DMatrix::zeros(c_count * m, n * c_count);
        for c in 0..c_count {
            for i in 0..n {
                let col = self.weight_index(i, c);
                for r in 0..m {
                    a[(c * m + r, col)] = self.dictionaries[c][(r, i)];
                }
            }
        }
        a
    }

    /// Restricts the problem to the listed blocks, in the given order.
    pub fn select_blocks(&self, blocks: &[usize]) -> StackedProblem {
        StackedProblem {
            targets: self.targets.clone(),
            dictionaries: self
                .dictionaries
                .iter()
                .map(|a| a.select_columns(blocks))
                .collect(),
            constraints: blocks.iter().map(|&b| self.constraints[b]).collect(),
        }
    }

    /// Multiplies every column of block `i` (in all experiments) by `scale[i]`.
    pub fn scale_blocks(&self, scale: &[f64]) -> StackedProblem {
        let mut out = self.clone();
        for a in &mut out.dictionaries {
            for (i, s) in scale.iter().enumerate() {
                a.column_mut(i).scale_mut(*s);
            }
        }
        out
    }

    /// Recovers the per-experiment pieces `(y[c], A[c])`.
    pub fn unstack(&self) -> (Vec<DVector<f64>>, Vec<DMatrix<f64>>) {
        (self.targets.clone(), self.dictionaries.clone())
    }
}

fn concat(parts: &[DVector<f64>]) -> DVector<f64> {
    let len = parts.iter().map(|p| p.len()).sum();
    let mut out = DVector::zeros(len);
    let mut offset = 0;
    for p in parts {
        out.rows_mut(offset, p.len()).copy_from(p);
        offset += p.len();
    }
    out
}

fn check_shapes(target: &RegressionTarget, dictionaries: &[DMatrix<f64>]) -> Result<(usize, usize)> {
    if dictionaries.is_empty() {
        return Err(Error::DimensionMismatch("no dictionaries".into()));
    }
    if target.y_per_experiment.len() != dictionaries.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} target vectors for {} dictionaries",
            target.y_per_experiment.len(),
            dictionaries.len()
        )));
    }
    let m = dictionaries[0].nrows();
    let n = dictionaries[0].ncols();
    if n == 0 {
        return Err(Error::DimensionMismatch("dictionary has no columns".into()));
    }
    for (c, (y, a)) in target.y_per_experiment.iter().zip(dictionaries).enumerate() {
        if a.nrows() != m || a.ncols() != n {
            return Err(Error::DimensionMismatch(format!(
                "dictionary {} is {}×{}, expected {}×{}",
                c + 1,
                a.nrows(),
                a.ncols(),
                m,
                n
            )));
        }
        if y.len() != m {
            return Err(Error::DimensionMismatch(format!(
                "target {} has {} entries, expected {}",
                c + 1,
                y.len(),
                m
            )));
        }
    }
    Ok((m, n))
}

pub fn stack_problem(target: &RegressionTarget, dictionaries: &[DMatrix<f64>]) -> Result<StackedProblem> {
    let (_, n) = check_shapes(target, dictionaries)?;
    Ok(StackedProblem {
        targets: target.y_per_experiment.clone(),
        dictionaries: dictionaries.to_vec(),
        constraints: vec![SignConstraint::Free; n],
    })
}

/// Single regression with one weight vector shared by all experiments:
/// `y_cat = [y[1]; …; y[C]]`, `A_cat = [A[1]; …; A[C]]`.
pub fn concatenate_problem(
    target: &RegressionTarget,
    dictionaries: &[DMatrix<f64>],
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let (m, n) = check_shapes(target, dictionaries)?;
    let c_count = dictionaries.len();
    let y = concat(&target.y_per_experiment);
    let mut a = DMatrix::zeros(c_count * m, n);
    for (c, d) in dictionaries.iter().enumerate() {
        a.view_mut((c * m, 0), (m, n)).copy_from(d);
    }
    Ok((y, a))
}
