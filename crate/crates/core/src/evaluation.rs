//! Scoring and the seeded Monte Carlo benchmark over `(C, M)`.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::time::Instant;

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datamodel::{stack_problem, HeterogeneousDataset, RegressionTarget, StackedProblem};
use crate::derivatives::{estimate_experiment, DifferenceSpec};
use crate::dictionary::{build_dictionary, true_weights, DictionarySpec, NegativeInputPolicy};
use crate::io::write_json;
use crate::simulator::{experiment_params, generate_dataset, GenerationConfig};
use crate::solver::{group_lasso_baseline, identify, IdentificationResult, SolverOptions};
use crate::{Error, Result};

/// `‖w_est − w_true‖ / ‖w_true‖`.
pub fn rnmse(w_est: &DVector<f64>, w_true: &DVector<f64>) -> Result<f64> {
    if w_est.len() != w_true.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} estimated weights, {} true weights",
            w_est.len(),
            w_true.len()
        )));
    }
    let norm = w_true.norm();
    if norm == 0.0 {
        return Err(Error::ZeroNormTruth);
    }
    Ok((w_est - w_true).norm() / norm)
}

/// Precision and recall of a recovered block support. Empty supports score 0.
pub fn support_recovery(recovered: &[usize], truth: &[usize]) -> (f64, f64) {
    let hits = recovered.iter().filter(|i| truth.contains(i)).count() as f64;
    let precision = if recovered.is_empty() {
        0.0
    } else {
        hits / recovered.len() as f64
    };
    let recall = if truth.is_empty() { 0.0 } else { hits / truth.len() as f64 };
    (precision, recall)
}

/// Blocks of a stacked weight vector with any nonzero entry.
pub fn nonzero_blocks(w: &DVector<f64>, c_count: usize) -> Vec<usize> {
    (0..w.len() / c_count)
        .filter(|&i| w.rows(i * c_count, c_count).iter().any(|v| *v != 0.0))
        .collect()
}

/// Derivatives and dictionaries for every experiment, trimmed consistently.
pub struct PreparedData {
    pub targets: Vec<RegressionTarget>,
    pub dictionaries: Vec<nalgebra::DMatrix<f64>>,
    pub clamped: usize,
}

pub fn prepare(
    ds: &HeterogeneousDataset,
    diff: &DifferenceSpec,
    spec: &DictionarySpec,
    policy: NegativeInputPolicy,
) -> Result<PreparedData> {
    let mut derivs = Vec::with_capacity(ds.n_experiments());
    let mut dictionaries = Vec::with_capacity(ds.n_experiments());
    let mut clamped = 0;
    for e in &ds.experiments {
        let (rows, d) = estimate_experiment(e, diff)?;
        let dict = build_dictionary(e, spec, rows, policy)?;
        clamped += dict.clamped;
        derivs.push(d);
        dictionaries.push(dict.values);
    }
    let targets = (0..ds.n_x)
        .map(|n| RegressionTarget {
            state_index: n,
            y_per_experiment: derivs.iter().map(|d| d.column(n).into_owned()).collect(),
        })
        .collect();
    Ok(PreparedData {
        targets,
        dictionaries,
        clamped,
    })
}

impl PreparedData {
    pub fn problem(&self, state: usize) -> Result<StackedProblem> {
        stack_problem(&self.targets[state], &self.dictionaries)
    }
}

/// Stacked ground truth for state `n` (0-based) from the parameters recorded
/// in each experiment's metadata.
pub fn stacked_true_weights(ds: &HeterogeneousDataset, spec: &DictionarySpec, n: usize) -> Result<DVector<f64>> {
    let per: Vec<DVector<f64>> = ds
        .experiments
        .iter()
        .map(|e| {
            let params = experiment_params(e).ok_or_else(|| {
                Error::InvalidDataset(format!("experiment {} carries no generator parameters", e.id))
            })?;
            true_weights(&params, spec, n)
        })
        .collect::<Result<_>>()?;
    Ok(crate::linalg::join(&per))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    GroupLasso,
    Full,
}

impl Algorithm {
    pub fn name(self) -> &'static str {
        match self {
            Algorithm::GroupLasso => "group_lasso",
            Algorithm::Full => "full",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepConfig {
    pub c_grid: Vec<usize>,
    /// Regression rows per experiment; each run uses `M + 2k` samples.
    pub m_grid: Vec<usize>,
    pub repeats: usize,
    pub algorithms: Vec<Algorithm>,
    pub generation: GenerationConfig,
    pub difference: DifferenceSpec,
    pub dictionary: DictionarySpec,
    pub negative_policy: NegativeInputPolicy,
    pub solver: SolverOptions,
    /// `λ` of the group-lasso baseline (`S = λ⁻¹I`).
    pub group_lasso_lambda: f64,
    pub seed: u64,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            c_grid: vec![1, 2, 4, 6, 8, 10],
            m_grid: vec![10, 20, 30, 40, 50],
            repeats: 20,
            algorithms: vec![Algorithm::GroupLasso, Algorithm::Full],
            generation: GenerationConfig::default(),
            difference: DifferenceSpec::default(),
            dictionary: DictionarySpec::repressilator_default(),
            negative_policy: NegativeInputPolicy::Clamp,
            solver: SolverOptions::default(),
            group_lasso_lambda: 1.0,
            seed: 0,
        }
    }
}

impl SweepConfig {
    pub fn validate(&self) -> Result<()> {
        if self.c_grid.is_empty() || self.m_grid.is_empty() || self.algorithms.is_empty() {
            return Err(Error::InvalidConfig("sweep grids and algorithm list must be non-empty".into()));
        }
        if self.c_grid.contains(&0) || self.m_grid.contains(&0) {
            return Err(Error::InvalidConfig("grid values must be ≥ 1".into()));
        }
        if self.repeats < 1 {
            return Err(Error::InvalidConfig("repeats must be ≥ 1".into()));
        }
        if !(self.group_lasso_lambda > 0.0) {
            return Err(Error::InvalidConfig("group_lasso_lambda must be positive".into()));
        }
        self.generation.validate()?;
        self.solver.validate()?;
        self.dictionary.validate(crate::simulator::N_SPECIES)?;
        DifferenceSpec::new(self.difference.k).map(|_| ())
    }

    /// Seed of repeat `r`, a SplitMix64 mix of the base seed and `r`.
    pub fn repeat_seed(&self, repeat: usize) -> u64 {
        let mut z = self
            .seed
            .wrapping_add((repeat as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    /// Generator settings for one repeat: enough experiments and samples for
    /// the largest grid cell. Smaller cells use leading experiments and samples.
    pub fn master_generation(&self, repeat: usize) -> GenerationConfig {
        let c_max = *self.c_grid.iter().max().unwrap();
        let m_max = *self.m_grid.iter().max().unwrap();
        let needed = (self.difference.samples_for_rows(m_max) - 1) as f64 * self.generation.sample_interval;
        GenerationConfig {
            c: c_max,
            t_end: self.generation.t_end.max(needed),
            seed: self.repeat_seed(repeat),
            ..self.generation.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub algorithm: Algorithm,
    #[serde(rename = "C")]
    pub c: usize,
    #[serde(rename = "M")]
    pub m: usize,
    pub repeat: usize,
    /// 1-based state index.
    pub state: usize,
    pub rnmse: Option<f64>,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub exact_support: bool,
    pub failed: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub algorithm: Algorithm,
    #[serde(rename = "C")]
    pub c: usize,
    #[serde(rename = "M")]
    pub m: usize,
    pub runs: usize,
    pub failed: usize,
    pub mean_rnmse: f64,
    pub std_rnmse: f64,
    pub min_rnmse: f64,
    pub max_rnmse: f64,
    pub support_recovery_rate: f64,
    pub mean_precision: f64,
    pub mean_recall: f64,
    /// More than 20% of runs failed.
    pub invalid: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub config: SweepConfig,
    pub cells: Vec<CellSummary>,
    pub records: Vec<RunRecord>,
    /// Wall-clock seconds; kept out of the CSV/JSON outputs so they stay reproducible.
    #[serde(skip)]
    pub wall_time_secs: f64,
}

fn score(
    algorithm: Algorithm,
    result: Result<IdentificationResult>,
    truth: &DVector<f64>,
    c_count: usize,
) -> (Option<f64>, Option<(f64, f64, bool)>, Option<String>) {
    match result.and_then(|r| rnmse(&r.stacked_weights(), truth).map(|e| (e, r))) {
        Ok((e, r)) => {
            let true_support = nonzero_blocks(truth, c_count);
            let (p, rc) = support_recovery(&r.support, &true_support);
            (Some(e), Some((p, rc, r.support == true_support)), None)
        }
        Err(err) => {
            log::debug!("{} run failed: {err}", algorithm.name());
            (None, None, Some(err.to_string()))
        }
    }
}

fn run_cell(
    config: &SweepConfig,
    master: &Result<HeterogeneousDataset>,
    repeat: usize,
    c_count: usize,
    m: usize,
) -> Vec<RunRecord> {
    let n_states = crate::simulator::N_SPECIES;
    let failed_all = |msg: String| {
        config
            .algorithms
            .iter()
            .flat_map(|&algorithm| {
                let msg = msg.clone();
                (0..n_states).map(move |n| RunRecord {
                    algorithm,
                    c: c_count,
                    m,
                    repeat,
                    state: n + 1,
                    rnmse: None,
                    precision: None,
                    recall: None,
                    exact_support: false,
                    failed: true,
                    error: Some(msg.clone()),
                })
            })
            .collect::<Vec<_>>()
    };
    let master = match master {
        Ok(ds) => ds,
        Err(e) => return failed_all(e.to_string()),
    };
    let ds = master.subset(c_count, config.difference.samples_for_rows(m));
    let prepared = match prepare(&ds, &config.difference, &config.dictionary, config.negative_policy) {
        Ok(p) => p,
        Err(e) => return failed_all(e.to_string()),
    };
    let mut out = Vec::with_capacity(config.algorithms.len() * n_states);
    for &algorithm in &config.algorithms {
        for n in 0..n_states {
            let truth = stacked_true_weights(&ds, &config.dictionary, n);
            let (rn, sup, error) = match truth {
                Err(e) => (None, None, Some(e.to_string())),
                Ok(truth) => {
                    let result = prepared.problem(n).and_then(|p| match algorithm {
                        Algorithm::Full => identify(&p, &config.solver),
                        Algorithm::GroupLasso => group_lasso_baseline(&p, config.group_lasso_lambda, &config.solver),
                    });
                    score(algorithm, result, &truth, c_count)
                }
            };
            out.push(RunRecord {
                algorithm,
                c: c_count,
                m,
                repeat,
                state: n + 1,
                rnmse: rn,
                precision: sup.map(|s| s.0),
                recall: sup.map(|s| s.1),
                exact_support: sup.is_some_and(|s| s.2),
                failed: rn.is_none(),
                error,
            });
        }
    }
    out
}

fn summarize(config: &SweepConfig, records: &[RunRecord]) -> Vec<CellSummary> {
    let mut cells = Vec::new();
    for &algorithm in &config.algorithms {
        for &c in &config.c_grid {
            for &m in &config.m_grid {
                let runs: Vec<&RunRecord> = records
                    .iter()
                    .filter(|r| r.algorithm == algorithm && r.c == c && r.m == m)
                    .collect();
                let ok: Vec<&RunRecord> = runs.iter().copied().filter(|r| !r.failed).collect();
                let vals: Vec<f64> = ok.iter().filter_map(|r| r.rnmse).collect();
                let n_ok = vals.len() as f64;
                let mean = vals.iter().sum::<f64>() / n_ok;
                let var = if vals.len() > 1 {
                    vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n_ok - 1.0)
                } else {
                    0.0
                };
                let failed = runs.len() - ok.len();
                let mean_of = |f: &dyn Fn(&RunRecord) -> f64| ok.iter().map(|r| f(r)).sum::<f64>() / n_ok;
                cells.push(CellSummary {
                    algorithm,
                    c,
                    m,
                    runs: runs.len(),
                    failed,
                    mean_rnmse: mean,
                    std_rnmse: var.sqrt(),
                    min_rnmse: vals.iter().copied().fold(f64::INFINITY, f64::min),
                    max_rnmse: vals.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                    support_recovery_rate: mean_of(&|r| if r.exact_support { 1.0 } else { 0.0 }),
                    mean_precision: mean_of(&|r| r.precision.unwrap_or(0.0)),
                    mean_recall: mean_of(&|r| r.recall.unwrap_or(0.0)),
                    invalid: failed as f64 > 0.2 * runs.len() as f64,
                });
            }
        }
    }
    cells
}

pub fn run_sweep(config: &SweepConfig) -> Result<SweepReport> {
    config.validate()?;
    let start = Instant::now();
    let cells: Vec<(usize, usize)> = config
        .c_grid
        .iter()
        .flat_map(|&c| config.m_grid.iter().map(move |&m| (c, m)))
        .collect();
    let records: Vec<RunRecord> = (0..config.repeats)
        .into_par_iter()
        .flat_map_iter(|repeat| {
            let master = generate_dataset(&config.master_generation(repeat));
            cells
                .par_iter()
                .flat_map_iter(|&(c, m)| run_cell(config, &master, repeat, c, m))
                .collect::<Vec<_>>()
        })
        .collect();
    let mut records = records;
    records.sort_by(|a, b| (a.algorithm, a.c, a.m, a.repeat, a.state).cmp(&(b.algorithm, b.c, b.m, b.repeat, b.state)));
    let cells = summarize(config, &records);
    Ok(SweepReport {
        config: config.clone(),
        cells,
        records,
        wall_time_secs: start.elapsed().as_secs_f64(),
    })
}

fn opt(v: Option<f64>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

impl SweepReport {
    pub fn cell(&self, algorithm: Algorithm, c: usize, m: usize) -> Option<&CellSummary> {
        self.cells
            .iter()
            .find(|s| s.algorithm == algorithm && s.c == c && s.m == m)
    }

    /// Valid cell with the smallest mean RNMSE.
    pub fn best_cell(&self, algorithm: Algorithm) -> Option<&CellSummary> {
        self.cells
            .iter()
            .filter(|s| s.algorithm == algorithm && !s.invalid && s.mean_rnmse.is_finite())
            .min_by(|a, b| a.mean_rnmse.total_cmp(&b.mean_rnmse))
    }

    pub fn any_invalid(&self) -> bool {
        self.cells.iter().any(|c| c.invalid)
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        let _ = w.write_record([
            "algorithm", "C", "M", "repeat", "state", "rnmse", "precision", "recall", "exact_support", "failed", "error",
        ]);
        for r in &self.records {
            let _ = w.write_record([
                r.algorithm.name().to_string(),
                r.c.to_string(),
                r.m.to_string(),
                r.repeat.to_string(),
                r.state.to_string(),
                opt(r.rnmse),
                opt(r.precision),
                opt(r.recall),
                r.exact_support.to_string(),
                r.failed.to_string(),
                r.error.clone().unwrap_or_default(),
            ]);
        }
        String::from_utf8(w.into_inner().unwrap_or_default()).unwrap_or_default()
    }

    /// Mean RNMSE matrix: one row per `M`, one column per `C`.
    pub fn heatmap_csv(&self, algorithm: Algorithm) -> String {
        let mut s = String::from("M\\C");
        for c in &self.config.c_grid {
            let _ = write!(s, ",{c}");
        }
        s.push('\n');
        for &m in &self.config.m_grid {
            let _ = write!(s, "{m}");
            for &c in &self.config.c_grid {
                let v = self.cell(algorithm, c, m).map(|x| x.mean_rnmse);
                let _ = write!(s, ",{}", opt(v.filter(|v| v.is_finite())));
            }
            s.push('\n');
        }
        s
    }

    /// Writes `runs.csv`, `summary.json`, `heatmap_<algorithm>.csv` and `timing.json`.
    pub fn write_all(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("runs.csv"), self.to_csv())?;
        #[derive(Serialize)]
        struct Summary<'a> {
            config: &'a SweepConfig,
            cells: &'a [CellSummary],
        }
        write_json(
            &dir.join("summary.json"),
            &Summary {
                config: &self.config,
                cells: &self.cells,
            },
        )?;
        for &a in &self.config.algorithms {
            fs::write(dir.join(format!("heatmap_{}.csv", a.name())), self.heatmap_csv(a))?;
        }
        write_json(
            &dir.join("timing.json"),
            &serde_json::json!({ "wall_time_secs": self.wall_time_secs }),
        )
    }
}
