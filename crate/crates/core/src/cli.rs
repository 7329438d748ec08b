//! Command-line interface.
//!
//! Exit codes: 0 success, 1 runtime or numerical failure, 2 usage or configuration error.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::Value;

use crate::config::RunConfig;
use crate::datamodel::validate_dataset;
use crate::derivatives::{estimate_experiment, DifferenceSpec};
use crate::dictionary::{build_dictionary, DictionarySpec};
use crate::evaluation::{prepare, run_sweep, Algorithm};
use crate::io::{read_dataset, write_dataset, write_json};
use crate::simulator::{experiment_params, generate_dataset};
use crate::solver::{group_lasso_baseline, identify, IdentificationResult, PrecisionStructure};
use crate::Error;

#[derive(Debug, Parser)]
#[command(name = "reactnet", version, about = "Sparse identification of reaction-network dynamics from heterogeneous time series")]
pub struct Cli {
    /// JSON config with flat dotted keys; flags override it.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Worker threads (defaults to all cores). Outputs do not depend on it.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Raise log verbosity (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate perturbed repressilator experiments.
    Simulate(SimulateArgs),
    /// Estimate derivatives of a dataset.
    Derivatives(DerivativesArgs),
    /// Evaluate the dictionary on a dataset.
    Dictionary(DictionaryArgs),
    /// Identify the model of every state variable.
    Identify(IdentifyArgs),
    /// Benchmark both algorithms over a (C, M) grid.
    Sweep(SweepArgs),
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Output directory for CSVs and the manifest.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long = "C", alias = "c")]
    pub c: Option<usize>,
    #[arg(long, allow_negative_numbers = true)]
    pub t_end: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    pub sample_interval: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    pub spread: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    pub sigma: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, allow_negative_numbers = true)]
    pub rk_tol: Option<f64>,
}

#[derive(Debug, Args)]
pub struct DatasetArgs {
    /// Dataset manifest.
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// Derivative half-window.
    #[arg(long)]
    pub k: Option<usize>,
    /// Dictionary spec JSON (default: 25-column repressilator dictionary).
    #[arg(long)]
    pub spec: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DerivativesArgs {
    #[command(flatten)]
    pub data: DatasetArgs,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DictionaryArgs {
    #[command(flatten)]
    pub data: DatasetArgs,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum AlgorithmArg {
    Full,
    GroupLasso,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum StructureArg {
    Full,
    Block,
    Fixed,
}

#[derive(Debug, Args)]
pub struct IdentifyArgs {
    #[command(flatten)]
    pub data: DatasetArgs,
    /// Result JSON path.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "full")]
    pub algorithm: AlgorithmArg,
    /// `λ` of `S = λ⁻¹I` for the baseline and the fixed structure.
    #[arg(long, allow_negative_numbers = true)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub k_max: Option<usize>,
    #[arg(long, value_enum)]
    pub s_structure: Option<StructureArg>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub repeats: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    pub c_grid: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    pub m_grid: Option<Vec<usize>>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, allow_negative_numbers = true)]
    pub sigma: Option<f64>,
    #[arg(long)]
    pub k: Option<usize>,
}

/// Usage/configuration failures exit with 2, everything else with 1.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Runtime(Error),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::InvalidConfig(msg) => CliError::Usage(msg),
            other => CliError::Runtime(other),
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

fn set(cfg: &mut RunConfig, key: &str, value: Option<impl Serialize>) -> CliResult<()> {
    if let Some(v) = value {
        cfg.set(key, serde_json::to_value(v).map_err(Error::from)?)?;
    }
    Ok(())
}

fn required(path: &Option<PathBuf>, what: &str) -> CliResult<PathBuf> {
    path.clone()
        .ok_or_else(|| CliError::Usage(format!("missing --{what}")))
}

fn existing(path: &Option<PathBuf>, what: &str) -> CliResult<PathBuf> {
    let p = required(path, what)?;
    if !p.exists() {
        return Err(CliError::Usage(format!("{} does not exist", p.display())));
    }
    Ok(p)
}

fn apply_dataset_args(cfg: &mut RunConfig, a: &DatasetArgs) -> CliResult<()> {
    set(cfg, "io.dataset", a.dataset.as_ref())?;
    set(cfg, "io.dictionary", a.spec.as_ref())?;
    set(cfg, "difference.k", a.k)
}

fn load_dataset(cfg: &RunConfig) -> CliResult<crate::datamodel::HeterogeneousDataset> {
    let path = existing(&cfg.io.dataset, "dataset")?;
    let ds = read_dataset(&path)?;
    let report = validate_dataset(&ds);
    if !report.is_valid() {
        return Err(CliError::Runtime(Error::InvalidDataset(report.to_string())));
    }
    Ok(ds)
}

fn dictionary_spec(cfg: &RunConfig) -> CliResult<DictionarySpec> {
    if cfg.io.dictionary.is_some() {
        existing(&cfg.io.dictionary, "spec")?;
    }
    Ok(cfg.dictionary_spec()?)
}

fn difference(cfg: &RunConfig) -> CliResult<DifferenceSpec> {
    Ok(DifferenceSpec::new(cfg.difference.k)?)
}

fn cmd_simulate(cfg: &mut RunConfig, a: &SimulateArgs) -> CliResult<String> {
    set(cfg, "io.output", a.out.as_ref())?;
    set(cfg, "generation.C", a.c)?;
    set(cfg, "generation.t_end", a.t_end)?;
    set(cfg, "generation.sample_interval", a.sample_interval)?;
    set(cfg, "generation.spread", a.spread)?;
    set(cfg, "generation.sigma", a.sigma)?;
    set(cfg, "generation.seed", a.seed)?;
    set(cfg, "generation.rk_tol", a.rk_tol)?;
    cfg.generation.validate()?;
    let out = required(&cfg.io.output, "out")?;
    let ds = generate_dataset(&cfg.generation)?;
    write_dataset(&out, &ds, serde_json::to_value(&cfg.generation).map_err(Error::from)?)?;
    let mut s = String::new();
    for e in &ds.experiments {
        let _ = write!(s, "experiment {:>3}: {} samples", e.id, e.len());
        if let Some(p) = experiment_params(e) {
            let col = |j: usize| p.p.iter().map(|r| r[j]).sum::<f64>() / p.p.len() as f64;
            let _ = write!(
                s,
                ", mean p1 = {:.3}, p4 = {:.3}, p5 = {:.3}",
                col(0),
                col(3),
                col(4)
            );
        }
        s.push('\n');
    }
    let _ = writeln!(s, "wrote {}", out.join(crate::io::MANIFEST_FILE).display());
    Ok(s)
}

fn cmd_derivatives(cfg: &mut RunConfig, a: &DerivativesArgs) -> CliResult<String> {
    apply_dataset_args(cfg, &a.data)?;
    set(cfg, "io.output", a.out.as_ref())?;
    let ds = load_dataset(cfg)?;
    let diff = difference(cfg)?;
    let out = required(&cfg.io.output, "out")?;
    fs::create_dir_all(&out).map_err(Error::from)?;
    let mut s = String::new();
    for e in &ds.experiments {
        let (rows, d) = estimate_experiment(e, &diff)?;
        let mut text = format!("# rows {}..{} of {}\nt", rows.start, rows.end, e.len());
        for n in 1..=ds.n_x {
            let _ = write!(text, ",dx{n}");
        }
        text.push('\n');
        for (r, sample) in rows.clone().enumerate() {
            let _ = write!(text, "{}", e.times[sample]);
            for v in d.row(r).iter() {
                let _ = write!(text, ",{v}");
            }
            text.push('\n');
        }
        let path = out.join(format!("derivatives_{:03}.csv", e.id));
        fs::write(&path, text).map_err(Error::from)?;
        let _ = writeln!(s, "wrote {}", path.display());
    }
    Ok(s)
}

fn cmd_dictionary(cfg: &mut RunConfig, a: &DictionaryArgs) -> CliResult<String> {
    apply_dataset_args(cfg, &a.data)?;
    set(cfg, "io.output", a.out.as_ref())?;
    let ds = load_dataset(cfg)?;
    let spec = dictionary_spec(cfg)?;
    let diff = difference(cfg)?;
    let out = required(&cfg.io.output, "out")?;
    fs::create_dir_all(&out).map_err(Error::from)?;
    let mut s = String::new();
    for e in &ds.experiments {
        let (rows, _) = estimate_experiment(e, &diff)?;
        let d = build_dictionary(e, &spec, rows.clone(), cfg.negative_policy)?;
        let mut text = format!("t,{}\n", spec.names().join(","));
        for (r, sample) in rows.enumerate() {
            let _ = write!(text, "{}", e.times[sample]);
            for v in d.values.row(r).iter() {
                let _ = write!(text, ",{v}");
            }
            text.push('\n');
        }
        let path = out.join(format!("dictionary_{:03}.csv", e.id));
        fs::write(&path, text).map_err(Error::from)?;
        let _ = writeln!(s, "wrote {} ({} clamped inputs)", path.display(), d.clamped);
    }
    Ok(s)
}

/// Three significant digits.
fn sig3(v: f64) -> String {
    if v == 0.0 || !v.is_finite() {
        return format!("{v}");
    }
    let digits = (2 - v.abs().log10().floor() as i32).max(0) as usize;
    format!("{:.*}", digits, v)
}

/// `dx3 = 39.2·hill(x2,1,0,3) − 0.97·x3 + 0.51`, using coefficients averaged over experiments.
pub fn format_equation(state: usize, names: &[String], result: &IdentificationResult) -> String {
    let mut s = format!("dx{} =", state + 1);
    let mut first = true;
    for &i in &result.support {
        let w = &result.weights[i];
        let mean = w.iter().sum::<f64>() / w.len() as f64;
        let sign = if mean < 0.0 { "−" } else { "+" };
        let mag = sig3(mean.abs());
        let term = if names[i] == "1" { mag } else { format!("{mag}·{}", names[i]) };
        if first {
            let lead = if mean < 0.0 { "−" } else { "" };
            let _ = write!(s, " {lead}{term}");
            first = false;
        } else {
            let _ = write!(s, " {sign} {term}");
        }
    }
    if first {
        s.push_str(" 0");
    }
    s
}

#[derive(Serialize)]
struct StateResult<'a> {
    state: usize,
    equation: String,
    terms: Vec<&'a str>,
    result: &'a IdentificationResult,
}

fn cmd_identify(cfg: &mut RunConfig, a: &IdentifyArgs) -> CliResult<String> {
    apply_dataset_args(cfg, &a.data)?;
    set(cfg, "io.output", a.out.as_ref())?;
    set(cfg, "solver.k_max", a.k_max)?;
    if let Some(l) = a.lambda {
        if !(l > 0.0) {
            return Err(CliError::Usage("--lambda must be positive".into()));
        }
    }
    let lambda = a.lambda.unwrap_or(1.0);
    if let Some(st) = a.s_structure {
        cfg.solver.s_structure = match st {
            StructureArg::Full => PrecisionStructure::Full,
            StructureArg::Block => PrecisionStructure::BlockDiagonal,
            StructureArg::Fixed => PrecisionStructure::FixedScaledIdentity { lambda },
        };
    }
    cfg.solver.validate()?;
    let out = required(&cfg.io.output, "out")?;
    let ds = load_dataset(cfg)?;
    let spec = dictionary_spec(cfg)?;
    spec.validate(ds.n_x)?;
    let diff = difference(cfg)?;
    let prepared = prepare(&ds, &diff, &spec, cfg.negative_policy)?;
    let names = spec.names();
    let mut results = Vec::with_capacity(ds.n_x);
    for n in 0..ds.n_x {
        let p = prepared.problem(n)?;
        let r = match a.algorithm {
            AlgorithmArg::Full => identify(&p, &cfg.solver),
            AlgorithmArg::GroupLasso => group_lasso_baseline(&p, lambda, &cfg.solver),
        }?;
        results.push(r);
    }
    let mut summary = String::new();
    let states: Vec<StateResult> = results
        .iter()
        .enumerate()
        .map(|(n, r)| {
            let equation = format_equation(n, &names, r);
            let _ = writeln!(summary, "{equation}");
            StateResult {
                state: n + 1,
                equation,
                terms: r.support.iter().map(|&i| names[i].as_str()).collect(),
                result: r,
            }
        })
        .collect();
    let algorithm = match a.algorithm {
        AlgorithmArg::Full => Algorithm::Full,
        AlgorithmArg::GroupLasso => Algorithm::GroupLasso,
    };
    write_json(
        &out,
        &serde_json::json!({
            "algorithm": algorithm,
            "dictionary": names,
            "solver": cfg.solver,
            "states": states,
        }),
    )?;
    let _ = writeln!(summary, "wrote {}", out.display());
    Ok(summary)
}

fn cmd_sweep(cfg: &mut RunConfig, a: &SweepArgs) -> CliResult<String> {
    set(cfg, "io.output", a.out.as_ref())?;
    set(cfg, "sweep.repeats", a.repeats)?;
    set(cfg, "sweep.c_grid", a.c_grid.as_ref())?;
    set(cfg, "sweep.m_grid", a.m_grid.as_ref())?;
    set(cfg, "sweep.seed", a.seed)?;
    set(cfg, "generation.sigma", a.sigma)?;
    set(cfg, "difference.k", a.k)?;
    let sweep = cfg.sweep_config()?;
    sweep.validate()?;
    let out = required(&cfg.io.output, "out")?;
    let report = run_sweep(&sweep)?;
    report.write_all(&out)?;
    let mut s = String::new();
    for &alg in &sweep.algorithms {
        if let Some(best) = report.best_cell(alg) {
            let _ = writeln!(
                s,
                "{:<12} best mean RNMSE {:.4} at C = {}, M = {} (support recovery {:.2})",
                alg.name(),
                best.mean_rnmse,
                best.c,
                best.m,
                best.support_recovery_rate
            );
        }
    }
    let _ = writeln!(s, "wall time {:.1} s, wrote {}", report.wall_time_secs, out.display());
    if report.any_invalid() {
        let bad: Vec<String> = report
            .cells
            .iter()
            .filter(|c| c.invalid)
            .map(|c| format!("{} C={} M={}", c.algorithm.name(), c.c, c.m))
            .collect();
        print!("{s}");
        return Err(CliError::Runtime(Error::InvalidDataset(format!(
            "grid cells with more than 20% failed runs: {}",
            bad.join(", ")
        ))));
    }
    Ok(s)
}

fn init_threads(threads: Option<usize>) -> CliResult<()> {
    if let Some(n) = threads {
        if n == 0 {
            return Err(CliError::Usage("--threads must be ≥ 1".into()));
        }
        // A second call in the same process (tests) keeps the first pool.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    Ok(())
}

pub fn execute(cli: Cli) -> CliResult<String> {
    init_threads(cli.threads)?;
    let mut cfg = match &cli.config {
        Some(path) => {
            if !path.exists() {
                return Err(CliError::Usage(format!("{} does not exist", path.display())));
            }
            RunConfig::load(path).map_err(|e| CliError::Usage(e.to_string()))?
        }
        None => RunConfig::default(),
    };
    match &cli.command {
        Command::Simulate(a) => cmd_simulate(&mut cfg, a),
        Command::Derivatives(a) => cmd_derivatives(&mut cfg, a),
        Command::Dictionary(a) => cmd_dictionary(&mut cfg, a),
        Command::Identify(a) => cmd_identify(&mut cfg, a),
        Command::Sweep(a) => cmd_sweep(&mut cfg, a),
    }
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).try_init();
    match execute(cli) {
        Ok(out) => {
            print!("{out}");
            0
        }
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            2
        }
        Err(CliError::Runtime(e)) => {
            eprintln!("error: {e}");
            1
        }
    }
}

/// Reads a JSON value from a file, for callers that post-process CLI outputs.
pub fn read_json(path: &Path) -> crate::Result<Value> {
    Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
}
