//! Synthetic data: the eight-species generalised repressilator, an adaptive
//! Dormand–Prince integrator and seeded dataset generation.

use nalgebra::DMatrix;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Open01, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datamodel::{HeterogeneousDataset, TimeSeriesExperiment};
use crate::{Error, Result};

pub const N_SPECIES: usize = 8;

/// Kinetic parameters, one row per species:
/// `[production p1, threshold p2, Hill coefficient p3, basal rate p4, degradation p5]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RepressilatorParams {
    pub p: [[f64; 5]; N_SPECIES],
}

impl RepressilatorParams {
    pub fn mean() -> Self {
        RepressilatorParams {
            p: [[40.0, 1.0, 3.0, 0.5, 1.0]; N_SPECIES],
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (i, row) in self.p.iter().enumerate() {
            if row.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
                return Err(Error::InvalidConfig(format!(
                    "species {}: parameters must be positive",
                    i + 1
                )));
            }
            if row[2] < 1.0 {
                return Err(Error::InvalidConfig(format!(
                    "species {}: Hill coefficient below 1",
                    i + 1
                )));
            }
        }
        Ok(())
    }
}

/// Species `i` is repressed by species `i − 1` (species 1 by species 8).
pub fn repressilator_rhs(x: &[f64], params: &RepressilatorParams, dx: &mut [f64]) {
    for i in 0..N_SPECIES {
        let [p1, p2, p3, p4, p5] = params.p[i];
        let pred = x[(i + N_SPECIES - 1) % N_SPECIES];
        dx[i] = p1 / (p2.powf(p3) + pred.powf(p3)) + p4 - p5 * x[i];
    }
}

/// Columns of the parameter table that `spread` perturbs. Threshold and Hill
/// coefficient stay at their means by default, as the dictionary assumes them known.
pub const DEFAULT_PERTURBED: [bool; 5] = [true, false, false, true, true];

/// Every entry drawn from `[(1−spread)·p̄, (1+spread)·p̄]`.
pub fn sample_experiment_params<R: Rng + ?Sized>(mean: &RepressilatorParams, spread: f64, rng: &mut R) -> RepressilatorParams {
    sample_experiment_params_masked(mean, spread, &[true; 5], rng)
}

/// As [`sample_experiment_params`], but columns with `perturbed[j] == false` keep
/// their mean. One uniform is consumed per entry either way.
pub fn sample_experiment_params_masked<R: Rng + ?Sized>(
    mean: &RepressilatorParams,
    spread: f64,
    perturbed: &[bool; 5],
    rng: &mut R,
) -> RepressilatorParams {
    let mut out = *mean;
    for row in out.p.iter_mut() {
        for (j, v) in row.iter_mut().enumerate() {
            let u: f64 = rng.random();
            if perturbed[j] {
                *v *= 1.0 - spread + 2.0 * spread * u;
            }
        }
    }
    out
}

/// Accepted steps of an integration with cubic Hermite interpolation between them.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    derivs: Vec<Vec<f64>>,
}

impl Trajectory {
    pub fn dim(&self) -> usize {
        self.states[0].len()
    }

    pub fn t_end(&self) -> f64 {
        *self.times.last().unwrap()
    }

    pub fn n_steps(&self) -> usize {
        self.times.len() - 1
    }

    /// State at `t`, clamped to the integrated interval.
    pub fn eval(&self, t: f64) -> Vec<f64> {
        let last = self.times.len() - 1;
        if t <= self.times[0] {
            return self.states[0].clone();
        }
        if t >= self.times[last] {
            return self.states[last].clone();
        }
        let j = self.times.partition_point(|s| *s <= t) - 1;
        let (t0, t1) = (self.times[j], self.times[j + 1]);
        let h = t1 - t0;
        let s = (t - t0) / h;
        let s2 = s * s;
        let s3 = s2 * s;
        let h00 = 2.0 * s3 - 3.0 * s2 + 1.0;
        let h10 = s3 - 2.0 * s2 + s;
        let h01 = -2.0 * s3 + 3.0 * s2;
        let h11 = s3 - s2;
        (0..self.dim())
            .map(|i| {
                h00 * self.states[j][i]
                    + h10 * h * self.derivs[j][i]
                    + h01 * self.states[j + 1][i]
                    + h11 * h * self.derivs[j + 1][i]
            })
            .collect()
    }

    /// First sample that is not strictly positive, as `(t, 1-based state)`.
    pub fn first_nonpositive(&self) -> Option<(f64, usize)> {
        self.times.iter().zip(&self.states).find_map(|(t, x)| {
            x.iter()
                .position(|v| !(*v > 0.0))
                .map(|i| (*t, i + 1))
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntegratorOptions {
    pub rtol: f64,
    pub atol: f64,
    pub max_steps: usize,
}

impl IntegratorOptions {
    pub fn with_tol(rk_tol: f64) -> Self {
        IntegratorOptions {
            rtol: rk_tol,
            atol: rk_tol,
            max_steps: 1_000_000,
        }
    }
}

// Dormand–Prince 5(4) tableau.
const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

const SAFETY: f64 = 0.9;
const FAC_MIN: f64 = 0.2;
const FAC_MAX: f64 = 10.0;
const BETA: f64 = 0.04;
const EXPO: f64 = 0.2 - BETA * 0.75;

fn err_norm(err: &[f64], y0: &[f64], y1: &[f64], opts: &IntegratorOptions) -> f64 {
    let sum: f64 = err
        .iter()
        .zip(y0.iter().zip(y1))
        .map(|(e, (a, b))| {
            let sc = opts.atol + opts.rtol * a.abs().max(b.abs());
            (e / sc).powi(2)
        })
        .sum();
    (sum / err.len() as f64).sqrt()
}

fn initial_step<F: FnMut(f64, &[f64], &mut [f64])>(
    rhs: &mut F,
    x0: &[f64],
    f0: &[f64],
    span: f64,
    opts: &IntegratorOptions,
) -> f64 {
    let n = x0.len() as f64;
    let sc: Vec<f64> = x0.iter().map(|x| opts.atol + opts.rtol * x.abs()).collect();
    let d0 = (x0.iter().zip(&sc).map(|(x, s)| (x / s).powi(2)).sum::<f64>() / n).sqrt();
    let d1 = (f0.iter().zip(&sc).map(|(f, s)| (f / s).powi(2)).sum::<f64>() / n).sqrt();
    let h0 = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
    let h0 = h0.min(span);
    let x1: Vec<f64> = x0.iter().zip(f0).map(|(x, f)| x + h0 * f).collect();
    let mut f1 = vec![0.0; x0.len()];
    rhs(h0, &x1, &mut f1);
    let d2 = (f1
        .iter()
        .zip(f0)
        .zip(&sc)
        .map(|((a, b), s)| ((a - b) / s).powi(2))
        .sum::<f64>()
        / n)
        .sqrt()
        / h0;
    let h1 = if d1.max(d2) <= 1e-15 {
        (h0 * 1e-3).max(1e-6)
    } else {
        (0.01 / d1.max(d2)).powf(0.2)
    };
    (100.0 * h0).min(h1).min(span)
}

/// Integrates `ẋ = rhs(t, x)` from `t = 0` to `t_end` with local error control.
pub fn integrate_adaptive<F>(mut rhs: F, x0: &[f64], t_end: f64, opts: &IntegratorOptions) -> Result<Trajectory>
where
    F: FnMut(f64, &[f64], &mut [f64]),
{
    if !(opts.rtol > 0.0 && opts.atol > 0.0) {
        return Err(Error::InvalidConfig("integrator tolerance must be positive".into()));
    }
    if !(t_end >= 0.0 && t_end.is_finite()) {
        return Err(Error::InvalidConfig(format!("t_end = {t_end}")));
    }
    let n = x0.len();
    let mut t = 0.0;
    let mut y = x0.to_vec();
    let mut k1 = vec![0.0; n];
    rhs(t, &y, &mut k1);
    let mut traj = Trajectory {
        times: vec![t],
        states: vec![y.clone()],
        derivs: vec![k1.clone()],
    };
    if t_end == 0.0 {
        return Ok(traj);
    }
    let mut h = initial_step(&mut rhs, &y, &k1, t_end, opts);
    let (mut k2, mut k3, mut k4, mut k5, mut k6, mut k7) =
        (vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    let mut tmp = vec![0.0; n];
    let mut y1 = vec![0.0; n];
    let mut err = vec![0.0; n];
    let mut fac_old: f64 = 1e-4;
    let mut rejected = false;
    let mut steps = 0;
    while t < t_end {
        if steps >= opts.max_steps {
            return Err(Error::TooManySteps { steps, t_end });
        }
        steps += 1;
        let last = t + h >= t_end;
        if last {
            h = t_end - t;
        }
        if h <= 16.0 * f64::EPSILON * t.abs().max(1.0) {
            return Err(Error::StepSizeUnderflow { t });
        }
        for i in 0..n {
            tmp[i] = y[i] + h * A21 * k1[i];
        }
        rhs(t + C2 * h, &tmp, &mut k2);
        for i in 0..n {
            tmp[i] = y[i] + h * (A31 * k1[i] + A32 * k2[i]);
        }
        rhs(t + C3 * h, &tmp, &mut k3);
        for i in 0..n {
            tmp[i] = y[i] + h * (A41 * k1[i] + A42 * k2[i] + A43 * k3[i]);
        }
        rhs(t + C4 * h, &tmp, &mut k4);
        for i in 0..n {
            tmp[i] = y[i] + h * (A51 * k1[i] + A52 * k2[i] + A53 * k3[i] + A54 * k4[i]);
        }
        rhs(t + C5 * h, &tmp, &mut k5);
        for i in 0..n {
            tmp[i] = y[i] + h * (A61 * k1[i] + A62 * k2[i] + A63 * k3[i] + A64 * k4[i] + A65 * k5[i]);
        }
        rhs(t + h, &tmp, &mut k6);
        for i in 0..n {
            y1[i] = y[i] + h * (A71 * k1[i] + A73 * k3[i] + A74 * k4[i] + A75 * k5[i] + A76 * k6[i]);
        }
        let t_new = if last { t_end } else { t + h };
        rhs(t_new, &y1, &mut k7);
        for i in 0..n {
            err[i] = h * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i]);
        }
        let e = err_norm(&err, &y, &y1, opts);
        if !e.is_finite() {
            h *= FAC_MIN;
            rejected = true;
            continue;
        }
        let fac11 = e.powf(EXPO);
        if e <= 1.0 {
            let fac = (fac11 / fac_old.powf(BETA) / SAFETY).clamp(1.0 / FAC_MAX, 1.0 / FAC_MIN);
            let mut h_new = h / fac;
            if rejected {
                h_new = h_new.min(h);
            }
            fac_old = e.max(1e-4);
            rejected = false;
            t = t_new;
            std::mem::swap(&mut y, &mut y1);
            std::mem::swap(&mut k1, &mut k7);
            traj.times.push(t);
            traj.states.push(y.clone());
            traj.derivs.push(k1.clone());
            h = h_new;
        } else {
            h /= (fac11 / SAFETY).min(1.0 / FAC_MIN);
            rejected = true;
        }
    }
    Ok(traj)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenerationConfig {
    #[serde(rename = "C")]
    pub c: usize,
    pub t_end: f64,
    pub sample_interval: f64,
    pub spread: f64,
    pub sigma: f64,
    pub seed: u64,
    pub rk_tol: f64,
    /// Which parameter columns `spread` applies to; see [`DEFAULT_PERTURBED`].
    pub perturbed: [bool; 5],
    pub mean: RepressilatorParams,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        GenerationConfig {
            c: 1,
            t_end: 50.0,
            sample_interval: 1.0,
            spread: 0.2,
            sigma: 0.0,
            seed: 0,
            rk_tol: 1e-8,
            perturbed: DEFAULT_PERTURBED,
            mean: RepressilatorParams::mean(),
        }
    }
}

impl GenerationConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidConfig(msg.into()));
        if self.c < 1 {
            return bad("C must be ≥ 1");
        }
        if !(self.sample_interval > 0.0 && self.sample_interval.is_finite()) {
            return bad("sample_interval must be positive");
        }
        if !(0.0..1.0).contains(&self.spread) {
            return bad("spread must lie in [0, 1)");
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return bad("sigma must be ≥ 0");
        }
        if !(self.t_end > 0.0 && self.t_end.is_finite()) {
            return bad("t_end must be positive");
        }
        if !(self.rk_tol > 0.0) {
            return bad("rk_tol must be positive");
        }
        self.mean.validate()
    }

    /// Samples per experiment: `0, Δ, 2Δ, … ≤ t_end`.
    pub fn n_samples(&self) -> usize {
        (self.t_end / self.sample_interval + 1e-9).floor() as usize + 1
    }
}

fn experiment_rng(seed: u64, experiment: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(experiment as u64);
    rng
}

/// Generates experiment `c` (0-based). Experiments are independent of each
/// other and of `config.c`, so datasets with more experiments extend smaller ones.
pub fn generate_experiment(config: &GenerationConfig, c: usize) -> Result<TimeSeriesExperiment> {
    let mut rng = experiment_rng(config.seed, c);
    let params = sample_experiment_params_masked(&config.mean, config.spread, &config.perturbed, &mut rng);
    let x0: Vec<f64> = (0..N_SPECIES).map(|_| rng.sample(Open01)).collect();
    let traj = integrate_adaptive(
        |_, x, dx| repressilator_rhs(x, &params, dx),
        &x0,
        config.t_end,
        &IntegratorOptions::with_tol(config.rk_tol),
    )?;
    if let Some((t, state)) = traj.first_nonpositive() {
        return Err(Error::NonPositiveState { t, state });
    }
    let m = config.n_samples();
    let times: Vec<f64> = (0..m).map(|j| j as f64 * config.sample_interval).collect();
    let mut states = DMatrix::zeros(m, N_SPECIES);
    for (j, t) in times.iter().enumerate() {
        for (i, v) in traj.eval(*t).into_iter().enumerate() {
            states[(j, i)] = v;
        }
    }
    if config.sigma > 0.0 {
        for v in states.iter_mut() {
            let z: f64 = rng.sample(StandardNormal);
            *v += config.sigma * z;
        }
    }
    Ok(TimeSeriesExperiment {
        id: c + 1,
        times,
        states,
        inputs: None,
        meta: serde_json::json!({
            "params": params.p,
            "x0": x0,
            "sigma": config.sigma,
            "integrator_steps": traj.n_steps(),
        }),
    })
}

pub fn generate_dataset(config: &GenerationConfig) -> Result<HeterogeneousDataset> {
    config.validate()?;
    let experiments = (0..config.c)
        .into_par_iter()
        .map(|c| generate_experiment(config, c))
        .collect::<Result<Vec<_>>>()?;
    Ok(HeterogeneousDataset {
        experiments,
        n_x: N_SPECIES,
        n_u: 0,
    })
}

/// True parameters recorded in an experiment's metadata by [`generate_experiment`].
pub fn experiment_params(e: &TimeSeriesExperiment) -> Option<RepressilatorParams> {
    serde_json::from_value(e.meta.get("params")?.clone())
        .ok()
        .map(|p| RepressilatorParams { p })
}
