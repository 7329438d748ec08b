//! ADMM for the weighted group-lasso subproblem
//!
//! ```text
//! minimize  ½(y − Aw)ᵀS(y − Aw) + Σ_i θ_i ‖w_i‖₂
//! ```
//!
//! using the split `θ_i w_i = z_i` in scaled-dual form, so every z-update is a
//! block soft threshold at `1/ρ`.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::datamodel::{SignConstraint, StackedProblem};
use crate::linalg::{SampleMatrix, Sym};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdmmOptions {
    pub rho: f64,
    pub eps_abs: f64,
    pub eps_rel: f64,
    pub max_iters: usize,
    /// Residual balancing of `ρ`.
    pub adaptive_rho: bool,
}

impl Default for AdmmOptions {
    fn default() -> Self {
        AdmmOptions {
            rho: 1.0,
            eps_abs: 1e-6,
            eps_rel: 1e-4,
            max_iters: 5000,
            adaptive_rho: false,
        }
    }
}

impl AdmmOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.rho > 0.0 && self.eps_abs > 0.0 && self.eps_rel > 0.0) {
            return Err(Error::InvalidConfig("ADMM rho and tolerances must be positive".into()));
        }
        if self.max_iters == 0 {
            return Err(Error::InvalidConfig("ADMM max_iters must be ≥ 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdmmState {
    pub w: DVector<f64>,
    pub z: DVector<f64>,
    pub u: DVector<f64>,
    /// Split scale per stacked entry: `θ_i`, or 1 where `θ_i` is zero, or 0 where the block is not split.
    pub scale: DVector<f64>,
    pub rho: f64,
    pub r_history: Vec<f64>,
    pub s_history: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdmmOutcome {
    pub w: DVector<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub r_norm: f64,
    pub s_norm: f64,
    pub objective: f64,
}

/// `(1 − κ/‖a‖)₊ a`.
pub fn soft_threshold_vector(a: &DVector<f64>, kappa: f64) -> DVector<f64> {
    let norm = a.norm();
    if norm <= kappa {
        DVector::zeros(a.len())
    } else {
        a * (1.0 - kappa / norm)
    }
}

/// `r ≤ √n ε_abs + ε_rel max(‖Θw‖, ‖z‖)` and `s ≤ √n ε_abs + ε_rel ρ‖u‖`.
pub fn admm_converged(r_norm: f64, s_norm: f64, state: &AdmmState, options: &AdmmOptions) -> bool {
    let sqrt_n = (state.w.len() as f64).sqrt();
    let tw = state.w.component_mul(&state.scale).norm();
    let eps_primal = sqrt_n * options.eps_abs + options.eps_rel * tw.max(state.z.norm());
    let eps_dual = sqrt_n * options.eps_abs + options.eps_rel * state.rho * state.u.norm();
    r_norm <= eps_primal && s_norm <= eps_dual
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum BlockKind {
    /// `θ = 0` and unconstrained: solved exactly inside the linear system.
    Unsplit,
    /// Shrinkage weight 1 (`θ > 0`) or 0 (`θ = 0` with a sign constraint).
    Split { weight: f64 },
    /// `θ = ∞`: held at zero.
    Frozen,
}

fn classify(theta: f64, constraint: SignConstraint) -> (BlockKind, f64) {
    if theta.is_infinite() {
        (BlockKind::Frozen, 1.0)
    } else if theta > 0.0 {
        (BlockKind::Split { weight: 1.0 }, theta)
    } else if constraint == SignConstraint::Free {
        (BlockKind::Unsplit, 0.0)
    } else {
        (BlockKind::Split { weight: 0.0 }, 1.0)
    }
}

/// Smooth part `½wᵀGw − bᵀw` plus the penalty; add `½yᵀSy` for the full objective.
pub fn reduced_objective(gram: &Sym, b: &DVector<f64>, theta: &[f64], c_count: usize, w: &DVector<f64>) -> f64 {
    let smooth = 0.5 * w.dot(&gram.mul_vec(w)) - b.dot(w);
    smooth + penalty(theta, c_count, w)
}

fn penalty(theta: &[f64], c_count: usize, w: &DVector<f64>) -> f64 {
    theta
        .iter()
        .enumerate()
        .map(|(i, t)| {
            let norm = w.rows(i * c_count, c_count).norm();
            if norm == 0.0 {
                0.0
            } else {
                t * norm
            }
        })
        .sum()
}

/// `½(y − Aw)ᵀS(y − Aw) + Σθ_i‖w_i‖₂`.
pub fn group_lasso_objective(problem: &StackedProblem, s: &SampleMatrix, theta: &[f64], w: &DVector<f64>) -> f64 {
    let r = problem.residuals(w);
    0.5 * s.quad(&r) + penalty(theta, problem.n_experiments(), w)
}

pub fn admm_group_lasso(
    problem: &StackedProblem,
    s: &SampleMatrix,
    theta: &[f64],
    options: &AdmmOptions,
) -> Result<AdmmOutcome> {
    let gram = s.gram(problem)?;
    let b = s.weighted_target(problem)?;
    let ys: Vec<DVector<f64>> = (0..problem.n_experiments()).map(|c| problem.target(c).clone()).collect();
    let mut out = admm_group_lasso_gram(
        &gram,
        &b,
        problem.n_experiments(),
        theta,
        problem.constraints(),
        options,
        None,
    )?;
    out.objective += 0.5 * s.quad(&ys);
    Ok(out)
}

/// Core iteration on `G = AᵀSA`, `b = AᵀSy`. `θ_i = ∞` pins block `i` to zero.
/// The returned objective omits the constant `½yᵀSy`.
pub fn admm_group_lasso_gram(
    gram: &Sym,
    b: &DVector<f64>,
    c_count: usize,
    theta: &[f64],
    constraints: &[SignConstraint],
    options: &AdmmOptions,
    warm_start: Option<&DVector<f64>>,
) -> Result<AdmmOutcome> {
    options.validate()?;
    let n_blocks = theta.len();
    let dim = n_blocks * c_count;
    if gram.dim() != dim || b.len() != dim || constraints.len() != n_blocks {
        return Err(Error::DimensionMismatch(format!(
            "ADMM: {n_blocks} blocks × {c_count} experiments against system of size {}",
            gram.dim()
        )));
    }
    if let Some(bad) = theta.iter().position(|t| !(*t >= 0.0)) {
        return Err(Error::InvalidConfig(format!("theta[{bad}] = {} is negative", theta[bad])));
    }

    let mut kinds = Vec::with_capacity(n_blocks);
    let mut scale = DVector::zeros(dim);
    for i in 0..n_blocks {
        let (kind, s) = classify(theta[i], constraints[i]);
        kinds.push(kind);
        scale.rows_mut(i * c_count, c_count).fill(s);
    }
    let split_entries = kinds.iter().filter(|k| **k != BlockKind::Unsplit).count() * c_count;

    let mut rho = options.rho;
    let factor = |rho: f64| gram.add_diag(&(scale.component_mul(&scale) * rho)).cholesky();
    let mut chol = factor(rho)?;

    let mut state = AdmmState {
        w: warm_start.cloned().unwrap_or_else(|| DVector::zeros(dim)),
        z: DVector::zeros(dim),
        u: DVector::zeros(dim),
        scale: scale.clone(),
        rho,
        r_history: Vec::new(),
        s_history: Vec::new(),
    };
    if warm_start.is_some() {
        state.z = state.w.component_mul(&scale);
        for (i, kind) in kinds.iter().enumerate() {
            if *kind == BlockKind::Frozen {
                state.z.rows_mut(i * c_count, c_count).fill(0.0);
            }
        }
    }

    if split_entries == 0 {
        let w = chol.solve(b);
        let objective = reduced_objective(gram, b, theta, c_count, &w);
        return Ok(AdmmOutcome {
            w,
            iterations: 1,
            converged: true,
            r_norm: 0.0,
            s_norm: 0.0,
            objective,
        });
    }

    let mut converged = false;
    let mut iterations = 0;
    let (mut r_norm, mut s_norm) = (f64::INFINITY, f64::INFINITY);
    while iterations < options.max_iters {
        iterations += 1;
        let rhs = b + (&state.z - &state.u).component_mul(&scale) * rho;
        state.w = chol.solve(&rhs);
        let z_prev = state.z.clone();
        for (i, kind) in kinds.iter().enumerate() {
            let rows = i * c_count..(i + 1) * c_count;
            let zi = match kind {
                BlockKind::Unsplit => continue,
                BlockKind::Frozen => DVector::zeros(c_count),
                BlockKind::Split { weight } => {
                    let v = DVector::from_fn(c_count, |c, _| {
                        let k = rows.start + c;
                        constraints[i].project(scale[k] * state.w[k] + state.u[k])
                    });
                    soft_threshold_vector(&v, weight / rho)
                }
            };
            state.z.rows_mut(rows.start, c_count).copy_from(&zi);
        }
        let mut r2 = 0.0;
        for (i, kind) in kinds.iter().enumerate() {
            if *kind == BlockKind::Unsplit {
                continue;
            }
            for k in i * c_count..(i + 1) * c_count {
                let d = scale[k] * state.w[k] - state.z[k];
                state.u[k] += d;
                r2 += d * d;
            }
        }
        r_norm = r2.sqrt();
        s_norm = rho * (&state.z - &z_prev).norm();
        state.r_history.push(r_norm);
        state.s_history.push(s_norm);
        if admm_converged(r_norm, s_norm, &state, options) {
            converged = true;
            break;
        }
        if options.adaptive_rho && iterations % 10 == 0 {
            let new_rho = if r_norm > 10.0 * s_norm {
                rho * 2.0
            } else if s_norm > 10.0 * r_norm {
                rho / 2.0
            } else {
                rho
            };
            if new_rho != rho {
                state.u *= rho / new_rho;
                rho = new_rho;
                state.rho = rho;
                chol = factor(rho)?;
            }
        }
    }
    if !converged {
        log::debug!("ADMM stopped after {iterations} iterations: r = {r_norm:e}, s = {s_norm:e}");
    }

    // Split blocks are read off z, which carries exact zeros and feasible signs.
    let mut w = state.w.clone();
    for (i, kind) in kinds.iter().enumerate() {
        if *kind == BlockKind::Unsplit {
            continue;
        }
        for k in i * c_count..(i + 1) * c_count {
            w[k] = state.z[k] / scale[k];
        }
    }
    if !w.iter().all(|v| v.is_finite()) {
        return Err(Error::Diverged { iterations });
    }
    let objective = reduced_objective(gram, b, theta, c_count, &w);
    Ok(AdmmOutcome {
        w,
        iterations,
        converged,
        r_norm,
        s_norm,
        objective,
    })
}
