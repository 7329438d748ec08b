//! Block-sparse Bayesian identification.
//!
//! The cost over weights `w`, block variances `γ` and noise precision `S` is
//!
//! ```text
//! L = −log|S| + log|Γ| + log|Γ⁻¹ + AᵀSA| + (y − Aw)ᵀS(y − Aw) + wᵀΓ⁻¹w + N
//! ```
//!
//! with `Γ = diag(γ_1 1_C, …, γ_N 1_C)`. It is minimized by a convex-concave
//! procedure: linearizing the concave `log|Γ⁻¹ + AᵀSA| + log|Γ|` term in `γ`
//! turns the `w`-step into a reweighted group lasso with weights
//! `θ_i = √(Cα_i)`, and linearizing it in `S` gives `S = (Y + Λ)⁻¹`.
//!
//! Internally `log|Γ| + log|Γ⁻¹ + G|` is evaluated as `log|I + Γ^{½} G Γ^{½}|`,
//! which stays finite when some `γ_i` are zero.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::admm::{admm_group_lasso, admm_group_lasso_gram, reduced_objective, AdmmOptions};
use crate::datamodel::StackedProblem;
use crate::linalg::{jittered_cholesky, join, split, SampleMatrix, Sym};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PrecisionStructure {
    Full,
    BlockDiagonal,
    /// `S = λ⁻¹I`, never updated.
    FixedScaledIdentity { lambda: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThetaRule {
    /// `θ_i = √(Cα_i)`, the weight that makes the `w`-step a majorization.
    #[default]
    Sqrt,
    /// `θ_i = Cα_i`.
    Linear,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverOptions {
    pub k_max: usize,
    pub admm: AdmmOptions,
    /// Diagonal jitter for the `S`-update, relative to the mean square of the target.
    pub jitter: f64,
    pub s_structure: PrecisionStructure,
    /// Stop when the relative cost decrease falls below this.
    pub stop_tol: f64,
    /// Recorded with results; the solver itself is deterministic.
    pub seed: u64,
    pub theta_rule: ThetaRule,
    /// Rescale every block to unit RMS before solving.
    pub normalize: bool,
    /// Let pruned blocks re-enter when their gradient weight allows it.
    pub readmit: bool,
    /// Reject a `w`-step that increases the reweighted objective.
    pub safeguard: bool,
    /// `γ_i` below `prune_tol · max γ` is set to zero.
    pub prune_tol: f64,
    /// Support threshold relative to the largest block norm.
    pub support_tol: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            k_max: 5,
            admm: AdmmOptions::default(),
            jitter: 1e-8,
            s_structure: PrecisionStructure::BlockDiagonal,
            stop_tol: 1e-6,
            seed: 0,
            theta_rule: ThetaRule::Sqrt,
            normalize: true,
            readmit: true,
            safeguard: true,
            prune_tol: 1e-10,
            support_tol: 1e-6,
        }
    }
}

impl SolverOptions {
    pub fn validate(&self) -> Result<()> {
        if self.k_max < 1 {
            return Err(Error::InvalidConfig("k_max must be ≥ 1".into()));
        }
        if !(self.jitter > 0.0) {
            return Err(Error::InvalidConfig("jitter must be positive".into()));
        }
        if !(self.stop_tol >= 0.0) {
            return Err(Error::InvalidConfig("stop_tol must be ≥ 0".into()));
        }
        if let PrecisionStructure::FixedScaledIdentity { lambda } = self.s_structure {
            if !(lambda > 0.0 && lambda.is_finite()) {
                return Err(Error::InvalidConfig("lambda must be positive".into()));
            }
        }
        self.admm.validate()
    }

    /// Single unit-weight `w`-step with `S = λ⁻¹I`.
    pub fn group_lasso(&self, lambda: f64) -> SolverOptions {
        SolverOptions {
            k_max: 1,
            s_structure: PrecisionStructure::FixedScaledIdentity { lambda },
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverState {
    pub w: DVector<f64>,
    pub gamma: DVector<f64>,
    pub alpha: DVector<f64>,
    pub theta: DVector<f64>,
    pub s: SampleMatrix,
    pub lambda: SampleMatrix,
    pub cost_history: Vec<f64>,
    pub iterations: usize,
    /// Stopped on the relative cost criterion rather than `k_max`.
    pub stopped_early: bool,
}

fn check_gamma(gamma: &DVector<f64>, p: &StackedProblem) -> Result<()> {
    if gamma.len() != p.n_blocks() {
        return Err(Error::DimensionMismatch(format!(
            "{} hyperparameters for {} blocks",
            gamma.len(),
            p.n_blocks()
        )));
    }
    if let Some(i) = gamma.iter().position(|g| !(*g >= 0.0 && g.is_finite())) {
        return Err(Error::InvalidConfig(format!("gamma[{i}] = {}", gamma[i])));
    }
    Ok(())
}

fn block_norms(w: &DVector<f64>, c_count: usize) -> Vec<f64> {
    (0..w.len() / c_count)
        .map(|i| w.rows(i * c_count, c_count).norm())
        .collect()
}

fn stacked_sqrt_gamma(gamma: &DVector<f64>, c_count: usize) -> DVector<f64> {
    DVector::from_fn(gamma.len() * c_count, |k, _| gamma[k / c_count].sqrt())
}

/// Posterior quantities at fixed `(γ, S)`.
pub struct Posterior {
    c_count: usize,
    gamma: DVector<f64>,
    gram: Sym,
    b: DVector<f64>,
    sqrt_gamma: DVector<f64>,
    b_inv: Sym,
    log_det_b: f64,
}

impl Posterior {
    pub fn new(gamma: &DVector<f64>, s: &SampleMatrix, p: &StackedProblem) -> Result<Self> {
        check_gamma(gamma, p)?;
        let c_count = p.n_experiments();
        let gram = s.gram(p)?;
        let b = s.weighted_target(p)?;
        let sqrt_gamma = stacked_sqrt_gamma(gamma, c_count);
        let ones = DVector::from_element(sqrt_gamma.len(), 1.0);
        let chol = gram.congruence_diag(&sqrt_gamma).add_diag(&ones).cholesky()?;
        Ok(Posterior {
            c_count,
            gamma: gamma.clone(),
            gram,
            b,
            sqrt_gamma,
            b_inv: chol.inverse(),
            log_det_b: chol.log_det(),
        })
    }

    /// `log|Γ| + log|Γ⁻¹ + AᵀSA|`.
    pub fn log_det_term(&self) -> f64 {
        self.log_det_b
    }

    /// `Σ_w = (Γ⁻¹ + AᵀSA)⁻¹ = Γ^{½} B⁻¹ Γ^{½}`.
    pub fn covariance(&self) -> Sym {
        self.b_inv.congruence_diag(&self.sqrt_gamma)
    }

    /// `m_w = Σ_w AᵀSy`.
    pub fn mean(&self) -> DVector<f64> {
        self.covariance().mul_vec(&self.b)
    }

    /// `Cα_i = Σ_{j ∈ block i} (1 − B⁻¹_jj)/γ_i`, or the `γ_i → 0` limit
    /// `Σ_j (G − GΣ_wG)_jj` where `γ_i G_jj` is small.
    pub fn alpha(&self) -> Result<DVector<f64>> {
        let c = self.c_count;
        let g_diag = self.gram.diagonal();
        let b_inv_diag = self.b_inv.diagonal();
        let mut sandwich: Option<DVector<f64>> = None;
        let mut alpha = DVector::zeros(self.gamma.len());
        for i in 0..self.gamma.len() {
            let gi = self.gamma[i];
            let mut sum = 0.0;
            for j in i * c..(i + 1) * c {
                if gi > 0.0 && gi * g_diag[j] >= 1.0 {
                    sum += (1.0 - b_inv_diag[j]) / gi;
                } else {
                    if sandwich.is_none() {
                        sandwich = Some(self.gram.diag_sandwich(&self.covariance())?);
                    }
                    sum += g_diag[j] - sandwich.as_ref().unwrap()[j];
                }
            }
            // Exact α is positive for a nonzero column; guard against cancellation.
            let floor = f64::EPSILON * (i * c..(i + 1) * c).map(|j| g_diag[j]).sum::<f64>();
            alpha[i] = sum.max(floor) / c as f64;
        }
        Ok(alpha)
    }

    /// `Λ = A Σ_w Aᵀ`, in the structure implied by `S`.
    pub fn lambda_matrix(&self, p: &StackedProblem) -> SampleMatrix {
        let (c_count, m, n) = p.layout();
        match self.covariance() {
            Sym::PerExperiment(sig) => SampleMatrix::BlockDiagonal(
                sig.iter()
                    .enumerate()
                    .map(|(c, s)| {
                        let a = p.dictionary(c);
                        a * s * a.transpose()
                    })
                    .collect(),
            ),
            Sym::Dense(sig) => {
                let mut out = DMatrix::zeros(c_count * m, c_count * m);
                for c in 0..c_count {
                    for d in 0..c_count {
                        let sub = DMatrix::from_fn(n, n, |i, j| sig[(i * c_count + c, j * c_count + d)]);
                        let blk = p.dictionary(c) * sub * p.dictionary(d).transpose();
                        out.view_mut((c * m, d * m), (m, m)).copy_from(&blk);
                    }
                }
                SampleMatrix::Full(out)
            }
        }
    }

    /// Full cost at `w`; needs the `S` the posterior was built with.
    pub fn cost(&self, w: &DVector<f64>, s: &SampleMatrix, p: &StackedProblem) -> Result<f64> {
        let c = self.c_count;
        let mut prior = 0.0;
        for (i, norm) in block_norms(w, c).into_iter().enumerate() {
            if norm == 0.0 {
                continue;
            }
            if self.gamma[i] == 0.0 {
                return Err(Error::InfiniteCost { block: i });
            }
            prior += norm * norm / self.gamma[i];
        }
        let r = p.residuals(w);
        Ok(-s.log_det()? + self.log_det_b + s.quad(&r) + prior + self.gamma.len() as f64)
    }
}

/// `−log|S| + log|Γ| + log|Γ⁻¹+AᵀSA| + (y−Aw)ᵀS(y−Aw) + wᵀΓ⁻¹w + N`.
///
/// Blocks with `γ_i = 0` and `w_i = 0` contribute nothing; `γ_i = 0` with
/// `w_i ≠ 0` is reported as [`Error::InfiniteCost`].
pub fn cost(w: &DVector<f64>, gamma: &DVector<f64>, s: &SampleMatrix, p: &StackedProblem) -> Result<f64> {
    if w.len() != p.n_weights() {
        return Err(Error::DimensionMismatch(format!("{} weights, expected {}", w.len(), p.n_weights())));
    }
    Posterior::new(gamma, s, p)?.cost(w, s, p)
}

/// `(m_w, Σ_w)`.
pub fn posterior_moments(gamma: &DVector<f64>, s: &SampleMatrix, p: &StackedProblem) -> Result<(DVector<f64>, Sym)> {
    let post = Posterior::new(gamma, s, p)?;
    Ok((post.mean(), post.covariance()))
}

pub fn update_alpha(gamma: &DVector<f64>, s: &SampleMatrix, p: &StackedProblem) -> Result<DVector<f64>> {
    Posterior::new(gamma, s, p)?.alpha()
}

/// Weighted group-lasso step.
pub fn update_w(theta: &[f64], s: &SampleMatrix, p: &StackedProblem, options: &AdmmOptions) -> Result<DVector<f64>> {
    Ok(admm_group_lasso(p, s, theta, options)?.w)
}

/// `γ_i = ‖w_i‖ / √(Cα_i)`, zero when `w_i = 0`.
pub fn update_gamma(w: &DVector<f64>, alpha: &DVector<f64>, c_count: usize) -> Result<DVector<f64>> {
    let norms = block_norms(w, c_count);
    if norms.len() != alpha.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} blocks of weights, {} alphas",
            norms.len(),
            alpha.len()
        )));
    }
    let mut gamma = DVector::zeros(alpha.len());
    for (i, norm) in norms.into_iter().enumerate() {
        if norm == 0.0 {
            continue;
        }
        if !(alpha[i] > 0.0) {
            return Err(Error::ZeroAlpha { block: i });
        }
        gamma[i] = norm / (c_count as f64 * alpha[i]).sqrt();
    }
    Ok(gamma)
}

pub fn update_lambda(gamma: &DVector<f64>, s: &SampleMatrix, p: &StackedProblem) -> Result<SampleMatrix> {
    Ok(Posterior::new(gamma, s, p)?.lambda_matrix(p))
}

fn jittered_inverse(mut x: DMatrix<f64>, eps: f64) -> Result<DMatrix<f64>> {
    for i in 0..x.nrows() {
        x[(i, i)] += eps;
    }
    Ok(jittered_cholesky(&x)?.inverse())
}

/// `S = (Y + Λ + εI)⁻¹` with `Y = (Aw − y)(Aw − y)ᵀ`, restricted to `structure`.
///
/// `Y + Λ` has rank at most `N + 1` per experiment, so for `M > N + 1` the
/// result is governed by `ε`; keep `ε` fixed across iterations.
pub fn update_s(
    w: &DVector<f64>,
    lambda: &SampleMatrix,
    p: &StackedProblem,
    structure: &PrecisionStructure,
    jitter: f64,
) -> Result<SampleMatrix> {
    let (c_count, m, _) = p.layout();
    let r = p.residuals(w);
    match structure {
        PrecisionStructure::FixedScaledIdentity { lambda } => Ok(SampleMatrix::scaled_identity(*lambda, c_count, m)),
        PrecisionStructure::BlockDiagonal => {
            let dense_lambda = match lambda {
                SampleMatrix::Full(l) => Some(l),
                _ => None,
            };
            let blocks = (0..c_count)
                .map(|c| {
                    let lam_c = match lambda {
                        SampleMatrix::ScaledIdentity { lambda, .. } => DMatrix::identity(m, m) * *lambda,
                        SampleMatrix::BlockDiagonal(b) => b[c].clone(),
                        SampleMatrix::Full(_) => dense_lambda.unwrap().view((c * m, c * m), (m, m)).into_owned(),
                    };
                    jittered_inverse(&r[c] * r[c].transpose() + lam_c, jitter)
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(SampleMatrix::BlockDiagonal(blocks))
        }
        PrecisionStructure::Full => {
            let rs = crate::linalg::stack(&r);
            jittered_inverse(&rs * rs.transpose() + lambda.to_dense(), jitter).map(SampleMatrix::Full)
        }
    }
}

fn initial_precision(structure: &PrecisionStructure, c_count: usize, m: usize) -> SampleMatrix {
    match structure {
        PrecisionStructure::Full => SampleMatrix::full_identity(c_count, m),
        PrecisionStructure::BlockDiagonal => SampleMatrix::block_identity(c_count, m),
        PrecisionStructure::FixedScaledIdentity { lambda } => SampleMatrix::scaled_identity(*lambda, c_count, m),
    }
}

/// RMS of each block's entries over all experiments; 1 for all-zero blocks.
pub fn block_scales(p: &StackedProblem) -> Vec<f64> {
    let (c_count, m, n) = p.layout();
    (0..n)
        .map(|i| {
            let ss: f64 = (0..c_count).map(|c| p.dictionary(c).column(i).norm_squared()).sum();
            let rms = (ss / (c_count * m) as f64).sqrt();
            if rms > 0.0 && rms.is_finite() {
                rms
            } else {
                1.0
            }
        })
        .collect()
}

/// Mean square of the target, or 1 for a zero target.
fn data_scale(p: &StackedProblem) -> f64 {
    let y = p.stacked_target();
    let ms = y.norm_squared() / y.len().max(1) as f64;
    if ms > 0.0 && ms.is_finite() {
        ms
    } else {
        1.0
    }
}

/// Runs the outer loop and returns the final state in the caller's coordinates.
pub fn run_algorithm(problem: &StackedProblem, options: &SolverOptions) -> Result<SolverState> {
    options.validate()?;
    let (c_count, m, n) = problem.layout();
    let scales = if options.normalize {
        block_scales(problem)
    } else {
        vec![1.0; n]
    };
    let p = problem.scale_blocks(&scales.iter().map(|s| 1.0 / s).collect::<Vec<_>>());

    let mut s = initial_precision(&options.s_structure, c_count, m);
    let mut lambda = SampleMatrix::scaled_identity(1.0, c_count, m);
    let mut theta = DVector::from_element(n, 1.0);
    let mut alpha = DVector::from_element(n, 1.0 / c_count as f64);
    let mut w = DVector::zeros(n * c_count);
    let mut gamma = DVector::zeros(n);
    let mut active = vec![true; n];
    let mut history: Vec<f64> = Vec::new();
    let mut iterations = 0;
    let mut stopped_early = false;
    let eps = options.jitter * data_scale(&p);
    let fixed_s = matches!(options.s_structure, PrecisionStructure::FixedScaledIdentity { .. });
    let inner_err = |iteration: usize| move |e: Error| Error::InnerSolver { iteration, source: Box::new(e) };

    for k in 0..options.k_max {
        iterations = k + 1;
        let gram = s.gram(&p)?;
        let b = s.weighted_target(&p)?;
        let th: Vec<f64> = (0..n)
            .map(|i| if active[i] { theta[i] } else { f64::INFINITY })
            .collect();
        let out = admm_group_lasso_gram(
            &gram,
            &b,
            c_count,
            &th,
            p.constraints(),
            &options.admm,
            (k > 0).then_some(&w),
        )
        .map_err(inner_err(k))?;
        if options.safeguard && k > 0 && out.objective > reduced_objective(&gram, &b, &th, c_count, &w) {
            log::debug!("iteration {k}: kept previous weights");
        } else {
            w = out.w;
        }

        gamma = update_gamma(&w, &alpha, c_count).map_err(inner_err(k))?;
        let g_max = gamma.max();
        for i in 0..n {
            if gamma[i] <= options.prune_tol * g_max {
                gamma[i] = 0.0;
                w.rows_mut(i * c_count, c_count).fill(0.0);
            }
        }
        if !options.readmit {
            for i in 0..n {
                active[i] = active[i] && gamma[i] > 0.0;
            }
        }

        if !fixed_s {
            lambda = Posterior::new(&gamma, &s, &p)?.lambda_matrix(&p);
            s = update_s(&w, &lambda, &p, &options.s_structure, eps)?;
        }
        let post = Posterior::new(&gamma, &s, &p)?;
        let c_k = post.cost(&w, &s, &p)?;
        alpha = post.alpha()?;
        theta = match options.theta_rule {
            ThetaRule::Sqrt => alpha.map(|a| (c_count as f64 * a).sqrt()),
            ThetaRule::Linear => alpha.map(|a| c_count as f64 * a),
        };
        lambda = post.lambda_matrix(&p);
        log::debug!(
            "iteration {k}: cost {c_k:e}, gamma [{:e}, {:e}], theta [{:e}, {:e}]",
            gamma.min(),
            gamma.max(),
            theta.min(),
            theta.max()
        );
        let prev = history.last().copied();
        history.push(c_k);
        if g_max == 0.0 {
            stopped_early = true;
            break;
        }
        if let Some(prev) = prev {
            if (prev - c_k) / prev.abs().max(f64::MIN_POSITIVE) < options.stop_tol {
                stopped_early = true;
                break;
            }
        }
    }

    // back to the caller's coordinates: w_i ← w_i / s_i, γ_i ← γ_i / s_i²
    for (i, sc) in scales.iter().enumerate() {
        w.rows_mut(i * c_count, c_count).unscale_mut(*sc);
        gamma[i] /= sc * sc;
        alpha[i] *= sc * sc;
        theta[i] *= sc;
    }
    Ok(SolverState {
        w,
        gamma,
        alpha,
        theta,
        s,
        lambda,
        cost_history: history,
        iterations,
        stopped_early,
    })
}

/// Noise covariance `Π = S⁻¹` in serializable form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "structure", rename_all = "snake_case")]
pub enum NoiseCovariance {
    ScaledIdentity { variance: f64 },
    BlockDiagonal { blocks: Vec<Vec<Vec<f64>>> },
    Full { matrix: Vec<Vec<f64>> },
}

fn rows_of(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

impl NoiseCovariance {
    pub fn from_precision(s: &SampleMatrix) -> Result<Self> {
        Ok(match s.inverse()? {
            SampleMatrix::ScaledIdentity { lambda, .. } => NoiseCovariance::ScaledIdentity { variance: 1.0 / lambda },
            SampleMatrix::BlockDiagonal(b) => NoiseCovariance::BlockDiagonal {
                blocks: b.iter().map(rows_of).collect(),
            },
            SampleMatrix::Full(m) => NoiseCovariance::Full { matrix: rows_of(&m) },
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdentificationResult {
    pub n_blocks: usize,
    pub n_experiments: usize,
    /// `weights[i][c]` is basis `i` in experiment `c`.
    pub weights: Vec<Vec<f64>>,
    /// 0-based indices of blocks with `‖w_i‖ > support_tol · max_j ‖w_j‖`.
    pub support: Vec<usize>,
    pub gamma: Vec<f64>,
    pub cost: f64,
    pub cost_history: Vec<f64>,
    pub iterations: usize,
    pub noise_covariance: NoiseCovariance,
}

impl IdentificationResult {
    fn from_state(state: &SolverState, c_count: usize, support_tol: f64) -> Result<Self> {
        let n = state.gamma.len();
        let norms = block_norms(&state.w, c_count);
        let max = norms.iter().copied().fold(0.0, f64::max);
        let support = (0..n)
            .filter(|&i| max > 0.0 && norms[i] > support_tol * max)
            .collect();
        Ok(IdentificationResult {
            n_blocks: n,
            n_experiments: c_count,
            weights: (0..n)
                .map(|i| state.w.rows(i * c_count, c_count).iter().copied().collect())
                .collect(),
            support,
            gamma: state.gamma.iter().copied().collect(),
            cost: state.cost_history.last().copied().unwrap_or(f64::NAN),
            cost_history: state.cost_history.clone(),
            iterations: state.iterations,
            noise_covariance: NoiseCovariance::from_precision(&state.s)?,
        })
    }

    /// Weights in stacked order `i * C + c`.
    pub fn stacked_weights(&self) -> DVector<f64> {
        let c = self.n_experiments;
        DVector::from_fn(self.n_blocks * c, |k, _| self.weights[k / c][k % c])
    }

    /// Weights of experiment `c` in dictionary order.
    pub fn experiment_weights(&self, c: usize) -> DVector<f64> {
        DVector::from_fn(self.n_blocks, |i, _| self.weights[i][c])
    }
}

pub fn identify(problem: &StackedProblem, options: &SolverOptions) -> Result<IdentificationResult> {
    let state = run_algorithm(problem, options)?;
    IdentificationResult::from_state(&state, problem.n_experiments(), options.support_tol)
}

/// One unit-weight group-lasso step with `S = λ⁻¹I`.
pub fn group_lasso_baseline(problem: &StackedProblem, lambda: f64, options: &SolverOptions) -> Result<IdentificationResult> {
    identify(problem, &options.group_lasso(lambda))
}

/// Per-experiment split of stacked weights, `out[c]` in dictionary order.
pub fn split_weights(w: &DVector<f64>, c_count: usize) -> Vec<DVector<f64>> {
    split(w, c_count)
}

/// Inverse of [`split_weights`].
pub fn join_weights(parts: &[DVector<f64>]) -> DVector<f64> {
    join(parts)
}
