//! Acceptance criteria. Each prints one PASS/FAIL line; the benchmark
//! reproduction and support-recovery lines are reported without failing the run.

mod oracles;

use std::process::ExitCode;
use std::time::Instant;

use nalgebra::DVector;

use oracles::{
    block_diag, dense_design, dense_target, finite_diff_gradient, from_mat, gls, group_lasso_value, inverse, log_det,
    matmul, matvec, random_problem, random_spd, subgradient_group_lasso, to_mat, transpose, Lcg, Mat, OracleReport,
};
use reactnet::admm::{admm_group_lasso, AdmmOptions};
use reactnet::datamodel::{stack_problem, RegressionTarget, StackedProblem};
use reactnet::derivatives::{estimate_derivative, lpr_weights, DifferenceSpec};
use reactnet::evaluation::{run_sweep, Algorithm, SweepConfig};
use reactnet::linalg::SampleMatrix;
use reactnet::solver::{run_algorithm, update_alpha, update_lambda, update_s, PrecisionStructure, SolverOptions, ThetaRule};

struct Line {
    id: usize,
    name: &'static str,
    passed: bool,
    enforced: bool,
    detail: String,
}

impl Line {
    fn print(&self) {
        let verdict = if self.passed { "PASS" } else { "FAIL" };
        let note = if self.enforced || self.passed { "" } else { " (reported)" };
        println!("[{verdict}] {}. {}: {}{note}", self.id, self.name, self.detail);
    }
}

fn benchmark(report_grid: &SweepConfig) -> Line {
    let start = Instant::now();
    let report = run_sweep(report_grid).expect("sweep runs");
    let full = report.best_cell(Algorithm::Full);
    let gl = report.best_cell(Algorithm::GroupLasso);
    let (Some(full), Some(gl)) = (full, gl) else {
        return Line { id: 1, name: "benchmark reproduction", passed: false, enforced: false, detail: "no valid cell".into() };
    };
    let passed = full.mean_rnmse < 0.10 && (0.5..=0.9).contains(&gl.mean_rnmse);
    Line {
        id: 1,
        name: "benchmark reproduction",
        passed,
        enforced: false,
        detail: format!(
            "best mean RNMSE full {:.4} (C={}, M={}; want < 0.10), group lasso {:.4} (C={}, M={}; want in [0.5, 0.9]), {:.0} s",
            full.mean_rnmse,
            full.c,
            full.m,
            gl.mean_rnmse,
            gl.c,
            gl.m,
            start.elapsed().as_secs_f64()
        ),
    }
}

fn support_recovery() -> Line {
    let config = SweepConfig {
        c_grid: vec![5],
        m_grid: vec![30],
        repeats: 20,
        algorithms: vec![Algorithm::Full],
        ..Default::default()
    };
    let report = run_sweep(&config).expect("sweep runs");
    let hits = report.records.iter().filter(|r| r.exact_support).count();
    let total = report.records.len();
    let rate = hits as f64 / total as f64;
    Line {
        id: 2,
        name: "support recovery",
        passed: rate >= 0.9,
        enforced: false,
        detail: format!("{hits}/{total} (state, repeat) pairs exact = {:.1}% (want ≥ 90%)", 100.0 * rate),
    }
}

fn small_instance(rng: &mut Lcg) -> StackedProblem {
    let (n, c, m) = (1 + rng.below(8), 1 + rng.below(3), 2 + rng.below(14));
    let p = random_problem(rng, n, c, m);
    let (ys, dicts) = p.unstack();
    let truth: Vec<f64> = (0..n).map(|i| if i % 3 == 0 { rng.range(1.0, 3.0) } else { 0.0 }).collect();
    let ys = ys
        .iter()
        .zip(&dicts)
        .map(|(y, a)| a * DVector::from_vec(truth.clone()) + y * 0.1)
        .collect();
    stack_problem(&RegressionTarget { state_index: 0, y_per_experiment: ys }, &dicts).unwrap()
}

fn descent() -> Line {
    let mut counts = Vec::new();
    for rule in [ThetaRule::Sqrt, ThetaRule::Linear] {
        let mut rng = Lcg(2024);
        let mut ok = 0;
        for _ in 0..50 {
            let p = small_instance(&mut rng);
            let opts = SolverOptions { k_max: 10, stop_tol: 0.0, theta_rule: rule, ..Default::default() };
            let monotone = match run_algorithm(&p, &opts) {
                Ok(st) => st.cost_history.windows(2).all(|w| w[1] <= w[0] + 1e-8 * w[0].abs()),
                Err(_) => false,
            };
            ok += monotone as usize;
        }
        counts.push(ok);
    }
    Line {
        id: 3,
        name: "descent",
        passed: counts[0] == 50,
        enforced: true,
        detail: format!("θ = √(Cα) (shipped) {}/50, θ = Cα {}/50 non-increasing within 1e-8", counts[0], counts[1]),
    }
}

fn inner_solver() -> Line {
    let mut rng = Lcg(100);
    // The default stopping rule (ε_rel = 1e-4 on residuals) leaves objective
    // gaps of a few 1e-4; optimality is checked at a converged tolerance.
    let tight = AdmmOptions { eps_abs: 1e-10, eps_rel: 1e-10, max_iters: 200_000, ..Default::default() };
    let mut worst: f64 = 0.0;
    let mut worst_default: f64 = 0.0;
    for _ in 0..100 {
        let c = 1 + rng.below(3);
        let n = 1 + rng.below(20 / c);
        let m = 2 + rng.below(8);
        let p = random_problem(&mut rng, n, c, m);
        let blocks: Vec<Mat> = (0..c).map(|_| random_spd(&mut rng, m, 0.2)).collect();
        let s_dense = block_diag(&blocks);
        let s = SampleMatrix::BlockDiagonal(blocks.iter().map(from_mat).collect());
        let theta: Vec<f64> = (0..n).map(|_| rng.range(0.0, 4.0)).collect();
        let out = admm_group_lasso(&p, &s, &theta, &tight).expect("admm");
        let loose = admm_group_lasso(&p, &s, &theta, &AdmmOptions::default()).expect("admm");
        let reference = subgradient_group_lasso(&p, &s_dense, &theta, 20_000);
        let (a, y) = (dense_design(&p), dense_target(&p));
        let f_ref = group_lasso_value(&a, &s_dense, &y, &theta, c, &reference);
        let f = group_lasso_value(&a, &s_dense, &y, &theta, c, out.w.as_slice());
        let f_loose = group_lasso_value(&a, &s_dense, &y, &theta, c, loose.w.as_slice());
        worst = worst.max((f - f_ref).abs() / f_ref.abs());
        worst_default = worst_default.max((f_loose - f_ref).abs() / f_ref.abs());
    }
    let mut gls_ok = true;
    for _ in 0..20 {
        let (n, c) = (1 + rng.below(5), 1 + rng.below(3));
        let m = n + 2 + rng.below(4);
        let p = random_problem(&mut rng, n, c, m);
        let blocks: Vec<Mat> = (0..c).map(|_| random_spd(&mut rng, m, 0.5)).collect();
        let s = SampleMatrix::BlockDiagonal(blocks.iter().map(from_mat).collect());
        let out = admm_group_lasso(&p, &s, &vec![0.0; n], &AdmmOptions::default()).expect("admm");
        gls_ok &= OracleReport::compare("θ = 0", &gls(&p, &block_diag(&blocks)), out.w.as_slice(), 1e-6).passed;
    }
    Line {
        id: 4,
        name: "inner solver",
        passed: worst <= 1e-4 && gls_ok,
        enforced: true,
        detail: format!(
            "worst relative objective gap vs subgradient oracle {worst:.2e} over 100 instances (want ≤ 1e-4; {worst_default:.2e} at default tolerances); θ = 0 vs GLS within 1e-6: {gls_ok}"
        ),
    }
}

fn precision(rng: &mut Lcg, c: usize, m: usize, full: bool) -> (SampleMatrix, Mat) {
    if full {
        let s = random_spd(rng, c * m, 0.3);
        (SampleMatrix::Full(from_mat(&s)), s)
    } else {
        let blocks: Vec<Mat> = (0..c).map(|_| random_spd(rng, m, 0.3)).collect();
        (SampleMatrix::BlockDiagonal(blocks.iter().map(from_mat).collect()), block_diag(&blocks))
    }
}

fn alpha_gradient() -> Line {
    let mut rng = Lcg(55);
    let mut worst: f64 = 0.0;
    for trial in 0..50 {
        let (n, c, m) = (1 + rng.below(6), 1 + rng.below(3), 2 + rng.below(8));
        let p = random_problem(&mut rng, n, c, m);
        let (s, s_dense) = precision(&mut rng, c, m, trial % 2 == 0);
        let gamma: Vec<f64> = (0..n).map(|_| rng.range(0.05, 3.0)).collect();
        let alpha = update_alpha(&DVector::from_vec(gamma.clone()), &s, &p).expect("alpha");
        let a = dense_design(&p);
        let g = matmul(&matmul(&transpose(&a), &s_dense), &a);
        // v(γ, S) = −log|I + Γ^{½}GΓ^{½}| − N; Cα = −∂v/∂γ
        let v = |gam: &[f64]| {
            let sg: Vec<f64> = (0..n * c).map(|k| gam[k / c].sqrt()).collect();
            let b: Mat = (0..n * c)
                .map(|i| (0..n * c).map(|j| sg[i] * g[i][j] * sg[j] + if i == j { 1.0 } else { 0.0 }).collect())
                .collect();
            -log_det(&b) - n as f64
        };
        let grad = finite_diff_gradient(v, &gamma, 1e-6);
        for i in 0..n {
            worst = worst.max((c as f64 * alpha[i] + grad[i]).abs() / grad[i].abs());
        }
    }
    Line {
        id: 5,
        name: "α gradient",
        passed: worst < 1e-5,
        enforced: true,
        detail: format!("worst relative error {worst:.2e} over 50 triples (want < 1e-5)"),
    }
}

fn s_stationarity() -> Line {
    let mut rng = Lcg(66);
    let mut worst: f64 = 0.0;
    for trial in 0..50 {
        let full = trial % 2 == 0;
        let (c, m) = (1 + rng.below(3), 2 + rng.below(6));
        let n = m + rng.below(3);
        let p = random_problem(&mut rng, n, c, m);
        let (s0, _) = precision(&mut rng, c, m, full);
        let gamma = DVector::from_fn(n, |_, _| rng.range(0.2, 2.0));
        let lam = update_lambda(&gamma, &s0, &p).expect("lambda");
        let w = DVector::from_fn(n * c, |_, _| rng.normal());
        let structure = if full { PrecisionStructure::Full } else { PrecisionStructure::BlockDiagonal };
        let eps = 1e-8;
        let s = update_s(&w, &lam, &p, &structure, eps).expect("s");
        let r: Vec<f64> = matvec(&dense_design(&p), w.as_slice())
            .iter()
            .zip(dense_target(&p))
            .map(|(a, b)| a - b)
            .collect();
        let mut target = to_mat(&lam.to_dense());
        for i in 0..c * m {
            for j in 0..c * m {
                if full || i / m == j / m {
                    target[i][j] += r[i] * r[j];
                }
            }
        }
        let s_inv = inverse(&to_mat(&s.to_dense()));
        let mut num = 0.0;
        let mut den = 0.0;
        for i in 0..c * m {
            for j in 0..c * m {
                let shift = if i == j { eps } else { 0.0 };
                num += (target[i][j] + shift - s_inv[i][j]).powi(2);
                den += target[i][j].powi(2);
            }
        }
        worst = worst.max((num / den).sqrt());
    }
    Line {
        id: 6,
        name: "S stationarity",
        passed: worst < 1e-8,
        enforced: true,
        detail: format!("worst ‖(Y+Λ+εI) − S⁻¹‖/‖Y+Λ‖ = {worst:.2e} over 50 inputs (want < 1e-8)"),
    }
}

fn derivative_estimator() -> Line {
    let mut rng = Lcg(77);
    let mut worst: f64 = 0.0;
    let mut central = true;
    for k in 1..=3 {
        for _ in 0..100 {
            let (a, b, c) = (rng.range(-5.0, 5.0), rng.range(-5.0, 5.0), rng.range(-5.0, 5.0));
            let degree = rng.below(3);
            let dt = rng.range(0.05, 2.0);
            let t0 = rng.range(-3.0, 3.0);
            let len = 2 * k + 1 + rng.below(20);
            let t: Vec<f64> = (0..len).map(|i| t0 + i as f64 * dt).collect();
            let f = |t: f64| match degree {
                0 => a,
                1 => a + b * t,
                _ => a + b * t + c * t * t,
            };
            let df = |t: f64| match degree {
                0 => 0.0,
                1 => b,
                _ => b + 2.0 * c * t,
            };
            let y: Vec<f64> = t.iter().map(|&t| f(t)).collect();
            let est = estimate_derivative(&y, &t, &DifferenceSpec::new(k).unwrap()).unwrap();
            for (j, i) in est.indices.clone().enumerate() {
                worst = worst.max((est.values[j] - df(t[i])).abs());
                if k == 1 {
                    central &= est.values[j] == (y[i + 1] - y[i - 1]) / (t[i + 1] - t[i - 1]);
                }
            }
        }
    }
    let sums = (1..=3).all(|k| lpr_weights(k).iter().sum::<f64>() == 1.0);
    Line {
        id: 7,
        name: "derivative estimator",
        passed: worst <= 1e-10 && sums && central,
        enforced: true,
        detail: format!(
            "worst error on degree ≤ 2 polynomials {worst:.2e} (want ≤ 1e-10); weights sum to 1: {sums}; k = 1 is the central difference: {central}"
        ),
    }
}

fn determinism() -> Line {
    let config = SweepConfig { c_grid: vec![1, 4], m_grid: vec![10, 30], repeats: 4, seed: 17, ..Default::default() };
    let csv_with = |threads: usize| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| run_sweep(&config).expect("sweep").to_csv())
    };
    let one = csv_with(1);
    let identical = [2, 8].iter().all(|&t| csv_with(t) == one);
    Line {
        id: 8,
        name: "determinism",
        passed: identical,
        enforced: true,
        detail: format!("sweep CSV byte-identical for 1, 2 and 8 threads: {identical}"),
    }
}

fn main() -> ExitCode {
    let desk = SweepConfig::default();
    let lines = [
        benchmark(&desk),
        support_recovery(),
        descent(),
        inner_solver(),
        alpha_gradient(),
        s_stationarity(),
        derivative_estimator(),
        determinism(),
    ];
    let mut failed = false;
    for line in &lines {
        line.print();
        failed |= line.enforced && !line.passed;
    }
    if failed {
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
