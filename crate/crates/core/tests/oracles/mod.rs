//! Slow reference implementations for the integration tests.
//!
//! Plain `Vec` arithmetic only; nothing here calls into the library's
//! numerical code.

#![allow(dead_code)]

use reactnet::datamodel::{SignConstraint, StackedProblem};

pub type Mat = Vec<Vec<f64>>;

#[derive(Debug, Clone)]
pub struct OracleReport {
    pub name: String,
    pub reference: Vec<f64>,
    pub actual: Vec<f64>,
    pub tolerance: f64,
    pub max_error: f64,
    pub passed: bool,
}

impl OracleReport {
    /// Compares entrywise with `|a − r| ≤ tol · max(1, |r|)`.
    pub fn compare(name: &str, reference: &[f64], actual: &[f64], tolerance: f64) -> Self {
        assert!(tolerance > 0.0);
        assert_eq!(reference.len(), actual.len(), "{name}: length mismatch");
        let max_error = reference
            .iter()
            .zip(actual)
            .map(|(r, a)| (a - r).abs() / r.abs().max(1.0))
            .fold(0.0, f64::max);
        OracleReport {
            name: name.to_string(),
            reference: reference.to_vec(),
            actual: actual.to_vec(),
            tolerance,
            max_error,
            passed: max_error <= tolerance && max_error.is_finite(),
        }
    }
}

impl std::fmt::Display for OracleReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{} {}: max error {:.3e} (tol {:.1e})",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.max_error,
            self.tolerance
        )
    }
}

pub fn zeros(r: usize, c: usize) -> Mat {
    vec![vec![0.0; c]; r]
}

pub fn identity(n: usize) -> Mat {
    let mut m = zeros(n, n);
    for (i, row) in m.iter_mut().enumerate() {
        row[i] = 1.0;
    }
    m
}

pub fn matmul(a: &Mat, b: &Mat) -> Mat {
    let (n, k, m) = (a.len(), b.len(), b[0].len());
    let mut out = zeros(n, m);
    for i in 0..n {
        for l in 0..k {
            let x = a[i][l];
            if x == 0.0 {
                continue;
            }
            for j in 0..m {
                out[i][j] += x * b[l][j];
            }
        }
    }
    out
}

pub fn transpose(a: &Mat) -> Mat {
    let mut t = zeros(a[0].len(), a.len());
    for (i, row) in a.iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            t[j][i] = *v;
        }
    }
    t
}

pub fn matvec(a: &Mat, x: &[f64]) -> Vec<f64> {
    a.iter().map(|row| row.iter().zip(x).map(|(p, q)| p * q).sum()).collect()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(p, q)| p * q).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Gaussian elimination with partial pivoting.
pub fn solve(a: &Mat, b: &[f64]) -> Vec<f64> {
    let n = a.len();
    let mut m: Mat = a.iter().zip(b).map(|(row, v)| {
        let mut r = row.clone();
        r.push(*v);
        r
    }).collect();
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&i, &j| m[i][col].abs().total_cmp(&m[j][col].abs()))
            .unwrap();
        m.swap(col, piv);
        let p = m[col][col];
        assert!(p != 0.0, "singular system");
        for r in col + 1..n {
            let f = m[r][col] / p;
            if f != 0.0 {
                for c in col..=n {
                    m[r][c] -= f * m[col][c];
                }
            }
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let s: f64 = (r + 1..n).map(|c| m[r][c] * x[c]).sum();
        x[r] = (m[r][n] - s) / m[r][r];
    }
    x
}

/// Inverse by solving against unit vectors.
pub fn inverse(a: &Mat) -> Mat {
    let n = a.len();
    let cols: Vec<Vec<f64>> = (0..n)
        .map(|j| {
            let mut e = vec![0.0; n];
            e[j] = 1.0;
            solve(a, &e)
        })
        .collect();
    transpose(&cols)
}

/// log-determinant via elimination (positive-definite input).
pub fn log_det(a: &Mat) -> f64 {
    let n = a.len();
    let mut m = a.clone();
    let mut acc = 0.0;
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&i, &j| m[i][col].abs().total_cmp(&m[j][col].abs()))
            .unwrap();
        m.swap(col, piv);
        let p = m[col][col];
        acc += p.abs().ln();
        for r in col + 1..n {
            let f = m[r][col] / p;
            for c in col..n {
                m[r][c] -= f * m[col][c];
            }
        }
    }
    acc
}

/// Dense block design: row `c·M + m`, column `i·C + c`.
pub fn dense_design(p: &StackedProblem) -> Mat {
    let (c_count, m, n) = p.layout();
    let mut a = zeros(c_count * m, n * c_count);
    for c in 0..c_count {
        let d = p.dictionary(c);
        for r in 0..m {
            for i in 0..n {
                a[c * m + r][i * c_count + c] = d[(r, i)];
            }
        }
    }
    a
}

pub fn dense_target(p: &StackedProblem) -> Vec<f64> {
    (0..p.n_experiments()).flat_map(|c| p.target(c).iter().copied().collect::<Vec<_>>()).collect()
}

/// `(AᵀSA)⁻¹AᵀSy`.
pub fn gls(p: &StackedProblem, s: &Mat) -> Vec<f64> {
    let a = dense_design(p);
    let y = dense_target(p);
    let at = transpose(&a);
    let ats = matmul(&at, s);
    solve(&matmul(&ats, &a), &matvec(&ats, &y))
}

/// `½(y − Aw)ᵀS(y − Aw) + Σθ_i‖w_i‖`.
pub fn group_lasso_value(a: &Mat, s: &Mat, y: &[f64], theta: &[f64], c_count: usize, w: &[f64]) -> f64 {
    let aw = matvec(a, w);
    let r: Vec<f64> = y.iter().zip(&aw).map(|(p, q)| p - q).collect();
    let pen: f64 = theta
        .iter()
        .enumerate()
        .map(|(i, t)| {
            let nrm = norm(&w[i * c_count..(i + 1) * c_count]);
            if nrm == 0.0 {
                0.0
            } else {
                t * nrm
            }
        })
        .sum();
    0.5 * dot(&r, &matvec(s, &r)) + pen
}

fn project(c: SignConstraint, v: f64) -> f64 {
    match c {
        SignConstraint::Free => v,
        SignConstraint::Nonnegative => v.max(0.0),
        SignConstraint::Nonpositive => v.min(0.0),
    }
}

/// Largest eigenvalue of a symmetric PSD matrix by power iteration.
fn spectral_bound(m: &Mat) -> f64 {
    let n = m.len();
    let mut v = vec![1.0 / (n as f64).sqrt(); n];
    let mut lam = 0.0;
    for _ in 0..500 {
        let mv = matvec(m, &v);
        let nv = norm(&mv);
        if nv == 0.0 {
            return 0.0;
        }
        lam = nv;
        v = mv.iter().map(|x| x / nv).collect();
    }
    lam
}

/// Projected subgradient descent on the weighted group-lasso objective.
///
/// Uses the minimum-norm subgradient at `w_i = 0`, snaps a block to zero when
/// a step would carry it through the origin, and keeps the best iterate.
/// Runs `iters` steps for each step scale in a small grid.
pub fn subgradient_group_lasso(p: &StackedProblem, s: &Mat, theta: &[f64], iters: usize) -> Vec<f64> {
    let (c_count, _, n) = p.layout();
    let a = dense_design(p);
    let y = dense_target(p);
    let at = transpose(&a);
    let ats = matmul(&at, s);
    let g = matmul(&ats, &a);
    let b = matvec(&ats, &y);
    let l = spectral_bound(&g).max(1e-12);
    let cons = p.constraints();
    let f = |w: &[f64]| group_lasso_value(&a, s, &y, theta, c_count, w);

    let mut best_w = vec![0.0; n * c_count];
    let mut best = f(&best_w);
    for &scale in &[1.0, 0.5, 0.25] {
        let mut w = vec![0.0; n * c_count];
        for k in 0..iters {
            let step = scale / l / (1.0 + k as f64 / (iters as f64 / 20.0)).sqrt();
            let grad: Vec<f64> = matvec(&g, &w).iter().zip(&b).map(|(p, q)| p - q).collect();
            let mut next = w.clone();
            for i in 0..n {
                let rows = i * c_count..(i + 1) * c_count;
                let wi = &w[rows.clone()];
                let gi = &grad[rows.clone()];
                let nw = norm(wi);
                let sub: Vec<f64> = if nw > 0.0 {
                    gi.iter().zip(wi).map(|(gv, wv)| gv + theta[i] * wv / nw).collect()
                } else {
                    // min-norm element of g_i + θ_i·(unit ball)
                    let ng = norm(gi);
                    if ng <= theta[i] {
                        vec![0.0; c_count]
                    } else {
                        gi.iter().map(|gv| gv * (1.0 - theta[i] / ng)).collect()
                    }
                };
                let cand: Vec<f64> = wi.iter().zip(&sub).map(|(wv, sv)| project(cons[i], wv - step * sv)).collect();
                let crosses = nw > 0.0 && dot(&cand, wi) <= 0.0;
                for (k2, r) in rows.enumerate() {
                    next[r] = if crosses { 0.0 } else { cand[k2] };
                }
            }
            w = next;
            let v = f(&w);
            if v < best {
                best = v;
                best_w.clone_from(&w);
            }
        }
    }
    best_w
}

/// Central differences per coordinate.
pub fn finite_diff_gradient<F: Fn(&[f64]) -> f64>(f: F, x: &[f64], h: f64) -> Vec<f64> {
    assert!(h > 0.0);
    (0..x.len())
        .map(|i| {
            let mut xp = x.to_vec();
            let mut xm = x.to_vec();
            xp[i] += h;
            xm[i] -= h;
            (f(&xp) - f(&xm)) / (2.0 * h)
        })
        .collect()
}

/// Classical RK4 at fixed `dt`; returns `(t, x)` at every step including t = 0.
pub fn fixed_step_rk4<F: Fn(f64, &[f64]) -> Vec<f64>>(rhs: F, x0: &[f64], dt: f64, t_end: f64) -> Vec<(f64, Vec<f64>)> {
    assert!(dt > 0.0);
    let steps = (t_end / dt).round() as usize;
    let mut x = x0.to_vec();
    let mut out = vec![(0.0, x.clone())];
    let axpy = |x: &[f64], k: &[f64], h: f64| -> Vec<f64> { x.iter().zip(k).map(|(a, b)| a + h * b).collect() };
    for s in 0..steps {
        let t = s as f64 * dt;
        let k1 = rhs(t, &x);
        let k2 = rhs(t + dt / 2.0, &axpy(&x, &k1, dt / 2.0));
        let k3 = rhs(t + dt / 2.0, &axpy(&x, &k2, dt / 2.0));
        let k4 = rhs(t + dt, &axpy(&x, &k3, dt));
        for j in 0..x.len() {
            x[j] += dt / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]);
        }
        out.push(((s + 1) as f64 * dt, x.clone()));
    }
    out
}

/// Generalised repressilator right-hand side written out from the model equations.
pub fn repressilator(p: &[[f64; 5]; 8], x: &[f64]) -> Vec<f64> {
    (0..8)
        .map(|i| {
            let pred = x[(i + 7) % 8];
            let [p1, p2, p3, p4, p5] = p[i];
            p1 / (p2.powf(p3) + pred.powf(p3)) + p4 - p5 * x[i]
        })
        .collect()
}

/// Newton's method with a finite-difference Jacobian.
pub fn newton_root<F: Fn(&[f64]) -> Vec<f64>>(f: F, x0: &[f64], tol: f64) -> Vec<f64> {
    let n = x0.len();
    let mut x = x0.to_vec();
    for _ in 0..100 {
        let fx = f(&x);
        if norm(&fx) < tol {
            break;
        }
        let mut jac = zeros(n, n);
        for j in 0..n {
            let h = 1e-7 * x[j].abs().max(1.0);
            let mut xp = x.clone();
            xp[j] += h;
            let fp = f(&xp);
            for i in 0..n {
                jac[i][j] = (fp[i] - fx[i]) / h;
            }
        }
        let dx = solve(&jac, &fx);
        for j in 0..n {
            x[j] -= dx[j];
        }
    }
    x
}

/// Tiny deterministic generator so oracle-driven tests don't depend on library seeding.
pub struct Lcg(pub u64);

impl Lcg {
    pub fn next_f64(&mut self) -> f64 {
        self.0 = self.0.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        (self.0 >> 11) as f64 / (1u64 << 53) as f64
    }

    /// Uniform on `[lo, hi)`.
    pub fn range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    pub fn below(&mut self, n: usize) -> usize {
        ((self.next_f64() * n as f64) as usize).min(n - 1)
    }

    /// Approximately standard normal (sum of twelve uniforms).
    pub fn normal(&mut self) -> f64 {
        (0..12).map(|_| self.next_f64()).sum::<f64>() - 6.0
    }
}

pub fn to_mat(m: &nalgebra::DMatrix<f64>) -> Mat {
    (0..m.nrows()).map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect()).collect()
}

pub fn from_mat(m: &Mat) -> nalgebra::DMatrix<f64> {
    nalgebra::DMatrix::from_fn(m.len(), m[0].len(), |i, j| m[i][j])
}

/// Random `C` experiments of an `M × N` regression with Gaussian-ish entries.
pub fn random_problem(rng: &mut Lcg, n: usize, c_count: usize, m: usize) -> StackedProblem {
    use nalgebra::{DMatrix, DVector};
    use reactnet::datamodel::{stack_problem, RegressionTarget};
    let dicts: Vec<DMatrix<f64>> = (0..c_count).map(|_| DMatrix::from_fn(m, n, |_, _| rng.normal())).collect();
    let target = RegressionTarget {
        state_index: 0,
        y_per_experiment: (0..c_count).map(|_| DVector::from_fn(m, |_, _| 2.0 * rng.normal())).collect(),
    };
    stack_problem(&target, &dicts).unwrap()
}

/// `BBᵀ/dim + floor·I` with a random square `B`.
pub fn random_spd(rng: &mut Lcg, dim: usize, floor: f64) -> Mat {
    let b: Mat = (0..dim).map(|_| (0..dim).map(|_| rng.normal()).collect()).collect();
    let mut s = matmul(&b, &transpose(&b));
    for (i, row) in s.iter_mut().enumerate() {
        for v in row.iter_mut() {
            *v /= dim as f64;
        }
        row[i] += floor;
    }
    s
}

/// Block-diagonal dense matrix from per-experiment blocks.
pub fn block_diag(blocks: &[Mat]) -> Mat {
    let dim: usize = blocks.iter().map(|b| b.len()).sum();
    let mut out = zeros(dim, dim);
    let mut off = 0;
    for b in blocks {
        for (i, row) in b.iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                out[off + i][off + j] = *v;
            }
        }
        off += b.len();
    }
    out
}

pub fn frobenius(a: &Mat) -> f64 {
    a.iter().flatten().map(|v| v * v).sum::<f64>().sqrt()
}

#[cfg(test)]
mod self_checks {
    #[allow(unused_imports)] // the acceptance target builds without a test harness
    use super::*;

    #[test]
    fn rk4_exponential() {
        let traj = fixed_step_rk4(|_, x| vec![-x[0]], &[1.0], 1e-3, 1.0);
        assert!((traj.last().unwrap().1[0] - (-1.0f64).exp()).abs() < 1e-10);
        let flat = fixed_step_rk4(|_, x| vec![0.0; x.len()], &[0.4, 2.0], 0.1, 3.0);
        assert_eq!(flat.last().unwrap().1, vec![0.4, 2.0]);
    }

    #[test]
    fn finite_differences() {
        let g = finite_diff_gradient(|x| x.iter().map(|v| v * v).sum(), &[1.0, 0.0, 0.0], 1e-4);
        assert!((g[0] - 2.0).abs() < 1e-8 && g[1].abs() < 1e-12 && g[2].abs() < 1e-12);
        assert_eq!(finite_diff_gradient(|_| 3.0, &[1.0, 2.0], 1e-3), vec![0.0, 0.0]);
    }

    #[test]
    fn elimination() {
        let a = vec![vec![0.0, 2.0], vec![3.0, 1.0]];
        let x = solve(&a, &[4.0, 5.0]);
        assert!((x[0] - 1.0).abs() < 1e-15 && (x[1] - 2.0).abs() < 1e-15);
        assert!((log_det(&vec![vec![2.0, 0.0], vec![0.0, 3.0]]) - 6f64.ln()).abs() < 1e-15);
    }
}
