//! Structured symmetric matrices over the stacked weight space and the noise
//! precision matrix `S`.
//!
//! Weight-space matrices are `NC × NC` in stacked order (`i * C + c`). When the
//! precision is block-diagonal across experiments they decouple into `C`
//! independent `N × N` matrices, one per experiment, which is the common case.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::datamodel::StackedProblem;
use crate::{Error, Result};

/// Per-experiment slices of a stacked vector: `out[c][i] = v[i * C + c]`.
pub fn split(v: &DVector<f64>, c_count: usize) -> Vec<DVector<f64>> {
    let n = v.len() / c_count;
    (0..c_count)
        .map(|c| DVector::from_fn(n, |i, _| v[i * c_count + c]))
        .collect()
}

/// Inverse of [`split`].
pub fn join(parts: &[DVector<f64>]) -> DVector<f64> {
    let c_count = parts.len();
    let n = parts[0].len();
    DVector::from_fn(n * c_count, |k, _| parts[k % c_count][k / c_count])
}

#[derive(Debug, Clone, PartialEq)]
pub enum Sym {
    /// `C` decoupled `N × N` blocks.
    PerExperiment(Vec<DMatrix<f64>>),
    /// Full `NC × NC` matrix in stacked order.
    Dense(DMatrix<f64>),
}

impl Sym {
    pub fn dim(&self) -> usize {
        match self {
            Sym::PerExperiment(m) => m.len() * m[0].nrows(),
            Sym::Dense(m) => m.nrows(),
        }
    }

    pub fn diagonal(&self) -> DVector<f64> {
        match self {
            Sym::PerExperiment(m) => join(&m.iter().map(|b| b.diagonal()).collect::<Vec<_>>()),
            Sym::Dense(m) => m.diagonal(),
        }
    }

    pub fn mul_vec(&self, v: &DVector<f64>) -> DVector<f64> {
        match self {
            Sym::PerExperiment(m) => {
                let parts = split(v, m.len());
                join(&m.iter().zip(&parts).map(|(b, p)| b * p).collect::<Vec<_>>())
            }
            Sym::Dense(m) => m * v,
        }
    }

    /// `D M D` for `D = diag(d)`.
    pub fn congruence_diag(&self, d: &DVector<f64>) -> Sym {
        match self {
            Sym::PerExperiment(m) => {
                let parts = split(d, m.len());
                Sym::PerExperiment(
                    m.iter()
                        .zip(&parts)
                        .map(|(b, s)| DMatrix::from_fn(b.nrows(), b.ncols(), |i, j| s[i] * b[(i, j)] * s[j]))
                        .collect(),
                )
            }
            Sym::Dense(m) => Sym::Dense(DMatrix::from_fn(m.nrows(), m.ncols(), |i, j| d[i] * m[(i, j)] * d[j])),
        }
    }

    pub fn add_diag(&self, d: &DVector<f64>) -> Sym {
        let mut out = self.clone();
        match &mut out {
            Sym::PerExperiment(m) => {
                let parts = split(d, m.len());
                for (b, s) in m.iter_mut().zip(&parts) {
                    for i in 0..s.len() {
                        b[(i, i)] += s[i];
                    }
                }
            }
            Sym::Dense(m) => {
                for i in 0..d.len() {
                    m[(i, i)] += d[i];
                }
            }
        }
        out
    }

    pub fn cholesky(&self) -> Result<SymChol> {
        Ok(match self {
            Sym::PerExperiment(m) => SymChol::PerExperiment(m.iter().map(jittered_cholesky).collect::<Result<_>>()?),
            Sym::Dense(m) => SymChol::Dense(jittered_cholesky(m)?),
        })
    }

    /// `diag(M X M)` for symmetric `M`, `X` of the same structure.
    pub fn diag_sandwich(&self, x: &Sym) -> Result<DVector<f64>> {
        let one = |m: &DMatrix<f64>, x: &DMatrix<f64>| {
            let xm = x * m;
            DVector::from_fn(m.nrows(), |j, _| m.row(j).dot(&xm.column(j).transpose()))
        };
        match (self, x) {
            (Sym::PerExperiment(m), Sym::PerExperiment(xs)) => {
                Ok(join(&m.iter().zip(xs).map(|(a, b)| one(a, b)).collect::<Vec<_>>()))
            }
            (Sym::Dense(m), Sym::Dense(xs)) => Ok(one(m, xs)),
            _ => Err(Error::DimensionMismatch("mixed matrix structures".into())),
        }
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        match self {
            Sym::Dense(m) => m.clone(),
            Sym::PerExperiment(m) => {
                let c_count = m.len();
                let n = m[0].nrows();
                DMatrix::from_fn(n * c_count, n * c_count, |r, s| {
                    if r % c_count == s % c_count {
                        m[r % c_count][(r / c_count, s / c_count)]
                    } else {
                        0.0
                    }
                })
            }
        }
    }
}

/// Cholesky factorization, retrying with growing diagonal jitter
/// `ε = 1e−8·tr(M)/n · 10^j` when the matrix is numerically indefinite.
pub fn jittered_cholesky(m: &DMatrix<f64>) -> Result<Cholesky<f64, Dyn>> {
    if let Some(ch) = Cholesky::new(m.clone()) {
        return Ok(ch);
    }
    let n = m.nrows().max(1);
    let scale = (m.trace() / n as f64).abs().max(f64::MIN_POSITIVE);
    let mut eps = 1e-8 * scale;
    for _ in 0..7 {
        let mut shifted = m.clone();
        for i in 0..m.nrows() {
            shifted[(i, i)] += eps;
        }
        if let Some(ch) = Cholesky::new(shifted) {
            log::debug!("cholesky needed jitter {eps:e}");
            return Ok(ch);
        }
        eps *= 10.0;
    }
    Err(Error::NotPositiveDefinite(format!("{}×{} matrix, jitter up to {eps:e}", n, n)))
}

fn chol_log_det(ch: &Cholesky<f64, Dyn>) -> f64 {
    2.0 * ch.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>()
}

pub enum SymChol {
    PerExperiment(Vec<Cholesky<f64, Dyn>>),
    Dense(Cholesky<f64, Dyn>),
}

impl SymChol {
    pub fn solve(&self, v: &DVector<f64>) -> DVector<f64> {
        match self {
            SymChol::PerExperiment(chs) => {
                let parts = split(v, chs.len());
                join(&chs.iter().zip(&parts).map(|(ch, p)| ch.solve(p)).collect::<Vec<_>>())
            }
            SymChol::Dense(ch) => ch.solve(v),
        }
    }

    pub fn log_det(&self) -> f64 {
        match self {
            SymChol::PerExperiment(chs) => chs.iter().map(chol_log_det).sum(),
            SymChol::Dense(ch) => chol_log_det(ch),
        }
    }

    pub fn inverse(&self) -> Sym {
        match self {
            SymChol::PerExperiment(chs) => Sym::PerExperiment(chs.iter().map(|ch| ch.inverse()).collect()),
            SymChol::Dense(ch) => Sym::Dense(ch.inverse()),
        }
    }
}

/// A structured `CM × CM` matrix over stacked samples: the noise precision `S`,
/// its inverse `Π`, or the auxiliary matrix `Λ`.
#[derive(Debug, Clone, PartialEq)]
pub enum SampleMatrix {
    /// `λ⁻¹ I`.
    ScaledIdentity { lambda: f64, experiments: usize, samples: usize },
    /// One `M × M` block per experiment.
    BlockDiagonal(Vec<DMatrix<f64>>),
    /// `CM × CM`, rows ordered experiment-major.
    Full(DMatrix<f64>),
}

impl SampleMatrix {
    pub fn block_identity(experiments: usize, samples: usize) -> Self {
        SampleMatrix::BlockDiagonal(vec![DMatrix::identity(samples, samples); experiments])
    }

    pub fn full_identity(experiments: usize, samples: usize) -> Self {
        SampleMatrix::Full(DMatrix::identity(experiments * samples, experiments * samples))
    }

    pub fn scaled_identity(lambda: f64, experiments: usize, samples: usize) -> Self {
        SampleMatrix::ScaledIdentity {
            lambda,
            experiments,
            samples,
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            SampleMatrix::ScaledIdentity { experiments, samples, .. } => experiments * samples,
            SampleMatrix::BlockDiagonal(b) => b.iter().map(|m| m.nrows()).sum(),
            SampleMatrix::Full(m) => m.nrows(),
        }
    }

    fn check(&self, p: &StackedProblem) -> Result<()> {
        let (c_count, m, _) = p.layout();
        let ok = match self {
            SampleMatrix::ScaledIdentity { experiments, samples, .. } => *experiments == c_count && *samples == m,
            SampleMatrix::BlockDiagonal(b) => b.len() == c_count && b.iter().all(|s| s.shape() == (m, m)),
            SampleMatrix::Full(s) => s.shape() == (c_count * m, c_count * m),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::DimensionMismatch(format!(
                "precision does not match C = {c_count}, M = {m}"
            )))
        }
    }

    /// `S x` for a per-experiment vector.
    pub fn apply(&self, x: &[DVector<f64>]) -> Vec<DVector<f64>> {
        match self {
            SampleMatrix::ScaledIdentity { lambda, .. } => x.iter().map(|v| v / *lambda).collect(),
            SampleMatrix::BlockDiagonal(b) => b.iter().zip(x).map(|(s, v)| s * v).collect(),
            SampleMatrix::Full(s) => {
                let m = x[0].len();
                let flat = s * stack(x);
                (0..x.len()).map(|c| flat.rows(c * m, m).into_owned()).collect()
            }
        }
    }

    /// `xᵀ S x`.
    pub fn quad(&self, x: &[DVector<f64>]) -> f64 {
        self.apply(x).iter().zip(x).map(|(sx, v)| sx.dot(v)).sum()
    }

    pub fn log_det(&self) -> Result<f64> {
        Ok(match self {
            SampleMatrix::ScaledIdentity { lambda, experiments, samples } => {
                -((experiments * samples) as f64) * lambda.ln()
            }
            SampleMatrix::BlockDiagonal(b) => b
                .iter()
                .map(|s| jittered_cholesky(s).map(|ch| chol_log_det(&ch)))
                .sum::<Result<f64>>()?,
            SampleMatrix::Full(s) => chol_log_det(&jittered_cholesky(s)?),
        })
    }

    /// `Π = S⁻¹` in the same structure.
    pub fn inverse(&self) -> Result<SampleMatrix> {
        Ok(match self {
            SampleMatrix::ScaledIdentity { lambda, experiments, samples } => SampleMatrix::ScaledIdentity {
                lambda: 1.0 / lambda,
                experiments: *experiments,
                samples: *samples,
            },
            SampleMatrix::BlockDiagonal(b) => {
                SampleMatrix::BlockDiagonal(b.iter().map(|s| jittered_cholesky(s).map(|ch| ch.inverse())).collect::<Result<_>>()?)
            }
            SampleMatrix::Full(s) => SampleMatrix::Full(jittered_cholesky(s)?.inverse()),
        })
    }

    /// `G = AᵀSA` in weight space.
    pub fn gram(&self, p: &StackedProblem) -> Result<Sym> {
        self.check(p)?;
        let (c_count, m, n) = p.layout();
        Ok(match self {
            SampleMatrix::ScaledIdentity { lambda, .. } => Sym::PerExperiment(
                (0..c_count)
                    .map(|c| p.dictionary(c).tr_mul(p.dictionary(c)) / *lambda)
                    .collect(),
            ),
            SampleMatrix::BlockDiagonal(b) => Sym::PerExperiment(
                (0..c_count)
                    .map(|c| {
                        let a = p.dictionary(c);
                        a.tr_mul(&(&b[c] * a))
                    })
                    .collect(),
            ),
            SampleMatrix::Full(s) => {
                let mut g = DMatrix::zeros(n * c_count, n * c_count);
                for d in 0..c_count {
                    // S[:, d-block] A_d
                    let sa = s.columns(d * m, m) * p.dictionary(d);
                    for c in 0..c_count {
                        let blk = p.dictionary(c).tr_mul(&sa.rows(c * m, m));
                        for i in 0..n {
                            for j in 0..n {
                                g[(i * c_count + c, j * c_count + d)] = blk[(i, j)];
                            }
                        }
                    }
                }
                Sym::Dense(g)
            }
        })
    }

    /// `AᵀSy`, stacked.
    pub fn weighted_target(&self, p: &StackedProblem) -> Result<DVector<f64>> {
        self.check(p)?;
        let ys: Vec<DVector<f64>> = (0..p.n_experiments()).map(|c| p.target(c).clone()).collect();
        let sy = self.apply(&ys);
        Ok(join(
            &(0..p.n_experiments())
                .map(|c| p.dictionary(c).tr_mul(&sy[c]))
                .collect::<Vec<_>>(),
        ))
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        match self {
            SampleMatrix::ScaledIdentity { lambda, .. } => DMatrix::identity(self.dim(), self.dim()) / *lambda,
            SampleMatrix::BlockDiagonal(b) => {
                let n = self.dim();
                let mut out = DMatrix::zeros(n, n);
                let mut off = 0;
                for s in b {
                    out.view_mut((off, off), s.shape()).copy_from(s);
                    off += s.nrows();
                }
                out
            }
            SampleMatrix::Full(s) => s.clone(),
        }
    }
}

pub fn stack(x: &[DVector<f64>]) -> DVector<f64> {
    let m = x[0].len();
    DVector::from_fn(m * x.len(), |r, _| x[r / m][r % m])
}
