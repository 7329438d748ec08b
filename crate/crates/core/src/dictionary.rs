//! Candidate basis functions and dictionary matrices.

use std::fmt;
use std::ops::Range;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::datamodel::TimeSeriesExperiment;
use crate::simulator::{RepressilatorParams, N_SPECIES};
use crate::{Error, Result};

/// One candidate term. State indices are 1-based, matching the `x1, x2, …` names.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "params", rename_all = "snake_case")]
pub enum BasisFunction {
    Linear { state: usize },
    /// `x^h_num / (K^h_den + x^h_den)`.
    Hill { state: usize, k: f64, h_num: f64, h_den: f64 },
    Constant,
    MassAction { states: [usize; 2] },
    /// `x / (K + x)`.
    MichaelisMenten { state: usize, k: f64 },
}

impl BasisFunction {
    fn states(&self) -> Vec<usize> {
        match self {
            BasisFunction::Linear { state }
            | BasisFunction::Hill { state, .. }
            | BasisFunction::MichaelisMenten { state, .. } => vec![*state],
            BasisFunction::MassAction { states } => states.to_vec(),
            BasisFunction::Constant => vec![],
        }
    }

    fn needs_nonnegative(&self) -> bool {
        matches!(
            self,
            BasisFunction::Hill { .. } | BasisFunction::MichaelisMenten { .. }
        )
    }

    pub fn validate(&self, n_x: usize) -> Result<()> {
        if let Some(bad) = self.states().into_iter().find(|&s| s == 0 || s > n_x) {
            return Err(Error::InvalidConfig(format!(
                "{self}: state index {bad} outside 1..={n_x}"
            )));
        }
        match *self {
            BasisFunction::Hill { k, h_num, h_den, .. } => {
                if !(k > 0.0) {
                    return Err(Error::InvalidConfig(format!("{self}: K must be positive")));
                }
                if !(h_den >= 1.0) {
                    return Err(Error::InvalidConfig(format!("{self}: h_den must be ≥ 1")));
                }
                if h_num != 0.0 && h_num != h_den {
                    return Err(Error::InvalidConfig(format!("{self}: h_num must be 0 or h_den")));
                }
            }
            BasisFunction::MichaelisMenten { k, .. } if !(k > 0.0) => {
                return Err(Error::InvalidConfig(format!("{self}: K must be positive")));
            }
            _ => {}
        }
        Ok(())
    }

    /// Evaluates on one state row (0-based slice). Inputs to Hill and
    /// Michaelis–Menten terms must already be nonnegative.
    pub fn eval(&self, x: &[f64]) -> f64 {
        match *self {
            BasisFunction::Linear { state } => x[state - 1],
            BasisFunction::Hill { state, k, h_num, h_den } => hill(x[state - 1], k, h_num, h_den),
            BasisFunction::Constant => 1.0,
            BasisFunction::MassAction { states: [a, b] } => x[a - 1] * x[b - 1],
            BasisFunction::MichaelisMenten { state, k } => x[state - 1] / (k + x[state - 1]),
        }
    }
}

impl fmt::Display for BasisFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BasisFunction::Linear { state } => write!(f, "x{state}"),
            BasisFunction::Hill { state, k, h_num, h_den } => {
                write!(f, "hill(x{state},{k},{h_num},{h_den})")
            }
            BasisFunction::Constant => write!(f, "1"),
            BasisFunction::MassAction { states: [a, b] } => write!(f, "x{a}*x{b}"),
            BasisFunction::MichaelisMenten { state, k } => write!(f, "mm(x{state},{k})"),
        }
    }
}

/// `x^h_num / (K^h_den + x^h_den)` for `x ≥ 0`, `K > 0`.
pub fn hill(x: f64, k: f64, h_num: f64, h_den: f64) -> f64 {
    x.powf(h_num) / (k.powf(h_den) + x.powf(h_den))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DictionarySpec {
    pub basis: Vec<BasisFunction>,
}

impl DictionarySpec {
    /// `[x1..x8, hill(xi,1,0,3) ×8, hill(xi,1,3,3) ×8, 1]`, 25 columns.
    pub fn repressilator_default() -> Self {
        let n = N_SPECIES;
        let mut basis: Vec<BasisFunction> = (1..=n).map(|state| BasisFunction::Linear { state }).collect();
        for h_num in [0.0, 3.0] {
            basis.extend((1..=n).map(|state| BasisFunction::Hill {
                state,
                k: 1.0,
                h_num,
                h_den: 3.0,
            }));
        }
        basis.push(BasisFunction::Constant);
        DictionarySpec { basis }
    }

    pub fn len(&self) -> usize {
        self.basis.len()
    }

    pub fn is_empty(&self) -> bool {
        self.basis.is_empty()
    }

    pub fn names(&self) -> Vec<String> {
        self.basis.iter().map(|b| b.to_string()).collect()
    }

    pub fn validate(&self, n_x: usize) -> Result<()> {
        if self.basis.is_empty() {
            return Err(Error::InvalidConfig("dictionary has no basis functions".into()));
        }
        self.basis.iter().try_for_each(|b| b.validate(n_x))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NegativeInputPolicy {
    /// Hill and Michaelis–Menten inputs are clamped at zero.
    #[default]
    Clamp,
    Strict,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DictionaryMatrix {
    pub experiment_id: usize,
    /// `rows.len() × N`.
    pub values: DMatrix<f64>,
    /// Sample indices the rows were evaluated at.
    pub rows: Range<usize>,
    /// Number of clamped negative inputs.
    pub clamped: usize,
}

pub fn build_dictionary(
    experiment: &TimeSeriesExperiment,
    spec: &DictionarySpec,
    rows: Range<usize>,
    policy: NegativeInputPolicy,
) -> Result<DictionaryMatrix> {
    spec.validate(experiment.states.ncols())?;
    if rows.end > experiment.len() || rows.start > rows.end {
        return Err(Error::DimensionMismatch(format!(
            "row range {rows:?} outside {} samples",
            experiment.len()
        )));
    }
    let mut values = DMatrix::zeros(rows.len(), spec.len());
    let mut clamped = 0;
    let mut row = vec![0.0; experiment.states.ncols()];
    for (r, sample) in rows.clone().enumerate() {
        for (j, basis) in spec.basis.iter().enumerate() {
            row.iter_mut()
                .zip(experiment.states.row(sample).iter())
                .for_each(|(dst, src)| *dst = *src);
            if basis.needs_nonnegative() {
                for s in basis.states() {
                    let v = row[s - 1];
                    if v < 0.0 {
                        match policy {
                            NegativeInputPolicy::Strict => {
                                return Err(Error::NegativeInput {
                                    basis: basis.to_string(),
                                    value: v,
                                })
                            }
                            NegativeInputPolicy::Clamp => {
                                row[s - 1] = 0.0;
                                clamped += 1;
                            }
                        }
                    }
                }
            }
            values[(r, j)] = basis.eval(&row);
        }
    }
    if clamped > 0 {
        log::debug!(
            "experiment {}: clamped {clamped} negative dictionary inputs",
            experiment.id
        );
    }
    if let Some(bad) = values.iter().position(|v| !v.is_finite()) {
        let col = bad / values.nrows();
        return Err(Error::InvalidDataset(format!(
            "experiment {}: non-finite value in column {}",
            experiment.id, spec.basis[col]
        )));
    }
    Ok(DictionaryMatrix {
        experiment_id: experiment.id,
        values,
        rows,
        clamped,
    })
}

/// Ground-truth weights of state `n` (0-based) under the default dictionary:
/// `+p_n1` on the repressing Hill term of the predecessor, `−p_n5` on `x_n`, `+p_n4` on the constant.
pub fn true_weights(params: &RepressilatorParams, spec: &DictionarySpec, n: usize) -> Result<DVector<f64>> {
    if *spec != DictionarySpec::repressilator_default() {
        return Err(Error::NonDefaultSpec);
    }
    if n >= N_SPECIES {
        return Err(Error::DimensionMismatch(format!("state {n} of {N_SPECIES}")));
    }
    let pred = (n + N_SPECIES - 1) % N_SPECIES;
    let mut w = DVector::zeros(spec.len());
    w[N_SPECIES + pred] = params.p[n][0];
    w[n] = -params.p[n][4];
    w[spec.len() - 1] = params.p[n][3];
    Ok(w)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn experiment(states: DMatrix<f64>) -> TimeSeriesExperiment {
        TimeSeriesExperiment {
            id: 1,
            times: (0..states.nrows()).map(|i| i as f64).collect(),
            states,
            inputs: None,
            meta: serde_json::Value::Null,
        }
    }

    #[test]
    fn hill_examples() {
        assert_eq!(hill(1.0, 1.0, 0.0, 3.0), 0.5);
        assert!((hill(2.0, 1.0, 3.0, 3.0) - 8.0 / 9.0).abs() < 1e-15);
        for &(x, h) in &[(0.3, 3.0), (2.5, 2.0), (0.0, 1.0), (9.0, 4.5)] {
            assert!((hill(x, 1.0, 0.0, h) + hill(x, 1.0, h, h) - 1.0).abs() < 1e-14);
        }
        // General K: repression is scaled by K^h.
        for &(x, k, h) in &[(2.5, 0.7, 2.0), (0.0, 1.3, 1.0), (9.0, 2.0, 4.5)] {
            let kh = f64::powf(k, h);
            assert!((kh * hill(x, k, 0.0, h) + hill(x, k, h, h) - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn default_spec_layout() {
        let spec = DictionarySpec::repressilator_default();
        assert_eq!(spec.len(), 25);
        let names = spec.names();
        assert_eq!(names[0], "x1");
        assert_eq!(names[8], "hill(x1,1,0,3)");
        assert_eq!(names[16], "hill(x1,1,3,3)");
        assert_eq!(names[24], "1");
    }

    #[test]
    fn default_dictionary_on_states() {
        let states = DMatrix::from_fn(6, 8, |r, c| if c == 7 { 1.0 } else { 0.1 * (r + c) as f64 });
        let e = experiment(states);
        let spec = DictionarySpec::repressilator_default();
        let d = build_dictionary(&e, &spec, 1..5, NegativeInputPolicy::Strict).unwrap();
        assert_eq!(d.values.shape(), (4, 25));
        assert!(d.values.column(24).iter().all(|v| *v == 1.0));
        assert!(d.values.column(15).iter().all(|v| *v == 0.5));
        assert_eq!(d.values[(0, 2)], e.states[(1, 2)]);
    }

    #[test]
    fn negative_inputs_clamp_or_fail() {
        let mut states = DMatrix::from_element(3, 8, 0.5);
        states[(1, 3)] = -0.01;
        let e = experiment(states);
        let spec = DictionarySpec::repressilator_default();
        let d = build_dictionary(&e, &spec, 0..3, NegativeInputPolicy::Clamp).unwrap();
        assert_eq!(d.clamped, 2);
        assert_eq!(d.values[(1, 3)], -0.01);
        assert_eq!(d.values[(1, 8 + 3)], 1.0);
        assert_eq!(d.values[(1, 16 + 3)], 0.0);
        assert!(matches!(
            build_dictionary(&e, &spec, 0..3, NegativeInputPolicy::Strict),
            Err(Error::NegativeInput { .. })
        ));
    }

    #[test]
    fn spec_json_roundtrip() {
        let spec = DictionarySpec {
            basis: vec![
                BasisFunction::Linear { state: 2 },
                BasisFunction::Hill { state: 1, k: 1.5, h_num: 0.0, h_den: 2.0 },
                BasisFunction::Constant,
                BasisFunction::MassAction { states: [1, 2] },
                BasisFunction::MichaelisMenten { state: 2, k: 0.5 },
            ],
        };
        let text = serde_json::to_string(&spec).unwrap();
        assert!(text.starts_with(r#"[{"kind":"linear","params":{"state":2}}"#));
        let back: DictionarySpec = serde_json::from_str(&text).unwrap();
        assert_eq!(back, spec);
        let x = [2.0, 3.0];
        let vals: Vec<f64> = spec.basis.iter().map(|b| b.eval(&x)).collect();
        assert_eq!(vals, vec![3.0, 1.0 / 6.25, 1.0, 6.0, 3.0 / 3.5]);
    }

    #[test]
    fn invalid_basis_rejected() {
        for b in [
            BasisFunction::Linear { state: 0 },
            BasisFunction::Linear { state: 9 },
            BasisFunction::Hill { state: 1, k: 0.0, h_num: 0.0, h_den: 3.0 },
            BasisFunction::Hill { state: 1, k: 1.0, h_num: 1.0, h_den: 3.0 },
            BasisFunction::Hill { state: 1, k: 1.0, h_num: 0.0, h_den: 0.5 },
        ] {
            assert!(b.validate(8).is_err(), "{b}");
        }
    }

    #[test]
    fn true_weights_mean_params() {
        let spec = DictionarySpec::repressilator_default();
        let p = RepressilatorParams::mean();
        let w = true_weights(&p, &spec, 0).unwrap();
        assert_eq!(w[8 + 7], 40.0);
        assert_eq!(w[0], -1.0);
        assert_eq!(w[24], 0.5);
        assert_eq!(w.iter().filter(|v| **v != 0.0).count(), 3);
        let mut other = spec.clone();
        other.basis.pop();
        assert!(matches!(true_weights(&p, &other, 0), Err(Error::NonDefaultSpec)));
    }
}
