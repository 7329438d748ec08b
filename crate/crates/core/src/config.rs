//! Run configuration: JSON files with flat dotted keys, overridable by flags.
//!
//! ```json
//! { "generation.C": 5, "generation.sigma": 0.0, "solver.k_max": 5,
//!   "solver.s_structure.kind": "block_diagonal", "sweep.repeats": 20 }
//! ```
//!
//! Nested objects are accepted as well and merged key by key.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::derivatives::DifferenceSpec;
use crate::dictionary::{DictionarySpec, NegativeInputPolicy};
use crate::evaluation::{Algorithm, SweepConfig};
use crate::simulator::GenerationConfig;
use crate::solver::SolverOptions;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepGrid {
    pub c_grid: Vec<usize>,
    pub m_grid: Vec<usize>,
    pub repeats: usize,
    pub algorithms: Vec<Algorithm>,
    pub group_lasso_lambda: f64,
    pub seed: u64,
}

impl Default for SweepGrid {
    fn default() -> Self {
        let s = SweepConfig::default();
        SweepGrid {
            c_grid: s.c_grid,
            m_grid: s.m_grid,
            repeats: s.repeats,
            algorithms: s.algorithms,
            group_lasso_lambda: s.group_lasso_lambda,
            seed: s.seed,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IoPaths {
    /// Dataset manifest to read.
    pub dataset: Option<PathBuf>,
    /// Dictionary spec JSON; the 25-column repressilator dictionary when absent.
    pub dictionary: Option<PathBuf>,
    /// Output file or directory.
    pub output: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub generation: GenerationConfig,
    pub difference: DifferenceSpec,
    pub negative_policy: NegativeInputPolicy,
    pub solver: SolverOptions,
    pub sweep: SweepGrid,
    pub io: IoPaths,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            generation: GenerationConfig::default(),
            difference: DifferenceSpec::default(),
            negative_policy: NegativeInputPolicy::Clamp,
            solver: SolverOptions::default(),
            sweep: SweepGrid::default(),
            io: IoPaths::default(),
        }
    }
}

fn merge(dst: &mut Value, src: Value) {
    match (dst, src) {
        (Value::Object(d), Value::Object(s)) => {
            for (k, v) in s {
                merge(d.entry(k).or_insert(Value::Null), v);
            }
        }
        (d, s) => *d = s,
    }
}

/// `"a.b.c": v` → `{"a": {"b": {"c": v}}}`.
fn unflatten(key: &str, value: Value) -> Value {
    key.rsplit('.').fold(value, |acc, part| {
        let mut m = Map::new();
        m.insert(part.to_string(), acc);
        Value::Object(m)
    })
}

impl RunConfig {
    pub fn from_json_str(text: &str) -> Result<Self> {
        let raw: Value = serde_json::from_str(text)?;
        let Value::Object(entries) = raw else {
            return Err(Error::InvalidConfig("config must be a JSON object".into()));
        };
        let mut current = serde_json::to_value(RunConfig::default())?;
        for (k, v) in entries {
            merge(&mut current, unflatten(&k, v));
        }
        serde_json::from_value(current).map_err(|e| Error::InvalidConfig(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }

    /// Overrides one dotted key, e.g. `set("solver.k_max", 3.into())`.
    pub fn set(&mut self, key: &str, value: Value) -> Result<()> {
        let mut current = serde_json::to_value(&*self)?;
        merge(&mut current, unflatten(key, value));
        *self = serde_json::from_value(current)
            .map_err(|e| Error::InvalidConfig(format!("{key}: {e}")))?;
        Ok(())
    }

    /// Flat dotted view of the whole configuration.
    pub fn to_flat(&self) -> Result<Map<String, Value>> {
        fn walk(prefix: &str, v: Value, out: &mut Map<String, Value>) {
            match v {
                Value::Object(m) if !m.is_empty() => {
                    for (k, v) in m {
                        let key = if prefix.is_empty() { k } else { format!("{prefix}.{k}") };
                        walk(&key, v, out);
                    }
                }
                v => {
                    out.insert(prefix.to_string(), v);
                }
            }
        }
        let mut out = Map::new();
        walk("", serde_json::to_value(self)?, &mut out);
        Ok(out)
    }

    pub fn dictionary_spec(&self) -> Result<DictionarySpec> {
        match &self.io.dictionary {
            Some(path) => Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?),
            None => Ok(DictionarySpec::repressilator_default()),
        }
    }

    pub fn sweep_config(&self) -> Result<SweepConfig> {
        Ok(SweepConfig {
            c_grid: self.sweep.c_grid.clone(),
            m_grid: self.sweep.m_grid.clone(),
            repeats: self.sweep.repeats,
            algorithms: self.sweep.algorithms.clone(),
            generation: self.generation.clone(),
            difference: self.difference,
            dictionary: self.dictionary_spec()?,
            negative_policy: self.negative_policy,
            solver: self.solver.clone(),
            group_lasso_lambda: self.sweep.group_lasso_lambda,
            seed: self.sweep.seed,
        })
    }
}
