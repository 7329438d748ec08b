//! On-disk dataset format: one CSV per experiment plus a JSON manifest.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::datamodel::{HeterogeneousDataset, TimeSeriesExperiment};
use crate::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: usize,
    pub file: String,
    #[serde(default)]
    pub meta: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub n_x: usize,
    pub n_u: usize,
    pub experiments: Vec<ManifestEntry>,
    #[serde(default)]
    pub generation: serde_json::Value,
}

pub fn experiment_file_name(id: usize) -> String {
    format!("experiment_{id:03}.csv")
}

/// Writes `t,x1..,u1..` CSVs and the manifest into `dir`, returning the manifest path.
pub fn write_dataset(dir: &Path, ds: &HeterogeneousDataset, generation: serde_json::Value) -> Result<PathBuf> {
    fs::create_dir_all(dir)?;
    let mut entries = Vec::with_capacity(ds.n_experiments());
    for e in &ds.experiments {
        let file = experiment_file_name(e.id);
        write_experiment_csv(&dir.join(&file), e, ds.n_x, ds.n_u)?;
        entries.push(ManifestEntry {
            id: e.id,
            file,
            meta: e.meta.clone(),
        });
    }
    let manifest = Manifest {
        n_x: ds.n_x,
        n_u: ds.n_u,
        experiments: entries,
        generation,
    };
    let path = dir.join(MANIFEST_FILE);
    write_json(&path, &manifest)?;
    Ok(path)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

fn write_experiment_csv(path: &Path, e: &TimeSeriesExperiment, n_x: usize, n_u: usize) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["t".to_string()];
    header.extend((1..=n_x).map(|i| format!("x{i}")));
    header.extend((1..=n_u).map(|i| format!("u{i}")));
    w.write_record(&header)?;
    for (r, t) in e.times.iter().enumerate() {
        let mut row = vec![t.to_string()];
        row.extend(e.states.row(r).iter().map(|v| v.to_string()));
        if let Some(u) = &e.inputs {
            row.extend(u.row(r).iter().map(|v| v.to_string()));
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a dataset from its manifest. Experiment files are resolved relative to the manifest.
pub fn read_dataset(manifest_path: &Path) -> Result<HeterogeneousDataset> {
    let text = fs::read_to_string(manifest_path)?;
    let manifest: Manifest = serde_json::from_str(&text)?;
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    let experiments = manifest
        .experiments
        .iter()
        .map(|entry| read_experiment_csv(&base.join(&entry.file), entry, manifest.n_x, manifest.n_u))
        .collect::<Result<Vec<_>>>()?;
    Ok(HeterogeneousDataset {
        experiments,
        n_x: manifest.n_x,
        n_u: manifest.n_u,
    })
}

fn read_experiment_csv(path: &Path, entry: &ManifestEntry, n_x: usize, n_u: usize) -> Result<TimeSeriesExperiment> {
    let mut r = csv::Reader::from_path(path)?;
    let width = 1 + n_x + n_u;
    let header = r.headers()?.clone();
    if header.len() != width {
        return Err(Error::InvalidDataset(format!(
            "{}: {} columns, expected {}",
            path.display(),
            header.len(),
            width
        )));
    }
    let mut values = Vec::new();
    for (line, record) in r.records().enumerate() {
        let record = record?;
        if record.len() != width {
            return Err(Error::InvalidDataset(format!(
                "{}: row {} has {} fields",
                path.display(),
                line + 1,
                record.len()
            )));
        }
        for field in record.iter() {
            let v: f64 = field.trim().parse().map_err(|_| {
                Error::InvalidDataset(format!("{}: row {}: bad number {field:?}", path.display(), line + 1))
            })?;
            values.push(v);
        }
    }
    let m = values.len() / width;
    let table = DMatrix::from_row_slice(m, width, &values);
    Ok(TimeSeriesExperiment {
        id: entry.id,
        times: table.column(0).iter().copied().collect(),
        states: table.columns(1, n_x).into_owned(),
        inputs: (n_u > 0).then(|| table.columns(1 + n_x, n_u).into_owned()),
        meta: entry.meta.clone(),
    })
}
