//! CSV tables and the run manifest.
//!
//! Column sets are fixed:
//!
//! * trajectory: `time, mode_index, coefficient`
//! * observables: `eps, realization, time, observable_name, value`
//! * fits: `eps, stat_name, value, stderr`
//!
//! Floats are written with 17 significant digits so they parse back to the
//! same bits. Missing values (a fit row has no ε, a closed form has no
//! standard error) are empty fields.

use std::io::{Read, Write};
use std::path::Path;

use heatavg_core::TrajectoryRecord;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::ensemble::EnsembleResult;
use crate::RunError;

pub enum CsvTable<'a> {
    Trajectory(&'a TrajectoryRecord),
    Observables(&'a [EnsembleResult]),
    Fits(&'a [EnsembleResult]),
}

pub fn fmt_f64(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else {
        v.to_string()
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}

/// Stat names carry a `repeat{r}:` prefix when several repetitions share a file.
fn prefix(results: &[EnsembleResult], r: &EnsembleResult) -> String {
    if results.len() > 1 {
        format!("repeat{}:", r.repeat)
    } else {
        String::new()
    }
}

pub fn emit_csv<W: Write>(table: CsvTable<'_>, sink: W) -> Result<(), RunError> {
    let mut w = csv::Writer::from_writer(sink);
    match table {
        CsvTable::Trajectory(rec) => {
            w.write_record(["time", "mode_index", "coefficient"])?;
            for (t, state) in rec.times.iter().zip(&rec.states) {
                for (k, c) in state.coeffs().iter().enumerate() {
                    w.write_record([fmt_f64(*t), (k + 1).to_string(), fmt_f64(*c)])?;
                }
            }
        }
        CsvTable::Observables(results) => {
            w.write_record(["eps", "realization", "time", "observable_name", "value"])?;
            for res in results {
                let offset = res.repeat as usize * res.n_realizations;
                for entry in res.per_eps.iter().chain(&res.spot) {
                    let eps = fmt_f64(entry.eps);
                    let t_last = entry.times.last().copied().unwrap_or(f64::NAN);
                    for s in &entry.series {
                        for real in &s.realizations {
                            let id = (offset + real.index).to_string();
                            for (t, obs) in entry.times.iter().zip(&real.observables) {
                                for (name, v) in s.observable_names.iter().zip(obs) {
                                    let label = format!("{}:{}", s.name, name);
                                    w.write_record([&eps, &id, &fmt_f64(*t), &label, &fmt_f64(*v)])?;
                                }
                            }
                            if let Some(e) = real.error {
                                let label = format!("{}:error", s.name);
                                w.write_record([&eps, &id, &fmt_f64(t_last), &label, &fmt_f64(e)])?;
                            }
                        }
                    }
                }
            }
        }
        CsvTable::Fits(results) => {
            w.write_record(["eps", "stat_name", "value", "stderr"])?;
            for res in results {
                let p = prefix(results, res);
                for s in &res.summaries {
                    w.write_record([
                        fmt_opt(s.eps),
                        format!("{p}{}", s.stat_name),
                        fmt_f64(s.value),
                        fmt_opt(s.stderr),
                    ])?;
                }
            }
        }
    }
    w.flush().map_err(|e| RunError::Io { path: "<csv sink>".into(), source: e })?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct TrajectoryRow {
    pub time: f64,
    pub mode_index: usize,
    pub coefficient: f64,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct ObservableRow {
    pub eps: f64,
    pub realization: usize,
    pub time: f64,
    pub observable_name: String,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct FitRow {
    pub eps: Option<f64>,
    pub stat_name: String,
    pub value: f64,
    pub stderr: Option<f64>,
}

/// Reads back any of the three tables.
pub fn parse_csv<T: for<'de> Deserialize<'de>, R: Read>(source: R) -> Result<Vec<T>, RunError> {
    let mut r = csv::Reader::from_reader(source);
    r.deserialize().map(|row| row.map_err(RunError::from)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileEntry {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

impl FileEntry {
    pub fn digest(dir: &Path, name: &str) -> Result<Self, RunError> {
        let path = dir.join(name);
        let data = std::fs::read(&path).map_err(|e| RunError::Io { path: path.display().to_string(), source: e })?;
        Ok(FileEntry { path: name.to_string(), sha256: hex::encode(Sha256::digest(&data)), bytes: data.len() as u64 })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub name: String,
    pub value: f64,
    pub threshold: String,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub version: String,
    pub timestamp_unix: u64,
    pub config: serde_json::Value,
    pub verdicts: Vec<Verdict>,
    pub passed: bool,
    pub files: Vec<FileEntry>,
}

impl RunManifest {
    pub fn write(&self, dir: &Path) -> Result<(), RunError> {
        let path = dir.join("manifest.json");
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(&path, text + "\n").map_err(|e| RunError::Io { path: path.display().to_string(), source: e })
    }
}
