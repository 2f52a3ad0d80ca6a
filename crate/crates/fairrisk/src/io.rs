//! CSV and JSON files.
//!
//! CSV output follows RFC 4180 with a header row; floats are written with
//! Rust's shortest round-trip formatting so reruns are byte-identical.

use std::fs;
use std::path::{Path, PathBuf};

use fairrisk_core::pipeline::PolicyRecord;
use fairrisk_core::predictors::PredictionModel;
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{CliError, Result};

pub fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let csv_err = |source| CliError::Csv { path: path.to_path_buf(), source };
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    for r in rows {
        w.serialize(r).map_err(csv_err)?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

pub fn read_csv<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let csv_err = |source| CliError::Csv { path: path.to_path_buf(), source };
    let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
    r.deserialize().map(|row| row.map_err(csv_err)).collect()
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|source| CliError::Json { path: path.into(), source })?;
    text.push('\n');
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_str(&text).map_err(|source| CliError::Json { path: path.into(), source })
}

/// Policies with the portfolio column names as CSV headers.
pub fn read_policies(path: &Path) -> Result<Vec<PolicyRecord>> {
    read_csv(path)
}

pub fn write_policies(path: &Path, records: &[PolicyRecord]) -> Result<()> {
    write_csv(path, records)
}

/// Stores a fitted model next to the other outputs.
pub fn save_model(dir: &Path, name: &str, model: &PredictionModel) -> Result<PathBuf> {
    let path = dir.join(name);
    write_json(&path, model)?;
    Ok(path)
}

pub fn load_model(path: &Path) -> Result<PredictionModel> {
    read_json(path)
}
