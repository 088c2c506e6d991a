//! JSON documents and plot-ready CSV exports.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use fedboost_core::metrics::CurvePoint;
use fedboost_core::{Model, SplitIndices};
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};

/// Pretty-printed JSON with a trailing newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut out, value).map_err(|e| Error::format(path, e))?;
    out.write_all(b"\n").and_then(|()| out.flush()).map_err(|e| Error::io(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_reader(BufReader::new(file)).map_err(|e| Error::format(path, e))
}

/// Reads a model document and checks its version and feature references.
pub fn load_model(path: &Path) -> Result<Model> {
    let model: Model = read_json(path)?;
    model.validate()?;
    Ok(model)
}

/// Reads split indices and checks they partition `0..n_rows`.
pub fn load_splits(path: &Path, n_rows: usize) -> Result<SplitIndices> {
    let split: SplitIndices = read_json(path)?;
    split.validate(n_rows)?;
    Ok(split)
}

/// Serializes `rows` with a header taken from the field names.
pub fn write_rows<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut writer = csv::Writer::from_writer(BufWriter::new(file));
    for row in rows {
        writer.serialize(row).map_err(|e| Error::format(path, e))?;
    }
    writer.flush().map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LossRow {
    pub round: u32,
    pub loss: f64,
}

/// Loss per round. Round `first_round` holds the loss before the session's first tree.
pub fn loss_rows(first_round: u32, initial_loss: f64, losses: &[f64]) -> Vec<LossRow> {
    std::iter::once(initial_loss)
        .chain(losses.iter().copied())
        .enumerate()
        .map(|(i, loss)| LossRow { round: first_round + i as u32, loss })
        .collect()
}

/// `threshold,x,y` rows.
pub fn write_curve(path: &Path, points: &[CurvePoint]) -> Result<()> {
    write_rows(path, points)
}
