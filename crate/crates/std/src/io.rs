//! CSV ingest and export.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use fedboost_core::Dataset;

use crate::error::{Error, Result};

pub const DEFAULT_LABEL: &str = "Class";

/// Loads a headed CSV whose label column is named `Class`.
pub fn load_csv(path: &Path) -> Result<Dataset> {
    load_csv_with_label(path, DEFAULT_LABEL)
}

/// Loads a headed CSV, taking `label` as the 0/1 label column and every other column as
/// a feature. Rows are numbered from 1 (the first line after the header).
pub fn load_csv_with_label(path: &Path, label: &str) -> Result<Dataset> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(file);
    let headers = reader.headers().map_err(|e| Error::format(path, e))?.clone();
    let names: Vec<String> = headers.iter().map(|h| h.trim().to_string()).collect();
    let label_col = names
        .iter()
        .position(|h| h == label)
        .ok_or_else(|| Error::format(path, format!("missing label column `{label}`")))?;
    if names.len() < 2 {
        return Err(Error::format(path, "no feature columns"));
    }
    let feature_names: Vec<String> =
        names.iter().enumerate().filter(|&(i, _)| i != label_col).map(|(_, n)| n.clone()).collect();

    let mut features = Vec::new();
    let mut labels = Vec::new();
    let mut record = csv::StringRecord::new();
    let mut row = 0;
    loop {
        match reader.read_record(&mut record) {
            Ok(false) => break,
            Ok(true) => {}
            Err(e) => return Err(Error::format(path, e)),
        }
        row += 1;
        for (col, cell) in record.iter().enumerate() {
            let cell_err = |message: String| Error::Cell { path: path.into(), row, column: names[col].clone(), message };
            let cell = cell.trim();
            if cell.is_empty() {
                return Err(cell_err("missing value".into()));
            }
            let value: f64 = cell.parse().map_err(|_| cell_err(format!("non-numeric value `{cell}`")))?;
            if !value.is_finite() {
                return Err(cell_err(format!("non-finite value `{cell}`")));
            }
            if col == label_col {
                if value != 0.0 && value != 1.0 {
                    return Err(cell_err(format!("label `{cell}` is not 0 or 1")));
                }
                labels.push(value);
            } else {
                features.push(value);
            }
        }
    }
    if row == 0 {
        return Err(Error::format(path, "empty dataset"));
    }
    Ok(Dataset::new(features, labels, feature_names)?)
}

/// Writes features followed by a `label` column. Values use the shortest decimal form
/// that parses back to the same bits.
pub fn write_csv(path: &Path, data: &Dataset, label: &str) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut writer = csv::Writer::from_writer(BufWriter::new(file));
    let wrap = |e: csv::Error| Error::format(path, e);
    writer.write_record(data.feature_names().iter().map(String::as_str).chain([label])).map_err(wrap)?;
    let mut cells = Vec::with_capacity(data.n_features() + 1);
    for i in 0..data.n_rows() {
        cells.clear();
        cells.extend(data.row(i).iter().map(f64::to_string));
        cells.push(data.label(i).to_string());
        writer.write_record(&cells).map_err(wrap)?;
    }
    let mut inner = writer.into_inner().map_err(|e| Error::format(path, e))?;
    inner.flush().map_err(|e| Error::io(path, e))
}
