use std::collections::HashMap;
use std::io::Read;
use std::path::Path;

use super::LabeledDataset;
use crate::error::{Error, Result};

/// Reads a CSV with a header row. Every column except `label_column` must be
/// numeric. Classes are numbered by first appearance of each label value.
pub fn load_csv(path: impl AsRef<Path>, label_column: &str) -> Result<LabeledDataset> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_csv(file, label_column)
}

pub(crate) fn read_csv(reader: impl Read, label_column: &str) -> Result<LabeledDataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    if headers.is_empty() || headers.iter().all(str::is_empty) {
        return Err(Error::Format("CSV has no header row".into()));
    }
    let label_idx = headers
        .iter()
        .position(|h| h == label_column)
        .ok_or_else(|| Error::Format(format!("label column `{label_column}` not in header")))?;
    let feature_cols: Vec<usize> = (0..headers.len()).filter(|&i| i != label_idx).collect();
    if feature_cols.is_empty() {
        return Err(Error::Format("CSV has no feature columns".into()));
    }

    let mut classes: HashMap<String, usize> = HashMap::new();
    let mut labels = Vec::new();
    let mut features = Vec::new();
    for (i, record) in rdr.records().enumerate() {
        // header is row 1
        let row = i + 2;
        let record = record?;
        if record.len() != headers.len() {
            return Err(Error::Parse {
                row,
                column: headers
                    .get(record.len().min(headers.len() - 1))
                    .unwrap_or_default()
                    .to_string(),
                message: format!("expected {} cells, found {}", headers.len(), record.len()),
            });
        }
        for &c in &feature_cols {
            let cell = &record[c];
            let value: f64 = cell.parse().map_err(|_| Error::Parse {
                row,
                column: headers[c].to_string(),
                message: format!("`{cell}` is not a number"),
            })?;
            features.push(value);
        }
        let label = &record[label_idx];
        if label.is_empty() {
            return Err(Error::Parse {
                row,
                column: label_column.to_string(),
                message: "empty label".into(),
            });
        }
        let next = classes.len();
        labels.push(*classes.entry(label.to_string()).or_insert(next));
    }
    if labels.is_empty() {
        return Err(Error::Format("CSV has no data rows".into()));
    }
    LabeledDataset::new(
        classes.len(),
        feature_cols.len(),
        (0..labels.len()).collect(),
        labels,
        features,
    )
}

/// Writes `x0..x{d-1}` feature columns followed by a `label` column holding class indices.
pub fn write_csv(dataset: &LabeledDataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut wtr = csv::Writer::from_path(path)?;
    let mut header: Vec<String> = (0..dataset.dim()).map(|j| format!("x{j}")).collect();
    header.push("label".into());
    wtr.write_record(&header)?;
    for pos in 0..dataset.len() {
        let mut rec: Vec<String> = dataset.row(pos).iter().map(|v| v.to_string()).collect();
        rec.push(dataset.label(pos).to_string());
        wtr.write_record(&rec)?;
    }
    wtr.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}
