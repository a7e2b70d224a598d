use std::path::{Path, PathBuf};

use super::{layers_csv, Payload, RunRecord};
use crate::error::{Error, Result};

/// Writes one CSV per record: `(ratio, mean, std, comparable)` for gamma
/// searches, `(layer, mean, std)` for stratified runs. All records must be of
/// the same kind.
pub fn emit_plot_data(records: &[PathBuf], out_dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    if records.is_empty() {
        return Err(Error::Argument("no records given".into()));
    }
    let loaded = records.iter().map(RunRecord::load).collect::<Result<Vec<_>>>()?;
    let kind = loaded[0].payload.kind();
    if let Some(other) = loaded.iter().find(|r| r.payload.kind() != kind) {
        return Err(Error::Argument(format!(
            "cannot mix {} and {} records",
            kind.as_str(),
            other.payload.kind().as_str()
        )));
    }
    let out_dir = out_dir.as_ref();
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut written = Vec::with_capacity(loaded.len());
    for (i, rec) in loaded.iter().enumerate() {
        let (suffix, body) = match &rec.payload {
            Payload::GammaSearch { result } => ("curve", result.curve_csv()),
            Payload::Stratified { layers, .. } => ("layers", layers_csv(layers)),
            other => {
                return Err(Error::Argument(format!(
                    "{} records carry no plot data",
                    other.kind().as_str()
                )))
            }
        };
        let path = out_dir.join(format!("{i:02}_{}_{suffix}.csv", rec.config.label()));
        std::fs::write(&path, body).map_err(|e| Error::io(&path, e))?;
        written.push(path);
    }
    Ok(written)
}
