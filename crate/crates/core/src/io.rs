//! CSV panels with a JSON sidecar carrying the sampling rate.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::panel::TimeSeriesPanel;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PanelMeta {
    pub sample_rate_hz: f64,
}

/// `data.csv` -> `data.meta.json`.
pub fn meta_path(csv: &Path) -> PathBuf {
    csv.with_extension("meta.json")
}

/// Reads a panel: header row of node labels, one row per sample. The rate comes from
/// `rate` or, when absent, from the sidecar file. Missing or non-numeric cells are errors.
pub fn read_panel_csv(path: &Path, rate: Option<f64>) -> Result<TimeSeriesPanel> {
    let rate = match rate {
        Some(r) => r,
        None => {
            let meta = meta_path(path);
            let text = fs::read_to_string(&meta)
                .map_err(|e| Error::InvalidConfig(format!("no sample rate given and cannot read {}: {e}", meta.display())))?;
            serde_json::from_str::<PanelMeta>(&text)?.sample_rate_hz
        }
    };
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
    let labels: Vec<String> = rdr.headers()?.iter().map(|h| h.trim().to_string()).collect();
    let n = labels.len();
    let mut values = Vec::new();
    let mut rows = 0;
    for (r, record) in rdr.records().enumerate() {
        let record = record?;
        if record.len() != n {
            return Err(Error::Parse(format!("row {} has {} fields, expected {n}", r + 1, record.len())));
        }
        for (c, field) in record.iter().enumerate() {
            let field = field.trim();
            if field.is_empty() {
                return Err(Error::Parse(format!("missing value at row {}, column {}", r + 1, labels[c])));
            }
            let v: f64 = field
                .parse()
                .map_err(|_| Error::Parse(format!("non-numeric value {field:?} at row {}, column {}", r + 1, labels[c])))?;
            values.push(v);
        }
        rows += 1;
    }
    TimeSeriesPanel::new(DMatrix::from_row_slice(rows, n, &values), labels, rate)
}

/// Writes the panel CSV and its sidecar.
pub fn write_panel_csv(panel: &TimeSeriesPanel, path: &Path) -> Result<()> {
    let mut wtr = csv::Writer::from_path(path)?;
    wtr.write_record(panel.node_labels())?;
    for row in panel.values().row_iter() {
        wtr.write_record(row.iter().map(|v| format!("{v:?}")))?;
    }
    wtr.flush()?;
    let meta = PanelMeta {
        sample_rate_hz: panel.sample_rate_hz(),
    };
    fs::write(meta_path(path), serde_json::to_string_pretty(&meta)?)?;
    Ok(())
}
