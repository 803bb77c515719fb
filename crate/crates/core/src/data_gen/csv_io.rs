use std::path::Path;

use ndnum::DenseArray;

use super::{default_names, Panel};
use crate::error::{Result, TadError};
use crate::output::fmt_f64;

/// Reads a rectangular numeric CSV, one row per time step.
pub fn load_panel_csv(path: &Path, has_header: bool) -> Result<Panel> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(has_header)
        .flexible(true)
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;
    let names = if has_header {
        Some(
            reader
                .headers()
                .map_err(|e| csv_error(path, e))?
                .iter()
                .map(|h| h.trim().to_string())
                .collect::<Vec<_>>(),
        )
    } else {
        None
    };
    let mut values = Vec::new();
    let mut width: Option<usize> = names.as_ref().map(Vec::len);
    let mut rows = 0usize;
    for (r, record) in reader.records().enumerate() {
        let record = record.map_err(|e| csv_error(path, e))?;
        let line = r + 1 + usize::from(has_header);
        match width {
            Some(w) if w != record.len() => {
                return Err(TadError::Data(format!(
                    "{}: line {line} has {} fields, expected {w}",
                    path.display(),
                    record.len()
                )))
            }
            None => width = Some(record.len()),
            _ => {}
        }
        for (c, cell) in record.iter().enumerate() {
            let v: f64 = cell.trim().parse().map_err(|_| {
                TadError::Data(format!(
                    "{}: line {line}, column {}: '{cell}' is not a number",
                    path.display(),
                    c + 1
                ))
            })?;
            if !v.is_finite() {
                return Err(TadError::Data(format!(
                    "{}: line {line}, column {}: non-finite value '{cell}'",
                    path.display(),
                    c + 1
                )));
            }
            values.push(v);
        }
        rows += 1;
    }
    let p = width.unwrap_or(0);
    if rows == 0 || p == 0 {
        return Err(TadError::Data(format!("{}: no data rows", path.display())));
    }
    let data = DenseArray::new(vec![rows, p], values)?;
    Panel::new(data, names.unwrap_or_else(|| default_names(p)))
}

/// Reads a `feature,sector` sidecar and attaches it to `panel`.
pub fn load_sector_csv(panel: Panel, path: &Path) -> Result<Panel> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    let mut map = std::collections::HashMap::new();
    for record in reader.records() {
        let record = record.map_err(|e| csv_error(path, e))?;
        if record.len() != 2 {
            return Err(TadError::Data(format!(
                "{}: sector rows need exactly two fields",
                path.display()
            )));
        }
        map.insert(record[0].trim().to_string(), record[1].trim().to_string());
    }
    let sectors = panel
        .names
        .iter()
        .map(|n| {
            map.get(n)
                .cloned()
                .ok_or_else(|| TadError::Data(format!("{}: no sector for '{n}'", path.display())))
        })
        .collect::<Result<Vec<_>>>()?;
    panel.with_sectors(sectors)
}

/// The panel as CSV with a header row; values round-trip exactly.
pub fn panel_csv_bytes(panel: &Panel) -> Result<Vec<u8>> {
    let err = |e: csv::Error| TadError::Other(format!("rendering panel CSV: {e}"));
    let mut writer = csv::Writer::from_writer(Vec::new());
    writer.write_record(&panel.names).map_err(err)?;
    for t in 0..panel.t() {
        writer
            .write_record(panel.data.row(t).iter().map(|&v| fmt_f64(v)))
            .map_err(err)?;
    }
    writer
        .into_inner()
        .map_err(|e| TadError::Other(format!("rendering panel CSV: {e}")))
}

pub fn write_panel_csv(panel: &Panel, path: &Path) -> Result<()> {
    crate::output::write_atomic(path, &panel_csv_bytes(panel)?)
}

fn csv_error(path: &Path, e: csv::Error) -> TadError {
    TadError::Data(format!("{}: {e}", path.display()))
}
