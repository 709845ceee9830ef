//! Review-embedding tables: CSV with header `label,e0,...,e{m-1}` and a
//! binary sentiment label in `{0, 1}`.

use std::path::Path;

use super::Dataset;
use crate::error::{Error, Result};
use crate::numerics::Matrix;

pub fn load_embeddings(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;
    let header = reader.headers().map_err(|e| csv_error(path, e))?.clone();
    if header.get(0) != Some("label") {
        return Err(Error::format(path, "line 1", "first column must be `label`"));
    }
    for (j, name) in header.iter().skip(1).enumerate() {
        if name != format!("e{j}") {
            return Err(Error::format(
                path,
                "line 1",
                format!("column {} is `{name}`, expected `e{j}`", j + 1),
            ));
        }
    }
    let m = header.len() - 1;
    let mut values = Vec::new();
    let mut classes = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| csv_error(path, e))?;
        let line = record.position().map_or(0, |p| p.line());
        let label = record[0].trim();
        match label {
            "0" => classes.push(0),
            "1" => classes.push(1),
            other => {
                return Err(Error::format(
                    path,
                    format!("line {line}"),
                    format!("label `{other}` is not 0 or 1"),
                ))
            }
        }
        for field in record.iter().skip(1) {
            let v: f64 = field.trim().parse().map_err(|_| {
                Error::format(path, format!("line {line}"), format!("non-numeric value `{field}`"))
            })?;
            if !v.is_finite() {
                return Err(Error::format(path, format!("line {line}"), "non-finite value"));
            }
            values.push(v);
        }
    }
    let inputs = Matrix::from_vec(classes.len(), m, values)?;
    Dataset::from_class_indices(inputs, &classes, vec!["negative".into(), "positive".into()])
}

/// Writes a two-class dataset in the embedding CSV format.
pub fn save_embeddings(dataset: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if dataset.num_classes() != 2 {
        return Err(Error::Argument("embedding files hold two-class datasets".into()));
    }
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    let mut header = vec!["label".to_string()];
    header.extend((0..dataset.input_dim()).map(|j| format!("e{j}")));
    w.write_record(&header).map_err(|e| csv_error(path, e))?;
    for i in 0..dataset.len() {
        let mut row = vec![dataset.class_of(i).to_string()];
        row.extend(dataset.inputs().row(i).iter().map(|v| v.to_string()));
        w.write_record(&row).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line());
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        csv::ErrorKind::UnequalLengths {
            expected_len, len, ..
        } => Error::format(
            path,
            format!("line {line}"),
            format!("ragged row: {len} fields, expected {expected_len}"),
        ),
        other => Error::format(path, format!("line {line}"), format!("{other:?}")),
    }
}
