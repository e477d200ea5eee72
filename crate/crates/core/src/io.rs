//! CSV and JSON file formats.
//!
//! Datasets: `t,y,x1..xn[,omega1..omegaM]`. Predictions: `t,y_hat,omega1..omegaM`.
//! Time starts at 1. Floats are written in shortest round-trip form, so
//! reading a file back reproduces every value exactly.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::types::{Dataset, MixtureModel, WeightSequence};

fn column_index(headers: &csv::StringRecord, prefix: &str) -> Vec<usize> {
    let mut cols: Vec<(usize, usize)> = headers
        .iter()
        .enumerate()
        .filter_map(|(i, h)| {
            h.trim()
                .strip_prefix(prefix)
                .and_then(|rest| rest.parse::<usize>().ok())
                .map(|k| (k, i))
        })
        .collect();
    cols.sort();
    cols.into_iter().map(|(_, i)| i).collect()
}

fn field(rec: &csv::StringRecord, i: usize, line: usize) -> Result<f64> {
    let s = rec.get(i).ok_or_else(|| Error::Parse(format!("row {line}: missing column {}", i + 1)))?;
    s.trim()
        .parse()
        .map_err(|_| Error::Parse(format!("row {line}: '{s}' is not a number")))
}

fn require(headers: &csv::StringRecord, name: &str) -> Result<usize> {
    headers
        .iter()
        .position(|h| h.trim() == name)
        .ok_or_else(|| Error::Parse(format!("missing '{name}' column")))
}

pub fn write_dataset<W: Write>(writer: W, dataset: &Dataset) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let n_x = dataset.n_x();
    let m = dataset.true_weights().map(|w| w.n_experts()).unwrap_or(0);
    let mut header = vec!["t".to_string(), "y".to_string()];
    header.extend((1..=n_x).map(|k| format!("x{k}")));
    header.extend((1..=m).map(|k| format!("omega{k}")));
    w.write_record(&header)?;
    for t in 0..dataset.len() {
        let mut rec = vec![(t + 1).to_string(), dataset.outputs()[t].to_string()];
        rec.extend(dataset.regressor(t).iter().map(|v| v.to_string()));
        if let Some(tw) = dataset.true_weights() {
            rec.extend(tw.row(t).iter().map(|v| v.to_string()));
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_dataset<R: Read>(reader: R) -> Result<Dataset> {
    let mut r = csv::Reader::from_reader(reader);
    let headers = r.headers()?.clone();
    let yi = require(&headers, "y")?;
    let xs = column_index(&headers, "x");
    let ws = column_index(&headers, "omega");
    if xs.is_empty() {
        return Err(Error::Parse("no regressor columns x1..xn".into()));
    }
    let mut regressors = Vec::new();
    let mut outputs = Vec::new();
    let mut weights = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec?;
        let line = line + 2;
        outputs.push(field(&rec, yi, line)?);
        regressors.push(xs.iter().map(|&i| field(&rec, i, line)).collect::<Result<Vec<_>>>()?);
        if !ws.is_empty() {
            weights.push(ws.iter().map(|&i| field(&rec, i, line)).collect::<Result<Vec<_>>>()?);
        }
    }
    let d = Dataset::new(regressors, outputs)?;
    if ws.is_empty() {
        Ok(d)
    } else {
        d.with_true_weights(WeightSequence::from_rows(weights)?)
    }
}

/// Regressor columns, plus the output column when present.
pub fn read_regressors<R: Read>(reader: R) -> Result<(Vec<Vec<f64>>, Option<Vec<f64>>)> {
    let mut r = csv::Reader::from_reader(reader);
    let headers = r.headers()?.clone();
    let yi = headers.iter().position(|h| h.trim() == "y");
    let xs = column_index(&headers, "x");
    if xs.is_empty() {
        return Err(Error::Parse("no regressor columns x1..xn".into()));
    }
    let mut regressors = Vec::new();
    let mut outputs = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec?;
        let line = line + 2;
        if let Some(i) = yi {
            outputs.push(field(&rec, i, line)?);
        }
        regressors.push(xs.iter().map(|&i| field(&rec, i, line)).collect::<Result<Vec<_>>>()?);
    }
    if regressors.is_empty() {
        return Err(Error::Empty("regressor file"));
    }
    Ok((regressors, yi.map(|_| outputs)))
}

pub fn write_predictions<W: Write>(writer: W, y_hat: &[f64], weights: &WeightSequence) -> Result<()> {
    if y_hat.len() != weights.len() {
        return Err(Error::LengthMismatch {
            what: "predictions vs weights",
            expected: y_hat.len(),
            got: weights.len(),
        });
    }
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["t".to_string(), "y_hat".to_string()];
    header.extend((1..=weights.n_experts()).map(|k| format!("omega{k}")));
    w.write_record(&header)?;
    for (t, (y, row)) in y_hat.iter().zip(weights.rows()).enumerate() {
        let mut rec = vec![(t + 1).to_string(), y.to_string()];
        rec.extend(row.iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_predictions<R: Read>(reader: R) -> Result<(Vec<f64>, WeightSequence)> {
    let mut r = csv::Reader::from_reader(reader);
    let headers = r.headers()?.clone();
    let yi = require(&headers, "y_hat")?;
    let ws = column_index(&headers, "omega");
    if ws.is_empty() {
        return Err(Error::Parse("no weight columns omega1..omegaM".into()));
    }
    let mut y = Vec::new();
    let mut rows = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec?;
        y.push(field(&rec, yi, line + 2)?);
        rows.push(ws.iter().map(|&i| field(&rec, i, line + 2)).collect::<Result<Vec<_>>>()?);
    }
    Ok((y, WeightSequence::from_rows(rows)?))
}

pub fn save_model(path: &Path, model: &MixtureModel) -> Result<()> {
    let s = serde_json::to_string_pretty(model)?;
    std::fs::write(path, s)?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<MixtureModel> {
    let s = std::fs::read_to_string(path)?;
    Ok(serde_json::from_str(&s)?)
}

pub fn save_dataset(path: &Path, dataset: &Dataset) -> Result<()> {
    write_dataset(std::fs::File::create(path)?, dataset)
}

pub fn load_dataset(path: &Path) -> Result<Dataset> {
    read_dataset(std::fs::File::open(path)?)
}
