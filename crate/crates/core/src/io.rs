//! CSV and number formatting shared by the CLI and the experiment pipeline.

use std::path::Path;

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::transfer::QTable;

/// Significant digits written for every real number.
pub const SIGNIFICANT_DIGITS: usize = 12;

/// Format like C's `%.12g`: 12 significant digits, trailing zeros dropped,
/// scientific notation outside `[1e-5, 1e12)`.
pub fn fmt_sig(value: f64) -> String {
    fmt_sig_digits(value, SIGNIFICANT_DIGITS)
}

pub fn fmt_sig_digits(value: f64, digits: usize) -> String {
    if !value.is_finite() {
        return if value.is_nan() {
            "NaN".into()
        } else if value > 0.0 {
            "inf".into()
        } else {
            "-inf".into()
        };
    }
    if value == 0.0 {
        return "0".into();
    }
    let digits = digits.max(1);
    let sci = format!("{:.*e}", digits - 1, value);
    let (mantissa, exp) = sci.split_once('e').expect("scientific format has an exponent");
    let exp: i32 = exp.parse().expect("integer exponent");
    if exp < -5 || exp >= digits as i32 {
        let mantissa = trim_zeros(mantissa);
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{mantissa}e{sign}{:02}", exp.abs())
    } else {
        let decimals = (digits as i32 - 1 - exp).max(0) as usize;
        trim_zeros(&format!("{value:.decimals$}")).to_string()
    }
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

/// A labelled real matrix as stored on disk: header `id,<col ids>`, then one
/// row per row id.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelledMatrix {
    pub row_ids: Vec<String>,
    pub col_ids: Vec<String>,
    pub values: Array2<f64>,
}

pub fn write_matrix_csv(
    path: impl AsRef<Path>,
    corner: &str,
    row_ids: &[String],
    col_ids: &[String],
    values: &Array2<f64>,
) -> Result<()> {
    let path = path.as_ref();
    if values.dim() != (row_ids.len(), col_ids.len()) {
        return Err(Error::DimensionMismatch(format!(
            "matrix is {:?} but has {} row and {} column labels",
            values.dim(),
            row_ids.len(),
            col_ids.len()
        )));
    }
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(std::iter::once(corner).chain(col_ids.iter().map(String::as_str)))?;
    for (id, row) in row_ids.iter().zip(values.rows()) {
        let mut record = vec![id.clone()];
        record.extend(row.iter().map(|&v| fmt_sig(v)));
        w.write_record(&record)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn read_matrix_csv(path: impl AsRef<Path>) -> Result<LabelledMatrix> {
    let path = path.as_ref();
    let context = path.display().to_string();
    let mut r = csv::Reader::from_path(path)?;
    let col_ids: Vec<String> = r.headers()?.iter().skip(1).map(str::to_string).collect();
    let mut row_ids = Vec::new();
    let mut flat = Vec::new();
    for (line, record) in r.records().enumerate() {
        let record = record?;
        if record.len() != col_ids.len() + 1 {
            return Err(Error::parse(
                &context,
                format!("row {} has {} fields, expected {}", line + 1, record.len(), col_ids.len() + 1),
            ));
        }
        row_ids.push(record[0].to_string());
        for field in record.iter().skip(1) {
            let v: f64 = field
                .trim()
                .parse()
                .map_err(|_| Error::parse(&context, format!("`{field}` is not a number")))?;
            flat.push(v);
        }
    }
    let values = Array2::from_shape_vec((row_ids.len(), col_ids.len()), flat)
        .map_err(|e| Error::parse(&context, e.to_string()))?;
    Ok(LabelledMatrix {
        row_ids,
        col_ids,
        values,
    })
}

pub fn write_qtable_csv(path: impl AsRef<Path>, q: &QTable) -> Result<()> {
    write_matrix_csv(path, "state", &q.states, &q.actions, &q.values)
}

pub fn read_qtable_csv(path: impl AsRef<Path>) -> Result<QTable> {
    let m = read_matrix_csv(path)?;
    Ok(QTable {
        states: m.row_ids,
        actions: m.col_ids,
        values: m.values,
    })
}

pub fn write_json<T: serde::Serialize>(path: impl AsRef<Path>, value: &T) -> Result<()> {
    let path = path.as_ref();
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: impl AsRef<Path>) -> Result<T> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}
