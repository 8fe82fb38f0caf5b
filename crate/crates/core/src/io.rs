//! On-disk formats: CSV tables and run manifests.
//!
//! Floats are written with 17 significant digits so they round-trip exactly;
//! undefined values are written as empty fields.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use thiserror::Error;

use crate::density::TailHistogram;
use crate::experiments::{BoundaryRow, BoundarySlope, CellSummary, GridRow, RmseRow, VarianceDemoResult};
use crate::noise::GENERATOR_ID;
use crate::simulate::SweepResult;

pub const ESTIMATES_HEADER: [&str; 11] =
    ["a", "lambda_true", "method", "boundary_mode", "n", "b", "q", "realization", "lambda_hat", "abs_error", "status"];
pub const DENSITY_HEADER: [&str; 4] = ["bin_index", "left_edge", "midpoint", "height"];
pub const SERIES_HEADER: [&str; 2] = ["t", "value"];
pub const SWEEP_HEADER: [&str; 6] = ["a", "initial_value", "final_value", "variance", "tipped", "tip_index"];
pub const SUMMARY_HEADER: [&str; 13] = [
    "a",
    "method",
    "boundary_mode",
    "count",
    "failures",
    "mean",
    "q1",
    "median",
    "q3",
    "whisker_low",
    "whisker_high",
    "n_outliers",
    "mean_abs_error",
];
pub const RMSE_HEADER: [&str; 6] = ["b", "q", "method", "rmse", "used", "skipped"];
pub const BOUNDARY_HEADER: [&str; 6] = ["lambda_true", "method", "family", "realization", "offset", "gap"];
pub const BOUNDARY_SLOPE_HEADER: [&str; 4] = ["lambda_true", "method", "mean_slope", "n_realizations"];
pub const VARIANCE_HEADER: [&str; 7] = ["a", "realization", "variance", "tipped", "tip_index", "method", "lambda_hat"];
pub const VARIANCE_SUMMARY_HEADER: [&str; 4] = ["a", "mean_variance", "method", "mean_lambda_hat"];
pub const TIPPING_HEADER: [&str; 2] = ["realization", "tip_parameter"];
pub const ULAM_ESTIMATES_HEADER: [&str; 4] = ["a", "lambda_true", "method", "lambda_hat"];

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    File { path: String, source: std::io::Error },
    #[error("{path}: {source}")]
    Csv { path: String, source: csv::Error },
    #[error("{path}: row {row}: cannot parse '{field}' as a number")]
    Parse { path: String, row: usize, field: String },
    #[error("{path}: no values")]
    Empty { path: String },
}

impl IoError {
    pub fn code(&self) -> &'static str {
        match self {
            IoError::File { .. } => "FileError",
            IoError::Csv { .. } => "CsvError",
            IoError::Parse { .. } => "ParseError",
            IoError::Empty { .. } => "EmptyInput",
        }
    }
}

/// `{:.16e}`, or an empty field for non-finite values.
pub fn num(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else {
        String::new()
    }
}

pub fn opt_num(v: Option<f64>) -> String {
    v.map_or_else(String::new, num)
}

fn opt_usize(v: Option<usize>) -> String {
    v.map_or_else(String::new, |v| v.to_string())
}

/// Writes a header and rows to `path`.
pub fn write_csv<I>(path: &Path, header: &[&str], rows: I) -> Result<(), IoError>
where
    I: IntoIterator<Item = Vec<String>>,
{
    let p = path.display().to_string();
    let file = File::create(path).map_err(|source| IoError::File { path: p.clone(), source })?;
    let mut w = csv::Writer::from_writer(BufWriter::new(file));
    let csv_err = |source| IoError::Csv { path: p.clone(), source };
    w.write_record(header).map_err(csv_err)?;
    for row in rows {
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush().map_err(|source| IoError::File { path: p.clone(), source })
}

pub fn estimate_record(r: &GridRow) -> Vec<String> {
    vec![
        num(r.a),
        num(r.lambda_true),
        r.method.name().to_string(),
        r.boundary.name().to_string(),
        r.n.to_string(),
        r.b.to_string(),
        num(r.q),
        r.realization.to_string(),
        opt_num(r.lambda_hat),
        opt_num(r.abs_error),
        r.status.clone(),
    ]
}

pub fn write_estimates(path: &Path, rows: &[GridRow]) -> Result<(), IoError> {
    write_csv(path, &ESTIMATES_HEADER, rows.iter().map(estimate_record))
}

pub fn write_summary(path: &Path, rows: &[CellSummary]) -> Result<(), IoError> {
    write_csv(
        path,
        &SUMMARY_HEADER,
        rows.iter().map(|s| {
            vec![
                num(s.a),
                s.method.name().to_string(),
                s.boundary.name().to_string(),
                s.count.to_string(),
                s.failures.to_string(),
                num(s.mean),
                num(s.q1),
                num(s.median),
                num(s.q3),
                num(s.whisker_low),
                num(s.whisker_high),
                s.n_outliers.to_string(),
                num(s.mean_abs_error),
            ]
        }),
    )
}

/// Density table; `left_edge` and `midpoint` are absolute positions.
pub fn write_density(path: &Path, hist: &TailHistogram) -> Result<(), IoError> {
    write_csv(
        path,
        &DENSITY_HEADER,
        (0..hist.bins()).map(|i| vec![i.to_string(), num(hist.edges[i]), num(hist.midpoint(i)), num(hist.heights[i])]),
    )
}

pub fn write_series(path: &Path, values: &[f64]) -> Result<(), IoError> {
    write_csv(path, &SERIES_HEADER, values.iter().enumerate().map(|(t, v)| vec![t.to_string(), num(*v)]))
}

pub fn write_sweep(path: &Path, sweep: &SweepResult) -> Result<(), IoError> {
    write_csv(
        path,
        &SWEEP_HEADER,
        sweep.records.iter().map(|r| {
            vec![
                num(r.a),
                num(r.initial_value),
                num(r.final_value),
                num(r.variance),
                r.tipped().to_string(),
                opt_usize(r.tip_index),
            ]
        }),
    )
}

pub fn write_rmse(path: &Path, rows: &[RmseRow]) -> Result<(), IoError> {
    write_csv(
        path,
        &RMSE_HEADER,
        rows.iter().map(|r| {
            vec![r.b.to_string(), num(r.q), r.method.name().to_string(), num(r.rmse), r.used.to_string(), r.skipped.to_string()]
        }),
    )
}

pub fn write_boundary(path: &Path, family: &str, rows: &[BoundaryRow]) -> Result<(), IoError> {
    write_csv(
        path,
        &BOUNDARY_HEADER,
        rows.iter().map(|r| {
            vec![
                num(r.lambda_true),
                r.method.name().to_string(),
                family.to_string(),
                r.realization.to_string(),
                num(r.offset),
                num(r.gap),
            ]
        }),
    )
}

pub fn write_boundary_slopes(path: &Path, rows: &[BoundarySlope]) -> Result<(), IoError> {
    write_csv(
        path,
        &BOUNDARY_SLOPE_HEADER,
        rows.iter().map(|s| {
            vec![num(s.lambda_true), s.method.name().to_string(), num(s.mean_slope), s.n_realizations.to_string()]
        }),
    )
}

/// Writes `variance.csv`, `variance_summary.csv`, `tipping.csv` and, when
/// present, `ulam_estimates.csv` into `dir`.
pub fn write_variance_demo(dir: &Path, res: &VarianceDemoResult, realizations: usize) -> Result<(), IoError> {
    write_csv(
        &dir.join("variance.csv"),
        &VARIANCE_HEADER,
        res.rows.iter().flat_map(|r| {
            res.methods.iter().zip(&r.lambda_hat).map(move |(m, l)| {
                vec![
                    num(r.a),
                    r.realization.to_string(),
                    num(r.variance),
                    r.tipped.to_string(),
                    opt_usize(r.tip_index),
                    m.name().to_string(),
                    opt_num(*l),
                ]
            })
        }),
    )?;
    let cells = res.rows.len() / realizations.max(1);
    write_csv(
        &dir.join("variance_summary.csv"),
        &VARIANCE_SUMMARY_HEADER,
        (0..cells).flat_map(|i| {
            let a = res.rows[i * realizations].a;
            let v = res.mean_variance(i, realizations);
            res.methods
                .iter()
                .enumerate()
                .map(move |(k, m)| vec![num(a), num(v), m.name().to_string(), num(res.mean_lambda(i, realizations, k))])
        }),
    )?;
    write_csv(
        &dir.join("tipping.csv"),
        &TIPPING_HEADER,
        res.tip_parameters.iter().enumerate().map(|(r, a)| vec![r.to_string(), opt_num(*a)]),
    )?;
    if !res.ulam.is_empty() {
        write_csv(
            &dir.join("ulam_estimates.csv"),
            &ULAM_ESTIMATES_HEADER,
            res.ulam.iter().flat_map(|u| {
                res.methods
                    .iter()
                    .zip(&u.lambda_hat)
                    .map(move |(m, l)| vec![num(u.a), num(u.lambda_true), m.name().to_string(), opt_num(*l)])
            }),
        )?;
    }
    Ok(())
}

/// Manifest with version, generator identity, seed and the sorted config.
pub fn write_manifest(path: &Path, seed: u64, config: &BTreeMap<String, String>) -> Result<(), IoError> {
    let p = path.display().to_string();
    let mut out = String::new();
    out.push_str(&format!("version = {}\n", env!("CARGO_PKG_VERSION")));
    out.push_str(&format!("generator = {GENERATOR_ID}\n"));
    out.push_str(&format!("seed = {seed}\n"));
    for (k, v) in config {
        out.push_str(&format!("config.{k} = {v}\n"));
    }
    let mut f = File::create(path).map_err(|source| IoError::File { path: p.clone(), source })?;
    f.write_all(out.as_bytes()).map_err(|source| IoError::File { path: p, source })
}

/// Reads a series from a CSV file: the `value` column if there is a header
/// naming it, otherwise the last column. A non-numeric first row is treated
/// as a header.
pub fn read_series(path: &Path) -> Result<Vec<f64>, IoError> {
    let p = path.display().to_string();
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .flexible(true)
        .from_path(path)
        .map_err(|source| IoError::Csv { path: p.clone(), source })?;
    let mut values = Vec::new();
    let mut column: Option<usize> = None;
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|source| IoError::Csv { path: p.clone(), source })?;
        if rec.is_empty() || (rec.len() == 1 && rec[0].is_empty()) {
            continue;
        }
        let col = column.unwrap_or(rec.len() - 1);
        let field = rec.get(col).unwrap_or("");
        match field.parse::<f64>() {
            Ok(v) => {
                column.get_or_insert(col);
                values.push(v);
            }
            Err(_) if row == 0 => {
                column = Some(rec.iter().position(|h| h == "value").unwrap_or(rec.len() - 1));
            }
            Err(_) => return Err(IoError::Parse { path: p, row, field: field.to_string() }),
        }
    }
    if values.is_empty() {
        return Err(IoError::Empty { path: p });
    }
    Ok(values)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn numbers_round_trip() {
        for v in [0.1, 1.0 / 3.0, -2.4017756188914126, 1e-300, 6.02e23] {
            assert_eq!(num(v).parse::<f64>().unwrap().to_bits(), v.to_bits());
        }
        assert_eq!(num(f64::NAN), "");
        assert_eq!(num(0.5), "5.0000000000000000e-1");
    }

    #[test]
    fn series_round_trip_with_and_without_header() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.csv");
        let vals = vec![0.25, -0.125, 1.0 / 3.0];
        write_series(&path, &vals).unwrap();
        assert_eq!(read_series(&path).unwrap(), vals);
        std::fs::write(&path, "0.5\n0.25\n").unwrap();
        assert_eq!(read_series(&path).unwrap(), vec![0.5, 0.25]);
        std::fs::write(&path, "value,t\n0.5,0\n0.25,1\n").unwrap();
        assert_eq!(read_series(&path).unwrap(), vec![0.5, 0.25]);
        std::fs::write(&path, "t,value\n0,x\n").unwrap();
        assert!(matches!(read_series(&path), Err(IoError::Parse { .. })));
    }
}
