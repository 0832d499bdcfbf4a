//! Data files, model files and tabular reports.
//!
//! Data are comma-separated UTF-8 with a header naming `x1..xd`, `y` and
//! optionally `z1..zl`. Other columns are ignored. Numbers use `.` as the
//! decimal mark and must be finite.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::estimators::{HyperplaneModel, MarginalTable, Mpss};
use crate::grid::HullTester;
use crate::linalg::Matrix;
use crate::partially_linear::ContextualFit;

/// Bumped whenever the model file layout changes.
pub const MODEL_FORMAT_VERSION: u32 = 1;

/// Lowercase hex SHA-256 of `bytes`.
pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Shortest decimal that parses back to the same value.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}

#[derive(Debug, Clone, PartialEq)]
pub struct DataFile {
    pub x: Matrix,
    pub y: Vec<f64>,
    /// Contextual columns, `None` when the header has no `z` column.
    pub z: Option<Matrix>,
    pub sha256: String,
}

impl DataFile {
    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn dim(&self) -> usize {
        self.x.ncols()
    }

    /// Contextual columns, empty when absent.
    pub fn z_or_empty(&self) -> Matrix {
        self.z.clone().unwrap_or_else(|| Matrix::zeros(self.n(), 0))
    }
}

/// Column positions of a numbered family `prefix1..prefixK`.
fn numbered(header: &csv::StringRecord, prefix: &str) -> Result<Vec<usize>> {
    let mut found: Vec<(usize, usize)> = Vec::new();
    for (pos, name) in header.iter().enumerate() {
        let name = name.trim();
        if let Some(rest) = name.strip_prefix(prefix) {
            if let Ok(k) = rest.parse::<usize>() {
                if k == 0 || rest.starts_with('0') {
                    return Err(Error::Data(format!("column '{name}': numbering starts at {prefix}1")));
                }
                if found.iter().any(|&(j, _)| j == k) {
                    return Err(Error::Data(format!("column '{name}' appears twice")));
                }
                found.push((k, pos));
            }
        }
    }
    found.sort_unstable();
    for (want, &(k, _)) in found.iter().enumerate() {
        if k != want + 1 {
            return Err(Error::Data(format!("column {prefix}{} is missing", want + 1)));
        }
    }
    Ok(found.into_iter().map(|(_, pos)| pos).collect())
}

fn parse_cell(raw: &str, column: &str, line: u64) -> Result<f64> {
    let s = raw.trim();
    if s.is_empty() {
        return Err(Error::Data(format!("line {line}, column {column}: missing value")));
    }
    if s.contains(',') {
        return Err(Error::Data(format!("line {line}, column {column}: '{s}' uses ',' as decimal mark; use '.'")));
    }
    // Rust also accepts "inf", "nan" and "infinity"; none is data.
    let plain = s.bytes().all(|c| c.is_ascii_digit() || matches!(c, b'.' | b'e' | b'E' | b'+' | b'-'));
    let v: f64 = if plain { s.parse().ok() } else { None }
        .ok_or_else(|| Error::Data(format!("line {line}, column {column}: '{s}' is not a number")))?;
    if !v.is_finite() {
        return Err(Error::Data(format!("line {line}, column {column}: '{s}' is not finite")));
    }
    Ok(v)
}

fn reader(bytes: &[u8]) -> csv::Reader<&[u8]> {
    csv::ReaderBuilder::new().has_headers(true).comment(Some(b'#')).from_reader(bytes)
}

fn csv_error(e: csv::Error) -> Error {
    Error::Data(e.to_string())
}

fn read_columns(bytes: &[u8], cols: &[(String, usize)]) -> Result<Vec<Vec<f64>>> {
    let mut rdr = reader(bytes);
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(csv_error)?;
        let line = rec.position().map_or(0, |p| p.line());
        let mut row = Vec::with_capacity(cols.len());
        for (name, pos) in cols {
            let cell = rec.get(*pos).ok_or_else(|| Error::Data(format!("line {line}: column {name} missing")))?;
            row.push(parse_cell(cell, name, line)?);
        }
        rows.push(row);
    }
    Ok(rows)
}

fn to_matrix(rows: &[Vec<f64>], range: std::ops::Range<usize>) -> Matrix {
    let mut m = Matrix::zeros(rows.len(), range.len());
    for (j, r) in rows.iter().enumerate() {
        m.row_mut(j).copy_from_slice(&r[range.clone()]);
    }
    m
}

/// Parses a data file held in memory.
pub fn parse_data(bytes: &[u8]) -> Result<DataFile> {
    if std::str::from_utf8(bytes).is_err() {
        return Err(Error::Data("file is not valid UTF-8".into()));
    }
    let header = reader(bytes).headers().map_err(csv_error)?.clone();
    if header.len() == 1 && header[0].contains(';') {
        return Err(Error::Data(
            "header is separated by ';'; expected ',' between fields and '.' as decimal mark".into(),
        ));
    }
    let xs = numbered(&header, "x")?;
    let zs = numbered(&header, "z")?;
    let y = header.iter().position(|h| h.trim() == "y");
    if xs.is_empty() {
        return Err(Error::Data("header has no x1 column".into()));
    }
    let y = y.ok_or_else(|| Error::Data("header has no y column".into()))?;
    let d = xs.len();
    let mut cols: Vec<(String, usize)> = xs.iter().enumerate().map(|(k, &p)| (format!("x{}", k + 1), p)).collect();
    cols.push(("y".into(), y));
    cols.extend(zs.iter().enumerate().map(|(k, &p)| (format!("z{}", k + 1), p)));
    let rows = read_columns(bytes, &cols)?;
    let n = rows.len();
    if n < d + 2 {
        return Err(Error::Data(format!("{n} rows; at least {} are needed for {d} inputs", d + 2)));
    }
    let x = to_matrix(&rows, 0..d);
    for (k, (lo, hi)) in x.column_ranges().into_iter().enumerate() {
        if lo == hi {
            return Err(Error::Data(format!("column x{} is constant", k + 1)));
        }
    }
    let yv = rows.iter().map(|r| r[d]).collect();
    let z = (!zs.is_empty()).then(|| to_matrix(&rows, d + 1..d + 1 + zs.len()));
    Ok(DataFile { x, y: yv, z, sha256: sha256_hex(bytes) })
}

pub fn read_data(path: &Path) -> Result<DataFile> {
    let bytes = std::fs::read(path)?;
    parse_data(&bytes)
}

/// Query points with columns `x1..xd`; other columns are ignored. An empty
/// input yields zero rows.
pub fn parse_points(bytes: &[u8], d: usize) -> Result<Matrix> {
    if bytes.iter().all(|b| b.is_ascii_whitespace()) {
        return Ok(Matrix::zeros(0, d));
    }
    if std::str::from_utf8(bytes).is_err() {
        return Err(Error::Data("file is not valid UTF-8".into()));
    }
    let header = reader(bytes).headers().map_err(csv_error)?.clone();
    let xs = numbered(&header, "x")?;
    if xs.len() != d {
        return Err(Error::Data(format!("points have {} input columns, model has {d}", xs.len())));
    }
    let cols: Vec<(String, usize)> = xs.iter().enumerate().map(|(k, &p)| (format!("x{}", k + 1), p)).collect();
    let rows = read_columns(bytes, &cols)?;
    Ok(to_matrix(&rows, 0..d))
}

/// Goodness of fit `1 − SSE/SST` at the observations, against two bases.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitStatistics {
    pub n: usize,
    /// Against the observed response, with the contextual effect added back
    /// to the frontier prediction.
    pub r_squared_raw: f64,
    /// Against the response net of the estimated contextual effect.
    pub r_squared_adjusted: f64,
    pub sse_raw: f64,
    pub sse_adjusted: f64,
}

fn r_squared(y: &[f64], fitted: &[f64]) -> (f64, f64) {
    let n = y.len() as f64;
    let mean = y.iter().sum::<f64>() / n;
    let sse: f64 = y.iter().zip(fitted).map(|(a, b)| (a - b) * (a - b)).sum();
    let sst: f64 = y.iter().map(|a| (a - mean) * (a - mean)).sum();
    let r2 = if sst > 0.0 {
        1.0 - sse / sst
    } else if sse == 0.0 {
        1.0
    } else {
        f64::NEG_INFINITY
    };
    (r2, sse)
}

pub fn fit_statistics(model: &HyperplaneModel, data: &DataFile, ctx: Option<&ContextualFit>) -> FitStatistics {
    let g = model.predict_many(&data.x);
    let (adjusted, fitted_raw): (Vec<f64>, Vec<f64>) = match ctx {
        Some(c) => {
            (c.adjusted_y.clone(), g.iter().zip(&data.y).zip(&c.adjusted_y).map(|((g, y), a)| g + (y - a)).collect())
        }
        None => (data.y.clone(), g.clone()),
    };
    let (r_raw, sse_raw) = r_squared(&data.y, &fitted_raw);
    let (r_adj, sse_adj) = r_squared(&adjusted, &g);
    FitStatistics { n: data.n(), r_squared_raw: r_raw, r_squared_adjusted: r_adj, sse_raw, sse_adjusted: sse_adj }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub tool_version: String,
    pub input_sha256: String,
    pub seed: u64,
}

impl Provenance {
    pub fn new(input_sha256: &str, seed: u64) -> Self {
        Self { tool_version: crate::TOOL_VERSION.to_string(), input_sha256: input_sha256.to_string(), seed }
    }
}

/// Everything needed to predict from a fit and to audit how it was made.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub format_version: u32,
    pub provenance: Provenance,
    /// `sckls` or `cnls`.
    pub estimator: String,
    pub model: HyperplaneModel,
    pub contextual: Option<ContextualFit>,
    pub fit: FitStatistics,
}

impl ModelFile {
    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let m: ModelFile = serde_json::from_str(s).map_err(|e| Error::Data(format!("model file: {e}")))?;
        if m.format_version != MODEL_FORMAT_VERSION {
            return Err(Error::Data(format!(
                "model file format {} is not supported (expected {MODEL_FORMAT_VERSION})",
                m.format_version
            )));
        }
        if m.model.a.len() != m.model.grid.len() || m.model.b.nrows() != m.model.a.len() {
            return Err(Error::Data("model file: intercepts, gradients and grid disagree in length".into()));
        }
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

fn x_header(d: usize) -> Vec<String> {
    (1..=d).map(|k| format!("x{k}")).collect()
}

/// One row per evaluation point: coordinates, intercept and gradient.
pub fn write_planes_csv<W: Write>(model: &HyperplaneModel, out: W) -> Result<()> {
    let d = model.dim();
    let mut w = csv::Writer::from_writer(out);
    let mut header = x_header(d);
    header.push("a".into());
    header.extend((1..=d).map(|k| format!("b{k}")));
    w.write_record(&header)?;
    for i in 0..model.len() {
        let mut rec: Vec<String> = model.grid.points().row(i).iter().map(|v| fmt_f64(*v)).collect();
        rec.push(fmt_f64(model.a[i]));
        rec.extend(model.b.row(i).iter().map(|v| fmt_f64(*v)));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Predictions with 17 significant digits and a flag for points outside the
/// convex hull of the evaluation grid.
pub fn write_predictions_csv<W: Write>(model: &HyperplaneModel, points: &Matrix, out: W) -> Result<()> {
    let d = model.dim();
    if points.ncols() != d {
        return Err(Error::Dimension(format!("points have {} coordinates, model has {d}", points.ncols())));
    }
    let outside = extrapolation_flags(model, points);
    let mut w = csv::Writer::from_writer(out);
    let mut header = x_header(d);
    header.extend(["prediction".to_string(), "extrapolated".to_string()]);
    w.write_record(&header)?;
    for (j, r) in points.rows_iter().enumerate() {
        let mut rec: Vec<String> = r.iter().map(|v| fmt_f64(*v)).collect();
        rec.push(format!("{:.16e}", model.predict(r)));
        rec.push(if outside[j] { "1".into() } else { "0".into() });
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// True for points outside the grid's convex hull. A flat grid falls back to
/// its bounding box.
pub fn extrapolation_flags(model: &HyperplaneModel, points: &Matrix) -> Vec<bool> {
    let grid = model.grid.points();
    match HullTester::new(grid) {
        Ok(h) => points.rows_iter().map(|r| !h.contains(r)).collect(),
        Err(_) => {
            let ranges = grid.column_ranges();
            points.rows_iter().map(|r| r.iter().zip(&ranges).any(|(v, (lo, hi))| v < lo || v > hi)).collect()
        }
    }
}

/// Long format: `quantity, percentile, value`.
pub fn write_marginals_csv<W: Write>(table: &MarginalTable, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["quantity", "percentile", "value"])?;
    for c in &table.columns {
        for (q, v) in table.percentiles.iter().zip(&c.values) {
            w.write_record([c.name.clone(), fmt_f64(*q), fmt_f64(*v)])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_mpss_csv<W: Write>(rows: &[(Vec<f64>, Mpss)], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let d = rows.first().map_or(0, |r| r.0.len());
    let mut header: Vec<String> = (1..=d).map(|k| format!("direction{k}")).collect();
    header.push("t".into());
    header.extend((1..=d).map(|k| format!("x{k}")));
    header.extend(["output".to_string(), "average_product".to_string()]);
    w.write_record(&header)?;
    for (dir, m) in rows {
        let mut rec: Vec<String> = dir.iter().map(|v| fmt_f64(*v)).collect();
        rec.push(fmt_f64(m.t));
        rec.extend(m.point.iter().map(|v| fmt_f64(*v)));
        rec.push(fmt_f64(m.output));
        rec.push(fmt_f64(m.average_product));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Tidy plot data: observations, fitted values on the grid, and a fine
/// prediction path per input (other inputs at their medians).
pub fn write_plot_data_csv<W: Write>(
    model: &HyperplaneModel,
    data: &DataFile,
    resolution: usize,
    out: W,
) -> Result<()> {
    let d = model.dim();
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["series".to_string()];
    header.extend(x_header(d));
    header.push("value".into());
    w.write_record(&header)?;
    let mut emit = |series: &str, x: &[f64], v: f64| -> Result<()> {
        let mut rec = vec![series.to_string()];
        rec.extend(x.iter().map(|u| fmt_f64(*u)));
        rec.push(fmt_f64(v));
        w.write_record(&rec)?;
        Ok(())
    };
    for (r, yj) in data.x.rows_iter().zip(&data.y) {
        emit("observed", r, *yj)?;
    }
    for (r, a) in model.grid.points().rows_iter().zip(&model.a) {
        emit("grid", r, *a)?;
    }
    let medians: Vec<f64> = (0..d).map(|k| crate::estimators::percentile(&data.x.column_values(k), 50.0)).collect();
    let res = resolution.max(2);
    for (k, (lo, hi)) in data.x.column_ranges().into_iter().enumerate() {
        let mut x = medians.clone();
        for s in 0..res {
            x[k] = lo + (hi - lo) * s as f64 / (res - 1) as f64;
            emit(&format!("path-x{}", k + 1), &x, model.predict(&x))?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Pretty JSON with a trailing newline.
pub fn to_json_pretty<T: Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}
