//! Artifact readers and writers.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use ergobound::bounds::BoundCurve;
use ergobound::monotone::DiscreteKernel;

use crate::error::{CliError, Result};
use crate::render::Series;

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    File::create(path).map(BufWriter::new).map_err(|e| CliError::io(path, e))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    let mut w = create(path)?;
    w.write_all(text.as_bytes()).and_then(|_| w.flush()).map_err(|e| CliError::io(path, e))
}

pub fn write_json(path: &Path, value: &serde_json::Value) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::csv(path, e))?;
    text.push('\n');
    write_text(path, &text)
}

/// `n,bound_tv,bound_f,bound_g`.
pub fn write_bound_csv(path: &Path, curve: &BoundCurve) -> Result<()> {
    let mut w = create(path)?;
    curve.write_csv(&mut w).and_then(|_| w.flush()).map_err(|e| CliError::io(path, e))
}

fn write_rows(path: &Path, header: &[&str], rows: impl Iterator<Item = Vec<String>>) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    w.write_record(header).map_err(|e| CliError::csv(path, e))?;
    for row in rows {
        w.write_record(&row).map_err(|e| CliError::csv(path, e))?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

fn num(v: f64) -> String {
    format!("{v:.16e}")
}

/// `n,exact_tv` for `n = 1..`.
pub fn write_exact_csv(path: &Path, exact: &[f64]) -> Result<()> {
    write_rows(
        path,
        &["n", "exact_tv"],
        exact.iter().enumerate().map(|(i, v)| vec![(i + 1).to_string(), num(*v)]),
    )
}

/// `n,bound_tv,exact_tv,margin` over the common range.
pub fn write_dominance_csv(path: &Path, bound: &[f64], exact: &[f64]) -> Result<()> {
    write_rows(
        path,
        &["n", "bound_tv", "exact_tv", "margin"],
        bound
            .iter()
            .zip(exact)
            .enumerate()
            .map(|(i, (b, e))| vec![(i + 1).to_string(), num(*b), num(*e), num(b - e)]),
    )
}

/// `n,r,R` with `R(n) = r(0) + … + r(n-1)`.
pub fn write_rate_csv<W: Write>(w: W, rows: &[(usize, f64, f64)]) -> std::result::Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(w);
    w.write_record(["n", "r", "R"])?;
    for (n, r, cum) in rows {
        w.write_record([n.to_string(), num(*r), num(*cum)])?;
    }
    w.flush()?;
    Ok(())
}

/// Reads `n` and one value column. Without `column`, prefers `bound_tv`,
/// then `exact_tv`, then the second column.
pub fn read_series(path: &Path, column: Option<&str>, label: String) -> Result<Series> {
    let mut r = csv::Reader::from_path(path).map_err(|e| CliError::csv(path, e))?;
    let headers = r.headers().map_err(|e| CliError::csv(path, e))?.clone();
    let find = |name: &str| headers.iter().position(|h| h == name);
    let n_col = find("n").ok_or_else(|| CliError::csv(path, "no `n` column"))?;
    let v_col = match column {
        Some(c) => find(c).ok_or_else(|| CliError::csv(path, format!("no `{c}` column")))?,
        None => find("bound_tv")
            .or_else(|| find("exact_tv"))
            .or_else(|| (headers.len() > 1).then_some(if n_col == 0 { 1 } else { 0 }))
            .ok_or_else(|| CliError::csv(path, "no value column"))?,
    };
    let mut points = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| CliError::csv(path, e))?;
        let parse = |c: usize| -> Result<f64> {
            rec.get(c)
                .and_then(|s| s.trim().parse::<f64>().ok())
                .ok_or_else(|| CliError::csv(path, format!("row {}: column {c} is not a number", i + 2)))
        };
        points.push((parse(n_col)?, parse(v_col)?));
    }
    Ok(Series { label, points })
}

/// A headerless CSV matrix, one row per state.
pub fn read_kernel(path: &Path) -> Result<DiscreteKernel> {
    let mut r = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| CliError::csv(path, e))?;
    let mut rows = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| CliError::csv(path, e))?;
        let row = rec
            .iter()
            .map(|s| s.parse::<f64>())
            .collect::<std::result::Result<Vec<f64>, _>>()
            .map_err(|e| CliError::csv(path, format!("row {}: {e}", i + 1)))?;
        rows.push(row);
    }
    Ok(DiscreteKernel::new(rows)?)
}
