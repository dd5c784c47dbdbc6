//! Persistence: trajectory CSV (`k,method,run_id,mse`) and JSON summaries.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use serde::Serialize;

use super::{Curve, ExperimentError};
use crate::optimizers::Trajectory;

pub const CSV_HEADER: [&str; 4] = ["k", "method", "run_id", "mse"];

/// One CSV line.
#[derive(Debug, Clone, PartialEq)]
pub struct CsvRow {
    pub k: u64,
    pub method: String,
    pub run_id: u64,
    pub mse: f64,
}

/// Scientific notation with 17 significant digits.
pub fn format_float(v: f64) -> String {
    format!("{v:.16e}")
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ExperimentError + '_ {
    move |source| ExperimentError::Io {
        path: path.display().to_string(),
        source,
    }
}

pub fn write_rows<'a, W: Write>(
    out: W,
    rows: impl IntoIterator<Item = (u64, &'a str, u64, f64)>,
) -> Result<(), ExperimentError> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(out);
    w.write_record(CSV_HEADER)?;
    for (k, method, run_id, mse) in rows {
        w.write_record([k.to_string().as_str(), method, &run_id.to_string(), &format_float(mse)])?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

pub fn trajectory_rows(trajectories: &[Trajectory]) -> impl Iterator<Item = (u64, &str, u64, f64)> {
    trajectories
        .iter()
        .flat_map(|t| t.records.iter().map(move |r| (r.k, t.method.as_str(), t.run_id, r.mse)))
}

pub fn curve_rows(curves: &[Curve]) -> impl Iterator<Item = (u64, &str, u64, f64)> {
    curves
        .iter()
        .flat_map(|c| c.points.iter().map(move |r| (r.k, c.name, 0, r.mse)))
}

pub fn write_trajectories_csv(path: &Path, trajectories: &[Trajectory]) -> Result<(), ExperimentError> {
    let f = File::create(path).map_err(io_err(path))?;
    write_rows(BufWriter::new(f), trajectory_rows(trajectories))
}

pub fn write_curves_csv(path: &Path, curves: &[Curve]) -> Result<(), ExperimentError> {
    let f = File::create(path).map_err(io_err(path))?;
    write_rows(BufWriter::new(f), curve_rows(curves))
}

pub fn read_rows<R: Read>(input: R) -> Result<Vec<CsvRow>, ExperimentError> {
    let mut r = csv::ReaderBuilder::new().has_headers(true).from_reader(input);
    let header = r.headers()?.clone();
    if header.iter().ne(CSV_HEADER) {
        return Err(ExperimentError::Config(format!(
            "unexpected CSV header {:?}, expected {}",
            header.iter().collect::<Vec<_>>(),
            CSV_HEADER.join(",")
        )));
    }
    let mut rows = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let field = |j: usize| rec.get(j).unwrap_or("");
        let bad = |what: &str| ExperimentError::Config(format!("line {}: invalid {what}", i + 2));
        rows.push(CsvRow {
            k: field(0).parse().map_err(|_| bad("k"))?,
            method: field(1).to_string(),
            run_id: field(2).parse().map_err(|_| bad("run_id"))?,
            mse: field(3).parse().map_err(|_| bad("mse"))?,
        });
    }
    Ok(rows)
}

pub fn read_csv(path: &Path) -> Result<Vec<CsvRow>, ExperimentError> {
    let f = File::open(path).map_err(io_err(path))?;
    read_rows(std::io::BufReader::new(f))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), ExperimentError> {
    let f = File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(f);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n").map_err(io_err(path))?;
    w.flush().map_err(io_err(path))?;
    Ok(())
}
