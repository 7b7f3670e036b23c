//! CSV and JSON readers/writers for panels, matrices, empirical series,
//! factor reports, sweep records and calibration rows.
//!
//! Floats are written with Rust's shortest round-trip formatting, so a value
//! read back is bit-identical. Missing values are empty fields.

use std::io::{Read, Write};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::experiments::{CalibrationRow, EnsembleSummary, SweepRecord};
use crate::factor_analysis::{FactorFit, SpectrumReport};
use crate::simulator::{ReturnPanel, SimConfig};

pub const SCHEMA_VERSION: u32 = 1;

fn fmt_opt<T: ToString>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn parse_f64(field: &str, line: u64) -> Result<f64> {
    field.trim().parse::<f64>().map_err(|_| Error::Format {
        line,
        message: format!("not a number: {field:?}"),
    })
}

fn parse_opt<T: std::str::FromStr>(field: &str, line: u64) -> Result<Option<T>> {
    let f = field.trim();
    if f.is_empty() {
        return Ok(None);
    }
    f.parse::<T>().map(Some).map_err(|_| Error::Format {
        line,
        message: format!("cannot parse {f:?}"),
    })
}

fn record_line(rec: &csv::StringRecord) -> u64 {
    rec.position().map_or(0, |p| p.line())
}

/// Panel as `t,asset_0,...,asset_{K-1}`, one row per time step.
pub fn write_panel_csv<W: Write>(w: W, panel: &ReturnPanel) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let mut header = vec!["t".to_string()];
    header.extend((0..panel.assets()).map(|k| format!("asset_{k}")));
    out.write_record(&header)?;
    for (t, row) in panel.returns.row_iter().enumerate() {
        let mut rec = vec![t.to_string()];
        rec.extend(row.iter().map(|x| x.to_string()));
        out.write_record(&rec)?;
    }
    out.flush()?;
    Ok(())
}

/// Reads a panel written by [`write_panel_csv`]. The first column is the time
/// index and is ignored; ragged rows are rejected with their line number.
pub fn read_panel_csv<R: Read>(r: R) -> Result<ReturnPanel> {
    let mut rdr = csv::ReaderBuilder::new().flexible(true).from_reader(r);
    let width = rdr.headers()?.len();
    if width < 2 {
        return Err(Error::Format {
            line: 1,
            message: "panel needs a time column and at least one asset".into(),
        });
    }
    let mut data = Vec::new();
    let mut rows = 0;
    for rec in rdr.records() {
        let rec = rec?;
        let line = record_line(&rec);
        if rec.len() != width {
            return Err(Error::Format {
                line,
                message: format!("expected {width} fields, found {}", rec.len()),
            });
        }
        for field in rec.iter().skip(1) {
            data.push(parse_f64(field, line)?);
        }
        rows += 1;
    }
    if rows == 0 {
        return Err(Error::Format {
            line: 1,
            message: "panel has no rows".into(),
        });
    }
    Ok(ReturnPanel::from_matrix(DMatrix::from_row_slice(
        rows,
        width - 1,
        &data,
    )))
}

/// Headerless matrix CSV, one matrix row per line.
pub fn write_matrix_csv<W: Write>(w: W, m: &DMatrix<f64>) -> Result<()> {
    let mut out = csv::WriterBuilder::new().has_headers(false).from_writer(w);
    for row in m.row_iter() {
        out.write_record(row.iter().map(|x| x.to_string()))?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_matrix_csv<R: Read>(r: R) -> Result<DMatrix<f64>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(r);
    let mut data = Vec::new();
    let mut width = None;
    let mut rows = 0;
    for rec in rdr.records() {
        let rec = rec?;
        let line = record_line(&rec);
        if *width.get_or_insert(rec.len()) != rec.len() {
            return Err(Error::Format {
                line,
                message: "ragged matrix row".into(),
            });
        }
        for f in rec.iter() {
            data.push(parse_f64(f, line)?);
        }
        rows += 1;
    }
    Ok(DMatrix::from_row_slice(rows, width.unwrap_or(0), &data))
}

/// Sidecar describing how a panel was produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PanelMetadata {
    pub schema_version: u32,
    pub config: SimConfig,
    pub stable: bool,
    pub truncated_at: Option<usize>,
    pub boundary_hits: usize,
    pub config_hash: u64,
    pub rows: usize,
    pub assets: usize,
}

impl PanelMetadata {
    pub fn new(config: &SimConfig, panel: &ReturnPanel) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            config: *config,
            stable: panel.stable,
            truncated_at: panel.truncated_at,
            boundary_hits: panel.boundary_hits,
            config_hash: panel.config_hash,
            rows: panel.steps(),
            assets: panel.assets(),
        }
    }
}

pub fn write_json<W: Write, T: Serialize>(mut w: W, value: &T) -> Result<()> {
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    Ok(())
}

pub fn read_json<R: Read, T: for<'de> Deserialize<'de>>(r: R) -> Result<T> {
    Ok(serde_json::from_reader(r)?)
}

/// A dated single-asset return series.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalSeries {
    pub dates: Vec<String>,
    pub returns: Vec<f64>,
}

/// Reads `date,return` CSV. The header is required.
pub fn read_empirical_csv<R: Read>(r: R) -> Result<EmpiricalSeries> {
    let mut rdr = csv::ReaderBuilder::new().flexible(true).from_reader(r);
    let headers = rdr.headers()?.clone();
    let names: Vec<&str> = headers.iter().map(str::trim).collect();
    if names != ["date", "return"] {
        return Err(Error::Format {
            line: 1,
            message: format!("expected header date,return, found {}", names.join(",")),
        });
    }
    let mut series = EmpiricalSeries {
        dates: Vec::new(),
        returns: Vec::new(),
    };
    for rec in rdr.records() {
        let rec = rec?;
        let line = record_line(&rec);
        if rec.len() != 2 {
            return Err(Error::Format {
                line,
                message: format!("expected 2 fields, found {}", rec.len()),
            });
        }
        series.dates.push(rec[0].trim().to_string());
        series.returns.push(parse_f64(&rec[1], line)?);
    }
    if series.returns.is_empty() {
        return Err(Error::Format {
            line: 1,
            message: "series has no rows".into(),
        });
    }
    Ok(series)
}

pub fn write_empirical_csv<W: Write>(w: W, series: &EmpiricalSeries) -> Result<()> {
    if series.dates.len() != series.returns.len() {
        return Err(Error::DimensionMismatch {
            expected: series.dates.len(),
            found: series.returns.len(),
        });
    }
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["date", "return"])?;
    for (d, r) in series.dates.iter().zip(&series.returns) {
        out.write_record([d.clone(), r.to_string()])?;
    }
    out.flush()?;
    Ok(())
}

/// Scores as `t,f_0,...,f_{M-1}`.
pub fn write_factor_scores_csv<W: Write>(w: W, factors: &DMatrix<f64>) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let mut header = vec!["t".to_string()];
    header.extend((0..factors.ncols()).map(|j| format!("f_{j}")));
    out.write_record(&header)?;
    for (t, row) in factors.row_iter().enumerate() {
        let mut rec = vec![t.to_string()];
        rec.extend(row.iter().map(|x| x.to_string()));
        out.write_record(&rec)?;
    }
    out.flush()?;
    Ok(())
}

/// Serializable summary of a [`FactorFit`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorReport {
    pub schema_version: u32,
    pub m_hat: usize,
    pub explained_variance: f64,
    pub entropy: Vec<Option<f64>>,
    pub mean_entropy: Option<f64>,
    pub std_entropy: Option<f64>,
    pub normalized_spectrum: Vec<f64>,
    pub baseline_spectrum: Vec<f64>,
    /// One row per factor, one column per asset.
    pub loadings: Vec<Vec<f64>>,
}

impl FactorReport {
    pub fn new(fit: &FactorFit, baseline: &SpectrumReport) -> Self {
        let summary = fit.entropy_summary();
        Self {
            schema_version: SCHEMA_VERSION,
            m_hat: fit.m_hat,
            explained_variance: fit.explained_variance,
            entropy: fit.entropy.clone(),
            mean_entropy: summary.map(|s| s.mean),
            std_entropy: summary.map(|s| s.std),
            normalized_spectrum: fit.spectrum.normalized.iter().copied().collect(),
            baseline_spectrum: baseline.normalized.iter().copied().collect(),
            loadings: fit.loadings.row_iter().map(|r| r.iter().copied().collect()).collect(),
        }
    }
}

const RECORD_HEADER: [&str; 12] = [
    "task_id",
    "m",
    "epsilon",
    "rep",
    "m_hat",
    "mean_entropy",
    "std_entropy",
    "entropy_defined",
    "explained_variance",
    "stable",
    "net_seed",
    "sim_seed",
];

/// Writes sweep records; `header` is false when appending to an existing file.
pub fn write_records_csv<W: Write>(w: W, records: &[SweepRecord], header: bool) -> Result<()> {
    let mut out = csv::WriterBuilder::new().has_headers(false).from_writer(w);
    if header {
        out.write_record(RECORD_HEADER)?;
    }
    for r in records {
        out.write_record([
            r.task_id.to_string(),
            r.m.to_string(),
            r.epsilon.to_string(),
            r.rep.to_string(),
            fmt_opt(r.m_hat),
            fmt_opt(r.mean_entropy),
            fmt_opt(r.std_entropy),
            r.entropy_defined.to_string(),
            fmt_opt(r.explained_variance),
            r.stable.to_string(),
            r.net_seed.to_string(),
            r.sim_seed.to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

/// Reads sweep records. A trailing partial line (from an interrupted run) is
/// an error like any other malformed row.
pub fn read_records_csv<R: Read>(r: R) -> Result<Vec<SweepRecord>> {
    let mut rdr = csv::ReaderBuilder::new().flexible(true).from_reader(r);
    let headers = rdr.headers()?.clone();
    if headers.iter().ne(RECORD_HEADER) {
        return Err(Error::Format {
            line: 1,
            message: "unexpected sweep record header".into(),
        });
    }
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = record_line(&rec);
        if rec.len() != RECORD_HEADER.len() {
            return Err(Error::Format {
                line,
                message: format!("expected {} fields, found {}", RECORD_HEADER.len(), rec.len()),
            });
        }
        let req = |i: usize| -> Result<String> {
            let f = rec[i].trim();
            if f.is_empty() {
                Err(Error::Format {
                    line,
                    message: format!("missing {}", RECORD_HEADER[i]),
                })
            } else {
                Ok(f.to_string())
            }
        };
        let parse = |i: usize| -> Result<u64> {
            req(i)?.parse().map_err(|_| Error::Format {
                line,
                message: format!("bad {}", RECORD_HEADER[i]),
            })
        };
        out.push(SweepRecord {
            task_id: parse(0)?,
            m: parse(1)? as usize,
            epsilon: parse_f64(&req(2)?, line)?,
            rep: parse(3)? as usize,
            m_hat: parse_opt(&rec[4], line)?,
            mean_entropy: parse_opt(&rec[5], line)?,
            std_entropy: parse_opt(&rec[6], line)?,
            entropy_defined: parse(7)? as usize,
            explained_variance: parse_opt(&rec[8], line)?,
            stable: req(9)?.parse().map_err(|_| Error::Format {
                line,
                message: "bad stable flag".into(),
            })?,
            net_seed: parse(10)?,
            sim_seed: parse(11)?,
        });
    }
    Ok(out)
}

pub fn write_summary_csv<W: Write>(w: W, summaries: &[EnsembleSummary]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record([
        "m",
        "epsilon",
        "n_reps",
        "n_stable",
        "mu_mhat",
        "sigma_mhat",
        "mu_h",
        "sigma_h",
        "n_entropy",
        "mean_sigma_f2",
        "binary_deviation",
    ])?;
    for s in summaries {
        out.write_record([
            s.m.to_string(),
            s.epsilon.to_string(),
            s.n_reps.to_string(),
            s.n_stable.to_string(),
            fmt_opt(s.mu_mhat),
            fmt_opt(s.sigma_mhat),
            fmt_opt(s.mu_h),
            fmt_opt(s.sigma_h),
            s.n_entropy.to_string(),
            fmt_opt(s.mean_sigma_f2),
            fmt_opt(s.binary_deviation),
        ])?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_calibration_csv<W: Write>(w: W, rows: &[CalibrationRow]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["r0", "gamma", "delta", "mse", "lb_pvalue", "dw", "complete"])?;
    for r in rows {
        out.write_record([
            r.r0.to_string(),
            r.gamma.to_string(),
            r.delta.to_string(),
            fmt_opt(r.mse),
            fmt_opt(r.lb_pvalue),
            fmt_opt(r.dw),
            r.complete.to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}
