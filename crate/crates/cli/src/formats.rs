//! CSV schemas. Every file has a mandatory header row; numbers are written
//! in their shortest round-trip decimal form, so reading a file back gives
//! the exact values that were written.
//!
//! | file           | columns                              |
//! |----------------|--------------------------------------|
//! | time series    | `t_s,p_agg_kw[,f_mean_hz]`           |
//! | delay table    | `n,alpha_rad,p_norm_pct`             |
//! | dataset        | `n,p_norm_pct,alpha_rad`             |
//! | load schedule  | `start_s,target_p_norm_pct`          |

use std::fs;
use std::path::Path;

use tclswarm_core::delay::{DelayRow, DelayTable, Provenance};
use tclswarm_core::learned::{Dataset, DatasetRow};

use crate::error::{CliError, Result};

pub const SERIES_HEADER: [&str; 3] = ["t_s", "p_agg_kw", "f_mean_hz"];
pub const TABLE_HEADER: [&str; 3] = ["n", "alpha_rad", "p_norm_pct"];
pub const DATASET_HEADER: [&str; 3] = ["n", "p_norm_pct", "alpha_rad"];
pub const SCHEDULE_HEADER: [&str; 2] = ["start_s", "target_p_norm_pct"];

#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeries {
    pub time: Vec<f64>,
    pub p_agg: Vec<f64>,
    pub f_mean: Option<Vec<f64>>,
}

impl TimeSeries {
    /// Sample interval, taken from the first two timestamps.
    pub fn dt(&self) -> Result<f64> {
        match self.time[..] {
            [a, b, ..] if b > a => Ok(b - a),
            _ => Err(CliError::Runtime("time series needs two increasing timestamps".into())),
        }
    }
}

fn render(header: &[&str], rows: impl Iterator<Item = Vec<String>>) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let fail = |e: csv::Error| CliError::Runtime(format!("csv encoding failed: {e}"));
    w.write_record(header).map_err(fail)?;
    for r in rows {
        w.write_record(&r).map_err(fail)?;
    }
    w.into_inner().map_err(|e| CliError::Runtime(format!("csv encoding failed: {e}")))
}

pub fn series_csv(ts: &TimeSeries) -> Result<Vec<u8>> {
    let cols = if ts.f_mean.is_some() { 3 } else { 2 };
    let rows = (0..ts.time.len()).map(|k| {
        let mut r = vec![ts.time[k].to_string(), ts.p_agg[k].to_string()];
        if let Some(f) = &ts.f_mean {
            r.push(f[k].to_string());
        }
        r
    });
    render(&SERIES_HEADER[..cols], rows)
}

pub fn table_csv(table: &DelayTable<f64>) -> Result<Vec<u8>> {
    render(
        &TABLE_HEADER,
        table
            .rows
            .iter()
            .map(|r| vec![table.n.to_string(), r.alpha.to_string(), r.p_norm.to_string()]),
    )
}

pub fn dataset_csv(ds: &Dataset<f64>) -> Result<Vec<u8>> {
    render(
        &DATASET_HEADER,
        ds.rows
            .iter()
            .map(|r| vec![r.n.to_string(), r.p_norm.to_string(), r.alpha.to_string()]),
    )
}

pub fn schedule_csv(segments: &[(f64, f64)]) -> Result<Vec<u8>> {
    render(
        &SCHEDULE_HEADER,
        segments.iter().map(|(s, p)| vec![s.to_string(), p.to_string()]),
    )
}

/// Rows of a CSV whose header must match `header` (the trailing
/// `optional` columns may be absent).
fn parse(bytes: &[u8], label: &str, header: &[&str], optional: usize) -> Result<(usize, Vec<Vec<f64>>)> {
    let bad = |msg: String| CliError::Runtime(format!("{label}: {msg}"));
    let mut r = csv::ReaderBuilder::new().has_headers(true).from_reader(bytes);
    let got: Vec<String> = r
        .headers()
        .map_err(|e| bad(e.to_string()))?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    let width = got.len();
    let ok = width <= header.len() && width + optional >= header.len() && got.iter().zip(header).all(|(a, b)| a == b);
    if !ok {
        return Err(bad(format!("header {got:?} does not match {:?}", header)));
    }
    let mut rows = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| bad(e.to_string()))?;
        let vals = rec
            .iter()
            .map(|f| f.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| bad(format!("row {}: {e}", i + 2)))?;
        if vals.len() != width {
            return Err(bad(format!("row {} has {} fields, expected {width}", i + 2, vals.len())));
        }
        rows.push(vals);
    }
    Ok((width, rows))
}

fn count(v: f64, label: &str) -> Result<usize> {
    if v >= 1.0 && v.fract() == 0.0 && v <= u32::MAX as f64 {
        Ok(v as usize)
    } else {
        Err(CliError::Runtime(format!("{label}: n = {v} is not a positive integer")))
    }
}

pub fn parse_series(bytes: &[u8], label: &str) -> Result<TimeSeries> {
    let (width, rows) = parse(bytes, label, &SERIES_HEADER, 1)?;
    if rows.is_empty() {
        return Err(CliError::Runtime(format!("{label}: no samples")));
    }
    Ok(TimeSeries {
        time: rows.iter().map(|r| r[0]).collect(),
        p_agg: rows.iter().map(|r| r[1]).collect(),
        f_mean: (width == 3).then(|| rows.iter().map(|r| r[2]).collect()),
    })
}

pub fn parse_table(bytes: &[u8], label: &str, rated_power: f64) -> Result<DelayTable<f64>> {
    let (_, rows) = parse(bytes, label, &TABLE_HEADER, 0)?;
    let first = rows
        .first()
        .ok_or_else(|| CliError::Runtime(format!("{label}: empty delay table")))?;
    let n = count(first[0], label)?;
    if rows.iter().any(|r| r[0] != first[0]) {
        return Err(CliError::Runtime(format!("{label}: rows disagree on n")));
    }
    let rows = rows
        .iter()
        .map(|r| DelayRow {
            alpha: r[1],
            p_norm: r[2],
        })
        .collect();
    let provenance = Provenance {
        config_hash: String::new(),
        seed: 0,
    };
    Ok(DelayTable::new(n, rated_power, rows, provenance)?)
}

pub fn parse_dataset(bytes: &[u8], label: &str) -> Result<Dataset<f64>> {
    let (_, rows) = parse(bytes, label, &DATASET_HEADER, 0)?;
    let rows = rows
        .iter()
        .map(|r| {
            Ok(DatasetRow {
                n: count(r[0], label)?,
                p_norm: r[1],
                alpha: r[2],
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Dataset::new(rows, 0).map_err(|e| CliError::Runtime(format!("{label}: {e}")))
}

pub fn parse_schedule(bytes: &[u8], label: &str) -> Result<Vec<(f64, f64)>> {
    let (_, rows) = parse(bytes, label, &SCHEDULE_HEADER, 0).map_err(|e| CliError::Config(e.to_string()))?;
    Ok(rows.iter().map(|r| (r[0], r[1])).collect())
}

pub fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| CliError::io(format!("cannot read {}", path.display()), e))
}
