//! CSV formats for panels, effect curves, study tables and simulation reports.
//!
//! Floats are written in shortest round-trip form, so write-then-read is exact.

use std::collections::HashMap;
use std::io::{Read, Write};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::EffectPoint;
use crate::meta::{PooledPoint, UnitCurve};
use crate::panel::{DayRecord, TimeSeriesPanel};
use crate::sim::experiment::{CoverageRow, SimReport};

pub const PANEL_FIXED_COLUMNS: [&str; 6] = ["unit_id", "date", "season_id", "treatment", "outcome", "is_holiday"];
pub const COVARIATE_PREFIX: &str = "cov_";

fn fmt_f64(x: f64) -> String {
    format!("{x:?}")
}

fn parse_f64(s: &str, line: u64, col: &str) -> Result<f64> {
    let s = s.trim();
    if s.is_empty() {
        return Ok(f64::NAN);
    }
    s.parse()
        .map_err(|_| Error::Parse(format!("line {line}: column {col}: `{s}` is not a number")))
}

/// Reads a multi-unit panel CSV. Units keep their first-appearance order and
/// rows keep file order within a unit. Empty covariate or outcome cells are
/// read as missing (`NaN`) and left for validation to report.
pub fn read_panels_csv<R: Read>(reader: R) -> Result<Vec<TimeSeriesPanel>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let mut pos = HashMap::new();
    for col in PANEL_FIXED_COLUMNS {
        let i = headers
            .iter()
            .position(|h| h.trim() == col)
            .ok_or_else(|| Error::Parse(format!("missing required column `{col}` in header")))?;
        pos.insert(col, i);
    }
    let cov_cols: Vec<(usize, String)> = headers
        .iter()
        .enumerate()
        .filter_map(|(i, h)| {
            h.trim()
                .strip_prefix(COVARIATE_PREFIX)
                .map(|name| (i, name.to_string()))
        })
        .collect();
    let cov_names: Vec<String> = cov_cols.iter().map(|(_, n)| n.clone()).collect();

    let mut panels: Vec<TimeSeriesPanel> = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        let get = |c: &str| rec.get(pos[c]).unwrap_or("").trim();
        let unit = get("unit_id").to_string();
        let date = NaiveDate::parse_from_str(get("date"), "%Y-%m-%d")
            .map_err(|e| Error::Parse(format!("line {line}: bad date `{}`: {e}", get("date"))))?;
        let is_holiday = match get("is_holiday") {
            "0" | "false" => false,
            "1" | "true" => true,
            other => {
                return Err(Error::Parse(format!(
                    "line {line}: is_holiday must be 0 or 1, got `{other}`"
                )))
            }
        };
        let treatment = parse_f64(get("treatment"), line, "treatment")?;
        let outcome = parse_f64(get("outcome"), line, "outcome")?;
        let covariates = cov_cols
            .iter()
            .map(|(i, name)| parse_f64(rec.get(*i).unwrap_or(""), line, name))
            .collect::<Result<Vec<_>>>()?;
        let k = *index.entry(unit.clone()).or_insert_with(|| {
            panels.push(TimeSeriesPanel::new(unit.clone(), cov_names.clone()));
            panels.len() - 1
        });
        panels[k].records.push(DayRecord {
            date,
            season_id: get("season_id").to_string(),
            treatment,
            outcome,
            is_holiday,
            covariates,
        });
    }
    Ok(panels)
}

/// Writes panels sharing one covariate layout.
pub fn write_panels_csv<W: Write>(writer: W, panels: &[TimeSeriesPanel]) -> Result<()> {
    let cov_names = panels.first().map(|p| p.covariate_names.clone()).unwrap_or_default();
    if let Some(p) = panels.iter().find(|p| p.covariate_names != cov_names) {
        return Err(Error::InvalidArgument(format!(
            "unit {} has a different covariate layout",
            p.unit_id
        )));
    }
    let mut w = csv::Writer::from_writer(writer);
    let mut header: Vec<String> = PANEL_FIXED_COLUMNS.iter().map(|s| s.to_string()).collect();
    header.extend(cov_names.iter().map(|c| format!("{COVARIATE_PREFIX}{c}")));
    w.write_record(&header)?;
    for p in panels {
        for r in &p.records {
            let mut row = vec![
                p.unit_id.clone(),
                r.date.format("%Y-%m-%d").to_string(),
                r.season_id.clone(),
                fmt_f64(r.treatment),
                fmt_f64(r.outcome),
                if r.is_holiday { "1" } else { "0" }.to_string(),
            ];
            row.extend(r.covariates.iter().map(|&c| fmt_f64(c)));
            w.write_record(&row)?;
        }
    }
    w.flush()?;
    Ok(())
}

fn write_rows<W: Write, T: Serialize>(writer: W, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

fn read_rows<R: Read, T: for<'de> Deserialize<'de>>(reader: R) -> Result<Vec<T>> {
    let mut rdr = csv::Reader::from_reader(reader);
    rdr.deserialize().map(|r| r.map_err(Error::from)).collect()
}

/// Curve CSV: `delta,tau_hat,sigma_hat,band_lo,band_hi,effect,effect_lo,effect_hi,n_days,effect_var`.
pub fn write_curve_csv<W: Write>(writer: W, points: &[EffectPoint]) -> Result<()> {
    write_rows(writer, points)
}

pub fn read_curve_csv<R: Read>(reader: R) -> Result<Vec<EffectPoint>> {
    read_rows(reader)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyRow {
    pub unit_id: String,
    pub delta: f64,
    pub effect: f64,
    pub variance: f64,
}

/// Study table `unit_id,delta,effect,variance`, grouped into per-unit curves.
pub fn read_study_csv<R: Read>(reader: R) -> Result<Vec<UnitCurve>> {
    let rows: Vec<StudyRow> = read_rows(reader)?;
    let mut curves: Vec<UnitCurve> = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();
    for r in rows {
        let k = *index.entry(r.unit_id.clone()).or_insert_with(|| {
            curves.push(UnitCurve {
                unit_id: r.unit_id.clone(),
                deltas: Vec::new(),
                effects: Vec::new(),
                variances: Vec::new(),
            });
            curves.len() - 1
        });
        curves[k].deltas.push(r.delta);
        curves[k].effects.push(r.effect);
        curves[k].variances.push(r.variance);
    }
    Ok(curves)
}

pub fn write_study_csv<W: Write>(writer: W, curves: &[UnitCurve]) -> Result<()> {
    let mut rows = Vec::new();
    for c in curves {
        for j in 0..c.deltas.len() {
            rows.push(StudyRow {
                unit_id: c.unit_id.clone(),
                delta: c.deltas[j],
                effect: c.effects[j],
                variance: c.variances[j],
            });
        }
    }
    write_rows(writer, &rows)
}

pub fn write_pooled_csv<W: Write>(writer: W, points: &[PooledPoint]) -> Result<()> {
    write_rows(writer, points)
}

pub fn read_pooled_csv<R: Read>(reader: R) -> Result<Vec<PooledPoint>> {
    read_rows(reader)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    #[serde(rename = "T")]
    pub t_len: usize,
    pub t0: usize,
    pub model: String,
    pub bias: f64,
    pub rmse: f64,
    pub mae: f64,
    pub rmse_sqrt_n: f64,
    pub coverage: f64,
}

/// Table layout `T,t0,model,bias,rmse,...`; wall times are left out so that
/// seeded runs are byte-identical.
pub fn write_report_csv<W: Write>(writer: W, report: &SimReport) -> Result<()> {
    let rows: Vec<ReportRow> = report
        .cells
        .iter()
        .map(|c| ReportRow {
            t_len: c.t_len,
            t0: c.t0,
            model: c.model.to_string(),
            bias: c.metrics.bias,
            rmse: c.metrics.rmse,
            mae: c.metrics.mae,
            rmse_sqrt_n: c.metrics.rmse_sqrt_n,
            coverage: c.coverage,
        })
        .collect();
    write_rows(writer, &rows)
}

pub fn read_report_csv<R: Read>(reader: R) -> Result<Vec<ReportRow>> {
    read_rows(reader)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct CoverageCsvRow {
    #[serde(rename = "T")]
    t_len: usize,
    t0: usize,
    model: String,
    delta: f64,
    coverage: f64,
}

pub fn write_coverage_csv<W: Write>(writer: W, rows: &[CoverageRow]) -> Result<()> {
    let rows: Vec<CoverageCsvRow> = rows
        .iter()
        .map(|r| CoverageCsvRow {
            t_len: r.t_len,
            t0: r.t0,
            model: r.model.to_string(),
            delta: r.delta,
            coverage: r.coverage,
        })
        .collect();
    write_rows(writer, &rows)
}
