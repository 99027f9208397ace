//! Daily time-series panels: one unit (e.g. a county) observed over one or
//! more warm seasons.

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One observed day.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DayRecord {
    pub date: NaiveDate,
    pub season_id: String,
    /// Stored as read; [`validate_panel`] enforces `{0, 1}`.
    pub treatment: f64,
    pub outcome: f64,
    pub is_holiday: bool,
    /// `NaN` marks a missing value.
    pub covariates: Vec<f64>,
}

impl DayRecord {
    pub fn treated(&self) -> bool {
        self.treatment == 1.0
    }
}

/// All records of a single unit, in date order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeSeriesPanel {
    pub unit_id: String,
    pub covariate_names: Vec<String>,
    pub records: Vec<DayRecord>,
}

/// Contiguous run of records sharing a season id.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SeasonSpan {
    pub start: usize,
    pub end: usize,
}

impl SeasonSpan {
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end == self.start
    }
}

impl TimeSeriesPanel {
    pub fn new(unit_id: impl Into<String>, covariate_names: Vec<String>) -> Self {
        Self {
            unit_id: unit_id.into(),
            covariate_names,
            records: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn covariate_index(&self, name: &str) -> Result<usize> {
        let stripped = name.strip_prefix("cov_").unwrap_or(name);
        self.covariate_names
            .iter()
            .position(|c| c == name || c == stripped)
            .ok_or_else(|| Error::MissingColumn(name.to_string()))
    }

    pub fn covariate_column(&self, name: &str) -> Result<Vec<f64>> {
        let j = self.covariate_index(name)?;
        Ok(self.records.iter().map(|r| r.covariates[j]).collect())
    }

    pub fn treatments(&self) -> Vec<bool> {
        self.records.iter().map(DayRecord::treated).collect()
    }

    pub fn outcomes(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.outcome).collect()
    }

    /// Splits the records into maximal runs of equal `season_id`.
    pub fn seasons(&self) -> Vec<SeasonSpan> {
        let mut spans = Vec::new();
        let mut start = 0;
        for i in 1..=self.records.len() {
            if i == self.records.len() || self.records[i].season_id != self.records[start].season_id {
                if i > start {
                    spans.push(SeasonSpan { start, end: i });
                }
                start = i;
            }
        }
        spans
    }

    /// Zero-based position of every day within its season.
    pub fn season_positions(&self) -> Vec<usize> {
        let mut pos = vec![0; self.records.len()];
        for span in self.seasons() {
            for (k, i) in (span.start..span.end).enumerate() {
                pos[i] = k;
            }
        }
        pos
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum IssueKind {
    EmptyPanel,
    OutOfOrder,
    DuplicateDate,
    NonBinaryTreatment {
        value: String,
    },
    NonFiniteOutcome,
    MissingCovariate {
        column: String,
    },
    CovariateArity {
        expected: usize,
        found: usize,
    },
    /// A season id reappears after a different season started.
    SeasonInterleaved {
        season_id: String,
    },
    /// Calendar days are missing inside a season.
    SeasonGap {
        missing_days: i64,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationIssue {
    pub unit_id: String,
    /// Index into `records`, when the issue is tied to a day.
    pub record: Option<usize>,
    pub date: Option<NaiveDate>,
    #[serde(flatten)]
    pub kind: IssueKind,
}

impl std::fmt::Display for ValidationIssue {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "unit {}", self.unit_id)?;
        if let Some(d) = self.date {
            write!(f, " {d}")?;
        }
        match &self.kind {
            IssueKind::EmptyPanel => write!(f, ": panel has no records"),
            IssueKind::OutOfOrder => write!(f, ": date precedes the previous record"),
            IssueKind::DuplicateDate => write!(f, ": duplicate date"),
            IssueKind::NonBinaryTreatment { value } => {
                write!(f, ": treatment {value} is not 0/1")
            }
            IssueKind::NonFiniteOutcome => write!(f, ": outcome is missing or non-finite"),
            IssueKind::MissingCovariate { column } => {
                write!(f, ": covariate {column} is missing")
            }
            IssueKind::CovariateArity { expected, found } => {
                write!(f, ": expected {expected} covariates, found {found}")
            }
            IssueKind::SeasonInterleaved { season_id } => {
                write!(f, ": season {season_id} resumes after another season")
            }
            IssueKind::SeasonGap { missing_days } => {
                write!(f, ": {missing_days} day(s) missing inside season")
            }
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub n_records: usize,
    pub issues: Vec<ValidationIssue>,
}

impl ValidationReport {
    pub fn is_ready(&self) -> bool {
        self.issues.is_empty()
    }

    pub fn merge(&mut self, other: ValidationReport) {
        self.n_records += other.n_records;
        self.issues.extend(other.issues);
    }
}

/// Checks every panel invariant and collects all violations.
pub fn validate_panel(panel: &TimeSeriesPanel) -> ValidationReport {
    let mut issues = Vec::new();
    let unit = &panel.unit_id;
    let issue = |record: Option<usize>, kind: IssueKind| ValidationIssue {
        unit_id: unit.clone(),
        record,
        date: record.map(|i| panel.records[i].date),
        kind,
    };

    if panel.records.is_empty() {
        issues.push(issue(None, IssueKind::EmptyPanel));
    }

    let arity = panel.covariate_names.len();
    let mut closed_seasons: Vec<&str> = Vec::new();
    for (i, rec) in panel.records.iter().enumerate() {
        if rec.treatment != 0.0 && rec.treatment != 1.0 {
            issues.push(issue(
                Some(i),
                IssueKind::NonBinaryTreatment {
                    value: rec.treatment.to_string(),
                },
            ));
        }
        if !rec.outcome.is_finite() {
            issues.push(issue(Some(i), IssueKind::NonFiniteOutcome));
        }
        if rec.covariates.len() != arity {
            issues.push(issue(
                Some(i),
                IssueKind::CovariateArity {
                    expected: arity,
                    found: rec.covariates.len(),
                },
            ));
        } else {
            for (j, v) in rec.covariates.iter().enumerate() {
                if !v.is_finite() {
                    issues.push(issue(
                        Some(i),
                        IssueKind::MissingCovariate {
                            column: panel.covariate_names[j].clone(),
                        },
                    ));
                }
            }
        }

        if i == 0 {
            continue;
        }
        let prev = &panel.records[i - 1];
        if rec.date == prev.date {
            issues.push(issue(Some(i), IssueKind::DuplicateDate));
        } else if rec.date < prev.date {
            issues.push(issue(Some(i), IssueKind::OutOfOrder));
        } else if rec.season_id == prev.season_id {
            let gap = (rec.date - prev.date).num_days() - 1;
            if gap > 0 {
                issues.push(issue(Some(i), IssueKind::SeasonGap { missing_days: gap }));
            }
        }
        if rec.season_id != prev.season_id {
            closed_seasons.push(&prev.season_id);
            if closed_seasons.contains(&rec.season_id.as_str()) {
                issues.push(issue(
                    Some(i),
                    IssueKind::SeasonInterleaved {
                        season_id: rec.season_id.clone(),
                    },
                ));
            }
        }
    }

    ValidationReport {
        n_records: panel.records.len(),
        issues,
    }
}

/// Boolean selection over the days of a panel.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DayMask(pub Vec<bool>);

impl DayMask {
    pub fn all(n: usize) -> Self {
        Self(vec![true; n])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn get(&self, t: usize) -> bool {
        self.0[t]
    }

    pub fn count(&self) -> usize {
        self.0.iter().filter(|&&b| b).count()
    }
}

/// Empirical quantile as the order statistic at rank `ceil(q * n)` (1-based).
pub fn order_statistic_quantile(values: &[f64], quantile: f64) -> Result<f64> {
    if !(quantile > 0.0 && quantile < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "quantile must lie in (0, 1), got {quantile}"
        )));
    }
    if values.is_empty() {
        return Err(Error::InvalidArgument("quantile of empty sample".into()));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    // Guard against q * n landing a hair above an integer.
    let rank = ((quantile * n as f64) - 1e-9).ceil().max(1.0) as usize;
    Ok(sorted[rank.min(n) - 1])
}

/// Selects days whose `column` value strictly exceeds the unit's empirical
/// `quantile`; ties at the threshold are excluded.
pub fn hot_day_filter(panel: &TimeSeriesPanel, column: &str, quantile: f64) -> Result<DayMask> {
    let heat = panel.covariate_column(column)?;
    let threshold = order_statistic_quantile(&heat, quantile)?;
    Ok(DayMask(heat.iter().map(|&h| h > threshold).collect()))
}

#[cfg(test)]
pub(crate) mod testutil {
    use super::*;

    pub fn day(offset: i64) -> NaiveDate {
        NaiveDate::from_ymd_opt(2010, 5, 1).unwrap() + chrono::Duration::days(offset)
    }

    /// Single-season panel with one covariate `heat`.
    pub fn simple_panel(treatments: &[f64], outcomes: &[f64], heat: &[f64]) -> TimeSeriesPanel {
        let mut p = TimeSeriesPanel::new("u1", vec!["heat".into()]);
        for i in 0..treatments.len() {
            p.records.push(DayRecord {
                date: day(i as i64),
                season_id: "2010".into(),
                treatment: treatments[i],
                outcome: outcomes[i],
                is_holiday: false,
                covariates: vec![heat[i]],
            });
        }
        p
    }
}
