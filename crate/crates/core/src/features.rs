//! Filtration features: the information available just before the treatment
//! decision on each day.
//!
//! Row `t` uses covariates dated `<= t` and treatments/outcomes dated `< t`.
//! Lags never reach into a previous season; empty lag slots are zero-filled and
//! flagged by an `avail_lag{l}` column.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::panel::TimeSeriesPanel;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeatureSpec {
    pub covariate_lags: Vec<i64>,
    pub treatment_lags: Vec<i64>,
    pub running_total: bool,
    pub moving_average: bool,
    /// `None` means season-to-date.
    pub moving_average_window: Option<usize>,
    pub heat_index_column: Option<String>,
}

impl Default for FeatureSpec {
    fn default() -> Self {
        Self {
            covariate_lags: vec![1, 2],
            treatment_lags: vec![1, 2],
            running_total: true,
            moving_average: true,
            moving_average_window: None,
            heat_index_column: None,
        }
    }
}

impl FeatureSpec {
    fn checked_lags(lags: &[i64], what: &str) -> Result<Vec<usize>> {
        let mut out = Vec::with_capacity(lags.len());
        for &l in lags {
            if l < 1 {
                return Err(Error::InvalidFeatureSpec(format!("{what} lag must be >= 1, got {l}")));
            }
            let l = l as usize;
            if out.contains(&l) {
                return Err(Error::InvalidFeatureSpec(format!("duplicate {what} lag {l}")));
            }
            out.push(l);
        }
        out.sort_unstable();
        Ok(out)
    }

    pub fn validate(&self) -> Result<()> {
        Self::checked_lags(&self.covariate_lags, "covariate")?;
        Self::checked_lags(&self.treatment_lags, "treatment")?;
        if self.moving_average_window == Some(0) {
            return Err(Error::InvalidFeatureSpec(
                "moving_average_window must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Dense row-major feature matrix, one row per day.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FiltrationFeatures {
    pub names: Vec<String>,
    n_rows: usize,
    data: Vec<f64>,
}

impl FiltrationFeatures {
    pub fn from_rows(names: Vec<String>, rows: &[Vec<f64>]) -> Result<Self> {
        let n_cols = names.len();
        let mut data = Vec::with_capacity(rows.len() * n_cols);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != n_cols {
                return Err(Error::InvalidArgument(format!(
                    "row {i} has {} values, expected {n_cols}",
                    r.len()
                )));
            }
            data.extend_from_slice(r);
        }
        Ok(Self {
            names,
            n_rows: rows.len(),
            data,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.names.len()
    }

    pub fn row(&self, t: usize) -> &[f64] {
        let k = self.n_cols();
        &self.data[t * k..(t + 1) * k]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        (0..self.n_rows).map(move |t| self.row(t))
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.rows().map(|r| r[j]).collect()
    }

    /// Rows restricted to `idx`, in that order.
    pub fn select_rows(&self, idx: &[usize]) -> Self {
        let mut data = Vec::with_capacity(idx.len() * self.n_cols());
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Self {
            names: self.names.clone(),
            n_rows: idx.len(),
            data,
        }
    }
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

/// Builds the feature matrix for an analysis-ready panel.
pub fn build_filtration_features(panel: &TimeSeriesPanel, spec: &FeatureSpec) -> Result<FiltrationFeatures> {
    let cov_lags = FeatureSpec::checked_lags(&spec.covariate_lags, "covariate")?;
    let w_lags = FeatureSpec::checked_lags(&spec.treatment_lags, "treatment")?;
    spec.validate()?;
    let heat_idx = match &spec.heat_index_column {
        Some(c) => Some(panel.covariate_index(c)?),
        None => None,
    };

    let mut avail_lags: Vec<usize> = cov_lags.iter().chain(&w_lags).copied().collect();
    avail_lags.sort_unstable();
    avail_lags.dedup();

    let cov_names = &panel.covariate_names;
    let mut names: Vec<String> = cov_names.iter().map(|c| format!("cov_{c}")).collect();
    for l in &cov_lags {
        names.extend(cov_names.iter().map(|c| format!("cov_{c}_lag{l}")));
    }
    names.extend(w_lags.iter().map(|l| format!("w_lag{l}")));
    names.extend(avail_lags.iter().map(|l| format!("avail_lag{l}")));
    if spec.running_total {
        names.push("w_season_total".into());
    }
    if spec.moving_average {
        names.push("y_season_mavg".into());
        if heat_idx.is_some() {
            names.push("heat_season_mavg".into());
        }
    }
    names.push("holiday".into());

    let recs = &panel.records;
    let pos = panel.season_positions();
    let mut data = Vec::with_capacity(recs.len() * names.len());
    let mut running = 0.0;
    for t in 0..recs.len() {
        let p = pos[t];
        if p == 0 {
            running = 0.0;
        }
        let lagged = |l: usize| (l <= p).then(|| &recs[t - l]);

        data.extend_from_slice(&recs[t].covariates);
        for &l in &cov_lags {
            match lagged(l) {
                Some(r) => data.extend_from_slice(&r.covariates),
                None => data.extend(std::iter::repeat_n(0.0, cov_names.len())),
            }
        }
        for &l in &w_lags {
            data.push(lagged(l).map_or(0.0, |r| r.treatment));
        }
        for &l in &avail_lags {
            data.push(if l <= p { 1.0 } else { 0.0 });
        }
        if spec.running_total {
            data.push(running);
        }
        if spec.moving_average {
            let back = spec.moving_average_window.unwrap_or(usize::MAX).min(p);
            data.push(mean((t - back..t).map(|s| recs[s].outcome)));
            if let Some(h) = heat_idx {
                let back = spec.moving_average_window.unwrap_or(usize::MAX).min(p + 1);
                data.push(mean((t + 1 - back..=t).map(|s| recs[s].covariates[h])));
            }
        }
        data.push(if recs[t].is_holiday { 1.0 } else { 0.0 });
        running += recs[t].treatment;
    }

    Ok(FiltrationFeatures {
        n_rows: recs.len(),
        names,
        data,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::panel::testutil::simple_panel;

    fn col(f: &FiltrationFeatures, name: &str) -> Vec<f64> {
        let j = f.names.iter().position(|n| n == name).unwrap();
        f.column(j)
    }

    #[test]
    fn running_total_counts_strictly_before() {
        let p = simple_panel(&[0., 1., 0., 0., 1.], &[0.; 5], &[0.; 5]);
        let f = build_filtration_features(&p, &FeatureSpec::default()).unwrap();
        assert_eq!(col(&f, "w_season_total"), vec![0., 0., 1., 1., 1.]);
        assert_eq!(col(&f, "w_lag1"), vec![0., 0., 1., 0., 0.]);
        assert_eq!(col(&f, "w_lag2"), vec![0., 0., 0., 1., 0.]);
    }

    #[test]
    fn all_zero_treatment_running_total_zero() {
        let p = simple_panel(&[0.; 8], &[1.; 8], &[2.; 8]);
        let f = build_filtration_features(&p, &FeatureSpec::default()).unwrap();
        assert!(col(&f, "w_season_total").iter().all(|&v| v == 0.0));
    }

    #[test]
    fn constant_covariate_lags_match_current() {
        let p = simple_panel(&[0.; 6], &[0.; 6], &[7.5; 6]);
        let f = build_filtration_features(&p, &FeatureSpec::default()).unwrap();
        let cur = col(&f, "cov_heat");
        for l in [1usize, 2] {
            let lag = col(&f, &format!("cov_heat_lag{l}"));
            let avail = col(&f, &format!("avail_lag{l}"));
            for t in 0..6 {
                if t >= l {
                    assert_eq!(lag[t], cur[t]);
                    assert_eq!(avail[t], 1.0);
                } else {
                    assert_eq!(lag[t], 0.0);
                    assert_eq!(avail[t], 0.0);
                }
            }
        }
    }

    #[test]
    fn moving_averages() {
        let y = [1., 2., 3., 4., 5.];
        let p = simple_panel(&[0.; 5], &y, &y);
        let spec = FeatureSpec {
            heat_index_column: Some("heat".into()),
            ..FeatureSpec::default()
        };
        let f = build_filtration_features(&p, &spec).unwrap();
        assert_eq!(col(&f, "y_season_mavg"), vec![0., 1., 1.5, 2., 2.5]);
        assert_eq!(col(&f, "heat_season_mavg"), vec![1., 1.5, 2., 2.5, 3.]);

        let spec = FeatureSpec {
            moving_average_window: Some(2),
            ..spec
        };
        let f = build_filtration_features(&p, &spec).unwrap();
        assert_eq!(col(&f, "y_season_mavg"), vec![0., 1., 1.5, 2.5, 3.5]);
        assert_eq!(col(&f, "heat_season_mavg"), vec![1., 1.5, 2.5, 3.5, 4.5]);
    }

    #[test]
    fn lags_reset_at_season_boundary() {
        let mut p = simple_panel(&[1., 1., 1., 1.], &[1., 2., 3., 4.], &[1., 2., 3., 4.]);
        p.records[2].season_id = "2011".into();
        p.records[3].season_id = "2011".into();
        let f = build_filtration_features(&p, &FeatureSpec::default()).unwrap();
        assert_eq!(col(&f, "w_lag1"), vec![0., 1., 0., 1.]);
        assert_eq!(col(&f, "cov_heat_lag1"), vec![0., 1., 0., 3.]);
        assert_eq!(col(&f, "w_season_total"), vec![0., 1., 0., 1.]);
        assert_eq!(col(&f, "y_season_mavg"), vec![0., 1., 0., 3.]);
    }

    #[test]
    fn invalid_specs_rejected() {
        let p = simple_panel(&[0.; 3], &[0.; 3], &[0.; 3]);
        for spec in [
            FeatureSpec {
                covariate_lags: vec![-1],
                ..FeatureSpec::default()
            },
            FeatureSpec {
                treatment_lags: vec![0],
                ..FeatureSpec::default()
            },
            FeatureSpec {
                moving_average_window: Some(0),
                ..FeatureSpec::default()
            },
        ] {
            assert!(matches!(
                build_filtration_features(&p, &spec),
                Err(Error::InvalidFeatureSpec(_))
            ));
        }
        let spec = FeatureSpec {
            heat_index_column: Some("nope".into()),
            ..FeatureSpec::default()
        };
        assert!(matches!(
            build_filtration_features(&p, &spec),
            Err(Error::MissingColumn(_))
        ));
    }
}
