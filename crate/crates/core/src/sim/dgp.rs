//! Synthetic single-series data with a strongly non-overlapping treatment
//! mechanism.
//!
//! ```text
//! C_t ~ N(0, I_5)
//! logit p_t = 10 * (C_1t + ... + C_5t) - W_{t-1} + 0.5
//! W_t ~ Bernoulli(p_t)
//! Y_t ~ N(3 W_t + W_{t-1} + C_1t + ... + C_5t, 1)
//! ```
//! with `W_0 = 0`.

use chrono::NaiveDate;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::estimator::Series;
use crate::features::FiltrationFeatures;
use crate::panel::{DayRecord, TimeSeriesPanel};
use crate::propensity::expit;

pub const N_COVARIATES: usize = 5;
pub const COVARIATE_COEF: f64 = 10.0;
pub const LAG_TREATMENT_COEF: f64 = -1.0;
pub const PROPENSITY_INTERCEPT: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DgpConfig {
    pub t_len: usize,
    pub seed: u64,
}

/// True treatment probability given today's covariate sum and yesterday's
/// treatment.
pub fn true_propensity(cov_sum: f64, prev_treated: bool) -> f64 {
    let prev = if prev_treated { 1.0 } else { 0.0 };
    expit(COVARIATE_COEF * cov_sum + LAG_TREATMENT_COEF * prev + PROPENSITY_INTERCEPT)
}

/// `E[Y_t | W_t, W_{t-1}, C_t]`.
pub fn outcome_mean(treated: bool, prev_treated: bool, cov_sum: f64) -> f64 {
    3.0 * f64::from(u8::from(treated)) + f64::from(u8::from(prev_treated)) + cov_sum
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimSeries {
    pub covariates: Vec<[f64; N_COVARIATES]>,
    pub treatments: Vec<bool>,
    pub outcomes: Vec<f64>,
    /// `p_t(1 | F_t)` under the generating mechanism.
    pub true_p: Vec<f64>,
}

impl SimSeries {
    pub fn len(&self) -> usize {
        self.treatments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.treatments.is_empty()
    }

    pub fn cov_sum(&self, t: usize) -> f64 {
        self.covariates[t].iter().sum()
    }

    /// Observed `W_{t-1}`, with `W_0 = 0` before the first day.
    pub fn prev_treated(&self, t: usize) -> bool {
        t > 0 && self.treatments[t - 1]
    }

    pub fn series(&self) -> Series {
        Series::single_season(self.outcomes.clone(), self.treatments.clone()).expect("equal lengths by construction")
    }

    /// Correctly specified propensity design: `C_1..C_5` and `W_{t-1}`.
    pub fn features(&self) -> FiltrationFeatures {
        let mut names: Vec<String> = (1..=N_COVARIATES).map(|j| format!("c{j}")).collect();
        names.push("w_lag1".into());
        let rows: Vec<Vec<f64>> = (0..self.len())
            .map(|t| {
                let mut r = self.covariates[t].to_vec();
                r.push(if self.prev_treated(t) { 1.0 } else { 0.0 });
                r
            })
            .collect();
        FiltrationFeatures::from_rows(names, &rows).expect("rectangular rows")
    }

    /// Share of days whose true propensity lies outside `[0.1, 0.9]`.
    pub fn nonoverlap_fraction(&self) -> f64 {
        let n = self.true_p.iter().filter(|&&p| !(0.1..=0.9).contains(&p)).count();
        n as f64 / self.len() as f64
    }

    pub fn to_panel(&self, unit_id: &str, season_id: &str, start: NaiveDate) -> TimeSeriesPanel {
        let mut panel = TimeSeriesPanel::new(unit_id, (1..=N_COVARIATES).map(|j| format!("c{j}")).collect());
        for t in 0..self.len() {
            panel.records.push(DayRecord {
                date: start + chrono::Duration::days(t as i64),
                season_id: season_id.to_string(),
                treatment: if self.treatments[t] { 1.0 } else { 0.0 },
                outcome: self.outcomes[t],
                is_holiday: false,
                covariates: self.covariates[t].to_vec(),
            });
        }
        panel
    }
}

pub fn generate_with_rng<R: Rng>(t_len: usize, rng: &mut R) -> SimSeries {
    let mut s = SimSeries {
        covariates: Vec::with_capacity(t_len),
        treatments: Vec::with_capacity(t_len),
        outcomes: Vec::with_capacity(t_len),
        true_p: Vec::with_capacity(t_len),
    };
    let mut prev = false;
    for _ in 0..t_len {
        let mut c = [0.0; N_COVARIATES];
        for v in c.iter_mut() {
            *v = rng.sample(StandardNormal);
        }
        let cov_sum: f64 = c.iter().sum();
        let p = true_propensity(cov_sum, prev);
        let w = rng.random::<f64>() < p;
        let noise: f64 = rng.sample(StandardNormal);
        s.covariates.push(c);
        s.true_p.push(p);
        s.treatments.push(w);
        s.outcomes.push(outcome_mean(w, prev, cov_sum) + noise);
        prev = w;
    }
    s
}

pub fn generate_dgp(config: DgpConfig) -> SimSeries {
    assert!(config.t_len >= 2, "series length must be at least 2");
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let s = generate_with_rng(config.t_len, &mut rng);
    // Reading "10 x C_t" as ten times the covariate sum puts ~92% of days
    // outside [0.1, 0.9]; long series must reproduce that regime.
    debug_assert!(config.t_len < 2000 || s.nonoverlap_fraction() > 0.8);
    s
}
