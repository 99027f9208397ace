//! Synthetic multi-unit warm-season panel with rare heat alerts.
//!
//! Each unit has a daily heat index following a seasonal cycle plus AR(1)
//! noise. Alerts are issued with a logistic probability that rises steeply
//! with heat above the unit's own climate and is higher the day after an
//! alert. Daily event counts are Poisson
//! with a rate rising with heat and reduced by 10% on alert days.

use chrono::{Datelike, NaiveDate, Weekday};
use ipsi_core::panel::{DayRecord, TimeSeriesPanel};
use ipsi_core::propensity::expit;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};

pub const SEASON_START: (u32, u32) = (5, 1);
pub const SEASON_DAYS: i64 = 153;
pub const FIRST_YEAR: i32 = 2006;

const HEAT_MEAN: f64 = 82.0;
const HEAT_AMPLITUDE: f64 = 8.0;
const AR_COEF: f64 = 0.7;
const AR_SD: f64 = 5.0;
const ALERT_INTERCEPT: f64 = -3.5;
const ALERT_SLOPE: f64 = 0.3;
const ALERT_PIVOT: f64 = 95.0;
const ALERT_REPEAT: f64 = 1.5;
const BASE_RATE: f64 = 12.0;
const HEAT_LOG_SLOPE: f64 = 0.02;
const ALERT_RATE_RATIO: f64 = 0.9;

/// US federal summer holidays inside May to September.
pub fn is_holiday(date: NaiveDate) -> bool {
    let (m, d, wd) = (date.month(), date.day(), date.weekday());
    let last_monday_of_may = m == 5 && wd == Weekday::Mon && d + 7 > 31;
    let july_fourth = m == 7 && d == 4;
    let first_monday_of_sept = m == 9 && wd == Weekday::Mon && d <= 7;
    last_monday_of_may || july_fourth || first_monday_of_sept
}

pub fn generate_demo_panels(units: usize, seasons: usize, seed: u64) -> Vec<TimeSeriesPanel> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let std = Normal::new(0.0, 1.0).expect("unit normal");
    (0..units)
        .map(|u| {
            let mut panel = TimeSeriesPanel::new(format!("county{:03}", u + 1), vec!["heat".into()]);
            let offset = 2.0 * std.sample(&mut rng);
            let log_base = (BASE_RATE * (0.5 + u as f64 / units.max(1) as f64)).ln();
            for k in 0..seasons {
                let year = FIRST_YEAR + k as i32;
                let start = NaiveDate::from_ymd_opt(year, SEASON_START.0, SEASON_START.1).expect("valid date");
                let mut ar = AR_SD / (1.0 - AR_COEF * AR_COEF).sqrt() * std.sample(&mut rng);
                let mut prev_alert = false;
                for d in 0..SEASON_DAYS {
                    let date = start + chrono::Duration::days(d);
                    ar = AR_COEF * ar + AR_SD * std.sample(&mut rng);
                    let cycle = (std::f64::consts::PI * d as f64 / (SEASON_DAYS - 1) as f64).sin();
                    let heat = HEAT_MEAN + offset + HEAT_AMPLITUDE * cycle + ar;
                    let repeat = if prev_alert { ALERT_REPEAT } else { 0.0 };
                    let p = expit(ALERT_INTERCEPT + ALERT_SLOPE * (heat - offset - ALERT_PIVOT) + repeat);
                    let alert = rand::Rng::random::<f64>(&mut rng) < p;
                    let holiday = is_holiday(date);
                    let mut rate = (log_base + HEAT_LOG_SLOPE * (heat - HEAT_MEAN)).exp();
                    if alert {
                        rate *= ALERT_RATE_RATIO;
                    }
                    if holiday {
                        rate *= 1.05;
                    }
                    let deaths = Poisson::new(rate).expect("positive rate").sample(&mut rng);
                    panel.records.push(DayRecord {
                        date,
                        season_id: year.to_string(),
                        treatment: if alert { 1.0 } else { 0.0 },
                        outcome: deaths,
                        is_holiday: holiday,
                        covariates: vec![(heat * 100.0).round() / 100.0],
                    });
                    prev_alert = alert;
                }
            }
            panel
        })
        .collect()
}

/// Share of treated days across all units.
pub fn treatment_prevalence(panels: &[TimeSeriesPanel]) -> f64 {
    let (treated, total) = panels.iter().fold((0usize, 0usize), |(t, n), p| {
        (t + p.records.iter().filter(|r| r.treated()).count(), n + p.len())
    });
    treated as f64 / total.max(1) as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use ipsi_core::validate_panel;

    #[test]
    fn holidays() {
        assert!(is_holiday(NaiveDate::from_ymd_opt(2010, 5, 31).unwrap()));
        assert!(is_holiday(NaiveDate::from_ymd_opt(2010, 7, 4).unwrap()));
        assert!(is_holiday(NaiveDate::from_ymd_opt(2010, 9, 6).unwrap()));
        assert!(!is_holiday(NaiveDate::from_ymd_opt(2010, 5, 24).unwrap()));
    }

    #[test]
    fn demo_panels_are_valid_and_alerts_are_rare() {
        let panels = generate_demo_panels(6, 3, 20);
        for p in &panels {
            assert!(validate_panel(p).is_ready());
            assert_eq!(p.seasons().len(), 3);
        }
        let prev = treatment_prevalence(&panels);
        assert!((0.01..=0.05).contains(&prev), "{prev}");
        assert_eq!(panels, generate_demo_panels(6, 3, 20));
    }
}
