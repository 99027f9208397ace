//! t0-step inverse-probability estimators under incremental interventions.
//!
//! For day `t` the estimate is `Y_t` times the product over the last `t0` days
//! of `[W_s * delta + (1 - W_s)] / [delta * p_s + 1 - p_s]`. Windows restart at
//! every season boundary, so days with fewer than `t0 - 1` predecessors in
//! their season are not usable.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::panel::{DayMask, TimeSeriesPanel};
use crate::propensity::{incremental_propensity, IncrementalPolicy};

/// Observed outcomes and treatments with their season layout.
#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub outcomes: Vec<f64>,
    pub treatments: Vec<bool>,
    /// Zero-based day index within the season.
    pub season_pos: Vec<usize>,
    pub n_seasons: usize,
}

impl Series {
    pub fn single_season(outcomes: Vec<f64>, treatments: Vec<bool>) -> Result<Self> {
        if outcomes.len() != treatments.len() {
            return Err(Error::InvalidArgument(
                "outcomes and treatments differ in length".into(),
            ));
        }
        let n = outcomes.len();
        Ok(Self {
            outcomes,
            treatments,
            season_pos: (0..n).collect(),
            n_seasons: 1,
        })
    }

    pub fn from_panel(panel: &TimeSeriesPanel) -> Self {
        Self {
            outcomes: panel.outcomes(),
            treatments: panel.treatments(),
            season_pos: panel.season_positions(),
            n_seasons: panel.seasons().len(),
        }
    }

    pub fn len(&self) -> usize {
        self.outcomes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.outcomes.is_empty()
    }

    /// Same series with every outcome multiplied by `c`.
    pub fn scaled(&self, c: f64) -> Self {
        Self {
            outcomes: self.outcomes.iter().map(|y| c * y).collect(),
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimandKind {
    #[default]
    TemporalAverage,
    /// Per-season total over the usable days.
    TemporalTotal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimationConfig {
    pub t0: usize,
    pub delta_grid: Vec<f64>,
    pub alpha: f64,
    pub day_filter: Option<DayMask>,
    pub estimand: EstimandKind,
}

impl EstimationConfig {
    pub fn new(t0: usize, delta_grid: Vec<f64>) -> Self {
        Self {
            t0,
            delta_grid,
            alpha: 0.05,
            day_filter: None,
            estimand: EstimandKind::TemporalAverage,
        }
    }

    pub fn validate(&self, series_len: usize) -> Result<()> {
        if self.t0 == 0 || self.t0 > series_len {
            return Err(Error::InvalidArgument(format!(
                "t0 must be in 1..={series_len}, got {}",
                self.t0
            )));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "alpha must be in (0, 1), got {}",
                self.alpha
            )));
        }
        for &d in &self.delta_grid {
            if !(d > 0.0 && d.is_finite()) {
                return Err(Error::InvalidArgument(format!("grid delta {d} is not positive")));
            }
        }
        if let Some(m) = &self.day_filter {
            if m.len() != series_len {
                return Err(Error::InvalidArgument(format!(
                    "day filter covers {} days, series has {series_len}",
                    m.len()
                )));
            }
        }
        Ok(())
    }
}

/// `delta` or 1, divided by `delta * p + 1 - p`. Equals the ratio of the
/// intervened to the observed probability of `w`.
pub fn incremental_weight(w: bool, p_hat: f64, delta: f64) -> f64 {
    debug_assert!(delta > 0.0);
    let num = if w { delta } else { 1.0 };
    num / (1.0 + (delta - 1.0) * p_hat)
}

/// Same as [`incremental_weight`] with squared numerator and denominator.
fn squared_weight(w: bool, p_hat: f64, delta: f64) -> f64 {
    let num = if w { delta * delta } else { 1.0 };
    let den = 1.0 + (delta - 1.0) * p_hat;
    num / (den * den)
}

fn check_inputs(series: &Series, p_hats: &[f64]) -> Result<()> {
    if p_hats.len() != series.len() {
        return Err(Error::InvalidArgument(format!(
            "{} propensities for a series of length {}",
            p_hats.len(),
            series.len()
        )));
    }
    Ok(())
}

/// Product of incremental weights over the `t0` days ending at `t`.
pub fn window_weight(series: &Series, p_hats: &[f64], policy: &IncrementalPolicy, t0: usize, t: usize) -> f64 {
    (t + 1 - t0..=t)
        .map(|s| incremental_weight(series.treatments[s], p_hats[s], policy.delta_at(s)))
        .product()
}

fn window_weight_sq(series: &Series, p_hats: &[f64], policy: &IncrementalPolicy, t0: usize, t: usize) -> f64 {
    (t + 1 - t0..=t)
        .map(|s| squared_weight(series.treatments[s], p_hats[s], policy.delta_at(s)))
        .product()
}

/// Single-day estimate `Y_t * prod weights`.
pub fn point_estimate_t(
    series: &Series,
    p_hats: &[f64],
    policy: &IncrementalPolicy,
    t0: usize,
    t: usize,
) -> Result<f64> {
    check_inputs(series, p_hats)?;
    if t0 == 0 || t >= series.len() || series.season_pos[t] + 1 < t0 {
        return Err(Error::InvalidArgument(format!(
            "day {t} has fewer than {t0} days of season history"
        )));
    }
    Ok(series.outcomes[t] * window_weight(series, p_hats, policy, t0, t))
}

/// Days with a full window inside their season that pass the filter.
pub fn usable_days(series: &Series, t0: usize, filter: Option<&DayMask>) -> Vec<usize> {
    (0..series.len())
        .filter(|&t| series.season_pos[t] + 1 >= t0 && filter.is_none_or(|m| m.get(t)))
        .collect()
}

fn n_seasons_among(series: &Series, days: &[usize]) -> usize {
    // Usable days are sorted; a season starts wherever a position-0 day
    // lies between consecutive usable days.
    let mut n = 0;
    let mut prev: Option<usize> = None;
    for &t in days {
        let new = prev.is_none_or(|p| season_break(series, p, t));
        if new {
            n += 1;
        }
        prev = Some(t);
    }
    n
}

fn season_break(series: &Series, from: usize, to: usize) -> bool {
    (from + 1..=to).any(|s| series.season_pos[s] == 0)
}

/// Point estimate and pooled variance over a fixed set of days.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DayEstimate {
    /// Temporal average over the days.
    pub tau_hat: f64,
    /// Mean of `V_t - tau_hat^2`, floored at zero.
    pub sigma_hat: f64,
    pub n_days: usize,
}

/// One pass over `days` computing the temporal average and its variance.
pub fn estimate_over_days(
    series: &Series,
    p_hats: &[f64],
    policy: &IncrementalPolicy,
    t0: usize,
    days: &[usize],
) -> Result<DayEstimate> {
    if days.is_empty() {
        return Err(Error::EmptyDaySet { t0 });
    }
    let (mut s1, mut s2) = (0.0, 0.0);
    for &t in days {
        let y = series.outcomes[t];
        s1 += y * window_weight(series, p_hats, policy, t0, t);
        s2 += y * y * window_weight_sq(series, p_hats, policy, t0, t);
    }
    let n = days.len() as f64;
    let tau = s1 / n;
    Ok(DayEstimate {
        tau_hat: tau,
        sigma_hat: (s2 / n - tau * tau).max(0.0),
        n_days: days.len(),
    })
}

fn prepare(
    series: &Series,
    p_hats: &[f64],
    policy: &IncrementalPolicy,
    config: &EstimationConfig,
) -> Result<Vec<usize>> {
    check_inputs(series, p_hats)?;
    config.validate(series.len())?;
    policy.validate()?;
    let days = usable_days(series, config.t0, config.day_filter.as_ref());
    if days.is_empty() {
        return Err(Error::EmptyDaySet { t0: config.t0 });
    }
    Ok(days)
}

/// Temporal average (or per-season total) of the single-day estimates, with
/// the number of days used.
pub fn temporal_average(
    series: &Series,
    p_hats: &[f64],
    policy: &IncrementalPolicy,
    config: &EstimationConfig,
) -> Result<(f64, usize)> {
    let days = prepare(series, p_hats, policy, config)?;
    let sum: f64 = days
        .iter()
        .map(|&t| series.outcomes[t] * window_weight(series, p_hats, policy, config.t0, t))
        .sum();
    let value = match config.estimand {
        EstimandKind::TemporalAverage => sum / days.len() as f64,
        EstimandKind::TemporalTotal => sum / n_seasons_among(series, &days) as f64,
    };
    Ok((value, days.len()))
}

/// Pooled variance estimate: mean over usable days of
/// `Y_t^2 * prod [W_s delta^2 + 1 - W_s] / [delta p_s + 1 - p_s]^2 - tau_hat^2`,
/// floored at zero.
pub fn variance_estimate(
    series: &Series,
    p_hats: &[f64],
    policy: &IncrementalPolicy,
    config: &EstimationConfig,
) -> Result<f64> {
    let days = prepare(series, p_hats, policy, config)?;
    Ok(estimate_over_days(series, p_hats, policy, config.t0, &days)?.sigma_hat)
}

pub fn normal_quantile(alpha: f64) -> f64 {
    Normal::standard().inverse_cdf(1.0 - alpha / 2.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectPoint {
    pub delta: f64,
    pub tau_hat: f64,
    pub sigma_hat: f64,
    pub band_lo: f64,
    pub band_hi: f64,
    pub effect: f64,
    pub effect_lo: f64,
    pub effect_hi: f64,
    pub n_days: usize,
    /// Variance of `effect`, ignoring covariance with the baseline.
    pub effect_var: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectCurve {
    pub t0: usize,
    pub alpha: f64,
    pub estimand: EstimandKind,
    pub n_days: usize,
    /// Multiplier from daily averages to reported values (1 for averages,
    /// usable days per season for totals).
    pub scale: f64,
    /// Effect bands treat the estimate at delta and at 1 as independent.
    pub covariance_ignored: bool,
    pub points: Vec<EffectPoint>,
}

impl EffectCurve {
    pub fn deltas(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.delta).collect()
    }

    pub fn point_at(&self, delta: f64) -> Option<&EffectPoint> {
        self.points.iter().find(|p| p.delta == delta)
    }
}

/// Estimates, bands and baseline-differenced effects at every grid delta.
pub fn effect_curve(series: &Series, p_hats: &[f64], config: &EstimationConfig) -> Result<EffectCurve> {
    let days = prepare(series, p_hats, &IncrementalPolicy::Constant(1.0), config)?;
    let t0 = config.t0;
    let z = normal_quantile(config.alpha);
    let n = days.len() as f64;
    let scale = match config.estimand {
        EstimandKind::TemporalAverage => 1.0,
        EstimandKind::TemporalTotal => n / n_seasons_among(series, &days) as f64,
    };

    let base = estimate_over_days(series, p_hats, &IncrementalPolicy::Constant(1.0), t0, &days)?;
    let points = config
        .delta_grid
        .par_iter()
        .map(|&delta| {
            let est = if delta == 1.0 {
                base
            } else {
                estimate_over_days(series, p_hats, &IncrementalPolicy::Constant(delta), t0, &days)?
            };
            let half = z * (est.sigma_hat / n).sqrt();
            let (effect_var, effect_half) = if delta == 1.0 {
                (0.0, 0.0)
            } else {
                let v = (est.sigma_hat + base.sigma_hat) / n;
                (v, z * v.sqrt())
            };
            let effect = est.tau_hat - base.tau_hat;
            Ok(EffectPoint {
                delta,
                tau_hat: scale * est.tau_hat,
                sigma_hat: est.sigma_hat,
                band_lo: scale * (est.tau_hat - half),
                band_hi: scale * (est.tau_hat + half),
                effect: scale * effect,
                effect_lo: scale * (effect - effect_half),
                effect_hi: scale * (effect + effect_half),
                n_days: days.len(),
                effect_var: scale * scale * effect_var,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(EffectCurve {
        t0,
        alpha: config.alpha,
        estimand: config.estimand,
        n_days: days.len(),
        scale,
        covariance_ignored: true,
        points,
    })
}

/// `n` grid points from `min` to `max`, evenly spaced on a linear or log scale.
/// Endpoints are exact.
pub fn delta_grid(min: f64, max: f64, n: usize, log_spacing: bool) -> Result<Vec<f64>> {
    if !(min > 0.0 && max >= min && n >= 1) {
        return Err(Error::InvalidArgument(format!(
            "invalid delta grid: min {min}, max {max}, points {n}"
        )));
    }
    if n == 1 {
        return Ok(vec![min]);
    }
    let step = |i: usize| i as f64 / (n - 1) as f64;
    Ok((0..n)
        .map(|i| {
            if i == 0 {
                min
            } else if i == n - 1 {
                max
            } else if log_spacing {
                (min.ln() + step(i) * (max.ln() - min.ln())).exp()
            } else {
                min + step(i) * (max - min)
            }
        })
        .collect())
}

/// Expected number of treated days under the intervention.
pub fn expected_treatment_count(p_hats: &[f64], delta: f64, filter: Option<&DayMask>) -> Result<f64> {
    let mut total = 0.0;
    for (t, &p) in p_hats.iter().enumerate() {
        if filter.is_none_or(|m| m.get(t)) {
            total += incremental_propensity(p, delta)?;
        }
    }
    Ok(total)
}

/// Independent Bernoulli draws at the intervened probabilities.
pub fn sample_counterfactual_path(p_hats: &[f64], delta: f64, seed: u64) -> Result<Vec<bool>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    p_hats
        .iter()
        .map(|&p| Ok(rng.random::<f64>() < incremental_propensity(p, delta)?))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn toy() -> (Series, Vec<f64>) {
        let s = Series::single_season(vec![1.0, 2.0, 3.0], vec![true, false, true]).unwrap();
        (s, vec![0.25, 0.5, 0.8])
    }

    #[test]
    fn weight_examples() {
        assert_abs_diff_eq!(incremental_weight(true, 0.25, 2.0), 1.6, epsilon = 1e-15);
        assert_abs_diff_eq!(incremental_weight(false, 0.25, 2.0), 0.8, epsilon = 1e-15);
        for p in [0.0, 0.3, 1.0] {
            assert_eq!(incremental_weight(true, p, 1.0), 1.0);
            assert_eq!(incremental_weight(false, p, 1.0), 1.0);
        }
    }

    #[test]
    fn point_estimate_examples() {
        let s = Series::single_season(vec![5.0, 2.0], vec![true, false]).unwrap();
        let p = [0.25, 0.5];
        let v = point_estimate_t(&s, &p, &IncrementalPolicy::Constant(2.0), 2, 1).unwrap();
        assert_abs_diff_eq!(v, 2.0 * 1.6 / 1.5, epsilon = 1e-14);
        let one = point_estimate_t(&s, &p, &IncrementalPolicy::Constant(1.0), 2, 1).unwrap();
        assert_eq!(one, 2.0);
        assert!(point_estimate_t(&s, &p, &IncrementalPolicy::Constant(2.0), 2, 0).is_err());
        let z = Series::single_season(vec![0.0, 0.0], vec![true, true]).unwrap();
        assert_eq!(
            point_estimate_t(&z, &p, &IncrementalPolicy::Constant(9.0), 2, 1).unwrap(),
            0.0
        );
    }

    #[test]
    fn toy_series_average_and_variance() {
        let (s, p) = toy();
        let cfg = EstimationConfig::new(2, vec![2.0]);
        let pol = IncrementalPolicy::Constant(2.0);
        // Day weights: w1 = 2/1.25 = 1.6, w2 = 1/1.5, w3 = 2/1.8.
        let (w1, w2, w3) = (1.6, 1.0 / 1.5, 2.0 / 1.8);
        let e2 = 2.0 * w1 * w2;
        let e3 = 3.0 * w2 * w3;
        let (tau, n) = temporal_average(&s, &p, &pol, &cfg).unwrap();
        assert_eq!(n, 2);
        assert_abs_diff_eq!(tau, (e2 + e3) / 2.0, epsilon = 1e-14);

        let v2 = 4.0 * (4.0 / 1.5625) * (1.0 / 2.25);
        let v3 = 9.0 * (1.0 / 2.25) * (4.0 / 3.24);
        let sigma = variance_estimate(&s, &p, &pol, &cfg).unwrap();
        assert_abs_diff_eq!(sigma, (v2 + v3) / 2.0 - tau * tau, epsilon = 1e-13);
    }

    #[test]
    fn identity_and_filters() {
        let (s, p) = toy();
        let mut cfg = EstimationConfig::new(1, vec![1.0]);
        let one = IncrementalPolicy::Constant(1.0);
        assert_eq!(temporal_average(&s, &p, &one, &cfg).unwrap(), (2.0, 3));
        cfg.day_filter = Some(DayMask(vec![true, false, true]));
        assert_eq!(temporal_average(&s, &p, &one, &cfg).unwrap(), (2.0, 2));
        cfg.day_filter = Some(DayMask(vec![false; 3]));
        assert!(matches!(
            temporal_average(&s, &p, &one, &cfg),
            Err(Error::EmptyDaySet { .. })
        ));
        cfg.day_filter = Some(DayMask::all(3));
        cfg.t0 = 2;
        let full = temporal_average(&s, &p, &IncrementalPolicy::Constant(3.0), &cfg).unwrap();
        cfg.day_filter = None;
        let none = temporal_average(&s, &p, &IncrementalPolicy::Constant(3.0), &cfg).unwrap();
        assert_eq!(full, none);
    }

    #[test]
    fn curve_on_toy_series() {
        let (s, p) = toy();
        let cfg = EstimationConfig::new(2, vec![0.5, 1.0, 2.0]);
        let c = effect_curve(&s, &p, &cfg).unwrap();
        assert_eq!(c.points.len(), 3);
        let at1 = c.point_at(1.0).unwrap();
        assert_eq!(at1.effect, 0.0);
        assert_eq!(at1.effect_lo, 0.0);
        assert_eq!(at1.effect_hi, 0.0);
        assert_eq!(at1.tau_hat, 2.5);
        for (pt, d) in c.points.iter().zip([0.5, 1.0, 2.0]) {
            let pol = IncrementalPolicy::Constant(d);
            let (tau, _) = temporal_average(&s, &p, &pol, &cfg).unwrap();
            let sig = variance_estimate(&s, &p, &pol, &cfg).unwrap();
            assert_abs_diff_eq!(pt.tau_hat, tau, epsilon = 1e-14);
            assert_abs_diff_eq!(pt.sigma_hat, sig, epsilon = 1e-14);
            assert!(pt.band_lo <= pt.tau_hat && pt.tau_hat <= pt.band_hi);
            assert_abs_diff_eq!(pt.effect, tau - 2.5, epsilon = 1e-14);
            let half = 1.959963984540054 * (sig / 2.0).sqrt();
            assert_abs_diff_eq!(pt.band_hi - pt.tau_hat, half, epsilon = 1e-12);
        }
    }

    #[test]
    fn seasons_restart_windows_and_totals() {
        let s = Series {
            outcomes: vec![1.0, 2.0, 3.0, 10.0, 20.0, 30.0],
            treatments: vec![false; 6],
            season_pos: vec![0, 1, 2, 0, 1, 2],
            n_seasons: 2,
        };
        let p = vec![0.5; 6];
        assert_eq!(usable_days(&s, 2, None), vec![1, 2, 4, 5]);
        let mut cfg = EstimationConfig::new(2, vec![1.0]);
        cfg.estimand = EstimandKind::TemporalTotal;
        let (total, n) = temporal_average(&s, &p, &IncrementalPolicy::Constant(1.0), &cfg).unwrap();
        assert_eq!(n, 4);
        assert_eq!(total, (2.0 + 3.0 + 20.0 + 30.0) / 2.0);
        let c = effect_curve(&s, &p, &cfg).unwrap();
        assert_eq!(c.scale, 2.0);
        assert_eq!(c.points[0].tau_hat, total);
    }

    #[test]
    fn grid_construction() {
        let g = delta_grid(0.1, 10.0, 50, false).unwrap();
        assert_eq!(g.len(), 50);
        assert_eq!((g[0], g[49]), (0.1, 10.0));
        let g = delta_grid((-2.3f64).exp(), 2.3f64.exp(), 21, true).unwrap();
        assert_abs_diff_eq!(g[10], 1.0, epsilon = 1e-12);
        assert!(delta_grid(0.0, 1.0, 3, false).is_err());
    }

    #[test]
    fn treatment_counts() {
        let p = [0.25, 0.5, 0.8];
        assert_abs_diff_eq!(expected_treatment_count(&p, 1.0, None).unwrap(), 1.55, epsilon = 1e-15);
        assert_abs_diff_eq!(
            expected_treatment_count(&p, 2.0, None).unwrap(),
            0.4 + 2.0 / 3.0 + 8.0 / 9.0,
            epsilon = 1e-14
        );
        let half = vec![0.5; 100];
        let big = expected_treatment_count(&half, 1e6, None).unwrap();
        assert!((big - 100.0).abs() < 0.1);
        let mask = DayMask(vec![true, false, true]);
        assert_abs_diff_eq!(
            expected_treatment_count(&p, 1.0, Some(&mask)).unwrap(),
            1.05,
            epsilon = 1e-15
        );
    }

    #[test]
    fn counterfactual_paths_are_seeded() {
        let p: Vec<f64> = (0..200).map(|i| i as f64 / 200.0).collect();
        let a = sample_counterfactual_path(&p, 3.0, 11).unwrap();
        assert_eq!(a, sample_counterfactual_path(&p, 3.0, 11).unwrap());
        assert_ne!(a, sample_counterfactual_path(&p, 3.0, 12).unwrap());
        assert!(!a[0]);
        let ones = sample_counterfactual_path(&[1.0; 5], 0.5, 1).unwrap();
        assert!(ones.iter().all(|&w| w));
    }
}
