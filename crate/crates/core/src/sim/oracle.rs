//! Ground-truth t0-step estimands for simulated series.
//!
//! For each usable day the last `t0` treatments are redrawn from the
//! intervened propensities, conditional on the observed path before the
//! window. Propensities inside the window depend on the redrawn previous
//! treatment. Covariates are i.i.d., so no covariate rollout is needed.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::dgp::{outcome_mean, true_propensity, SimSeries};
use crate::error::{Error, Result};
use crate::panel::DayMask;
use crate::propensity::IncrementalPolicy;

/// Largest `t0` accepted by the enumeration oracle (`2^20` paths per day).
pub const MAX_ENUMERATION_STEPS: usize = 20;

fn intervened(p: f64, delta: f64) -> f64 {
    delta * p / (1.0 + (delta - 1.0) * p)
}

fn usable(series: &SimSeries, t0: usize, filter: Option<&DayMask>) -> Result<Vec<usize>> {
    if t0 == 0 || t0 > series.len() {
        return Err(Error::InvalidArgument(format!(
            "t0 must be in 1..={}, got {t0}",
            series.len()
        )));
    }
    if let Some(m) = filter {
        if m.len() != series.len() {
            return Err(Error::InvalidArgument("day filter length mismatch".into()));
        }
    }
    let days: Vec<usize> = (t0 - 1..series.len())
        .filter(|&t| filter.is_none_or(|m| m.get(t)))
        .collect();
    if days.is_empty() {
        return Err(Error::EmptyDaySet { t0 });
    }
    Ok(days)
}

/// Sums `prob(path) * E[Y_t | path]` over every treatment path of the window
/// by depth-first enumeration.
fn enumerate_day(series: &SimSeries, policy: &IncrementalPolicy, t0: usize, t: usize) -> f64 {
    fn go(series: &SimSeries, policy: &IncrementalPolicy, s: usize, t: usize, prev: bool, prob: f64) -> f64 {
        let q = intervened(true_propensity(series.cov_sum(s), prev), policy.delta_at(s));
        let mut acc = 0.0;
        for (w, pw) in [(true, q), (false, 1.0 - q)] {
            if pw == 0.0 {
                continue;
            }
            acc += if s == t {
                prob * pw * outcome_mean(w, prev, series.cov_sum(t))
            } else {
                go(series, policy, s + 1, t, w, prob * pw)
            };
        }
        acc
    }
    let start = t + 1 - t0;
    go(series, policy, start, t, series.prev_treated(start), 1.0)
}

/// Per-day true values `tau_t` over the usable days.
pub fn oracle_days(
    series: &SimSeries,
    policy: &IncrementalPolicy,
    t0: usize,
    filter: Option<&DayMask>,
) -> Result<Vec<f64>> {
    if t0 > MAX_ENUMERATION_STEPS {
        return Err(Error::InvalidArgument(format!(
            "t0 = {t0} exceeds the enumeration limit of {MAX_ENUMERATION_STEPS}"
        )));
    }
    policy.validate()?;
    Ok(usable(series, t0, filter)?
        .into_iter()
        .map(|t| enumerate_day(series, policy, t0, t))
        .collect())
}

/// Temporal average of the true t0-step estimand.
pub fn oracle_estimand(
    series: &SimSeries,
    policy: &IncrementalPolicy,
    t0: usize,
    filter: Option<&DayMask>,
) -> Result<f64> {
    let v = oracle_days(series, policy, t0, filter)?;
    Ok(v.iter().sum::<f64>() / v.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MonteCarloEstimate {
    pub mean: f64,
    pub std_error: f64,
}

/// Rollout oracle: each rollout redraws every usable day's window and
/// averages the conditional outcome means over days.
pub fn oracle_monte_carlo(
    series: &SimSeries,
    policy: &IncrementalPolicy,
    t0: usize,
    filter: Option<&DayMask>,
    rollouts: usize,
    seed: u64,
) -> Result<MonteCarloEstimate> {
    policy.validate()?;
    if rollouts < 2 {
        return Err(Error::InvalidArgument("need at least 2 rollouts".into()));
    }
    let days = usable(series, t0, filter)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut s1, mut s2) = (0.0, 0.0);
    for _ in 0..rollouts {
        let mut acc = 0.0;
        for &t in &days {
            let start = t + 1 - t0;
            let mut prev = series.prev_treated(start);
            let mut value = 0.0;
            for s in start..=t {
                let q = intervened(true_propensity(series.cov_sum(s), prev), policy.delta_at(s));
                let w = rng.random::<f64>() < q;
                if s == t {
                    value = outcome_mean(w, prev, series.cov_sum(t));
                }
                prev = w;
            }
            acc += value;
        }
        let x = acc / days.len() as f64;
        s1 += x;
        s2 += x * x;
    }
    let n = rollouts as f64;
    let mean = s1 / n;
    let var = ((s2 - n * mean * mean) / (n - 1.0)).max(0.0);
    Ok(MonteCarloEstimate {
        mean,
        std_error: (var / n).sqrt(),
    })
}
