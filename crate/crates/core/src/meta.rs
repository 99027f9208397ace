//! Random-effects pooling of per-unit estimates (DerSimonian-Laird).

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::error::{Error, Result};
use crate::estimator::{normal_quantile, EffectCurve};

/// Floor applied to within-study variances.
pub const MIN_VARIANCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyEstimate {
    pub unit_id: String,
    pub estimate: f64,
    pub within_variance: f64,
}

impl StudyEstimate {
    pub fn new(unit_id: impl Into<String>, estimate: f64, within_variance: f64) -> Self {
        Self {
            unit_id: unit_id.into(),
            estimate,
            within_variance,
        }
    }

    fn variance(&self) -> f64 {
        self.within_variance.max(MIN_VARIANCE)
    }

    pub fn is_usable(&self) -> bool {
        self.estimate.is_finite() && self.within_variance.is_finite() && self.within_variance >= 0.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Heterogeneity {
    pub q: f64,
    pub df: usize,
    pub p_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetaResult {
    pub estimate: f64,
    pub variance: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub tau2: f64,
    /// Normalized random-effects weights, in input order.
    pub weights: Vec<f64>,
    pub heterogeneity: Heterogeneity,
}

fn check(studies: &[StudyEstimate]) -> Result<()> {
    if studies.len() < 2 {
        return Err(Error::TooFewStudies {
            needed: 2,
            found: studies.len(),
        });
    }
    if let Some(s) = studies.iter().find(|s| !s.is_usable()) {
        return Err(Error::InvalidArgument(format!(
            "study {} has estimate {} and variance {}",
            s.unit_id, s.estimate, s.within_variance
        )));
    }
    Ok(())
}

/// Input indices in a canonical order so that sums do not depend on how the
/// caller ordered the studies.
fn canonical_order(studies: &[StudyEstimate]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..studies.len()).collect();
    idx.sort_by(|&a, &b| {
        let (sa, sb) = (&studies[a], &studies[b]);
        sa.estimate
            .total_cmp(&sb.estimate)
            .then(sa.variance().total_cmp(&sb.variance()))
    });
    idx
}

struct FixedEffect {
    q: f64,
    sum_w: f64,
    sum_w2: f64,
}

fn fixed_effect(studies: &[StudyEstimate], order: &[usize]) -> FixedEffect {
    let (mut sum_w, mut sum_w2, mut sum_wx) = (0.0, 0.0, 0.0);
    for &i in order {
        let w = 1.0 / studies[i].variance();
        sum_w += w;
        sum_w2 += w * w;
        sum_wx += w * studies[i].estimate;
    }
    let mean = sum_wx / sum_w;
    let q = order
        .iter()
        .map(|&i| (studies[i].estimate - mean).powi(2) / studies[i].variance())
        .sum();
    FixedEffect { q, sum_w, sum_w2 }
}

/// Between-study variance, `max(0, (Q - (N - 1)) / (sum w - sum w^2 / sum w))`.
pub fn estimate_tau2(studies: &[StudyEstimate]) -> Result<f64> {
    check(studies)?;
    let fe = fixed_effect(studies, &canonical_order(studies));
    let c = fe.sum_w - fe.sum_w2 / fe.sum_w;
    let df = (studies.len() - 1) as f64;
    if c <= 0.0 {
        return Ok(0.0);
    }
    Ok(((fe.q - df) / c).max(0.0))
}

/// Cochran's Q against chi-square with `N - 1` degrees of freedom.
pub fn heterogeneity_test(studies: &[StudyEstimate]) -> Result<Heterogeneity> {
    check(studies)?;
    let fe = fixed_effect(studies, &canonical_order(studies));
    let df = studies.len() - 1;
    Ok(Heterogeneity {
        q: fe.q,
        df,
        p_value: chi_square_upper_tail(fe.q, df),
    })
}

pub fn chi_square_upper_tail(q: f64, df: usize) -> f64 {
    if q <= 0.0 {
        return 1.0;
    }
    let chi = ChiSquared::new(df as f64).expect("df >= 1");
    chi.sf(q)
}

/// Random-effects pooled estimate with weights `1 / (V_i + tau^2)`.
pub fn pool_random_effects(studies: &[StudyEstimate]) -> Result<MetaResult> {
    let tau2 = estimate_tau2(studies)?;
    let heterogeneity = heterogeneity_test(studies)?;
    let order = canonical_order(studies);

    let mut raw = vec![0.0; studies.len()];
    let mut total = 0.0;
    for &i in &order {
        raw[i] = 1.0 / (studies[i].variance() + tau2);
        total += raw[i];
    }
    let weights: Vec<f64> = raw.iter().map(|w| w / total).collect();
    let mut estimate = 0.0;
    for &i in &order {
        estimate += weights[i] * studies[i].estimate;
    }
    // Keep rounding from stepping outside the convex hull of the inputs.
    let lo = studies[order[0]].estimate;
    let hi = studies[*order.last().unwrap()].estimate;
    let estimate = estimate.clamp(lo, hi);
    let variance = 1.0 / total;
    let half = 1.96 * variance.sqrt();
    Ok(MetaResult {
        estimate,
        variance,
        ci_lo: estimate - half,
        ci_hi: estimate + half,
        tau2,
        weights,
        heterogeneity,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PooledPoint {
    pub delta: f64,
    pub effect: f64,
    pub variance: f64,
    pub effect_lo: f64,
    pub effect_hi: f64,
    pub tau2: f64,
    pub q: f64,
    pub df: usize,
    pub p_value: f64,
    pub n_units: usize,
    pub n_dropped: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PooledCurve {
    pub alpha: f64,
    pub points: Vec<PooledPoint>,
}

/// Per-unit effect estimates at each grid delta.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnitCurve {
    pub unit_id: String,
    pub deltas: Vec<f64>,
    pub effects: Vec<f64>,
    pub variances: Vec<f64>,
}

impl UnitCurve {
    pub fn from_effect_curve(unit_id: impl Into<String>, curve: &EffectCurve) -> Self {
        Self {
            unit_id: unit_id.into(),
            deltas: curve.deltas(),
            effects: curve.points.iter().map(|p| p.effect).collect(),
            variances: curve.points.iter().map(|p| p.effect_var).collect(),
        }
    }
}

fn pool_point(delta: f64, studies: Vec<StudyEstimate>, n_total: usize, z: f64) -> PooledPoint {
    let usable: Vec<StudyEstimate> = studies.into_iter().filter(|s| s.is_usable()).collect();
    let n_dropped = n_total - usable.len();
    let mut point = PooledPoint {
        delta,
        effect: f64::NAN,
        variance: f64::NAN,
        effect_lo: f64::NAN,
        effect_hi: f64::NAN,
        tau2: f64::NAN,
        q: f64::NAN,
        df: 0,
        p_value: f64::NAN,
        n_units: usable.len(),
        n_dropped,
    };
    match usable.len() {
        0 => {}
        1 => {
            let s = &usable[0];
            let v = s.variance();
            point.effect = s.estimate;
            point.variance = v;
            point.effect_lo = s.estimate - z * v.sqrt();
            point.effect_hi = s.estimate + z * v.sqrt();
            point.tau2 = 0.0;
            point.q = 0.0;
            point.p_value = 1.0;
        }
        _ => {
            let r = pool_random_effects(&usable).expect("two or more usable studies");
            let half = z * r.variance.sqrt();
            point.effect = r.estimate;
            point.variance = r.variance;
            point.effect_lo = r.estimate - half;
            point.effect_hi = r.estimate + half;
            point.tau2 = r.tau2;
            point.q = r.heterogeneity.q;
            point.df = r.heterogeneity.df;
            point.p_value = r.heterogeneity.p_value;
        }
    }
    point
}

/// Pools effect curves independently at every grid delta. All curves must
/// share the same grid.
pub fn pool_curves(curves: &[UnitCurve], alpha: f64) -> Result<PooledCurve> {
    let first = curves.first().ok_or(Error::TooFewStudies { needed: 1, found: 0 })?;
    for c in curves {
        if c.deltas.len() != c.effects.len() || c.deltas.len() != c.variances.len() {
            return Err(Error::InvalidArgument(format!(
                "curve for unit {} has ragged columns",
                c.unit_id
            )));
        }
        if c.deltas != first.deltas {
            return Err(Error::GridMismatch(format!(
                "unit {} grid {:?} differs from unit {} grid {:?}",
                c.unit_id, c.deltas, first.unit_id, first.deltas
            )));
        }
    }
    let z = normal_quantile(alpha);
    let points = first
        .deltas
        .par_iter()
        .enumerate()
        .map(|(j, &delta)| {
            let studies = curves
                .iter()
                .map(|c| StudyEstimate::new(c.unit_id.clone(), c.effects[j], c.variances[j]))
                .collect();
            pool_point(delta, studies, curves.len(), z)
        })
        .collect();
    Ok(PooledCurve { alpha, points })
}
