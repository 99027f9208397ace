//! Time-varying propensity scores and their incremental (odds-multiplier)
//! transformation.

pub mod ensemble;
pub mod logistic;
pub mod stumps;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::FiltrationFeatures;

pub use ensemble::{fit_stacked_ensemble, BaseLearner, StackedEnsemble};
pub use logistic::{fit_logistic, LogisticFit};

pub const DEFAULT_EPSILON: f64 = 1e-6;
pub const DEFAULT_RIDGE: f64 = 1e-4;
pub const MODEL_FORMAT_VERSION: u32 = 1;

pub fn expit(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn check_delta(delta: f64) -> Result<()> {
    if delta > 0.0 && delta.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!(
            "odds multiplier must be positive and finite, got {delta}"
        )))
    }
}

/// Treatment probability after multiplying the odds by `delta`:
/// `delta * p / (delta * p + 1 - p)`.
pub fn incremental_propensity(p: f64, delta: f64) -> Result<f64> {
    check_delta(delta)?;
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::InvalidArgument(format!("probability out of range: {p}")));
    }
    // 1 + (delta - 1) p equals delta p + 1 - p and is exactly 1 at delta = 1.
    Ok(delta * p / (1.0 + (delta - 1.0) * p))
}

/// An odds-multiplier intervention, constant or varying by day.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum IncrementalPolicy {
    Constant(f64),
    Path(Vec<f64>),
}

impl IncrementalPolicy {
    pub fn constant(delta: f64) -> Result<Self> {
        check_delta(delta)?;
        Ok(Self::Constant(delta))
    }

    pub fn path(deltas: Vec<f64>) -> Result<Self> {
        for &d in &deltas {
            check_delta(d)?;
        }
        Ok(Self::Path(deltas))
    }

    /// Odds multiplier on day `t`. A path shorter than the series repeats its
    /// last value.
    pub fn delta_at(&self, t: usize) -> f64 {
        match self {
            Self::Constant(d) => *d,
            Self::Path(p) => p[t.min(p.len() - 1)],
        }
    }

    pub fn is_identity(&self) -> bool {
        match self {
            Self::Constant(d) => *d == 1.0,
            Self::Path(p) => p.iter().all(|&d| d == 1.0),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Self::Constant(d) => check_delta(*d),
            Self::Path(p) if p.is_empty() => Err(Error::InvalidArgument("empty delta path".into())),
            Self::Path(p) => p.iter().try_for_each(|&d| check_delta(d)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitDiagnostics {
    pub iterations: usize,
    pub gradient_norm: f64,
    pub converged: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LearnerKind {
    Logistic,
    Ensemble,
}

impl std::str::FromStr for LearnerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "logistic" => Ok(Self::Logistic),
            "ensemble" => Ok(Self::Ensemble),
            other => Err(Error::InvalidArgument(format!(
                "unknown propensity model `{other}` (expected logistic or ensemble)"
            ))),
        }
    }
}

impl std::fmt::Display for LearnerKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Logistic => "logistic",
            Self::Ensemble => "ensemble",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Predictor {
    Logistic(LogisticFit),
    Ensemble(StackedEnsemble),
}

/// A fitted propensity model with its clipping policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropensityModel {
    pub format_version: u32,
    pub epsilon: f64,
    pub n_features: usize,
    pub feature_names: Vec<String>,
    pub predictor: Predictor,
    pub diagnostics: FitDiagnostics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PropensityConfig {
    pub model: LearnerKind,
    pub ridge: f64,
    pub epsilon: f64,
    pub k_folds: usize,
}

impl Default for PropensityConfig {
    fn default() -> Self {
        Self {
            model: LearnerKind::Logistic,
            ridge: DEFAULT_RIDGE,
            epsilon: DEFAULT_EPSILON,
            k_folds: 5,
        }
    }
}

fn check_epsilon(eps: f64) -> Result<()> {
    if (0.0..0.5).contains(&eps) {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!(
            "epsilon must be in [0, 0.5), got {eps}"
        )))
    }
}

impl PropensityModel {
    pub fn kind(&self) -> LearnerKind {
        match self.predictor {
            Predictor::Logistic(_) => LearnerKind::Logistic,
            Predictor::Ensemble(_) => LearnerKind::Ensemble,
        }
    }

    pub fn from_logistic(fit: LogisticFit, epsilon: f64, diagnostics: FitDiagnostics) -> Self {
        Self {
            format_version: MODEL_FORMAT_VERSION,
            epsilon,
            n_features: fit.n_features(),
            feature_names: Vec::new(),
            predictor: Predictor::Logistic(fit),
            diagnostics,
        }
    }

    pub fn fit(features: &FiltrationFeatures, treatments: &[bool], config: &PropensityConfig) -> Result<Self> {
        check_epsilon(config.epsilon)?;
        let (predictor, diagnostics) = match config.model {
            LearnerKind::Logistic => {
                let (fit, d) = fit_logistic(features, treatments, config.ridge)?;
                (Predictor::Logistic(fit), d)
            }
            LearnerKind::Ensemble => {
                let lib = BaseLearner::default_library(config.ridge);
                let (ens, d) = fit_stacked_ensemble(features, treatments, &lib, config.k_folds, config.epsilon)?;
                (Predictor::Ensemble(ens), d)
            }
        };
        Ok(Self {
            format_version: MODEL_FORMAT_VERSION,
            epsilon: config.epsilon,
            n_features: features.n_cols(),
            feature_names: features.names.clone(),
            predictor,
            diagnostics,
        })
    }

    pub fn predict_row(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.n_features {
            return Err(Error::ArityMismatch {
                expected: self.n_features,
                found: x.len(),
            });
        }
        let raw = match &self.predictor {
            Predictor::Logistic(f) => f.raw_probability(x),
            Predictor::Ensemble(e) => e.raw_probability(x),
        };
        Ok(raw.clamp(self.epsilon, 1.0 - self.epsilon))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let m: Self = serde_json::from_str(s)?;
        if m.format_version != MODEL_FORMAT_VERSION {
            return Err(Error::Parse(format!(
                "unsupported propensity model format version {}",
                m.format_version
            )));
        }
        Ok(m)
    }
}

/// Clipped `p_hat_t(1 | F_t)` for every row.
pub fn predict_propensity(model: &PropensityModel, features: &FiltrationFeatures) -> Result<Vec<f64>> {
    features.rows().map(|r| model.predict_row(r)).collect()
}
