//! Causal effect estimation for time series under incremental propensity
//! score interventions.
//!
//! The pipeline per unit is: build filtration features from a
//! [`TimeSeriesPanel`], fit a [`PropensityModel`], then trace an
//! [`EffectCurve`] over a grid of odds multipliers. Curves from many units are
//! pooled with [`meta::pool_curves`]. The [`sim`] module generates synthetic
//! series with a known ground truth for checking the estimators.

pub mod error;
pub mod estimator;
pub mod features;
pub mod io;
pub mod meta;
pub mod panel;
pub mod propensity;
pub mod sim;

pub use error::{Error, Result};
pub use estimator::{
    delta_grid, effect_curve, expected_treatment_count, incremental_weight, point_estimate_t,
    sample_counterfactual_path, temporal_average, variance_estimate, EffectCurve, EffectPoint, EstimandKind,
    EstimationConfig, Series,
};
pub use features::{build_filtration_features, FeatureSpec, FiltrationFeatures};
pub use meta::{
    estimate_tau2, heterogeneity_test, pool_curves, pool_random_effects, MetaResult, PooledCurve, StudyEstimate,
    UnitCurve,
};
pub use panel::{hot_day_filter, validate_panel, DayMask, DayRecord, TimeSeriesPanel, ValidationReport};
pub use propensity::{
    incremental_propensity, predict_propensity, IncrementalPolicy, LearnerKind, PropensityConfig, PropensityModel,
};
