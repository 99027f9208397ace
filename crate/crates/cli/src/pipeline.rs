//! Per-unit curve estimation and pooling shared by `curve`, `meta` and `demo`.

use anyhow::{Context, Result};
use ipsi_core::estimator::EffectCurve;
use ipsi_core::io::{write_curve_csv, write_pooled_csv, write_study_csv};
use ipsi_core::meta::{PooledCurve, UnitCurve};
use ipsi_core::panel::{hot_day_filter, validate_panel, TimeSeriesPanel};
use ipsi_core::{
    build_filtration_features, effect_curve, expected_treatment_count, pool_curves, predict_propensity,
    EstimationConfig, PropensityModel, Series,
};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::RunConfig;
use crate::manifest::RunRecorder;

/// Fit diagnostics written to `diagnostics.csv`, one row per fitted unit.
#[derive(Debug, Clone, Serialize)]
pub struct UnitDiagnostics {
    pub unit_id: String,
    pub n_records: usize,
    pub n_days: usize,
    pub model: String,
    pub converged: bool,
    pub iterations: usize,
    pub gradient_norm: f64,
    pub observed_treated: usize,
    pub expected_treated_delta1: f64,
    pub expected_treated_delta10: f64,
}

pub struct UnitOutcome {
    pub curve: EffectCurve,
    pub model: PropensityModel,
    pub diagnostics: UnitDiagnostics,
}

#[derive(Debug, Clone, Serialize)]
pub struct UnitFailure {
    pub unit_id: String,
    pub stage: &'static str,
    pub message: String,
}

fn run_unit(panel: &TimeSeriesPanel, cfg: &RunConfig, grid: &[f64]) -> Result<UnitOutcome, UnitFailure> {
    let fail = |stage: &'static str, message: String| UnitFailure {
        unit_id: panel.unit_id.clone(),
        stage,
        message,
    };
    let report = validate_panel(panel);
    if !report.is_ready() {
        let first: Vec<String> = report.issues.iter().take(3).map(|i| i.to_string()).collect();
        return Err(fail(
            "validate",
            format!("{} issue(s): {}", report.issues.len(), first.join("; ")),
        ));
    }
    let features = build_filtration_features(panel, &cfg.features).map_err(|e| fail("features", e.to_string()))?;
    let treatments = panel.treatments();
    let model =
        PropensityModel::fit(&features, &treatments, &cfg.propensity).map_err(|e| fail("propensity", e.to_string()))?;
    let p_hats = predict_propensity(&model, &features).map_err(|e| fail("propensity", e.to_string()))?;

    let day_filter = match &cfg.estimator.day_filter {
        Some(f) => Some(hot_day_filter(panel, &f.column, f.quantile).map_err(|e| fail("day_filter", e.to_string()))?),
        None => None,
    };
    let est = EstimationConfig {
        t0: cfg.estimator.t0,
        delta_grid: grid.to_vec(),
        alpha: cfg.estimator.alpha,
        day_filter: day_filter.clone(),
        estimand: cfg.estimator.estimand,
    };
    let curve = effect_curve(&Series::from_panel(panel), &p_hats, &est).map_err(|e| fail("estimate", e.to_string()))?;
    let expected = |d: f64| expected_treatment_count(&p_hats, d, day_filter.as_ref());
    let diagnostics = UnitDiagnostics {
        unit_id: panel.unit_id.clone(),
        n_records: panel.len(),
        n_days: curve.n_days,
        model: model.kind().to_string(),
        converged: model.diagnostics.converged,
        iterations: model.diagnostics.iterations,
        gradient_norm: model.diagnostics.gradient_norm,
        observed_treated: treatments.iter().filter(|&&w| w).count(),
        expected_treated_delta1: expected(1.0).map_err(|e| fail("estimate", e.to_string()))?,
        expected_treated_delta10: expected(10.0).map_err(|e| fail("estimate", e.to_string()))?,
    };
    Ok(UnitOutcome {
        curve,
        model,
        diagnostics,
    })
}

/// File-name-safe form of a unit id.
pub fn file_stem(unit_id: &str) -> String {
    unit_id
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' || c == '_' || c == '.' {
                c
            } else {
                '_'
            }
        })
        .collect()
}

fn csv_bytes<T: Serialize>(rows: &[T]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    w.into_inner().context("flushing csv")
}

pub struct CurveRun {
    pub curves: Vec<UnitCurve>,
    pub failures: Vec<UnitFailure>,
}

/// Estimates every unit on the current rayon pool and writes per-unit
/// artifacts under `curves/` and `models/`. Unit failures are collected
/// rather than aborting the run.
pub fn run_curves(panels: &[TimeSeriesPanel], cfg: &RunConfig, rec: &mut RunRecorder) -> Result<CurveRun> {
    let grid = cfg.estimator.grid()?;
    let results: Vec<Result<UnitOutcome, UnitFailure>> = panels.par_iter().map(|p| run_unit(p, cfg, &grid)).collect();

    let mut curves = Vec::new();
    let mut failures = Vec::new();
    let mut diagnostics = Vec::new();
    for r in results {
        match r {
            Ok(u) => {
                let id = u.diagnostics.unit_id.clone();
                let stem = file_stem(&id);
                let mut buf = Vec::new();
                write_curve_csv(&mut buf, &u.curve.points)?;
                rec.write(&format!("curves/{stem}.csv"), &buf)?;
                rec.write(
                    &format!("curves/{stem}.json"),
                    serde_json::to_string_pretty(&u.curve)?.as_bytes(),
                )?;
                rec.write(&format!("models/{stem}.json"), u.model.to_json()?.as_bytes())?;
                curves.push(UnitCurve::from_effect_curve(id, &u.curve));
                diagnostics.push(u.diagnostics);
            }
            Err(f) => {
                log::warn!("unit {} failed at {}: {}", f.unit_id, f.stage, f.message);
                failures.push(f);
            }
        }
    }
    rec.write("diagnostics.csv", &csv_bytes(&diagnostics)?)?;
    rec.write("failures.csv", &csv_bytes(&failures)?)?;
    let mut buf = Vec::new();
    write_study_csv(&mut buf, &curves)?;
    rec.write("studies.csv", &buf)?;
    Ok(CurveRun { curves, failures })
}

#[derive(Debug, Serialize)]
struct HeterogeneityRow {
    delta: f64,
    q: f64,
    df: usize,
    p_value: f64,
    tau2: f64,
    n_units: usize,
    n_dropped: usize,
}

/// Pools unit curves and writes `pooled.csv`, `pooled.json` and `heterogeneity.csv`.
pub fn run_meta(curves: &[UnitCurve], alpha: f64, rec: &mut RunRecorder) -> Result<PooledCurve> {
    let pooled = pool_curves(curves, alpha)?;
    let mut buf = Vec::new();
    write_pooled_csv(&mut buf, &pooled.points)?;
    rec.write("pooled.csv", &buf)?;
    rec.write("pooled.json", serde_json::to_string_pretty(&pooled)?.as_bytes())?;
    let het: Vec<HeterogeneityRow> = pooled
        .points
        .iter()
        .map(|p| HeterogeneityRow {
            delta: p.delta,
            q: p.q,
            df: p.df,
            p_value: p.p_value,
            tau2: p.tau2,
            n_units: p.n_units,
            n_dropped: p.n_dropped,
        })
        .collect();
    rec.write("heterogeneity.csv", &csv_bytes(&het)?)?;
    Ok(pooled)
}
