//! Stacked ensemble: base learners blended with simplex weights chosen to
//! minimize cross-validated log-loss.

use serde::{Deserialize, Serialize};

use super::logistic::{fit_logistic, LogisticFit};
use super::stumps::{fit_boosted_stumps, BoostedStumps};
use super::FitDiagnostics;
use crate::error::{Error, Result};
use crate::features::FiltrationFeatures;

pub const SIMPLEX_MAX_ITERATIONS: usize = 500;
pub const SIMPLEX_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BaseLearner {
    Logistic { ridge: f64 },
    BoostedStumps { rounds: usize, learning_rate: f64 },
}

impl BaseLearner {
    pub fn name(&self) -> String {
        match self {
            BaseLearner::Logistic { ridge } => format!("logistic(ridge={ridge})"),
            BaseLearner::BoostedStumps { rounds, learning_rate } => {
                format!("stumps(rounds={rounds},lr={learning_rate})")
            }
        }
    }

    pub fn fit(&self, features: &FiltrationFeatures, treatments: &[bool]) -> Result<BaseFit> {
        match *self {
            BaseLearner::Logistic { ridge } => {
                let (fit, _) = fit_logistic(features, treatments, ridge)?;
                Ok(BaseFit::Logistic(fit))
            }
            BaseLearner::BoostedStumps { rounds, learning_rate } => Ok(BaseFit::BoostedStumps(fit_boosted_stumps(
                features,
                treatments,
                rounds,
                learning_rate,
            )?)),
        }
    }

    /// Logistic at `ridge`, a heavily ridged logistic, and boosted stumps.
    pub fn default_library(ridge: f64) -> Vec<BaseLearner> {
        vec![
            BaseLearner::Logistic { ridge },
            BaseLearner::Logistic { ridge: 1.0 },
            BaseLearner::BoostedStumps {
                rounds: 100,
                learning_rate: 0.1,
            },
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BaseFit {
    Logistic(LogisticFit),
    BoostedStumps(BoostedStumps),
}

impl BaseFit {
    pub fn raw_probability(&self, x: &[f64]) -> f64 {
        match self {
            BaseFit::Logistic(f) => f.raw_probability(x),
            BaseFit::BoostedStumps(f) => f.raw_probability(x),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleMember {
    pub learner: BaseLearner,
    pub weight: f64,
    pub cv_log_loss: f64,
    pub fit: BaseFit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StackedEnsemble {
    pub members: Vec<EnsembleMember>,
    pub k_folds: usize,
    /// Cross-validated log-loss of the blend at the chosen weights.
    pub cv_log_loss: f64,
    /// Learners dropped because they failed on some fold.
    pub dropped: Vec<String>,
}

impl StackedEnsemble {
    pub fn raw_probability(&self, x: &[f64]) -> f64 {
        self.members
            .iter()
            .filter(|m| m.weight > 0.0)
            .map(|m| m.weight * m.fit.raw_probability(x))
            .sum()
    }

    pub fn weights(&self) -> Vec<f64> {
        self.members.iter().map(|m| m.weight).collect()
    }
}

/// Contiguous block boundaries `[start, end)` for `k` folds over `n` rows.
pub fn contiguous_folds(n: usize, k: usize) -> Vec<(usize, usize)> {
    (0..k).map(|i| (i * n / k, (i + 1) * n / k)).collect()
}

/// Mean binary log-loss with probabilities clipped to `[eps, 1 - eps]`.
pub fn log_loss(probs: &[f64], treatments: &[bool], eps: f64) -> f64 {
    let s: f64 = probs
        .iter()
        .zip(treatments)
        .map(|(&p, &w)| {
            let p = p.clamp(eps, 1.0 - eps);
            if w {
                -p.ln()
            } else {
                -(1.0 - p).ln()
            }
        })
        .sum();
    s / probs.len() as f64
}

/// Out-of-fold predictions of one learner under contiguous-block CV.
pub fn out_of_fold(
    learner: &BaseLearner,
    features: &FiltrationFeatures,
    treatments: &[bool],
    k_folds: usize,
) -> Result<Vec<f64>> {
    let n = features.n_rows();
    let mut oof = vec![0.0; n];
    for (start, end) in contiguous_folds(n, k_folds) {
        let train: Vec<usize> = (0..start).chain(end..n).collect();
        let tr_x = features.select_rows(&train);
        let tr_w: Vec<bool> = train.iter().map(|&i| treatments[i]).collect();
        let fit = learner.fit(&tr_x, &tr_w)?;
        for (t, slot) in oof.iter_mut().enumerate().take(end).skip(start) {
            *slot = fit.raw_probability(features.row(t));
        }
    }
    Ok(oof)
}

/// Euclidean projection onto the probability simplex.
pub fn project_to_simplex(v: &[f64]) -> Vec<f64> {
    let mut u = v.to_vec();
    u.sort_by(|a, b| b.total_cmp(a));
    let mut cum = 0.0;
    let mut theta = 0.0;
    for (i, &ui) in u.iter().enumerate() {
        cum += ui;
        let t = (cum - 1.0) / (i + 1) as f64;
        if ui - t > 0.0 {
            theta = t;
        }
    }
    v.iter().map(|&x| (x - theta).max(0.0)).collect()
}

fn blend(columns: &[Vec<f64>], weights: &[f64], i: usize) -> f64 {
    columns.iter().zip(weights).map(|(c, a)| a * c[i]).sum()
}

fn blend_loss(columns: &[Vec<f64>], weights: &[f64], y: &[bool], eps: f64) -> f64 {
    let n = y.len();
    let probs: Vec<f64> = (0..n).map(|i| blend(columns, weights, i)).collect();
    log_loss(&probs, y, eps)
}

/// Projected-gradient minimization of the blended log-loss over the simplex,
/// started from uniform weights. Vertices are checked at the end so the result
/// is never worse than the best single learner.
pub fn simplex_weights(columns: &[Vec<f64>], y: &[bool], eps: f64) -> (Vec<f64>, FitDiagnostics) {
    let l = columns.len();
    let n = y.len();
    let mut a = vec![1.0 / l as f64; l];
    let mut loss = blend_loss(columns, &a, y, eps);
    let mut step = 1.0;
    let mut iterations = 0;
    let mut converged = l == 1;
    let mut pg_norm = 0.0;
    while !converged && iterations < SIMPLEX_MAX_ITERATIONS {
        iterations += 1;
        let mut grad = vec![0.0; l];
        for i in 0..n {
            let p = blend(columns, &a, i).clamp(eps, 1.0 - eps);
            let d = if y[i] { -1.0 / p } else { 1.0 / (1.0 - p) };
            for (g, c) in grad.iter_mut().zip(columns) {
                *g += d * c[i] / n as f64;
            }
        }
        let full: Vec<f64> = a.iter().zip(&grad).map(|(x, g)| x - g).collect();
        pg_norm = project_to_simplex(&full)
            .iter()
            .zip(&a)
            .fold(0.0f64, |m, (p, x)| m.max((p - x).abs()));

        let mut improved = false;
        for _ in 0..50 {
            let cand: Vec<f64> = a.iter().zip(&grad).map(|(x, g)| x - step * g).collect();
            let cand = project_to_simplex(&cand);
            let cand_loss = blend_loss(columns, &cand, y, eps);
            let decrease: f64 = grad
                .iter()
                .zip(cand.iter().zip(&a))
                .map(|(g, (c, x))| g * (c - x))
                .sum();
            if cand_loss <= loss + 1e-4 * decrease {
                let delta = loss - cand_loss;
                a = cand;
                loss = cand_loss;
                improved = true;
                if delta < SIMPLEX_TOLERANCE {
                    converged = true;
                }
                step *= 2.0;
                break;
            }
            step *= 0.5;
        }
        if !improved || pg_norm < SIMPLEX_TOLERANCE {
            converged = true;
        }
    }

    for v in 0..l {
        let mut e = vec![0.0; l];
        e[v] = 1.0;
        let vl = blend_loss(columns, &e, y, eps);
        if vl < loss {
            loss = vl;
            a = e;
        }
    }
    (
        a,
        FitDiagnostics {
            iterations,
            gradient_norm: pg_norm,
            converged,
        },
    )
}

/// Cross-validates every base learner, chooses simplex weights on the
/// out-of-fold predictions, then refits each surviving learner on all rows.
pub fn fit_stacked_ensemble(
    features: &FiltrationFeatures,
    treatments: &[bool],
    library: &[BaseLearner],
    k_folds: usize,
    eps: f64,
) -> Result<(StackedEnsemble, FitDiagnostics)> {
    let n = features.n_rows();
    if k_folds < 2 {
        return Err(Error::InvalidArgument(format!("k_folds must be >= 2, got {k_folds}")));
    }
    if n < 2 * k_folds {
        return Err(Error::InvalidArgument(format!(
            "series length {n} is shorter than 2 * k_folds = {}",
            2 * k_folds
        )));
    }
    if treatments.len() != n {
        return Err(Error::InvalidArgument("treatments/features length mismatch".into()));
    }

    let mut kept = Vec::new();
    let mut columns = Vec::new();
    let mut dropped = Vec::new();
    for learner in library {
        let attempt = out_of_fold(learner, features, treatments, k_folds)
            .and_then(|oof| learner.fit(features, treatments).map(|fit| (oof, fit)));
        match attempt {
            Ok((oof, fit)) => {
                kept.push((learner.clone(), fit, log_loss(&oof, treatments, eps)));
                columns.push(oof);
            }
            Err(e) => dropped.push(format!("{}: {e}", learner.name())),
        }
    }
    if kept.is_empty() {
        return Err(Error::AllLearnersFailed(dropped.join("; ")));
    }

    let (weights, diag) = simplex_weights(&columns, treatments, eps);
    let cv_log_loss = blend_loss(&columns, &weights, treatments, eps);
    let members = kept
        .into_iter()
        .zip(&weights)
        .map(|((learner, fit, cv), &weight)| EnsembleMember {
            learner,
            weight,
            cv_log_loss: cv,
            fit,
        })
        .collect();
    Ok((
        StackedEnsemble {
            members,
            k_folds,
            cv_log_loss,
            dropped,
        },
        diag,
    ))
}
