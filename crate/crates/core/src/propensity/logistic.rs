//! Ridge-penalized logistic regression fitted by iteratively reweighted least
//! squares (Newton-Raphson on the penalized log-likelihood).

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{expit, FitDiagnostics};
use crate::error::{Error, Result};
use crate::features::FiltrationFeatures;

pub const MAX_ITERATIONS: usize = 100;
pub const GRADIENT_TOLERANCE: f64 = 1e-8;

/// Fitted coefficients on standardized features.
///
/// The linear predictor is `coef[0] + sum_j coef[j+1] * (x_j - mean_j) / scale_j`.
/// The ridge penalty applies to every entry of `coef`, intercept included.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticFit {
    pub means: Vec<f64>,
    pub scales: Vec<f64>,
    pub coef: Vec<f64>,
    pub ridge: f64,
}

impl LogisticFit {
    /// Model with coefficients given on the original feature scale.
    pub fn from_coefficients(intercept: f64, slopes: Vec<f64>) -> Self {
        let k = slopes.len();
        let mut coef = Vec::with_capacity(k + 1);
        coef.push(intercept);
        coef.extend(slopes);
        Self {
            means: vec![0.0; k],
            scales: vec![1.0; k],
            coef,
            ridge: 0.0,
        }
    }

    pub fn n_features(&self) -> usize {
        self.means.len()
    }

    pub fn linear_predictor(&self, x: &[f64]) -> f64 {
        self.coef[0]
            + x.iter()
                .zip(&self.means)
                .zip(&self.scales)
                .zip(&self.coef[1..])
                .map(|(((x, m), s), b)| b * (x - m) / s)
                .sum::<f64>()
    }

    /// Unclipped probability.
    pub fn raw_probability(&self, x: &[f64]) -> f64 {
        expit(self.linear_predictor(x))
    }

    /// Intercept and slopes on the original feature scale.
    pub fn original_scale(&self) -> (f64, Vec<f64>) {
        let slopes: Vec<f64> = self.coef[1..].iter().zip(&self.scales).map(|(b, s)| b / s).collect();
        let intercept = self.coef[0] - slopes.iter().zip(&self.means).map(|(b, m)| b * m).sum::<f64>();
        (intercept, slopes)
    }
}

/// `log(1 + exp(x))` without overflow.
fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

struct Design {
    /// Row-major, intercept column first.
    z: Vec<f64>,
    k: usize,
    n: usize,
}

impl Design {
    fn row(&self, i: usize) -> &[f64] {
        &self.z[i * self.k..(i + 1) * self.k]
    }

    fn eta(&self, beta: &[f64]) -> Vec<f64> {
        (0..self.n)
            .map(|i| self.row(i).iter().zip(beta).map(|(a, b)| a * b).sum())
            .collect()
    }
}

fn penalized_loglik(design: &Design, y: &[f64], beta: &[f64], ridge: f64) -> f64 {
    let eta = design.eta(beta);
    let ll: f64 = eta.iter().zip(y).map(|(&e, &yi)| yi * e - softplus(e)).sum();
    ll - 0.5 * ridge * beta.iter().map(|b| b * b).sum::<f64>()
}

fn gradient(design: &Design, y: &[f64], beta: &[f64], ridge: f64) -> (Vec<f64>, Vec<f64>) {
    let eta = design.eta(beta);
    let p: Vec<f64> = eta.iter().map(|&e| expit(e)).collect();
    let mut g: Vec<f64> = beta.iter().map(|b| -ridge * b).collect();
    for i in 0..design.n {
        let r = y[i] - p[i];
        for (gj, zj) in g.iter_mut().zip(design.row(i)) {
            *gj += r * zj;
        }
    }
    (g, p)
}

fn solve_spd(h: DMatrix<f64>, g: &[f64]) -> Result<Vec<f64>> {
    let rhs = DVector::from_column_slice(g);
    if let Some(ch) = h.clone().cholesky() {
        return Ok(ch.solve(&rhs).iter().copied().collect());
    }
    let k = h.nrows();
    let jitter = 1e-10 * (1.0 + h.diagonal().amax());
    let h = h + DMatrix::identity(k, k) * jitter;
    h.cholesky()
        .map(|ch| ch.solve(&rhs).iter().copied().collect())
        .ok_or_else(|| Error::Numerical("logistic Hessian is not positive definite".into()))
}

/// Maximizes the ridge-penalized Bernoulli log-likelihood.
///
/// Returns the fit even when the iteration cap is hit; check
/// [`FitDiagnostics::converged`].
pub fn fit_logistic(
    features: &FiltrationFeatures,
    treatments: &[bool],
    ridge: f64,
) -> Result<(LogisticFit, FitDiagnostics)> {
    let n = features.n_rows();
    if treatments.len() != n {
        return Err(Error::InvalidArgument(format!(
            "{} treatments for {n} feature rows",
            treatments.len()
        )));
    }
    if !(ridge >= 0.0 && ridge.is_finite()) {
        return Err(Error::InvalidArgument(format!("ridge must be >= 0, got {ridge}")));
    }
    if n == 0 {
        return Err(Error::InvalidArgument("no observations".into()));
    }
    let n_treated = treatments.iter().filter(|&&w| w).count();
    if ridge == 0.0 && (n_treated == 0 || n_treated == n) {
        return Err(Error::Separation(format!(
            "all {n} treatments equal {} and ridge is 0",
            u8::from(n_treated == n)
        )));
    }

    let p = features.n_cols();
    let mut means = vec![0.0; p];
    let mut scales = vec![1.0; p];
    // Constant columns are left out of the design and get a zero slope.
    let mut active = Vec::with_capacity(p);
    for j in 0..p {
        let col = features.column(j);
        let m = col.iter().sum::<f64>() / n as f64;
        let var = col.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n as f64;
        means[j] = m;
        if var > 1e-24 {
            scales[j] = var.sqrt();
            active.push(j);
        }
    }

    let k = active.len() + 1;
    let mut z = Vec::with_capacity(n * k);
    for row in features.rows() {
        z.push(1.0);
        z.extend(active.iter().map(|&j| (row[j] - means[j]) / scales[j]));
    }
    let design = Design { z, k, n };
    let y: Vec<f64> = treatments.iter().map(|&w| f64::from(u8::from(w))).collect();

    let mut beta = vec![0.0; k];
    let mut iterations = 0;
    let mut converged = false;
    let (mut g, mut prob) = gradient(&design, &y, &beta, ridge);
    let mut objective = penalized_loglik(&design, &y, &beta, ridge);
    loop {
        let sup = g.iter().fold(0.0f64, |a, b| a.max(b.abs()));
        if sup <= GRADIENT_TOLERANCE {
            converged = true;
            break;
        }
        if iterations == MAX_ITERATIONS {
            break;
        }
        iterations += 1;

        let mut h = DMatrix::<f64>::zeros(k, k);
        for (i, &pi) in prob.iter().enumerate() {
            let w = pi * (1.0 - pi);
            if w == 0.0 {
                continue;
            }
            let zi = design.row(i);
            for a in 0..k {
                let wa = w * zi[a];
                for b in a..k {
                    h[(a, b)] += wa * zi[b];
                }
            }
        }
        for a in 0..k {
            h[(a, a)] += ridge;
            for b in 0..a {
                h[(a, b)] = h[(b, a)];
            }
        }
        let step = solve_spd(h, &g)?;

        // Step halving keeps the penalized likelihood monotone.
        let mut scale = 1.0;
        let mut accepted = false;
        for _ in 0..30 {
            let cand: Vec<f64> = beta.iter().zip(&step).map(|(b, s)| b + scale * s).collect();
            let obj = penalized_loglik(&design, &y, &cand, ridge);
            if obj >= objective - 1e-12 * objective.abs().max(1.0) {
                beta = cand;
                objective = obj;
                accepted = true;
                break;
            }
            scale *= 0.5;
        }
        (g, prob) = gradient(&design, &y, &beta, ridge);
        if !accepted {
            break;
        }
    }
    let gradient_norm = g.iter().fold(0.0f64, |a, b| a.max(b.abs()));

    if ridge == 0.0 {
        let certain = prob.iter().zip(&y).all(|(&pi, &yi)| (pi - yi).abs() < 1e-6);
        if certain {
            return Err(Error::Separation(
                "treatments are perfectly separated by the features".into(),
            ));
        }
    }

    let mut coef = vec![0.0; p + 1];
    coef[0] = beta[0];
    for (a, &j) in active.iter().enumerate() {
        coef[j + 1] = beta[a + 1];
    }
    Ok((
        LogisticFit {
            means,
            scales,
            coef,
            ridge,
        },
        FitDiagnostics {
            iterations,
            gradient_norm,
            converged,
        },
    ))
}

/// Penalized log-likelihood gradient sup-norm of `fit` on the given data.
pub fn gradient_sup_norm(fit: &LogisticFit, features: &FiltrationFeatures, treatments: &[bool]) -> f64 {
    let mut g: Vec<f64> = fit.coef.iter().map(|b| -fit.ridge * b).collect();
    for (row, &w) in features.rows().zip(treatments) {
        let r = f64::from(u8::from(w)) - fit.raw_probability(row);
        g[0] += r;
        for j in 0..row.len() {
            g[j + 1] += r * (row[j] - fit.means[j]) / fit.scales[j];
        }
    }
    g.iter().fold(0.0f64, |a, b| a.max(b.abs()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_feature(x: &[f64]) -> FiltrationFeatures {
        let rows: Vec<Vec<f64>> = x.iter().map(|&v| vec![v]).collect();
        FiltrationFeatures::from_rows(vec!["x".into()], &rows).unwrap()
    }

    #[test]
    fn all_zero_with_ridge_is_intercept_driven() {
        let f = one_feature(&[0.3, -1.0, 2.0, 0.5, 1.1, -0.2]);
        let (fit, diag) = fit_logistic(&f, &[false; 6], 1.0).unwrap();
        assert!(diag.converged);
        for row in f.rows() {
            assert!(fit.raw_probability(row) < 0.5);
        }
    }

    #[test]
    fn independent_balanced_feature_gives_zero_coefficients() {
        let f = one_feature(&[0., 0., 1., 1., 0., 1., 0., 1.]);
        let w = [false, true, false, true, true, false, false, true];
        let (fit, diag) = fit_logistic(&f, &w, 0.0).unwrap();
        assert!(diag.converged);
        let (b0, b) = fit.original_scale();
        assert!(b0.abs() < 1e-6 && b[0].abs() < 1e-6, "{b0} {b:?}");
    }

    #[test]
    fn two_point_separation_is_an_error() {
        let f = one_feature(&[0., 1.]);
        assert!(matches!(
            fit_logistic(&f, &[false, true], 0.0),
            Err(Error::Separation(_))
        ));
        assert!(matches!(
            fit_logistic(&f, &[true, true], 0.0),
            Err(Error::Separation(_))
        ));
        assert!(fit_logistic(&f, &[false, true], 1e-4).is_ok());
    }

    #[test]
    fn recovers_known_coefficients() {
        // Deterministic design with exact class frequencies per x-level.
        let mut x = Vec::new();
        let mut w = Vec::new();
        for (level, p) in [(-1.0, 0.2), (0.0, 0.5), (1.0, 0.8)] {
            for i in 0..100 {
                x.push(level);
                w.push((i as f64) < p * 100.0);
            }
        }
        let f = one_feature(&x);
        let (fit, diag) = fit_logistic(&f, &w, 0.0).unwrap();
        assert!(diag.converged);
        let (b0, b) = fit.original_scale();
        // Symmetric design: MLE intercept 0 and fitted p(1) = 0.8 exactly.
        assert!(b0.abs() < 1e-9);
        assert!((expit(b[0]) - 0.8).abs() < 1e-9);
        assert!(gradient_sup_norm(&fit, &f, &w) <= GRADIENT_TOLERANCE);
    }

    #[test]
    fn constant_columns_are_ignored() {
        let rows: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64, 0.0]).collect();
        let f = FiltrationFeatures::from_rows(vec!["x".into(), "k".into()], &rows).unwrap();
        let w: Vec<bool> = (0..10).map(|i| i % 3 == 0).collect();
        let (fit, diag) = fit_logistic(&f, &w, 0.0).unwrap();
        assert!(diag.converged);
        assert_eq!(fit.coef[2], 0.0);
    }
}
