//! Gradient-boosted decision stumps for binary log-loss.

use serde::{Deserialize, Serialize};

use super::expit;
use crate::error::{Error, Result};
use crate::features::FiltrationFeatures;

const MIN_LEAF: usize = 5;
const LEAF_L2: f64 = 1.0;
const MAX_LEAF: f64 = 4.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stump {
    pub feature: usize,
    /// Rows with `x <= threshold` go left.
    pub threshold: f64,
    pub left: f64,
    pub right: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoostedStumps {
    pub n_features: usize,
    pub base_score: f64,
    pub learning_rate: f64,
    pub stumps: Vec<Stump>,
}

impl BoostedStumps {
    pub fn margin(&self, x: &[f64]) -> f64 {
        self.base_score
            + self.learning_rate
                * self
                    .stumps
                    .iter()
                    .map(|s| if x[s.feature] <= s.threshold { s.left } else { s.right })
                    .sum::<f64>()
    }

    pub fn raw_probability(&self, x: &[f64]) -> f64 {
        expit(self.margin(x))
    }
}

/// Newton-boosted stumps: each round fits one split to the current gradient
/// and Hessian of the log-loss.
pub fn fit_boosted_stumps(
    features: &FiltrationFeatures,
    treatments: &[bool],
    rounds: usize,
    learning_rate: f64,
) -> Result<BoostedStumps> {
    let n = features.n_rows();
    if treatments.len() != n || n == 0 {
        return Err(Error::InvalidArgument(format!(
            "{} treatments for {n} feature rows",
            treatments.len()
        )));
    }
    if learning_rate.is_nan() || learning_rate <= 0.0 {
        return Err(Error::InvalidArgument("learning rate must be positive".into()));
    }
    let y: Vec<f64> = treatments.iter().map(|&w| f64::from(u8::from(w))).collect();
    let rate = (y.iter().sum::<f64>() + 0.5) / (n as f64 + 1.0);
    let base_score = (rate / (1.0 - rate)).ln();

    let p = features.n_cols();
    let columns: Vec<Vec<f64>> = (0..p).map(|j| features.column(j)).collect();
    let orders: Vec<Vec<usize>> = columns
        .iter()
        .map(|c| {
            let mut idx: Vec<usize> = (0..n).collect();
            idx.sort_by(|&a, &b| c[a].total_cmp(&c[b]));
            idx
        })
        .collect();

    let mut margin = vec![base_score; n];
    let mut stumps = Vec::with_capacity(rounds);
    let mut grad = vec![0.0; n];
    let mut hess = vec![0.0; n];
    for _ in 0..rounds {
        for i in 0..n {
            let pi = expit(margin[i]);
            grad[i] = y[i] - pi;
            hess[i] = pi * (1.0 - pi);
        }
        let g_tot: f64 = grad.iter().sum();
        let h_tot: f64 = hess.iter().sum();
        let parent = g_tot * g_tot / (h_tot + LEAF_L2);

        let mut best: Option<(f64, Stump)> = None;
        for (j, order) in orders.iter().enumerate() {
            let col = &columns[j];
            let (mut gl, mut hl) = (0.0, 0.0);
            for pos in 0..n.saturating_sub(1) {
                let i = order[pos];
                gl += grad[i];
                hl += hess[i];
                let next = order[pos + 1];
                if col[i] == col[next] || pos + 1 < MIN_LEAF || n - pos - 1 < MIN_LEAF {
                    continue;
                }
                let (gr, hr) = (g_tot - gl, h_tot - hl);
                let gain = gl * gl / (hl + LEAF_L2) + gr * gr / (hr + LEAF_L2) - parent;
                if best.as_ref().is_none_or(|(b, _)| gain > *b) {
                    let leaf = |g: f64, h: f64| (g / (h + LEAF_L2)).clamp(-MAX_LEAF, MAX_LEAF);
                    best = Some((
                        gain,
                        Stump {
                            feature: j,
                            threshold: 0.5 * (col[i] + col[next]),
                            left: leaf(gl, hl),
                            right: leaf(gr, hr),
                        },
                    ));
                }
            }
        }
        let Some((gain, stump)) = best else { break };
        if gain <= 1e-12 {
            break;
        }
        for (i, m) in margin.iter_mut().enumerate() {
            let v = if columns[stump.feature][i] <= stump.threshold {
                stump.left
            } else {
                stump.right
            };
            *m += learning_rate * v;
        }
        stumps.push(stump);
    }

    Ok(BoostedStumps {
        n_features: p,
        base_score,
        learning_rate,
        stumps,
    })
}
