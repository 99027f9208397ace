//! Replicated simulation experiments: estimator error against the oracle over
//! a delta grid, summarized as integrated bias/RMSE and band coverage.

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::dgp::{generate_with_rng, SimSeries};
use super::oracle::oracle_estimand;
use crate::error::{Error, Result};
use crate::estimator::{delta_grid, estimate_over_days, normal_quantile, usable_days};
use crate::propensity::{predict_propensity, IncrementalPolicy, LearnerKind, PropensityConfig, PropensityModel};

/// Where the propensities plugged into the estimator come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PropensitySource {
    /// The generating mechanism's own probabilities.
    True,
    Logistic,
    Ensemble,
}

impl std::fmt::Display for PropensitySource {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::True => "true",
            Self::Logistic => "logistic",
            Self::Ensemble => "ensemble",
        })
    }
}

impl std::str::FromStr for PropensitySource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "true" => Ok(Self::True),
            "logistic" => Ok(Self::Logistic),
            "ensemble" => Ok(Self::Ensemble),
            other => Err(Error::InvalidArgument(format!("unknown propensity source `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub t_list: Vec<usize>,
    pub t0_list: Vec<usize>,
    pub replicates: usize,
    pub grid_points: usize,
    pub delta_min: f64,
    pub delta_max: f64,
    pub models: Vec<PropensitySource>,
    pub seed: u64,
    pub ridge: f64,
    pub epsilon: f64,
    pub k_folds: usize,
    pub alpha: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            t_list: vec![200, 1000, 5000],
            t0_list: vec![2, 5, 10],
            replicates: 500,
            grid_points: 50,
            delta_min: 0.1,
            delta_max: 10.0,
            models: vec![PropensitySource::Logistic],
            seed: 1,
            ridge: crate::propensity::DEFAULT_RIDGE,
            epsilon: crate::propensity::DEFAULT_EPSILON,
            k_folds: 5,
            alpha: 0.05,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.replicates == 0 || self.grid_points == 0 {
            return Err(Error::InvalidArgument(
                "replicates and grid points must be at least 1".into(),
            ));
        }
        if self.t_list.is_empty() || self.t0_list.is_empty() || self.models.is_empty() {
            return Err(Error::InvalidArgument("empty T, t0 or model list".into()));
        }
        for &t in &self.t_list {
            for &t0 in &self.t0_list {
                if t < 2 || t0 == 0 || t0 > t {
                    return Err(Error::InvalidArgument(format!("invalid (T, t0) = ({t}, {t0})")));
                }
            }
        }
        delta_grid(self.delta_min, self.delta_max, self.grid_points, false)?;
        Ok(())
    }

    pub fn grid(&self) -> Result<Vec<f64>> {
        delta_grid(self.delta_min, self.delta_max, self.grid_points, false)
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Generator for replicate `index` of the series-length-`t_len` arm. The same
/// series is reused across t0 values and propensity models.
pub fn replicate_rng(master_seed: u64, t_len: usize, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(master_seed ^ splitmix64(t_len as u64)));
    rng.set_stream(index);
    rng
}

/// Estimates, band half-widths and oracle values of one replicate, one entry
/// per grid delta.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateResult {
    pub replicate: u64,
    pub estimates: Vec<f64>,
    pub half_widths: Vec<f64>,
    pub oracle: Vec<f64>,
}

/// Integrated metrics, all multiplied by 10.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntegratedMetrics {
    /// `(1/J) sum_j |(1/I) sum_i err_ij|`.
    pub bias: f64,
    /// `(1/J) sum_j (1/I) sum_i |err_ij|`.
    pub mae: f64,
    /// `(1/J) sum_j sqrt((1/I) sum_i err_ij^2)`.
    pub rmse: f64,
    /// `rmse` times `sqrt(T - t0 + 1)`.
    pub rmse_sqrt_n: f64,
}

pub const METRIC_SCALE: f64 = 10.0;

pub fn integrated_metrics(results: &[ReplicateResult], n_days: usize) -> IntegratedMetrics {
    let j_len = results.first().map_or(0, |r| r.estimates.len());
    let i_len = results.len() as f64;
    let (mut bias, mut mae, mut rmse) = (0.0, 0.0, 0.0);
    for j in 0..j_len {
        let (mut s, mut a, mut q) = (0.0, 0.0, 0.0);
        for r in results {
            let e = r.estimates[j] - r.oracle[j];
            s += e;
            a += e.abs();
            q += e * e;
        }
        bias += (s / i_len).abs();
        mae += a / i_len;
        rmse += (q / i_len).sqrt();
    }
    let j = j_len as f64;
    let scale = METRIC_SCALE / j;
    IntegratedMetrics {
        bias: bias * scale,
        mae: mae * scale,
        rmse: rmse * scale,
        rmse_sqrt_n: rmse * scale * (n_days as f64).sqrt(),
    }
}

/// Fraction of replicates whose band contains the oracle, per grid delta.
pub fn coverage_fractions(results: &[ReplicateResult]) -> Vec<f64> {
    let j_len = results.first().map_or(0, |r| r.estimates.len());
    (0..j_len)
        .map(|j| {
            let hit = results
                .iter()
                .filter(|r| (r.estimates[j] - r.oracle[j]).abs() <= r.half_widths[j])
                .count();
            hit as f64 / results.len() as f64
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellReport {
    pub t_len: usize,
    pub t0: usize,
    pub model: PropensitySource,
    pub metrics: IntegratedMetrics,
    /// Mean coverage over the grid.
    pub coverage: f64,
    pub wall_time_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageRow {
    pub t_len: usize,
    pub t0: usize,
    pub model: PropensitySource,
    pub delta: f64,
    pub coverage: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimReport {
    pub cells: Vec<CellReport>,
    pub coverage: Vec<CoverageRow>,
}

impl SimReport {
    pub fn cell(&self, t_len: usize, t0: usize, model: PropensitySource) -> Option<&CellReport> {
        self.cells
            .iter()
            .find(|c| c.t_len == t_len && c.t0 == t0 && c.model == model)
    }
}

fn propensities(series: &SimSeries, source: PropensitySource, config: &ExperimentConfig) -> Result<Vec<f64>> {
    let model = match source {
        PropensitySource::True => return Ok(series.true_p.clone()),
        PropensitySource::Logistic => LearnerKind::Logistic,
        PropensitySource::Ensemble => LearnerKind::Ensemble,
    };
    let cfg = PropensityConfig {
        model,
        ridge: config.ridge,
        epsilon: config.epsilon,
        k_folds: config.k_folds,
    };
    let features = series.features();
    let fitted = PropensityModel::fit(&features, &series.treatments, &cfg)?;
    predict_propensity(&fitted, &features)
}

/// Estimator and oracle for one replicate at every (t0, delta).
fn evaluate_replicate(
    series: &SimSeries,
    p_hats: &[f64],
    t0: usize,
    grid: &[f64],
    z: f64,
    replicate: u64,
) -> Result<ReplicateResult> {
    let obs = series.series();
    let days = usable_days(&obs, t0, None);
    let n = days.len() as f64;
    let mut out = ReplicateResult {
        replicate,
        estimates: Vec::with_capacity(grid.len()),
        half_widths: Vec::with_capacity(grid.len()),
        oracle: Vec::with_capacity(grid.len()),
    };
    for &delta in grid {
        let policy = IncrementalPolicy::Constant(delta);
        let est = estimate_over_days(&obs, p_hats, &policy, t0, &days)?;
        out.estimates.push(est.tau_hat);
        out.half_widths.push(z * (est.sigma_hat / n).sqrt());
        out.oracle.push(oracle_estimand(series, &policy, t0, None)?);
    }
    Ok(out)
}

/// Raw per-replicate results keyed by (T, model, t0), in config order.
pub type RawResults = Vec<((usize, PropensitySource, usize), Vec<ReplicateResult>, f64)>;

/// Runs every replicate of every arm. Replicates run in parallel with
/// index-derived streams; results are collected in replicate order.
pub fn run_replicates(config: &ExperimentConfig) -> Result<RawResults> {
    config.validate()?;
    let grid = config.grid()?;
    let z = normal_quantile(config.alpha);
    let mut out = Vec::new();
    for &t_len in &config.t_list {
        for &model in &config.models {
            let start = Instant::now();
            let per_rep: Vec<Vec<ReplicateResult>> = (0..config.replicates as u64)
                .into_par_iter()
                .map(|i| {
                    let mut rng = replicate_rng(config.seed, t_len, i);
                    let series = generate_with_rng(t_len, &mut rng);
                    let p_hats = propensities(&series, model, config)?;
                    config
                        .t0_list
                        .iter()
                        .map(|&t0| evaluate_replicate(&series, &p_hats, t0, &grid, z, i))
                        .collect()
                })
                .collect::<Result<_>>()?;
            let secs = start.elapsed().as_secs_f64() / config.t0_list.len() as f64;
            for (k, &t0) in config.t0_list.iter().enumerate() {
                let results: Vec<ReplicateResult> = per_rep.iter().map(|r| r[k].clone()).collect();
                out.push(((t_len, model, t0), results, secs));
            }
        }
    }
    Ok(out)
}

pub fn summarize(config: &ExperimentConfig, raw: &RawResults) -> Result<SimReport> {
    let grid = config.grid()?;
    let mut report = SimReport {
        cells: Vec::new(),
        coverage: Vec::new(),
    };
    for ((t_len, model, t0), results, secs) in raw {
        let cov = coverage_fractions(results);
        report.cells.push(CellReport {
            t_len: *t_len,
            t0: *t0,
            model: *model,
            metrics: integrated_metrics(results, t_len - t0 + 1),
            coverage: cov.iter().sum::<f64>() / cov.len() as f64,
            wall_time_s: *secs,
        });
        for (&delta, &c) in grid.iter().zip(&cov) {
            report.coverage.push(CoverageRow {
                t_len: *t_len,
                t0: *t0,
                model: *model,
                delta,
                coverage: c,
            });
        }
    }
    Ok(report)
}

/// Integrated bias, MAE and RMSE (x10) plus coverage for every
/// (T, t0, model) arm.
pub fn run_experiment(config: &ExperimentConfig) -> Result<SimReport> {
    summarize(config, &run_replicates(config)?)
}

/// Per-delta coverage of the pointwise bands.
pub fn coverage_experiment(config: &ExperimentConfig) -> Result<Vec<CoverageRow>> {
    Ok(run_experiment(config)?.coverage)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fake(est: Vec<f64>, half: Vec<f64>, oracle: Vec<f64>) -> ReplicateResult {
        ReplicateResult {
            replicate: 0,
            estimates: est,
            half_widths: half,
            oracle,
        }
    }

    #[test]
    fn self_comparison_has_zero_error() {
        let r = vec![
            fake(vec![1.0, 2.0], vec![0.0; 2], vec![1.0, 2.0]),
            fake(vec![3.0, 4.0], vec![0.0; 2], vec![3.0, 4.0]),
        ];
        let m = integrated_metrics(&r, 100);
        assert_eq!((m.bias, m.mae, m.rmse), (0.0, 0.0, 0.0));
    }

    #[test]
    fn metric_arithmetic() {
        // Errors at delta 1: +1, -1; at delta 2: +2, +2.
        let r = vec![
            fake(vec![1.0, 2.0], vec![0.0; 2], vec![0.0, 0.0]),
            fake(vec![-1.0, 2.0], vec![0.0; 2], vec![0.0, 0.0]),
        ];
        let m = integrated_metrics(&r, 4);
        assert!((m.bias - 10.0 * (0.0 + 2.0) / 2.0).abs() < 1e-12);
        assert!((m.mae - 10.0 * (1.0 + 2.0) / 2.0).abs() < 1e-12);
        assert!((m.rmse - 10.0 * (1.0 + 2.0) / 2.0).abs() < 1e-12);
        assert!((m.rmse_sqrt_n - 2.0 * m.rmse).abs() < 1e-12);
    }

    #[test]
    fn forced_band_widths() {
        let r: Vec<ReplicateResult> = (0..10)
            .map(|i| fake(vec![i as f64 * 0.1 + 0.05], vec![f64::INFINITY], vec![0.0]))
            .collect();
        assert_eq!(coverage_fractions(&r), vec![1.0]);
        let r: Vec<ReplicateResult> = r
            .into_iter()
            .map(|x| ReplicateResult {
                half_widths: vec![0.0],
                ..x
            })
            .collect();
        assert_eq!(coverage_fractions(&r), vec![0.0]);
    }

    #[test]
    fn small_experiment_is_deterministic() {
        let cfg = ExperimentConfig {
            t_list: vec![60],
            t0_list: vec![1, 2],
            replicates: 4,
            grid_points: 3,
            seed: 3,
            ..ExperimentConfig::default()
        };
        let a = run_experiment(&cfg).unwrap();
        let b = run_experiment(&cfg).unwrap();
        assert_eq!(a.cells.len(), 2);
        assert_eq!(a.coverage.len(), 6);
        for (x, y) in a.cells.iter().zip(&b.cells) {
            assert_eq!(x.metrics, y.metrics);
        }
        assert_eq!(a.coverage, b.coverage);
    }

    #[test]
    fn replicate_streams_differ() {
        use rand::Rng;
        let a: u64 = replicate_rng(1, 100, 0).random();
        let b: u64 = replicate_rng(1, 100, 1).random();
        let c: u64 = replicate_rng(1, 200, 0).random();
        assert!(a != b && a != c);
        assert_eq!(a, replicate_rng(1, 100, 0).random::<u64>());
    }
}
