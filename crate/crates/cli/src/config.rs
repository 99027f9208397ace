//! Run configuration: TOML file, then `IPSI__SECTION__KEY` environment
//! overrides, then `--set section.key=value` flags.

use std::path::Path;

use anyhow::{bail, Context, Result};
use ipsi_core::features::FeatureSpec;
use ipsi_core::propensity::PropensityConfig;
use ipsi_core::sim::{ExperimentConfig, PropensitySource};
use ipsi_core::{delta_grid, EstimandKind};
use serde::{Deserialize, Serialize};
use toml::{Table, Value};

pub const ENV_PREFIX: &str = "IPSI__";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HotDayFilter {
    /// Covariate whose per-unit quantile defines hot days.
    pub column: String,
    pub quantile: f64,
}

impl Default for HotDayFilter {
    fn default() -> Self {
        Self {
            column: "heat".into(),
            quantile: 0.95,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimatorSection {
    pub t0: usize,
    pub delta_min: f64,
    pub delta_max: f64,
    pub points: usize,
    pub log_spacing: bool,
    pub alpha: f64,
    pub estimand: EstimandKind,
    pub day_filter: Option<HotDayFilter>,
}

impl Default for EstimatorSection {
    fn default() -> Self {
        Self {
            t0: 3,
            delta_min: (-2.3f64).exp(),
            delta_max: 2.3f64.exp(),
            points: 25,
            log_spacing: true,
            alpha: 0.05,
            estimand: EstimandKind::TemporalAverage,
            day_filter: None,
        }
    }
}

impl EstimatorSection {
    /// The configured grid with `delta = 1` added when it lies inside the
    /// range, so effect curves always include their zero point.
    pub fn grid(&self) -> Result<Vec<f64>> {
        let mut g = delta_grid(self.delta_min, self.delta_max, self.points, self.log_spacing)?;
        for d in g.iter_mut() {
            if (*d - 1.0).abs() < 1e-12 {
                *d = 1.0;
            }
        }
        if self.delta_min <= 1.0 && 1.0 <= self.delta_max && !g.contains(&1.0) {
            g.push(1.0);
            g.sort_by(f64::total_cmp);
        }
        Ok(g)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetaSection {
    pub alpha: f64,
}

impl Default for MetaSection {
    fn default() -> Self {
        Self { alpha: 0.05 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimSection {
    #[serde(rename = "T_list")]
    pub t_list: Vec<usize>,
    pub t0_list: Vec<usize>,
    #[serde(rename = "I")]
    pub replicates: usize,
    #[serde(rename = "J")]
    pub grid_points: usize,
    pub delta_min: f64,
    pub delta_max: f64,
    pub seed: u64,
    #[serde(deserialize_with = "one_or_many")]
    pub model: Vec<PropensitySource>,
}

fn one_or_many<'de, D: serde::Deserializer<'de>>(d: D) -> Result<Vec<PropensitySource>, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum OneOrMany {
        One(PropensitySource),
        Many(Vec<PropensitySource>),
    }
    Ok(match OneOrMany::deserialize(d)? {
        OneOrMany::One(m) => vec![m],
        OneOrMany::Many(v) => v,
    })
}

impl Default for SimSection {
    fn default() -> Self {
        let d = ExperimentConfig::default();
        Self {
            t_list: d.t_list,
            t0_list: d.t0_list,
            replicates: d.replicates,
            grid_points: d.grid_points,
            delta_min: d.delta_min,
            delta_max: d.delta_max,
            seed: d.seed,
            model: d.models,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DemoSection {
    pub units: usize,
    pub seasons: usize,
    pub seed: u64,
}

impl Default for DemoSection {
    fn default() -> Self {
        Self {
            units: 6,
            seasons: 3,
            seed: 20,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub features: FeatureSpec,
    pub propensity: PropensityConfig,
    pub estimator: EstimatorSection,
    pub meta: MetaSection,
    pub sim: SimSection,
    pub demo: DemoSection,
}

impl RunConfig {
    pub fn experiment(&self) -> ExperimentConfig {
        ExperimentConfig {
            t_list: self.sim.t_list.clone(),
            t0_list: self.sim.t0_list.clone(),
            replicates: self.sim.replicates,
            grid_points: self.sim.grid_points,
            delta_min: self.sim.delta_min,
            delta_max: self.sim.delta_max,
            models: self.sim.model.clone(),
            seed: self.sim.seed,
            ridge: self.propensity.ridge,
            epsilon: self.propensity.epsilon,
            k_folds: self.propensity.k_folds,
            alpha: self.estimator.alpha,
        }
    }

    /// Seeds every seeded section from a single value.
    pub fn set_seed(&mut self, seed: u64) {
        self.sim.seed = seed;
        self.demo.seed = seed;
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }
}

/// Parses an override value as a TOML literal, falling back to a bare string.
/// Keys whose default is textual keep the raw text, so `model=true` names the
/// `true` propensity source rather than a boolean.
fn parse_value(raw: &str, default: Option<&Value>) -> Value {
    let textual = match default {
        Some(Value::String(_)) => true,
        Some(Value::Array(a)) => a.iter().all(Value::is_str),
        _ => false,
    };
    let parsed = toml::from_str::<Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"));
    match parsed {
        Some(v) if !textual || v.is_str() || v.is_array() => v,
        _ => Value::String(raw.to_string()),
    }
}

/// Matches `key` against the known keys of a section ignoring case, so that
/// upper-case keys such as `T_list` can be reached from environment names.
fn canonical_key(known: Option<&Table>, key: &str) -> String {
    known
        .and_then(|t| t.keys().find(|k| k.eq_ignore_ascii_case(key)).cloned())
        .unwrap_or_else(|| key.to_string())
}

fn apply_override(table: &mut Table, known: &Table, path: &str, raw: &str) -> Result<()> {
    let parts: Vec<&str> = path.split('.').collect();
    let [section, rest @ ..] = parts.as_slice() else {
        bail!("empty override key");
    };
    if rest.is_empty() {
        bail!("override `{path}` must name a section and a key");
    }
    let section = canonical_key(Some(known), section);
    let mut known_t = known.get(&section).and_then(Value::as_table);
    let mut cur = table
        .entry(section.clone())
        .or_insert_with(|| Value::Table(Table::new()))
        .as_table_mut()
        .with_context(|| format!("`{section}` is not a section"))?;
    for (i, key) in rest.iter().enumerate() {
        let key = canonical_key(known_t, key);
        if i + 1 == rest.len() {
            let default = known_t.and_then(|t| t.get(&key));
            cur.insert(key, parse_value(raw, default));
        } else {
            known_t = known_t.and_then(|t| t.get(&key)).and_then(Value::as_table);
            cur = cur
                .entry(key.clone())
                .or_insert_with(|| Value::Table(Table::new()))
                .as_table_mut()
                .with_context(|| format!("`{key}` is not a table"))?;
        }
    }
    Ok(())
}

/// Loads the config file (if any) and applies overrides in order: environment
/// variables first, then explicit `section.key=value` pairs.
pub fn load(
    path: Option<&Path>,
    env: impl IntoIterator<Item = (String, String)>,
    sets: &[String],
) -> Result<RunConfig> {
    let mut table: Table = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
            toml::from_str(&text).with_context(|| format!("parsing config {}", p.display()))?
        }
        None => Table::new(),
    };
    let known: Table = toml::from_str(&RunConfig::default().to_toml()?)?;

    let mut env_overrides: Vec<(String, String)> = env
        .into_iter()
        .filter_map(|(k, v)| {
            k.strip_prefix(ENV_PREFIX)
                .map(|rest| (rest.split("__").collect::<Vec<_>>().join("."), v))
        })
        .collect();
    env_overrides.sort();
    for (key, value) in &env_overrides {
        apply_override(&mut table, &known, key, value)
            .with_context(|| format!("environment override {ENV_PREFIX}{key}"))?;
    }
    for s in sets {
        let (key, value) = s
            .split_once('=')
            .with_context(|| format!("override `{s}` is not of the form section.key=value"))?;
        apply_override(&mut table, &known, key.trim(), value.trim())?;
    }
    let cfg: RunConfig = Value::Table(table).try_into().context("invalid configuration")?;
    cfg.features.validate()?;
    Ok(cfg)
}
