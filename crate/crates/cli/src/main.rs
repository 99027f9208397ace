//! `ipsi`: incremental propensity score effect curves for daily time series.
//!
//! Exit codes: 0 success, 1 invalid input or configuration, 2 internal error.

mod config;
mod demo;
mod manifest;
mod pipeline;

use std::fs::File;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use ipsi_core::io::{
    read_curve_csv, read_panels_csv, read_study_csv, write_coverage_csv, write_panels_csv, write_report_csv,
};
use ipsi_core::meta::UnitCurve;
use ipsi_core::panel::validate_panel;
use ipsi_core::sim::experiment::{run_replicates, summarize};

use crate::config::RunConfig;
use crate::manifest::{RunRecorder, RESOLVED_CONFIG_FILE};

#[derive(Debug, Parser)]
#[command(
    name = "ipsi",
    version,
    about = "Effect curves for incremental propensity score interventions on daily time series"
)]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct GlobalArgs {
    /// TOML run configuration.
    #[arg(long, global = true, env = "IPSI_CONFIG")]
    config: Option<PathBuf>,
    /// Output directory for this run.
    #[arg(long, global = true, env = "IPSI_OUT", default_value = "ipsi-out")]
    out: PathBuf,
    /// Master seed for simulation and demo data.
    #[arg(long, global = true, env = "IPSI_SEED")]
    seed: Option<u64>,
    /// Worker threads (0 = one per core).
    #[arg(long, global = true, env = "IPSI_WORKERS", default_value_t = 0)]
    workers: usize,
    /// error, warn, info, debug or trace.
    #[arg(long, global = true, env = "IPSI_LOG_LEVEL", default_value = "info")]
    log_level: log::LevelFilter,
    /// Config override `section.key=value`; repeatable, applied last.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Check a panel CSV and report every issue.
    Validate {
        #[arg(long)]
        panel: PathBuf,
    },
    /// Fit propensities and estimate an effect curve for every unit.
    Curve {
        #[arg(long)]
        panel: PathBuf,
        /// Restrict to these unit ids.
        #[arg(long = "unit")]
        units: Vec<String>,
    },
    /// Pool per-unit curves with random-effects meta-analysis.
    Meta {
        /// Study table with columns unit_id, delta, effect, variance.
        #[arg(long, conflicts_with = "curves", required_unless_present = "curves")]
        studies: Option<PathBuf>,
        /// Curve CSVs written by `curve`; the unit id is the file stem.
        #[arg(long, num_args = 1..)]
        curves: Vec<PathBuf>,
    },
    /// Run the simulation study and write bias, RMSE and coverage tables.
    Simulate,
    /// Generate a synthetic heat-alert panel and run curve and meta on it.
    Demo,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Validate { .. } => "validate",
            Command::Curve { .. } => "curve",
            Command::Meta { .. } => "meta",
            Command::Simulate => "simulate",
            Command::Demo => "demo",
        }
    }
}

/// Errors caused by the input or configuration rather than by this tool.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
struct UserError(String);

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<UserError>() || cause.is::<toml::de::Error>() || cause.is::<clap::Error>() {
            return 1;
        }
        if let Some(e) = cause.downcast_ref::<ipsi_core::Error>() {
            return match e {
                ipsi_core::Error::Numerical(_) | ipsi_core::Error::AllLearnersFailed(_) | ipsi_core::Error::Json(_) => {
                    2
                }
                _ => 1,
            };
        }
        if let Some(e) = cause.downcast_ref::<std::io::Error>() {
            return match e.kind() {
                std::io::ErrorKind::NotFound | std::io::ErrorKind::PermissionDenied => 1,
                _ => 2,
            };
        }
    }
    2
}

fn open(path: &Path) -> Result<File> {
    File::open(path).with_context(|| format!("opening {}", path.display()))
}

fn cmd_validate(panel_path: &Path, cfg: &RunConfig, rec: &mut RunRecorder) -> Result<()> {
    rec.input(panel_path)?;
    let panels = read_panels_csv(open(panel_path)?)?;
    let mut rows = csv::Writer::from_writer(Vec::new());
    rows.write_record(["unit_id", "record", "date", "issue"])?;
    let mut n_issues = 0;
    let mut n_records = 0;
    for p in &panels {
        let mut report = validate_panel(p);
        if let Some(col) = &cfg.features.heat_index_column {
            if let Err(e) = p.covariate_index(col) {
                report.issues.push(ipsi_core::panel::ValidationIssue {
                    unit_id: p.unit_id.clone(),
                    record: None,
                    date: None,
                    kind: ipsi_core::panel::IssueKind::MissingCovariate {
                        column: format!("{col} ({e})"),
                    },
                });
            }
        }
        n_records += report.n_records;
        for issue in &report.issues {
            rows.write_record([
                issue.unit_id.clone(),
                issue.record.map(|r| r.to_string()).unwrap_or_default(),
                issue.date.map(|d| d.to_string()).unwrap_or_default(),
                issue.to_string(),
            ])?;
            println!("{issue}");
        }
        n_issues += report.issues.len();
    }
    rec.write("validation.csv", &rows.into_inner().context("flushing csv")?)?;
    println!("{} units, {n_records} records, {n_issues} issue(s)", panels.len());
    if n_issues > 0 {
        return Err(UserError(format!("panel has {n_issues} validation issue(s)")).into());
    }
    Ok(())
}

fn cmd_curve(panel_path: &Path, units: &[String], cfg: &RunConfig, rec: &mut RunRecorder) -> Result<()> {
    rec.input(panel_path)?;
    let mut panels = read_panels_csv(open(panel_path)?)?;
    if !units.is_empty() {
        panels.retain(|p| units.contains(&p.unit_id));
        if panels.is_empty() {
            return Err(UserError(format!("none of the units {units:?} is in the panel")).into());
        }
    }
    let run = pipeline::run_curves(&panels, cfg, rec)?;
    println!(
        "{} curve(s) written, {} unit(s) failed",
        run.curves.len(),
        run.failures.len()
    );
    if run.curves.is_empty() {
        return Err(UserError("no unit produced an effect curve; see failures.csv".into()).into());
    }
    Ok(())
}

fn cmd_meta(studies: Option<&Path>, curve_paths: &[PathBuf], cfg: &RunConfig, rec: &mut RunRecorder) -> Result<()> {
    let curves = match studies {
        Some(path) => {
            rec.input(path)?;
            read_study_csv(open(path)?)?
        }
        None => {
            let mut curves = Vec::new();
            for path in curve_paths {
                rec.input(path)?;
                let points = read_curve_csv(open(path)?)?;
                let unit_id = path
                    .file_stem()
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_default();
                curves.push(UnitCurve {
                    unit_id,
                    deltas: points.iter().map(|p| p.delta).collect(),
                    effects: points.iter().map(|p| p.effect).collect(),
                    variances: points.iter().map(|p| p.effect_var).collect(),
                });
            }
            curves
        }
    };
    let pooled = pipeline::run_meta(&curves, cfg.meta.alpha, rec)?;
    println!("pooled {} unit(s) at {} grid points", curves.len(), pooled.points.len());
    Ok(())
}

fn cmd_simulate(cfg: &RunConfig, rec: &mut RunRecorder) -> Result<()> {
    let exp = cfg.experiment();
    rec.seed("sim", exp.seed);
    let raw = run_replicates(&exp)?;
    let report = summarize(&exp, &raw)?;
    let mut buf = Vec::new();
    write_report_csv(&mut buf, &report)?;
    rec.write("report.csv", &buf)?;
    let mut buf = Vec::new();
    write_coverage_csv(&mut buf, &report.coverage)?;
    rec.write("coverage.csv", &buf)?;
    println!(
        "{:>6} {:>4} {:>9} {:>8} {:>8} {:>8} {:>9}",
        "T", "t0", "model", "bias", "mae", "rmse", "coverage"
    );
    for c in &report.cells {
        rec.timing(&format!("T={},t0={},{}", c.t_len, c.t0, c.model), c.wall_time_s);
        println!(
            "{:>6} {:>4} {:>9} {:>8.3} {:>8.3} {:>8.3} {:>9.3}",
            c.t_len, c.t0, c.model, c.metrics.bias, c.metrics.mae, c.metrics.rmse, c.coverage
        );
    }
    Ok(())
}

#[derive(serde::Serialize)]
struct DemoSummary {
    units: usize,
    seasons: usize,
    seed: u64,
    treatment_prevalence: f64,
    pooled_effect_at_identity: Option<f64>,
    failed_units: usize,
}

fn cmd_demo(cfg: &RunConfig, rec: &mut RunRecorder) -> Result<()> {
    let mut cfg = cfg.clone();
    if cfg.features.heat_index_column.is_none() {
        cfg.features.heat_index_column = Some("heat".into());
    }
    rec.seed("demo", cfg.demo.seed);
    let panels = demo::generate_demo_panels(cfg.demo.units, cfg.demo.seasons, cfg.demo.seed);
    let prevalence = demo::treatment_prevalence(&panels);
    if !(0.01..=0.05).contains(&prevalence) {
        let msg = format!("treatment prevalence {prevalence:.4} is outside the intended 1% to 5%");
        log::warn!("{msg}");
        rec.note(msg);
    }
    let mut buf = Vec::new();
    write_panels_csv(&mut buf, &panels)?;
    rec.write("panel.csv", &buf)?;
    let run = pipeline::run_curves(&panels, &cfg, rec)?;
    if run.curves.is_empty() {
        anyhow::bail!("no demo unit produced a curve");
    }
    let pooled = pipeline::run_meta(&run.curves, cfg.meta.alpha, rec)?;
    let at_one = pooled.points.iter().find(|p| p.delta == 1.0).map(|p| p.effect);
    let summary = DemoSummary {
        units: cfg.demo.units,
        seasons: cfg.demo.seasons,
        seed: cfg.demo.seed,
        treatment_prevalence: prevalence,
        pooled_effect_at_identity: at_one,
        failed_units: run.failures.len(),
    };
    rec.write("demo_summary.json", serde_json::to_string_pretty(&summary)?.as_bytes())?;
    println!(
        "demo: {} units, prevalence {:.4}, {} curve(s), pooled effect at delta=1: {:?}",
        cfg.demo.units,
        prevalence,
        run.curves.len(),
        at_one
    );
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let g = &cli.global;
    let mut cfg =
        config::load(g.config.as_deref(), std::env::vars(), &g.set).map_err(|e| UserError(format!("{e:#}")))?;
    if let Some(seed) = g.seed {
        cfg.set_seed(seed);
    }
    if g.workers > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(g.workers)
            .build_global()
            .context("starting worker pool")?;
    }
    std::fs::create_dir_all(&g.out).with_context(|| format!("creating {}", g.out.display()))?;
    let resolved = cfg.to_toml()?;
    let mut rec = RunRecorder::new(&g.out, cli.command.name(), &resolved, rayon::current_num_threads());
    rec.write(RESOLVED_CONFIG_FILE, resolved.as_bytes())?;
    if let Some(p) = &g.config {
        rec.input(p)?;
    }
    log::info!("{} -> {}", cli.command.name(), rec.out_dir().display());

    let start = Instant::now();
    let result = match &cli.command {
        Command::Validate { panel } => cmd_validate(panel, &cfg, &mut rec),
        Command::Curve { panel, units } => cmd_curve(panel, units, &cfg, &mut rec),
        Command::Meta { studies, curves } => cmd_meta(studies.as_deref(), curves, &cfg, &mut rec),
        Command::Simulate => cmd_simulate(&cfg, &mut rec),
        Command::Demo => cmd_demo(&cfg, &mut rec),
    };
    rec.timing("command", start.elapsed().as_secs_f64());
    if let Err(e) = &result {
        rec.note(format!("failed: {e:#}"));
    }
    rec.finish()?;
    result
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    env_logger::Builder::new()
        .filter_level(cli.global.log_level)
        .format_timestamp(None)
        .init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let code = exit_code(&e);
            eprintln!("error: {e:#}");
            ExitCode::from(code)
        }
    }
}
