//! Command line front end for the line-depth observer simulator.
//!
//! Every run resolves to one complete configuration (a named preset, a TOML
//! file, or a previous run's manifest), stamps that configuration plus its
//! provenance into `<out>/manifest.toml` before any computation starts, and
//! then writes CSV results. Re-running a command with `--config` pointing at
//! a manifest reproduces the original outputs byte for byte; worker count
//! only changes wall time, never results.

mod config;
mod svg;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use mwline::montecarlo::{
    aggregate, aggregate_csv, run_monte_carlo, run_noise_sweep, series_csv, sweep_csv, trials_csv,
    AggregateReport,
};
use mwline::trials::{run_trial, TrialRecord, Verdict};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use svg::{Series, YScale};

#[derive(Parser)]
#[command(name = "mwline", version, about = "Depth observers for Manhattan-world line bundles")]
struct Cli {
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one trial, optionally with its full error history.
    Single(RunArgs),
    /// Run a Monte-Carlo batch and print its summary row.
    Mc(RunArgs),
    /// Run one Monte-Carlo batch per measurement-noise level.
    Sweep(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Built-in configuration: mwlest-noiseless, mwlest-noise, or
    /// cascade-vib. Default: mwlest-noiseless (mwlest-noise for sweep).
    #[arg(long, conflicts_with = "config")]
    preset: Option<String>,

    /// TOML configuration file. A previous run's manifest.toml replays
    /// that run exactly.
    #[arg(long)]
    config: Option<PathBuf>,

    /// Overrides run.seed.
    #[arg(long)]
    seed: Option<u64>,

    /// Overrides run.trials.
    #[arg(long)]
    trials: Option<usize>,

    /// Worker threads for batch commands. Default: one per core. Results
    /// do not depend on this.
    #[arg(long)]
    workers: Option<usize>,

    /// Output directory, created if missing.
    #[arg(long, default_value = "out")]
    out: PathBuf,

    /// Overrides run.noise_sigma_deg.
    #[arg(long)]
    noise_deg: Option<f64>,

    /// Forces run.record_series on (series.csv; single runs only).
    #[arg(long)]
    emit_series: bool,

    /// Also renders SVG plots next to the CSV files. The CSVs stay the
    /// canonical record.
    #[arg(long)]
    emit_svg: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.cmd {
        Command::Single(args) => cmd_single(args),
        Command::Mc(args) => cmd_mc(args),
        Command::Sweep(args) => cmd_sweep(args),
    };
    match result {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(2)
        }
    }
}

/// Resolves flags into a full config with its provenance stamp. Scalars
/// given on the command line override the file before the manifest is
/// written, so the manifest always records what actually ran.
fn resolve(args: &RunArgs, command: &str, default_preset: &str) -> Result<config::RunConfig> {
    let (mut rc, source) = match (&args.preset, &args.config) {
        (Some(name), None) => (config::preset(name)?, format!("preset:{name}")),
        (None, Some(path)) => (config::load(path)?, path.display().to_string()),
        (None, None) => (
            config::preset(default_preset)?,
            format!("preset:{default_preset}"),
        ),
        (Some(_), Some(_)) => unreachable!("flag conflict is rejected during parsing"),
    };
    if let Some(seed) = args.seed {
        rc.run.seed = seed;
    }
    if let Some(trials) = args.trials {
        rc.run.trials = trials;
    }
    if let Some(noise) = args.noise_deg {
        if noise < 0.0 {
            bail!("--noise-deg: must be non-negative, got {noise}");
        }
        rc.run.noise_sigma_deg = noise;
    }
    if args.emit_series {
        rc.run.record_series = true;
    }
    rc.manifest = Some(config::ManifestSection {
        command: command.to_string(),
        config_source: source,
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        out_dir: args.out.display().to_string(),
    });
    Ok(rc)
}

fn write_manifest(out: &Path, rc: &config::RunConfig) -> Result<()> {
    std::fs::create_dir_all(out)
        .with_context(|| format!("creating output directory {}", out.display()))?;
    write_file(&out.join("manifest.toml"), &config::to_toml(rc))
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
    println!("wrote {}", path.display());
    Ok(())
}

/// Runs `f` on a pool of the requested width; `None` keeps the default
/// pool. Trial seeding is per-index, so the width cannot change results.
fn with_pool<T: Send>(workers: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match workers {
        None => Ok(f()),
        Some(0) => bail!("--workers: must be at least 1"),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .context("building the worker pool")?;
            Ok(pool.install(f))
        }
    }
}

fn cmd_single(args: &RunArgs) -> Result<ExitCode> {
    let rc = resolve(args, "single", "mwlest-noiseless")?;
    let cfg = config::to_trial_config(&rc)?;
    write_manifest(&args.out, &rc)?;

    let record = run_trial(&cfg).context("running the trial")?;
    write_file(&args.out.join("trials.csv"), &trials_csv(&[record.clone()]))?;
    if !record.series.is_empty() {
        write_file(&args.out.join("series.csv"), &series_csv(&record))?;
    }
    if args.emit_svg {
        emit_single_svgs(&args.out, &record)?;
    }

    match &record.verdict {
        Verdict::Converged { t } => println!("verdict: converged at {t:.3} s"),
        Verdict::Diverged { t, cause } => println!("verdict: diverged at {t:.3} s ({cause:?})"),
        Verdict::Timeout => println!("verdict: timeout (never reached the convergence threshold)"),
    }
    if let Some(t) = record.plane_converged_t {
        println!("plane velocity converged at {t:.3} s");
    }
    if record.verdict.is_success() {
        let fmt = |v: &[f64]| v.iter().map(|e| format!("{e:.2e}")).collect::<Vec<_>>().join(" ");
        println!("final direction errors [rad]: {}", fmt(&record.final_eps_d));
        println!("final depth errors: {}", fmt(&record.final_eps_l));
    }
    Ok(if record.verdict.is_success() {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    })
}

fn cmd_mc(args: &RunArgs) -> Result<ExitCode> {
    let rc = resolve(args, "mc", "mwlest-noiseless")?;
    let cfg = config::to_trial_config(&rc)?;
    if rc.run.trials == 0 {
        bail!("run.trials: must be at least 1");
    }
    write_manifest(&args.out, &rc)?;

    let records = with_pool(args.workers, || {
        run_monte_carlo(&cfg, rc.run.trials, rc.run.seed)
    })?
    .context("running the batch")?;
    let report = aggregate(&records);

    write_file(&args.out.join("trials.csv"), &trials_csv(&records))?;
    write_file(&args.out.join("aggregate.csv"), &aggregate_csv(&report))?;
    println!("{}", summary_row(&report));
    Ok(ExitCode::SUCCESS)
}

fn cmd_sweep(args: &RunArgs) -> Result<ExitCode> {
    let rc = resolve(args, "sweep", "mwlest-noise")?;
    let cfg = config::to_trial_config(&rc)?;
    if rc.run.trials == 0 {
        bail!("run.trials: must be at least 1");
    }
    if rc.run.sigmas_deg.is_empty() {
        bail!("run.sigmas_deg: at least one noise level required");
    }
    if let Some(bad) = rc.run.sigmas_deg.iter().find(|s| **s < 0.0) {
        bail!("run.sigmas_deg: levels must be non-negative, got {bad}");
    }
    write_manifest(&args.out, &rc)?;

    let rows = with_pool(args.workers, || {
        run_noise_sweep(&cfg, &rc.run.sigmas_deg, rc.run.trials, rc.run.seed)
    })?
    .context("running the sweep")?;

    write_file(&args.out.join("sweep.csv"), &sweep_csv(&rows))?;
    if args.emit_svg {
        emit_sweep_svgs(&args.out, &rows)?;
    }
    for (sigma, report) in &rows {
        println!("sigma {sigma:.1} deg: {}", summary_row(report));
    }
    Ok(ExitCode::SUCCESS)
}

fn summary_row(report: &AggregateReport) -> String {
    let opt = |v: Option<f64>, unit: &str| match v {
        Some(v) => format!("{v:.2}{unit}"),
        None => "n/a".to_string(),
    };
    format!(
        "trials {}: success {:.1}%, median t_c {}, median distance {}",
        report.n_trials,
        report.success_rate_pct,
        opt(report.median_convergence_s, " s"),
        opt(report.median_distance, "")
    )
}

fn emit_single_svgs(out: &Path, record: &TrialRecord) -> Result<()> {
    let samples = &record.series;
    let curve = |f: &dyn Fn(&mwline::trials::SeriesSample) -> Option<f64>| -> Vec<(f64, f64)> {
        samples.iter().filter_map(|s| f(s).map(|v| (s.t, v))).collect()
    };

    let mut errors = vec![
        Series { label: "observer state", points: curve(&|s| Some(s.state_error)) },
        Series { label: "frame", points: curve(&|s| Some(s.cayley_error)) },
    ];
    if samples.iter().any(|s| s.plane_error.is_some()) {
        errors.push(Series { label: "plane velocity", points: curve(&|s| s.plane_error) });
    }
    if let Some(text) = svg::line_plot("estimation errors", "t [s]", "error", &errors, YScale::Log10) {
        write_file(&out.join("series_errors.svg"), &text)?;
    }

    let labels: Vec<String> = (1..=record.n_lines).map(|i| format!("line {i}")).collect();
    for (name, title, pick) in [
        ("series_eps_d.svg", "direction error per line", 0usize),
        ("series_eps_l.svg", "depth error per line", 1usize),
    ] {
        let per_line: Vec<Series> = labels
            .iter()
            .enumerate()
            .map(|(i, label)| Series {
                label,
                points: curve(&|s| Some(if pick == 0 { s.eps_d[i] } else { s.eps_l[i] })),
            })
            .collect();
        if let Some(text) = svg::line_plot(title, "t [s]", "error", &per_line, YScale::Log10) {
            write_file(&out.join(name), &text)?;
        }
    }
    Ok(())
}

fn emit_sweep_svgs(out: &Path, rows: &[(f64, AggregateReport)]) -> Result<()> {
    for (name, title, pick) in [
        ("sweep_eps_d.svg", "median final direction error vs noise", 0usize),
        ("sweep_eps_l.svg", "median final depth error vs noise", 1usize),
    ] {
        let points: Vec<(f64, f64)> = rows
            .iter()
            .map(|(sigma, r)| {
                (*sigma, if pick == 0 { r.median_final_eps_d } else { r.median_final_eps_l })
            })
            .collect();
        let series = [Series { label: "median over batch", points }];
        if let Some(text) = svg::line_plot(title, "sigma [deg]", "error", &series, YScale::Log10) {
            write_file(&out.join(name), &text)?;
        }
    }
    let success = [Series {
        label: "success rate",
        points: rows.iter().map(|(sigma, r)| (*sigma, r.success_rate_pct)).collect(),
    }];
    if let Some(text) = svg::line_plot(
        "success rate vs noise",
        "sigma [deg]",
        "success [%]",
        &success,
        YScale::Linear,
    ) {
        write_file(&out.join("sweep_success.svg"), &text)?;
    }
    Ok(())
}
