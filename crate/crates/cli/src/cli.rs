//! Command-line surface. Configuration flags mirror config keys: `--set
//! train.epochs=50` overrides the same key a file would set.

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use tcblran::config::ModelKind;
use tcblran::datagen::random_piecewise_control;
use tcblran::dynamics::{simulate, Benchmark};
use tcblran::evaluation::{compare, Comparison, EvalReport};

use crate::artifacts::{csv_preamble, write_json, write_text};
use crate::error::{CliError, CliResult};
use crate::experiment::{
    collect_reports, evaluate_checkpoint, mean_of_series, read_sweep, run_experiment, run_sweep, sweep_plot,
    ConfigSource, RunLayout, KIND_COMPARISON, KIND_TRAJECTORY,
};
use crate::plot::{line_chart, Series};

#[derive(Debug, Parser)]
#[command(name = "tcblran", version, about = "Bilinear Koopman autoencoders with temporal consistency")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Integrate a benchmark system under random piecewise-constant inputs.
    Simulate(SimulateArgs),
    /// Build the dataset and train one model per configured seed.
    Train(RunArgs),
    /// Evaluate a saved checkpoint on fresh random inputs.
    Evaluate(EvaluateArgs),
    /// Paired comparison of two sets of evaluation reports.
    Compare(CompareArgs),
    /// Repeat the full pipeline over several training-set sizes.
    Sweep(SweepArgs),
    /// Render error-versus-time or sweep charts from saved outputs.
    Plot(PlotArgs),
    /// Full pipeline: dataset, training, evaluation, summary and plot.
    Run(RunArgs),
}

#[derive(Debug, Clone, Args)]
pub struct ConfigArgs {
    /// TOML configuration file.
    #[arg(long, short = 'c')]
    pub config: Option<PathBuf>,
    /// Hyperparameter preset `<pendulum|vdp|duffing>-<clean|20db>-<tcblran|blran>`.
    #[arg(long, short = 'p')]
    pub preset: Option<String>,
    /// Dot-path override such as `train.epochs=50` (repeatable).
    #[arg(long = "set", short = 's', value_name = "KEY=VALUE")]
    pub sets: Vec<String>,
}

impl ConfigArgs {
    pub fn source(&self) -> CliResult<ConfigSource> {
        ConfigSource::from_args(self.config.as_deref(), self.preset.as_deref(), &self.sets)
    }
}

fn default_jobs() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Run directory; defaults to `<output_dir>/<label>`.
    #[arg(long, short = 'o')]
    pub out: Option<PathBuf>,
    /// Worker threads for independent seeds.
    #[arg(long, short = 'j')]
    pub jobs: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct SimulateArgs {
    /// pendulum, vanderpol (vdp) or duffing.
    #[arg(long, default_value = "pendulum")]
    pub system: String,
    /// Initial state, comma separated.
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true, default_value = "0.8,0")]
    pub x0: Vec<f64>,
    #[arg(long, default_value_t = 0.1)]
    pub dt: f64,
    /// Number of sampling intervals.
    #[arg(long, default_value_t = 2200)]
    pub steps: usize,
    #[arg(long, default_value_t = 1)]
    pub control_seed: u64,
    #[arg(long, default_value_t = -0.15, allow_negative_numbers = true)]
    pub lo: f64,
    #[arg(long, default_value_t = 0.15, allow_negative_numbers = true)]
    pub hi: f64,
    /// Output CSV; standard output when omitted.
    #[arg(long, short = 'o')]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct EvaluateArgs {
    /// Checkpoint written by `train` or `run`.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Dataset file; rebuilt from the checkpoint's configuration when omitted.
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// Overrides applied to the checkpoint's configuration (evaluation keys).
    #[arg(long = "set", short = 's', value_name = "KEY=VALUE")]
    pub sets: Vec<String>,
    /// Directory receiving `seed_<n>/errors.csv` and `seed_<n>/report.json`.
    #[arg(long, short = 'o')]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct CompareArgs {
    /// Run directories or report files of the first model.
    #[arg(long, num_args = 1.., required = true)]
    pub a: Vec<PathBuf>,
    /// Run directories or report files of the second model.
    #[arg(long, num_args = 1.., required = true)]
    pub b: Vec<PathBuf>,
    /// Also write the comparison as JSON.
    #[arg(long, short = 'o')]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Training-set sizes.
    #[arg(long, value_delimiter = ',', default_value = "32,64,128,256")]
    pub n_train: Vec<usize>,
    /// Models to run; the configured model when omitted.
    #[arg(long, value_delimiter = ',')]
    pub models: Vec<String>,
    /// Sweep directory; defaults to `<output_dir>/sweep-<system>-<noise>`.
    #[arg(long, short = 'o')]
    pub out: Option<PathBuf>,
    #[arg(long, short = 'j')]
    pub jobs: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct PlotArgs {
    /// Run directories or report files; one line per argument.
    #[arg(long, num_args = 1.., conflicts_with = "sweep")]
    pub runs: Vec<PathBuf>,
    /// A `sweep.csv` to draw as grouped bars.
    #[arg(long)]
    pub sweep: Option<PathBuf>,
    /// Output SVG.
    #[arg(long, short = 'o')]
    pub out: PathBuf,
}

pub fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Simulate(a) => cmd_simulate(&a),
        Command::Train(a) => cmd_run(&a, false),
        Command::Run(a) => cmd_run(&a, true),
        Command::Evaluate(a) => cmd_evaluate(&a),
        Command::Compare(a) => cmd_compare(&a),
        Command::Sweep(a) => cmd_sweep(&a),
        Command::Plot(a) => cmd_plot(&a),
    }
}

#[derive(Serialize)]
struct SimulateEcho<'a> {
    system: &'a Benchmark,
    x0: &'a [f64],
    dt: f64,
    steps: usize,
    control_seed: u64,
    control_lo: f64,
    control_hi: f64,
}

pub fn cmd_simulate(a: &SimulateArgs) -> CliResult<()> {
    let system = Benchmark::from_name(&a.system)?;
    let x0 = nalgebra::DVector::from_column_slice(&a.x0);
    let controls = random_piecewise_control(a.control_seed, a.steps, a.lo, a.hi)?;
    let traj = simulate(&system, &x0, &controls, a.dt)?;
    let echo = toml::to_string(&SimulateEcho {
        system: &system,
        x0: &a.x0,
        dt: a.dt,
        steps: a.steps,
        control_seed: a.control_seed,
        control_lo: a.lo,
        control_hi: a.hi,
    })
    .map_err(|e| CliError::Usage(e.to_string()))?;

    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["t".to_string()];
    header.extend((1..=x0.len()).map(|i| format!("x{i}")));
    header.push("u".into());
    w.write_record(&header)?;
    for (k, (t, x)) in traj.times().zip(&traj.states).enumerate() {
        let mut row = vec![t.to_string()];
        row.extend(x.iter().map(ToString::to_string));
        row.push(traj.controls.get(k).map_or(String::new(), |u| u[0].to_string()));
        w.write_record(&row)?;
    }
    let body = String::from_utf8(w.into_inner().map_err(|e| CliError::Usage(e.to_string()))?)
        .expect("csv output is UTF-8");
    let text = csv_preamble(KIND_TRAJECTORY, &echo) + &body;
    match &a.out {
        Some(path) => write_text(path, &text),
        None => std::io::stdout()
            .write_all(text.as_bytes())
            .map_err(|e| CliError::io(Path::new("<stdout>"), e)),
    }
}

pub fn cmd_run(a: &RunArgs, evaluate: bool) -> CliResult<()> {
    let cfg = a.config.source()?.resolve(&[])?;
    let layout = a.out.clone().map_or_else(|| RunLayout::for_config(&cfg), RunLayout::new);
    let outcome = run_experiment(&cfg, &layout, a.jobs.unwrap_or_else(default_jobs), evaluate)?;
    if let Some(s) = &outcome.summary {
        println!(
            "{}: median {:.6} mean {:.6} std {:.6} over {} seed(s) x {} IC(s)",
            s.label,
            s.aggregate.stats.median,
            s.aggregate.stats.mean,
            s.aggregate.stats.std,
            s.aggregate.seeds.len(),
            cfg.eval.n_ics
        );
    }
    println!("outputs in {}", outcome.layout.root.display());
    outcome.into_result().map(|_| ())
}

pub fn cmd_evaluate(a: &EvaluateArgs) -> CliResult<()> {
    let report = evaluate_checkpoint(&a.checkpoint, a.dataset.as_deref(), &a.sets, &RunLayout::new(&a.out))?;
    let stats = report.stats()?;
    println!(
        "{} seed {}: median {:.6} mean {:.6} std {:.6} over {} IC(s)",
        report.meta.model, report.meta.seed, stats.median, stats.mean, stats.std, stats.count
    );
    Ok(())
}

#[derive(Serialize)]
struct ComparisonOut<'a> {
    comparison: &'a Comparison,
    config_a: Vec<String>,
    config_b: Vec<String>,
}

fn distinct(configs: impl Iterator<Item = String>) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for c in configs {
        if !out.contains(&c) {
            out.push(c);
        }
    }
    out
}

/// Plain-text comparison table.
pub fn comparison_table(c: &Comparison) -> String {
    let row = |name: &str, s: &tcblran::evaluation::SeedSummary| {
        format!(
            "{name:<3} {:<10} {:>10.6} {:>10.6} {:>10.6} {:>6}\n",
            s.model, s.stats.median, s.stats.mean, s.stats.std, s.stats.count
        )
    };
    let mut out = format!(
        "{} (snr {}) n_train={}\n",
        c.a.system,
        c.a.snr_db.map_or("clean".into(), |s| format!("{s} dB")),
        c.a.n_train
    );
    out += &format!("{:<3} {:<10} {:>10} {:>10} {:>10} {:>6}\n", "", "model", "median", "mean", "std", "n");
    out += &row("a", &c.a);
    out += &row("b", &c.b);
    out += &format!(
        "paired cells {}, median diff (a-b) {:.6}, mean diff (a-b) {:.6}, win rate a {:.3}\n",
        c.pairs, c.median_diff, c.mean_diff, c.win_rate_a
    );
    out
}

pub fn cmd_compare(a: &CompareArgs) -> CliResult<()> {
    let ra = collect_reports(&a.a)?;
    let rb = collect_reports(&a.b)?;
    let reports = |v: &[(EvalReport, String)]| v.iter().map(|(r, _)| r.clone()).collect::<Vec<_>>();
    let c = compare(&reports(&ra), &reports(&rb))?;
    print!("{}", comparison_table(&c));
    if let Some(out) = &a.out {
        let config_a = distinct(ra.into_iter().map(|(_, c)| c));
        let config_b = distinct(rb.into_iter().map(|(_, c)| c));
        let echo = format!("# a\n{}\n# b\n{}", config_a.join("\n"), config_b.join("\n"));
        write_json(
            out,
            KIND_COMPARISON,
            &echo,
            &ComparisonOut {
                comparison: &c,
                config_a,
                config_b,
            },
        )?;
    }
    Ok(())
}

pub fn cmd_sweep(a: &SweepArgs) -> CliResult<()> {
    let models = a
        .models
        .iter()
        .map(|m| ModelKind::from_label(m))
        .collect::<tcblran::Result<Vec<_>>>()?;
    let (root, rows, error) = run_sweep(
        &a.config.source()?,
        &a.n_train,
        &models,
        a.out.as_deref(),
        a.jobs.unwrap_or_else(default_jobs),
    )?;
    println!("{:>8} {:<8} {:<7} {:>10} {:>10}", "n_train", "model", "status", "median", "mean");
    for r in &rows {
        println!("{:>8} {:<8} {:<7} {:>10.6} {:>10.6}", r.n_train, r.model, r.status, r.median, r.mean);
    }
    println!("outputs in {}", root.display());
    error.map_or(Ok(()), Err)
}

pub fn cmd_plot(a: &PlotArgs) -> CliResult<()> {
    let svg = if let Some(sweep) = &a.sweep {
        let (rows, config) = read_sweep(sweep)?;
        sweep_plot(&rows, &config)
    } else {
        if a.runs.is_empty() {
            return Err(CliError::Usage("plot needs --runs or --sweep".into()));
        }
        let mut series = Vec::new();
        let mut echo = Vec::new();
        for path in &a.runs {
            let reports = collect_reports(std::slice::from_ref(path))?;
            let first = &reports[0].0.meta;
            let label = format!(
                "{} {}",
                first.model,
                first.snr_db.map_or("clean".into(), |s| format!("{s} dB"))
            );
            let mean = mean_of_series(&reports.iter().map(|(r, _)| r.mean_series()).collect::<Vec<_>>());
            series.push(Series {
                label,
                points: mean.iter().enumerate().map(|(k, &v)| (k as f64 * first.dt, v)).collect(),
            });
            echo.extend(reports.into_iter().map(|(_, c)| c));
        }
        line_chart(
            "Relative prediction error with time",
            "time (s)",
            "relative error (mean over ICs and seeds)",
            &series,
            &distinct(echo.into_iter()).join("\n"),
        )
    };
    write_text(&a.out, &svg)
}
