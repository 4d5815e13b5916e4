//! Experiment orchestration: dataset, per-seed training and evaluation,
//! aggregation, and every artifact written along the way.
//!
//! Seeds run on worker threads; all files are written by the calling thread
//! as results arrive, so a failed seed never loses the others' outputs.

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::mpsc;
use std::time::Instant;

use log::{info, warn};
use serde::{Deserialize, Serialize};
use tcblran::config::{parse_config, ExperimentConfig, ModelKind};
use tcblran::datagen::{build_dataset, Dataset, DatasetFile};
use tcblran::evaluation::{aggregate_seeds, evaluate_model, EvalReport, ModelLabel, SeedSummary, Stats};
use tcblran::losses::LossBreakdown;
use tcblran::model::Checkpoint;
use tcblran::training::{train, TrainingData, TrainingHistory};

use crate::artifacts::{csv_reader, read_json, read_text, write_csv, write_json, write_text};
use crate::error::{core_exit_code, CliError, CliResult, EXIT_OK};
use crate::plot::{bar_chart, line_chart, Series};

/// TOML text plus `key=value` overrides, resolved on demand so that callers
/// can add their own overrides (the sweep does).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConfigSource {
    pub text: String,
    pub overrides: Vec<String>,
}

impl ConfigSource {
    /// `--preset` becomes a leading `preset=` override, so a file's own
    /// `preset` key is replaced by it and `--set` flags win over both.
    pub fn from_args(config: Option<&Path>, preset: Option<&str>, sets: &[String]) -> CliResult<Self> {
        let text = config.map(read_text).transpose()?.unwrap_or_default();
        let mut overrides: Vec<String> = preset.map(|p| format!("preset={p}")).into_iter().collect();
        overrides.extend(sets.iter().cloned());
        Ok(ConfigSource { text, overrides })
    }

    pub fn resolve(&self, extra: &[String]) -> CliResult<ExperimentConfig> {
        let all: Vec<&str> = self.overrides.iter().chain(extra).map(String::as_str).collect();
        Ok(parse_config(&self.text, &all)?)
    }
}

/// File names inside one run directory.
#[derive(Debug, Clone, PartialEq)]
pub struct RunLayout {
    pub root: PathBuf,
}

impl RunLayout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        RunLayout { root: root.into() }
    }

    /// `<output_dir>/<label>` for a configuration.
    pub fn for_config(cfg: &ExperimentConfig) -> Self {
        RunLayout::new(Path::new(&cfg.output_dir).join(cfg.label()))
    }

    pub fn config(&self) -> PathBuf {
        self.root.join("config.toml")
    }

    pub fn manifest(&self) -> PathBuf {
        self.root.join("manifest.json")
    }

    pub fn dataset(&self) -> PathBuf {
        self.root.join("dataset.json")
    }

    pub fn summary(&self) -> PathBuf {
        self.root.join("summary.json")
    }

    pub fn error_plot(&self) -> PathBuf {
        self.root.join("error_vs_time.svg")
    }

    pub fn seed_dir(&self, seed: u64) -> PathBuf {
        self.root.join(format!("seed_{seed}"))
    }

    pub fn history(&self, seed: u64) -> PathBuf {
        self.seed_dir(seed).join("history.csv")
    }

    pub fn checkpoint(&self, seed: u64) -> PathBuf {
        self.seed_dir(seed).join("checkpoint.json")
    }

    pub fn errors(&self, seed: u64) -> PathBuf {
        self.seed_dir(seed).join("errors.csv")
    }

    pub fn report(&self, seed: u64) -> PathBuf {
        self.seed_dir(seed).join("report.json")
    }
}

pub const KIND_MANIFEST: &str = "manifest";
pub const KIND_DATASET: &str = "dataset";
pub const KIND_HISTORY: &str = "history";
pub const KIND_CHECKPOINT: &str = "checkpoint";
pub const KIND_ERRORS: &str = "errors";
pub const KIND_REPORT: &str = "report";
pub const KIND_SUMMARY: &str = "summary";
pub const KIND_SWEEP: &str = "sweep";
pub const KIND_COMPARISON: &str = "comparison";
pub const KIND_TRAJECTORY: &str = "trajectory";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub seed: Option<u64>,
    pub stage: String,
    pub ok: bool,
    pub exit_code: u8,
    pub message: Option<String>,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub label: String,
    /// `running`, `complete`, `partial` or `failed`.
    pub status: String,
    pub stages: Vec<StageRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedRow {
    pub seed: u64,
    pub final_loss: Option<LossBreakdown>,
    pub stats: Stats,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub label: String,
    pub system: String,
    pub model: String,
    pub snr_db: Option<f64>,
    pub n_train: usize,
    pub dt: f64,
    pub failed_seeds: Vec<u64>,
    pub per_seed: Vec<SeedRow>,
    pub aggregate: SeedSummary,
    /// Error at each time index averaged over initial conditions and seeds.
    pub mean_series: Vec<f64>,
}

/// What a run produced.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub layout: RunLayout,
    pub reports: Vec<EvalReport>,
    pub summary: Option<RunSummary>,
    pub manifest: Manifest,
}

impl RunOutcome {
    /// `Err` with the first failed stage's exit code if anything failed.
    pub fn into_result(self) -> CliResult<RunOutcome> {
        match self.manifest.stages.iter().find(|s| !s.ok) {
            None => Ok(self),
            Some(first) => Err(CliError::Partial {
                code: first.exit_code,
                message: format!(
                    "{}: {} stage(s) failed, first: {}{}: {}; see {}",
                    self.manifest.label,
                    self.manifest.stages.iter().filter(|s| !s.ok).count(),
                    first.stage,
                    first.seed.map_or(String::new(), |s| format!(" of seed {s}")),
                    first.message.as_deref().unwrap_or(""),
                    self.layout.manifest().display()
                ),
            }),
        }
    }
}

enum Event {
    Trained {
        seed: u64,
        history: TrainingHistory,
        checkpoint: Checkpoint,
        seconds: f64,
    },
    Evaluated {
        seed: u64,
        report: EvalReport,
        seconds: f64,
    },
    Failed {
        seed: u64,
        stage: &'static str,
        error: tcblran::Error,
        seconds: f64,
    },
}

fn ok_stage(seed: Option<u64>, stage: &str, seconds: f64) -> StageRecord {
    StageRecord {
        seed,
        stage: stage.into(),
        ok: true,
        exit_code: EXIT_OK,
        message: None,
        seconds,
    }
}

fn failed_stage(seed: Option<u64>, stage: &str, error: &tcblran::Error, seconds: f64) -> StageRecord {
    StageRecord {
        seed,
        stage: stage.into(),
        ok: false,
        exit_code: core_exit_code(error),
        message: Some(error.to_string()),
        seconds,
    }
}

fn seed_worker(
    cfg: &ExperimentConfig,
    dataset: &Dataset,
    data: &TrainingData,
    seed: u64,
    evaluate: bool,
    tx: &mpsc::Sender<Event>,
) {
    let start = Instant::now();
    let trained = train(&cfg.train_setup(seed), data);
    let seconds = start.elapsed().as_secs_f64();
    let params = match trained {
        Ok((params, history)) => {
            let checkpoint = params.to_checkpoint(seed, cfg.train.epochs);
            let _ = tx.send(Event::Trained {
                seed,
                history,
                checkpoint,
                seconds,
            });
            params
        }
        Err(error) => {
            let _ = tx.send(Event::Failed {
                seed,
                stage: "train",
                error,
                seconds,
            });
            return;
        }
    };
    if !evaluate {
        return;
    }
    let start = Instant::now();
    let label = ModelLabel {
        model: cfg.model.label().into(),
        seed,
    };
    let event = match cfg
        .eval_config()
        .and_then(|ec| evaluate_model(&params, &cfg.system, dataset, &ec, &label))
    {
        Ok(report) => Event::Evaluated {
            seed,
            report,
            seconds: start.elapsed().as_secs_f64(),
        },
        Err(error) => Event::Failed {
            seed,
            stage: "evaluate",
            error,
            seconds: start.elapsed().as_secs_f64(),
        },
    };
    let _ = tx.send(event);
}

/// Element-wise mean of equally long series, skipping NaN entries.
pub fn mean_of_series(series: &[Vec<f64>]) -> Vec<f64> {
    let len = series.iter().map(Vec::len).min().unwrap_or(0);
    (0..len)
        .map(|k| {
            let vals: Vec<f64> = series.iter().map(|s| s[k]).filter(|v| !v.is_nan()).collect();
            if vals.is_empty() {
                f64::NAN
            } else {
                vals.iter().sum::<f64>() / vals.len() as f64
            }
        })
        .collect()
}

/// Time axis in seconds for a series sampled every `dt`.
fn timed(series: &[f64], dt: f64) -> Vec<(f64, f64)> {
    series.iter().enumerate().map(|(k, &v)| (k as f64 * dt, v)).collect()
}

pub fn summarize(cfg: &ExperimentConfig, reports: &[EvalReport], histories: &[(u64, LossBreakdown)], failed_seeds: Vec<u64>) -> CliResult<RunSummary> {
    let aggregate = aggregate_seeds(reports)?;
    let per_seed = reports
        .iter()
        .map(|r| {
            Ok(SeedRow {
                seed: r.meta.seed,
                final_loss: histories.iter().find(|(s, _)| *s == r.meta.seed).map(|(_, l)| *l),
                stats: r.stats()?,
            })
        })
        .collect::<tcblran::Result<Vec<_>>>()?;
    let series: Vec<Vec<f64>> = reports.iter().map(EvalReport::mean_series).collect();
    Ok(RunSummary {
        label: cfg.label(),
        system: aggregate.system.clone(),
        model: aggregate.model.clone(),
        snr_db: aggregate.snr_db,
        n_train: aggregate.n_train,
        dt: cfg.data.dt,
        failed_seeds,
        per_seed,
        aggregate,
        mean_series: mean_of_series(&series),
    })
}

/// Error-versus-time chart: one line per seed plus their mean.
pub fn run_error_plot(summary: &RunSummary, reports: &[EvalReport], config: &str) -> String {
    let mut series: Vec<Series> = reports
        .iter()
        .map(|r| Series {
            label: format!("seed {}", r.meta.seed),
            points: timed(&r.mean_series(), summary.dt),
        })
        .collect();
    if reports.len() > 1 {
        series.push(Series {
            label: "mean".into(),
            points: timed(&summary.mean_series, summary.dt),
        });
    }
    line_chart(
        &format!("Relative prediction error with time, {}", summary.label),
        "time (s)",
        "relative error (mean over ICs)",
        &series,
        config,
    )
}

fn write_manifest(layout: &RunLayout, config: &str, manifest: &Manifest) -> CliResult<()> {
    write_json(&layout.manifest(), KIND_MANIFEST, config, manifest)
}

/// Writes `ds` as a dataset artifact.
pub fn save_dataset(path: &Path, config: &str, ds: &Dataset) -> CliResult<()> {
    write_json(path, KIND_DATASET, config, &ds.to_file())
}

pub fn load_dataset(path: &Path) -> CliResult<Dataset> {
    let art = read_json::<DatasetFile>(path, KIND_DATASET)?;
    Ok(Dataset::from_file(art.data)?)
}

pub fn save_report(layout: &RunLayout, config: &str, report: &EvalReport) -> CliResult<()> {
    let seed = report.meta.seed;
    write_csv(&layout.errors(seed), KIND_ERRORS, config, &report.to_csv())?;
    write_json(&layout.report(seed), KIND_REPORT, config, report)
}

/// Full pipeline for one configuration (`evaluate = false` stops after
/// training). Artifacts land in `layout`; per-stage failures are recorded
/// in the manifest and returned in the outcome rather than aborting.
pub fn run_experiment(cfg: &ExperimentConfig, layout: &RunLayout, jobs: usize, evaluate: bool) -> CliResult<RunOutcome> {
    let config = cfg.to_toml()?;
    write_text(&layout.config(), &config)?;
    let mut manifest = Manifest {
        label: cfg.label(),
        status: "running".into(),
        stages: Vec::new(),
    };
    write_manifest(layout, &config, &manifest)?;

    let start = Instant::now();
    let dataset = match build_dataset(&cfg.system, &cfg.dataset_config()) {
        Ok(ds) => ds,
        Err(e) => {
            manifest.stages.push(failed_stage(None, "dataset", &e, start.elapsed().as_secs_f64()));
            manifest.status = "failed".into();
            write_manifest(layout, &config, &manifest)?;
            return Ok(RunOutcome {
                layout: layout.clone(),
                reports: Vec::new(),
                summary: None,
                manifest,
            });
        }
    };
    save_dataset(&layout.dataset(), &config, &dataset)?;
    manifest.stages.push(ok_stage(None, "dataset", start.elapsed().as_secs_f64()));
    write_manifest(layout, &config, &manifest)?;
    info!("{}: dataset of {} samples, {} seed(s)", cfg.label(), dataset.len(), cfg.seeds.len());

    let data = TrainingData::from_dataset(&dataset);
    let next = AtomicUsize::new(0);
    let workers = jobs.clamp(1, cfg.seeds.len().max(1));
    let mut reports = Vec::new();
    let mut final_losses = Vec::new();
    let mut failed_seeds = Vec::new();
    let (tx, rx) = mpsc::channel();

    std::thread::scope(|scope| -> CliResult<()> {
        for _ in 0..workers {
            let tx = tx.clone();
            let (next, dataset, data) = (&next, &dataset, &data);
            scope.spawn(move || loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(&seed) = cfg.seeds.get(i) else { break };
                seed_worker(cfg, dataset, data, seed, evaluate, &tx);
            });
        }
        drop(tx);
        for event in rx {
            match event {
                Event::Trained {
                    seed,
                    history,
                    checkpoint,
                    seconds,
                } => {
                    write_csv(&layout.history(seed), KIND_HISTORY, &config, &history.to_csv())?;
                    write_json(&layout.checkpoint(seed), KIND_CHECKPOINT, &config, &checkpoint)?;
                    if let Some(last) = history.last() {
                        final_losses.push((seed, last.loss));
                    }
                    info!("{}: seed {seed} trained in {seconds:.1} s", cfg.label());
                    manifest.stages.push(ok_stage(Some(seed), "train", seconds));
                }
                Event::Evaluated { seed, report, seconds } => {
                    save_report(layout, &config, &report)?;
                    manifest.stages.push(ok_stage(Some(seed), "evaluate", seconds));
                    reports.push(report);
                }
                Event::Failed {
                    seed,
                    stage,
                    error,
                    seconds,
                } => {
                    warn!("{}: seed {seed} failed during {stage}: {error}", cfg.label());
                    manifest.stages.push(failed_stage(Some(seed), stage, &error, seconds));
                    failed_seeds.push(seed);
                }
            }
            write_manifest(layout, &config, &manifest)?;
        }
        Ok(())
    })?;

    // Completion order depends on thread timing; outputs must not.
    let order = |seed: u64| cfg.seeds.iter().position(|&s| s == seed);
    reports.sort_by_key(|r| order(r.meta.seed));
    manifest.stages.sort_by_key(|s| (s.seed.and_then(order), s.stage != "train"));
    failed_seeds.sort_by_key(|&s| order(s));

    let mut summary = None;
    if !reports.is_empty() {
        let s = summarize(cfg, &reports, &final_losses, failed_seeds.clone())?;
        write_json(&layout.summary(), KIND_SUMMARY, &config, &s)?;
        write_text(&layout.error_plot(), &run_error_plot(&s, &reports, &config))?;
        info!(
            "{}: median {:.4}, mean {:.4} over {} seed(s)",
            s.label,
            s.aggregate.stats.median,
            s.aggregate.stats.mean,
            reports.len()
        );
        summary = Some(s);
    }
    let any_seed_done = if evaluate {
        !reports.is_empty()
    } else {
        !final_losses.is_empty()
    };
    manifest.status = if manifest.stages.iter().all(|s| s.ok) {
        "complete"
    } else if any_seed_done {
        "partial"
    } else {
        "failed"
    }
    .into();
    write_manifest(layout, &config, &manifest)?;
    Ok(RunOutcome {
        layout: layout.clone(),
        reports,
        summary,
        manifest,
    })
}

/// Evaluates a saved checkpoint. The configuration comes from the
/// checkpoint's echo with `overrides` applied; the dataset is loaded from
/// `dataset` or rebuilt from that configuration.
pub fn evaluate_checkpoint(
    checkpoint: &Path,
    dataset: Option<&Path>,
    overrides: &[String],
    out: &RunLayout,
) -> CliResult<EvalReport> {
    let art = read_json::<Checkpoint>(checkpoint, KIND_CHECKPOINT)?;
    let source = ConfigSource {
        text: art.config.clone(),
        overrides: overrides.to_vec(),
    };
    let cfg = source.resolve(&[])?;
    let config = cfg.to_toml()?;
    let ds = match dataset {
        Some(p) => load_dataset(p)?,
        None => build_dataset(&cfg.system, &cfg.dataset_config())?,
    };
    let params = art.data.params()?;
    let label = ModelLabel {
        model: cfg.model.label().into(),
        seed: art.data.seed,
    };
    let report = evaluate_model(&params, &cfg.system, &ds, &cfg.eval_config()?, &label)?;
    save_report(out, &config, &report)?;
    Ok(report)
}

/// Reports from `report.json` files or from run directories (every
/// `seed_*/report.json` inside, in seed order).
pub fn collect_reports(paths: &[PathBuf]) -> CliResult<Vec<(EvalReport, String)>> {
    let mut out = Vec::new();
    for p in paths {
        if p.is_dir() {
            let mut found: Vec<(u64, PathBuf)> = std::fs::read_dir(p)
                .map_err(|e| CliError::io(p, e))?
                .filter_map(|e| e.ok())
                .filter_map(|e| {
                    let name = e.file_name().to_string_lossy().to_string();
                    let seed = name.strip_prefix("seed_")?.parse().ok()?;
                    let report = e.path().join("report.json");
                    report.is_file().then_some((seed, report))
                })
                .collect();
            found.sort();
            if found.is_empty() {
                return Err(CliError::Usage(format!("{}: no seed_*/report.json found", p.display())));
            }
            for (_, r) in found {
                let art = read_json::<EvalReport>(&r, KIND_REPORT)?;
                out.push((art.data, art.config));
            }
        } else {
            let art = read_json::<EvalReport>(p, KIND_REPORT)?;
            out.push((art.data, art.config));
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub n_train: usize,
    pub model: String,
    pub status: String,
    pub seeds: usize,
    pub median: f64,
    pub mean: f64,
    pub std: f64,
}

/// Runs the pipeline once per `(model, n_train)` pair under `root` and
/// writes `sweep.csv` and `sweep.svg` there. A value that fails leaves a
/// row with status `failed` and the sweep continues.
pub fn run_sweep(
    source: &ConfigSource,
    n_values: &[usize],
    models: &[ModelKind],
    root: Option<&Path>,
    jobs: usize,
) -> CliResult<(PathBuf, Vec<SweepRow>, Option<CliError>)> {
    let base = source.resolve(&[])?;
    let models: Vec<ModelKind> = if models.is_empty() { vec![base.model] } else { models.to_vec() };
    let noise = if base.data.noisy {
        format!("{}db", base.data.snr_db)
    } else {
        "clean".into()
    };
    let root = root
        .map(Path::to_path_buf)
        .unwrap_or_else(|| Path::new(&base.output_dir).join(format!("sweep-{}-{noise}", base.system.name())));

    let mut rows = Vec::new();
    let mut first_error = None;
    for &model in &models {
        for &n in n_values {
            let extra = [format!("model={}", model.label()), format!("data.n_train={n}")];
            let result = source.resolve(&extra).and_then(|cfg| {
                let layout = RunLayout::new(root.join(format!("{}-n{n}", cfg.label())));
                run_experiment(&cfg, &layout, jobs, true)?.into_result()
            });
            match result {
                Ok(outcome) => {
                    let s = outcome.summary.expect("complete run has a summary");
                    rows.push(SweepRow {
                        n_train: n,
                        model: model.label().into(),
                        status: "ok".into(),
                        seeds: s.aggregate.seeds.len(),
                        median: s.aggregate.stats.median,
                        mean: s.aggregate.stats.mean,
                        std: s.aggregate.stats.std,
                    });
                }
                Err(e) => {
                    warn!("sweep {} n_train={n}: {e}", model.label());
                    rows.push(SweepRow {
                        n_train: n,
                        model: model.label().into(),
                        status: "failed".into(),
                        seeds: 0,
                        median: f64::NAN,
                        mean: f64::NAN,
                        std: f64::NAN,
                    });
                    first_error.get_or_insert(e);
                }
            }
        }
    }

    let labels: Vec<String> = models.iter().map(|m| format!("\"{}\"", m.label())).collect();
    let ns: Vec<String> = n_values.iter().map(ToString::to_string).collect();
    let config = format!(
        "{}\n[sweep]\nn_train = [{}]\nmodels = [{}]\n",
        base.to_toml()?,
        ns.join(", "),
        labels.join(", ")
    );
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in &rows {
        w.serialize(r)?;
    }
    let body = String::from_utf8(w.into_inner().map_err(|e| CliError::Usage(e.to_string()))?)
        .expect("csv output is UTF-8");
    write_csv(&root.join("sweep.csv"), KIND_SWEEP, &config, &body)?;
    write_text(&root.join("sweep.svg"), &sweep_plot(&rows, &config))?;
    Ok((root, rows, first_error))
}

/// Median error per `N_train`, one bar per model.
pub fn sweep_plot(rows: &[SweepRow], config: &str) -> String {
    let mut ns: Vec<usize> = rows.iter().map(|r| r.n_train).collect();
    ns.sort_unstable();
    ns.dedup();
    let mut models: Vec<&str> = Vec::new();
    for r in rows {
        if !models.contains(&r.model.as_str()) {
            models.push(&r.model);
        }
    }
    let series: Vec<(String, Vec<f64>)> = models
        .iter()
        .map(|m| {
            let values = ns
                .iter()
                .map(|n| {
                    rows.iter()
                        .find(|r| r.model == *m && r.n_train == *n)
                        .map_or(f64::NAN, |r| r.median)
                })
                .collect();
            (m.to_string(), values)
        })
        .collect();
    let groups: Vec<String> = ns.iter().map(ToString::to_string).collect();
    bar_chart(
        "Time-average relative prediction error",
        "N_train",
        "median time-averaged relative error",
        &groups,
        &series,
        config,
    )
}

/// Reads the rows of a `sweep.csv`.
pub fn read_sweep(path: &Path) -> CliResult<(Vec<SweepRow>, String)> {
    let text = read_text(path)?;
    let rows = csv_reader(&text).deserialize().collect::<Result<Vec<SweepRow>, _>>()?;
    Ok((rows, crate::artifacts::csv_config(&text)))
}
