//! Open-loop rollout evaluation and the relative-error metric.
//!
//! For every evaluation initial condition a fresh piecewise-constant input
//! sequence is drawn, the true system is simulated from the original-space
//! state, and the model's decoded predictions are mapped back to the
//! original coordinates before the error
//! `‖x̂ₖ − xₖ‖ / ‖xₖ‖` is taken. Step `k = 0` is the reconstruction of the
//! initial condition itself.

use std::fmt::Write as _;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::datagen::{random_piecewise_control, Dataset};
use crate::dynamics::{simulate, Benchmark};
use crate::error::{Error, Result};
use crate::model::ModelParams;

/// Anything that can produce ground-truth trajectories in original
/// coordinates.
pub trait Plant {
    /// States at steps `0..=controls.len()`.
    fn simulate_states(
        &self,
        x0: &DVector<f64>,
        controls: &[DVector<f64>],
        dt: f64,
    ) -> Result<Vec<DVector<f64>>>;
}

impl Plant for Benchmark {
    fn simulate_states(
        &self,
        x0: &DVector<f64>,
        controls: &[DVector<f64>],
        dt: f64,
    ) -> Result<Vec<DVector<f64>>> {
        if controls.is_empty() {
            return Ok(vec![x0.clone()]);
        }
        Ok(simulate(self, x0, controls, dt)?.states)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    /// Points per error series (`T/dt`, including `k = 0`).
    pub horizon_steps: usize,
    pub n_ics: usize,
    pub control_seed: u64,
    pub control_lo: f64,
    pub control_hi: f64,
}

impl EvalConfig {
    /// 25 s horizon over 30 initial conditions with inputs in ±0.15.
    pub fn standard(dt: f64, control_seed: u64) -> Result<Self> {
        Ok(EvalConfig {
            horizon_steps: crate::dynamics::sample_count(25.0, dt)?,
            n_ics: 30,
            control_seed,
            control_lo: -0.15,
            control_hi: 0.15,
        })
    }

    /// Seed of the input sequence for the `ic`-th initial condition.
    pub fn ic_control_seed(&self, ic: usize) -> u64 {
        self.control_seed ^ (ic as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
    }
}

/// Identifies what was evaluated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportMeta {
    pub system: String,
    pub snr_db: Option<f64>,
    pub n_train: usize,
    pub model: String,
    pub seed: u64,
    pub dt: f64,
    pub eval: EvalConfig,
}

impl ReportMeta {
    /// True when two reports describe the same experiment cell, ignoring
    /// the model kind and training seed.
    pub fn same_setup(&self, other: &ReportMeta) -> bool {
        self.system == other.system
            && self.snr_db == other.snr_db
            && self.n_train == other.n_train
            && self.dt == other.dt
            && self.eval == other.eval
    }
}

/// Count, median, mean and sample standard deviation. Values are sorted
/// first, so the result does not depend on input order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stats {
    pub count: usize,
    pub median: f64,
    pub mean: f64,
    pub std: f64,
}

impl Stats {
    pub fn from_values(values: &[f64]) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidArgument("statistics of an empty set".into()));
        }
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        let n = v.len();
        let median = if n % 2 == 1 {
            v[n / 2]
        } else {
            0.5 * (v[n / 2 - 1] + v[n / 2])
        };
        let mean = v.iter().sum::<f64>() / n as f64;
        let std = if n > 1 {
            (v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        Ok(Stats {
            count: n,
            median,
            mean,
            std,
        })
    }
}

/// `‖predₖ − truthₖ‖ / ‖truthₖ‖` per step. Steps whose true state has zero
/// norm are excluded: they are reported as `NaN` and a warning is logged.
pub fn relative_error_series(pred: &[DVector<f64>], truth: &[DVector<f64>]) -> Result<Vec<f64>> {
    if pred.len() != truth.len() {
        return Err(Error::InvalidArgument(format!(
            "prediction has {} steps, truth has {}",
            pred.len(),
            truth.len()
        )));
    }
    pred.iter()
        .zip(truth)
        .enumerate()
        .map(|(k, (p, t))| {
            if p.len() != t.len() {
                return Err(Error::shape("relative_error_series", (p.len(), 1), (t.len(), 1)));
            }
            let denom = t.norm();
            if denom == 0.0 {
                log::warn!("true state at step {k} has zero norm; excluded from the error");
                Ok(f64::NAN)
            } else {
                Ok((p - t).norm() / denom)
            }
        })
        .collect()
}

/// Mean of the series over its non-excluded entries.
pub fn time_averaged_relative_error(series: &[f64]) -> Result<f64> {
    let kept: Vec<f64> = series.iter().copied().filter(|v| !v.is_nan()).collect();
    if kept.is_empty() {
        return Err(Error::InvalidArgument("error series is empty".into()));
    }
    Ok(kept.iter().sum::<f64>() / kept.len() as f64)
}

/// Error series for one initial condition and its time average.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IcResult {
    pub ic_index: usize,
    pub series: Vec<f64>,
    pub time_averaged: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub meta: ReportMeta,
    pub ics: Vec<IcResult>,
}

impl EvalReport {
    pub fn time_averaged(&self) -> Vec<f64> {
        self.ics.iter().map(|r| r.time_averaged).collect()
    }

    pub fn stats(&self) -> Result<Stats> {
        Stats::from_values(&self.time_averaged())
    }

    pub const CSV_HEADER: &'static str = "ic,t,rel_error";

    /// Long-format error table: one row per initial condition and time.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(Self::CSV_HEADER);
        out.push('\n');
        for ic in &self.ics {
            for (k, e) in ic.series.iter().enumerate() {
                let t = k as f64 * self.meta.dt;
                let _ = writeln!(out, "{},{},{}", ic.ic_index, t, e);
            }
        }
        out
    }

    /// Mean error at each time step across initial conditions.
    pub fn mean_series(&self) -> Vec<f64> {
        let len = self.ics.first().map_or(0, |r| r.series.len());
        (0..len)
            .map(|k| {
                let vals: Vec<f64> = self
                    .ics
                    .iter()
                    .map(|r| r.series[k])
                    .filter(|v| !v.is_nan())
                    .collect();
                vals.iter().sum::<f64>() / vals.len().max(1) as f64
            })
            .collect()
    }
}

/// Model description attached to a report.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelLabel {
    pub model: String,
    pub seed: u64,
}

/// Rolls the model out from the last `n_ics` training samples and scores it
/// against the true system.
pub fn evaluate_model(
    params: &ModelParams,
    plant: &dyn Plant,
    dataset: &Dataset,
    cfg: &EvalConfig,
    label: &ModelLabel,
) -> Result<EvalReport> {
    if cfg.horizon_steps == 0 {
        return Err(Error::Config("evaluation horizon must be at least one step".into()));
    }
    let indices = dataset.eval_ic_indices(cfg.n_ics)?;
    let mut ics = Vec::with_capacity(indices.len());
    for (i, &idx) in indices.iter().enumerate() {
        let wrap = |e: Error| match e {
            Error::NumericOverflow { step, what } => Error::NumericOverflow {
                step,
                what: format!("initial condition {i} (sample {idx}): {what}"),
            },
            other => other,
        };
        let x0 = &dataset.clean_states[idx];
        let controls = random_piecewise_control(
            cfg.ic_control_seed(i),
            cfg.horizon_steps - 1,
            cfg.control_lo,
            cfg.control_hi,
        )?;
        let truth = plant.simulate_states(x0, &controls, dataset.dt).map_err(wrap)?;
        let lifted = dataset.lift.lift(x0)?;
        let mut pred = Vec::with_capacity(cfg.horizon_steps);
        pred.push(dataset.lift.unlift(&params.reconstruct(&lifted)?)?);
        for p in params.predict(&lifted, &controls)? {
            pred.push(dataset.lift.unlift(&p)?);
        }
        if pred.iter().any(|p| p.iter().any(|v| !v.is_finite())) {
            return Err(Error::NumericOverflow {
                step: idx,
                what: format!("prediction from initial condition {i} is not finite"),
            });
        }
        let series = relative_error_series(&pred, &truth)?;
        let time_averaged = time_averaged_relative_error(&series)?;
        ics.push(IcResult {
            ic_index: idx,
            series,
            time_averaged,
        });
    }
    Ok(EvalReport {
        meta: ReportMeta {
            system: dataset.source.clone(),
            snr_db: dataset.noise.map(|n| n.snr_db),
            n_train: dataset.n_train,
            model: label.model.clone(),
            seed: label.seed,
            dt: dataset.dt,
            eval: cfg.clone(),
        },
        ics,
    })
}

/// Pooled statistics of one configuration over several seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedSummary {
    pub system: String,
    pub snr_db: Option<f64>,
    pub n_train: usize,
    pub model: String,
    pub seeds: Vec<u64>,
    pub stats: Stats,
}

/// Pools time-averaged errors over initial conditions and seeds.
pub fn aggregate_seeds(reports: &[EvalReport]) -> Result<SeedSummary> {
    let first = reports
        .first()
        .ok_or_else(|| Error::InvalidArgument("no reports to aggregate".into()))?;
    for r in reports {
        if !r.meta.same_setup(&first.meta) || r.meta.model != first.meta.model {
            return Err(Error::InvalidArgument(format!(
                "cannot pool {} / {} with {} / {}",
                r.meta.system, r.meta.model, first.meta.system, first.meta.model
            )));
        }
    }
    let values: Vec<f64> = reports.iter().flat_map(|r| r.time_averaged()).collect();
    let mut seeds: Vec<u64> = reports.iter().map(|r| r.meta.seed).collect();
    seeds.sort_unstable();
    Ok(SeedSummary {
        system: first.meta.system.clone(),
        snr_db: first.meta.snr_db,
        n_train: first.meta.n_train,
        model: first.meta.model.clone(),
        seeds,
        stats: Stats::from_values(&values)?,
    })
}

/// Paired comparison of two models over shared (seed, initial condition)
/// cells. Both sides see identical evaluation inputs by construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub a: SeedSummary,
    pub b: SeedSummary,
    pub pairs: usize,
    /// `median(a) − median(b)`
    pub median_diff: f64,
    /// `mean(a) − mean(b)`
    pub mean_diff: f64,
    /// Fraction of pairs where `a` has the lower error; ties count one half.
    pub win_rate_a: f64,
    pub meta_a: ReportMeta,
    pub meta_b: ReportMeta,
}

pub fn compare(a: &[EvalReport], b: &[EvalReport]) -> Result<Comparison> {
    let sa = aggregate_seeds(a)?;
    let sb = aggregate_seeds(b)?;
    if !a[0].meta.same_setup(&b[0].meta) {
        return Err(Error::InvalidArgument(format!(
            "reports do not share system/SNR/N_train/evaluation inputs: {} (snr {:?}, n_train {}) vs {} (snr {:?}, n_train {})",
            a[0].meta.system,
            a[0].meta.snr_db,
            a[0].meta.n_train,
            b[0].meta.system,
            b[0].meta.snr_db,
            b[0].meta.n_train
        )));
    }
    let mut pairs = 0usize;
    let mut wins = 0.0;
    for ra in a {
        let rb = b
            .iter()
            .find(|r| r.meta.seed == ra.meta.seed)
            .ok_or_else(|| Error::InvalidArgument(format!("seed {} missing from the second set", ra.meta.seed)))?;
        for ia in &ra.ics {
            let ib = rb
                .ics
                .iter()
                .find(|r| r.ic_index == ia.ic_index)
                .ok_or_else(|| {
                    Error::InvalidArgument(format!("initial condition {} missing for seed {}", ia.ic_index, ra.meta.seed))
                })?;
            pairs += 1;
            if ia.time_averaged < ib.time_averaged {
                wins += 1.0;
            } else if ia.time_averaged == ib.time_averaged {
                wins += 0.5;
            }
        }
    }
    Ok(Comparison {
        median_diff: sa.stats.median - sb.stats.median,
        mean_diff: sa.stats.mean - sb.stats.mean,
        win_rate_a: wins / pairs as f64,
        pairs,
        meta_a: a[0].meta.clone(),
        meta_b: b[0].meta.clone(),
        a: sa,
        b: sb,
    })
}
