//! Experiment configuration: hyperparameter presets, TOML files and dot-path
//! overrides.
//!
//! A configuration is resolved in three steps. The system, the model kind
//! and the noise flag select a hyperparameter column; that column is
//! rendered as a TOML table; every user key is then laid over it. Keys
//! that do not exist in the column are rejected, as are values whose type
//! differs from the default's.
//!
//! ```
//! use tcblran::config::{parse_config, ModelKind};
//!
//! let cfg = parse_config("preset = \"pendulum-clean-tcblran\"", &["train.epochs=5"]).unwrap();
//! assert_eq!(cfg.model, ModelKind::Tcblran);
//! assert_eq!(cfg.loss.k_m, 12);
//! assert_eq!(cfg.train.epochs, 5);
//! ```

use std::fmt;

use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use crate::datagen::{DatasetConfig, NoiseSpec};
use crate::dynamics::{sample_count, Benchmark};
use crate::error::{Error, Result};
use crate::evaluation::EvalConfig;
use crate::losses::LossWeights;
use crate::model::{Activation, Architecture};
use crate::training::{TrainSetup, TrainerConfig};

/// Environment variable naming the default output root.
pub const OUTPUT_ENV: &str = "TCBLRAN_OUT";

pub const CONFIG_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    /// Trained with the temporal-consistency term.
    Tcblran,
    /// Identity and forward losses only.
    Blran,
}

impl ModelKind {
    pub fn label(self) -> &'static str {
        match self {
            ModelKind::Tcblran => "tcblran",
            ModelKind::Blran => "blran",
        }
    }

    pub fn from_label(s: &str) -> Result<Self> {
        match s {
            "tcblran" => Ok(ModelKind::Tcblran),
            "blran" => Ok(ModelKind::Blran),
            other => Err(Error::Config(format!("unknown model kind {other:?} (expected tcblran or blran)"))),
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    pub dt: f64,
    pub t_span: f64,
    pub x0: Vec<f64>,
    pub lifted_dim: usize,
    pub lift_seed: u64,
    pub control_seed: u64,
    pub control_lo: f64,
    pub control_hi: f64,
    pub noisy: bool,
    pub snr_db: f64,
    pub noise_seed: u64,
    pub n_train: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchSection {
    pub latent_dim: usize,
    pub encoder_hidden: usize,
    pub decoder_hidden: usize,
    pub activation: Activation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub lr0: f64,
    pub lr_decay: f64,
    pub milestones: Vec<usize>,
    pub weight_decay: f64,
    pub grad_clip: f64,
    pub epochs: usize,
    pub window_stride: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSection {
    /// Horizon in seconds.
    pub horizon: f64,
    pub n_ics: usize,
    pub control_seed: u64,
    pub control_lo: f64,
    pub control_hi: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub system: Benchmark,
    pub model: ModelKind,
    /// Training seeds; each gives one model.
    pub seeds: Vec<u64>,
    pub output_dir: String,
    pub data: DataSection,
    pub arch: ArchSection,
    pub loss: LossWeights,
    pub train: TrainSection,
    pub eval: EvalSection,
}

/// Column of the hyperparameter table for one system, noise level and model.
pub fn defaults_for(system: Benchmark, noisy: bool, model: ModelKind) -> ExperimentConfig {
    let tc = model == ModelKind::Tcblran;
    let pick = |tc_value: f64, bl_value: f64| if tc { tc_value } else { bl_value };
    // (weight decay, k_m, M, γ_fwd, γ_tc, hidden nodes, N_train)
    let (wd, k_m, m, g_fwd, g_tc, hidden, n_train) = match (system, noisy) {
        (Benchmark::Pendulum { .. }, false) => (pick(0.1, 0.01), 12, 32, pick(1.0, 2.0), 2.0, 128, 32),
        (Benchmark::Pendulum { .. }, true) => (1.0, 12, 32, 0.5, 0.5, 128, 32),
        (Benchmark::Vanderpol { .. }, false) => (1.0, 32, 64, 1.0, 0.01, 192, 256),
        (Benchmark::Vanderpol { .. }, true) => (1.0, 32, 64, pick(2.0, 1.0), 2.0, 192, 256),
        (Benchmark::Duffing { .. }, false) => (pick(0.01, 0.1), 12, 32, 2.0, 0.5, 128, 32),
        (Benchmark::Duffing { .. }, true) => (1.0, 12, 32, 2.0, 0.5, 128, 32),
    };
    ExperimentConfig {
        system,
        model,
        seeds: (0..10).collect(),
        output_dir: "runs".into(),
        data: DataSection {
            dt: 0.1,
            t_span: 220.0,
            x0: vec![0.8, 0.0],
            lifted_dim: 64,
            lift_seed: 0,
            control_seed: 1,
            control_lo: -0.15,
            control_hi: 0.15,
            noisy,
            snr_db: 20.0,
            noise_seed: 2,
            n_train,
        },
        arch: ArchSection {
            latent_dim: 12,
            encoder_hidden: hidden,
            decoder_hidden: hidden,
            activation: Activation::Tanh,
        },
        loss: LossWeights {
            gamma_id: 1.0,
            gamma_fwd: g_fwd,
            gamma_tc: if tc { g_tc } else { 0.0 },
            k_m,
            k_tm: 2,
            batch_size: m,
        },
        train: TrainSection {
            lr0: 0.01,
            lr_decay: 0.5,
            milestones: vec![30, 100, 200, 400],
            weight_decay: wd,
            grad_clip: 0.05,
            epochs: 600,
            window_stride: 1,
        },
        eval: EvalSection {
            horizon: 25.0,
            n_ics: 30,
            control_seed: 3,
            control_lo: -0.15,
            control_hi: 0.15,
        },
    }
}

/// Splits `<system>-<clean|20db>-<tcblran|blran>`.
pub fn parse_preset(name: &str) -> Result<(Benchmark, bool, ModelKind)> {
    let parts: Vec<&str> = name.split('-').collect();
    let bad = || {
        Error::Config(format!(
            "unknown preset {name:?}; expected <pendulum|vdp|duffing>-<clean|20db>-<tcblran|blran>"
        ))
    };
    if parts.len() != 3 {
        return Err(bad());
    }
    let system = Benchmark::from_name(parts[0]).map_err(|_| bad())?;
    let noisy = match parts[1] {
        "clean" => false,
        "20db" => true,
        _ => return Err(bad()),
    };
    let model = ModelKind::from_label(parts[2]).map_err(|_| bad())?;
    Ok((system, noisy, model))
}

/// The configuration named by a preset.
pub fn preset(name: &str) -> Result<ExperimentConfig> {
    let (system, noisy, model) = parse_preset(name)?;
    Ok(defaults_for(system, noisy, model))
}

/// All preset names.
pub fn preset_names() -> Vec<String> {
    let mut out = Vec::new();
    for s in ["pendulum", "vdp", "duffing"] {
        for n in ["clean", "20db"] {
            for m in ["tcblran", "blran"] {
                out.push(format!("{s}-{n}-{m}"));
            }
        }
    }
    out
}

fn type_name(v: &Value) -> &'static str {
    match v {
        Value::String(_) => "string",
        Value::Integer(_) => "integer",
        Value::Float(_) => "float",
        Value::Boolean(_) => "boolean",
        Value::Datetime(_) => "datetime",
        Value::Array(_) => "array",
        Value::Table(_) => "table",
    }
}

/// Checks `new` against the default's type; integers are accepted where a
/// float is expected.
fn coerce(path: &str, default: &Value, new: Value) -> Result<Value> {
    match (default, new) {
        (Value::Float(_), Value::Integer(i)) => Ok(Value::Float(i as f64)),
        (Value::Table(d), Value::Table(n)) => {
            let mut merged = d.clone();
            for (k, v) in n {
                let sub = if path.is_empty() { k.clone() } else { format!("{path}.{k}") };
                let dv = d.get(&k).ok_or_else(|| Error::Config(format!("unknown key {sub:?}")))?;
                merged.insert(k, coerce(&sub, dv, v)?);
            }
            Ok(Value::Table(merged))
        }
        (Value::Array(d), Value::Array(n)) => {
            if let Some(proto) = d.first() {
                let items = n
                    .into_iter()
                    .enumerate()
                    .map(|(i, v)| coerce(&format!("{path}[{i}]"), proto, v))
                    .collect::<Result<_>>()?;
                Ok(Value::Array(items))
            } else {
                Ok(Value::Array(n))
            }
        }
        (d, n) if std::mem::discriminant(d) == std::mem::discriminant(&n) => Ok(n),
        (d, n) => Err(Error::Config(format!(
            "type mismatch for {path:?}: expected {}, got {}",
            type_name(d),
            type_name(&n)
        ))),
    }
}

/// Parses the value part of a `key=value` override. Bare words that are not
/// valid TOML are taken as strings.
fn parse_override_value(raw: &str) -> Value {
    match toml::from_str::<Table>(&format!("v = {raw}")) {
        Ok(mut t) => t.remove("v").expect("key present"),
        Err(_) => Value::String(raw.to_string()),
    }
}

fn insert_path(table: &mut Table, path: &str, value: Value) -> Result<()> {
    let mut parts: Vec<&str> = path.split('.').collect();
    if parts.iter().any(|p| p.trim().is_empty()) {
        return Err(Error::Config(format!("malformed key {path:?}")));
    }
    let last = parts.pop().expect("split yields at least one part");
    let mut cur = table;
    for p in parts {
        let entry = cur.entry(p.to_string()).or_insert_with(|| Value::Table(Table::new()));
        cur = match entry {
            Value::Table(t) => t,
            _ => return Err(Error::Config(format!("{p:?} in {path:?} is not a section"))),
        };
    }
    cur.insert(last.to_string(), value);
    Ok(())
}

/// Applies `key=value` overrides on top of a parsed file.
pub fn apply_overrides(table: &mut Table, overrides: &[&str]) -> Result<()> {
    for o in overrides {
        let (k, v) = o
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override {o:?} is not of the form key=value")))?;
        insert_path(table, k.trim(), parse_override_value(v.trim()))?;
    }
    Ok(())
}

fn string_key(table: &Table, key: &str) -> Result<Option<String>> {
    match table.get(key) {
        None => Ok(None),
        Some(Value::String(s)) => Ok(Some(s.clone())),
        Some(v) => Err(Error::Config(format!(
            "type mismatch for {key:?}: expected string, got {}",
            type_name(v)
        ))),
    }
}

/// Resolves a configuration from TOML text plus `key=value` overrides.
pub fn parse_config(text: &str, overrides: &[&str]) -> Result<ExperimentConfig> {
    let mut table: Table = toml::from_str(text).map_err(|e| Error::Config(format!("malformed config: {e}")))?;
    apply_overrides(&mut table, overrides)?;
    resolve(table)
}

/// Resolves a configuration from an already parsed table.
pub fn resolve(mut table: Table) -> Result<ExperimentConfig> {
    let preset_name = string_key(&table, "preset")?;
    table.remove("preset");
    let from_preset = preset_name.as_deref().map(parse_preset).transpose()?;

    // `system` may be a bare name or a full table with parameters.
    let system_name = match table.get("system") {
        None => None,
        Some(Value::String(s)) => {
            let s = s.clone();
            table.remove("system");
            Some(s)
        }
        Some(Value::Table(t)) => match t.get("name") {
            Some(Value::String(s)) => Some(s.clone()),
            None => None,
            Some(v) => {
                return Err(Error::Config(format!(
                    "type mismatch for \"system.name\": expected string, got {}",
                    type_name(v)
                )))
            }
        },
        Some(v) => {
            return Err(Error::Config(format!(
                "type mismatch for \"system\": expected string or table, got {}",
                type_name(v)
            )))
        }
    };
    let model_name = string_key(&table, "model")?;

    let system = match (&system_name, &from_preset) {
        (Some(n), _) => Some(Benchmark::from_name(n).map_err(|e| Error::Config(e.to_string()))?),
        (None, Some((s, _, _))) => Some(*s),
        _ => None,
    };
    let model = match (&model_name, &from_preset) {
        (Some(m), _) => Some(ModelKind::from_label(m)?),
        (None, Some((_, _, m))) => Some(*m),
        _ => None,
    };
    let (system, model) = match (system, model) {
        (Some(s), Some(m)) => (s, m),
        (s, m) => {
            let mut missing = Vec::new();
            if s.is_none() {
                missing.push("system");
            }
            if m.is_none() {
                missing.push("model");
            }
            return Err(Error::Config(format!(
                "missing required field(s): {} (or give preset = \"<system>-<clean|20db>-<tcblran|blran>\")",
                missing.join(", ")
            )));
        }
    };
    let noisy = match table.get("data").and_then(|d| d.get("noisy")) {
        Some(Value::Boolean(b)) => *b,
        Some(v) => {
            return Err(Error::Config(format!(
                "type mismatch for \"data.noisy\": expected boolean, got {}",
                type_name(v)
            )))
        }
        None => from_preset.is_some_and(|(_, n, _)| n),
    };

    let mut base = defaults_for(system, noisy, model);
    if let Ok(dir) = std::env::var(OUTPUT_ENV) {
        if !dir.is_empty() {
            base.output_dir = dir;
        }
    }
    let default = Value::try_from(&base).map_err(|e| Error::Config(e.to_string()))?;
    let merged = coerce("", &default, Value::Table(table))?;
    let cfg: ExperimentConfig = merged
        .try_into()
        .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

impl ExperimentConfig {
    /// Checks every cross-field constraint, naming the offending key.
    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, why: String| Err(Error::Config(format!("{key}: {why}")));
        if self.seeds.is_empty() {
            return bad("seeds", "at least one seed is required".into());
        }
        let d = &self.data;
        if !(d.dt > 0.0) || !d.dt.is_finite() {
            return bad("data.dt", format!("must be positive, got {}", d.dt));
        }
        let n = sample_count(d.t_span, d.dt).map_err(|e| Error::Config(format!("data.t_span: {e}")))?;
        if d.x0.len() != 2 {
            return bad("data.x0", format!("must have 2 entries, got {}", d.x0.len()));
        }
        if d.lifted_dim < 2 {
            return bad("data.lifted_dim", format!("must be at least the state dimension 2, got {}", d.lifted_dim));
        }
        if !(d.control_lo <= d.control_hi) {
            return bad("data.control_lo", "must not exceed data.control_hi".into());
        }
        if d.n_train == 0 || d.n_train > n {
            return bad("data.n_train", format!("must be in 1..={n}, got {}", d.n_train));
        }
        if d.noisy && !d.snr_db.is_finite() {
            return bad("data.snr_db", "must be finite".into());
        }
        if self.eval.n_ics > d.n_train {
            return bad(
                "eval.n_ics",
                format!("{} initial conditions exceed data.n_train={}", self.eval.n_ics, d.n_train),
            );
        }
        if !(self.eval.control_lo <= self.eval.control_hi) {
            return bad("eval.control_lo", "must not exceed eval.control_hi".into());
        }
        sample_count(self.eval.horizon, d.dt).map_err(|e| Error::Config(format!("eval.horizon: {e}")))?;
        self.architecture().validate()?;
        self.loss.validate().map_err(|e| Error::Config(format!("loss: {e}")))?;
        if self.model == ModelKind::Blran && self.loss.gamma_tc != 0.0 {
            return bad("loss.gamma_tc", "must be 0 for a blran model".into());
        }
        if self.model == ModelKind::Tcblran && self.loss.gamma_tc <= 0.0 {
            return bad("loss.gamma_tc", "must be positive for a tcblran model".into());
        }
        self.trainer_config(0).validate()?;
        let need = self.loss.k_m + 2 * self.loss.k_tm + 1;
        if d.n_train < need {
            return bad(
                "data.n_train",
                format!("must be at least k_m + 2·k_tm + 1 = {need} to form one training window"),
            );
        }
        Ok(())
    }

    pub fn architecture(&self) -> Architecture {
        Architecture {
            activation: self.arch.activation,
            ..Architecture::new(
                self.data.lifted_dim,
                self.arch.latent_dim,
                self.arch.encoder_hidden,
                self.arch.decoder_hidden,
                1,
            )
        }
    }

    pub fn trainer_config(&self, seed: u64) -> TrainerConfig {
        let t = &self.train;
        TrainerConfig {
            lr0: t.lr0,
            lr_decay: t.lr_decay,
            milestones: t.milestones.clone(),
            weight_decay: t.weight_decay,
            grad_clip: t.grad_clip,
            epochs: t.epochs,
            seed,
            window_stride: t.window_stride,
        }
    }

    pub fn train_setup(&self, seed: u64) -> TrainSetup {
        TrainSetup {
            arch: self.architecture(),
            weights: self.loss,
            trainer: self.trainer_config(seed),
        }
    }

    pub fn dataset_config(&self) -> DatasetConfig {
        let d = &self.data;
        DatasetConfig {
            x0: d.x0.clone(),
            dt: d.dt,
            t_span: d.t_span,
            lifted_dim: d.lifted_dim,
            lift_seed: d.lift_seed,
            control_seed: d.control_seed,
            control_lo: d.control_lo,
            control_hi: d.control_hi,
            noise: d.noisy.then_some(NoiseSpec {
                snr_db: d.snr_db,
                seed: d.noise_seed,
            }),
            n_train: d.n_train,
        }
    }

    pub fn eval_config(&self) -> Result<EvalConfig> {
        Ok(EvalConfig {
            horizon_steps: sample_count(self.eval.horizon, self.data.dt)?,
            n_ics: self.eval.n_ics,
            control_seed: self.eval.control_seed,
            control_lo: self.eval.control_lo,
            control_hi: self.eval.control_hi,
        })
    }

    /// Short label such as `pendulum-clean-tcblran`.
    pub fn label(&self) -> String {
        let noise = if self.data.noisy {
            format!("{}db", self.data.snr_db)
        } else {
            "clean".into()
        };
        format!("{}-{}-{}", self.system.name(), noise, self.model)
    }

    /// TOML rendering; parsing it back yields the same configuration.
    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pendulum_clean_preset_matches_table() {
        let c = preset("pendulum-clean-tcblran").unwrap();
        assert_eq!((c.loss.k_m, c.loss.k_tm, c.loss.batch_size), (12, 2, 32));
        assert_eq!(c.arch.latent_dim, 12);
        assert_eq!((c.arch.encoder_hidden, c.arch.decoder_hidden), (128, 128));
        assert_eq!((c.loss.gamma_id, c.loss.gamma_fwd, c.loss.gamma_tc), (1.0, 1.0, 2.0));
        assert_eq!(c.train.weight_decay, 0.1);
        assert_eq!(c.train.lr0, 0.01);
        assert_eq!(c.train.lr_decay, 0.5);
        assert_eq!(c.train.grad_clip, 0.05);
        assert_eq!(c.train.epochs, 600);
        assert_eq!(c.train.milestones, vec![30, 100, 200, 400]);
        assert_eq!(c.data.lifted_dim, 64);
        assert!(!c.data.noisy);
    }

    #[test]
    fn vdp_noisy_blran_preset_matches_table() {
        let c = preset("vdp-20db-blran").unwrap();
        assert_eq!(c.loss.k_m, 32);
        assert_eq!(c.loss.batch_size, 64);
        assert_eq!(c.arch.encoder_hidden, 192);
        assert_eq!(c.loss.gamma_fwd, 1.0);
        assert_eq!(c.loss.gamma_tc, 0.0);
        assert!(c.data.noisy);
        assert_eq!(c.data.snr_db, 20.0);
    }

    #[test]
    fn every_column_of_the_table() {
        // (preset, wd, k_m, M, γ_fwd, γ_tc, hidden)
        let rows = [
            ("pendulum-clean-tcblran", 0.1, 12, 32, 1.0, 2.0, 128),
            ("pendulum-clean-blran", 0.01, 12, 32, 2.0, 0.0, 128),
            ("pendulum-20db-tcblran", 1.0, 12, 32, 0.5, 0.5, 128),
            ("pendulum-20db-blran", 1.0, 12, 32, 0.5, 0.0, 128),
            ("vdp-clean-tcblran", 1.0, 32, 64, 1.0, 0.01, 192),
            ("vdp-clean-blran", 1.0, 32, 64, 1.0, 0.0, 192),
            ("vdp-20db-tcblran", 1.0, 32, 64, 2.0, 2.0, 192),
            ("vdp-20db-blran", 1.0, 32, 64, 1.0, 0.0, 192),
            ("duffing-clean-tcblran", 0.01, 12, 32, 2.0, 0.5, 128),
            ("duffing-clean-blran", 0.1, 12, 32, 2.0, 0.0, 128),
            ("duffing-20db-tcblran", 1.0, 12, 32, 2.0, 0.5, 128),
            ("duffing-20db-blran", 1.0, 12, 32, 2.0, 0.0, 128),
        ];
        for (name, wd, k_m, m, gf, gt, h) in rows {
            let c = preset(name).unwrap();
            assert_eq!(c.train.weight_decay, wd, "{name}");
            assert_eq!(c.loss.k_m, k_m, "{name}");
            assert_eq!(c.loss.batch_size, m, "{name}");
            assert_eq!(c.loss.gamma_fwd, gf, "{name}");
            assert_eq!(c.loss.gamma_tc, gt, "{name}");
            assert_eq!(c.arch.encoder_hidden, h, "{name}");
            c.validate().unwrap();
        }
        assert_eq!(preset_names().len(), 12);
    }

    #[test]
    fn empty_config_lists_required_fields() {
        let err = parse_config("", &[]).unwrap_err().to_string();
        assert!(err.contains("system") && err.contains("model"), "{err}");
    }

    #[test]
    fn file_and_overrides_merge() {
        let text = "system = \"duffing\"\nmodel = \"blran\"\n[train]\nepochs = 7\n";
        let c = parse_config(text, &["loss.gamma_fwd=3", "seeds=[4, 5]", "data.noisy=true"]).unwrap();
        assert_eq!(c.system, Benchmark::duffing());
        assert_eq!(c.model, ModelKind::Blran);
        assert_eq!(c.train.epochs, 7);
        assert_eq!(c.loss.gamma_fwd, 3.0);
        assert_eq!(c.seeds, vec![4, 5]);
        assert!(c.data.noisy);
        assert_eq!(c.train.weight_decay, 1.0);
    }

    #[test]
    fn unknown_keys_are_named() {
        let err = parse_config("preset = \"pendulum-clean-tcblran\"\n[train]\nepoch = 3\n", &[])
            .unwrap_err()
            .to_string();
        assert!(err.contains("train.epoch"), "{err}");
        let err = parse_config("preset = \"pendulum-clean-tcblran\"", &["bogus=1"])
            .unwrap_err()
            .to_string();
        assert!(err.contains("bogus"), "{err}");
    }

    #[test]
    fn type_mismatches_are_named() {
        let err = parse_config("preset = \"pendulum-clean-tcblran\"", &["train.epochs=\"many\""])
            .unwrap_err()
            .to_string();
        assert!(err.contains("train.epochs") && err.contains("integer"), "{err}");
    }

    #[test]
    fn constraint_violations_are_named() {
        let err = parse_config("preset = \"pendulum-clean-tcblran\"", &["loss.k_tm=1"])
            .unwrap_err()
            .to_string();
        assert!(err.contains("k_tm"), "{err}");
        let err = parse_config("preset = \"pendulum-clean-blran\"", &["loss.gamma_tc=1"])
            .unwrap_err()
            .to_string();
        assert!(err.contains("gamma_tc"), "{err}");
        let err = parse_config("preset = \"pendulum-clean-tcblran\"", &["data.n_train=10"])
            .unwrap_err()
            .to_string();
        assert!(err.contains("n_train"), "{err}");
    }

    #[test]
    fn unknown_preset_is_rejected() {
        assert!(parse_config("preset = \"lorenz-clean-tcblran\"", &[]).is_err());
        assert!(parse_preset("pendulum-10db-blran").is_err());
    }

    #[test]
    fn toml_round_trip() {
        let c = preset("duffing-20db-tcblran").unwrap();
        let back = parse_config(&c.to_toml().unwrap(), &[]).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn system_parameters_are_overridable() {
        let c = parse_config("preset = \"vdp-clean-tcblran\"", &["system.mu=2.5"]).unwrap();
        assert_eq!(c.system, Benchmark::Vanderpol { mu: 2.5 });
    }
}
