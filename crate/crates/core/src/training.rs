//! Adam training loop with milestone learning-rate decay, decoupled weight
//! decay and global-norm gradient clipping.

use std::fmt::Write as _;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::datagen::Dataset;
use crate::error::{Error, Result};
use crate::losses::{loss_and_gradients, Batch, LossBreakdown, LossWeights};
use crate::model::{init_params, Architecture, ModelParams};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainerConfig {
    pub lr0: f64,
    pub lr_decay: f64,
    pub milestones: Vec<usize>,
    pub weight_decay: f64,
    pub grad_clip: f64,
    pub epochs: usize,
    pub seed: u64,
    /// Distance between consecutive window starts.
    pub window_stride: usize,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        TrainerConfig {
            lr0: 0.01,
            lr_decay: 0.5,
            milestones: vec![30, 100, 200, 400],
            weight_decay: 0.1,
            grad_clip: 0.05,
            epochs: 600,
            seed: 0,
            window_stride: 1,
        }
    }
}

impl TrainerConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("lr0", self.lr0),
            ("lr_decay", self.lr_decay),
            ("grad_clip", self.grad_clip),
        ];
        for (name, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::Config(format!("trainer.{name} must be positive, got {v}")));
            }
        }
        if !(self.weight_decay >= 0.0) || !self.weight_decay.is_finite() {
            return Err(Error::Config(format!(
                "trainer.weight_decay must be nonnegative, got {}",
                self.weight_decay
            )));
        }
        if self.milestones.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config(format!(
                "trainer.milestones must be strictly increasing, got {:?}",
                self.milestones
            )));
        }
        if self.window_stride == 0 {
            return Err(Error::Config("trainer.window_stride must be at least 1".into()));
        }
        Ok(())
    }
}

/// `lr0 · lr_decay^(number of milestones ≤ epoch)`.
pub fn lr_at_epoch(config: &TrainerConfig, epoch: usize) -> f64 {
    let passed = config.milestones.iter().filter(|&&m| m <= epoch).count();
    config.lr0 * config.lr_decay.powi(passed as i32)
}

/// Global L2 norm over all tensors.
pub fn global_norm(grads: &[DMatrix<f64>]) -> f64 {
    grads.iter().map(|g| g.norm_squared()).sum::<f64>().sqrt()
}

/// Rescales `grads` in place so their global norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_gradients(grads: &mut [DMatrix<f64>], max_norm: f64) -> Result<f64> {
    if !(max_norm > 0.0) {
        return Err(Error::InvalidArgument(format!("max_norm must be positive, got {max_norm}")));
    }
    let norm = global_norm(grads);
    if !norm.is_finite() {
        return Err(Error::NumericOverflow {
            step: 0,
            what: "gradient norm is not finite".into(),
        });
    }
    if norm > max_norm {
        let s = max_norm / norm;
        for g in grads.iter_mut() {
            *g *= s;
        }
    }
    Ok(norm)
}

/// First and second moment estimates for every tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<DMatrix<f64>>,
    pub v: Vec<DMatrix<f64>>,
    pub step: u64,
}

impl AdamState {
    pub fn new<'a>(params: impl IntoIterator<Item = &'a DMatrix<f64>>) -> Self {
        let m: Vec<_> = params
            .into_iter()
            .map(|p| DMatrix::zeros(p.nrows(), p.ncols()))
            .collect();
        AdamState {
            v: m.clone(),
            m,
            step: 0,
        }
    }

    /// One Adam update followed by decoupled weight decay:
    /// `p ← p − lr·m̂/(√v̂ + ε) − lr·wd·p`.
    pub fn step(
        &mut self,
        params: &mut [&mut DMatrix<f64>],
        grads: &[DMatrix<f64>],
        lr: f64,
        weight_decay: f64,
    ) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::InvalidArgument(format!(
                "optimizer tracks {} tensors, got {} parameters and {} gradients",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - ADAM_BETA1.powi(t);
        let bc2 = 1.0 - ADAM_BETA2.powi(t);
        for (k, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            if p.shape() != g.shape() || self.m[k].shape() != g.shape() {
                return Err(Error::shape("adam_step", p.shape(), g.shape()));
            }
            let m = &mut self.m[k];
            let v = &mut self.v[k];
            for i in 0..g.len() {
                let gi = g[i];
                m[i] = ADAM_BETA1 * m[i] + (1.0 - ADAM_BETA1) * gi;
                v[i] = ADAM_BETA2 * v[i] + (1.0 - ADAM_BETA2) * gi * gi;
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                let old = p[i];
                let new = old - lr * mhat / (vhat.sqrt() + ADAM_EPS) - lr * weight_decay * old;
                if !new.is_finite() {
                    return Err(Error::NumericOverflow {
                        step: self.step as usize,
                        what: format!("Adam produced a non-finite value in tensor {k}"),
                    });
                }
                p[i] = new;
            }
        }
        Ok(())
    }
}

/// Everything [`train`] needs besides the data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSetup {
    pub arch: Architecture,
    pub weights: LossWeights,
    pub trainer: TrainerConfig,
}

/// Window layout for one training run.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WindowPlan {
    /// Batch size actually used; smaller than requested when the training
    /// portion cannot hold a full window.
    pub batch_size: usize,
    pub starts: Vec<usize>,
}

/// Lays out loss windows over the first `n_train` samples.
///
/// When `n_train < M + k_m + k_tm` the batch shrinks to
/// `n_train − k_m − k_tm`, which must still exceed `k_tm`.
pub fn plan_windows(n_train: usize, weights: &LossWeights, stride: usize) -> Result<WindowPlan> {
    let horizon = weights.k_m + weights.k_tm;
    let room = n_train.saturating_sub(horizon);
    let batch_size = weights.batch_size.min(room);
    if batch_size <= weights.k_tm {
        return Err(Error::Config(format!(
            "n_train={n_train} is too small: need n_train > k_m + 2·k_tm = {} \
             (window M + k_m + k_tm with M > k_tm)",
            weights.k_m + 2 * weights.k_tm
        )));
    }
    let last = n_train - (batch_size + horizon);
    Ok(WindowPlan {
        batch_size,
        starts: (0..=last).step_by(stride.max(1)).collect(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub loss: LossBreakdown,
}

/// Per-epoch mean loss components, measured before each batch's update.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainingHistory {
    pub epochs: Vec<EpochRecord>,
}

impl TrainingHistory {
    pub const CSV_HEADER: &'static str = "epoch,lr,L_id,L_fwd,L_tc,L_tot";

    pub fn to_csv(&self) -> String {
        let mut out = String::from(Self::CSV_HEADER);
        out.push('\n');
        for r in &self.epochs {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                r.epoch, r.lr, r.loss.identity, r.loss.forward, r.loss.consistency, r.loss.total
            );
        }
        out
    }

    pub fn first(&self) -> Option<&EpochRecord> {
        self.epochs.first()
    }

    pub fn last(&self) -> Option<&EpochRecord> {
        self.epochs.last()
    }
}

/// Training inputs cut from a dataset: the first `n_train` lifted samples
/// and the controls between them.
pub struct TrainingData {
    pub states: DMatrix<f64>,
    pub controls: DMatrix<f64>,
}

impl TrainingData {
    pub fn from_dataset(ds: &Dataset) -> Self {
        let n = ds.n_train;
        let controls = ds.control_matrix();
        TrainingData {
            states: ds.lifted.columns(0, n).into_owned(),
            controls: controls.columns(0, n.saturating_sub(1)).into_owned(),
        }
    }

    pub fn len(&self) -> usize {
        self.states.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.states.ncols() == 0
    }
}

/// Trains from a fresh initialisation seeded by `setup.trainer.seed`.
pub fn train(setup: &TrainSetup, data: &TrainingData) -> Result<(ModelParams, TrainingHistory)> {
    let params = init_params(setup.trainer.seed, setup.arch)?;
    train_from(setup, data, params)
}

/// Trains starting from `params`. Fully deterministic: the only randomness
/// is the per-epoch window shuffle, seeded from `setup.trainer.seed`.
pub fn train_from(
    setup: &TrainSetup,
    data: &TrainingData,
    mut params: ModelParams,
) -> Result<(ModelParams, TrainingHistory)> {
    setup.trainer.validate()?;
    setup.weights.validate()?;
    if params.arch != setup.arch {
        return Err(Error::Config("initial parameters do not match the architecture".into()));
    }
    if data.states.nrows() != setup.arch.input_dim {
        return Err(Error::Config(format!(
            "data has dimension {}, architecture expects {}",
            data.states.nrows(),
            setup.arch.input_dim
        )));
    }
    let plan = plan_windows(data.len(), &setup.weights, setup.trainer.window_stride)?;
    if plan.batch_size != setup.weights.batch_size {
        log::info!(
            "n_train={} cannot hold a window of M={}; using M={}",
            data.len(),
            setup.weights.batch_size,
            plan.batch_size
        );
    }
    let weights = setup.weights.with_batch_size(plan.batch_size);
    let batches: Vec<Batch> = plan
        .starts
        .iter()
        .map(|&s| Batch::from_sequence(&data.states, &data.controls, s, &weights))
        .collect::<Result<_>>()?;

    let mut rng = ChaCha8Rng::seed_from_u64(setup.trainer.seed);
    rng.set_stream(1);
    let mut adam = AdamState::new(params.tensors());
    let mut history = TrainingHistory::default();
    let mut order: Vec<usize> = (0..batches.len()).collect();

    for epoch in 0..setup.trainer.epochs {
        let lr = lr_at_epoch(&setup.trainer, epoch);
        order.shuffle(&mut rng);
        let mut sum = LossBreakdown::default();
        for (bi, &idx) in order.iter().enumerate() {
            let (loss, mut grads) = loss_and_gradients(&params, &batches[idx], &weights)?;
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    batch: bi,
                    what: format!("{loss:?}"),
                });
            }
            clip_gradients(&mut grads, setup.trainer.grad_clip).map_err(|e| match e {
                Error::NumericOverflow { what, .. } => Error::NonFiniteLoss { epoch, batch: bi, what },
                other => other,
            })?;
            adam.step(&mut params.tensors_mut(), &grads, lr, setup.trainer.weight_decay)
                .map_err(|e| match e {
                    Error::NumericOverflow { what, .. } => Error::NonFiniteLoss { epoch, batch: bi, what },
                    other => other,
                })?;
            sum.identity += loss.identity;
            sum.forward += loss.forward;
            sum.consistency += loss.consistency;
            sum.total += loss.total;
        }
        let n = batches.len() as f64;
        history.epochs.push(EpochRecord {
            epoch,
            lr,
            loss: LossBreakdown {
                identity: sum.identity / n,
                forward: sum.forward / n,
                consistency: sum.consistency / n,
                total: sum.total / n,
            },
        });
    }
    Ok((params, history))
}
