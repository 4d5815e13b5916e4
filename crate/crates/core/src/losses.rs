//! Identity, multi-step forward, and temporal-consistency losses.
//!
//! All three are built on one tape from a single batch: the `M` window
//! states are encoded once, and the latent rollouts `R_j` (every column
//! advanced `j` intervals with the controls of the absolute steps it
//! crosses) are shared by the forward and consistency terms.
//!
//! The consistency term compares latent predictions that land on the same
//! absolute time from different starting samples:
//!
//! ```text
//! L_tc = 1/(2(k_tm−1)) Σ_{q=1}^{k_tm−1} L_q
//! L_q  = 1/(k_tm−q)    Σ_{k=1}^{k_tm−q} L_k
//! L_k  = 1/(M−q)       Σ_{p=q}^{M−1} ‖R_k[p] − R_{k+q}[p−q]‖²
//! ```
//!
//! `R_k[p]` starts from window sample `p` and `R_{k+q}[p−q]` from sample
//! `p−q`; both land on sample `p+k`. No observation beyond the first `M`
//! window samples is read.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::model::{ModelParams, ParamVars};

/// Loss scaling factors and horizons.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub gamma_id: f64,
    pub gamma_fwd: f64,
    pub gamma_tc: f64,
    /// Forward look-ahead `k_m`.
    pub k_m: usize,
    /// Consistency horizon `k_tm`.
    pub k_tm: usize,
    /// Batch size `M`.
    pub batch_size: usize,
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, g) in [
            ("gamma_id", self.gamma_id),
            ("gamma_fwd", self.gamma_fwd),
            ("gamma_tc", self.gamma_tc),
        ] {
            if !(g >= 0.0) || !g.is_finite() {
                return Err(Error::Config(format!("{name} must be a nonnegative number, got {g}")));
            }
        }
        if self.k_m == 0 {
            return Err(Error::Config("k_m must be at least 1".into()));
        }
        if self.k_tm < 2 {
            return Err(Error::Config(format!("k_tm must be at least 2, got {}", self.k_tm)));
        }
        if self.batch_size <= self.k_tm {
            return Err(Error::Config(format!(
                "batch size M={} must exceed k_tm={}",
                self.batch_size, self.k_tm
            )));
        }
        Ok(())
    }

    /// Samples one batch window spans: `M + k_m + k_tm`.
    pub fn window_len(&self) -> usize {
        self.batch_size + self.k_m + self.k_tm
    }

    /// Same weights with a different batch size.
    pub fn with_batch_size(&self, batch_size: usize) -> Self {
        LossWeights { batch_size, ..*self }
    }
}

/// `M + k_m + k_tm` consecutive lifted samples (one per column) with the
/// controls between them; `controls` column `i` drives `states[i] → states[i+1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub start: usize,
    pub batch_size: usize,
    pub states: DMatrix<f64>,
    pub controls: DMatrix<f64>,
}

impl Batch {
    pub fn new(start: usize, batch_size: usize, states: DMatrix<f64>, controls: DMatrix<f64>) -> Result<Self> {
        if batch_size == 0 || states.ncols() < batch_size {
            return Err(Error::Config(format!(
                "batch of size {batch_size} needs at least that many samples, window has {}",
                states.ncols()
            )));
        }
        if controls.ncols() + 1 < states.ncols() {
            return Err(Error::Config(format!(
                "{} samples need {} controls, got {}",
                states.ncols(),
                states.ncols() - 1,
                controls.ncols()
            )));
        }
        Ok(Batch {
            start,
            batch_size,
            states,
            controls,
        })
    }

    /// Cuts the window starting at `start` out of a full sequence.
    pub fn from_sequence(
        states: &DMatrix<f64>,
        controls: &DMatrix<f64>,
        start: usize,
        weights: &LossWeights,
    ) -> Result<Self> {
        let len = weights.window_len();
        if start + len > states.ncols() || start + len - 1 > controls.ncols() {
            return Err(Error::Config(format!(
                "window [{start}, {}) exceeds the {} available samples",
                start + len,
                states.ncols()
            )));
        }
        Batch::new(
            start,
            weights.batch_size,
            states.columns(start, len).into_owned(),
            controls.columns(start, len - 1).into_owned(),
        )
    }

    /// Number of samples in the window.
    pub fn len(&self) -> usize {
        self.states.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.states.ncols() == 0
    }

    /// Inputs applied at rollout step `j` (1-based) to each of the `M`
    /// columns: column `c` crosses interval `c + j − 1`.
    fn step_inputs(&self, j: usize) -> Vec<Vec<f64>> {
        let m = self.batch_size;
        (0..self.controls.nrows())
            .map(|i| (0..m).map(|c| self.controls[(i, c + j - 1)]).collect())
            .collect()
    }

    fn require_horizon(&self, steps: usize, labelled: bool) -> Result<()> {
        let m = self.batch_size;
        if m + steps > self.controls.ncols() + 1 {
            return Err(Error::Config(format!(
                "window of {} samples is too short for M={m} and a {steps}-step rollout",
                self.len()
            )));
        }
        if labelled && m + steps > self.states.ncols() {
            return Err(Error::Config(format!(
                "window of {} samples lacks labels for M={m} and k_m={steps}",
                self.len()
            )));
        }
        Ok(())
    }
}

/// Loss terms on a tape.
#[derive(Debug, Clone, Copy)]
pub struct LossVars {
    pub identity: Var,
    pub forward: Var,
    pub consistency: Var,
    pub total: Var,
}

/// Loss values.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub identity: f64,
    pub forward: f64,
    pub consistency: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn is_finite(&self) -> bool {
        self.identity.is_finite()
            && self.forward.is_finite()
            && self.consistency.is_finite()
            && self.total.is_finite()
    }
}

struct Encoded {
    x0: Var,
    rolls: Vec<Var>,
}

/// Encodes the `M` window samples and rolls them `horizon` steps.
fn encode_and_roll(tape: &mut Tape, pv: &ParamVars, batch: &Batch, horizon: usize) -> Result<Encoded> {
    let m = batch.batch_size;
    let x0 = tape.leaf(batch.states.columns(0, m).into_owned());
    let mut rolls = vec![pv.encode(tape, x0)?];
    for j in 1..=horizon {
        let next = pv.step(tape, rolls[j - 1], &batch.step_inputs(j))?;
        rolls.push(next);
    }
    Ok(Encoded { x0, rolls })
}

fn identity_term(tape: &mut Tape, pv: &ParamVars, batch: &Batch, enc: &Encoded) -> Result<Var> {
    let m = batch.batch_size as f64;
    let recon = pv.decode(tape, enc.rolls[0])?;
    let diff = tape.sub(recon, enc.x0)?;
    let ss = tape.sum_squares(diff);
    Ok(tape.scale(ss, 1.0 / (2.0 * m)))
}

fn forward_term(tape: &mut Tape, pv: &ParamVars, batch: &Batch, enc: &Encoded, k_m: usize) -> Result<Var> {
    let m = batch.batch_size;
    let mut acc: Option<Var> = None;
    for k in 1..=k_m {
        let pred = pv.decode(tape, enc.rolls[k])?;
        let truth = tape.leaf(batch.states.columns(k, m).into_owned());
        let diff = tape.sub(pred, truth)?;
        let ss = tape.sum_squares(diff);
        acc = Some(match acc {
            Some(a) => tape.add(a, ss)?,
            None => ss,
        });
    }
    let acc = acc.expect("k_m >= 1");
    Ok(tape.scale(acc, 1.0 / (2.0 * k_m as f64 * m as f64)))
}

fn consistency_term(tape: &mut Tape, batch: &Batch, enc: &Encoded, k_tm: usize) -> Result<Var> {
    let m = batch.batch_size;
    let mut outer: Option<Var> = None;
    for q in 1..k_tm {
        let mut middle: Option<Var> = None;
        for k in 1..=(k_tm - q) {
            let late = tape.columns(enc.rolls[k], q, m - q)?;
            let early = tape.columns(enc.rolls[k + q], 0, m - q)?;
            let diff = tape.sub(late, early)?;
            let ss = tape.sum_squares(diff);
            let lk = tape.scale(ss, 1.0 / (m - q) as f64);
            middle = Some(match middle {
                Some(a) => tape.add(a, lk)?,
                None => lk,
            });
        }
        let lq = tape.scale(middle.expect("k_tm - q >= 1"), 1.0 / (k_tm - q) as f64);
        outer = Some(match outer {
            Some(a) => tape.add(a, lq)?,
            None => lq,
        });
    }
    let outer = outer.expect("k_tm >= 2");
    Ok(tape.scale(outer, 1.0 / (2.0 * (k_tm - 1) as f64)))
}

fn check_consistency_args(batch: &Batch, k_tm: usize) -> Result<()> {
    if k_tm < 2 {
        return Err(Error::Config(format!("k_tm must be at least 2, got {k_tm}")));
    }
    if batch.batch_size < k_tm {
        return Err(Error::Config(format!(
            "batch size M={} must exceed the largest offset q={}",
            batch.batch_size,
            k_tm - 1
        )));
    }
    batch.require_horizon(k_tm, false)
}

/// Records all three losses and their weighted sum on `tape`.
///
/// The consistency term is always recorded so its value can be reported,
/// but it only enters `total` when `gamma_tc > 0`.
pub fn record_losses(tape: &mut Tape, pv: &ParamVars, batch: &Batch, weights: &LossWeights) -> Result<LossVars> {
    weights.validate()?;
    if batch.batch_size != weights.batch_size {
        return Err(Error::Config(format!(
            "batch holds M={} but weights expect M={}",
            batch.batch_size, weights.batch_size
        )));
    }
    batch.require_horizon(weights.k_m, true)?;
    check_consistency_args(batch, weights.k_tm)?;
    let enc = encode_and_roll(tape, pv, batch, weights.k_m.max(weights.k_tm))?;
    let identity = identity_term(tape, pv, batch, &enc)?;
    let forward = forward_term(tape, pv, batch, &enc, weights.k_m)?;
    let consistency = consistency_term(tape, batch, &enc, weights.k_tm)?;

    let a = tape.scale(identity, weights.gamma_id);
    let b = tape.scale(forward, weights.gamma_fwd);
    let mut total = tape.add(a, b)?;
    if weights.gamma_tc > 0.0 {
        let c = tape.scale(consistency, weights.gamma_tc);
        total = tape.add(total, c)?;
    }
    Ok(LossVars {
        identity,
        forward,
        consistency,
        total,
    })
}

/// `1/(2M) Σₙ ‖decode(encode(xₙ)) − xₙ‖²` over the `M` window samples.
pub fn identity_loss(params: &ModelParams, batch: &Batch) -> Result<f64> {
    let mut tape = Tape::new();
    let pv = params.record(&mut tape);
    let enc = encode_and_roll(&mut tape, &pv, batch, 0)?;
    let v = identity_term(&mut tape, &pv, batch, &enc)?;
    Ok(tape.scalar(v))
}

/// `1/(2 k_m M) Σ_{k=1}^{k_m} Σₙ ‖x̂ₙ₊ₖ − xₙ₊ₖ‖²` with predictions rolled
/// from each of the `M` window samples.
pub fn forward_loss(params: &ModelParams, batch: &Batch, k_m: usize) -> Result<f64> {
    if k_m == 0 {
        return Err(Error::Config("k_m must be at least 1".into()));
    }
    batch.require_horizon(k_m, true)?;
    let mut tape = Tape::new();
    let pv = params.record(&mut tape);
    let enc = encode_and_roll(&mut tape, &pv, batch, k_m)?;
    let v = forward_term(&mut tape, &pv, batch, &enc, k_m)?;
    Ok(tape.scalar(v))
}

/// Temporal-consistency loss (see the module docs).
pub fn temporal_consistency_loss(params: &ModelParams, batch: &Batch, k_tm: usize) -> Result<f64> {
    check_consistency_args(batch, k_tm)?;
    let mut tape = Tape::new();
    let pv = params.record(&mut tape);
    let enc = encode_and_roll(&mut tape, &pv, batch, k_tm)?;
    let v = consistency_term(&mut tape, batch, &enc, k_tm)?;
    Ok(tape.scalar(v))
}

/// `γ_id·L_id + γ_fwd·L_fwd + γ_tc·L_tc`.
pub fn total_loss(params: &ModelParams, batch: &Batch, weights: &LossWeights) -> Result<f64> {
    Ok(evaluate_losses(params, batch, weights)?.total)
}

/// All loss values for one batch.
pub fn evaluate_losses(params: &ModelParams, batch: &Batch, weights: &LossWeights) -> Result<LossBreakdown> {
    let mut tape = Tape::new();
    let pv = params.record(&mut tape);
    let vars = record_losses(&mut tape, &pv, batch, weights)?;
    Ok(breakdown(&tape, &vars))
}

fn breakdown(tape: &Tape, vars: &LossVars) -> LossBreakdown {
    LossBreakdown {
        identity: tape.scalar(vars.identity),
        forward: tape.scalar(vars.forward),
        consistency: tape.scalar(vars.consistency),
        total: tape.scalar(vars.total),
    }
}

/// Loss values and the gradient of the total with respect to every tensor,
/// in [`ModelParams::tensors`] order.
pub fn loss_and_gradients(
    params: &ModelParams,
    batch: &Batch,
    weights: &LossWeights,
) -> Result<(LossBreakdown, Vec<DMatrix<f64>>)> {
    let mut tape = Tape::new();
    let pv = params.record(&mut tape);
    let vars = record_losses(&mut tape, &pv, batch, weights)?;
    let mut grads = tape.backward(vars.total)?;
    let g = pv.all().into_iter().map(|v| grads.take(v)).collect();
    Ok((breakdown(&tape, &vars), g))
}

/// Convenience: a batch from vector sequences.
pub fn batch_from_vectors(
    start: usize,
    batch_size: usize,
    states: &[DVector<f64>],
    controls: &[DVector<f64>],
) -> Result<Batch> {
    if states.is_empty() || controls.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    Batch::new(
        start,
        batch_size,
        DMatrix::from_columns(states),
        DMatrix::from_columns(controls),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{init_params, Activation, Architecture};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn arch() -> Architecture {
        Architecture {
            input_dim: 4,
            latent_dim: 3,
            encoder_hidden: 8,
            decoder_hidden: 8,
            input_count: 1,
            activation: Activation::Tanh,
        }
    }

    fn random_params(seed: u64) -> ModelParams {
        let mut p = init_params(seed, arch()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
        for t in p.tensors_mut() {
            t.apply(|v| *v = rng.random_range(-0.6..0.6));
        }
        p
    }

    fn random_batch(seed: u64, weights: &LossWeights) -> Batch {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let len = weights.window_len();
        let states = DMatrix::from_fn(4, len, |_, _| rng.random_range(-1.0..1.0));
        let controls = DMatrix::from_fn(1, len - 1, |_, _| rng.random_range(-0.15..0.15));
        Batch::new(0, weights.batch_size, states, controls).unwrap()
    }

    fn weights(m: usize, k_m: usize, k_tm: usize) -> LossWeights {
        LossWeights {
            gamma_id: 1.0,
            gamma_fwd: 1.0,
            gamma_tc: 2.0,
            k_m,
            k_tm,
            batch_size: m,
        }
    }

    #[test]
    fn identity_loss_of_single_error_vector() {
        // Zero decoder output against a label [3, 4, 0, 0] gives ½·25.
        let mut p = init_params(0, arch()).unwrap();
        p.dec_w2.fill(0.0);
        let w = weights(3, 1, 2);
        let mut states = DMatrix::zeros(4, w.window_len());
        states[(0, 0)] = 3.0;
        states[(1, 0)] = 4.0;
        let mut b = Batch::new(0, 3, states, DMatrix::zeros(1, w.window_len() - 1)).unwrap();
        b.batch_size = 1;
        assert_eq!(identity_loss(&p, &b).unwrap(), 12.5);
    }

    #[test]
    fn identity_loss_matches_direct_recomputation() {
        let p = random_params(1);
        let w = weights(5, 2, 2);
        let b = random_batch(2, &w);
        let mut acc = 0.0;
        for n in 0..5 {
            let x = b.states.column(n).into_owned();
            acc += (p.reconstruct(&x).unwrap() - x).norm_squared();
        }
        let direct = acc / 10.0;
        let got = identity_loss(&p, &b).unwrap();
        assert!((got - direct).abs() <= 1e-14 * direct.abs(), "{got} vs {direct}");
    }

    #[test]
    fn forward_loss_single_step_collapses() {
        let p = random_params(3);
        let w = weights(3, 1, 2);
        let mut b = random_batch(4, &w);
        b.batch_size = 1;
        let x0 = b.states.column(0).into_owned();
        let u = DVector::from_element(1, b.controls[(0, 0)]);
        let pred = p.predict(&x0, &[u]).unwrap();
        let expected = 0.5 * (&pred[0] - b.states.column(1)).norm_squared();
        let got = forward_loss(&p, &b, 1).unwrap();
        assert!((got - expected).abs() <= 1e-14 * expected, "{got} vs {expected}");
    }

    #[test]
    fn consistency_closed_form_for_two_steps() {
        let p = random_params(5);
        let w = weights(6, 3, 2);
        let b = random_batch(6, &w);
        let ctrl = |i: usize| DVector::from_element(1, b.controls[(0, i)]);
        let mut acc = 0.0;
        for pidx in 1..6 {
            let z_a = p.encode(&b.states.column(pidx).into_owned()).unwrap();
            let one = p.bilinear_step(&z_a, &ctrl(pidx)).unwrap();
            let z_b = p.encode(&b.states.column(pidx - 1).into_owned()).unwrap();
            let two = p
                .rollout_latent(&z_b, &[ctrl(pidx - 1), ctrl(pidx)])
                .unwrap()
                .pop()
                .unwrap();
            acc += (one - two).norm_squared();
        }
        let expected = 0.5 * acc / 5.0;
        let got = temporal_consistency_loss(&p, &b, 2).unwrap();
        assert!((got - expected).abs() <= 1e-13 * expected, "{got} vs {expected}");
    }

    #[test]
    fn consistency_ignores_future_labels() {
        let p = random_params(7);
        let w = weights(5, 3, 3);
        let b = random_batch(8, &w);
        let before = temporal_consistency_loss(&p, &b, 3).unwrap();
        let mut blanked = b.clone();
        for c in w.batch_size..blanked.len() {
            blanked.states.column_mut(c).fill(f64::NAN);
        }
        assert_eq!(temporal_consistency_loss(&p, &blanked, 3).unwrap(), before);
    }

    #[test]
    fn argument_errors() {
        let p = random_params(9);
        let w = weights(4, 3, 2);
        let b = random_batch(10, &w);
        assert!(temporal_consistency_loss(&p, &b, 1).is_err());
        assert!(forward_loss(&p, &b, 0).is_err());
        assert!(forward_loss(&p, &b, 40).is_err());
        let neg = LossWeights { gamma_fwd: -1.0, ..w };
        assert!(total_loss(&p, &b, &neg).is_err());
        let small = LossWeights { batch_size: 2, ..w };
        assert!(small.validate().is_err());
    }

    #[test]
    fn weight_selection() {
        let p = random_params(11);
        let w = weights(4, 3, 2);
        let b = random_batch(12, &w);
        let only_id = LossWeights { gamma_id: 1.0, gamma_fwd: 0.0, gamma_tc: 0.0, ..w };
        assert_eq!(total_loss(&p, &b, &only_id).unwrap(), identity_loss(&p, &b).unwrap());

        let blran = LossWeights { gamma_tc: 0.0, ..w };
        let tc = evaluate_losses(&p, &b, &w).unwrap();
        let plain = evaluate_losses(&p, &b, &blran).unwrap();
        assert_eq!(tc.identity, plain.identity);
        assert_eq!(tc.forward, plain.forward);
        assert_eq!(plain.total, plain.identity + plain.forward);
    }

    #[test]
    fn losses_are_nonnegative() {
        for seed in 0..10 {
            let p = random_params(seed);
            let w = weights(5, 3, 3);
            let l = evaluate_losses(&p, &random_batch(seed + 50, &w), &w).unwrap();
            assert!(l.identity >= 0.0 && l.forward >= 0.0 && l.consistency >= 0.0);
        }
    }

    #[test]
    fn gradients_line_up_with_tensors() {
        let p = random_params(13);
        let w = weights(4, 2, 2);
        let (l, g) = loss_and_gradients(&p, &random_batch(14, &w), &w).unwrap();
        assert!(l.is_finite());
        assert_eq!(g.len(), p.tensors().len());
        for (gi, ti) in g.iter().zip(p.tensors()) {
            assert_eq!(gi.shape(), ti.shape());
        }
    }
}
