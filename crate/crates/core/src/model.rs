//! Bilinearly recurrent autoencoder.
//!
//! An encoder `z = W₂·tanh(W₁x + b₁) + b₂` maps a lifted observation to the
//! latent space, where one sampling interval is the bilinear map
//! `z ↦ (Ã + Σᵢ B̃ᵢuᵢ)·z`, and a decoder of the same shape maps back.
//! `Ã` and `B̃ᵢ` are the Euler-discretised drift and control generators,
//! trained as free matrices.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::io::{matrix_from_rows, matrix_to_rows};

pub const CHECKPOINT_SCHEMA_VERSION: u32 = 1;

/// Hidden-layer nonlinearity of the encoder and decoder.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Tanh,
    /// No nonlinearity; makes both networks affine.
    Identity,
}

impl Activation {
    fn apply(self, v: f64) -> f64 {
        match self {
            Activation::Tanh => v.tanh(),
            Activation::Identity => v,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub input_dim: usize,
    pub latent_dim: usize,
    pub encoder_hidden: usize,
    pub decoder_hidden: usize,
    pub input_count: usize,
    #[serde(default)]
    pub activation: Activation,
}

impl Architecture {
    /// Tanh networks with the given sizes.
    pub fn new(
        input_dim: usize,
        latent_dim: usize,
        encoder_hidden: usize,
        decoder_hidden: usize,
        input_count: usize,
    ) -> Self {
        Architecture {
            input_dim,
            latent_dim,
            encoder_hidden,
            decoder_hidden,
            input_count,
            activation: Activation::Tanh,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("input_dim", self.input_dim),
            ("latent_dim", self.latent_dim),
            ("encoder_hidden", self.encoder_hidden),
            ("decoder_hidden", self.decoder_hidden),
            ("input_count", self.input_count),
        ];
        for (name, v) in dims {
            if v == 0 {
                return Err(Error::Config(format!("architecture field {name} must be positive")));
            }
        }
        Ok(())
    }
}

/// All trainable tensors. Biases are stored as single-column matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub arch: Architecture,
    pub enc_w1: DMatrix<f64>,
    pub enc_b1: DMatrix<f64>,
    pub enc_w2: DMatrix<f64>,
    pub enc_b2: DMatrix<f64>,
    pub dec_w1: DMatrix<f64>,
    pub dec_b1: DMatrix<f64>,
    pub dec_w2: DMatrix<f64>,
    pub dec_b2: DMatrix<f64>,
    pub a_tilde: DMatrix<f64>,
    pub b_tilde: Vec<DMatrix<f64>>,
}

fn glorot(rng: &mut ChaCha8Rng, fan_out: usize, fan_in: usize) -> DMatrix<f64> {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    DMatrix::from_fn(fan_out, fan_in, |_, _| rng.random_range(-bound..bound))
}

/// Glorot-uniform encoder/decoder weights with zero biases, `Ã = I` and
/// `B̃ᵢ = 0`, so a fresh model's latent step is the identity.
pub fn init_params(seed: u64, arch: Architecture) -> Result<ModelParams> {
    arch.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let Architecture {
        input_dim: d,
        latent_dim: l,
        encoder_hidden: he,
        decoder_hidden: hd,
        input_count: m,
        ..
    } = arch;
    Ok(ModelParams {
        arch,
        enc_w1: glorot(&mut rng, he, d),
        enc_b1: DMatrix::zeros(he, 1),
        enc_w2: glorot(&mut rng, l, he),
        enc_b2: DMatrix::zeros(l, 1),
        dec_w1: glorot(&mut rng, hd, l),
        dec_b1: DMatrix::zeros(hd, 1),
        dec_w2: glorot(&mut rng, d, hd),
        dec_b2: DMatrix::zeros(d, 1),
        a_tilde: DMatrix::identity(l, l),
        b_tilde: vec![DMatrix::zeros(l, l); m],
    })
}

fn mlp(
    act: Activation,
    w1: &DMatrix<f64>,
    b1: &DMatrix<f64>,
    w2: &DMatrix<f64>,
    b2: &DMatrix<f64>,
    x: &DVector<f64>,
) -> DVector<f64> {
    let mut h = w1 * x;
    h += b1.column(0);
    h.apply(|v| *v = act.apply(*v));
    let mut out = w2 * h;
    out += b2.column(0);
    out
}

impl ModelParams {
    /// Canonical tensor names, in the order of [`ModelParams::tensors`].
    pub fn tensor_names(&self) -> Vec<String> {
        let mut names: Vec<String> = [
            "enc.w1", "enc.b1", "enc.w2", "enc.b2", "dec.w1", "dec.b1", "dec.w2", "dec.b2",
            "a_tilde",
        ]
        .iter()
        .map(|s| s.to_string())
        .collect();
        names.extend((0..self.b_tilde.len()).map(|i| format!("b_tilde.{i}")));
        names
    }

    pub fn tensors(&self) -> Vec<&DMatrix<f64>> {
        let mut t = vec![
            &self.enc_w1,
            &self.enc_b1,
            &self.enc_w2,
            &self.enc_b2,
            &self.dec_w1,
            &self.dec_b1,
            &self.dec_w2,
            &self.dec_b2,
            &self.a_tilde,
        ];
        t.extend(self.b_tilde.iter());
        t
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut DMatrix<f64>> {
        let mut t = vec![
            &mut self.enc_w1,
            &mut self.enc_b1,
            &mut self.enc_w2,
            &mut self.enc_b2,
            &mut self.dec_w1,
            &mut self.dec_b1,
            &mut self.dec_w2,
            &mut self.dec_b2,
            &mut self.a_tilde,
        ];
        t.extend(self.b_tilde.iter_mut());
        t
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|v| v.is_finite()))
    }

    /// Rebuilds a parameter set from tensors in canonical order.
    pub fn from_tensors(arch: Architecture, tensors: Vec<DMatrix<f64>>) -> Result<Self> {
        arch.validate()?;
        let template = init_params(0, arch)?;
        let expected: Vec<(usize, usize)> = template.tensors().iter().map(|t| t.shape()).collect();
        if tensors.len() != expected.len() {
            return Err(Error::InvalidArgument(format!(
                "expected {} tensors, got {}",
                expected.len(),
                tensors.len()
            )));
        }
        for (k, (t, s)) in tensors.iter().zip(&expected).enumerate() {
            if t.shape() != *s {
                return Err(Error::shape("from_tensors", t.shape(), *s));
            }
            if t.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidArgument(format!("tensor {k} has non-finite entries")));
            }
        }
        let mut it = tensors.into_iter();
        let mut next = || it.next().expect("length checked");
        Ok(ModelParams {
            arch,
            enc_w1: next(),
            enc_b1: next(),
            enc_w2: next(),
            enc_b2: next(),
            dec_w1: next(),
            dec_b1: next(),
            dec_w2: next(),
            dec_b2: next(),
            a_tilde: next(),
            b_tilde: (0..arch.input_count).map(|_| next()).collect(),
        })
    }

    pub fn encode(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        if x.len() != self.arch.input_dim {
            return Err(Error::shape("encode", (x.len(), 1), (self.arch.input_dim, 1)));
        }
        Ok(mlp(self.arch.activation, &self.enc_w1, &self.enc_b1, &self.enc_w2, &self.enc_b2, x))
    }

    pub fn decode(&self, z: &DVector<f64>) -> Result<DVector<f64>> {
        if z.len() != self.arch.latent_dim {
            return Err(Error::shape("decode", (z.len(), 1), (self.arch.latent_dim, 1)));
        }
        Ok(mlp(self.arch.activation, &self.dec_w1, &self.dec_b1, &self.dec_w2, &self.dec_b2, z))
    }

    /// Latent transition matrix `Ã + Σᵢ B̃ᵢuᵢ` for one interval.
    pub fn transition(&self, u: &DVector<f64>) -> Result<DMatrix<f64>> {
        if u.len() != self.arch.input_count {
            return Err(Error::shape("transition", (u.len(), 1), (self.arch.input_count, 1)));
        }
        let mut k = self.a_tilde.clone();
        for (b, &ui) in self.b_tilde.iter().zip(u.iter()) {
            k += b * ui;
        }
        Ok(k)
    }

    /// `(Ã + Σᵢ B̃ᵢuᵢ)·z`.
    pub fn bilinear_step(&self, z: &DVector<f64>, u: &DVector<f64>) -> Result<DVector<f64>> {
        if z.len() != self.arch.latent_dim {
            return Err(Error::shape("bilinear_step", (z.len(), 1), (self.arch.latent_dim, 1)));
        }
        let mut out = &self.a_tilde * z;
        if u.len() != self.arch.input_count {
            return Err(Error::shape("bilinear_step", (u.len(), 1), (self.arch.input_count, 1)));
        }
        for (b, &ui) in self.b_tilde.iter().zip(u.iter()) {
            out += (b * z) * ui;
        }
        Ok(out)
    }

    /// Latent states after 1, 2, …, k intervals; `controls[j]` is the input
    /// held over the `j`-th interval from the start.
    pub fn rollout_latent(
        &self,
        z0: &DVector<f64>,
        controls: &[DVector<f64>],
    ) -> Result<Vec<DVector<f64>>> {
        let mut out = Vec::with_capacity(controls.len());
        let mut z = z0.clone();
        for u in controls {
            z = self.bilinear_step(&z, u)?;
            out.push(z.clone());
        }
        Ok(out)
    }

    /// Decoded predictions for 1..=k intervals ahead of `x0`.
    pub fn predict(&self, x0: &DVector<f64>, controls: &[DVector<f64>]) -> Result<Vec<DVector<f64>>> {
        let z0 = self.encode(x0)?;
        self.rollout_latent(&z0, controls)?
            .iter()
            .map(|z| self.decode(z))
            .collect()
    }

    /// `decode(encode(x))`, the zero-step prediction.
    pub fn reconstruct(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        self.decode(&self.encode(x)?)
    }

    /// Records every tensor as a leaf on `tape`.
    pub fn record(&self, tape: &mut Tape) -> ParamVars {
        let mut leaf = |m: &DMatrix<f64>| tape.leaf(m.clone());
        ParamVars {
            enc_w1: leaf(&self.enc_w1),
            enc_b1: leaf(&self.enc_b1),
            enc_w2: leaf(&self.enc_w2),
            enc_b2: leaf(&self.enc_b2),
            dec_w1: leaf(&self.dec_w1),
            dec_b1: leaf(&self.dec_b1),
            dec_w2: leaf(&self.dec_w2),
            dec_b2: leaf(&self.dec_b2),
            a_tilde: leaf(&self.a_tilde),
            b_tilde: self.b_tilde.iter().map(&mut leaf).collect(),
            activation: self.arch.activation,
        }
    }

    pub fn to_checkpoint(&self, seed: u64, epochs: usize) -> Checkpoint {
        Checkpoint {
            schema_version: CHECKPOINT_SCHEMA_VERSION,
            arch: self.arch,
            seed,
            epochs,
            tensors: self
                .tensor_names()
                .into_iter()
                .zip(self.tensors())
                .map(|(name, t)| NamedTensor {
                    name,
                    rows: matrix_to_rows(t),
                })
                .collect(),
        }
    }
}

/// Tape handles for every tensor of a [`ModelParams`], in the same layout.
#[derive(Debug, Clone)]
pub struct ParamVars {
    pub enc_w1: Var,
    pub enc_b1: Var,
    pub enc_w2: Var,
    pub enc_b2: Var,
    pub dec_w1: Var,
    pub dec_b1: Var,
    pub dec_w2: Var,
    pub dec_b2: Var,
    pub a_tilde: Var,
    pub b_tilde: Vec<Var>,
    pub activation: Activation,
}

#[allow(clippy::too_many_arguments)]
fn mlp_batch(tape: &mut Tape, act: Activation, w1: Var, b1: Var, w2: Var, b2: Var, x: Var) -> Result<Var> {
    let h = tape.matmul(w1, x)?;
    let h = tape.add_bias(h, b1)?;
    let h = match act {
        Activation::Tanh => tape.tanh(h),
        Activation::Identity => h,
    };
    let o = tape.matmul(w2, h)?;
    tape.add_bias(o, b2)
}

impl ParamVars {
    /// Canonical order, matching [`ModelParams::tensors`].
    pub fn all(&self) -> Vec<Var> {
        let mut v = vec![
            self.enc_w1,
            self.enc_b1,
            self.enc_w2,
            self.enc_b2,
            self.dec_w1,
            self.dec_b1,
            self.dec_w2,
            self.dec_b2,
            self.a_tilde,
        ];
        v.extend(&self.b_tilde);
        v
    }

    /// Rebuilds handles from a canonical-order slice.
    pub fn from_slice(vars: &[Var], activation: Activation) -> Result<Self> {
        if vars.len() < 9 {
            return Err(Error::InvalidArgument(format!(
                "need at least 9 parameter handles, got {}",
                vars.len()
            )));
        }
        Ok(ParamVars {
            enc_w1: vars[0],
            enc_b1: vars[1],
            enc_w2: vars[2],
            enc_b2: vars[3],
            dec_w1: vars[4],
            dec_b1: vars[5],
            dec_w2: vars[6],
            dec_b2: vars[7],
            a_tilde: vars[8],
            b_tilde: vars[9..].to_vec(),
            activation,
        })
    }

    /// Encodes every column of `x`.
    pub fn encode(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        mlp_batch(tape, self.activation, self.enc_w1, self.enc_b1, self.enc_w2, self.enc_b2, x)
    }

    /// Decodes every column of `z`.
    pub fn decode(&self, tape: &mut Tape, z: Var) -> Result<Var> {
        mlp_batch(tape, self.activation, self.dec_w1, self.dec_b1, self.dec_w2, self.dec_b2, z)
    }

    /// Advances each column of `z` one interval. `inputs[i][j]` is input `i`
    /// applied to column `j`.
    pub fn step(&self, tape: &mut Tape, z: Var, inputs: &[Vec<f64>]) -> Result<Var> {
        if inputs.len() != self.b_tilde.len() {
            return Err(Error::shape("step", (inputs.len(), 0), (self.b_tilde.len(), 0)));
        }
        let mut next = tape.matmul(self.a_tilde, z)?;
        for (b, u) in self.b_tilde.iter().zip(inputs) {
            let bz = tape.matmul(*b, z)?;
            let bzu = tape.scale_columns(bz, u)?;
            next = tape.add(next, bzu)?;
        }
        Ok(next)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedTensor {
    pub name: String,
    pub rows: Vec<Vec<f64>>,
}

/// On-disk model: architecture, training seed, epoch count and every tensor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub schema_version: u32,
    pub arch: Architecture,
    pub seed: u64,
    pub epochs: usize,
    pub tensors: Vec<NamedTensor>,
}

impl Checkpoint {
    pub fn params(&self) -> Result<ModelParams> {
        if self.schema_version != CHECKPOINT_SCHEMA_VERSION {
            return Err(Error::Schema {
                found: self.schema_version,
                expected: CHECKPOINT_SCHEMA_VERSION,
            });
        }
        let template = init_params(0, self.arch)?;
        let names = template.tensor_names();
        let mut tensors = Vec::with_capacity(names.len());
        for name in &names {
            let t = self
                .tensors
                .iter()
                .find(|t| &t.name == name)
                .ok_or_else(|| Error::InvalidArgument(format!("checkpoint lacks tensor {name}")))?;
            tensors.push(matrix_from_rows(&t.rows)?);
        }
        if self.tensors.len() != names.len() {
            return Err(Error::InvalidArgument("checkpoint has unexpected tensors".into()));
        }
        ModelParams::from_tensors(self.arch, tensors)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::gradient_check;
    use nalgebra::dvector;
    use proptest::{prop_assert, prop_assume, proptest};

    fn toy() -> Architecture {
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
        let mut p = init_params(seed, toy()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
        for t in p.tensors_mut() {
            t.apply(|v| *v = rng.random_range(-0.5..0.5));
        }
        p
    }

    #[test]
    fn fresh_model_latent_step_is_identity() {
        let p = init_params(0, toy()).unwrap();
        let z = dvector![0.3, -1.0, 2.0];
        for u in [-0.15, 0.0, 0.7] {
            assert_eq!(p.bilinear_step(&z, &dvector![u]).unwrap(), z);
        }
        let roll = p.rollout_latent(&z, &vec![dvector![0.1]; 4]).unwrap();
        assert_eq!(roll, vec![z.clone(); 4]);
    }

    #[test]
    fn init_is_deterministic_and_bounded() {
        let arch = Architecture {
            input_dim: 64,
            latent_dim: 12,
            encoder_hidden: 128,
            decoder_hidden: 128,
            input_count: 1,
            activation: Activation::Tanh,
        };
        let a = init_params(5, arch).unwrap();
        assert_eq!(a, init_params(5, arch).unwrap());
        assert_ne!(a, init_params(6, arch).unwrap());
        let bound = |fi: usize, fo: usize| (6.0 / (fi + fo) as f64).sqrt();
        assert!(a.enc_w1.amax() <= bound(64, 128));
        assert!(a.enc_w2.amax() <= bound(128, 12));
        assert!(a.dec_w1.amax() <= bound(12, 128));
        assert!(a.dec_w2.amax() <= bound(128, 64));
    }

    #[test]
    fn zero_weights_encode_to_zero() {
        let mut p = init_params(0, toy()).unwrap();
        for t in p.tensors_mut() {
            t.fill(0.0);
        }
        assert_eq!(p.encode(&dvector![1.0, 2.0, 3.0, 4.0]).unwrap(), DVector::zeros(3));
        assert!(p.encode(&dvector![1.0]).is_err());
        assert!(p.decode(&dvector![1.0]).is_err());
    }

    #[test]
    fn bilinear_step_example() {
        let mut p = init_params(0, Architecture { latent_dim: 2, ..toy() }).unwrap();
        p.b_tilde[0] = DMatrix::identity(2, 2);
        assert_eq!(
            p.bilinear_step(&dvector![1.0, 2.0], &dvector![0.5]).unwrap(),
            dvector![1.5, 3.0]
        );
        assert!(p.bilinear_step(&dvector![1.0], &dvector![0.5]).is_err());
        assert!(p.bilinear_step(&dvector![1.0, 2.0], &dvector![0.5, 1.0]).is_err());
    }

    #[test]
    fn zero_input_step_is_drift_only() {
        let p = random_params(1);
        let z = dvector![0.2, -0.4, 0.9];
        assert_eq!(p.bilinear_step(&z, &dvector![0.0]).unwrap(), &p.a_tilde * &z);
    }

    #[test]
    fn predict_lengths() {
        let p = random_params(2);
        let x = dvector![0.1, 0.2, 0.3, 0.4];
        assert!(p.predict(&x, &[]).unwrap().is_empty());
        assert_eq!(p.predict(&x, &vec![dvector![0.1]; 7]).unwrap().len(), 7);
        assert!(p.rollout_latent(&p.encode(&x).unwrap(), &[]).unwrap().is_empty());
    }

    #[test]
    fn encoder_jacobian_matches_finite_differences() {
        let p = random_params(3);
        let x = DMatrix::from_column_slice(4, 1, &[0.3, -0.7, 0.2, 0.9]);
        let tensors: Vec<_> = p.tensors().into_iter().cloned().collect();
        let mut probe = vec![x];
        probe.extend(tensors);
        // Differentiates w.r.t. the input as well as the weights, through a
        // squared distance to a fixed target.
        let err = gradient_check(
            |t, v| {
                let pv = ParamVars::from_slice(&v[1..], Activation::Tanh)?;
                let z = pv.encode(t, v[0])?;
                let w = t.leaf(DMatrix::from_column_slice(3, 1, &[1.0, -2.0, 0.5]));
                let d = t.sub(z, w)?;
                Ok(t.sum_squares(d))
            },
            &probe,
            1e-6,
        )
        .unwrap();
        assert!(err < 1e-5, "{err}");
    }

    #[test]
    fn batch_ops_agree_with_vector_ops() {
        let p = random_params(4);
        let xs: Vec<DVector<f64>> = (0..5)
            .map(|j| DVector::from_fn(4, |i, _| ((i * 7 + j * 3) as f64).sin()))
            .collect();
        let us = [0.1, -0.05, 0.0, 0.12, -0.15];
        let mut tape = Tape::new();
        let pv = p.record(&mut tape);
        let x = tape.leaf(DMatrix::from_columns(&xs));
        let z = pv.encode(&mut tape, x).unwrap();
        let z1 = pv.step(&mut tape, z, &[us.to_vec()]).unwrap();
        let out = pv.decode(&mut tape, z1).unwrap();
        for (j, xj) in xs.iter().enumerate() {
            let pred = p.predict(xj, &[dvector![us[j]]]).unwrap();
            let diff = (&pred[0] - tape.value(out).column(j)).amax();
            assert!(diff < 1e-14, "column {j}: {diff}");
        }
    }

    #[test]
    fn checkpoint_round_trip_is_exact() {
        let p = random_params(5);
        let ck = p.to_checkpoint(5, 17);
        let back: Checkpoint = serde_json::from_str(&ck.to_json().unwrap()).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.params().unwrap(), p);
    }

    #[test]
    fn identity_activation_makes_networks_affine() {
        let mut p = random_params(9);
        p.arch.activation = Activation::Identity;
        let x1 = dvector![0.3, -0.7, 0.2, 0.9];
        let x2 = dvector![-1.1, 0.4, 0.0, 0.5];
        let mid = p.encode(&((&x1 + &x2) * 0.5)).unwrap();
        let avg = (p.encode(&x1).unwrap() + p.encode(&x2).unwrap()) * 0.5;
        assert!((mid - avg).amax() < 1e-14);

        let mut tape = Tape::new();
        let pv = p.record(&mut tape);
        let x = tape.leaf(DMatrix::from_columns(std::slice::from_ref(&x1)));
        let z = pv.encode(&mut tape, x).unwrap();
        assert!((tape.value(z).column(0) - p.encode(&x1).unwrap()).amax() < 1e-14);
    }

    proptest! {
        #[test]
        fn step_is_linear_in_latent(
            a in -2.0f64..2.0, b in -2.0f64..2.0, u in -0.2f64..0.2,
            z1 in proptest::collection::vec(-1.0f64..1.0, 3),
            z2 in proptest::collection::vec(-1.0f64..1.0, 3),
        ) {
            let p = random_params(6);
            let (z1, z2) = (DVector::from_vec(z1), DVector::from_vec(z2));
            let u = dvector![u];
            let lhs = p.bilinear_step(&(&z1 * a + &z2 * b), &u).unwrap();
            let rhs = p.bilinear_step(&z1, &u).unwrap() * a + p.bilinear_step(&z2, &u).unwrap() * b;
            prop_assert!((lhs - rhs).amax() < 1e-12);
        }

        #[test]
        fn step_is_affine_in_input(
            u1 in -0.5f64..0.5, u2 in -0.5f64..0.5, t in 0.0f64..1.0,
            z in proptest::collection::vec(-1.0f64..1.0, 3),
        ) {
            let p = random_params(7);
            let z = DVector::from_vec(z);
            let mix = p.bilinear_step(&z, &dvector![t * u1 + (1.0 - t) * u2]).unwrap();
            let lerp = p.bilinear_step(&z, &dvector![u1]).unwrap() * t
                + p.bilinear_step(&z, &dvector![u2]).unwrap() * (1.0 - t);
            prop_assert!((mix - lerp).amax() < 1e-12);
        }

        #[test]
        fn rollout_composes(split in 0usize..8, us in proptest::collection::vec(-0.15f64..0.15, 8)) {
            let p = random_params(8);
            let controls: Vec<_> = us.iter().map(|&u| dvector![u]).collect();
            let z0 = dvector![0.5, -0.2, 0.8];
            let whole = p.rollout_latent(&z0, &controls).unwrap();
            let mut parts = p.rollout_latent(&z0, &controls[..split]).unwrap();
            let mid = parts.last().cloned().unwrap_or_else(|| z0.clone());
            parts.extend(p.rollout_latent(&mid, &controls[split..]).unwrap());
            for (a, b) in whole.iter().zip(&parts) {
                prop_assert!((a - b).amax() < 1e-12);
            }
        }

        #[test]
        fn euler_step_is_second_order_locally(
            a in proptest::collection::vec(-1.0f64..1.0, 4),
            b in proptest::collection::vec(-1.0f64..1.0, 4),
            u in -0.15f64..0.15,
        ) {
            // With Ã = I + AΔt and B̃ = BΔt the step is one explicit Euler
            // step of ż = (A + Bu)z, whose one-step gap to the exact flow
            // shrinks about four-fold when Δt halves.
            let a = DMatrix::from_row_slice(2, 2, &a);
            let b = DMatrix::from_row_slice(2, 2, &b);
            let z0 = dvector![0.6, -0.4];
            let gap = |dt: f64| {
                let mut p = init_params(0, Architecture::new(2, 2, 2, 2, 1)).unwrap();
                p.a_tilde = DMatrix::identity(2, 2) + &a * dt;
                p.b_tilde = vec![&b * dt];
                let euler = p.bilinear_step(&z0, &dvector![u]).unwrap();
                let exact = ((&a + &b * u) * dt).exp() * &z0;
                (euler - exact).norm()
            };
            let (g1, g2) = (gap(0.01), gap(0.005));
            prop_assume!(g1 > 1e-9);
            let ratio = g1 / g2;
            prop_assert!((3.5..4.5).contains(&ratio), "ratio {ratio}");
        }
    }
}
