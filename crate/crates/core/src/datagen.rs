//! Dataset construction: orthonormal lifting, random piecewise-constant
//! excitation, SNR-controlled noise, and the on-disk dataset container.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dynamics::{sample_count, simulate, Benchmark, ControlAffine};
use crate::error::{Error, Result};
use crate::io::{matrix_from_rows, matrix_to_rows, vectors_from_rows, vectors_to_rows};

pub const DATASET_SCHEMA_VERSION: u32 = 1;

/// Embedding `x ↦ Qx` with `Q` a `D×d` matrix of orthonormal columns.
#[derive(Debug, Clone, PartialEq)]
pub struct LiftMap {
    q: DMatrix<f64>,
    seed: u64,
}

impl LiftMap {
    /// The trivial lift `Q = I_d`.
    pub fn identity(d: usize) -> Self {
        LiftMap {
            q: DMatrix::identity(d, d),
            seed: 0,
        }
    }

    pub fn from_matrix(q: DMatrix<f64>, seed: u64) -> Result<Self> {
        if q.nrows() < q.ncols() || q.ncols() == 0 {
            return Err(Error::InvalidArgument(format!(
                "lift matrix must be tall with at least one column, got {}x{}",
                q.nrows(),
                q.ncols()
            )));
        }
        Ok(LiftMap { q, seed })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.q
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn original_dim(&self) -> usize {
        self.q.ncols()
    }

    pub fn lifted_dim(&self) -> usize {
        self.q.nrows()
    }

    pub fn lift(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        if x.len() != self.original_dim() {
            return Err(Error::shape("lift", (x.len(), 1), (self.q.nrows(), self.q.ncols())));
        }
        Ok(&self.q * x)
    }

    pub fn unlift(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        if x.len() != self.lifted_dim() {
            return Err(Error::shape("unlift", (x.len(), 1), (self.q.nrows(), self.q.ncols())));
        }
        Ok(self.q.tr_mul(x))
    }
}

/// Random `D×d` lift from the thin QR factorisation of a seeded Gaussian
/// matrix. Column signs are fixed so that `diag(R) ≥ 0`.
pub fn make_lift(seed: u64, d: usize, lifted_dim: usize) -> Result<LiftMap> {
    if d == 0 || lifted_dim < d {
        return Err(Error::InvalidArgument(format!(
            "lifted dimension {lifted_dim} must be at least the state dimension {d} (> 0)"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gaussian =
        DMatrix::from_fn(lifted_dim, d, |_, _| StandardNormal.sample(&mut rng));
    let qr = gaussian.qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..d {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    LiftMap::from_matrix(q, seed)
}

/// `n_steps` scalar inputs drawn i.i.d. uniform on `[lo, hi]`, one per
/// sampling interval.
pub fn random_piecewise_control(
    seed: u64,
    n_steps: usize,
    lo: f64,
    hi: f64,
) -> Result<Vec<DVector<f64>>> {
    if !(lo <= hi) || !lo.is_finite() || !hi.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "control range [{lo}, {hi}] is empty or not finite"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..n_steps)
        .map(|_| {
            let v: f64 = lo + (hi - lo) * rng.random::<f64>();
            DVector::from_element(1, v)
        })
        .collect())
}

/// Mean squared entry over a whole sequence.
pub fn signal_power(states: &[DVector<f64>]) -> f64 {
    let (sum, count) = states.iter().fold((0.0, 0usize), |(s, c), x| {
        (s + x.norm_squared(), c + x.len())
    });
    sum / count as f64
}

/// Adds i.i.d. Gaussian noise with variance `P_signal / 10^(snr_db/10)`.
pub fn add_noise(states: &[DVector<f64>], snr_db: f64, seed: u64) -> Result<Vec<DVector<f64>>> {
    if states.is_empty() {
        return Err(Error::InvalidArgument("cannot add noise to an empty sequence".into()));
    }
    if !snr_db.is_finite() {
        return Err(Error::InvalidArgument(format!("SNR must be finite, got {snr_db} dB")));
    }
    let power = signal_power(states);
    let sigma = (power / 10f64.powf(snr_db / 10.0)).sqrt();
    let normal = Normal::new(0.0, sigma)
        .map_err(|e| Error::InvalidArgument(format!("noise level: {e}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(states
        .iter()
        .map(|x| x.map(|v| v + normal.sample(&mut rng)))
        .collect())
}

/// True when a loss window of `m + k_m + k_tm` consecutive samples fits in
/// the training portion.
pub fn window_feasible(n_train: usize, m: usize, k_m: usize, k_tm: usize) -> bool {
    n_train >= m + k_m + k_tm
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub snr_db: f64,
    pub seed: u64,
}

/// Parameters of [`build_dataset`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub x0: Vec<f64>,
    pub dt: f64,
    /// Simulated span in seconds; `t_span / dt` samples are stored.
    pub t_span: f64,
    pub lifted_dim: usize,
    pub lift_seed: u64,
    pub control_seed: u64,
    pub control_lo: f64,
    pub control_hi: f64,
    pub noise: Option<NoiseSpec>,
    pub n_train: usize,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            x0: vec![0.8, 0.0],
            dt: 0.1,
            t_span: 220.0,
            lifted_dim: 64,
            lift_seed: 0,
            control_seed: 1,
            control_lo: -0.15,
            control_hi: 0.15,
            noise: None,
            n_train: 32,
        }
    }
}

/// Lifted observations with their controls.
///
/// `lifted` holds one sample per column (`D × N`); it is the lifted clean
/// trajectory plus noise when `noise` is set. `clean_states` stay in the
/// original coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub source: String,
    pub system: Option<Benchmark>,
    pub dt: f64,
    pub lift: LiftMap,
    pub clean_states: Vec<DVector<f64>>,
    pub controls: Vec<DVector<f64>>,
    pub n_train: usize,
    pub control_seed: u64,
    pub noise: Option<NoiseSpec>,
    pub lifted: DMatrix<f64>,
}

impl Dataset {
    /// Assembles a dataset and derives its lifted (and optionally noisy)
    /// observations.
    #[allow(clippy::too_many_arguments)]
    pub fn from_parts(
        source: impl Into<String>,
        system: Option<Benchmark>,
        dt: f64,
        lift: LiftMap,
        clean_states: Vec<DVector<f64>>,
        controls: Vec<DVector<f64>>,
        n_train: usize,
        control_seed: u64,
        noise: Option<NoiseSpec>,
    ) -> Result<Self> {
        if clean_states.len() != controls.len() + 1 {
            return Err(Error::InvalidArgument(format!(
                "{} states need {} controls, got {}",
                clean_states.len(),
                clean_states.len().saturating_sub(1),
                controls.len()
            )));
        }
        if n_train == 0 || n_train > clean_states.len() {
            return Err(Error::Config(format!(
                "n_train={n_train} must be in 1..={}",
                clean_states.len()
            )));
        }
        let lifted: Vec<DVector<f64>> = clean_states
            .iter()
            .map(|x| lift.lift(x))
            .collect::<Result<_>>()?;
        let lifted = match noise {
            Some(spec) => add_noise(&lifted, spec.snr_db, spec.seed)?,
            None => lifted,
        };
        let lifted = DMatrix::from_columns(&lifted);
        Ok(Dataset {
            source: source.into(),
            system,
            dt,
            lift,
            clean_states,
            controls,
            n_train,
            control_seed,
            noise,
            lifted,
        })
    }

    pub fn len(&self) -> usize {
        self.clean_states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clean_states.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.controls.first().map_or(0, |u| u.len())
    }

    /// Controls as an `m × (N−1)` matrix.
    pub fn control_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_columns(&self.controls)
    }

    /// Indices of the evaluation initial conditions: the last `n_ics`
    /// training samples, in order.
    pub fn eval_ic_indices(&self, n_ics: usize) -> Result<Vec<usize>> {
        if n_ics > self.n_train {
            return Err(Error::Config(format!(
                "need {n_ics} evaluation initial conditions but only {} training samples",
                self.n_train
            )));
        }
        Ok((self.n_train - n_ics..self.n_train).collect())
    }

    pub fn to_file(&self) -> DatasetFile {
        DatasetFile {
            schema_version: DATASET_SCHEMA_VERSION,
            source: self.source.clone(),
            system: self.system,
            dt: self.dt,
            n_train: self.n_train,
            lift_seed: self.lift.seed(),
            control_seed: self.control_seed,
            noise: self.noise,
            lift: matrix_to_rows(self.lift.matrix()),
            clean_states: vectors_to_rows(&self.clean_states),
            controls: vectors_to_rows(&self.controls),
        }
    }

    pub fn from_file(file: DatasetFile) -> Result<Self> {
        if file.schema_version != DATASET_SCHEMA_VERSION {
            return Err(Error::Schema {
                found: file.schema_version,
                expected: DATASET_SCHEMA_VERSION,
            });
        }
        let lift = LiftMap::from_matrix(matrix_from_rows(&file.lift)?, file.lift_seed)?;
        Dataset::from_parts(
            file.source,
            file.system,
            file.dt,
            lift,
            vectors_from_rows(&file.clean_states),
            vectors_from_rows(&file.controls),
            file.n_train,
            file.control_seed,
            file.noise,
        )
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_string(&self.to_file())?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Dataset::from_file(serde_json::from_str(&text)?)
    }
}

/// Serialised form of a [`Dataset`]. Noisy observations are regenerated from
/// the clean states and the noise seed on load.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetFile {
    pub schema_version: u32,
    pub source: String,
    pub system: Option<Benchmark>,
    pub dt: f64,
    pub n_train: usize,
    pub lift_seed: u64,
    pub control_seed: u64,
    pub noise: Option<NoiseSpec>,
    pub lift: Vec<Vec<f64>>,
    pub clean_states: Vec<Vec<f64>>,
    pub controls: Vec<Vec<f64>>,
}

/// Simulates `system` from `cfg.x0` under random piecewise-constant
/// excitation, lifts the trajectory, and optionally adds noise.
pub fn build_dataset(system: &Benchmark, cfg: &DatasetConfig) -> Result<Dataset> {
    let n_samples = sample_count(cfg.t_span, cfg.dt)?;
    if n_samples < 2 {
        return Err(Error::Config("dataset needs at least two samples".into()));
    }
    if cfg.x0.len() != system.state_dim() {
        return Err(Error::Config(format!(
            "x0 has {} entries, {} expects {}",
            cfg.x0.len(),
            system.name(),
            system.state_dim()
        )));
    }
    let controls =
        random_piecewise_control(cfg.control_seed, n_samples - 1, cfg.control_lo, cfg.control_hi)?;
    let x0 = DVector::from_column_slice(&cfg.x0);
    let traj = simulate(system, &x0, &controls, cfg.dt)?;
    let lift = make_lift(cfg.lift_seed, system.state_dim(), cfg.lifted_dim)?;
    Dataset::from_parts(
        system.name(),
        Some(*system),
        cfg.dt,
        lift,
        traj.states,
        traj.controls,
        cfg.n_train,
        cfg.control_seed,
        cfg.noise,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dvector;

    #[test]
    fn square_lift_is_orthogonal() {
        let lift = make_lift(3, 2, 2).unwrap();
        let q = lift.matrix();
        let qqt = q * q.transpose();
        assert!((qqt - DMatrix::<f64>::identity(2, 2)).amax() < 1e-10);
    }

    #[test]
    fn tall_lift_has_orthonormal_columns() {
        let lift = make_lift(7, 2, 64).unwrap();
        let qtq = lift.matrix().tr_mul(lift.matrix());
        assert!((qtq - DMatrix::<f64>::identity(2, 2)).amax() < 1e-10);
    }

    #[test]
    fn lift_is_deterministic() {
        assert_eq!(make_lift(11, 2, 64).unwrap(), make_lift(11, 2, 64).unwrap());
        assert_ne!(make_lift(11, 2, 64).unwrap(), make_lift(12, 2, 64).unwrap());
    }

    #[test]
    fn lift_rejects_short_target() {
        assert!(make_lift(0, 3, 2).is_err());
        let lift = make_lift(0, 2, 8).unwrap();
        assert!(lift.lift(&dvector![1.0]).is_err());
        assert!(lift.unlift(&dvector![1.0, 2.0]).is_err());
    }

    #[test]
    fn zero_state_round_trip() {
        let lift = make_lift(1, 2, 64).unwrap();
        let up = lift.lift(&dvector![0.0, 0.0]).unwrap();
        assert_eq!(up, DVector::zeros(64));
        assert_eq!(lift.unlift(&up).unwrap(), dvector![0.0, 0.0]);
    }

    #[test]
    fn controls_bounds_and_determinism() {
        let zero = random_piecewise_control(5, 10, 0.0, 0.0).unwrap();
        assert!(zero.iter().all(|u| u[0] == 0.0));
        let a = random_piecewise_control(5, 5000, -0.15, 0.15).unwrap();
        assert!(a.iter().all(|u| (-0.15..=0.15).contains(&u[0])));
        let mean = a.iter().map(|u| u[0]).sum::<f64>() / a.len() as f64;
        assert!(mean.abs() < 0.01, "mean {mean}");
        assert_eq!(a, random_piecewise_control(5, 5000, -0.15, 0.15).unwrap());
        assert!(random_piecewise_control(5, 3, 0.2, 0.1).is_err());
    }

    #[test]
    fn noise_requires_input() {
        assert!(add_noise(&[], 20.0, 0).is_err());
        assert!(add_noise(&[dvector![1.0]], f64::INFINITY, 0).is_err());
    }

    #[test]
    fn feasibility_boundary() {
        assert!(!window_feasible(32, 32, 12, 2));
        assert!(window_feasible(46, 32, 12, 2));
        assert!(!window_feasible(45, 32, 12, 2));
    }

    #[test]
    fn dataset_shapes_and_ics() {
        let cfg = DatasetConfig {
            t_span: 10.0,
            n_train: 40,
            ..DatasetConfig::default()
        };
        let ds = build_dataset(&Benchmark::pendulum(), &cfg).unwrap();
        assert_eq!(ds.len(), 100);
        assert_eq!(ds.controls.len(), 99);
        assert_eq!(ds.lifted.shape(), (64, 100));
        assert_eq!(ds.eval_ic_indices(30).unwrap(), (10..40).collect::<Vec<_>>());
        assert!(ds.eval_ic_indices(41).is_err());
        assert_eq!(ds.clean_states[0], dvector![0.8, 0.0]);
    }

    #[test]
    fn noisy_variant_differs_only_by_noise() {
        let clean_cfg = DatasetConfig {
            t_span: 20.0,
            ..DatasetConfig::default()
        };
        let noisy_cfg = DatasetConfig {
            noise: Some(NoiseSpec { snr_db: 20.0, seed: 9 }),
            ..clean_cfg.clone()
        };
        let clean = build_dataset(&Benchmark::pendulum(), &clean_cfg).unwrap();
        let noisy = build_dataset(&Benchmark::pendulum(), &noisy_cfg).unwrap();
        assert_eq!(clean.clean_states, noisy.clean_states);
        assert_eq!(clean.controls, noisy.controls);
        let cols: Vec<_> = clean.lifted.column_iter().map(|c| c.into_owned()).collect();
        let expected = DMatrix::from_columns(&add_noise(&cols, 20.0, 9).unwrap());
        assert_eq!(noisy.lifted, expected);
    }

    #[test]
    fn dataset_json_round_trip_is_exact() {
        let cfg = DatasetConfig {
            t_span: 5.0,
            noise: Some(NoiseSpec { snr_db: 20.0, seed: 4 }),
            ..DatasetConfig::default()
        };
        let ds = build_dataset(&Benchmark::duffing(), &cfg).unwrap();
        let text = serde_json::to_string(&ds.to_file()).unwrap();
        let back = Dataset::from_file(serde_json::from_str(&text).unwrap()).unwrap();
        assert_eq!(back, ds);
    }
}
