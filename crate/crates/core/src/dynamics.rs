//! Control-affine benchmark systems and their zero-order-hold integration.
//!
//! Every system has the form `ẋ = f(x) + Σᵢ gᵢ(x)·uᵢ`. Controls are held
//! constant over each sampling interval, so a trajectory with `N` controls
//! carries `N + 1` states: control `n` acts on `[tₙ, tₙ₊₁)`.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of classical RK4 sub-steps taken inside one sampling interval.
///
/// A single RK4 step at `dt = 0.1` loses about 2% of the pendulum's energy
/// over 2200 samples; ten sub-steps bring that below 1e-6.
pub const RK4_SUBSTEPS: usize = 10;

/// A system `ẋ = f(x) + Σᵢ gᵢ(x)·uᵢ`.
pub trait ControlAffine {
    fn state_dim(&self) -> usize;
    fn input_dim(&self) -> usize;

    /// Drift `f(x)` written into `out`.
    fn drift(&self, x: &[f64], out: &mut [f64]);

    /// Control vector field `gᵢ(x)` written into `out`.
    fn input_field(&self, i: usize, x: &[f64], out: &mut [f64]);

    /// Evaluates `f(x) + Σᵢ gᵢ(x)·uᵢ`.
    fn vector_field(&self, x: &DVector<f64>, u: &DVector<f64>) -> Result<DVector<f64>> {
        check_dims(self, x, u)?;
        let mut out = DVector::zeros(self.state_dim());
        field_into(self, x.as_slice(), u.as_slice(), out.as_mut_slice());
        Ok(out)
    }
}

fn check_dims<S: ControlAffine + ?Sized>(
    system: &S,
    x: &DVector<f64>,
    u: &DVector<f64>,
) -> Result<()> {
    if x.len() != system.state_dim() {
        return Err(Error::InvalidArgument(format!(
            "state has dimension {}, system expects {}",
            x.len(),
            system.state_dim()
        )));
    }
    if u.len() != system.input_dim() {
        return Err(Error::InvalidArgument(format!(
            "input has dimension {}, system expects {}",
            u.len(),
            system.input_dim()
        )));
    }
    Ok(())
}

fn field_into<S: ControlAffine + ?Sized>(system: &S, x: &[f64], u: &[f64], out: &mut [f64]) {
    system.drift(x, out);
    let mut g = vec![0.0; out.len()];
    for (i, &ui) in u.iter().enumerate() {
        system.input_field(i, x, &mut g);
        for (o, gi) in out.iter_mut().zip(&g) {
            *o += gi * ui;
        }
    }
}

/// The three benchmark oscillators. Each has state `[q, q̇]` and a single
/// input entering the acceleration, i.e. `g(x) = [0, 1]ᵀ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "lowercase")]
pub enum Benchmark {
    /// `θ̈ + (g/l)·sin θ = u`
    Pendulum { g: f64, l: f64 },
    /// `ẍ = μ(1 − x²)ẋ − x + u`
    Vanderpol { mu: f64 },
    /// `ẍ = −δẋ − αx − βx³ + u`
    Duffing { alpha: f64, beta: f64, delta: f64 },
}

impl Benchmark {
    pub fn pendulum() -> Self {
        Benchmark::Pendulum { g: 9.8, l: 1.0 }
    }

    pub fn vanderpol() -> Self {
        Benchmark::Vanderpol { mu: 1.0 }
    }

    pub fn duffing() -> Self {
        Benchmark::Duffing {
            alpha: -1.0,
            beta: 1.0,
            delta: 0.02,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Benchmark::Pendulum { .. } => "pendulum",
            Benchmark::Vanderpol { .. } => "vanderpol",
            Benchmark::Duffing { .. } => "duffing",
        }
    }

    /// Looks up a benchmark with default constants. Accepts `vdp` as a short
    /// name for the Van der Pol oscillator.
    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "pendulum" => Ok(Self::pendulum()),
            "vanderpol" | "vdp" => Ok(Self::vanderpol()),
            "duffing" => Ok(Self::duffing()),
            other => Err(Error::InvalidArgument(format!(
                "unknown system '{other}' (expected pendulum, vanderpol or duffing)"
            ))),
        }
    }

    /// Pendulum energy `½θ̇² + (g/l)(1 − cos θ)`; `None` for the other systems.
    pub fn pendulum_energy(&self, x: &DVector<f64>) -> Option<f64> {
        match *self {
            Benchmark::Pendulum { g, l } => {
                Some(0.5 * x[1] * x[1] + (g / l) * (1.0 - x[0].cos()))
            }
            _ => None,
        }
    }
}

impl ControlAffine for Benchmark {
    fn state_dim(&self) -> usize {
        2
    }

    fn input_dim(&self) -> usize {
        1
    }

    fn drift(&self, x: &[f64], out: &mut [f64]) {
        let (q, qd) = (x[0], x[1]);
        out[0] = qd;
        out[1] = match *self {
            Benchmark::Pendulum { g, l } => -(g / l) * q.sin(),
            Benchmark::Vanderpol { mu } => mu * (1.0 - q * q) * qd - q,
            Benchmark::Duffing { alpha, beta, delta } => -delta * qd - alpha * q - beta * q * q * q,
        };
    }

    fn input_field(&self, _i: usize, _x: &[f64], out: &mut [f64]) {
        out[0] = 0.0;
        out[1] = 1.0;
    }
}

/// Sampled state/control record. `controls[n]` is held over
/// `[t0 + n·dt, t0 + (n+1)·dt)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub states: Vec<DVector<f64>>,
    pub controls: Vec<DVector<f64>>,
    pub dt: f64,
    pub t0: f64,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn times(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.states.len()).map(move |n| self.t0 + n as f64 * self.dt)
    }
}

/// One classical fourth-order Runge–Kutta step of size `h`, in place.
fn rk4_classical<S: ControlAffine + ?Sized>(system: &S, x: &mut [f64], u: &[f64], h: f64) {
    let n = x.len();
    let mut k1 = vec![0.0; n];
    let mut k2 = vec![0.0; n];
    let mut k3 = vec![0.0; n];
    let mut k4 = vec![0.0; n];
    let mut tmp = vec![0.0; n];

    field_into(system, x, u, &mut k1);
    for i in 0..n {
        tmp[i] = x[i] + 0.5 * h * k1[i];
    }
    field_into(system, &tmp, u, &mut k2);
    for i in 0..n {
        tmp[i] = x[i] + 0.5 * h * k2[i];
    }
    field_into(system, &tmp, u, &mut k3);
    for i in 0..n {
        tmp[i] = x[i] + h * k3[i];
    }
    field_into(system, &tmp, u, &mut k4);
    for i in 0..n {
        x[i] += (h / 6.0) * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
}

fn advance<S: ControlAffine + ?Sized>(
    system: &S,
    x: &DVector<f64>,
    u: &DVector<f64>,
    dt: f64,
    step: usize,
) -> Result<DVector<f64>> {
    check_dims(system, x, u)?;
    let mut next = x.clone();
    let h = dt / RK4_SUBSTEPS as f64;
    for _ in 0..RK4_SUBSTEPS {
        rk4_classical(system, next.as_mut_slice(), u.as_slice(), h);
    }
    if next.iter().all(|v| v.is_finite()) {
        Ok(next)
    } else {
        Err(Error::NumericOverflow {
            step,
            what: format!("state left the finite range after integrating from {:?}", x.as_slice()),
        })
    }
}

/// Advances `x` across one sampling interval of length `dt` with `u` held
/// constant, using [`RK4_SUBSTEPS`] classical RK4 sub-steps.
pub fn rk4_step<S: ControlAffine + ?Sized>(
    system: &S,
    x: &DVector<f64>,
    u: &DVector<f64>,
    dt: f64,
) -> Result<DVector<f64>> {
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(Error::InvalidArgument(format!("dt must be positive, got {dt}")));
    }
    advance(system, x, u, dt, 0)
}

/// Integrates `system` from `x0` under the zero-order-hold `controls`.
pub fn simulate<S: ControlAffine + ?Sized>(
    system: &S,
    x0: &DVector<f64>,
    controls: &[DVector<f64>],
    dt: f64,
) -> Result<Trajectory> {
    if controls.is_empty() {
        return Err(Error::InvalidArgument("controls must be non-empty".into()));
    }
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(Error::InvalidArgument(format!("dt must be positive, got {dt}")));
    }
    let mut states = Vec::with_capacity(controls.len() + 1);
    states.push(x0.clone());
    for (n, u) in controls.iter().enumerate() {
        let next = advance(system, &states[n], u, dt, n)?;
        states.push(next);
    }
    Ok(Trajectory {
        states,
        controls: controls.to_vec(),
        dt,
        t0: 0.0,
    })
}

/// Number of sample points covering `[0, t_end)` at spacing `dt`.
pub fn sample_count(t_end: f64, dt: f64) -> Result<usize> {
    let n = t_end / dt;
    let rounded = n.round();
    if !(dt > 0.0) || (n - rounded).abs() > 1e-9 * n.max(1.0) || rounded < 1.0 {
        return Err(Error::InvalidArgument(format!(
            "time span {t_end} is not a positive multiple of dt={dt}"
        )));
    }
    Ok(rounded as usize)
}
