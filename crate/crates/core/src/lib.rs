//! Koopman bilinear autoencoders for control-affine systems, trained with
//! or without a temporal-consistency loss.
//!
//! The crate covers the full pipeline: benchmark simulation
//! ([`dynamics`]), lifted and optionally noisy datasets ([`datagen`]), a
//! small reverse-mode differentiator ([`autodiff`]), the model
//! ([`model`]), its losses ([`losses`]), training ([`training`]), open-loop
//! evaluation ([`evaluation`]) and experiment configuration ([`config`]).
//! [`oracle`] holds slow reference implementations used by the tests.
//!
//! ```
//! use tcblran::dynamics::{simulate, Benchmark};
//! use nalgebra::dvector;
//!
//! let controls = vec![dvector![0.0]; 10];
//! let traj = simulate(&Benchmark::pendulum(), &dvector![0.8, 0.0], &controls, 0.1).unwrap();
//! assert_eq!(traj.states.len(), 11);
//! ```

// NaN-rejecting guards are written as `!(x > 0.0)` on purpose.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod autodiff;
pub mod config;
pub mod datagen;
pub mod dynamics;
pub mod error;
pub mod evaluation;
mod io;
pub mod losses;
pub mod model;
pub mod oracle;
pub mod training;

pub use error::{Error, Result};
