//! Generative world model of joint observation-action sequences with a
//! constrained latent-action policy, for offline reinforcement learning at
//! desk scale.
//!
//! The crate is organized around:
//! - [`numerics`]: a small reverse-mode autodiff engine, optimizer and
//!   checkpointing;
//! - [`distributions`]: reparameterized Gaussian / tanh-Gaussian / Beta /
//!   Bernoulli families;
//! - [`dataset`]: trajectory storage, file format and windowed batching;
//! - [`world`]: the recurrent latent-action state-space model and its loss;
//! - [`agent`]: the constrained actor-critic trained on imagined rollouts;
//! - [`env`]: point-mass environments, behavior policies and evaluation;
//! - [`analysis`]: value-overestimation tracking, constraint sweeps and
//!   action-distribution studies;
//! - [`config`] / [`seed`]: run configuration and deterministic seeding.

pub mod error;
pub mod dataset;
pub mod metrics;
pub mod world;
pub mod agent;
pub mod env;
pub mod numerics;
pub mod distributions;
pub mod seed;

pub use error::{ClawError, Result};
