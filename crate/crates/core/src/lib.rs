//! Model-based reinforcement learning with probabilistic ensemble dynamics
//! models and trajectory-sampling model-predictive control.
//!
//! The crate is organized around the pipeline an experiment runs through:
//!
//! - [`diffnet`] — a minimal differentiable MLP: forward pass, exact
//!   reverse-mode gradients, Adam, Gaussian/MSE losses, and the bounded
//!   log-variance output head.
//! - [`dynmodel`] — dynamics-model layer: transition datasets, delta-state
//!   targets, angle featurization, input normalization, the D/P/DE/PE model
//!   classes, bootstrap ensemble training, prediction, and diagnostics.
//! - [`propagate`] — uncertainty propagation of an action sequence through a
//!   dynamics model: TS1, TS-inf, expectation, moment matching, distribution
//!   sampling, plus the aleatoric/epistemic decomposition.
//! - [`plan`] — MPC action selection with CEM or random-shooting optimizers.
//! - [`envs`] — analytic benchmark environments (cartpole and pendulum
//!   swing-up), the heteroscedastic sine regression set, and an action-noise
//!   wrapper.
//! - [`harness`] — the trial loop, ablation grids, horizon sweeps, metrics
//!   persistence, and plot exports.

pub mod diffnet;
pub mod dynmodel;
pub mod envs;
pub mod exec;
pub mod fastmath;
pub mod harness;
pub mod plan;
pub mod propagate;
pub mod seeding;

mod error;

pub use error::{Error, Result};
