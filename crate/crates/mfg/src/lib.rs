//! Deep policy iteration for finite-horizon mean-field games.
//!
//! The solver represents the equilibrium occupation measure of a
//! finite-horizon mean-field game by a particle ensemble on the time grid
//! `{0, h, ..., T}`. Each outer iteration advances a mini-batch of particles
//! through a one-step random mapping (an Euler-Maruyama move in the interior
//! of the grid, a reset draw from the initial law at the horizon), fits the
//! value network by driving a weak-form martingale residual to zero against
//! an adversarially trained test network, and improves the control network by
//! descending the batch-averaged residual. Linear-quadratic and systemic-risk
//! problem variants come with closed-form ODE references so the learned value
//! and control can be scored quantitatively.
//!
//! Start with [`problem::make_problem`] to build a problem, [`trainer`] to run
//! policy iteration on it, and [`reference`] plus [`metrics`] to score the
//! result. The `examples/` directory contains one runnable walkthrough per
//! capability; the thin `mfg` binary exposes the same flows as the `run`,
//! `reference`, and `evaluate` subcommands.

// Validation guards use negated float comparisons so NaN operands fail them.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod error;
pub mod measure;
pub mod metrics;
pub mod net;
pub mod nn;
pub mod problem;
pub mod reference;
pub mod rng;
pub mod scalar;
pub mod trainer;

pub use error::{MfgError, Result};
pub use scalar::Real;
