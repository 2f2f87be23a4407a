//! Paired-view regularized PPO on a small deterministic tabletop simulator.
//!
//! The crate is organized bottom-up:
//!
//! * [`autodiff`] - reverse-mode tape over dense `f64` tensors, Adam, and a
//!   binary checkpoint codec.
//! * [`policy`] - MLP trunk with Gaussian or categorical action heads plus a
//!   shared value head; closed-form log-prob / entropy / KL.
//! * [`env`] - the tabletop pick-and-place simulator: scene state, functional
//!   step, grid renderer, segmentation masks, and benchmark split tables.
//! * [`views`] - task-preserving and task-altering view constructors used by
//!   the auxiliary KL objectives.
//! * [`ppo`] - rollout collection, GAE, the clipped surrogate plus the two
//!   view-KL objectives, and the training loop.
//! * [`harness`] - evaluation, the OOD scenario suite, and the experiment
//!   drivers behind the CLI.

pub mod autodiff;
pub mod env;
pub mod harness;
pub mod policy;
pub mod ppo;
pub mod rng;
pub mod views;
