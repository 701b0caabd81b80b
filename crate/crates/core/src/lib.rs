//! In-generation detection (IGD) on a toy conditional diffusion model.
//!
//! A small MLP denoiser is trained on a synthetic world of "concepts", each a
//! Gaussian image distribution conditioned by clustered prompt embeddings. The
//! noise it predicts during the first few reverse steps is fed to a second MLP
//! that decides whether the generation is unsafe, and the [`gate`] stops the
//! reverse loop as soon as it says so.
//!
//! Module map:
//! - [`schedule`]: beta schedule, forward corruption, reverse step, step map
//! - [`nn`]: networks, losses, backprop, Adam, checkpoints
//! - [`world`]: concepts, prompts, training pairs, dataset files
//! - [`denoiser`]: the conditional noise predictor and its training loop
//! - [`sampler`]: the shared reverse loop
//! - [`detector`]: feature extraction and the classifier
//! - [`gate`]: gated and unguarded generation
//! - [`eval`]: metrics, ROC and projection export, ablations
//! - [`experiment`]: the reference pipeline tying it all together

pub mod denoiser;
pub mod detector;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod gate;
pub mod io;
pub mod nn;
pub mod par;
pub mod rng;
pub mod sampler;
pub mod schedule;
pub mod world;

pub use error::{Error, Result};
pub use par::Exec;
