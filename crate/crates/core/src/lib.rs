//! Promptable generative source separation at desk scale.
//!
//! A mixture is encoded into 25 Hz latents, and a flow-matching transformer
//! transports Gaussian noise to the joint `[target | residual]` latent while
//! conditioned on the mixture and on any combination of text, span and
//! visual prompts. Long clips are handled by multi-diffusion over
//! overlapping windows.
//!
//! Module map:
//!
//! - [`codec`]: exact linear frame codec and the synthetic event generator
//! - [`prompt`], [`span`]: prompt encoders, dummy conditions, dropout
//! - [`dit`], [`params`], [`checkpoint`]: the velocity network and its storage
//! - [`flow`]: losses, ODE sampling, one-shot and long-form separation
//! - [`data`]: mixture synthesis, VAD spans, pseudo-label filtering
//! - [`eval`]: metrics, span-boosted prompting, re-ranking, net win rate
//! - [`train`], [`config`], [`cli`]: training loop and the command surface

pub mod checkpoint;
pub mod cli;
pub mod codec;
pub mod config;
pub mod data;
pub mod dit;
mod error;
pub mod eval;
pub mod flow;
pub mod params;
pub mod prompt;
pub mod span;
pub mod train;

pub use error::{Error, Result};
