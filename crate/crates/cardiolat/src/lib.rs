//! Continuous-time latent encoding of single-channel ECG beats.
//!
//! The pipeline: MIT-BIH ingestion ([`wfdb`]) segments labeled beats; a
//! path-regularized latent ODE ([`latent`]) encodes each beat into a
//! 45-dimensional latent vector via an ODE-RNN encoder; SMOTE ([`smote`])
//! balances the five AAMI classes; a gradient-boosted tree ([`gbdt`])
//! classifies the latents; [`metrics`] and [`pipeline`] quantify robustness
//! when the 360 Hz inputs are decimated to 90 Hz and 45 Hz.

pub mod beat;
pub mod error;
pub mod gbdt;
pub mod latent;
pub mod metrics;
pub mod nn;
pub mod ode;
pub mod pipeline;
pub mod smote;
pub mod synth;
pub mod tape;
pub mod wfdb;

pub use beat::{Beat, BeatClass};
pub use error::{Error, Result};
