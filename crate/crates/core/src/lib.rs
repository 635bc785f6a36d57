//! Personalized beat-to-beat blood-pressure regression with a physics-informed
//! temporal network.
//!
//! The crate is organized bottom-up:
//!
//! - [`autodiff`]: tensors, a define-by-run reverse-mode tape and the FFT.
//! - [`signal`]: CSV ingestion, beat segmentation, physiological features,
//!   the training domain and the minimal-training-criterion split.
//! - [`synth`]: a deterministic generator of bioimpedance-like recordings with
//!   analytically known landmarks and labels.
//! - [`model`]: the temporal network with paired layer norms.
//! - [`losses`]: regression, physics-residual and contrastive terms.
//! - [`adversarial`]: PGD augmentation and the waveform-flip baseline.
//! - [`train`]: the per-subject training loop, inference and Adam.
//! - [`metrics`]: RMSE, Pearson, ME/SDE, AAMI and the paired t-test.

pub mod adversarial;
pub mod autodiff;
pub mod config;
pub mod error;
pub mod gradcheck;
pub mod io;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod signal;
pub mod synth;
pub mod train;

pub use error::{Error, Result};
