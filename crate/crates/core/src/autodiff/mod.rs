//! Tensor values, a reverse-mode tape and the FFT used for period detection.

mod fft;
mod graph;
mod tensor;

pub use fft::{fft_in_place, rfft_amplitude};
pub use graph::{Gradients, Graph, NodeId};
pub use tensor::Tensor;

/// Epsilon added to the variance in every layer norm.
pub const LAYER_NORM_EPS: f64 = 1e-5;
