use log::debug;
use serde::{Deserialize, Serialize};

use crate::autodiff::{rfft_amplitude, Tensor};
use crate::error::{Error, Result};

/// Dominant frequency of a block input and the matching fold geometry.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PeriodInfo {
    /// Channel-averaged amplitude per frequency bin.
    pub amplitudes: Vec<f64>,
    /// Cycles over the sequence; the fold's column count.
    pub freq: usize,
    /// `ceil(T / freq)`; the fold's row count.
    pub period: usize,
}

impl PeriodInfo {
    pub fn padded_len(&self) -> usize {
        self.freq * self.period
    }
}

/// Argmax of the channel-averaged spectrum over bins `1..=T/2`. An input
/// without any non-DC energy falls back to `freq = 1`.
pub fn detect_period(x: &Tensor) -> Result<PeriodInfo> {
    let t = x.shape().first().copied().unwrap_or(0);
    if t < 4 {
        return Err(Error::Input(format!("period detection needs T >= 4, got {t}")));
    }
    let amp = rfft_amplitude(x)?;
    let (bins, d) = amp.rows_cols();
    let amplitudes: Vec<f64> = (0..bins)
        .map(|k| amp.data()[k * d..(k + 1) * d].iter().sum::<f64>() / d as f64)
        .collect();
    let mut freq = 1;
    for k in 2..=t / 2 {
        if amplitudes[k] > amplitudes[freq] {
            freq = k;
        }
    }
    let total: f64 = amplitudes.iter().sum();
    if amplitudes[freq] <= 1e-12 * total || total == 0.0 {
        debug!("no periodic component; folding as a single cycle");
        freq = 1;
    }
    Ok(PeriodInfo { amplitudes, freq, period: t.div_ceil(freq) })
}

/// Zero-pad `x[T×d]` to `p·f` rows and lay it out as `[p, f, d]`, row-major
/// in time: step `t` lands at `(t / f, t % f)`.
pub fn fold(x: &Tensor, period: usize, freq: usize) -> Result<Tensor> {
    let (t, d) = x.rows_cols();
    if period * freq < t {
        return Err(Error::shape("fold", format!("{period}x{freq} cannot hold {t} steps")));
    }
    let mut data = x.data().to_vec();
    data.resize(period * freq * d, 0.0);
    Tensor::new(vec![period, freq, d], data)
}

/// Inverse of [`fold`]: flatten `[p, f, d]` back to time and keep `t` steps.
pub fn unfold(grid: &Tensor, t: usize) -> Result<Tensor> {
    let s = grid.shape();
    if s.len() != 3 || s[0] * s[1] < t {
        return Err(Error::shape("unfold", format!("{s:?} to {t} steps")));
    }
    let d = s[2];
    Tensor::new(vec![t, d], grid.data()[..t * d].to_vec())
}
