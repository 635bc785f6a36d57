//! Beat segmentation.
//!
//! Beats are delimited just ahead of each systolic peak, which is the foot
//! of the inverted waveform. Upstrokes are the prominent maxima of the
//! smoothed derivative; the peak is the falling zero crossing that follows.
//! A beat therefore runs from one systolic peak to the next and closes with
//! the upstroke of the following pulse.

use log::warn;

use super::features::{smoothed_derivative, HEART_RATE_RANGE};
use super::{BeatRecord, Origin, RawRecording};

/// Fraction of the 99th derivative percentile an upstroke must exceed.
const UPSTROKE_THRESHOLD: f64 = 0.6;

/// Result of segmenting one recording.
#[derive(Clone, Debug)]
pub struct Segmentation {
    /// Beats that passed the heart-rate gate, with features unfilled.
    pub beats: Vec<BeatRecord>,
    /// Number of delimited windows, including rejected ones. Beat indices
    /// refer to this enumeration.
    pub windows: usize,
}

/// Sample index range `[start, end)` of each delimited beat in `x`.
pub fn beat_windows(x: &[f64], sample_rate_hz: f64) -> Vec<(usize, usize)> {
    let n = x.len();
    if n < 8 {
        return Vec::new();
    }
    let d = smoothed_derivative(x, 1.0 / sample_rate_hz);
    let mut sorted = d.clone();
    sorted.sort_by(f64::total_cmp);
    let p99 = sorted[((n - 1) as f64 * 0.99).round() as usize];
    let scale = sorted[n - 1].abs().max(sorted[0].abs());
    if p99 <= 1e-9 * scale.max(f64::MIN_POSITIVE) || p99 <= 0.0 {
        return Vec::new();
    }
    let threshold = UPSTROKE_THRESHOLD * p99;
    let refractory = (sample_rate_hz * 60.0 / HEART_RATE_RANGE.1).ceil() as usize;

    let mut upstrokes: Vec<usize> = Vec::new();
    for i in 1..n - 1 {
        if d[i] > threshold && d[i] >= d[i - 1] && d[i] > d[i + 1] {
            match upstrokes.last_mut() {
                Some(last) if i - *last < refractory => {
                    if d[i] > d[*last] {
                        *last = i;
                    }
                }
                _ => upstrokes.push(i),
            }
        }
    }

    let mut bounds = Vec::with_capacity(upstrokes.len());
    for &j in &upstrokes {
        let Some(peak) = (j..n - 1).find(|&i| d[i] > 0.0 && d[i + 1] <= 0.0) else {
            continue;
        };
        let lead = ((peak - j) / 4).max(1);
        if peak >= lead {
            bounds.push(peak - lead);
        }
    }
    bounds.dedup();
    bounds.windows(2).map(|w| (w[0], w[1])).collect()
}

/// Linear resampling of `x[i*channels + c]` over `[start, end)` onto `len`
/// points per channel.
pub fn resample(x: &[f64], channels: usize, start: usize, end: usize, len: usize) -> Vec<f64> {
    let n = end - start;
    let mut out = Vec::with_capacity(len * channels);
    for j in 0..len {
        let pos = if len == 1 {
            0.0
        } else {
            j as f64 * (n - 1) as f64 / (len - 1) as f64
        };
        let i0 = (pos.floor() as usize).min(n - 1);
        let i1 = (i0 + 1).min(n - 1);
        let frac = pos - i0 as f64;
        for c in 0..channels {
            let a = x[(start + i0) * channels + c];
            let b = x[(start + i1) * channels + c];
            out.push(a + (b - a) * frac);
        }
    }
    out
}

/// Split a recording into fixed-length beats. Features and labels are left
/// at zero.
pub fn segment_beats(rec: &RawRecording, fixed_len: usize) -> Segmentation {
    let lead = rec.channel(0);
    let windows = beat_windows(&lead, rec.sample_rate_hz);
    if windows.is_empty() {
        warn!("{}: no beats detected", rec.subject_id);
    }
    let mut beats = Vec::with_capacity(windows.len());
    for (k, &(s, e)) in windows.iter().enumerate() {
        let duration_s = (e - s - 1) as f64 / rec.sample_rate_hz;
        let rate = 60.0 / duration_s;
        if !(rate > HEART_RATE_RANGE.0 && rate < HEART_RATE_RANGE.1) {
            warn!(
                "{}: beat {k} rejected, implausible rate {rate:.1} bpm",
                rec.subject_id
            );
            continue;
        }
        beats.push(BeatRecord {
            beat_index: k,
            channels: rec.channels,
            x: resample(&rec.samples, rec.channels, s, e, fixed_len),
            duration_s,
            u: [0.0; 3],
            sbp: 0.0,
            dbp: 0.0,
            origin: Origin::Clean,
        });
    }
    Segmentation {
        beats,
        windows: windows.len(),
    }
}
