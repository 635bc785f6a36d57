//! Physiological features of one beat: amplitude change, a pulse-wave
//! velocity proxy and a heart-rate proxy, all read off the first derivative.

use serde::{Deserialize, Serialize};

use super::BeatRecord;
use crate::error::{Error, Result};

/// Window of the moving-average smoother applied before differentiation.
pub const SMOOTHING_WINDOW: usize = 5;

/// Plausible heart-rate proxy range in beats per minute (exclusive).
pub const HEART_RATE_RANGE: (f64, f64) = (20.0, 250.0);

/// Centered moving average; the window shrinks at the edges.
pub fn moving_average(x: &[f64], window: usize) -> Vec<f64> {
    let half = window / 2;
    let n = x.len();
    (0..n)
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + half + 1).min(n);
            x[lo..hi].iter().sum::<f64>() / (hi - lo) as f64
        })
        .collect()
}

/// Five-point central difference with three-point and one-sided stencils
/// at the edges. `dt` is the sample spacing.
pub fn derivative(x: &[f64], dt: f64) -> Vec<f64> {
    let n = x.len();
    let mut d = vec![0.0; n];
    if n < 2 {
        return d;
    }
    for i in 0..n {
        d[i] = if i >= 2 && i + 2 < n {
            (-x[i + 2] + 8.0 * x[i + 1] - 8.0 * x[i - 1] + x[i - 2]) / (12.0 * dt)
        } else if i >= 1 && i + 1 < n {
            (x[i + 1] - x[i - 1]) / (2.0 * dt)
        } else if i == 0 {
            (x[1] - x[0]) / dt
        } else {
            (x[n - 1] - x[n - 2]) / dt
        };
    }
    d
}

/// Smoothed derivative used for every landmark search.
pub fn smoothed_derivative(x: &[f64], dt: f64) -> Vec<f64> {
    derivative(&moving_average(x, SMOOTHING_WINDOW), dt)
}

/// Landmark positions in fractional sample indices.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Landmarks {
    /// Derivative crosses zero going into descent (systolic peak).
    pub a: f64,
    /// Derivative crosses zero going into ascent (reflection onset).
    pub b: f64,
    /// Derivative trough after `b`.
    pub f: f64,
    /// Derivative peak after `f` (the upstroke that closes the beat).
    pub j: f64,
}

fn crossing(d: &[f64], i: usize) -> f64 {
    // zero of the line through (i, d[i]) and (i+1, d[i+1])
    let (y0, y1) = (d[i], d[i + 1]);
    if y0 == y1 {
        i as f64
    } else {
        i as f64 + y0 / (y0 - y1)
    }
}

fn parabolic(d: &[f64], i: usize) -> f64 {
    if i == 0 || i + 1 >= d.len() {
        return i as f64;
    }
    let (l, c, r) = (d[i - 1], d[i], d[i + 1]);
    let denom = l - 2.0 * c + r;
    if denom == 0.0 {
        i as f64
    } else {
        i as f64 + 0.5 * (l - r) / denom
    }
}

/// Find the four landmarks in order `a < b < f < j` on a derivative trace.
///
/// `a` is the first falling zero crossing, `b` the first rising crossing
/// after it, `f` the deepest point after `b` and `j` the highest point after
/// `f`. Crossings are interpolated linearly, extrema parabolically.
pub fn find_landmarks(d: &[f64]) -> Result<Landmarks> {
    let n = d.len();
    if n < 5 {
        return Err(Error::Feature(format!("beat too short ({n} samples)")));
    }
    let ia = (0..n - 1)
        .find(|&i| d[i] > 0.0 && d[i + 1] <= 0.0)
        .ok_or_else(|| Error::Feature("no falling zero crossing".into()))?;
    let ib = (ia + 1..n - 1)
        .find(|&i| d[i] < 0.0 && d[i + 1] >= 0.0)
        .ok_or_else(|| Error::Feature("no rising zero crossing after systolic peak".into()))?;
    let iff = (ib + 1..n)
        .min_by(|&x, &y| d[x].total_cmp(&d[y]))
        .ok_or_else(|| Error::Feature("no derivative trough".into()))?;
    let ij = (iff + 1..n)
        .max_by(|&x, &y| d[x].total_cmp(&d[y]))
        .ok_or_else(|| Error::Feature("no derivative peak after trough".into()))?;
    if ij + 1 >= n || d[ij] <= 0.0 || d[ij] <= d[ij - 1] || d[ij] <= d[ij + 1] {
        return Err(Error::Feature("derivative peak is not a strict interior maximum".into()));
    }
    if d[iff] >= 0.0 {
        return Err(Error::Feature("derivative trough is not negative".into()));
    }
    let lm = Landmarks {
        a: crossing(d, ia),
        b: crossing(d, ib),
        f: parabolic(d, iff),
        j: parabolic(d, ij),
    };
    if !(lm.a < lm.b && lm.b < lm.f && lm.f < lm.j) {
        return Err(Error::Feature(format!("landmarks out of order: {lm:?}")));
    }
    Ok(lm)
}

/// Features `[u1, u2, u3]` of a single-channel trace sampled every `dt`
/// seconds: amplitude change, `1/(t_F - t_B)` in 1/s and `60/(t_J - t_A)` in
/// beats per minute.
pub fn features_from_trace(x: &[f64], dt: f64) -> Result<[f64; 3]> {
    let smooth = moving_average(x, SMOOTHING_WINDOW);
    let d = derivative(&smooth, dt);
    let lm = find_landmarks(&d)?;
    let hi = smooth.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lo = smooth.iter().cloned().fold(f64::INFINITY, f64::min);
    let u1 = hi - lo;
    let u2 = 1.0 / ((lm.f - lm.b) * dt);
    let u3 = 60.0 / ((lm.j - lm.a) * dt);
    if !(u3 > HEART_RATE_RANGE.0 && u3 < HEART_RATE_RANGE.1) {
        return Err(Error::Feature(format!("heart-rate proxy {u3:.1} bpm out of range")));
    }
    Ok([u1, u2, u3])
}

/// Features of a beat's first channel.
pub fn extract_features(beat: &BeatRecord) -> Result<[f64; 3]> {
    let t = beat.len();
    if t < 2 || !(beat.duration_s > 0.0) {
        return Err(Error::Feature("beat has no duration".into()));
    }
    let dt = beat.duration_s / (t - 1) as f64;
    features_from_trace(&beat.channel(0), dt)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::Origin;

    /// Two-bump beat sampled on `n` points over `duration` seconds, with
    /// the next beat's upstroke at the end.
    fn two_bump(n: usize, duration: f64) -> Vec<f64> {
        let g = |t: f64, c: f64, w: f64| (-(t - c) * (t - c) / (2.0 * w * w)).exp();
        (0..n)
            .map(|i| {
                let s = i as f64 / (n - 1) as f64;
                let _ = duration;
                g(s, 0.08, 0.1) + 0.3 * g(s, 0.5, 0.09) + g(s, 1.12, 0.1)
            })
            .collect()
    }

    fn beat(x: Vec<f64>, duration: f64) -> BeatRecord {
        BeatRecord {
            beat_index: 0,
            channels: 1,
            x,
            duration_s: duration,
            u: [0.0; 3],
            sbp: 0.0,
            dbp: 0.0,
            origin: Origin::Clean,
        }
    }

    #[test]
    fn amplitude_and_timing_separate() {
        let x = two_bump(128, 0.8);
        let u = extract_features(&beat(x.clone(), 0.8)).unwrap();
        let doubled = extract_features(&beat(x.iter().map(|v| 2.0 * v).collect(), 0.8)).unwrap();
        assert!((doubled[0] - 2.0 * u[0]).abs() < 1e-12);
        assert!((doubled[1] - u[1]).abs() < 1e-9 * u[1]);
        assert!((doubled[2] - u[2]).abs() < 1e-9 * u[2]);
    }

    #[test]
    fn offset_invariance() {
        let x = two_bump(128, 0.8);
        let u = extract_features(&beat(x.clone(), 0.8)).unwrap();
        let shifted = extract_features(&beat(x.iter().map(|v| v + 7.5).collect(), 0.8)).unwrap();
        for k in 0..3 {
            assert!((shifted[k] - u[k]).abs() < 1e-9 * u[k].abs().max(1.0));
        }
    }

    #[test]
    fn time_dilation_scales_rates() {
        let x = two_bump(128, 0.8);
        let u = extract_features(&beat(x.clone(), 0.8)).unwrap();
        let s = 1.25;
        let v = extract_features(&beat(x, 0.8 * s)).unwrap();
        assert!((v[0] - u[0]).abs() < 1e-12);
        assert!((v[1] - u[1] / s).abs() < 1e-9 * u[1]);
        assert!((v[2] - u[2] / s).abs() < 1e-9 * u[2]);
    }

    #[test]
    fn reversed_beat_does_not_reproduce_features() {
        let x = two_bump(128, 0.8);
        let u = extract_features(&beat(x.clone(), 0.8)).unwrap();
        let mut r = x;
        r.reverse();
        match extract_features(&beat(r, 0.8)) {
            Ok(v) => assert!(v != u, "reversed beat returned identical features"),
            Err(Error::Feature(_)) => {}
            Err(e) => panic!("unexpected error {e}"),
        }
    }

    #[test]
    fn flat_beat_has_no_landmarks() {
        assert!(matches!(
            extract_features(&beat(vec![1.0; 64], 0.8)),
            Err(Error::Feature(_))
        ));
    }

    #[test]
    fn derivative_is_exact_on_cubics() {
        let dt = 0.01;
        let x: Vec<f64> = (0..20).map(|i| (i as f64 * dt).powi(3)).collect();
        let d = derivative(&x, dt);
        for i in 2..18 {
            let t = i as f64 * dt;
            assert!((d[i] - 3.0 * t * t).abs() < 1e-9);
        }
    }
}
