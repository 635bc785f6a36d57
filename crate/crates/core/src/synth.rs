//! Synthetic bioimpedance-like recordings with known landmarks.
//!
//! Each pulse is the sum of a systolic and a reflected asymmetric Gaussian
//! bump. Landmark fractions position the bumps so that the derivative
//! landmarks fall near `a, b, f, j` of the nominal period; the exact
//! landmark times, features and labels are then read off the analytic
//! derivative. Amplitude, period and reflection timing drift sinusoidally
//! from beat to beat.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal::{
    BeatLabel, BeatRecord, Origin, RawRecording, DEFAULT_FIXED_LEN, HEART_RATE_RANGE,
};

/// Landmark positions as fractions of the nominal period, measured from the
/// pulse onset. `j` refers to the upstroke of the following pulse.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LandmarkFractions {
    pub a: f64,
    pub b: f64,
    pub f: f64,
    pub j: f64,
}

impl Default for LandmarkFractions {
    fn default() -> Self {
        Self { a: 0.12, b: 0.38, f: 0.58, j: 0.98 }
    }
}

/// `intercept + coef·(u - reference) + interaction·(u1 - r1)(u3 - r3)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PressureMap {
    pub intercept: f64,
    pub coef: [f64; 3],
    #[serde(default)]
    pub interaction: f64,
}

impl PressureMap {
    pub fn eval(&self, u: &[f64; 3], reference: &[f64; 3]) -> f64 {
        let d: Vec<f64> = (0..3).map(|i| u[i] - reference[i]).collect();
        self.intercept
            + (0..3).map(|i| self.coef[i] * d[i]).sum::<f64>()
            + self.interaction * d[0] * d[2]
    }
}

/// Mapping from features to systolic and diastolic pressure.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BpMap {
    pub reference: [f64; 3],
    pub sbp: PressureMap,
    pub dbp: PressureMap,
}

impl Default for BpMap {
    fn default() -> Self {
        Self {
            reference: [1.0, 6.0, 87.0],
            sbp: PressureMap { intercept: 120.0, coef: [40.0, 3.0, 0.6], interaction: 0.05 },
            dbp: PressureMap { intercept: 75.0, coef: [25.0, 2.0, 0.4], interaction: 0.03 },
        }
    }
}

impl BpMap {
    pub fn eval(&self, u: &[f64; 3]) -> (f64, f64) {
        (self.sbp.eval(u, &self.reference), self.dbp.eval(u, &self.reference))
    }

    /// Same map without the interaction terms.
    pub fn affine(mut self) -> Self {
        self.sbp.interaction = 0.0;
        self.dbp.interaction = 0.0;
        self
    }
}

/// Slow sinusoidal modulation across beats. `rate` is in cycles per beat;
/// zero disables drift.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Drift {
    pub rate: f64,
    /// Relative period swing.
    pub period_depth: f64,
    /// Relative swing of the reflection timing.
    pub shape_depth: f64,
}

impl Default for Drift {
    fn default() -> Self {
        Self { rate: 0.01, period_depth: 0.08, shape_depth: 0.08 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub subject_id: String,
    pub n_beats: usize,
    pub sample_rate_hz: f64,
    pub base_period_s: f64,
    /// Systolic amplitude swings across this range.
    pub amplitude_range: [f64; 2],
    /// Reflection amplitude relative to the systolic bump.
    pub reflection_ratio: f64,
    pub landmarks: LandmarkFractions,
    pub bp_map: BpMap,
    pub noise_std: f64,
    pub drift: Drift,
    pub fixed_len: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            subject_id: "synth".into(),
            n_beats: 500,
            sample_rate_hz: 500.0,
            base_period_s: 0.8,
            amplitude_range: [0.85, 1.15],
            reflection_ratio: 0.3,
            landmarks: LandmarkFractions::default(),
            bp_map: BpMap::default(),
            noise_std: 0.003,
            drift: Drift::default(),
            fixed_len: DEFAULT_FIXED_LEN,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let l = &self.landmarks;
        if !(0.0 < l.a && l.a < l.b && l.b < l.f && l.f < l.j && l.j < 1.0) {
            return Err(Error::Config(format!(
                "landmark fractions must satisfy 0 < a < b < f < j < 1, got {l:?}"
            )));
        }
        if self.n_beats == 0 {
            return Err(Error::Config("n_beats must be at least 1".into()));
        }
        if !(self.sample_rate_hz > 0.0) || !(self.base_period_s > 0.0) {
            return Err(Error::Config("sample rate and period must be positive".into()));
        }
        let [lo, hi] = self.amplitude_range;
        if !(0.0 < lo && lo <= hi) {
            return Err(Error::Config(format!("bad amplitude range [{lo}, {hi}]")));
        }
        if !(0.0 < self.reflection_ratio && self.reflection_ratio < 1.0) {
            return Err(Error::Config("reflection_ratio must lie in (0, 1)".into()));
        }
        if !(self.noise_std >= 0.0) {
            return Err(Error::Config("noise_std must be non-negative".into()));
        }
        let d = &self.drift;
        if !(d.rate >= 0.0 && (0.0..0.5).contains(&d.period_depth) && (0.0..0.5).contains(&d.shape_depth))
        {
            return Err(Error::Config(format!("bad drift specification {d:?}")));
        }
        if l.f * (1.0 + d.shape_depth) >= l.j {
            return Err(Error::Config("reflection drift overruns the next upstroke".into()));
        }
        if self.fixed_len < 8 {
            return Err(Error::Config("fixed_len must be at least 8".into()));
        }
        let p_lo = self.base_period_s * (1.0 - d.period_depth);
        let p_hi = self.base_period_s * (1.0 + d.period_depth);
        for p in [p_lo, p_hi] {
            let rate = 60.0 / ((l.j - l.a) * p);
            if !(rate > HEART_RATE_RANGE.0 && rate < HEART_RATE_RANGE.1) {
                return Err(Error::Config(format!(
                    "period {p:.3} s gives an implausible rate of {rate:.1} bpm"
                )));
            }
        }
        self.check_pressure_order(p_lo, p_hi)
    }

    /// SBP > DBP over a box that encloses every reachable feature vector.
    /// The difference is bilinear, so checking the corners suffices.
    fn check_pressure_order(&self, p_lo: f64, p_hi: f64) -> Result<()> {
        let l = &self.landmarks;
        let [a_lo, a_hi] = self.amplitude_range;
        let s = self.drift.shape_depth;
        let u1 = [0.5 * a_lo, 1.5 * a_hi];
        let u2 = [
            0.5 / ((l.f - l.b) * p_hi * (1.0 + s)),
            2.0 / ((l.f - l.b) * p_lo * (1.0 - s)),
        ];
        let u3 = [HEART_RATE_RANGE.0, HEART_RATE_RANGE.1];
        for &x in &u1 {
            for &y in &u2 {
                for &z in &u3 {
                    let (sbp, dbp) = self.bp_map.eval(&[x, y, z]);
                    if sbp <= dbp {
                        return Err(Error::Config(format!(
                            "bp_map gives SBP {sbp:.1} <= DBP {dbp:.1} at u = [{x:.3}, {y:.3}, {z:.1}]"
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}

/// Gaussian bump with separate rise and fall widths.
#[derive(Clone, Copy, Debug)]
struct Bump {
    center: f64,
    rise: f64,
    fall: f64,
    amp: f64,
}

impl Bump {
    fn z(&self, t: f64) -> (f64, f64) {
        let w = if t < self.center { self.rise } else { self.fall };
        ((t - self.center) / w, w)
    }

    fn value(&self, t: f64) -> f64 {
        let (z, _) = self.z(t);
        self.amp * (-0.5 * z * z).exp()
    }

    fn d1(&self, t: f64) -> f64 {
        let (z, w) = self.z(t);
        -self.amp * z / w * (-0.5 * z * z).exp()
    }

    fn d2(&self, t: f64) -> f64 {
        let (z, w) = self.z(t);
        self.amp / (w * w) * (z * z - 1.0) * (-0.5 * z * z).exp()
    }
}

/// One pulse: onset, period and its two bumps.
#[derive(Clone, Copy, Debug)]
struct Pulse {
    period: f64,
    systolic: Bump,
    reflection: Bump,
}

/// Analytic waveform: a train of pulses.
struct Waveform {
    pulses: Vec<Pulse>,
}

impl Waveform {
    fn near(&self, t: f64) -> impl Iterator<Item = &Bump> {
        // only neighbouring pulses contribute at f64 precision
        let k = self.pulses.partition_point(|p| p.systolic.center < t);
        let lo = k.saturating_sub(3);
        let hi = (k + 3).min(self.pulses.len());
        self.pulses[lo..hi]
            .iter()
            .flat_map(|p| [&p.systolic, &p.reflection])
    }

    fn value(&self, t: f64) -> f64 {
        self.near(t).map(|b| b.value(t)).sum()
    }

    fn d1(&self, t: f64) -> f64 {
        self.near(t).map(|b| b.d1(t)).sum()
    }

    fn d2(&self, t: f64) -> f64 {
        self.near(t).map(|b| b.d2(t)).sum()
    }
}

/// Root of `g` in `[lo, hi]` where `g` changes sign.
fn bisect(g: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
    let glo = g(lo);
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if (g(mid) > 0.0) == (glo > 0.0) {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-13 {
            break;
        }
    }
    0.5 * (lo + hi)
}

/// Exact landmark times of one beat, in seconds from the recording start.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BeatTruth {
    pub upstroke: f64,
    pub a: f64,
    pub b: f64,
    pub f: f64,
    pub j: f64,
    /// Window handed to the resampler, matching the segmentation rule.
    pub window: (f64, f64),
    pub u: [f64; 3],
}

/// Output of [`generate`].
#[derive(Clone, Debug)]
pub struct SynthOutput {
    pub recording: RawRecording,
    /// Noiseless beats over the exact windows with analytic features and
    /// labels.
    pub beats: Vec<BeatRecord>,
    pub truth: Vec<BeatTruth>,
}

fn modulation(rate: f64, mult: f64, phase: f64, k: usize) -> f64 {
    if rate == 0.0 {
        0.0
    } else {
        (2.0 * PI * rate * mult * k as f64 + phase).sin()
    }
}

fn build_pulses(cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> Vec<Pulse> {
    let l = cfg.landmarks;
    let d = cfg.drift;
    let phases: [f64; 3] = [rng.gen(), rng.gen(), rng.gen()].map(|x: f64| 2.0 * PI * x);
    let [a_lo, a_hi] = cfg.amplitude_range;
    let (a_mid, a_half) = (0.5 * (a_lo + a_hi), 0.5 * (a_hi - a_lo));
    let mut onset = 0.25 * cfg.base_period_s;
    let mut pulses = Vec::with_capacity(cfg.n_beats + 1);
    for k in 0..=cfg.n_beats {
        let amp = a_mid + a_half * modulation(d.rate, 1.0, phases[0], k);
        let p = cfg.base_period_s * (1.0 + d.period_depth * modulation(d.rate, 1.37, phases[1], k));
        let s = 1.0 + d.shape_depth * modulation(d.rate, 0.71, phases[2], k);
        let c2 = s * 0.5 * (l.b + l.f) * p;
        let systolic = Bump {
            center: onset + l.a * p,
            rise: (1.0 + l.a - l.j) * p,
            fall: 0.5 * (l.b - l.a) * p,
            amp,
        };
        let reflection = Bump {
            center: onset + c2,
            rise: 0.8 * (c2 - s * l.b * p),
            fall: s * l.f * p - c2,
            amp: cfg.reflection_ratio * amp,
        };
        pulses.push(Pulse { period: p, systolic, reflection });
        onset += p;
    }
    pulses
}

/// Landmarks of the beat spanning pulses `k` and `k + 1`.
fn beat_truth(w: &Waveform, k: usize) -> Result<BeatTruth> {
    let this = &w.pulses[k];
    let next = &w.pulses[k + 1];
    let h = this.period / 4000.0;
    let d1 = |t: f64| w.d1(t);
    let d2 = |t: f64| w.d2(t);
    let grid = |lo: f64, hi: f64| {
        let n = ((hi - lo) / h).ceil() as usize;
        (0..=n).map(move |i| (lo + i as f64 * h).min(hi))
    };
    let missing = |what: &str| Error::Feature(format!("synthetic beat {k}: no {what}"));

    let upstroke_of = |p: &Pulse| {
        let c = p.systolic.center;
        let t0 = grid(c - 2.0 * p.systolic.rise, c)
            .max_by(|&x, &y| d1(x).total_cmp(&d1(y)))
            .unwrap();
        bisect(d2, t0 - h, t0 + h)
    };
    let up = upstroke_of(this);
    let up_next = upstroke_of(next);
    let peak_next = next.systolic.center;

    let mut ta = None;
    let mut prev = up;
    for t in grid(up, peak_next).skip(1) {
        if d1(prev) > 0.0 && d1(t) <= 0.0 {
            ta = Some(bisect(d1, prev, t));
            break;
        }
        prev = t;
    }
    let ta = ta.ok_or_else(|| missing("falling crossing"))?;
    let mut tb = None;
    let mut prev = ta + h;
    for t in grid(ta + h, peak_next).skip(1) {
        if d1(prev) < 0.0 && d1(t) >= 0.0 {
            tb = Some(bisect(d1, prev, t));
            break;
        }
        prev = t;
    }
    let tb = tb.ok_or_else(|| missing("rising crossing"))?;
    let f0 = grid(tb, peak_next)
        .min_by(|&x, &y| d1(x).total_cmp(&d1(y)))
        .unwrap();
    let tf = bisect(d2, f0 - h, f0 + h);
    let tj = up_next;
    if !(ta < tb && tb < tf && tf < tj) {
        return Err(Error::Feature(format!("synthetic beat {k}: landmarks out of order")));
    }

    let lead_of = |peak: f64, upstroke: f64| 0.25 * (peak - upstroke);
    let window = (ta - lead_of(ta, up), peak_next - lead_of(peak_next, up_next));
    let lowest = grid(ta, tj)
        .map(|t| w.value(t))
        .fold(f64::INFINITY, f64::min);
    let u = [
        w.value(ta) - lowest,
        1.0 / (tf - tb),
        60.0 / (tj - ta),
    ];
    Ok(BeatTruth { upstroke: up, a: ta, b: tb, f: tf, j: tj, window, u })
}

/// Generate a recording of `n_beats` complete beats (`n_beats + 1` pulses)
/// together with the exact features and labels of every beat.
pub fn generate(cfg: &SynthConfig) -> Result<SynthOutput> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let w = Waveform { pulses: build_pulses(cfg, &mut rng) };

    let mut truth = Vec::with_capacity(cfg.n_beats);
    let mut beats = Vec::with_capacity(cfg.n_beats);
    let mut labels = Vec::with_capacity(cfg.n_beats);
    for k in 0..cfg.n_beats {
        let t = beat_truth(&w, k)?;
        let (sbp, dbp) = cfg.bp_map.eval(&t.u);
        if sbp <= dbp {
            return Err(Error::Config(format!("bp_map gives SBP <= DBP on beat {k}")));
        }
        let (s, e) = t.window;
        let n = cfg.fixed_len;
        let x = (0..n)
            .map(|i| w.value(s + (e - s) * i as f64 / (n - 1) as f64))
            .collect();
        beats.push(BeatRecord {
            beat_index: k,
            channels: 1,
            x,
            duration_s: e - s,
            u: t.u,
            sbp,
            dbp,
            origin: Origin::Clean,
        });
        labels.push(BeatLabel { beat_index: k, sbp, dbp });
        truth.push(t);
    }

    let last = w.pulses.last().unwrap();
    let l = cfg.landmarks;
    let end = last.systolic.center + 0.5 * (l.b - l.a) * last.period;
    let n_samples = (end * cfg.sample_rate_hz).floor() as usize + 1;
    let noise = Normal::new(0.0, cfg.noise_std).map_err(|e| Error::Config(e.to_string()))?;
    let samples = (0..n_samples)
        .map(|i| {
            let v = w.value(i as f64 / cfg.sample_rate_hz);
            if cfg.noise_std > 0.0 {
                v + noise.sample(&mut rng)
            } else {
                v
            }
        })
        .collect();
    let recording = RawRecording::new(cfg.subject_id.clone(), cfg.sample_rate_hz, 1, samples, labels)?;
    Ok(SynthOutput { recording, beats, truth })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::{extract_features, prepare_recording};

    fn quiet(n: usize) -> SynthConfig {
        SynthConfig {
            n_beats: n,
            noise_std: 0.0,
            drift: Drift { rate: 0.0, ..Drift::default() },
            ..SynthConfig::default()
        }
    }

    #[test]
    fn analytic_derivative_matches_differences() {
        let cfg = SynthConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let w = Waveform { pulses: build_pulses(&cfg, &mut rng) };
        let h = 1e-6;
        for i in 1..200 {
            let t = i as f64 * 0.013;
            let fd = (w.value(t + h) - w.value(t - h)) / (2.0 * h);
            assert!((fd - w.d1(t)).abs() < 1e-6, "t={t}");
            let fd2 = (w.d1(t + h) - w.d1(t - h)) / (2.0 * h);
            assert!((fd2 - w.d2(t)).abs() < 1e-4 * w.d2(t).abs().max(1.0), "t={t}");
        }
    }

    #[test]
    fn quiet_beats_are_identical_and_recovered() {
        let cfg = quiet(12);
        let out = generate(&cfg).unwrap();
        let prepared = prepare_recording(&out.recording, cfg.fixed_len).unwrap();
        assert_eq!(prepared.windows, 12);
        assert_eq!(prepared.beats.len(), 12);
        let first = &prepared.beats[0];
        for b in &prepared.beats {
            for (p, q) in b.x.iter().zip(&first.x) {
                assert!((p - q).abs() < 1e-6);
            }
        }
        for (b, t) in prepared.beats.iter().zip(&out.truth) {
            let dt = b.duration_s / (cfg.fixed_len - 1) as f64;
            let span_f_b = 1.0 / b.u[1];
            let span_j_a = 60.0 / b.u[2];
            assert!((span_f_b - (t.f - t.b)).abs() <= 2.0 * dt, "{span_f_b} vs {}", t.f - t.b);
            assert!((span_j_a - (t.j - t.a)).abs() <= 2.0 * dt, "{span_j_a} vs {}", t.j - t.a);
            assert!((b.u[0] - t.u[0]).abs() <= 0.01 * t.u[0]);
        }
    }

    #[test]
    fn landmark_spacing_of_three_quarters_second_is_eighty_bpm() {
        let l = LandmarkFractions::default();
        let cfg = SynthConfig { base_period_s: 0.75 / (l.j - l.a), ..quiet(4) };
        let out = generate(&cfg).unwrap();
        for t in &out.truth {
            assert!((t.j - t.a - 0.75).abs() < 1e-4);
            assert!((t.u[2] - 80.0).abs() < 0.01);
        }
        let prepared = prepare_recording(&out.recording, cfg.fixed_len).unwrap();
        for b in &prepared.beats {
            let dt = b.duration_s / (cfg.fixed_len - 1) as f64;
            assert!((60.0 / b.u[2] - 0.75).abs() <= 2.0 * dt);
        }
    }

    #[test]
    fn ground_truth_beats_match_their_features() {
        let out = generate(&quiet(3)).unwrap();
        for b in &out.beats {
            let u = extract_features(b).unwrap();
            let dt = b.duration_s / (b.len() - 1) as f64;
            assert!((1.0 / u[1] - 1.0 / b.u[1]).abs() <= 2.0 * dt);
            assert!((60.0 / u[2] - 60.0 / b.u[2]).abs() <= 2.0 * dt);
        }
    }

    #[test]
    fn affine_labels_follow_the_map() {
        let mut cfg = SynthConfig { n_beats: 40, ..SynthConfig::default() };
        cfg.bp_map = BpMap {
            reference: [0.0; 3],
            sbp: PressureMap { intercept: 100.0, coef: [10.0, 1.0, 0.5], interaction: 0.0 },
            dbp: PressureMap { intercept: 20.0, coef: [5.0, 0.5, 0.25], interaction: 0.0 },
        };
        let out = generate(&cfg).unwrap();
        for (b, l) in out.beats.iter().zip(&out.recording.labels) {
            let sbp = 100.0 + (10.0 * b.u[0] + 1.0 * b.u[1] + 0.5 * b.u[2]) + 0.0;
            let dbp = 20.0 + (5.0 * b.u[0] + 0.5 * b.u[1] + 0.25 * b.u[2]) + 0.0;
            assert_eq!(l.sbp, sbp);
            assert_eq!(l.dbp, dbp);
            assert_eq!((b.sbp, b.dbp), (sbp, dbp));
        }
    }

    #[test]
    fn seeded_output_is_bit_identical() {
        let cfg = SynthConfig { n_beats: 30, seed: 17, ..SynthConfig::default() };
        let a = generate(&cfg).unwrap();
        let b = generate(&cfg).unwrap();
        assert_eq!(a.recording, b.recording);
        assert_eq!(a.beats, b.beats);
        let c = generate(&SynthConfig { seed: 18, ..cfg }).unwrap();
        assert_ne!(a.recording.samples, c.recording.samples);
    }

    #[test]
    fn default_subject_segments_completely() {
        let cfg = SynthConfig { n_beats: 120, seed: 4, ..SynthConfig::default() };
        let out = generate(&cfg).unwrap();
        let prepared = prepare_recording(&out.recording, cfg.fixed_len).unwrap();
        assert_eq!(prepared.windows, 120);
        assert_eq!(prepared.beats.len(), 120);
        for (b, t) in prepared.beats.iter().zip(&out.truth) {
            assert!((b.u[2] - t.u[2]).abs() < 0.05 * t.u[2]);
        }
    }

    #[test]
    fn drift_rate_orders_the_largest_step() {
        let steps: Vec<f64> = [0.002, 0.005, 0.01, 0.02, 0.04]
            .iter()
            .map(|&rate| {
                let cfg = SynthConfig {
                    n_beats: 300,
                    noise_std: 0.0,
                    drift: Drift { rate, ..Drift::default() },
                    ..SynthConfig::default()
                };
                let out = generate(&cfg).unwrap();
                out.truth
                    .windows(2)
                    .map(|w| {
                        (0..3)
                            .map(|i| (w[1].u[i] - w[0].u[i]).powi(2))
                            .sum::<f64>()
                            .sqrt()
                    })
                    .fold(0.0, f64::max)
            })
            .collect();
        assert!(steps.windows(2).all(|s| s[0] < s[1]), "{steps:?}");
    }

    #[test]
    fn misordered_landmarks_rejected() {
        let cfg = SynthConfig {
            landmarks: LandmarkFractions { a: 0.12, b: 0.6, f: 0.5, j: 0.98 },
            ..SynthConfig::default()
        };
        assert!(matches!(generate(&cfg), Err(Error::Config(_))));
    }

    #[test]
    fn inverted_pressure_map_rejected() {
        let mut cfg = SynthConfig::default();
        cfg.bp_map.dbp.intercept = 130.0;
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn csv_round_trip_preserves_recording() {
        let out = generate(&SynthConfig { n_beats: 5, ..SynthConfig::default() }).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let (s, l) = (dir.path().join("s.csv"), dir.path().join("l.csv"));
        crate::signal::export_csv(&out.recording, &s, &l).unwrap();
        let back = crate::signal::ingest_csv(&s, &l, "synth").unwrap();
        assert_eq!(back.samples, out.recording.samples);
        assert_eq!(back.labels, out.recording.labels);
    }
}
