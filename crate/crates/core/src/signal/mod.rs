//! From raw recordings to labeled, fixed-length beats.

mod features;
mod recording;
mod segment;
mod split;

use std::fmt;

use log::warn;
use serde::{Deserialize, Serialize};

pub use features::{
    derivative, extract_features, features_from_trace, find_landmarks, moving_average,
    smoothed_derivative, Landmarks, HEART_RATE_RANGE, SMOOTHING_WINDOW,
};
pub use recording::{export_csv, ingest_csv, ingest_labels, BeatLabel, RawRecording};
pub use segment::{beat_windows, resample, segment_beats, Segmentation};
pub use split::{bin_labels, minimal_split, SplitPlan, DEFAULT_BIN_WIDTH};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

/// Default number of samples per resampled beat.
pub const DEFAULT_FIXED_LEN: usize = 128;

/// Number of physiological features per beat.
pub const NUM_FEATURES: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BpType {
    Sbp,
    Dbp,
}

impl BpType {
    pub const ALL: [BpType; 2] = [BpType::Sbp, BpType::Dbp];
}

impl fmt::Display for BpType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BpType::Sbp => "sbp",
            BpType::Dbp => "dbp",
        })
    }
}

impl std::str::FromStr for BpType {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sbp" => Ok(BpType::Sbp),
            "dbp" => Ok(BpType::Dbp),
            other => Err(Error::Config(format!("unknown BP type {other:?}"))),
        }
    }
}

/// Where a beat came from.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Origin {
    #[default]
    Clean,
    Adversarial,
    Flip,
}

/// One cardiac cycle resampled to a fixed length, with its features and
/// reference labels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BeatRecord {
    pub beat_index: usize,
    pub channels: usize,
    /// Row-major `fixed_len × channels`.
    pub x: Vec<f64>,
    /// Time from the first to the last resampled point.
    pub duration_s: f64,
    pub u: [f64; NUM_FEATURES],
    pub sbp: f64,
    pub dbp: f64,
    #[serde(default)]
    pub origin: Origin,
}

impl BeatRecord {
    /// Samples per channel.
    pub fn len(&self) -> usize {
        self.x.len() / self.channels.max(1)
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub fn channel(&self, c: usize) -> Vec<f64> {
        self.x.iter().skip(c).step_by(self.channels).copied().collect()
    }

    pub fn label(&self, bp: BpType) -> f64 {
        match bp {
            BpType::Sbp => self.sbp,
            BpType::Dbp => self.dbp,
        }
    }

    pub fn x_tensor(&self) -> Tensor {
        Tensor::new(vec![self.len(), self.channels], self.x.clone()).expect("beat shape")
    }

    pub fn u_tensor(&self) -> Tensor {
        Tensor::vector(self.u.to_vec())
    }
}

/// Per-channel bounds of the training data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DomainBounds {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl DomainBounds {
    pub fn validate(&self) -> Result<()> {
        if self.lo.len() != self.hi.len() {
            return Err(Error::Config("domain bounds differ in channel count".into()));
        }
        if let Some(c) = (0..self.lo.len()).find(|&c| !(self.lo[c] <= self.hi[c])) {
            return Err(Error::Config(format!(
                "domain bound lo > hi on channel {c} ({} > {})",
                self.lo[c], self.hi[c]
            )));
        }
        Ok(())
    }

    pub fn contains(&self, beat: &BeatRecord) -> bool {
        let c = self.lo.len();
        beat.x
            .iter()
            .enumerate()
            .all(|(i, &v)| v >= self.lo[i % c] && v <= self.hi[i % c])
    }
}

/// Per-channel minimum and maximum over every sample of every beat.
pub fn compute_domain(train: &[BeatRecord]) -> Result<DomainBounds> {
    let first = train
        .first()
        .ok_or_else(|| Error::Usage("cannot compute a domain from no beats".into()))?;
    let c = first.channels;
    let mut lo = vec![f64::INFINITY; c];
    let mut hi = vec![f64::NEG_INFINITY; c];
    for beat in train {
        if beat.channels != c {
            return Err(Error::Input("beats disagree on channel count".into()));
        }
        for (i, &v) in beat.x.iter().enumerate() {
            lo[i % c] = lo[i % c].min(v);
            hi[i % c] = hi[i % c].max(v);
        }
    }
    Ok(DomainBounds { lo, hi })
}

/// Beats of one recording with features filled in and labels attached.
#[derive(Clone, Debug)]
pub struct PreparedSubject {
    pub subject_id: String,
    pub beats: Vec<BeatRecord>,
    pub windows: usize,
    pub rejected: usize,
}

/// Segment, label and featurize a recording. Fails when the number of
/// delimited beats differs from the number of labels.
pub fn prepare_recording(rec: &RawRecording, fixed_len: usize) -> Result<PreparedSubject> {
    let seg = segment_beats(rec, fixed_len);
    if seg.windows != rec.labels.len() {
        return Err(Error::Input(format!(
            "{}: detected {} beats but found {} labels",
            rec.subject_id,
            seg.windows,
            rec.labels.len()
        )));
    }
    let mut labels = rec.labels.clone();
    labels.sort_by_key(|l| l.beat_index);
    if labels.iter().enumerate().any(|(i, l)| l.beat_index != i) {
        return Err(Error::Input(format!(
            "{}: beat labels must be indexed 0..{}",
            rec.subject_id,
            labels.len()
        )));
    }
    let mut beats = Vec::with_capacity(seg.beats.len());
    let mut rejected = seg.windows - seg.beats.len();
    for mut beat in seg.beats {
        match extract_features(&beat) {
            Ok(u) => {
                let l = labels[beat.beat_index];
                beat.u = u;
                beat.sbp = l.sbp;
                beat.dbp = l.dbp;
                beats.push(beat);
            }
            Err(e) => {
                warn!("{}: beat {} dropped: {e}", rec.subject_id, beat.beat_index);
                rejected += 1;
            }
        }
    }
    Ok(PreparedSubject {
        subject_id: rec.subject_id.clone(),
        beats,
        windows: seg.windows,
        rejected,
    })
}
