use log::warn;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{BeatRecord, BpType};
use crate::error::{Error, Result};

/// Default width of a blood-pressure bin in mmHg.
pub const DEFAULT_BIN_WIDTH: f64 = 0.5;

/// Train/test partition under the minimal training criterion.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub bp_type: BpType,
    pub bin_width_mmhg: f64,
    pub seed: u64,
    /// Indices into the beat list, ascending.
    pub train_indices: Vec<usize>,
    /// Indices into the beat list, ascending.
    pub test_indices: Vec<usize>,
}

impl SplitPlan {
    /// Check the partition against a beat list of length `n`.
    pub fn validate(&self, n: usize) -> Result<()> {
        let mut seen = vec![false; n];
        for &i in self.train_indices.iter().chain(&self.test_indices) {
            if i >= n {
                return Err(Error::Input(format!("split index {i} out of range for {n} beats")));
            }
            if seen[i] {
                return Err(Error::Input(format!("split index {i} appears twice")));
            }
            seen[i] = true;
        }
        if seen.iter().any(|s| !s) {
            return Err(Error::Input("split does not cover every beat".into()));
        }
        Ok(())
    }
}

/// Number of bins and the bin of each label.
pub fn bin_labels(labels: &[f64], bin_width: f64) -> (usize, Vec<usize>) {
    let lo = labels.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = labels.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let n_bins = (((hi - lo) / bin_width).ceil() as usize).max(1);
    let bins = labels
        .iter()
        .map(|&y| (((y - lo) / bin_width).floor() as usize).min(n_bins - 1))
        .collect();
    (n_bins, bins)
}

/// Bin labels of width `bin_width` over `[min, max]` and draw one training
/// beat uniformly from each nonempty bin. Everything else is test data.
pub fn minimal_split(
    beats: &[BeatRecord],
    bp_type: BpType,
    bin_width: f64,
    seed: u64,
) -> Result<SplitPlan> {
    if beats.is_empty() {
        return Err(Error::Usage("cannot split an empty beat list".into()));
    }
    if !(bin_width > 0.0) {
        return Err(Error::Config(format!("bin width must be positive, got {bin_width}")));
    }
    let labels: Vec<f64> = beats.iter().map(|b| b.label(bp_type)).collect();
    let (n_bins, bins) = bin_labels(&labels, bin_width);
    if labels.iter().all(|&y| y == labels[0]) {
        warn!("all {bp_type} labels identical; split degenerates to a single bin");
    }
    let mut members = vec![Vec::new(); n_bins];
    for (i, &b) in bins.iter().enumerate() {
        members[b].push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train: Vec<usize> = members
        .iter()
        .filter_map(|m| m.choose(&mut rng).copied())
        .collect();
    train.sort_unstable();
    let mut is_train = vec![false; beats.len()];
    train.iter().for_each(|&i| is_train[i] = true);
    let test = (0..beats.len()).filter(|&i| !is_train[i]).collect();
    Ok(SplitPlan {
        bp_type,
        bin_width_mmhg: bin_width,
        seed,
        train_indices: train,
        test_indices: test,
    })
}
