//! The complete workflow configuration. Every section has defaults, so an
//! empty file is a valid configuration.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal::{BpType, DEFAULT_BIN_WIDTH, DEFAULT_FIXED_LEN};
use crate::synth::SynthConfig;
use crate::train::TrainConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PreprocessConfig {
    /// Samples per resampled beat.
    pub fixed_len: usize,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self { fixed_len: DEFAULT_FIXED_LEN }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitConfig {
    pub bin_width_mmhg: f64,
    pub seed: u64,
    /// Label types that get a split, a model and an evaluation.
    pub bp_types: Vec<BpType>,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self { bin_width_mmhg: DEFAULT_BIN_WIDTH, seed: 0, bp_types: BpType::ALL.to_vec() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub gamma: Vec<f64>,
    pub y_shift: Vec<f64>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self { gamma: vec![1.0, 10.0, 100.0, 1000.0], y_shift: vec![0.5, 1.0, 2.0, 4.0] }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PitnConfig {
    pub synth: SynthConfig,
    pub preprocess: PreprocessConfig,
    pub split: SplitConfig,
    pub train: TrainConfig,
    pub sweep: SweepConfig,
}

impl PitnConfig {
    /// Use `seed` for generation, splitting and training.
    pub fn set_seed(&mut self, seed: u64) {
        self.synth.seed = seed;
        self.split.seed = seed;
        self.train.seed = seed;
    }

    pub fn validate(&self) -> Result<()> {
        self.synth.validate()?;
        self.train.validate()?;
        if self.preprocess.fixed_len < 8 {
            return Err(Error::Config(format!("fixed_len must be at least 8, got {}", self.preprocess.fixed_len)));
        }
        if !(self.split.bin_width_mmhg > 0.0 && self.split.bin_width_mmhg.is_finite()) {
            return Err(Error::Config(format!("bin width must be positive, got {}", self.split.bin_width_mmhg)));
        }
        if self.split.bp_types.is_empty() {
            return Err(Error::Config("at least one BP type is required".into()));
        }
        if self.sweep.gamma.iter().chain(&self.sweep.y_shift).any(|v| !(*v >= 0.0 && v.is_finite())) {
            return Err(Error::Config("sweep values must be finite and non-negative".into()));
        }
        Ok(())
    }
}
