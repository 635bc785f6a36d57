//! Configuration loading: defaults, then the TOML file, then flags.

use std::fs;
use std::path::Path;

use pitn_core::config::PitnConfig;
use pitn_core::signal::BpType;
use pitn_core::{Error, Result};

use crate::args::{BpArg, TrainOverrides};

pub fn parse_config(text: &str) -> Result<PitnConfig> {
    toml::from_str(text).map_err(|e| Error::Config(format!("config: {e}")))
}

pub fn load_config(path: Option<&Path>) -> Result<PitnConfig> {
    match path {
        None => Ok(PitnConfig::default()),
        Some(p) => {
            let text = fs::read_to_string(p)
                .map_err(|e| Error::Usage(format!("cannot read config {}: {e}", p.display())))?;
            parse_config(&text).map_err(|e| match e {
                Error::Config(m) => Error::Config(format!("{}: {m}", p.display())),
                other => other,
            })
        }
    }
}

impl TrainOverrides {
    /// Write every flag that was given into `cfg`.
    pub fn apply(&self, cfg: &mut PitnConfig) {
        let t = &mut cfg.train;
        if let Some(v) = self.epochs {
            t.epochs = v;
        }
        if let Some(v) = self.lr {
            t.learning_rate = v;
        }
        if let Some(v) = self.gamma {
            t.gamma = v;
        }
        if let Some(v) = self.y_shift {
            t.y_shift = v;
        }
        if let Some(v) = self.tau {
            t.tau = v;
        }
        if let Some(v) = self.epsilon {
            t.pgd.epsilon = v;
        }
        if let Some(v) = self.eta {
            t.pgd.eta = v;
        }
        if let Some(v) = self.steps {
            t.pgd.steps = v;
        }
        if let Some(v) = self.sigma {
            t.pgd.sigma = v;
        }
        if let Some(v) = self.d_model {
            t.model.d_model = v;
        }
        if let Some(v) = self.num_blocks {
            t.model.num_blocks = v;
        }
        if let Some(v) = self.patience {
            t.patience = v;
        }
        if self.base {
            *t = t.clone().base();
        }
        if self.no_adversarial {
            t.use_adversarial = false;
        }
        if self.no_contrastive {
            t.use_contrastive = false;
        }
    }
}

pub fn apply_bp(cfg: &mut PitnConfig, bp: &Option<Vec<BpArg>>) {
    if let Some(list) = bp {
        let mut v: Vec<BpType> = list.iter().map(|&b| b.into()).collect();
        v.dedup();
        cfg.split.bp_types = v;
    }
}
