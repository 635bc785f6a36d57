use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::ModelState;
use crate::error::{Error, Result};

const FORMAT_VERSION: u32 = 1;

/// On-disk model: the full state plus a SHA-256 of its canonical JSON.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: u32,
    pub content_hash: String,
    pub state: ModelState,
}

impl Checkpoint {
    pub fn new(state: ModelState) -> Result<Self> {
        let content_hash = content_hash(&state)?;
        Ok(Self { format: FORMAT_VERSION, content_hash, state })
    }

    pub fn verify(&self) -> Result<()> {
        if self.format != FORMAT_VERSION {
            return Err(Error::Schema(format!("unsupported checkpoint format {}", self.format)));
        }
        let actual = content_hash(&self.state)?;
        if actual != self.content_hash {
            return Err(Error::Schema(format!(
                "checkpoint hash mismatch: stored {}, computed {actual}",
                self.content_hash
            )));
        }
        if !self.state.is_finite() {
            return Err(Error::Schema("checkpoint holds non-finite parameters".into()));
        }
        Ok(())
    }
}

fn content_hash(state: &ModelState) -> Result<String> {
    let bytes = serde_json::to_vec(state)?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

pub fn save_checkpoint(state: &ModelState, path: &Path) -> Result<String> {
    let ck = Checkpoint::new(state.clone())?;
    fs::write(path, serde_json::to_vec_pretty(&ck)?)?;
    Ok(ck.content_hash)
}

pub fn load_checkpoint(path: &Path) -> Result<ModelState> {
    let ck: Checkpoint = serde_json::from_slice(&fs::read(path)?)?;
    ck.verify()?;
    ck.state.config.validate()?;
    Ok(ck.state)
}
