//! On-disk formats shared by the command-line workflow.
//!
//! Every artifact directory holds exactly one `manifest.json` next to its
//! files:
//!
//! | file | contents |
//! |---|---|
//! | `<subject>.signal.csv`, `<subject>.labels.csv` | raw recording |
//! | `<subject>.beats.json` | [`SubjectBeats`] |
//! | `<subject>.<bp>.split.json` | [`SplitPlan`] |
//! | `<subject>.<bp>.model.json` | checkpoint |
//! | `<subject>.<bp>.log.jsonl` | per-epoch losses |
//! | `<subject>.<bp>.metrics.json` | [`MetricsReport`](crate::metrics::MetricsReport) |
//! | `<subject>.<bp>.predictions.csv` | beat_index, truth, pred |
//! | `report.csv`, `report.json` | aggregated metrics and paired tests |
//! | `sweep.csv` | metrics per grid value |

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::signal::{BeatRecord, BpType, SplitPlan};

pub const MANIFEST: &str = "manifest.json";
const MANIFEST_FORMAT: u32 = 1;

/// Preprocessed beats of one subject.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubjectBeats {
    pub subject_id: String,
    pub fixed_len: usize,
    pub channels: usize,
    pub sample_rate_hz: f64,
    pub beats: Vec<BeatRecord>,
}

impl SubjectBeats {
    pub fn validate(&self) -> Result<()> {
        for b in &self.beats {
            if b.channels != self.channels || b.len() != self.fixed_len {
                return Err(Error::Schema(format!(
                    "{}: beat {} is {}x{}, header says {}x{}",
                    self.subject_id,
                    b.beat_index,
                    b.len(),
                    b.channels,
                    self.fixed_len,
                    self.channels
                )));
            }
            if b.x.len() != b.len() * b.channels {
                return Err(Error::Schema(format!("{}: beat {} has a ragged waveform", self.subject_id, b.beat_index)));
            }
        }
        Ok(())
    }
}

/// Provenance of one artifact directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub format: u32,
    pub tool: String,
    pub version: String,
    pub command: String,
    pub seed: u64,
    /// Effective configuration after file and flag merging.
    pub config: serde_json::Value,
    /// SHA-256 of every input file, keyed by path.
    pub inputs: BTreeMap<String, String>,
    /// Files written next to the manifest, sorted.
    pub outputs: Vec<String>,
    /// Seconds since the Unix epoch; `SOURCE_DATE_EPOCH` when set.
    pub created_unix: u64,
}

impl RunManifest {
    pub fn new(command: &str, seed: u64, config: serde_json::Value) -> Self {
        Self {
            format: MANIFEST_FORMAT,
            tool: "pitn".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            seed,
            config,
            inputs: BTreeMap::new(),
            outputs: Vec::new(),
            created_unix: timestamp(),
        }
    }

    pub fn add_input(&mut self, path: &Path) -> Result<()> {
        self.inputs.insert(path.display().to_string(), file_sha256(path)?);
        Ok(())
    }

    /// Record every regular file in `dir` other than the manifest and write
    /// the manifest there.
    pub fn finish(mut self, dir: &Path) -> Result<PathBuf> {
        let mut outputs = Vec::new();
        for entry in fs::read_dir(dir)? {
            let entry = entry?;
            let name = entry.file_name().to_string_lossy().into_owned();
            if entry.file_type()?.is_file() && name != MANIFEST {
                outputs.push(name);
            }
        }
        outputs.sort();
        self.outputs = outputs;
        let path = dir.join(MANIFEST);
        write_json(&path, &self)?;
        Ok(path)
    }
}

fn timestamp() -> u64 {
    if let Some(v) = std::env::var("SOURCE_DATE_EPOCH").ok().and_then(|s| s.trim().parse().ok()) {
        return v;
    }
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

pub fn file_sha256(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| io_context(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

fn io_context(path: &Path, e: std::io::Error) -> Error {
    Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))
}

/// Read a JSON file, reporting parse failures as schema errors.
pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let bytes = fs::read(path).map_err(|e| io_context(path, e))?;
    serde_json::from_slice(&bytes).map_err(|e| Error::Schema(format!("{}: {e}", path.display())))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| io_context(path, e))
}

/// Create `dir` if needed. Refuses to write into a directory that is also an
/// input.
pub fn prepare_output(dir: &Path, inputs: &[&Path]) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| io_context(dir, e))?;
    let out = fs::canonicalize(dir)?;
    for i in inputs {
        if fs::canonicalize(i).ok().as_deref() == Some(out.as_path()) {
            return Err(Error::Usage(format!("output directory {} is also an input", dir.display())));
        }
    }
    Ok(())
}

/// Files in `dir` whose names end with `suffix`, sorted by name, paired with
/// the name stem before the suffix.
pub fn list_with_suffix(dir: &Path, suffix: &str) -> Result<Vec<(String, PathBuf)>> {
    if !dir.is_dir() {
        return Err(Error::Usage(format!("{} is not a directory", dir.display())));
    }
    let mut out = Vec::new();
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        let Some(name) = path.file_name().and_then(|n| n.to_str()) else { continue };
        if let Some(stem) = name.strip_suffix(suffix) {
            if !stem.is_empty() {
                out.push((stem.to_string(), path.clone()));
            }
        }
    }
    out.sort();
    Ok(out)
}

pub fn beats_file(dir: &Path, subject: &str) -> PathBuf {
    dir.join(format!("{subject}.beats.json"))
}

/// `<dir>/<subject>.<bp>.<kind>`.
pub fn artifact(dir: &Path, subject: &str, bp: BpType, kind: &str) -> PathBuf {
    dir.join(format!("{subject}.{bp}.{kind}"))
}

pub fn load_beats_dir(dir: &Path) -> Result<Vec<SubjectBeats>> {
    let files = list_with_suffix(dir, ".beats.json")?;
    if files.is_empty() {
        return Err(Error::Usage(format!("no *.beats.json files in {}", dir.display())));
    }
    files
        .into_iter()
        .map(|(_, p)| {
            let s: SubjectBeats = read_json(&p)?;
            s.validate()?;
            Ok(s)
        })
        .collect()
}

pub fn load_split(dir: &Path, subject: &str, bp: BpType, n_beats: usize) -> Result<SplitPlan> {
    let plan: SplitPlan = read_json(&artifact(dir, subject, bp, "split.json"))?;
    plan.validate(n_beats)?;
    if plan.bp_type != bp {
        return Err(Error::Schema(format!("{subject}: split file for {bp} holds a {} split", plan.bp_type)));
    }
    Ok(plan)
}

/// Name-sorted SHA-256 over every file of a directory: one line
/// `<name> <hash>` per file, hashed again.
pub fn directory_hash(dir: &Path) -> Result<String> {
    let mut names: Vec<PathBuf> = fs::read_dir(dir)?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<_>>()?;
    names.retain(|p| p.is_file());
    names.sort();
    let mut h = Sha256::new();
    for p in names {
        let name = p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        h.update(format!("{name} {}\n", file_sha256(&p)?));
    }
    Ok(hex::encode(h.finalize()))
}
