use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Reference blood pressure for one beat.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BeatLabel {
    pub beat_index: usize,
    pub sbp: f64,
    pub dbp: f64,
}

/// A multichannel recording with per-beat reference labels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RawRecording {
    pub subject_id: String,
    pub sample_rate_hz: f64,
    pub start_time_s: f64,
    pub channels: usize,
    /// Row-major `samples × channels`.
    pub samples: Vec<f64>,
    pub labels: Vec<BeatLabel>,
}

impl RawRecording {
    pub fn new(
        subject_id: impl Into<String>,
        sample_rate_hz: f64,
        channels: usize,
        samples: Vec<f64>,
        labels: Vec<BeatLabel>,
    ) -> Result<Self> {
        let rec = Self {
            subject_id: subject_id.into(),
            sample_rate_hz,
            start_time_s: 0.0,
            channels,
            samples,
            labels,
        };
        rec.validate()?;
        Ok(rec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sample_rate_hz > 0.0) || !self.sample_rate_hz.is_finite() {
            return Err(Error::Input(format!(
                "sample rate must be positive, got {}",
                self.sample_rate_hz
            )));
        }
        if self.channels == 0 || self.samples.len() % self.channels != 0 {
            return Err(Error::Input(format!(
                "{} samples do not split into {} channels",
                self.samples.len(),
                self.channels
            )));
        }
        if let Some(i) = self.samples.iter().position(|v| !v.is_finite()) {
            return Err(Error::Input(format!(
                "non-finite sample at row {}",
                i / self.channels
            )));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.samples.len() / self.channels
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn channel(&self, c: usize) -> Vec<f64> {
        self.samples
            .iter()
            .skip(c)
            .step_by(self.channels)
            .copied()
            .collect()
    }
}

fn ingest_err(path: &Path, line: u64, msg: impl Into<String>) -> Error {
    Error::Ingest {
        path: path.to_path_buf(),
        line,
        msg: msg.into(),
    }
}

fn parse_field(path: &Path, line: u64, name: &str, raw: &str) -> Result<f64> {
    let v: f64 = raw
        .trim()
        .parse()
        .map_err(|_| ingest_err(path, line, format!("column {name}: cannot parse {raw:?}")))?;
    if !v.is_finite() {
        return Err(ingest_err(path, line, format!("column {name}: non-finite value")));
    }
    Ok(v)
}

fn reader(path: &Path) -> Result<csv::Reader<File>> {
    let file = File::open(path)?;
    Ok(csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(file))
}

/// Read a signal file (`t_sec,ch0[,ch1,...]`) and a beat-label file
/// (`beat_index,sbp_mmhg,dbp_mmhg`).
pub fn ingest_csv(signal: &Path, labels: &Path, subject_id: &str) -> Result<RawRecording> {
    let mut rdr = reader(signal)?;
    let header = rdr
        .headers()
        .map_err(|e| ingest_err(signal, 1, e.to_string()))?
        .clone();
    if header.len() < 2 || header.get(0).map(str::trim) != Some("t_sec") {
        return Err(Error::Schema(format!(
            "{}: header must start with t_sec followed by channel columns",
            signal.display()
        )));
    }
    for (c, name) in header.iter().skip(1).enumerate() {
        if name.trim() != format!("ch{c}") {
            return Err(Error::Schema(format!(
                "{}: expected column ch{c}, found {name:?}",
                signal.display()
            )));
        }
    }
    let channels = header.len() - 1;
    let mut times = Vec::new();
    let mut samples = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map(|p| p.line()).unwrap_or(0);
            ingest_err(signal, line, e.to_string())
        })?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        if rec.len() != header.len() {
            return Err(ingest_err(
                signal,
                line,
                format!("expected {} fields, found {}", header.len(), rec.len()),
            ));
        }
        times.push(parse_field(signal, line, "t_sec", &rec[0])?);
        for c in 0..channels {
            samples.push(parse_field(signal, line, &header[c + 1], &rec[c + 1])?);
        }
    }
    if times.len() < 2 {
        return Err(ingest_err(signal, 1, "need at least two samples"));
    }
    for (i, w) in times.windows(2).enumerate() {
        if w[1] <= w[0] {
            return Err(ingest_err(
                signal,
                i as u64 + 3,
                "t_sec must be strictly increasing",
            ));
        }
    }
    let span = times[times.len() - 1] - times[0];
    let sample_rate_hz = (times.len() - 1) as f64 / span;
    let dt = 1.0 / sample_rate_hz;
    for (i, w) in times.windows(2).enumerate() {
        if ((w[1] - w[0]) - dt).abs() > 0.01 * dt {
            return Err(ingest_err(signal, i as u64 + 3, "t_sec spacing is not uniform"));
        }
    }

    let labels = ingest_labels(labels)?;
    let mut rec = RawRecording::new(subject_id, sample_rate_hz, channels, samples, labels)?;
    rec.start_time_s = times[0];
    Ok(rec)
}

/// Read a `beat_index,sbp_mmhg,dbp_mmhg` file.
pub fn ingest_labels(path: &Path) -> Result<Vec<BeatLabel>> {
    let mut rdr = reader(path)?;
    let header = rdr
        .headers()
        .map_err(|e| ingest_err(path, 1, e.to_string()))?
        .clone();
    let expected = ["beat_index", "sbp_mmhg", "dbp_mmhg"];
    let found: Vec<&str> = header.iter().map(str::trim).collect();
    if found != expected {
        return Err(Error::Schema(format!(
            "{}: label header must be {}, found {}",
            path.display(),
            expected.join(","),
            found.join(",")
        )));
    }
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map(|p| p.line()).unwrap_or(0);
            ingest_err(path, line, e.to_string())
        })?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        if rec.len() != 3 {
            return Err(ingest_err(path, line, format!("expected 3 fields, found {}", rec.len())));
        }
        let beat_index = rec[0]
            .trim()
            .parse::<usize>()
            .map_err(|_| ingest_err(path, line, format!("bad beat_index {:?}", &rec[0])))?;
        let sbp = parse_field(path, line, "sbp_mmhg", &rec[1])?;
        let dbp = parse_field(path, line, "dbp_mmhg", &rec[2])?;
        out.push(BeatLabel { beat_index, sbp, dbp });
    }
    Ok(out)
}

/// Write a recording in the ingestion schema. Floats use the shortest
/// representation that parses back to the same value.
pub fn export_csv(rec: &RawRecording, signal: &Path, labels: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(signal)?);
    write!(w, "t_sec")?;
    for c in 0..rec.channels {
        write!(w, ",ch{c}")?;
    }
    writeln!(w)?;
    for i in 0..rec.len() {
        write!(w, "{}", rec.start_time_s + i as f64 / rec.sample_rate_hz)?;
        for c in 0..rec.channels {
            write!(w, ",{}", rec.samples[i * rec.channels + c])?;
        }
        writeln!(w)?;
    }
    w.flush()?;

    let mut w = BufWriter::new(File::create(labels)?);
    writeln!(w, "beat_index,sbp_mmhg,dbp_mmhg")?;
    for l in &rec.labels {
        writeln!(w, "{},{},{}", l.beat_index, l.sbp, l.dbp)?;
    }
    w.flush()?;
    Ok(())
}
