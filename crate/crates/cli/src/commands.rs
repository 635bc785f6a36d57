use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use log::info;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use pitn_core::adversarial::{flip_waveform, pgd_generate};
use pitn_core::config::PitnConfig;
use pitn_core::io::{
    artifact, beats_file, list_with_suffix, load_beats_dir, load_split, prepare_output, read_json, write_json,
    RunManifest, SubjectBeats,
};
use pitn_core::metrics::{paired_ttest, MetricsReport, TTestResult};
use pitn_core::model::{load_checkpoint, save_checkpoint};
use pitn_core::signal::{
    compute_domain, export_csv, ingest_csv, minimal_split, prepare_recording, BeatRecord, BpType, Origin,
};
use pitn_core::synth::generate;
use pitn_core::train::{evaluate, log_to_jsonl, train_subject, TrainConfig};
use pitn_core::{Error, Result};

use crate::args::{AugmentArgs, AugmentMode, EvalArgs, ReportArgs, SweepArgs, SweepParam, SynthArgs};

/// Settings shared by every subcommand after merging.
pub struct Context {
    pub config: PitnConfig,
    pub seed: u64,
    pub out: PathBuf,
    pool: rayon::ThreadPool,
}

impl Context {
    pub fn new(config: PitnConfig, seed: u64, out: PathBuf, jobs: usize) -> Result<Self> {
        if jobs == 0 {
            return Err(Error::Usage("--jobs must be at least 1".into()));
        }
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .map_err(|e| Error::Usage(format!("cannot start {jobs} workers: {e}")))?;
        Ok(Self { config, seed, out, pool })
    }

    fn manifest(&self, command: &str, config: serde_json::Value) -> RunManifest {
        RunManifest::new(command, self.seed, config)
    }
}

fn to_value<T: Serialize>(v: &T) -> Result<serde_json::Value> {
    Ok(serde_json::to_value(v)?)
}

fn csv_error(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e.to_string()))
}

pub fn synth(ctx: &Context, args: &SynthArgs) -> Result<()> {
    prepare_output(&ctx.out, &[])?;
    if args.subjects == 0 {
        return Err(Error::Usage("--subjects must be at least 1".into()));
    }
    let base = &ctx.config.synth;
    let mut configs = Vec::with_capacity(args.subjects);
    for i in 0..args.subjects {
        let mut c = base.clone();
        if args.subjects > 1 {
            c.subject_id = format!("{}{:02}", base.subject_id, i + 1);
            c.seed = base.seed.wrapping_add(i as u64);
        }
        configs.push(c);
    }
    for c in &configs {
        let out = generate(c)?;
        export_csv(
            &out.recording,
            &ctx.out.join(format!("{}.signal.csv", c.subject_id)),
            &ctx.out.join(format!("{}.labels.csv", c.subject_id)),
        )?;
        info!("{}: {} labelled beats", c.subject_id, out.recording.labels.len());
    }
    ctx.manifest("synth", to_value(&configs)?).finish(&ctx.out)?;
    Ok(())
}

pub fn preprocess(ctx: &Context, input: &Path) -> Result<()> {
    let signals = list_with_suffix(input, ".signal.csv")?;
    if signals.is_empty() {
        return Err(Error::Usage(format!("no *.signal.csv files in {}", input.display())));
    }
    prepare_output(&ctx.out, &[input])?;
    let fixed_len = ctx.config.preprocess.fixed_len;
    let mut manifest = ctx.manifest("preprocess", to_value(&ctx.config.preprocess)?);
    for (subject, signal) in signals {
        let labels = input.join(format!("{subject}.labels.csv"));
        if !labels.is_file() {
            return Err(Error::Usage(format!("missing label file {}", labels.display())));
        }
        manifest.add_input(&signal)?;
        manifest.add_input(&labels)?;
        let rec = ingest_csv(&signal, &labels, &subject)?;
        let prep = prepare_recording(&rec, fixed_len)?;
        info!("{subject}: {} beats kept of {} delimited", prep.beats.len(), prep.windows);
        let beats = SubjectBeats {
            subject_id: subject.clone(),
            fixed_len,
            channels: rec.channels,
            sample_rate_hz: rec.sample_rate_hz,
            beats: prep.beats,
        };
        write_json(&beats_file(&ctx.out, &subject), &beats)?;
    }
    manifest.finish(&ctx.out)?;
    Ok(())
}

fn beat_inputs(manifest: &mut RunManifest, dir: &Path, subjects: &[SubjectBeats]) -> Result<()> {
    for s in subjects {
        manifest.add_input(&beats_file(dir, &s.subject_id))?;
    }
    Ok(())
}

pub fn split(ctx: &Context, input: &Path) -> Result<()> {
    let subjects = load_beats_dir(input)?;
    prepare_output(&ctx.out, &[input])?;
    let sc = &ctx.config.split;
    let mut manifest = ctx.manifest("split", to_value(sc)?);
    beat_inputs(&mut manifest, input, &subjects)?;
    for s in &subjects {
        for &bp in &sc.bp_types {
            let plan = minimal_split(&s.beats, bp, sc.bin_width_mmhg, sc.seed)?;
            info!("{} {bp}: {} train / {} test", s.subject_id, plan.train_indices.len(), plan.test_indices.len());
            write_json(&artifact(&ctx.out, &s.subject_id, bp, "split.json"), &plan)?;
        }
    }
    manifest.finish(&ctx.out)?;
    Ok(())
}

/// The training configuration for one subject: shapes come from the data.
fn subject_config(base: &TrainConfig, s: &SubjectBeats, bp: BpType) -> TrainConfig {
    let mut tc = base.clone();
    tc.bp_type = bp;
    tc.model.seq_len = s.fixed_len;
    tc.model.channels = s.channels;
    tc
}

fn jobs(subjects: &[SubjectBeats], bps: &[BpType]) -> Vec<(usize, BpType)> {
    (0..subjects.len()).flat_map(|i| bps.iter().map(move |&bp| (i, bp))).collect()
}

fn split_inputs(manifest: &mut RunManifest, dir: &Path, subjects: &[SubjectBeats], bps: &[BpType]) -> Result<()> {
    for s in subjects {
        for &bp in bps {
            manifest.add_input(&artifact(dir, &s.subject_id, bp, "split.json"))?;
        }
    }
    Ok(())
}

/// Train every (subject, BP type) pair into `out`, returning test metrics.
fn train_all(
    ctx: &Context,
    subjects: &[SubjectBeats],
    splits: &Path,
    train: &TrainConfig,
    out: &Path,
    save_models: bool,
) -> Result<Vec<(String, BpType, MetricsReport)>> {
    let bps = &ctx.config.split.bp_types;
    let work = jobs(subjects, bps);
    ctx.pool.install(|| {
        work.par_iter()
            .map(|&(i, bp)| {
                let s = &subjects[i];
                let plan = load_split(splits, &s.subject_id, bp, s.beats.len())?;
                let tc = subject_config(train, s, bp);
                let outcome = train_subject(&s.beats, &plan, &tc)?;
                std::fs::write(artifact(out, &s.subject_id, bp, "log.jsonl"), log_to_jsonl(&outcome.log)?)?;
                if save_models {
                    save_checkpoint(&outcome.model, &artifact(out, &s.subject_id, bp, "model.json"))?;
                }
                let test: Vec<BeatRecord> = plan.test_indices.iter().map(|&k| s.beats[k].clone()).collect();
                let (_, report) = evaluate(&test, &outcome.model, bp)?;
                info!(
                    "{} {bp}: r={:?} rmse={:.3} after {} epochs",
                    s.subject_id,
                    report.pearson_r,
                    report.rmse,
                    outcome.log.len()
                );
                Ok((s.subject_id.clone(), bp, report))
            })
            .collect()
    })
}

pub fn train(ctx: &Context, input: &Path, splits: &Path) -> Result<()> {
    let subjects = load_beats_dir(input)?;
    prepare_output(&ctx.out, &[input, splits])?;
    let mut manifest = ctx.manifest("train", to_value(&ctx.config.train)?);
    beat_inputs(&mut manifest, input, &subjects)?;
    split_inputs(&mut manifest, splits, &subjects, &ctx.config.split.bp_types)?;
    train_all(ctx, &subjects, splits, &ctx.config.train, &ctx.out, true)?;
    manifest.finish(&ctx.out)?;
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
struct PredictionRow {
    beat_index: usize,
    truth: f64,
    pred: f64,
}

pub fn eval(ctx: &Context, args: &EvalArgs) -> Result<()> {
    let subjects = load_beats_dir(&args.input)?;
    prepare_output(&ctx.out, &[&args.input, &args.splits, &args.models])?;
    let bps = ctx.config.split.bp_types.clone();
    let mut manifest = ctx.manifest("eval", to_value(&bps)?);
    beat_inputs(&mut manifest, &args.input, &subjects)?;
    split_inputs(&mut manifest, &args.splits, &subjects, &bps)?;
    for s in &subjects {
        for &bp in &bps {
            manifest.add_input(&artifact(&args.models, &s.subject_id, bp, "model.json"))?;
        }
    }
    let work = jobs(&subjects, &bps);
    ctx.pool.install(|| {
        work.par_iter()
            .map(|&(i, bp)| {
                let s = &subjects[i];
                let plan = load_split(&args.splits, &s.subject_id, bp, s.beats.len())?;
                let model = load_checkpoint(&artifact(&args.models, &s.subject_id, bp, "model.json"))?;
                let test: Vec<BeatRecord> = plan.test_indices.iter().map(|&k| s.beats[k].clone()).collect();
                let (pred, report) = evaluate(&test, &model, bp)?;
                write_json(&artifact(&ctx.out, &s.subject_id, bp, "metrics.json"), &report)?;
                let mut w = csv::Writer::from_path(artifact(&ctx.out, &s.subject_id, bp, "predictions.csv"))
                    .map_err(csv_error)?;
                for (b, p) in test.iter().zip(&pred) {
                    w.serialize(PredictionRow { beat_index: b.beat_index, truth: b.label(bp), pred: *p })
                        .map_err(csv_error)?;
                }
                w.flush()?;
                Ok(())
            })
            .collect::<Result<Vec<()>>>()
    })?;
    manifest.finish(&ctx.out)?;
    Ok(())
}

pub fn augment(ctx: &Context, args: &AugmentArgs) -> Result<()> {
    let subjects = load_beats_dir(&args.input)?;
    let bp: BpType = args.bp.into();
    let mut inputs: Vec<&Path> = vec![&args.input, &args.splits];
    let pgd_wanted = matches!(args.mode, AugmentMode::Pgd | AugmentMode::Both);
    let models = match (&args.models, pgd_wanted) {
        (Some(m), _) => Some(m.as_path()),
        (None, true) => return Err(Error::Usage("PGD augmentation needs --models".into())),
        (None, false) => None,
    };
    if let Some(m) = models {
        inputs.push(m);
    }
    prepare_output(&ctx.out, &inputs)?;
    let mut pgd = ctx.config.train.pgd.clone();
    pgd.seed = ctx.config.train.seed;
    if let Some(e) = args.epsilon {
        pgd.epsilon = e;
    }
    let mut manifest = ctx.manifest("augment", to_value(&pgd)?);
    beat_inputs(&mut manifest, &args.input, &subjects)?;
    split_inputs(&mut manifest, &args.splits, &subjects, &[bp])?;
    for s in &subjects {
        let plan = load_split(&args.splits, &s.subject_id, bp, s.beats.len())?;
        let train: Vec<&BeatRecord> = plan.train_indices.iter().map(|&k| &s.beats[k]).collect();
        let mut beats = s.beats.clone();
        if pgd_wanted {
            let path = artifact(models.expect("checked above"), &s.subject_id, bp, "model.json");
            manifest.add_input(&path)?;
            let model = load_checkpoint(&path)?;
            let owned: Vec<BeatRecord> = train.iter().map(|b| (*b).clone()).collect();
            let domain = compute_domain(&owned)?;
            for (k, b) in train.iter().enumerate() {
                let adv = pgd_generate(&b.x_tensor(), &b.u_tensor(), &model, &domain, &pgd, k as u64)?;
                beats.push(BeatRecord { x: adv.into_data(), origin: Origin::Adversarial, ..(*b).clone() });
            }
        }
        if matches!(args.mode, AugmentMode::Flip | AugmentMode::Both) {
            for b in &train {
                let flipped = flip_waveform(&b.x_tensor());
                beats.push(BeatRecord { x: flipped.into_data(), origin: Origin::Flip, ..(*b).clone() });
            }
        }
        info!("{}: {} generated beats", s.subject_id, beats.len() - s.beats.len());
        write_json(&beats_file(&ctx.out, &s.subject_id), &SubjectBeats { beats, ..s.clone() })?;
    }
    manifest.finish(&ctx.out)?;
    Ok(())
}

/// Evaluation results of one directory keyed by (BP type, subject).
struct EvalDir {
    label: String,
    metrics: BTreeMap<(BpType, String), MetricsReport>,
    dir: PathBuf,
}

fn read_eval_dir(dir: &Path, label: String) -> Result<EvalDir> {
    let mut metrics = BTreeMap::new();
    for (stem, path) in list_with_suffix(dir, ".metrics.json")? {
        let (subject, bp) = stem
            .rsplit_once('.')
            .ok_or_else(|| Error::Schema(format!("cannot read subject and BP type from {}", path.display())))?;
        let bp: BpType = bp.parse().map_err(|_| Error::Schema(format!("bad BP type in {}", path.display())))?;
        metrics.insert((bp, subject.to_string()), read_json::<MetricsReport>(&path)?);
    }
    if metrics.is_empty() {
        return Err(Error::Usage(format!("no *.metrics.json files in {}", dir.display())));
    }
    Ok(EvalDir { label, metrics, dir: dir.to_path_buf() })
}

fn read_predictions(path: &Path) -> Result<BTreeMap<usize, (f64, f64)>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::Schema(format!("{}: {e}", path.display())))?;
    let mut out = BTreeMap::new();
    for row in r.deserialize::<PredictionRow>() {
        let row = row.map_err(|e| Error::Schema(format!("{}: {e}", path.display())))?;
        out.insert(row.beat_index, (row.truth, row.pred));
    }
    Ok(out)
}

#[derive(Debug, Serialize)]
struct ReportRow {
    bp_type: BpType,
    subject: String,
    /// One entry per model column, `None` where the model has no result.
    models: Vec<Option<MetricsReport>>,
}

#[derive(Debug, Serialize)]
struct Comparison {
    bp_type: BpType,
    reference: String,
    other: String,
    n_pairs: usize,
    ttest: TTestResult,
}

#[derive(Debug, Serialize)]
struct Report {
    models: Vec<String>,
    rows: Vec<ReportRow>,
    average: BTreeMap<String, Vec<(Option<f64>, Option<f64>)>>,
    comparisons: Vec<Comparison>,
}

fn mean_of(v: impl Iterator<Item = f64>) -> Option<f64> {
    let v: Vec<f64> = v.collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.4}")).unwrap_or_default()
}

pub fn report(ctx: &Context, args: &ReportArgs) -> Result<()> {
    let labels: Vec<String> = match &args.labels {
        Some(l) if l.len() != args.input.len() => {
            return Err(Error::Usage(format!("{} labels for {} inputs", l.len(), args.input.len())))
        }
        Some(l) => l.clone(),
        None => args
            .input
            .iter()
            .map(|p| p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_else(|| p.display().to_string()))
            .collect(),
    };
    let dirs: Vec<EvalDir> = args
        .input
        .iter()
        .zip(labels)
        .map(|(d, l)| read_eval_dir(d, l))
        .collect::<Result<_>>()?;
    let inputs: Vec<&Path> = args.input.iter().map(PathBuf::as_path).collect();
    prepare_output(&ctx.out, &inputs)?;
    let mut manifest = ctx.manifest("report", to_value(&dirs.iter().map(|d| &d.label).collect::<Vec<_>>())?);

    let keys: BTreeSet<(BpType, String)> = dirs.iter().flat_map(|d| d.metrics.keys().cloned()).collect();
    let mut rows = Vec::new();
    let mut average = BTreeMap::new();
    let mut w = csv::Writer::from_path(ctx.out.join("report.csv")).map_err(csv_error)?;
    let mut header = vec!["bp_type".to_string(), "subject".to_string()];
    for d in &dirs {
        for m in ["corr", "rmse", "me", "sde", "aami"] {
            header.push(format!("{}_{m}", d.label));
        }
    }
    w.write_record(&header).map_err(csv_error)?;
    for bp in BpType::ALL {
        let subjects: Vec<&String> = keys.iter().filter(|(b, _)| *b == bp).map(|(_, s)| s).collect();
        if subjects.is_empty() {
            continue;
        }
        for s in &subjects {
            let models: Vec<Option<MetricsReport>> =
                dirs.iter().map(|d| d.metrics.get(&(bp, s.to_string())).cloned()).collect();
            let mut rec = vec![bp.to_string(), s.to_string()];
            for m in &models {
                match m {
                    Some(m) => rec.extend([
                        fmt_opt(m.pearson_r),
                        format!("{:.4}", m.rmse),
                        format!("{:.4}", m.me),
                        format!("{:.4}", m.sde),
                        m.aami_pass.to_string(),
                    ]),
                    None => rec.extend(std::iter::repeat(String::new()).take(5)),
                }
            }
            w.write_record(&rec).map_err(csv_error)?;
            rows.push(ReportRow { bp_type: bp, subject: s.to_string(), models });
        }
        let mut rec = vec![bp.to_string(), "Avg".to_string()];
        let mut avg = Vec::new();
        for d in &dirs {
            let here: Vec<&MetricsReport> = subjects.iter().filter_map(|s| d.metrics.get(&(bp, s.to_string()))).collect();
            let corr = mean_of(here.iter().filter_map(|m| m.pearson_r));
            let rmse = mean_of(here.iter().map(|m| m.rmse));
            rec.extend([fmt_opt(corr), fmt_opt(rmse), String::new(), String::new(), String::new()]);
            avg.push((corr, rmse));
        }
        w.write_record(&rec).map_err(csv_error)?;
        average.insert(bp.to_string(), avg);
    }
    w.flush()?;

    let mut comparisons = Vec::new();
    if let Some((reference, others)) = dirs.split_first() {
        for other in others {
            for bp in BpType::ALL {
                let (mut a, mut b) = (Vec::new(), Vec::new());
                for (key_bp, subject) in reference.metrics.keys() {
                    if *key_bp != bp || !other.metrics.contains_key(&(bp, subject.clone())) {
                        continue;
                    }
                    let pa = read_predictions(&artifact(&reference.dir, subject, bp, "predictions.csv"))?;
                    let pb = read_predictions(&artifact(&other.dir, subject, bp, "predictions.csv"))?;
                    for (k, (t, p)) in &pa {
                        if let Some((_, q)) = pb.get(k) {
                            a.push((p - t).abs());
                            b.push((q - t).abs());
                        }
                    }
                }
                if a.len() >= 3 {
                    comparisons.push(Comparison {
                        bp_type: bp,
                        reference: reference.label.clone(),
                        other: other.label.clone(),
                        n_pairs: a.len(),
                        ttest: paired_ttest(&a, &b)?,
                    });
                }
            }
        }
    }
    write_json(
        &ctx.out.join("report.json"),
        &Report { models: dirs.iter().map(|d| d.label.clone()).collect(), rows, average, comparisons },
    )?;
    for d in &dirs {
        for (bp, s) in d.metrics.keys() {
            manifest.add_input(&artifact(&d.dir, s, *bp, "metrics.json"))?;
        }
    }
    manifest.finish(&ctx.out)?;
    Ok(())
}

#[derive(Debug, Serialize)]
struct SweepRow {
    param: &'static str,
    value: f64,
    bp_type: BpType,
    subject: String,
    pearson_r: Option<f64>,
    rmse: f64,
    me: f64,
    sde: f64,
}

pub fn sweep(ctx: &Context, args: &SweepArgs) -> Result<()> {
    let subjects = load_beats_dir(&args.input)?;
    prepare_output(&ctx.out, &[&args.input, &args.splits])?;
    let (name, values) = match args.param {
        SweepParam::Gamma => ("gamma", args.values.clone().unwrap_or_else(|| ctx.config.sweep.gamma.clone())),
        SweepParam::YShift => ("y_shift", args.values.clone().unwrap_or_else(|| ctx.config.sweep.y_shift.clone())),
    };
    if values.is_empty() {
        return Err(Error::Usage("sweep needs at least one value".into()));
    }
    let mut manifest = ctx.manifest("sweep", to_value(&(&ctx.config.train, name, &values))?);
    beat_inputs(&mut manifest, &args.input, &subjects)?;
    split_inputs(&mut manifest, &args.splits, &subjects, &ctx.config.split.bp_types)?;
    let mut w = csv::Writer::from_path(ctx.out.join("sweep.csv")).map_err(csv_error)?;
    for &v in &values {
        let mut tc = ctx.config.train.clone();
        match args.param {
            SweepParam::Gamma => tc.gamma = v,
            SweepParam::YShift => tc.y_shift = v,
        }
        tc.validate()?;
        let dir = ctx.out.join(format!("{name}_{v}"));
        prepare_output(&dir, &[])?;
        let sub_manifest = ctx.manifest("sweep-point", to_value(&tc)?);
        let results = train_all(ctx, &subjects, &args.splits, &tc, &dir, false)?;
        for (subject, bp, report) in results {
            write_json(&artifact(&dir, &subject, bp, "metrics.json"), &report)?;
            w.serialize(SweepRow {
                param: name,
                value: v,
                bp_type: bp,
                subject,
                pearson_r: report.pearson_r,
                rmse: report.rmse,
                me: report.me,
                sde: report.sde,
            })
            .map_err(csv_error)?;
        }
        sub_manifest.finish(&dir)?;
    }
    w.flush()?;
    manifest.finish(&ctx.out)?;
    Ok(())
}
