//! Acceptance suite. Every criterion prints one `PASS`/`FAIL` line to stdout
//! (visible even under output capture) and then asserts. Criteria run one at
//! a time so timing checks are not skewed by sibling tests.

use std::io::Write;
use std::path::Path;
use std::process::Command;
use std::sync::Mutex;
use std::time::Instant;

use pitn_core::adversarial::{pgd_generate, PgdConfig};
use pitn_core::autodiff::{Graph, NodeId, Tensor};
use pitn_core::gradcheck::{max_relative_error, numerical_gradient, DEFAULT_STEP};
use pitn_core::losses::{contrastive, physics_residual_value, ContrastiveConfig};
use pitn_core::metrics::{me_sde, paired_ttest, pearson, rmse, MetricsReport};
use pitn_core::model::{detect_period, fold, unfold, FeatureScaler, LnRoute, ModelConfig, ModelState};
use pitn_core::signal::{compute_domain, minimal_split, prepare_recording, BeatRecord, BpType, Origin};
use pitn_core::synth::{generate, BpMap, SynthConfig};
use pitn_core::train::{build_objective, evaluate, train_subject, TrainConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

static SERIAL: Mutex<()> = Mutex::new(());

fn serial() -> std::sync::MutexGuard<'static, ()> {
    SERIAL.lock().unwrap_or_else(|e| e.into_inner())
}

fn verdict(id: u32, name: &str, pass: bool, detail: String) {
    let line = format!("acceptance {id} {} {name}: {detail}", if pass { "PASS" } else { "FAIL" });
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "{line}");
    let _ = out.flush();
    assert!(pass, "{line}");
}

fn random_beats(rng: &mut ChaCha8Rng, n: usize, t: usize) -> Vec<BeatRecord> {
    let mut index = 0;
    (0..n)
        .map(|_| {
            index += rng.gen_range(1..3);
            let phase = rng.gen_range(0.0..6.28);
            let cycles = rng.gen_range(0.5..3.0);
            BeatRecord {
                beat_index: index,
                channels: 1,
                x: (0..t)
                    .map(|k| {
                        (cycles * 6.28 * k as f64 / t as f64 + phase).sin() + 0.1 * rng.gen_range(-1.0..1.0)
                    })
                    .collect(),
                duration_s: 0.8,
                u: [rng.gen_range(0.8..1.2), rng.gen_range(5.0..7.0), rng.gen_range(70.0..90.0)],
                sbp: rng.gen_range(110.0..130.0),
                dbp: rng.gen_range(70.0..85.0),
                origin: Origin::Clean,
            }
        })
        .collect()
}

fn randomize_layer_norms(model: &mut ModelState, rng: &mut ChaCha8Rng) {
    let names = model.param_names();
    for (p, name) in model.params_mut().into_iter().zip(names) {
        if name.contains(".ln_") {
            p.data_mut().iter_mut().for_each(|v| *v += rng.gen_range(-0.3..0.3));
        }
    }
}

#[test]
fn c1_gradients_match_finite_differences() {
    let _g = serial();
    let start = Instant::now();
    let t = 16;
    let cfg = TrainConfig {
        y_shift: 30.0,
        tau: 0.5,
        model: ModelConfig { d_model: 8, num_blocks: 2, seq_len: t, ..ModelConfig::default() },
        ..TrainConfig::default()
    };
    let mut worst: f64 = 0.0;
    let mut worst_at = String::new();
    for inst in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + inst);
        let batch = random_beats(&mut rng, 3, t);
        let mut model = ModelState::init(cfg.model.clone(), inst).unwrap();
        randomize_layer_norms(&mut model, &mut rng);
        let u: Vec<_> = batch.iter().map(|b| b.u).collect();
        let y: Vec<_> = batch.iter().map(|b| b.sbp).collect();
        model.scaler = FeatureScaler::fit(&u, &y).unwrap();
        let adv: Vec<Tensor> =
            batch.iter().map(|b| b.x_tensor().map(|v| v + 0.05 * (7.0 * v).sin())).collect();

        let obj = build_objective(&model, &batch, Some(&adv), &cfg, true).unwrap();
        let grads = obj.graph.backward(obj.total).unwrap();
        let mut check = |what: String, analytic: Vec<f64>, numeric: Vec<f64>| {
            let e = max_relative_error(&analytic, &numeric);
            if e > worst {
                worst = e;
                worst_at = what;
            }
        };

        let names = model.param_names();
        for (k, id) in obj.binding.param_ids().iter().enumerate() {
            let analytic = grads.get(id.expect("every parameter is bound")).into_data();
            let base = model.params()[k].data().to_vec();
            let numeric = numerical_gradient(
                &mut |w| {
                    let mut m = model.clone();
                    m.params_mut()[k].data_mut().copy_from_slice(w);
                    build_objective(&m, &batch, Some(&adv), &cfg, false).unwrap().breakdown.l_total
                },
                &base,
                DEFAULT_STEP,
            );
            check(format!("instance {inst} {}", names[k]), analytic, numeric);
        }
        for i in 0..batch.len() {
            let numeric = numerical_gradient(
                &mut |x| {
                    let mut b = batch.clone();
                    b[i].x.copy_from_slice(x);
                    build_objective(&model, &b, Some(&adv), &cfg, false).unwrap().breakdown.l_total
                },
                &batch[i].x,
                DEFAULT_STEP,
            );
            check(format!("instance {inst} grad_x[{i}]"), grads.get(obj.x[i]).into_data(), numeric);
            let numeric = numerical_gradient(
                &mut |v| {
                    let mut b = batch.clone();
                    b[i].u.copy_from_slice(v);
                    build_objective(&model, &b, Some(&adv), &cfg, false).unwrap().breakdown.l_total
                },
                &batch[i].u,
                DEFAULT_STEP,
            );
            check(format!("instance {inst} grad_u[{i}]"), grads.get(obj.u[i]).into_data(), numeric);
        }
    }
    let secs = start.elapsed().as_secs_f64();
    verdict(
        1,
        "gradient correctness",
        worst < 1e-4 && secs < 60.0,
        format!("worst relative error {worst:.2e} ({worst_at}), limit 1e-4; {secs:.1} s, limit 60 s"),
    );
}

/// Central-difference Taylor oracle written as a plain loop over pairs.
fn residual_oracle(model: &ModelState, beats: &[BeatRecord]) -> f64 {
    let f = |b: &BeatRecord, u: &[f64]| model.predict_one(&b.x_tensor(), &Tensor::vector(u.to_vec())).unwrap();
    let mut total = 0.0;
    for i in 0..beats.len() - 1 {
        let (a, b) = (&beats[i], &beats[i + 1]);
        let grad = numerical_gradient(&mut |u| f(a, u), &a.u, 1e-5);
        let mut taylor = f(a, &a.u);
        for k in 0..3 {
            taylor += grad[k] * (b.u[k] - a.u[k]);
        }
        let h = taylor - f(b, &b.u);
        total += h * h;
    }
    total / (beats.len() - 1) as f64
}

#[test]
fn c2_physics_residual_exactness() {
    let _g = serial();
    let t = 32;
    let cfg = ModelConfig { d_model: 6, seq_len: t, ..ModelConfig::default() };
    let mut affine_worst: f64 = 0.0;
    for trial in 0..50u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(2000 + trial);
        let mut model = ModelState::init(cfg.clone(), trial).unwrap();
        for p in model.params_mut() {
            p.data_mut().fill(0.0);
        }
        let d = cfg.d_model;
        for k in 0..3 {
            model.head_w.data_mut()[d + k] = rng.gen_range(-2.0..2.0);
        }
        model.head_b.data_mut()[0] = rng.gen_range(-1.0..1.0);
        model.scaler.u_mean = vec![1.0, 6.0, 80.0];
        model.scaler.u_std = vec![0.1, 0.5, 5.0];
        let n = rng.gen_range(2..10);
        let beats = random_beats(&mut rng, n, t);
        affine_worst = affine_worst.max(physics_residual_value(&model, &beats, LnRoute::Primary).unwrap());
    }

    let mut oracle_worst: f64 = 0.0;
    for trial in 0..5u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(2100 + trial);
        let mut model = ModelState::init(cfg.clone(), 100 + trial).unwrap();
        model.scaler.u_mean = vec![1.0, 6.0, 80.0];
        model.scaler.u_std = vec![0.1, 0.5, 5.0];
        let beats = random_beats(&mut rng, 5, t);
        let module = physics_residual_value(&model, &beats, LnRoute::Primary).unwrap();
        let oracle = residual_oracle(&model, &beats);
        oracle_worst = oracle_worst.max((module - oracle).abs() / oracle.abs().max(1e-300));
    }
    verdict(
        2,
        "physics-residual exactness",
        affine_worst < 1e-20 && oracle_worst <= 1e-3,
        format!(
            "affine-head residual max {affine_worst:.1e} (limit 1e-20); explicit-loop oracle relative gap {oracle_worst:.1e} (limit 1e-3)"
        ),
    );
}

#[test]
fn c3_pgd_constraints() {
    let _g = serial();
    let t = 32;
    let models: Vec<ModelState> = (0..4)
        .map(|s| ModelState::init(ModelConfig { d_model: 8, seq_len: t, ..ModelConfig::default() }, s).unwrap())
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(3000);
    let (mut violations, mut mismatches, mut worst_gap) = (0usize, 0usize, 0.0f64);
    for i in 0..1000u64 {
        let beats = random_beats(&mut rng, 4, t);
        let bounds = compute_domain(&beats).unwrap();
        let b = &beats[(i % 4) as usize];
        let cfg = PgdConfig { epsilon: 0.2, seed: rng.gen(), grad_at_current: i % 3 == 0, ..PgdConfig::default() };
        let model = &models[(i % 4) as usize];
        let adv = pgd_generate(&b.x_tensor(), &b.u_tensor(), model, &bounds, &cfg, i).unwrap();
        for (a, c) in adv.data().iter().zip(&b.x) {
            worst_gap = worst_gap.max((a - c).abs());
            if !(bounds.lo[0] <= *a && *a <= bounds.hi[0]) || (a - c).abs() > 0.2 + 1e-12 {
                violations += 1;
            }
        }
        let again = pgd_generate(&b.x_tensor(), &b.u_tensor(), model, &bounds, &cfg, i).unwrap();
        if again.data().iter().zip(adv.data()).any(|(p, q)| p.to_bits() != q.to_bits()) {
            mismatches += 1;
        }
    }
    verdict(
        3,
        "PGD constraints",
        violations == 0 && mismatches == 0,
        format!(
            "1000 generations at epsilon 0.2: {violations} bound violations, max |x_adv - x| {worst_gap:.4}, {mismatches} non-identical reruns"
        ),
    );
}

fn leaves(g: &mut Graph, rows: &[Vec<f64>]) -> Vec<NodeId> {
    rows.iter().map(|r| g.leaf(Tensor::vector(r.clone()), true).unwrap()).collect()
}

#[test]
fn c4_contrastive_oracle() {
    let _g = serial();
    let expected = -(1f64.exp() / (1f64.exp() + 1.0)).ln();
    let mut g = Graph::new();
    let e = [vec![1.0, 0.0], vec![0.0, 1.0]];
    let a = leaves(&mut g, &e);
    let v = leaves(&mut g, &e);
    let cfg = ContrastiveConfig { y_shift: 1.0, tau: 1.0, normalize: true };
    let l = contrastive(&mut g, &a, &v, &[100.0, 110.0], &[100.0, 110.0], &cfg).unwrap();
    let per_anchor = g.value(l).item() / 2.0;
    let gap = (per_anchor - expected).abs();

    let mut g = Graph::new();
    let a = leaves(&mut g, &[vec![0.3, -0.2, 0.9], vec![1.0, 0.5, 0.1]]);
    let v = leaves(&mut g, &[vec![0.7, 0.1, 0.2], vec![-0.4, 0.8, 0.3]]);
    let cfg = ContrastiveConfig { y_shift: 2.0, ..ContrastiveConfig::default() };
    let l = contrastive(&mut g, &a, &v, &[100.0, 120.0], &[140.0, 160.0], &cfg).unwrap();
    let empty = g.value(l).item();
    verdict(
        4,
        "contrastive oracle",
        gap <= 1e-9 && empty == 0.0,
        format!("per-anchor loss {per_anchor:.12} vs -log(e/(e+1)) {expected:.12} (gap {gap:.1e}, limit 1e-9); empty-positive loss {empty}"),
    );
}

#[test]
fn c5_period_detection() {
    let _g = serial();
    let mut wrong = Vec::new();
    for k in [2usize, 4, 8, 16] {
        let x: Vec<f64> = (0..128).map(|i| (2.0 * std::f64::consts::PI * (k * i) as f64 / 128.0).sin()).collect();
        let info = detect_period(&Tensor::new(vec![128, 1], x).unwrap()).unwrap();
        if info.freq != k || info.period != 128usize.div_ceil(k) {
            wrong.push(format!("k={k} gave f={} p={}", info.freq, info.period));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(5000);
    let mut broken = 0;
    for _ in 0..500 {
        let t = rng.gen_range(1..300);
        let f = rng.gen_range(1..=t);
        let d = rng.gen_range(1..5);
        let x = Tensor::new(vec![t, d], (0..t * d).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
        let back = unfold(&fold(&x, t.div_ceil(f), f).unwrap(), t).unwrap();
        if back != x {
            broken += 1;
        }
    }
    verdict(
        5,
        "period detection",
        wrong.is_empty() && broken == 0,
        format!("sines k in {{2,4,8,16}} over T=128: {} wrong {wrong:?}; fold/unfold: {broken} of 500 failed", wrong.len()),
    );
}

#[test]
fn c6_metric_identities() {
    let _g = serial();
    let mut rng = ChaCha8Rng::seed_from_u64(6000);
    let (mut identity, mut affine, mut oracle) = (0.0f64, 0.0f64, 0.0f64);
    for _ in 0..200 {
        let n = rng.gen_range(3..200);
        let truth: Vec<f64> = (0..n).map(|_| rng.gen_range(80.0..160.0)).collect();
        let pred: Vec<f64> = truth.iter().map(|t| t + rng.gen_range(-10.0..12.0)).collect();
        let r = rmse(&pred, &truth).unwrap();
        let (me, sde) = me_sde(&pred, &truth).unwrap();
        identity = identity.max((r * r - (me * me + sde * sde)).abs());

        let a = rng.gen_range(-3.0..3.0);
        let b = rng.gen_range(-50.0..50.0);
        let moved: Vec<f64> = pred.iter().map(|p| a * p + b).collect();
        let base = pearson(&pred, &truth).unwrap().unwrap();
        affine = affine.max((pearson(&moved, &truth).unwrap().unwrap() - a.signum() * base).abs());

        let nf = n as f64;
        let (mut se, mut se_sum, mut sp, mut st) = (0.0, 0.0, 0.0, 0.0);
        for i in 0..n {
            se += (pred[i] - truth[i]) * (pred[i] - truth[i]);
            se_sum += pred[i] - truth[i];
            sp += pred[i];
            st += truth[i];
        }
        let naive_me = se_sum / nf;
        let (mut var, mut num, mut dp, mut dt) = (0.0, 0.0, 0.0, 0.0);
        for i in 0..n {
            let e = pred[i] - truth[i] - naive_me;
            var += e * e;
            num += (pred[i] - sp / nf) * (truth[i] - st / nf);
            dp += (pred[i] - sp / nf) * (pred[i] - sp / nf);
            dt += (truth[i] - st / nf) * (truth[i] - st / nf);
        }
        let report = MetricsReport::compute(&pred, &truth).unwrap();
        for (got, want) in [
            (report.rmse, (se / nf).sqrt()),
            (report.me, naive_me),
            (report.sde, (var / nf).sqrt()),
            (report.pearson_r.unwrap(), num / (dp * dt).sqrt()),
        ] {
            oracle = oracle.max((got - want).abs());
        }
    }
    verdict(
        6,
        "metrics identities",
        identity <= 1e-10 && affine <= 1e-10 && oracle <= 1e-10,
        format!("rmse^2 - (ME^2 + SDE^2) max {identity:.1e}; affine pearson gap {affine:.1e}; naive-loop gap {oracle:.1e} (limits 1e-10)"),
    );
}

fn affine_subject(n_beats: usize, fixed_len: usize, seed: u64) -> Vec<BeatRecord> {
    let cfg = SynthConfig { n_beats, seed, bp_map: BpMap::default().affine(), ..SynthConfig::default() };
    let out = generate(&cfg).unwrap();
    prepare_recording(&out.recording, fixed_len).unwrap().beats
}

#[test]
fn c7_synthetic_end_to_end() {
    let _g = serial();
    let beats = affine_subject(500, 128, 0);
    let mut lines = Vec::new();
    let mut pass = true;
    for bp in BpType::ALL {
        let split = minimal_split(&beats, bp, 0.5, 0).unwrap();
        let cfg = TrainConfig { bp_type: bp, ..TrainConfig::default() };
        assert_eq!((cfg.gamma, cfg.y_shift, cfg.pgd.epsilon, cfg.pgd.steps, cfg.learning_rate), (1.0, 2.0, 0.2, 2, 1e-3));
        let start = Instant::now();
        let out = train_subject(&beats, &split, &cfg).unwrap();
        let secs = start.elapsed().as_secs_f64();
        let test: Vec<BeatRecord> = split.test_indices.iter().map(|&i| beats[i].clone()).collect();
        let (_, m) = evaluate(&test, &out.model, bp).unwrap();
        let r = m.pearson_r.unwrap_or(f64::NAN);
        let ok = r >= 0.9 && m.rmse <= 3.0 && out.log.len() <= 200 && secs <= 300.0;
        pass &= ok;
        lines.push(format!(
            "{bp} r {r:.3} (>= 0.9), RMSE {:.2} mmHg (<= 3), {} epochs, {secs:.0} s (<= 300), {} train / {} test",
            m.rmse,
            out.log.len(),
            split.train_indices.len(),
            split.test_indices.len()
        ));
    }
    verdict(7, "synthetic end-to-end", pass, lines.join("; "));
}

#[test]
fn c8_ablation_direction() {
    let _g = serial();
    let start = Instant::now();
    let (mut full, mut base) = (Vec::new(), Vec::new());
    for seed in 0..10u64 {
        let beats = affine_subject(300, 64, 100 + seed);
        let split = minimal_split(&beats, BpType::Sbp, 0.5, seed).unwrap();
        let test: Vec<BeatRecord> = split.test_indices.iter().map(|&i| beats[i].clone()).collect();
        let cfg = TrainConfig {
            seed,
            model: ModelConfig { d_model: 16, seq_len: 64, ..ModelConfig::default() },
            ..TrainConfig::default()
        };
        for (cfg, sink) in [(cfg.clone(), &mut full), (cfg.base(), &mut base)] {
            let out = train_subject(&beats, &split, &cfg).unwrap();
            sink.push(evaluate(&test, &out.model, BpType::Sbp).unwrap().1.pearson_r.unwrap_or(0.0));
        }
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let tt = paired_ttest(&full, &base).unwrap();
    verdict(
        8,
        "ablation direction",
        mean(&full) >= mean(&base),
        format!(
            "mean Pearson r over 10 seeds: full {:.4}, base {:.4}; paired t {:.3}, p {:.4}, dof {}; {:.0} s",
            mean(&full),
            mean(&base),
            tt.statistic,
            tt.p_value,
            tt.dof,
            start.elapsed().as_secs_f64()
        ),
    );
}

fn pitn(args: &[&str]) -> bool {
    let out = Command::new(env!("CARGO_BIN_EXE_pitn")).args(args).output().expect("binary runs");
    if !out.status.success() {
        eprintln!("{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    }
    out.status.success()
}

/// Set `PITN_REAL_DATA` to a directory of `<subject>.signal.csv` and
/// `<subject>.labels.csv` pairs to run this on real recordings; otherwise a
/// synthetic recording in the same format stands in.
#[test]
fn c9_csv_recordings_end_to_end() {
    let _g = serial();
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let s = |n: &str| d.join(n).display().to_string();
    let (raw, source, quick) = match std::env::var("PITN_REAL_DATA") {
        Ok(dir) => (dir, "supplied recordings", vec![]),
        Err(_) => {
            assert!(pitn(&["synth", "--n-beats", "80", "-o", &s("raw")]));
            (s("raw"), "synthetic stand-in (set PITN_REAL_DATA for real recordings)", vec!["--epochs", "5", "--d-model", "8"])
        }
    };
    let fixed_len = if quick.is_empty() { "128" } else { "64" };
    let (beats, splits, models) = (s("beats"), s("splits"), s("models"));
    let mut train = vec!["train", "-i", beats.as_str()];
    train.extend(["--splits", splits.as_str(), "-o", models.as_str()]);
    train.extend(quick.iter().copied());
    let ok = pitn(&["preprocess", "-i", &raw, "--fixed-len", fixed_len, "-o", &s("beats")])
        && pitn(&["split", "-i", &s("beats"), "-o", &splits])
        && pitn(&train)
        && pitn(&["eval", "-i", &s("beats"), "--splits", &splits, "--models", &models, "-o", &s("eval")])
        && pitn(&["report", "-i", &s("eval"), "--labels", "pitn", "-o", &s("report")]);
    let table = std::fs::read_to_string(Path::new(&s("report")).join("report.csv")).unwrap_or_default();
    let shaped = table.starts_with("bp_type,subject,pitn_corr,pitn_rmse")
        && table.lines().any(|l| l.starts_with("sbp,Avg"))
        && table.lines().any(|l| l.starts_with("dbp,Avg"));
    verdict(
        9,
        "CSV recordings end-to-end",
        ok && shaped,
        format!("{source}: pipeline {}, per-subject table with SBP/DBP averages {}", if ok { "completed" } else { "failed" }, if shaped { "present" } else { "missing" }),
    );
}
