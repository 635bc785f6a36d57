use super::*;
use crate::gradcheck::{max_relative_error, numerical_gradient, DEFAULT_STEP};
use crate::signal::minimal_split;
use crate::synth::{generate, BpMap, SynthConfig};

fn subject(n_beats: usize, seed: u64) -> Vec<BeatRecord> {
    let cfg = SynthConfig { n_beats, fixed_len: 32, seed, ..SynthConfig::default() };
    generate(&cfg).unwrap().beats
}

fn affine_subject(n_beats: usize) -> Vec<BeatRecord> {
    let mut cfg = SynthConfig { n_beats, fixed_len: 32, ..SynthConfig::default() };
    cfg.bp_map = BpMap::default().affine();
    generate(&cfg).unwrap().beats
}

fn small(epochs: usize) -> TrainConfig {
    TrainConfig {
        epochs,
        model: ModelConfig { d_model: 8, seq_len: 32, ..ModelConfig::default() },
        ..TrainConfig::default()
    }
}

#[test]
fn same_seed_gives_identical_runs() {
    let beats = subject(60, 1);
    let split = minimal_split(&beats, BpType::Sbp, 0.5, 0).unwrap();
    let cfg = small(4);
    let a = train_subject(&beats, &split, &cfg).unwrap();
    let b = train_subject(&beats, &split, &cfg).unwrap();
    assert_eq!(a.model, b.model);
    let la: Vec<_> = a.log.iter().map(|r| r.losses).collect();
    let lb: Vec<_> = b.log.iter().map(|r| r.losses).collect();
    assert_eq!(la, lb);
    let c = train_subject(&beats, &split, &TrainConfig { seed: 1, ..cfg }).unwrap();
    assert_ne!(a.model, c.model);
}

#[test]
fn plain_regression_loss_decreases() {
    let beats = affine_subject(80);
    let split = minimal_split(&beats, BpType::Sbp, 0.5, 0).unwrap();
    let mut cfg = small(10);
    cfg.gamma = 0.0;
    cfg.y_shift = 0.0;
    cfg.pgd.epsilon = 0.0;
    let out = train_subject(&beats, &split, &cfg).unwrap();
    assert_eq!(out.log.len(), 10);
    for w in out.log.windows(2) {
        assert!(w[1].losses.l_total < w[0].losses.l_total, "{:?}", out.log);
        assert_eq!(w[1].losses.l_con, 0.0);
    }
}

#[test]
fn single_training_beat_skips_physics() {
    let beats = subject(20, 2);
    let split = SplitPlan {
        bp_type: BpType::Sbp,
        bin_width_mmhg: 0.5,
        seed: 0,
        train_indices: vec![3],
        test_indices: (0..beats.len()).filter(|&i| i != 3).collect(),
    };
    let out = train_subject(&beats, &split, &small(3)).unwrap();
    assert_eq!(out.log.len(), 3);
    assert!(out.log.iter().all(|r| r.losses.l_physics == 0.0));
    assert!(out.model.is_finite());
}

#[test]
fn evaluation_never_touches_auxiliary() {
    let beats = subject(40, 3);
    let split = minimal_split(&beats, BpType::Dbp, 0.5, 0).unwrap();
    let cfg = TrainConfig { bp_type: BpType::Dbp, ..small(2) };
    let out = train_subject(&beats, &split, &cfg).unwrap();
    let before = out.model.auxiliary_accesses();
    assert!(before > 0);
    let test: Vec<_> = split.test_indices.iter().map(|&i| beats[i].clone()).collect();
    let (pred, report) = evaluate(&test, &out.model, BpType::Dbp).unwrap();
    assert_eq!(pred.len(), test.len());
    assert_eq!(report.n_test, test.len());
    assert_eq!(out.model.auxiliary_accesses(), before);
}

#[test]
fn mismatched_split_type_rejected() {
    let beats = subject(20, 4);
    let split = minimal_split(&beats, BpType::Sbp, 0.5, 0).unwrap();
    let cfg = TrainConfig { bp_type: BpType::Dbp, ..small(1) };
    assert!(matches!(train_subject(&beats, &split, &cfg), Err(Error::Config(_))));
}

#[test]
fn wrong_beat_length_rejected() {
    let beats = subject(20, 5);
    let split = minimal_split(&beats, BpType::Sbp, 0.5, 0).unwrap();
    let mut cfg = small(1);
    cfg.model.seq_len = 64;
    assert!(matches!(train_subject(&beats, &split, &cfg), Err(Error::Input(_))));
}

#[test]
fn invalid_config_rejected() {
    for cfg in [
        TrainConfig { learning_rate: 0.0, ..TrainConfig::default() },
        TrainConfig { tau: -1.0, ..TrainConfig::default() },
        TrainConfig { epochs: 0, ..TrainConfig::default() },
        TrainConfig { gamma: f64::NAN, ..TrainConfig::default() },
    ] {
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    }
}

#[test]
fn log_lines_parse_back() {
    let beats = subject(30, 6);
    let split = minimal_split(&beats, BpType::Sbp, 0.5, 0).unwrap();
    let out = train_subject(&beats, &split, &small(2)).unwrap();
    let text = log_to_jsonl(&out.log).unwrap();
    let lines: Vec<_> = text.lines().collect();
    assert_eq!(lines.len(), 2);
    let back: EpochLog = serde_json::from_str(lines[1]).unwrap();
    assert_eq!(back.losses, out.log[1].losses);
    assert!(lines[0].contains("\"l_physics\""));
}

#[test]
fn objective_parameter_gradients_match_finite_differences() {
    let beats = subject(6, 7);
    let batch: Vec<BeatRecord> = beats[..4].to_vec();
    let cfg = TrainConfig { y_shift: 30.0, tau: 0.5, ..small(1) };
    let mut model = ModelState::init(cfg.model.clone(), 7).unwrap();
    let u: Vec<_> = batch.iter().map(|b| b.u).collect();
    let y: Vec<_> = batch.iter().map(|b| b.sbp).collect();
    model.scaler = FeatureScaler::fit(&u, &y).unwrap();
    let adv: Vec<Tensor> = batch
        .iter()
        .map(|b| b.x_tensor().map(|v| v + 0.05 * (v * 7.0).sin()))
        .collect();

    let obj = build_objective(&model, &batch, Some(&adv), &cfg, false).unwrap();
    assert!(obj.breakdown.l_con > 0.0 && obj.breakdown.l_physics > 0.0);
    let grads = obj.graph.backward(obj.total).unwrap();
    let ids = obj.binding.param_ids();
    let names = model.param_names();
    for (k, id) in ids.iter().enumerate() {
        let analytic = grads.get(id.unwrap()).into_data();
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
        let err = max_relative_error(&analytic, &numeric);
        assert!(err < 1e-4, "{}: {err}", names[k]);
    }
}
