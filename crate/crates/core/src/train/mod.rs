//! Per-subject training, inference and evaluation.

mod adam;

use std::time::Instant;

use log::{debug, info, warn};
use serde::{Deserialize, Serialize};

pub use adam::{Adam, AdamConfig};

use crate::adversarial::{pgd_generate, PgdConfig};
use crate::autodiff::{Graph, NodeId, Tensor};
use crate::error::{Error, Result};
use crate::losses::{contrastive, mse, physics_residual, total_loss, ContrastiveConfig, LossBreakdown, LossParts, DEFAULT_TAU};
use crate::metrics::MetricsReport;
use crate::model::{Binding, FeatureScaler, LnRoute, ModelConfig, ModelState};
use crate::signal::{compute_domain, BeatRecord, BpType, SplitPlan};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    /// Stop after this many epochs without a lower clean regression loss;
    /// 0 never stops early.
    pub patience: usize,
    /// Weight of the physics residual.
    pub gamma: f64,
    /// Label distance in mmHg under which a clean/adversarial pair is a
    /// contrastive positive.
    pub y_shift: f64,
    pub tau: f64,
    pub normalize_embeddings: bool,
    /// Treat `∇_u f` as a constant inside the physics residual.
    pub stop_grad_physics: bool,
    pub use_adversarial: bool,
    pub use_contrastive: bool,
    /// Seeds the initialization and every PGD noise stream.
    pub seed: u64,
    pub bp_type: BpType,
    pub pgd: PgdConfig,
    pub adam: AdamConfig,
    pub model: ModelConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            epochs: 200,
            patience: 30,
            gamma: 1.0,
            y_shift: 2.0,
            tau: DEFAULT_TAU,
            normalize_embeddings: true,
            stop_grad_physics: false,
            use_adversarial: true,
            use_contrastive: true,
            seed: 0,
            bp_type: BpType::Sbp,
            pgd: PgdConfig::default(),
            adam: AdamConfig::default(),
            model: ModelConfig::default(),
        }
    }
}

impl TrainConfig {
    /// The base variant: no physics term, no adversarial samples, no
    /// contrastive term.
    pub fn base(mut self) -> Self {
        self.gamma = 0.0;
        self.use_adversarial = false;
        self.use_contrastive = false;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} must be positive, got {v}")))
            }
        };
        positive("learning_rate", self.learning_rate)?;
        positive("tau", self.tau)?;
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be positive".into()));
        }
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return Err(Error::Config(format!("gamma must be >= 0, got {}", self.gamma)));
        }
        if !(self.y_shift >= 0.0 && self.y_shift.is_finite()) {
            return Err(Error::Config(format!("y_shift must be >= 0, got {}", self.y_shift)));
        }
        let a = &self.adam;
        if !(0.0..1.0).contains(&a.beta1) || !(0.0..1.0).contains(&a.beta2) || !(a.eps > 0.0) {
            return Err(Error::Config("adam betas must lie in [0, 1) and eps must be positive".into()));
        }
        self.pgd.validate()?;
        self.model.validate()
    }

    fn needs_adversarial(&self) -> bool {
        self.use_adversarial || self.use_contrastive
    }

    pub fn contrastive(&self) -> ContrastiveConfig {
        ContrastiveConfig { y_shift: self.y_shift, tau: self.tau, normalize: self.normalize_embeddings }
    }
}

/// One objective evaluation on a graph, ready for `backward`.
pub struct Objective {
    pub graph: Graph,
    pub total: NodeId,
    pub breakdown: LossBreakdown,
    pub binding: Binding,
    /// Clean waveform nodes, one per beat.
    pub x: Vec<NodeId>,
    /// Feature nodes, one per beat.
    pub u: Vec<NodeId>,
}

/// Build the training objective for `batch` (sorted by `beat_index`) with
/// adversarial counterparts `adversarial[i]` of `batch[i]`. With
/// `input_grads` the clean waveforms and features are differentiable leaves.
pub fn build_objective(
    model: &ModelState,
    batch: &[BeatRecord],
    adversarial: Option<&[Tensor]>,
    cfg: &TrainConfig,
    input_grads: bool,
) -> Result<Objective> {
    if batch.is_empty() {
        return Err(Error::Usage("objective of an empty batch".into()));
    }
    let mut g = Graph::new();
    let binding = model.bind(&mut g, true, adversarial.is_some());
    let labels: Vec<f64> = batch.iter().map(|b| b.label(cfg.bp_type)).collect();
    let targets: Vec<f64> = labels.iter().map(|&y| model.scaler.to_target(y)).collect();

    let mut x = Vec::with_capacity(batch.len());
    let mut u = Vec::with_capacity(batch.len());
    let mut preds = Vec::with_capacity(batch.len());
    let mut emb = Vec::with_capacity(batch.len());
    for b in batch {
        let xn = g.leaf(b.x_tensor(), input_grads)?;
        let un = g.leaf(b.u_tensor(), input_grads)?;
        let out = model.forward(&mut g, &binding, xn, un, LnRoute::Primary)?;
        x.push(xn);
        u.push(un);
        preds.push(out.y);
        emb.push(out.embedding);
    }
    let pred = g.stack(&preds)?;
    let mut parts = LossParts { clean: Some(mse(&mut g, pred, &targets)?), ..LossParts::default() };

    if let Some(adv) = adversarial {
        if adv.len() != batch.len() {
            return Err(Error::shape("objective", "one adversarial sample per clean beat"));
        }
        let mut adv_preds = Vec::with_capacity(adv.len());
        let mut adv_emb = Vec::with_capacity(adv.len());
        for (xa, &un) in adv.iter().zip(&u) {
            let xn = g.constant(xa.clone());
            let out = model.forward(&mut g, &binding, xn, un, LnRoute::Auxiliary)?;
            adv_preds.push(out.y);
            adv_emb.push(out.embedding);
        }
        if cfg.use_adversarial {
            let p = g.stack(&adv_preds)?;
            parts.adv = Some(mse(&mut g, p, &targets)?);
        }
        if cfg.use_contrastive {
            parts.con = Some(contrastive(&mut g, &emb, &adv_emb, &labels, &labels, &cfg.contrastive())?);
        }
    }

    if batch.len() >= 2 {
        let gu = model.grad_u_node(&mut g, &binding, cfg.stop_grad_physics)?;
        let u_all = g.concat(&u)?;
        let idx: Vec<usize> = batch.iter().map(|b| b.beat_index).collect();
        parts.physics = Some(physics_residual(&mut g, pred, gu, u_all, &idx)?);
    } else {
        debug!("single training beat; physics term skipped");
    }

    let (total, breakdown) = total_loss(&mut g, parts, cfg.gamma, &cfg.contrastive())?;
    Ok(Objective { graph: g, total, breakdown, binding, x, u })
}

/// One line of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    #[serde(flatten)]
    pub losses: LossBreakdown,
    pub elapsed_ms: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model: ModelState,
    pub log: Vec<EpochLog>,
    pub stopped_early: bool,
}

fn check_beats(beats: &[BeatRecord], cfg: &ModelConfig, bp: BpType) -> Result<()> {
    for b in beats {
        if b.channels != cfg.channels || b.len() != cfg.seq_len {
            return Err(Error::Input(format!(
                "beat {} has {} samples x {} channels, the model expects {} x {}",
                b.beat_index,
                b.len(),
                b.channels,
                cfg.seq_len,
                cfg.channels
            )));
        }
        if !b.label(bp).is_finite() || b.u.iter().any(|v| !v.is_finite()) {
            return Err(Error::Input(format!("beat {} has a non-finite label or feature", b.beat_index)));
        }
    }
    Ok(())
}

/// Train one model on the training side of `split`.
pub fn train_subject(beats: &[BeatRecord], split: &SplitPlan, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    split.validate(beats.len())?;
    if split.bp_type != cfg.bp_type {
        return Err(Error::Config(format!(
            "split was drawn for {} but training targets {}",
            split.bp_type, cfg.bp_type
        )));
    }
    let mut train: Vec<BeatRecord> = split.train_indices.iter().map(|&i| beats[i].clone()).collect();
    if train.is_empty() {
        return Err(Error::Usage("no training beats".into()));
    }
    train.sort_by_key(|b| b.beat_index);
    check_beats(&train, &cfg.model, cfg.bp_type)?;

    let mut model = ModelState::init(cfg.model.clone(), cfg.seed)?;
    let u: Vec<_> = train.iter().map(|b| b.u).collect();
    let y: Vec<_> = train.iter().map(|b| b.label(cfg.bp_type)).collect();
    model.scaler = FeatureScaler::fit(&u, &y)?;
    let domain = compute_domain(&train)?;
    let pgd = PgdConfig { seed: cfg.seed, ..cfg.pgd.clone() };
    let mut opt = Adam::new(cfg.learning_rate, cfg.adam);

    let start = Instant::now();
    let mut log = Vec::with_capacity(cfg.epochs);
    let (mut best, mut since_best, mut stopped_early) = (f64::INFINITY, 0, false);
    for epoch in 0..cfg.epochs {
        let adv = if cfg.needs_adversarial() {
            let n = train.len() as u64;
            let v = train
                .iter()
                .enumerate()
                .map(|(i, b)| {
                    let stream = epoch as u64 * n + i as u64;
                    pgd_generate(&b.x_tensor(), &b.u_tensor(), &model, &domain, &pgd, stream)
                })
                .collect::<Result<Vec<_>>>()?;
            Some(v)
        } else {
            None
        };
        let obj = build_objective(&model, &train, adv.as_deref(), cfg, false)?;
        let grads = obj.graph.backward(obj.total)?;
        let slots: Vec<Option<Tensor>> = obj
            .binding
            .param_ids()
            .into_iter()
            .map(|id| id.map(|id| grads.get(id)))
            .collect();
        if let Some((k, _)) = slots.iter().enumerate().find(|(_, s)| s.as_ref().is_some_and(|t| !t.is_finite())) {
            return Err(Error::NonFinite(format!("gradient of {}", model.param_names()[k])));
        }
        opt.step(model.params_mut(), &slots);

        let losses = obj.breakdown;
        debug!(
            "epoch {epoch}: total {:.6} clean {:.6} adv {:.6} con {:.6} phys {:.6}",
            losses.l_total, losses.l_clean, losses.l_adv, losses.l_con, losses.l_physics
        );
        log.push(EpochLog { epoch, losses, elapsed_ms: start.elapsed().as_secs_f64() * 1e3 });
        if losses.l_clean < best {
            best = losses.l_clean;
            since_best = 0;
        } else {
            since_best += 1;
            if cfg.patience > 0 && since_best >= cfg.patience {
                warn!("clean training loss has not improved for {since_best} epochs; stopping at epoch {epoch}");
                stopped_early = true;
                break;
            }
        }
    }
    info!(
        "trained {} on {} beats for {} epochs in {:.1}s",
        cfg.bp_type,
        train.len(),
        log.len(),
        start.elapsed().as_secs_f64()
    );
    Ok(TrainOutcome { model, log, stopped_early })
}

/// Predicted labels in mmHg, primary route only.
pub fn predict(beats: &[BeatRecord], model: &ModelState) -> Result<Vec<f64>> {
    beats
        .iter()
        .map(|b| Ok(model.scaler.from_target(model.predict_one(&b.x_tensor(), &b.u_tensor())?)))
        .collect()
}

/// Metrics of `model` on `beats` against their `bp` labels.
pub fn evaluate(beats: &[BeatRecord], model: &ModelState, bp: BpType) -> Result<(Vec<f64>, MetricsReport)> {
    let pred = predict(beats, model)?;
    let truth: Vec<f64> = beats.iter().map(|b| b.label(bp)).collect();
    let report = MetricsReport::compute(&pred, &truth)?;
    Ok((pred, report))
}

/// The training log as JSON lines.
pub fn log_to_jsonl(log: &[EpochLog]) -> Result<String> {
    let mut out = String::new();
    for rec in log {
        out.push_str(&serde_json::to_string(rec)?);
        out.push('\n');
    }
    Ok(out)
}

#[cfg(test)]
mod tests;
