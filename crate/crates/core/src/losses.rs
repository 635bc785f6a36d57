//! Loss terms: squared error, the first-order Taylor residual between
//! consecutive beats, and the threshold-paired contrastive loss.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, NodeId, Tensor};
use crate::error::{Error, Result};
use crate::model::{LnRoute, ModelState};
use crate::signal::BeatRecord;

/// Default contrastive temperature.
pub const DEFAULT_TAU: f64 = 0.07;

/// Added under the square root when normalizing embeddings.
const NORM_EPS: f64 = 1e-12;

/// Mean squared error of a prediction vector against constant targets.
pub fn mse(g: &mut Graph, pred: NodeId, target: &[f64]) -> Result<NodeId> {
    if target.is_empty() {
        return Err(Error::Usage("mse of an empty batch".into()));
    }
    if g.value(pred).len() != target.len() {
        return Err(Error::shape(
            "mse",
            format!("{} predictions vs {} targets", g.value(pred).len(), target.len()),
        ));
    }
    let t = g.constant(Tensor::new(g.value(pred).shape().to_vec(), target.to_vec())?);
    let diff = g.sub(pred, t)?;
    let sq = g.mul(diff, diff)?;
    g.mean(sq)
}

/// Mean of `h_i²` over consecutive pairs, where
/// `h_i = f_i + ∇_u f_i · (u_{i+1} - u_i) - f_{i+1}`.
///
/// `pred` holds `f` for beats sorted by `beat_index`, `u` their features
/// row by row (`N·M` values) and `grad_u` the shared feature gradient.
/// Fails on fewer than two beats or unsorted indices.
pub fn physics_residual(
    g: &mut Graph,
    pred: NodeId,
    grad_u: NodeId,
    u: NodeId,
    beat_index: &[usize],
) -> Result<NodeId> {
    let n = beat_index.len();
    let m = g.value(grad_u).len();
    if n < 2 {
        return Err(Error::Usage(format!("physics residual needs two beats, got {n}")));
    }
    if g.value(pred).len() != n || g.value(u).len() != n * m {
        return Err(Error::shape("physics_residual", "predictions, features and indices differ in length"));
    }
    if let Some(w) = beat_index.windows(2).find(|w| w[1] <= w[0]) {
        return Err(Error::Usage(format!(
            "physics residual needs beats in index order, found {} before {}",
            w[0], w[1]
        )));
    }
    let u_head = g.slice(u, 0, (n - 1) * m)?;
    let u_tail = g.slice(u, m, (n - 1) * m)?;
    let du = g.sub(u_tail, u_head)?;
    let du = g.reshape(du, vec![n - 1, m])?;
    let gu = g.reshape(grad_u, vec![m, 1])?;
    let step = g.matmul(du, gu)?;
    let step = g.reshape(step, vec![n - 1])?;
    let head = g.slice(pred, 0, n - 1)?;
    let tail = g.slice(pred, 1, n - 1)?;
    let ahead = g.add(head, step)?;
    let h = g.sub(ahead, tail)?;
    let sq = g.mul(h, h)?;
    g.mean(sq)
}

/// Residual of `model` over `beats` (sorted by `beat_index`) in
/// standardized-label units.
pub fn physics_residual_value(model: &ModelState, beats: &[BeatRecord], route: LnRoute) -> Result<f64> {
    let mut g = Graph::new();
    let bind = model.bind(&mut g, false, route == LnRoute::Auxiliary);
    let mut preds = Vec::with_capacity(beats.len());
    for b in beats {
        let x = g.constant(b.x_tensor());
        let u = g.constant(b.u_tensor());
        preds.push(model.forward(&mut g, &bind, x, u, route)?.y);
    }
    let pred = g.stack(&preds)?;
    let gu = model.grad_u_node(&mut g, &bind, true)?;
    let u = g.constant(Tensor::vector(beats.iter().flat_map(|b| b.u).collect()));
    let idx: Vec<_> = beats.iter().map(|b| b.beat_index).collect();
    let r = physics_residual(&mut g, pred, gu, u, &idx)?;
    Ok(g.value(r).item())
}

/// Indices `p` of adversarial samples with `|y_adv[p] - y_anchor| < y_shift`.
pub fn positives(y_anchor: f64, y_adv: &[f64], y_shift: f64) -> Vec<usize> {
    y_adv
        .iter()
        .enumerate()
        .filter(|(_, &y)| (y - y_anchor).abs() < y_shift)
        .map(|(i, _)| i)
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContrastiveConfig {
    pub y_shift: f64,
    pub tau: f64,
    /// Compare unit-length embeddings instead of raw ones.
    pub normalize: bool,
}

impl Default for ContrastiveConfig {
    fn default() -> Self {
        Self { y_shift: 2.0, tau: DEFAULT_TAU, normalize: true }
    }
}

fn unit(g: &mut Graph, z: NodeId) -> Result<NodeId> {
    let sq = g.dot(z, z)?;
    let sq = g.affine(sq, vec![1.0], vec![NORM_EPS])?;
    let norm = g.sqrt(sq)?;
    let inv = g.recip(norm)?;
    g.mul_scalar(z, inv)
}

/// Sum over clean anchors of `-1/|P(i)| Σ_{p∈P(i)} log softmax_a(z_i·z_a/τ)_p`
/// where `a` ranges over every adversarial embedding and `P(i)` holds the
/// adversarial samples within `y_shift` of the anchor's label. Anchors
/// without positives contribute nothing.
pub fn contrastive(
    g: &mut Graph,
    anchors: &[NodeId],
    adversarial: &[NodeId],
    y_clean: &[f64],
    y_adv: &[f64],
    cfg: &ContrastiveConfig,
) -> Result<NodeId> {
    if !(cfg.tau > 0.0) {
        return Err(Error::Config(format!("contrastive temperature must be positive, got {}", cfg.tau)));
    }
    if anchors.len() != y_clean.len() || adversarial.len() != y_adv.len() {
        return Err(Error::shape("contrastive", "embeddings and labels differ in count"));
    }
    let pos: Vec<Vec<usize>> = y_clean.iter().map(|&y| positives(y, y_adv, cfg.y_shift)).collect();
    if pos.iter().all(Vec::is_empty) {
        return Ok(g.constant(Tensor::scalar(0.0)));
    }
    let d = g.value(adversarial[0]).len();
    let prep = |g: &mut Graph, z: NodeId| if cfg.normalize { unit(g, z) } else { Ok(z) };
    let adv: Vec<NodeId> = adversarial.iter().map(|&z| prep(g, z)).collect::<Result<_>>()?;
    let pool = g.concat(&adv)?;
    let pool = g.reshape(pool, vec![adv.len(), d])?;
    let mut terms = Vec::new();
    for (i, p) in pos.iter().enumerate() {
        if p.is_empty() {
            continue;
        }
        let zi = prep(g, anchors[i])?;
        let zi = g.reshape(zi, vec![d, 1])?;
        let logits = g.matmul(pool, zi)?;
        let logits = g.reshape(logits, vec![adv.len()])?;
        let logits = g.scale(logits, 1.0 / cfg.tau)?;
        let lse = g.log_sum_exp(logits)?;
        let mut mask = vec![0.0; adv.len()];
        p.iter().for_each(|&k| mask[k] = 1.0 / p.len() as f64);
        let mask = g.constant(Tensor::vector(mask));
        let mean_pos = g.dot(logits, mask)?;
        terms.push(g.sub(lse, mean_pos)?);
    }
    let all = g.stack(&terms)?;
    g.sum(all)
}

/// Values of every term of one objective evaluation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l_clean: f64,
    pub l_adv: f64,
    pub l_con: f64,
    pub l_physics: f64,
    pub l_total: f64,
    pub gamma: f64,
    pub y_shift: f64,
    pub tau: f64,
}

/// Graph nodes of the four terms; absent terms count as zero.
#[derive(Clone, Copy, Debug, Default)]
pub struct LossParts {
    pub clean: Option<NodeId>,
    pub adv: Option<NodeId>,
    pub con: Option<NodeId>,
    pub physics: Option<NodeId>,
}

/// `clean + adv + con + gamma · physics` as a node, plus the breakdown.
/// A non-finite term is an error that names it.
pub fn total_loss(
    g: &mut Graph,
    parts: LossParts,
    gamma: f64,
    con_cfg: &ContrastiveConfig,
) -> Result<(NodeId, LossBreakdown)> {
    let named = [
        ("clean", parts.clean),
        ("adversarial", parts.adv),
        ("contrastive", parts.con),
        ("physics", parts.physics),
    ];
    let mut vals = [0.0; 4];
    for (k, (name, node)) in named.iter().enumerate() {
        if let Some(n) = node {
            let v = g.value(*n).item();
            if !v.is_finite() {
                return Err(Error::NonFinite(format!("{name} loss")));
            }
            vals[k] = v;
        }
    }
    if !gamma.is_finite() || gamma < 0.0 {
        return Err(Error::Config(format!("gamma must be finite and non-negative, got {gamma}")));
    }
    let mut acc: Option<NodeId> = None;
    for (k, (_, node)) in named.iter().enumerate() {
        let Some(n) = *node else { continue };
        let term = if k == 3 {
            if gamma == 0.0 {
                continue;
            }
            g.scale(n, gamma)?
        } else {
            n
        };
        acc = Some(match acc {
            None => term,
            Some(a) => g.add(a, term)?,
        });
    }
    let total = match acc {
        Some(a) => a,
        None => g.constant(Tensor::scalar(0.0)),
    };
    let breakdown = LossBreakdown {
        l_clean: vals[0],
        l_adv: vals[1],
        l_con: vals[2],
        l_physics: vals[3],
        l_total: g.value(total).item(),
        gamma,
        y_shift: con_cfg.y_shift,
        tau: con_cfg.tau,
    };
    Ok((total, breakdown))
}
