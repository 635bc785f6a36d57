//! Sign-gradient adversarial beats clipped to the training domain, and the
//! time-reversal baseline.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::model::{LnRoute, ModelState};
use crate::signal::DomainBounds;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PgdConfig {
    /// ∞-norm budget.
    pub epsilon: f64,
    pub eta: f64,
    pub steps: usize,
    /// Standard deviation of the random start.
    pub sigma: f64,
    /// Project back onto the ε-ball after the last step.
    pub project_eps: bool,
    /// Take each step's gradient at the current iterate instead of at `x`.
    pub grad_at_current: bool,
    pub seed: u64,
}

impl Default for PgdConfig {
    fn default() -> Self {
        Self {
            epsilon: 0.2,
            eta: 0.1,
            steps: 2,
            sigma: 0.01,
            project_eps: true,
            grad_at_current: false,
            seed: 0,
        }
    }
}

impl PgdConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon >= 0.0) || !self.epsilon.is_finite() {
            return Err(Error::Config(format!("epsilon must be >= 0, got {}", self.epsilon)));
        }
        if self.steps == 0 {
            return Err(Error::Config("pgd needs at least one step".into()));
        }
        if !(self.eta >= 0.0) || !self.eta.is_finite() {
            return Err(Error::Config(format!("eta must be >= 0, got {}", self.eta)));
        }
        if !(self.sigma >= 0.0) || !self.sigma.is_finite() {
            return Err(Error::Config(format!("sigma must be >= 0, got {}", self.sigma)));
        }
        Ok(())
    }
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn clip(x: &mut [f64], channels: usize, bounds: &DomainBounds) {
    for (k, v) in x.iter_mut().enumerate() {
        let c = k % channels;
        *v = v.clamp(bounds.lo[c], bounds.hi[c]);
    }
}

/// Perturb one beat `x[T×C]` by sign-gradient ascent on the model output
/// under the auxiliary route. `stream` selects an independent noise stream
/// so beats can be generated in any order.
pub fn pgd_generate(
    x: &Tensor,
    u: &Tensor,
    model: &ModelState,
    bounds: &DomainBounds,
    cfg: &PgdConfig,
    stream: u64,
) -> Result<Tensor> {
    cfg.validate()?;
    bounds.validate()?;
    let (_, channels) = x.rows_cols();
    if bounds.lo.len() != channels {
        return Err(Error::shape("pgd", format!("{} bound channels for {channels}-channel input", bounds.lo.len())));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(stream);
    let mut adv = x.data().to_vec();
    if cfg.sigma > 0.0 {
        let normal = Normal::new(0.0, cfg.sigma).map_err(|e| Error::Config(e.to_string()))?;
        adv.iter_mut().for_each(|v| *v += normal.sample(&mut rng));
    }
    clip(&mut adv, channels, bounds);

    let mut grad = None;
    for _ in 0..cfg.steps {
        if cfg.grad_at_current || grad.is_none() {
            let at = if cfg.grad_at_current { Tensor::new(x.shape().to_vec(), adv.clone())? } else { x.clone() };
            grad = Some(model.grad_wrt_inputs(&at, u, LnRoute::Auxiliary)?.0);
        }
        let gx = grad.as_ref().expect("gradient computed above");
        adv.iter_mut().zip(gx.data()).for_each(|(v, &d)| *v += cfg.eta * sign(d));
        clip(&mut adv, channels, bounds);
    }
    if cfg.project_eps {
        adv.iter_mut()
            .zip(x.data())
            .for_each(|(v, &c)| *v = v.clamp(c - cfg.epsilon, c + cfg.epsilon));
        clip(&mut adv, channels, bounds);
    }
    Tensor::new(x.shape().to_vec(), adv)
}

/// Time-reversed copy of `x[T×C]`.
pub fn flip_waveform(x: &Tensor) -> Tensor {
    let (t, c) = x.rows_cols();
    let mut out = Vec::with_capacity(t * c);
    for row in x.data().chunks(c.max(1)).rev() {
        out.extend_from_slice(row);
    }
    Tensor::new(vec![t, c], out).expect("same element count")
}
