use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

#[derive(Clone, Debug, Default)]
struct Moments {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

/// Adaptive-moment optimizer. Each parameter keeps its own step count, so a
/// parameter that receives no gradient in a step is left alone entirely.
#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f64,
    pub cfg: AdamConfig,
    state: Vec<Moments>,
}

impl Adam {
    pub fn new(lr: f64, cfg: AdamConfig) -> Self {
        Self { lr, cfg, state: Vec::new() }
    }

    /// Apply one update. `grads[i]` pairs with `params[i]`; `None` skips it.
    pub fn step(&mut self, params: Vec<&mut Tensor>, grads: &[Option<Tensor>]) {
        assert_eq!(params.len(), grads.len(), "one gradient slot per parameter");
        if self.state.len() < params.len() {
            self.state.resize(params.len(), Moments::default());
        }
        let AdamConfig { beta1, beta2, eps } = self.cfg;
        for ((p, g), st) in params.into_iter().zip(grads).zip(&mut self.state) {
            let Some(g) = g else { continue };
            if st.m.is_empty() {
                st.m = vec![0.0; p.len()];
                st.v = vec![0.0; p.len()];
            }
            st.t += 1;
            let c1 = 1.0 - beta1.powi(st.t);
            let c2 = 1.0 - beta2.powi(st.t);
            for (((w, &gi), m), v) in p.data_mut().iter_mut().zip(g.data()).zip(&mut st.m).zip(&mut st.v) {
                *m = beta1 * *m + (1.0 - beta1) * gi;
                *v = beta2 * *v + (1.0 - beta2) * gi * gi;
                *w -= self.lr * (*m / c1) / ((*v / c2).sqrt() + eps);
            }
        }
    }
}
