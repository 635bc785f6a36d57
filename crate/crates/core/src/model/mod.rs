//! The temporal network: embedding, residual period-folding blocks with
//! paired layer norms, mean pooling and a linear head over the pooled
//! embedding and the physiological features.

mod checkpoint;
mod period;

use std::sync::atomic::{AtomicUsize, Ordering};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use period::{detect_period, fold, unfold, PeriodInfo};

use crate::autodiff::{Graph, NodeId, Tensor, LAYER_NORM_EPS};
use crate::error::{Error, Result};
use crate::signal::NUM_FEATURES;

/// Which layer-norm parameter set a forward pass uses.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LnRoute {
    /// Clean samples and all inference.
    Primary,
    /// Adversarial samples during training.
    Auxiliary,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub d_model: usize,
    pub num_blocks: usize,
    pub kernel_sizes: Vec<usize>,
    pub seq_len: usize,
    pub channels: usize,
    pub num_features: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d_model: 32,
            num_blocks: 2,
            kernel_sizes: vec![1, 3, 5],
            seq_len: 128,
            channels: 1,
            num_features: NUM_FEATURES,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d_model == 0 || self.channels == 0 || self.num_features == 0 {
            return Err(Error::Config("d_model, channels and num_features must be positive".into()));
        }
        if self.seq_len < 4 {
            return Err(Error::Config(format!("seq_len must be at least 4, got {}", self.seq_len)));
        }
        if self.kernel_sizes.is_empty() {
            return Err(Error::Config("at least one kernel size is required".into()));
        }
        if let Some(k) = self.kernel_sizes.iter().find(|&&k| k % 2 == 0) {
            return Err(Error::Config(format!("kernel sizes must be odd, got {k}")));
        }
        Ok(())
    }

    /// Number of scalar parameters of a model with this configuration.
    pub fn parameter_count(&self) -> usize {
        let d = self.d_model;
        let kernels: usize = self.kernel_sizes.iter().map(|k| k * k * d * d).sum();
        self.channels * d + self.num_blocks * (4 * d + kernels) + d + self.num_features + 1
    }
}

/// Standardization of features and labels fitted on training data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureScaler {
    pub u_mean: Vec<f64>,
    pub u_std: Vec<f64>,
    pub y_mean: f64,
    pub y_std: f64,
}

impl FeatureScaler {
    pub fn identity(m: usize) -> Self {
        Self { u_mean: vec![0.0; m], u_std: vec![1.0; m], y_mean: 0.0, y_std: 1.0 }
    }

    /// Mean and population deviation of each column; zero spread maps to 1.
    pub fn fit(u: &[[f64; NUM_FEATURES]], y: &[f64]) -> Result<Self> {
        if u.is_empty() || u.len() != y.len() {
            return Err(Error::Usage("scaler needs matching, non-empty features and labels".into()));
        }
        let n = u.len() as f64;
        let stats = |vals: &mut dyn Iterator<Item = f64>| {
            let v: Vec<f64> = vals.collect();
            let m = v.iter().sum::<f64>() / n;
            let s = (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n).sqrt();
            (m, if s > 1e-12 * m.abs().max(1.0) { s } else { 1.0 })
        };
        let (u_mean, u_std) = (0..NUM_FEATURES)
            .map(|k| stats(&mut u.iter().map(|r| r[k])))
            .unzip();
        let (y_mean, y_std) = stats(&mut y.iter().copied());
        Ok(Self { u_mean, u_std, y_mean, y_std })
    }

    pub fn to_target(&self, y: f64) -> f64 {
        (y - self.y_mean) / self.y_std
    }

    pub fn from_target(&self, z: f64) -> f64 {
        z * self.y_std + self.y_mean
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerNormParams {
    pub gain: Tensor,
    pub bias: Tensor,
}

impl LayerNormParams {
    fn identity(d: usize) -> Self {
        Self { gain: Tensor::full(&[d], 1.0), bias: Tensor::zeros(&[d]) }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlockParams {
    pub primary: LayerNormParams,
    pub auxiliary: LayerNormParams,
    /// `[k, k, d, d]` per kernel size.
    pub kernels: Vec<Tensor>,
}

/// Counts how often the auxiliary layer norms are bound to a graph.
#[derive(Debug, Default)]
pub struct AccessCounter(AtomicUsize);

impl AccessCounter {
    pub fn get(&self) -> usize {
        self.0.load(Ordering::Relaxed)
    }

    fn bump(&self) {
        self.0.fetch_add(1, Ordering::Relaxed);
    }
}

impl Clone for AccessCounter {
    fn clone(&self) -> Self {
        Self(AtomicUsize::new(self.get()))
    }
}

impl PartialEq for AccessCounter {
    fn eq(&self, _: &Self) -> bool {
        true
    }
}

/// Every learnable parameter plus the fitted scaler.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelState {
    pub config: ModelConfig,
    pub seed: u64,
    /// `[C, d]`, no bias.
    pub embed: Tensor,
    pub blocks: Vec<BlockParams>,
    /// `[d + M]`.
    pub head_w: Tensor,
    pub head_b: Tensor,
    pub scaler: FeatureScaler,
    #[serde(skip)]
    aux_access: AccessCounter,
}

/// Graph handles of a bound model.
#[derive(Clone, Debug)]
pub struct Binding {
    pub embed: NodeId,
    pub blocks: Vec<BlockBinding>,
    pub head_w: NodeId,
    pub head_b: NodeId,
}

#[derive(Clone, Debug)]
pub struct BlockBinding {
    pub primary: (NodeId, NodeId),
    pub auxiliary: Option<(NodeId, NodeId)>,
    pub kernels: Vec<NodeId>,
    /// Average of the branch kernels, each centered in the largest extent.
    /// Convolving with it equals averaging the branch convolutions.
    pub merged: NodeId,
}

impl Binding {
    /// Node of every parameter in [`ModelState::params`] order; unbound
    /// auxiliary parameters are `None`.
    pub fn param_ids(&self) -> Vec<Option<NodeId>> {
        let mut ids = vec![Some(self.embed)];
        for b in &self.blocks {
            ids.extend([Some(b.primary.0), Some(b.primary.1)]);
            ids.extend([b.auxiliary.map(|a| a.0), b.auxiliary.map(|a| a.1)]);
            ids.extend(b.kernels.iter().map(|&k| Some(k)));
        }
        ids.extend([Some(self.head_w), Some(self.head_b)]);
        ids
    }
}

/// Nodes produced by one forward pass.
#[derive(Clone, Debug)]
pub struct ForwardOutput {
    /// Standardized prediction, a scalar.
    pub y: NodeId,
    /// Mean-pooled temporal embedding `[d]`.
    pub embedding: NodeId,
    pub periods: Vec<PeriodInfo>,
}

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], fan_in: usize) -> Tensor {
    let bound = (1.0 / fan_in as f64).sqrt();
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.gen_range(-bound..=bound)).collect();
    Tensor::new(shape.to_vec(), data).expect("init shape")
}

impl ModelState {
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = config.d_model;
        let embed = uniform(&mut rng, &[config.channels, d], config.channels);
        let blocks = (0..config.num_blocks)
            .map(|_| BlockParams {
                primary: LayerNormParams::identity(d),
                auxiliary: LayerNormParams::identity(d),
                kernels: config
                    .kernel_sizes
                    .iter()
                    .map(|&k| uniform(&mut rng, &[k, k, d, d], k * k * d))
                    .collect(),
            })
            .collect();
        let head_w = uniform(&mut rng, &[d + config.num_features], d + config.num_features);
        Ok(Self {
            scaler: FeatureScaler::identity(config.num_features),
            config,
            seed,
            embed,
            blocks,
            head_w,
            head_b: Tensor::scalar(0.0),
            aux_access: AccessCounter::default(),
        })
    }

    /// How many times the auxiliary layer norms have been bound.
    pub fn auxiliary_accesses(&self) -> usize {
        self.aux_access.get()
    }

    /// Parameters in canonical order: embedding; per block primary gain and
    /// bias, auxiliary gain and bias, kernels; head weights and bias.
    pub fn params(&self) -> Vec<&Tensor> {
        let mut out = vec![&self.embed];
        for b in &self.blocks {
            out.extend([&b.primary.gain, &b.primary.bias, &b.auxiliary.gain, &b.auxiliary.bias]);
            out.extend(b.kernels.iter());
        }
        out.extend([&self.head_w, &self.head_b]);
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = vec![&mut self.embed];
        for b in &mut self.blocks {
            out.extend([
                &mut b.primary.gain,
                &mut b.primary.bias,
                &mut b.auxiliary.gain,
                &mut b.auxiliary.bias,
            ]);
            out.extend(b.kernels.iter_mut());
        }
        out.extend([&mut self.head_w, &mut self.head_b]);
        out
    }

    pub fn param_names(&self) -> Vec<String> {
        let mut out = vec!["embed".to_string()];
        for (i, _) in self.blocks.iter().enumerate() {
            for part in ["ln_primary.gain", "ln_primary.bias", "ln_auxiliary.gain", "ln_auxiliary.bias"] {
                out.push(format!("block{i}.{part}"));
            }
            for k in &self.config.kernel_sizes {
                out.push(format!("block{i}.conv{k}x{k}"));
            }
        }
        out.extend(["head.weight".into(), "head.bias".into()]);
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.params().iter().map(|t| t.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.params().iter().all(|t| t.is_finite())
    }

    fn merge_kernels(&self, g: &mut Graph, kernels: &[NodeId]) -> Result<NodeId> {
        let sizes = &self.config.kernel_sizes;
        let size = sizes.iter().copied().max().expect("at least one kernel");
        let mut sum = None;
        for (&k, &kernel) in sizes.iter().zip(kernels) {
            let c = if k == size { kernel } else { g.center_kernel(kernel, size)? };
            sum = Some(match sum {
                None => c,
                Some(a) => g.add(a, c)?,
            });
        }
        g.scale(sum.expect("at least one kernel"), 1.0 / sizes.len() as f64)
    }

    /// Put the parameters on `g`. Trainable parameters receive gradients;
    /// frozen ones are constants. Auxiliary layer norms are bound only when
    /// `with_auxiliary` is set.
    pub fn bind(&self, g: &mut Graph, trainable: bool, with_auxiliary: bool) -> Binding {
        let mut put = |t: &Tensor| {
            if trainable {
                g.param(t.clone())
            } else {
                g.constant(t.clone())
            }
        };
        let embed = put(&self.embed);
        let blocks = self
            .blocks
            .iter()
            .map(|b| {
                let primary = (put(&b.primary.gain), put(&b.primary.bias));
                let auxiliary = with_auxiliary.then(|| {
                    self.aux_access.bump();
                    (put(&b.auxiliary.gain), put(&b.auxiliary.bias))
                });
                let kernels: Vec<NodeId> = b.kernels.iter().map(&mut put).collect();
                (primary, auxiliary, kernels)
            })
            .collect::<Vec<_>>();
        let head_w = put(&self.head_w);
        let head_b = put(&self.head_b);
        let blocks = blocks
            .into_iter()
            .map(|(primary, auxiliary, kernels)| {
                let merged = self.merge_kernels(g, &kernels).expect("finite merged kernel");
                BlockBinding { primary, auxiliary, kernels, merged }
            })
            .collect();
        Binding { embed, blocks, head_w, head_b }
    }

    /// Forward pass of one beat `x[T×C]` with raw features `u[M]`.
    pub fn forward(
        &self,
        g: &mut Graph,
        bind: &Binding,
        x: NodeId,
        u: NodeId,
        route: LnRoute,
    ) -> Result<ForwardOutput> {
        let cfg = &self.config;
        let xs = g.value(x).shape().to_vec();
        if xs.len() != 2 || xs[1] != cfg.channels {
            return Err(Error::shape("forward", format!("x {xs:?}, expected [T, {}]", cfg.channels)));
        }
        if g.value(u).len() != cfg.num_features {
            return Err(Error::shape(
                "forward",
                format!("u has {} values, expected {}", g.value(u).len(), cfg.num_features),
            ));
        }
        let t = xs[0];
        let mut h = g.matmul(x, bind.embed).map_err(|e| e.in_layer("embed"))?;
        let mut periods = Vec::with_capacity(bind.blocks.len());
        for (i, blk) in bind.blocks.iter().enumerate() {
            let layer = |part: &str| format!("block{i}/{part}");
            let info = detect_period(g.value(h))?;
            let (gain, bias) = match route {
                LnRoute::Primary => blk.primary,
                LnRoute::Auxiliary => blk.auxiliary.ok_or_else(|| {
                    Error::Usage("auxiliary route requested on a primary-only binding".into())
                })?,
            };
            let n = g
                .layer_norm(h, gain, bias, LAYER_NORM_EPS)
                .map_err(|e| e.in_layer(&layer("layer_norm")))?;
            let padded = g.pad_rows(n, info.padded_len())?;
            let grid = g.reshape(padded, vec![info.period, info.freq, cfg.d_model])?;
            let avg = g.conv2d(grid, blk.merged).map_err(|e| e.in_layer(&layer("conv")))?;
            let act = g.gelu(avg).map_err(|e| e.in_layer(&layer("gelu")))?;
            let flat = g.reshape(act, vec![info.padded_len(), cfg.d_model])?;
            let back = g.truncate_rows(flat, t)?;
            h = g.add(h, back).map_err(|e| e.in_layer(&layer("residual")))?;
            periods.push(info);
        }
        let embedding = g.mean_rows(h).map_err(|e| e.in_layer("pool"))?;
        let sc = &self.scaler;
        let inv: Vec<f64> = sc.u_std.iter().map(|s| 1.0 / s).collect();
        let shift: Vec<f64> = sc.u_mean.iter().zip(&sc.u_std).map(|(m, s)| -m / s).collect();
        let us = g.affine(u, inv, shift).map_err(|e| e.in_layer("scale_u"))?;
        let z = g.concat(&[embedding, us])?;
        let lin = g.dot(z, bind.head_w).map_err(|e| e.in_layer("head"))?;
        let y = g.add(lin, bind.head_b).map_err(|e| e.in_layer("head"))?;
        Ok(ForwardOutput { y, embedding, periods })
    }

    /// `∂ŷ/∂u` of the standardized output as a node. `u` reaches the output
    /// only through the linear head, so this is the feature slice of the head
    /// weights divided by the feature scale, the same for every beat. With
    /// `stop_grad` the value is recorded as a constant.
    pub fn grad_u_node(&self, g: &mut Graph, bind: &Binding, stop_grad: bool) -> Result<NodeId> {
        let d = self.config.d_model;
        let m = self.config.num_features;
        let inv: Vec<f64> = self.scaler.u_std.iter().map(|s| 1.0 / s).collect();
        if stop_grad {
            let w = &self.head_w.data()[d..d + m];
            let v = w.iter().zip(&inv).map(|(a, b)| a * b).collect();
            return Ok(g.constant(Tensor::vector(v)));
        }
        let w = g.slice(bind.head_w, d, m)?;
        g.affine(w, inv, vec![0.0; m])
    }

    /// Standardized prediction for one beat under the primary route.
    pub fn predict_one(&self, x: &Tensor, u: &Tensor) -> Result<f64> {
        let mut g = Graph::new();
        let bind = self.bind(&mut g, false, false);
        let xn = g.constant(x.clone());
        let un = g.constant(u.clone());
        let out = self.forward(&mut g, &bind, xn, un, LnRoute::Primary)?;
        Ok(g.value(out.y).item())
    }

    /// Gradients of the standardized output with respect to `x` and raw `u`.
    pub fn grad_wrt_inputs(&self, x: &Tensor, u: &Tensor, route: LnRoute) -> Result<(Tensor, Tensor)> {
        let mut g = Graph::new();
        let bind = self.bind(&mut g, false, route == LnRoute::Auxiliary);
        let xn = g.leaf(x.clone(), true)?;
        let un = g.leaf(u.clone(), true)?;
        let out = self.forward(&mut g, &bind, xn, un, route)?;
        let grads = g.backward(out.y)?;
        Ok((grads.get(xn), grads.get(un)))
    }
}
