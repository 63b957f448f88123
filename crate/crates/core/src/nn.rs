//! The convolutional embedding network and its optimizer.
//!
//! The backbone is the standard four-block few-shot CNN (“Conv-x”): each
//! block is a 3x3 convolution with padding 1 followed by ReLU and 2x2 max
//! pooling, all blocks carrying `x` filters (32 by default), finished by
//! global average pooling into an `x`-dimensional embedding. There are no
//! normalization layers and no biases.
//!
//! Training uses Adam with bias-corrected moments and a step-decay learning
//! rate that halves every fixed number of steps.

use crate::error::{Error, Result};
use crate::image::Image;
use crate::rng::{self, tag};
use crate::tensor::{kernels, Graph, Tensor, Var};
use rand::Rng;

/// Anything that can embed a batch of images into fixed-size vectors.
/// Implemented by [`ConvBackbone`] and by test stubs.
pub trait Embedder: Sync {
    fn embedding_dim(&self) -> usize;

    /// Embeds every image, preserving order. All images must share the
    /// resolution the embedder was built for.
    fn embed_batch(&self, images: &[&Image]) -> Result<Vec<Vec<f64>>>;
}

/// A named trainable tensor.
#[derive(Debug, Clone)]
pub struct Parameter {
    pub name: String,
    pub tensor: Tensor,
}

/// Shape of the embedding network.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BackboneConfig {
    /// Filters per block; also the embedding dimension.
    pub filters: usize,
    /// Input channels (3 for RGB).
    pub in_channels: usize,
    /// Expected square input resolution.
    pub resolution: usize,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        BackboneConfig {
            filters: 32,
            in_channels: 3,
            resolution: 32,
        }
    }
}

const BLOCKS: usize = 4;
const KERNEL: usize = 3;
const PADDING: usize = 1;

/// Four conv/ReLU/pool blocks plus global average pooling.
#[derive(Debug, Clone)]
pub struct ConvBackbone {
    config: BackboneConfig,
    params: Vec<Parameter>,
}

impl ConvBackbone {
    /// Builds a backbone with Glorot-uniform kernels drawn from a stream
    /// derived from `seed`; identical seeds give identical parameters.
    pub fn init(config: BackboneConfig, seed: u64) -> Result<Self> {
        if config.filters == 0 {
            return Err(Error::Config("filters_per_layer must be positive".into()));
        }
        if config.in_channels == 0 {
            return Err(Error::Config("in_channels must be positive".into()));
        }
        // Four halvings must leave at least one spatial cell for pooling.
        if config.resolution < 16 {
            return Err(Error::Config(format!(
                "backbone needs resolution >= 16, got {}",
                config.resolution
            )));
        }
        let mut params = Vec::with_capacity(BLOCKS);
        for block in 0..BLOCKS {
            let c_in = if block == 0 {
                config.in_channels
            } else {
                config.filters
            };
            let shape = vec![config.filters, c_in, KERNEL, KERNEL];
            let fan_in = c_in * KERNEL * KERNEL;
            let fan_out = config.filters * KERNEL * KERNEL;
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let mut stream = rng::child_rng(seed, tag::INIT, block as u64);
            let n: usize = shape.iter().product();
            let values: Vec<f64> = (0..n).map(|_| stream.gen_range(-bound..bound)).collect();
            params.push(Parameter {
                name: format!("conv{}.kernel", block + 1),
                tensor: Tensor::new(shape, values)?.with_requires_grad(),
            });
        }
        Ok(ConvBackbone { config, params })
    }

    /// Reassembles a backbone from named parameter tensors (checkpoint
    /// loading). Kernel shapes fix the filter and channel counts; the
    /// resolution comes from the caller.
    pub fn from_params(resolution: usize, tensors: &[(String, Tensor)]) -> Result<Self> {
        let mut params = Vec::with_capacity(BLOCKS);
        for block in 0..BLOCKS {
            let name = format!("conv{}.kernel", block + 1);
            let (_, t) = tensors
                .iter()
                .find(|(n, _)| *n == name)
                .ok_or_else(|| Error::Format(format!("checkpoint is missing tensor {name}")))?;
            if t.shape().len() != 4 || t.shape()[2] != KERNEL || t.shape()[3] != KERNEL {
                return Err(Error::Format(format!(
                    "tensor {name} has unexpected shape {:?}",
                    t.shape()
                )));
            }
            params.push(Parameter {
                name,
                tensor: t.clone().with_requires_grad(),
            });
        }
        let filters = params[0].tensor.shape()[0];
        let in_channels = params[0].tensor.shape()[1];
        for (i, p) in params.iter().enumerate() {
            let expect_in = if i == 0 { in_channels } else { filters };
            if p.tensor.shape()[0] != filters || p.tensor.shape()[1] != expect_in {
                return Err(Error::Format(format!(
                    "tensor {} shape {:?} is inconsistent with {} filters",
                    p.name,
                    p.tensor.shape(),
                    filters
                )));
            }
        }
        let config = BackboneConfig {
            filters,
            in_channels,
            resolution,
        };
        if resolution < 16 {
            return Err(Error::Format(format!(
                "checkpoint resolution {resolution} is below the backbone minimum of 16"
            )));
        }
        Ok(ConvBackbone { config, params })
    }

    pub fn config(&self) -> BackboneConfig {
        self.config
    }

    pub fn params(&self) -> &[Parameter] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Parameter] {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(|p| p.tensor.len()).sum()
    }

    /// Clears accumulated gradients on every parameter.
    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.tensor.zero_grad();
        }
    }

    fn check_images(&self, images: &[&Image]) -> Result<()> {
        let r = self.config.resolution;
        for (i, img) in images.iter().enumerate() {
            if img.height() != r || img.width() != r {
                return Err(Error::Dimension(format!(
                    "image {i} is {}x{}, backbone expects {r}x{r}",
                    img.height(),
                    img.width()
                )));
            }
        }
        Ok(())
    }

    /// Packs images into a planar `[N, C, H, W]` tensor.
    pub fn batch_tensor(&self, images: &[&Image]) -> Result<Tensor> {
        self.check_images(images)?;
        let r = self.config.resolution;
        let mut buf = Vec::with_capacity(images.len() * 3 * r * r);
        for img in images {
            img.write_chw(&mut buf);
        }
        Tensor::new(vec![images.len(), 3, r, r], buf)
    }

    /// Builds the differentiable forward pass on `graph`, returning the
    /// `[N, filters]` embedding node and the parameter leaves in order.
    pub fn forward_graph(&self, graph: &mut Graph, batch: Var) -> Result<(Var, Vec<Var>)> {
        let mut param_vars = Vec::with_capacity(BLOCKS);
        let mut x = batch;
        for p in &self.params {
            let k = graph.leaf(&p.tensor);
            param_vars.push(k);
            x = graph.conv2d(x, k, 1, PADDING)?;
            x = graph.relu(x)?;
            x = graph.max_pool2(x)?;
        }
        let emb = graph.global_avg_pool(x)?;
        Ok((emb, param_vars))
    }
}

impl Embedder for ConvBackbone {
    fn embedding_dim(&self) -> usize {
        self.config.filters
    }

    /// Inference-only forward pass sharing the graph kernels but skipping
    /// node bookkeeping.
    fn embed_batch(&self, images: &[&Image]) -> Result<Vec<Vec<f64>>> {
        self.check_images(images)?;
        if images.is_empty() {
            return Ok(Vec::new());
        }
        let f = self.config.filters;
        let mut out = Vec::with_capacity(images.len());
        let mut chw = Vec::new();
        let mut act = Vec::new();
        let mut next = Vec::new();
        let mut cols = Vec::new();
        let mut switches = Vec::new();
        for img in images {
            chw.clear();
            img.write_chw(&mut chw);
            let mut c = 3;
            let mut h = img.height();
            let mut w = img.width();
            act.clear();
            act.extend_from_slice(&chw);
            for p in &self.params {
                let spatial = h * w;
                let ckk = c * KERNEL * KERNEL;
                cols.resize(ckk * spatial, 0.0);
                kernels::im2col(&act, c, h, w, KERNEL, KERNEL, 1, PADDING, &mut cols);
                next.resize(f * spatial, 0.0);
                kernels::matmul(p.tensor.values(), &cols, f, ckk, spatial, &mut next);
                for v in next.iter_mut() {
                    if *v < 0.0 {
                        *v = 0.0;
                    }
                }
                let (h2, w2) = (h / 2, w / 2);
                act.resize(f * h2 * w2, 0.0);
                switches.resize(h2 * w2, 0);
                for ch in 0..f {
                    let plane = &next[ch * spatial..(ch + 1) * spatial];
                    kernels::maxpool2_plane(
                        plane,
                        h,
                        w,
                        &mut act[ch * h2 * w2..(ch + 1) * h2 * w2],
                        &mut switches,
                    );
                }
                c = f;
                h = h2;
                w = w2;
            }
            let plane = h * w;
            let mut emb = vec![0.0; f];
            for (ch, e) in emb.iter_mut().enumerate() {
                *e = act[ch * plane..(ch + 1) * plane].iter().sum::<f64>() / plane as f64;
            }
            out.push(emb);
        }
        Ok(out)
    }
}

/// Adam hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.99,
            epsilon: 1e-8,
        }
    }
}

#[derive(Debug, Clone)]
struct Moments {
    m: Vec<f64>,
    v: Vec<f64>,
}

/// Adam optimizer state: first/second moment estimates per parameter plus
/// the global step count used for bias correction.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub config: AdamConfig,
    step_count: u64,
    moments: Vec<Moments>,
}

impl AdamState {
    pub fn new(config: AdamConfig, params: &[Parameter]) -> Self {
        let moments = params
            .iter()
            .map(|p| Moments {
                m: vec![0.0; p.tensor.len()],
                v: vec![0.0; p.tensor.len()],
            })
            .collect();
        AdamState {
            config,
            step_count: 0,
            moments,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    /// Applies one update at learning rate `lr`, consuming the gradients
    /// currently accumulated on the parameters (the gradients are zeroed).
    /// A parameter with no gradient is treated as having gradient zero.
    pub fn step(&mut self, params: &mut [Parameter], lr: f64) -> Result<()> {
        if params.len() != self.moments.len() {
            return Err(Error::Contract(format!(
                "optimizer tracks {} parameters, got {}",
                self.moments.len(),
                params.len()
            )));
        }
        self.step_count += 1;
        let t = self.step_count as i32;
        let c = self.config;
        let bias1 = 1.0 - c.beta1.powi(t);
        let bias2 = 1.0 - c.beta2.powi(t);
        for (p, mom) in params.iter_mut().zip(&mut self.moments) {
            if p.tensor.len() != mom.m.len() {
                return Err(Error::Contract(format!(
                    "parameter {} changed size under the optimizer",
                    p.name
                )));
            }
            let zero = vec![0.0; 0];
            let grad: &[f64] = p.tensor.grad().unwrap_or(&zero);
            if !grad.is_empty() {
                for (j, &g) in grad.iter().enumerate() {
                    if !g.is_finite() {
                        return Err(Error::Training {
                            step: self.step_count,
                            lr,
                            detail: format!("non-finite gradient in parameter {}", p.name),
                        });
                    }
                    mom.m[j] = c.beta1 * mom.m[j] + (1.0 - c.beta1) * g;
                    mom.v[j] = c.beta2 * mom.v[j] + (1.0 - c.beta2) * g * g;
                }
            } else {
                for j in 0..mom.m.len() {
                    mom.m[j] *= c.beta1;
                    mom.v[j] *= c.beta2;
                }
            }
            if lr != 0.0 {
                let values = p.tensor.values_mut();
                for j in 0..values.len() {
                    let m_hat = mom.m[j] / bias1;
                    let v_hat = mom.v[j] / bias2;
                    values[j] -= lr * m_hat / (v_hat.sqrt() + c.epsilon);
                }
            }
            p.tensor.zero_grad();
        }
        Ok(())
    }
}

/// Step-decay schedule: the rate halves after every `halving_period` steps.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LrSchedule {
    pub initial_lr: f64,
    pub halving_period: u64,
}

impl LrSchedule {
    pub fn new(initial_lr: f64, halving_period: u64) -> Result<Self> {
        if !(initial_lr > 0.0) || !initial_lr.is_finite() {
            return Err(Error::Config(format!(
                "initial learning rate must be positive and finite, got {initial_lr}"
            )));
        }
        if halving_period == 0 {
            return Err(Error::Config("halving period must be positive".into()));
        }
        Ok(LrSchedule {
            initial_lr,
            halving_period,
        })
    }

    /// Learning rate in effect at step `t` (0-based).
    pub fn lr_at(&self, t: u64) -> f64 {
        let halvings = (t / self.halving_period).min(i32::MAX as u64) as i32;
        self.initial_lr * 0.5f64.powi(halvings)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_backbone() -> ConvBackbone {
        ConvBackbone::init(
            BackboneConfig {
                filters: 4,
                in_channels: 3,
                resolution: 16,
            },
            7,
        )
        .unwrap()
    }

    fn noise_image(h: usize, w: usize, seed: u64) -> Image {
        let mut rng = crate::rng::rng_from(seed);
        let pixels: Vec<f64> = (0..h * w * 3).map(|_| rng.gen_range(0.0..1.0)).collect();
        Image::new(h, w, pixels).unwrap()
    }

    #[test]
    fn init_is_deterministic_and_seed_sensitive() {
        let a = tiny_backbone();
        let b = tiny_backbone();
        let c = ConvBackbone::init(a.config(), 8).unwrap();
        for (pa, pb) in a.params().iter().zip(b.params()) {
            assert_eq!(pa.tensor.values(), pb.tensor.values());
        }
        assert_ne!(
            a.params()[0].tensor.values(),
            c.params()[0].tensor.values()
        );
    }

    #[test]
    fn init_respects_glorot_bound() {
        let net = ConvBackbone::init(BackboneConfig::default(), 3).unwrap();
        for p in net.params() {
            let s = p.tensor.shape();
            let fan_in = s[1] * s[2] * s[3];
            let fan_out = s[0] * s[2] * s[3];
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            for &v in p.tensor.values() {
                assert!(v.abs() < bound, "{v} outside [-{bound}, {bound}]");
            }
        }
    }

    #[test]
    fn embedding_has_configured_dimension() {
        let net = tiny_backbone();
        let img = noise_image(16, 16, 1);
        let embs = net.embed_batch(&[&img]).unwrap();
        assert_eq!(embs.len(), 1);
        assert_eq!(embs[0].len(), 4);
        assert_eq!(net.embedding_dim(), 4);
    }

    #[test]
    fn embedding_is_batch_order_invariant() {
        let net = tiny_backbone();
        let imgs: Vec<Image> = (0..5).map(|i| noise_image(16, 16, 100 + i)).collect();
        let forward: Vec<&Image> = imgs.iter().collect();
        let reversed: Vec<&Image> = imgs.iter().rev().collect();
        let a = net.embed_batch(&forward).unwrap();
        let b = net.embed_batch(&reversed).unwrap();
        for i in 0..5 {
            assert_eq!(a[i], b[4 - i], "embedding depends on batch order");
        }
    }

    #[test]
    fn embed_batch_matches_graph_forward() {
        let net = tiny_backbone();
        let imgs: Vec<Image> = (0..3).map(|i| noise_image(16, 16, 200 + i)).collect();
        let refs: Vec<&Image> = imgs.iter().collect();
        let fast = net.embed_batch(&refs).unwrap();
        let mut g = Graph::new();
        let batch = net.batch_tensor(&refs).unwrap();
        let b = g.leaf(&batch);
        let (emb, _) = net.forward_graph(&mut g, b).unwrap();
        let slow = g.value(emb);
        for (i, row) in fast.iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                assert!(
                    (v - slow[i * 4 + j]).abs() < 1e-12,
                    "fast and graph paths disagree at ({i},{j})"
                );
            }
        }
    }

    #[test]
    fn wrong_resolution_is_a_dimension_error() {
        let net = tiny_backbone();
        let img = noise_image(17, 16, 1);
        assert!(matches!(
            net.embed_batch(&[&img]),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn adam_zero_lr_leaves_params_bit_identical() {
        let mut net = tiny_backbone();
        let before: Vec<Vec<f64>> = net
            .params()
            .iter()
            .map(|p| p.tensor.values().to_vec())
            .collect();
        let mut adam = AdamState::new(AdamConfig::default(), net.params());
        for p in net.params_mut() {
            let n = p.tensor.len();
            p.tensor.accumulate_grad(&vec![0.75; n]).unwrap();
        }
        adam.step(net.params_mut(), 0.0).unwrap();
        for (p, b) in net.params().iter().zip(&before) {
            assert_eq!(p.tensor.values(), b.as_slice());
        }
        assert_eq!(adam.step_count(), 1);
    }

    #[test]
    fn adam_first_step_moves_by_roughly_lr() {
        // With zero-initialized moments the bias-corrected first update is
        // lr * g / (|g| + eps), i.e. almost exactly lr in magnitude.
        let mut params = vec![Parameter {
            name: "w".into(),
            tensor: Tensor::new(vec![1], vec![0.0]).unwrap().with_requires_grad(),
        }];
        let mut adam = AdamState::new(AdamConfig::default(), &params);
        params[0].tensor.accumulate_grad(&[3.0]).unwrap();
        adam.step(&mut params, 1e-4).unwrap();
        let p = params[0].tensor.values()[0];
        assert!((p + 1e-4).abs() < 1e-11, "first step was {p}");
        assert!(params[0].tensor.grad().is_none(), "step must consume grads");
    }

    #[test]
    fn adam_rejects_non_finite_gradient() {
        let mut params = vec![Parameter {
            name: "w".into(),
            tensor: Tensor::new(vec![1], vec![0.0]).unwrap().with_requires_grad(),
        }];
        let mut adam = AdamState::new(AdamConfig::default(), &params);
        params[0].tensor.accumulate_grad(&[f64::NAN]).unwrap();
        let err = adam.step(&mut params, 1e-4).unwrap_err();
        match err {
            Error::Training { detail, .. } => assert!(detail.contains('w')),
            other => panic!("expected training error, got {other:?}"),
        }
    }

    #[test]
    fn lr_schedule_halves_exactly() {
        let s = LrSchedule::new(1e-4, 100).unwrap();
        assert_eq!(s.lr_at(0), 1e-4);
        assert_eq!(s.lr_at(99), 1e-4);
        assert_eq!(s.lr_at(100), 5e-5);
        assert_eq!(s.lr_at(200), 2.5e-5);
        assert_eq!(s.lr_at(350), 1.25e-5);
        let mut prev = f64::INFINITY;
        for t in 0..1000 {
            let lr = s.lr_at(t);
            assert!(lr <= prev, "schedule must be non-increasing");
            prev = lr;
        }
    }

    #[test]
    fn lr_schedule_rejects_zero_period() {
        assert!(matches!(LrSchedule::new(1e-4, 0), Err(Error::Config(_))));
    }
}
