use serde::{Deserialize, Serialize};

use super::backbone::{Backbone, BackboneConfig};
use super::head::{Head, HeadConfig, HeadOutput};
use super::layers::Mode;
use super::pool::{Pool, PoolMode, DEFAULT_GEM_P};
use super::real::Real;
use super::tensor::Tensor;
use super::TensorVisitor;
use crate::error::{Error, Result};
use crate::imgproc::{mix_seed, RngStream};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub backbone: BackboneConfig,
    pub pool: PoolMode,
    pub gem_p: f64,
    pub head: HeadConfig,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            backbone: BackboneConfig::default(),
            pool: PoolMode::Gem,
            gem_p: DEFAULT_GEM_P,
            head: HeadConfig::default(),
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.backbone.validate()?;
        self.head.validate()?;
        if !(self.gem_p > 0.0 && self.gem_p.is_finite()) {
            return Err(Error::Config(format!("gem_p must be positive, got {}", self.gem_p)));
        }
        Ok(())
    }

    pub fn feature_dim(&self) -> usize {
        self.head.feature_dim(self.backbone.out_channels())
    }
}

/// Backbone, pooling and head as one trainable unit.
#[derive(Debug, Clone)]
pub struct Network<T: Real = f32> {
    config: ModelConfig,
    pub backbone: Backbone<T>,
    pub pool: Pool<T>,
    pub head: Head<T>,
    pooled_shape: Option<Vec<usize>>,
}

impl<T: Real> Network<T> {
    /// Fresh weights drawn from a stream derived from `seed`.
    pub fn new(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = RngStream::new(mix_seed(seed, 0x6e6e), 0);
        let backbone = Backbone::new(&config.backbone, &mut rng)?;
        let c = config.backbone.out_channels();
        let pool = Pool::new(config.pool, c, config.gem_p);
        let head = Head::new(&config.head, c, &mut rng)?;
        Ok(Self {
            config: config.clone(),
            backbone,
            pool,
            head,
            pooled_shape: None,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    /// `rng` drives dropout and is only consulted in train mode.
    pub fn forward(&mut self, x: &Tensor<T>, mode: Mode, rng: Option<&mut RngStream>) -> Result<HeadOutput<T>> {
        let map = self.backbone.forward(x, mode)?;
        let pooled = self.pool.forward(&map, mode)?;
        self.pooled_shape = (mode == Mode::Train).then(|| pooled.shape().to_vec());
        self.head.forward(&pooled, mode, rng)
    }

    /// Accumulates parameter gradients from gradients on the feature
    /// and/or the logits of the last train-mode forward.
    pub fn backward(&mut self, d_feature: Option<&Tensor<T>>, d_logits: Option<&Tensor<T>>) -> Result<()> {
        if self.pooled_shape.is_none() {
            return Err(Error::State("network: backward called without a train-mode forward".into()));
        }
        let d_pooled = self.head.backward(d_feature, d_logits)?;
        let d_map = self.pool.backward(&d_pooled)?;
        self.backbone.backward(&d_map)
    }

    /// Every stored tensor with its checkpoint name; the flag marks
    /// trainable parameters (running statistics are not).
    pub fn visit(&mut self, f: &mut TensorVisitor<'_, T>) {
        self.backbone.visit(f);
        let gem = self.pool.mode == PoolMode::Gem;
        f("gem.p", &mut self.pool.gem_p, gem);
        if let Some(w) = self.pool.attn_weight.as_mut() {
            f("pool.attn.weight", w, true);
        }
        if let Some(b) = self.pool.attn_bias.as_mut() {
            f("pool.attn.bias", b, true);
        }
        self.head.visit(f);
    }

    /// The discrete choices made by the last train-mode forward: ReLU
    /// activity and max-pooling winners. Two inputs with equal signatures
    /// lie in the same differentiable piece of the network.
    pub fn branch_signature(&self) -> Vec<usize> {
        let mut out = Vec::new();
        self.backbone.branches(&mut out);
        out.extend_from_slice(self.pool.winners().unwrap_or_default());
        self.head.branches(&mut out);
        out
    }

    pub fn zero_grad(&mut self) {
        self.visit(&mut |_, t, _| t.zero_grad());
    }

    pub fn clear_cache(&mut self) {
        self.backbone.clear_cache();
        self.pool.clear_cache();
        self.head.clear_cache();
        self.pooled_shape = None;
    }

    pub fn param_count(&mut self) -> usize {
        let mut n = 0;
        self.visit(&mut |_, t, trainable| {
            if trainable {
                n += t.len()
            }
        });
        n
    }

    /// Same weights in another precision.
    pub fn cast<U: Real>(&self) -> Network<U> {
        let mut src = self.clone();
        let mut values = Vec::new();
        src.visit(&mut |_, t, _| values.push(t.data().iter().map(|v| v.f64()).collect::<Vec<_>>()));
        let mut out = Network::<U>::new(&self.config, 0).expect("validated config");
        let mut it = values.into_iter();
        out.visit(&mut |_, t, _| {
            for (d, s) in t.data_mut().iter_mut().zip(it.next().unwrap()) {
                *d = U::of(s);
            }
        });
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::head::HeadKind;

    fn input(n: usize, c: usize, s: usize, seed: u64) -> Tensor<f32> {
        let mut rng = RngStream::new(seed, 0);
        Tensor::new(&[n, c, s, s], (0..n * c * s * s).map(|_| rng.uniform() as f32).collect()).unwrap()
    }

    #[test]
    fn default_shapes() {
        let mut net = Network::<f32>::new(&ModelConfig::default(), 1).unwrap();
        let map = net.backbone.forward(&input(2, 1, 64, 0), Mode::Eval).unwrap();
        assert_eq!(map.shape(), &[2, 64, 8, 8]);
    }

    #[test]
    fn eval_forward_is_repeatable() {
        let mut net = Network::<f32>::new(&ModelConfig::default(), 1).unwrap();
        let x = input(2, 1, 32, 4);
        let a = net.forward(&x, Mode::Eval, None).unwrap();
        let b = net.forward(&x, Mode::Eval, None).unwrap();
        assert_eq!(a.feature.data(), b.feature.data());
        assert_eq!(a.logits.data(), b.logits.data());
    }

    #[test]
    fn zero_input_gives_zero_relu_outputs() {
        let mut cfg = ModelConfig::default();
        cfg.backbone.stage_channels = vec![4, 8];
        let mut net = Network::<f64>::new(&cfg, 2).unwrap();
        let x = Tensor::zeros(&[1, 1, 8, 8]);
        let map = net.backbone.forward(&x, Mode::Eval).unwrap();
        assert!(map.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn channel_mismatch_is_shape_error() {
        let mut net = Network::<f32>::new(&ModelConfig::default(), 1).unwrap();
        let err = net.forward(&input(1, 3, 16, 0), Mode::Eval, None).unwrap_err();
        assert!(matches!(err, Error::Shape(_)));
        let err = net.forward(&input(1, 1, 4, 0), Mode::Eval, None).unwrap_err();
        assert!(matches!(err, Error::Shape(_)));
    }

    #[test]
    fn head_dims() {
        for (kind, dim) in [(HeadKind::Linear, 64), (HeadKind::Bn, 64), (HeadKind::Reduction, 24)] {
            let mut cfg = ModelConfig::default();
            cfg.head = HeadConfig {
                kind,
                embed_dim: 24,
                num_classes: 7,
                dropout_p: 0.5,
            };
            let mut net = Network::<f32>::new(&cfg, 3).unwrap();
            let out = net.forward(&input(3, 1, 16, 1), Mode::Eval, None).unwrap();
            assert_eq!(out.feature.shape(), &[3, dim]);
            assert_eq!(out.logits.shape(), &[3, 7]);
            assert_eq!(cfg.feature_dim(), dim);
        }
    }

    #[test]
    fn linear_head_feature_is_pooled() {
        let mut cfg = ModelConfig::default();
        cfg.head.kind = HeadKind::Linear;
        let mut net = Network::<f32>::new(&cfg, 3).unwrap();
        let x = input(2, 1, 16, 1);
        let out = net.forward(&x, Mode::Eval, None).unwrap();
        let map = net.backbone.forward(&x, Mode::Eval).unwrap();
        let pooled = net.pool.forward(&map, Mode::Eval).unwrap();
        assert_eq!(out.feature.data(), pooled.data());
    }

    #[test]
    fn fresh_bn_head_is_identity_at_eval() {
        let mut cfg = ModelConfig::default();
        cfg.head.kind = HeadKind::Bn;
        let mut net = Network::<f64>::new(&cfg, 3).unwrap();
        let pooled = Tensor::new(&[2, 64], (0..128).map(|i| i as f64 * 0.01).collect()).unwrap();
        let out = net.head.forward(&pooled, Mode::Eval, None).unwrap();
        for (a, b) in out.feature.data().iter().zip(pooled.data()) {
            assert!((a - b).abs() < 1e-4 * b.abs().max(1.0));
        }
    }

    #[test]
    fn backward_without_forward_is_state_error() {
        let mut net = Network::<f32>::new(&ModelConfig::default(), 1).unwrap();
        let g = Tensor::zeros(&[1, 2]);
        assert!(matches!(net.backward(None, Some(&g)), Err(Error::State(_))));
        net.forward(&input(1, 1, 16, 0), Mode::Eval, None).unwrap();
        assert!(matches!(net.backward(None, Some(&g)), Err(Error::State(_))));
    }

    #[test]
    fn zero_upstream_gradient_gives_zero_grads() {
        let mut net = Network::<f64>::new(&ModelConfig::default(), 1).unwrap();
        let x = input(2, 1, 16, 0).cast::<f64>();
        let out = net.forward(&x, Mode::Train, None).unwrap();
        net.backward(Some(&Tensor::zeros(out.feature.shape())), Some(&Tensor::zeros(out.logits.shape())))
            .unwrap();
        net.visit(&mut |name, t, _| {
            if let Some(g) = t.grad() {
                assert!(g.iter().all(|&v| v == 0.0), "{name}");
            }
        });
    }

    #[test]
    fn cast_preserves_outputs() {
        let mut net = Network::<f32>::new(&ModelConfig::default(), 5).unwrap();
        let mut wide = net.cast::<f64>();
        let x = input(1, 1, 16, 2);
        let a = net.forward(&x, Mode::Eval, None).unwrap();
        let b = wide.forward(&x.cast(), Mode::Eval, None).unwrap();
        for (p, q) in a.feature.data().iter().zip(b.feature.data()) {
            assert!((*p as f64 - q).abs() < 1e-4);
        }
    }
}
