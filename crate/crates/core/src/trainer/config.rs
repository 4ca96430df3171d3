use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imgproc::AugPlan;
use crate::losses::LossWeights;
use crate::nn::ModelConfig;

/// Learning-rate multiplier per epoch.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LrSchedule {
    #[default]
    Constant,
    /// Multiply by `gamma` every `every` epochs.
    Step { every: usize, gamma: f64 },
    /// Half-cosine from 1 down to `min_factor` over the run.
    Cosine { min_factor: f64 },
}

impl LrSchedule {
    /// Factor for zero-based `epoch` of `epochs`.
    pub fn factor(&self, epoch: usize, epochs: usize) -> f64 {
        match *self {
            LrSchedule::Constant => 1.0,
            LrSchedule::Step { every, gamma } => gamma.powi((epoch / every.max(1)) as i32),
            LrSchedule::Cosine { min_factor } => {
                let t = if epochs > 1 { epoch as f64 / (epochs - 1) as f64 } else { 0.0 };
                min_factor + (1.0 - min_factor) * 0.5 * (1.0 + (std::f64::consts::PI * t).cos())
            }
        }
    }

    fn validate(&self) -> Result<()> {
        match *self {
            LrSchedule::Step { every, gamma } if every == 0 || !(gamma > 0.0) => {
                Err(Error::Config(format!("step schedule needs every >= 1 and gamma > 0, got {every}, {gamma}")))
            }
            LrSchedule::Cosine { min_factor } if !(0.0..=1.0).contains(&min_factor) => {
                Err(Error::Config(format!("cosine min_factor must lie in [0, 1], got {min_factor}")))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    /// Identities per batch.
    #[serde(rename = "P")]
    pub p: usize,
    /// Instances per identity.
    #[serde(rename = "K")]
    pub k: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub epochs: usize,
    /// Square side images are resized to.
    pub input_size: usize,
    pub flip_p: f64,
    pub cutmix_p: f64,
    /// Beta(alpha, alpha) for the cutmix area ratio.
    pub cutmix_alpha: f64,
    pub seed: u64,
    pub loss: LossWeights,
    /// `head.num_classes` is replaced by the number of training identities.
    pub model: ModelConfig,
    /// Applied per image before flip and cutmix.
    pub online_plan: Option<AugPlan>,
    pub schedule: LrSchedule,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            p: 16,
            k: 4,
            lr: 3.5e-4,
            weight_decay: 5e-4,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            epochs: 35,
            input_size: 224,
            flip_p: 0.5,
            cutmix_p: 0.5,
            cutmix_alpha: 1.0,
            seed: 0,
            loss: LossWeights::default(),
            model: ModelConfig::default(),
            online_plan: None,
            schedule: LrSchedule::Constant,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.p < 2 || self.k < 2 {
            return Err(Error::Config(format!("P and K must both be at least 2, got P={} K={}", self.p, self.k)));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("lr must be positive, got {}", self.lr)));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if !(self.weight_decay >= 0.0) || !(self.adam_eps > 0.0) {
            return Err(Error::Config("weight_decay must be >= 0 and adam_eps > 0".into()));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::Config(format!("{name} must lie in [0, 1), got {b}")));
            }
        }
        for (name, p) in [("flip_p", self.flip_p), ("cutmix_p", self.cutmix_p)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("{name} must lie in [0, 1], got {p}")));
            }
        }
        if !(self.cutmix_alpha > 0.0) {
            return Err(Error::Config(format!("cutmix_alpha must be positive, got {}", self.cutmix_alpha)));
        }
        let min = 1usize << self.model.backbone.stage_channels.len();
        if self.input_size < min {
            return Err(Error::Config(format!("input_size {} is below the minimum {min}", self.input_size)));
        }
        if let Some(plan) = &self.online_plan {
            plan.validate()?;
        }
        self.loss.validate()?;
        self.model.validate()?;
        self.schedule.validate()
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(format!("train config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }
}
