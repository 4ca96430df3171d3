use serde::{Deserialize, Serialize};

use super::layers::{conv_out_size, BatchNorm, Conv2d, Mode, Relu};
use super::real::Real;
use super::tensor::Tensor;
use super::TensorVisitor;
use crate::error::{Error, Result};
use crate::imgproc::RngStream;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BackboneConfig {
    pub in_channels: usize,
    pub stage_channels: Vec<usize>,
    /// Conv blocks per stage; the first of each stage has stride 2.
    pub blocks_per_stage: usize,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        Self {
            in_channels: 1,
            stage_channels: vec![16, 32, 64],
            blocks_per_stage: 1,
        }
    }
}

impl BackboneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.in_channels != 1 && self.in_channels != 3 {
            return Err(Error::Config(format!("in_channels must be 1 or 3, got {}", self.in_channels)));
        }
        if self.stage_channels.is_empty() || self.stage_channels.contains(&0) {
            return Err(Error::Config("stage_channels needs at least one non-zero entry".into()));
        }
        if self.blocks_per_stage == 0 {
            return Err(Error::Config("blocks_per_stage must be at least 1".into()));
        }
        Ok(())
    }

    pub fn out_channels(&self) -> usize {
        *self.stage_channels.last().unwrap()
    }

    /// Spatial extent after the stem and every stride-2 stage.
    pub fn out_size(&self, n: usize) -> usize {
        self.stage_channels.iter().fold(n, |s, _| conv_out_size(s, 2))
    }
}

/// conv3x3 + BN + ReLU
#[derive(Debug, Clone)]
pub struct ConvBlock<T: Real> {
    pub conv: Conv2d<T>,
    pub bn: BatchNorm<T>,
    relu: Relu<T>,
}

impl<T: Real> ConvBlock<T> {
    fn new(cin: usize, cout: usize, stride: usize, rng: &mut RngStream) -> Self {
        Self {
            conv: Conv2d::new(cin, cout, stride, rng),
            bn: BatchNorm::new(cout, true),
            relu: Relu::default(),
        }
    }

    fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        let y = self.conv.forward(x, mode)?;
        let y = self.bn.forward(&y, mode)?;
        Ok(self.relu.forward(&y, mode))
    }

    fn backward(&mut self, dy: &Tensor<T>, input_grad: bool) -> Result<Option<Tensor<T>>> {
        let d = self.relu.backward(dy)?;
        let d = self.bn.backward(&d)?;
        self.conv.backward(&d, input_grad)
    }

    fn visit(&mut self, prefix: &str, f: &mut TensorVisitor<'_, T>) {
        f(&format!("{prefix}.conv.weight"), &mut self.conv.weight, true);
        f(&format!("{prefix}.conv.bias"), &mut self.conv.bias, true);
        visit_bn(&mut self.bn, &format!("{prefix}.bn"), f);
    }

    fn branches(&self, out: &mut Vec<usize>) {
        out.extend(self.relu.active().unwrap_or_default().into_iter().map(usize::from));
    }

    fn clear_cache(&mut self) {
        self.conv.clear_cache();
        self.bn.clear_cache();
        self.relu.clear_cache();
    }
}

pub(crate) fn visit_bn<T: Real>(bn: &mut BatchNorm<T>, prefix: &str, f: &mut TensorVisitor<'_, T>) {
    f(&format!("{prefix}.weight"), &mut bn.weight, true);
    if let Some(b) = bn.bias.as_mut() {
        f(&format!("{prefix}.bias"), b, true);
    }
    f(&format!("{prefix}.running_mean"), &mut bn.running_mean, false);
    f(&format!("{prefix}.running_var"), &mut bn.running_var, false);
}

/// Stride-1 stem followed by stages that each halve the resolution.
#[derive(Debug, Clone)]
pub struct Backbone<T: Real> {
    config: BackboneConfig,
    pub stem: ConvBlock<T>,
    /// Blocks of every stage in order, `blocks_per_stage` per stage.
    pub stages: Vec<ConvBlock<T>>,
}

impl<T: Real> Backbone<T> {
    pub fn new(config: &BackboneConfig, rng: &mut RngStream) -> Result<Self> {
        config.validate()?;
        let first = config.stage_channels[0];
        let stem = ConvBlock::new(config.in_channels, first, 1, rng);
        let mut cin = first;
        let mut stages = Vec::new();
        for &c in &config.stage_channels {
            stages.push(ConvBlock::new(cin, c, 2, rng));
            for _ in 1..config.blocks_per_stage {
                stages.push(ConvBlock::new(c, c, 1, rng));
            }
            cin = c;
        }
        Ok(Self {
            config: config.clone(),
            stem,
            stages,
        })
    }

    pub fn config(&self) -> &BackboneConfig {
        &self.config
    }

    pub fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        if x.rank() != 4 || x.dim(1) != self.config.in_channels {
            return Err(Error::Shape(format!(
                "backbone expects [N, {}, H, W], got {:?}",
                self.config.in_channels,
                x.shape()
            )));
        }
        let n_stages = self.config.stage_channels.len();
        let min = 1usize << n_stages;
        if x.dim(2) < min || x.dim(3) < min {
            return Err(Error::Shape(format!(
                "input {}x{} is smaller than {min}x{min} required by {n_stages} stages",
                x.dim(2),
                x.dim(3),
            )));
        }
        let mut y = self.stem.forward(x, mode)?;
        for s in &mut self.stages {
            y = s.forward(&y, mode)?;
        }
        Ok(y)
    }

    /// Backpropagates into the parameters; the image gradient is not formed.
    pub fn backward(&mut self, dy: &Tensor<T>) -> Result<()> {
        let mut d = dy.clone();
        for s in self.stages.iter_mut().rev() {
            d = s.backward(&d, true)?.expect("input gradient requested");
        }
        self.stem.backward(&d, false)?;
        Ok(())
    }

    pub fn visit(&mut self, f: &mut TensorVisitor<'_, T>) {
        self.stem.visit("backbone.stem", f);
        let per = self.config.blocks_per_stage;
        for (i, s) in self.stages.iter_mut().enumerate() {
            let name = match i % per {
                0 => format!("backbone.stage{}", i / per),
                j => format!("backbone.stage{}.block{j}", i / per),
            };
            s.visit(&name, f);
        }
    }

    pub(crate) fn branches(&self, out: &mut Vec<usize>) {
        self.stem.branches(out);
        self.stages.iter().for_each(|s| s.branches(out));
    }

    pub fn clear_cache(&mut self) {
        self.stem.clear_cache();
        self.stages.iter_mut().for_each(ConvBlock::clear_cache);
    }
}
