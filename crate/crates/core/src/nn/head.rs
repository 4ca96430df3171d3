use serde::{Deserialize, Serialize};

use super::backbone::visit_bn;
use super::layers::{BatchNorm, Dropout, Linear, Mode, Relu};
use super::real::Real;
use super::tensor::Tensor;
use super::TensorVisitor;
use crate::error::{Error, Result};
use crate::imgproc::RngStream;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadKind {
    Linear,
    Bn,
    Reduction,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HeadConfig {
    pub kind: HeadKind,
    pub embed_dim: usize,
    pub num_classes: usize,
    pub dropout_p: f64,
}

impl Default for HeadConfig {
    fn default() -> Self {
        Self {
            kind: HeadKind::Bn,
            embed_dim: 64,
            num_classes: 2,
            dropout_p: 0.5,
        }
    }
}

impl HeadConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(Error::Config(format!("num_classes must be at least 2, got {}", self.num_classes)));
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return Err(Error::Config(format!("dropout_p must lie in [0, 1), got {}", self.dropout_p)));
        }
        if self.kind == HeadKind::Reduction && self.embed_dim == 0 {
            return Err(Error::Config("embed_dim must be positive".into()));
        }
        Ok(())
    }

    /// Dimension of the inference feature for pooled input of width `d`.
    pub fn feature_dim(&self, d: usize) -> usize {
        match self.kind {
            HeadKind::Reduction => self.embed_dim,
            _ => d,
        }
    }
}

const CLASSIFIER_STD: f64 = 0.001;

#[derive(Debug, Clone)]
enum Neck<T: Real> {
    Linear,
    Bn(BatchNorm<T>),
    Reduction {
        reduce: Linear<T>,
        bn: BatchNorm<T>,
        relu: Relu<T>,
        dropout: Dropout<T>,
    },
}

/// Output of a head: the retrieval feature and the class logits.
#[derive(Debug, Clone)]
pub struct HeadOutput<T: Real> {
    pub feature: Tensor<T>,
    pub logits: Tensor<T>,
}

#[derive(Debug, Clone)]
pub struct Head<T: Real> {
    config: HeadConfig,
    neck: Neck<T>,
    pub classifier: Linear<T>,
}

impl<T: Real> Head<T> {
    pub fn new(config: &HeadConfig, input_dim: usize, rng: &mut RngStream) -> Result<Self> {
        config.validate()?;
        let neck = match config.kind {
            HeadKind::Linear => Neck::Linear,
            HeadKind::Bn => Neck::Bn(BatchNorm::new(input_dim, false)),
            HeadKind::Reduction => Neck::Reduction {
                reduce: Linear::new(input_dim, config.embed_dim, false, (2.0 / input_dim as f64).sqrt(), rng),
                bn: BatchNorm::new(config.embed_dim, true),
                relu: Relu::default(),
                dropout: Dropout::new(config.dropout_p),
            },
        };
        let classifier = Linear::new(config.feature_dim(input_dim), config.num_classes, false, CLASSIFIER_STD, rng);
        Ok(Self {
            config: config.clone(),
            neck,
            classifier,
        })
    }

    pub fn config(&self) -> &HeadConfig {
        &self.config
    }

    pub fn forward(&mut self, pooled: &Tensor<T>, mode: Mode, rng: Option<&mut RngStream>) -> Result<HeadOutput<T>> {
        let (feature, to_classifier) = match &mut self.neck {
            Neck::Linear => (pooled.clone(), None),
            Neck::Bn(bn) => (bn.forward(pooled, mode)?, None),
            Neck::Reduction {
                reduce,
                bn,
                relu,
                dropout,
            } => {
                let z = reduce.forward(pooled, mode)?;
                let z = bn.forward(&z, mode)?;
                let f = relu.forward(&z, mode);
                let dropped = dropout.forward(&f, mode, rng)?;
                (f, Some(dropped))
            }
        };
        let logits = self.classifier.forward(to_classifier.as_ref().unwrap_or(&feature), mode)?;
        Ok(HeadOutput { feature, logits })
    }

    /// Gradient w.r.t. the pooled input, given gradients on the feature
    /// and on the logits.
    pub fn backward(&mut self, d_feature: Option<&Tensor<T>>, d_logits: Option<&Tensor<T>>) -> Result<Tensor<T>> {
        let mut d = match d_logits {
            Some(g) => Some(self.classifier.backward(g)?),
            None => None,
        };
        if let (Neck::Reduction { dropout, .. }, Some(g)) = (&mut self.neck, d.as_ref()) {
            d = Some(dropout.backward(g)?);
        }
        let d = match (d, d_feature) {
            (Some(mut a), Some(b)) => {
                b.expect_shape("feature gradient", a.shape())?;
                a.data_mut().iter_mut().zip(b.data()).for_each(|(x, &y)| *x += y);
                a
            }
            (Some(a), None) => a,
            (None, Some(b)) => b.clone(),
            (None, None) => return Err(Error::Argument("head backward needs at least one gradient".into())),
        };
        match &mut self.neck {
            Neck::Linear => Ok(d),
            Neck::Bn(bn) => bn.backward(&d),
            Neck::Reduction { reduce, bn, relu, .. } => {
                let d = relu.backward(&d)?;
                let d = bn.backward(&d)?;
                reduce.backward(&d)
            }
        }
    }

    pub fn visit(&mut self, f: &mut TensorVisitor<'_, T>) {
        match &mut self.neck {
            Neck::Linear => {}
            Neck::Bn(bn) => visit_bn(bn, "head.bn", f),
            Neck::Reduction { reduce, bn, .. } => {
                f("head.reduce.weight", &mut reduce.weight, true);
                visit_bn(bn, "head.reduce.bn", f);
            }
        }
        f("head.classifier.weight", &mut self.classifier.weight, true);
    }

    pub(crate) fn branches(&self, out: &mut Vec<usize>) {
        if let Neck::Reduction { relu, .. } = &self.neck {
            out.extend(relu.active().unwrap_or_default().into_iter().map(usize::from));
        }
    }

    pub fn clear_cache(&mut self) {
        match &mut self.neck {
            Neck::Linear => {}
            Neck::Bn(bn) => bn.clear_cache(),
            Neck::Reduction {
                reduce,
                bn,
                relu,
                dropout,
            } => {
                reduce.clear_cache();
                bn.clear_cache();
                relu.clear_cache();
                dropout.clear_cache();
            }
        }
        self.classifier.clear_cache();
    }
}
