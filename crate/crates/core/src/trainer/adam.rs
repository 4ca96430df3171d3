use crate::error::{Error, Result};
use crate::nn::{Network, Real};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// L2 coefficient added to the gradient before the moment updates.
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 5e-4,
        }
    }
}

/// Moment buffers of one parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Moments {
    pub name: String,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

/// Buffers for every trainable tensor, in visiting order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct OptimizerState {
    pub step: u64,
    pub slots: Vec<Moments>,
}

/// One bias-corrected Adam update of `param` in place. `step` is the
/// 1-based index of this update.
pub fn adam_update<T: Real>(
    param: &mut [T],
    grad: &[T],
    m: &mut [f64],
    v: &mut [f64],
    step: u64,
    lr: f64,
    cfg: &AdamConfig,
) {
    let c1 = 1.0 - cfg.beta1.powf(step as f64);
    let c2 = 1.0 - cfg.beta2.powf(step as f64);
    for i in 0..param.len() {
        let w = param[i].f64();
        let g = grad[i].f64() + cfg.weight_decay * w;
        m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
        v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
        let m_hat = m[i] / c1;
        let v_hat = v[i] / c2;
        param[i] = T::of(w - lr * m_hat / (v_hat.sqrt() + cfg.eps));
    }
}

#[derive(Debug, Clone)]
pub struct Adam {
    pub config: AdamConfig,
    pub state: OptimizerState,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            state: OptimizerState::default(),
        }
    }

    /// Updates every trainable tensor of `net` from its gradient. A
    /// non-finite gradient aborts the step before any parameter changes.
    pub fn step<T: Real>(&mut self, net: &mut Network<T>, lr: f64) -> Result<()> {
        let mut bad = None;
        net.visit(&mut |name, t, trainable| {
            if trainable && bad.is_none() && t.grad().is_some_and(|g| g.iter().any(|v| !v.f64().is_finite())) {
                bad = Some(name.to_string());
            }
        });
        if let Some(param) = bad {
            return Err(Error::NonFinite { param });
        }
        let first = self.state.slots.is_empty();
        let step = self.state.step + 1;
        let mut slot = 0;
        let mut mismatch = None;
        let cfg = self.config;
        let slots = &mut self.state.slots;
        net.visit(&mut |name, t, trainable| {
            if !trainable || mismatch.is_some() {
                return;
            }
            if first {
                slots.push(Moments {
                    name: name.to_string(),
                    m: vec![0.0; t.len()],
                    v: vec![0.0; t.len()],
                });
            }
            let Some(s) = slots.get_mut(slot).filter(|s| s.name == name && s.m.len() == t.len()) else {
                mismatch = Some(name.to_string());
                return;
            };
            slot += 1;
            let (data, grad) = t.data_and_grad_mut();
            adam_update(data, grad, &mut s.m, &mut s.v, step, lr, &cfg);
        });
        if let Some(name) = mismatch {
            return Err(Error::State(format!("optimizer state does not match parameter `{name}`")));
        }
        self.state.step = step;
        Ok(())
    }
}
