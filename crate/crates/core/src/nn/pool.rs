//! Global spatial aggregation `[N, C, H, W] -> [N, C]`.

use serde::{Deserialize, Serialize};

use super::layers::Mode;
use super::real::Real;
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoolMode {
    Avg,
    Max,
    /// Generalized mean `(mean x^p)^(1/p)` with a learnable exponent.
    Gem,
    /// Softmax over locations of a learned per-location logit
    /// `w . x_hw + b`, then the weighted sum of local features.
    Attention,
}

impl PoolMode {
    pub fn code(self) -> u8 {
        match self {
            PoolMode::Avg => 0,
            PoolMode::Max => 1,
            PoolMode::Gem => 2,
            PoolMode::Attention => 3,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Some(match code {
            0 => PoolMode::Avg,
            1 => PoolMode::Max,
            2 => PoolMode::Gem,
            3 => PoolMode::Attention,
            _ => return None,
        })
    }
}

pub const DEFAULT_GEM_P: f64 = 3.0;

#[derive(Debug, Clone)]
pub struct Pool<T: Real> {
    pub mode: PoolMode,
    /// GeM exponent, shape `[1]`. Present for every mode so checkpoints
    /// always carry it.
    pub gem_p: Tensor<T>,
    /// Attention scoring vector `[C]` and bias `[1]` (attention mode only).
    pub attn_weight: Option<Tensor<T>>,
    pub attn_bias: Option<Tensor<T>>,
    cache: Option<PoolCache<T>>,
}

#[derive(Debug, Clone)]
struct PoolCache<T> {
    x: Tensor<T>,
    y: Vec<T>,
    /// argmax index (max), softmax weights (attention) or S = mean((x/m)^p) (gem)
    aux: Vec<T>,
    argmax: Vec<usize>,
}

impl<T: Real> Pool<T> {
    pub fn new(mode: PoolMode, channels: usize, gem_p: f64) -> Self {
        let attention = mode == PoolMode::Attention;
        Self {
            mode,
            gem_p: Tensor::param(&[1], vec![T::of(gem_p)]).unwrap(),
            attn_weight: attention.then(|| Tensor::param(&[channels], vec![T::zero(); channels]).unwrap()),
            attn_bias: attention.then(|| Tensor::param(&[1], vec![T::zero()]).unwrap()),
            cache: None,
        }
    }

    pub fn p(&self) -> T {
        self.gem_p.data()[0]
    }

    pub fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        if x.rank() != 4 || x.dim(2) * x.dim(3) == 0 {
            return Err(Error::Shape(format!("pool expects [N, C, H, W] with H*W >= 1, got {:?}", x.shape())));
        }
        let (n, c, s) = (x.dim(0), x.dim(1), x.dim(2) * x.dim(3));
        let xd = x.data();
        let mut y = vec![T::zero(); n * c];
        let mut aux = Vec::new();
        let mut argmax = Vec::new();
        let inv_s = T::one() / T::of(s as f64);
        match self.mode {
            PoolMode::Avg => {
                for (i, out) in y.iter_mut().enumerate() {
                    *out = xd[i * s..(i + 1) * s].iter().copied().sum::<T>() * inv_s;
                }
            }
            PoolMode::Max => {
                argmax = vec![0; n * c];
                for (i, out) in y.iter_mut().enumerate() {
                    let row = &xd[i * s..(i + 1) * s];
                    let mut best = 0;
                    for (j, &v) in row.iter().enumerate() {
                        if v > row[best] {
                            best = j;
                        }
                    }
                    argmax[i] = best;
                    *out = row[best];
                }
            }
            PoolMode::Gem => {
                let p = self.p();
                if !(p > T::zero()) {
                    return Err(Error::Domain(format!("GeM exponent must be positive, got {p}")));
                }
                if let Some(v) = xd.iter().find(|&&v| v < T::zero() || v.is_nan()) {
                    return Err(Error::Domain(format!("GeM pooling needs non-negative inputs, found {v}")));
                }
                aux = vec![T::zero(); n * c];
                argmax = vec![0; n * c];
                for (i, out) in y.iter_mut().enumerate() {
                    let row = &xd[i * s..(i + 1) * s];
                    let m = row.iter().copied().fold(T::zero(), T::max);
                    if m == T::zero() {
                        continue;
                    }
                    // scaled by the channel max for range safety at large p
                    let sum: T = row.iter().map(|&v| (v / m).powf(p)).sum();
                    let smean = sum * inv_s;
                    aux[i] = smean;
                    *out = m * smean.powf(T::one() / p);
                }
            }
            PoolMode::Attention => {
                let w = self.attn_weight.as_ref().ok_or_else(|| Error::State("attention pool without weights".into()))?;
                let b = self.attn_bias.as_ref().map_or(T::zero(), |t| t.data()[0]);
                if w.len() != c {
                    return Err(Error::Shape(format!("attention pool has {} weights for {c} channels", w.len())));
                }
                aux = vec![T::zero(); n * s];
                for bi in 0..n {
                    let a = &mut aux[bi * s..(bi + 1) * s];
                    for (hw, av) in a.iter_mut().enumerate() {
                        let mut l = b;
                        for ch in 0..c {
                            l += w.data()[ch] * xd[(bi * c + ch) * s + hw];
                        }
                        *av = l;
                    }
                    softmax_in_place(a);
                    for ch in 0..c {
                        let row = &xd[(bi * c + ch) * s..(bi * c + ch + 1) * s];
                        y[bi * c + ch] = row.iter().zip(a.iter()).map(|(&v, &wt)| v * wt).sum();
                    }
                }
            }
        }
        self.cache = (mode == Mode::Train).then(|| PoolCache {
            x: x.clone(),
            y: y.clone(),
            aux,
            argmax,
        });
        Tensor::new(&[n, c], y)
    }

    pub fn backward(&mut self, dy: &Tensor<T>) -> Result<Tensor<T>> {
        let cache = self
            .cache
            .as_ref()
            .ok_or_else(|| Error::State("pool: backward called without a recorded forward pass".into()))?;
        let x = &cache.x;
        let (n, c, s) = (x.dim(0), x.dim(1), x.dim(2) * x.dim(3));
        dy.expect_shape("pool output gradient", &[n, c])?;
        let xd = x.data();
        let g = dy.data();
        let mut dx = vec![T::zero(); xd.len()];
        let inv_s = T::one() / T::of(s as f64);
        match self.mode {
            PoolMode::Avg => {
                for i in 0..n * c {
                    dx[i * s..(i + 1) * s].iter_mut().for_each(|v| *v = g[i] * inv_s);
                }
            }
            PoolMode::Max => {
                for i in 0..n * c {
                    dx[i * s + cache.argmax[i]] = g[i];
                }
            }
            PoolMode::Gem => {
                let p = self.p();
                let mut dp = T::zero();
                for i in 0..n * c {
                    let smean = cache.aux[i];
                    if smean == T::zero() {
                        continue;
                    }
                    let row = &xd[i * s..(i + 1) * s];
                    let m = row.iter().copied().fold(T::zero(), T::max);
                    let k = g[i] * inv_s * smean.powf(T::one() / p - T::one());
                    let mut rlogr = T::zero();
                    for (j, &v) in row.iter().enumerate() {
                        if v > T::zero() {
                            let r = v / m;
                            dx[i * s + j] = k * r.powf(p - T::one());
                            rlogr += r.powf(p) * r.ln();
                        } else if p == T::one() {
                            dx[i * s + j] = k;
                        }
                    }
                    let rlogr = rlogr * inv_s;
                    dp += g[i] * cache.y[i] * (-smean.ln() / (p * p) + rlogr / (p * smean));
                }
                self.gem_p.data_and_grad_mut().1[0] += dp;
            }
            PoolMode::Attention => {
                let w: Vec<T> = self.attn_weight.as_ref().unwrap().data().to_vec();
                let mut dw = vec![T::zero(); c];
                let mut db = T::zero();
                for bi in 0..n {
                    let a = &cache.aux[bi * s..(bi + 1) * s];
                    // d y_c / d a_hw = x_c,hw
                    let mut da = vec![T::zero(); s];
                    for ch in 0..c {
                        let gc = g[bi * c + ch];
                        let off = (bi * c + ch) * s;
                        for hw in 0..s {
                            da[hw] += gc * xd[off + hw];
                            dx[off + hw] += gc * a[hw];
                        }
                    }
                    let dot: T = a.iter().zip(&da).map(|(&p, &d)| p * d).sum();
                    for hw in 0..s {
                        let dl = a[hw] * (da[hw] - dot);
                        db += dl;
                        for ch in 0..c {
                            let off = (bi * c + ch) * s + hw;
                            dx[off] += dl * w[ch];
                            dw[ch] += dl * xd[off];
                        }
                    }
                }
                let (_, gw) = self.attn_weight.as_mut().unwrap().data_and_grad_mut();
                gw.iter_mut().zip(&dw).for_each(|(g, &d)| *g += d);
                self.attn_bias.as_mut().unwrap().data_and_grad_mut().1[0] += db;
            }
        }
        Tensor::new(x.shape(), dx)
    }

    /// Winning location per `(n, c)` of the last train-mode max pooling.
    pub fn winners(&self) -> Option<&[usize]> {
        match (self.mode, &self.cache) {
            (PoolMode::Max, Some(c)) => Some(&c.argmax),
            _ => None,
        }
    }

    pub fn clear_cache(&mut self) {
        self.cache = None;
    }
}

pub(crate) fn softmax_in_place<T: Real>(v: &mut [T]) {
    let m = v.iter().copied().fold(T::neg_infinity(), T::max);
    let mut total = T::zero();
    for x in v.iter_mut() {
        *x = (*x - m).exp();
        total += *x;
    }
    for x in v.iter_mut() {
        *x /= total;
    }
}

/// One-shot pooling with explicit parameters (eval semantics).
pub fn pool<T: Real>(
    map: &Tensor<T>,
    mode: PoolMode,
    gem_p: f64,
    attn: Option<(&[T], T)>,
) -> Result<Tensor<T>> {
    let c = if map.rank() == 4 { map.dim(1) } else { 0 };
    let mut p = Pool::new(mode, c, gem_p);
    if let (PoolMode::Attention, Some((w, b))) = (mode, attn) {
        if w.len() != c {
            return Err(Error::Shape(format!("attention weights have {} entries for {c} channels", w.len())));
        }
        p.attn_weight.as_mut().unwrap().data_mut().copy_from_slice(w);
        p.attn_bias.as_mut().unwrap().data_mut()[0] = b;
    }
    p.forward(map, Mode::Eval)
}
