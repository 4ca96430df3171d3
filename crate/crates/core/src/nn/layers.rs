//! Layers with cached forward state and analytic backward passes.
//!
//! `forward` records what `backward` needs only when called in
//! [`Mode::Train`]; calling `backward` without a recorded forward is a
//! state error.

use super::real::Real;
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::imgproc::RngStream;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

fn missing_forward(layer: &str) -> Error {
    Error::State(format!("{layer}: backward called without a recorded forward pass"))
}

/// 3x3 convolution with zero padding 1.
#[derive(Debug, Clone)]
pub struct Conv2d<T: Real> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
    stride: usize,
    cache: Option<ConvCache<T>>,
}

#[derive(Debug, Clone)]
struct ConvCache<T> {
    cols: Vec<T>,
    in_shape: [usize; 4],
    out_hw: (usize, usize),
}

const KSIZE: usize = 3;
const PAD: usize = 1;

pub fn conv_out_size(n: usize, stride: usize) -> usize {
    (n + 2 * PAD - KSIZE) / stride + 1
}

impl<T: Real> Conv2d<T> {
    pub fn new(in_channels: usize, out_channels: usize, stride: usize, rng: &mut RngStream) -> Self {
        // He-normal on fan-in
        let fan_in = (in_channels * KSIZE * KSIZE) as f64;
        let std = (2.0 / fan_in).sqrt();
        let n = out_channels * in_channels * KSIZE * KSIZE;
        let w = (0..n).map(|_| T::of(std * rng.normal())).collect();
        Self {
            weight: Tensor::param(&[out_channels, in_channels, KSIZE, KSIZE], w).unwrap(),
            bias: Tensor::param(&[out_channels], vec![T::zero(); out_channels]).unwrap(),
            stride,
            cache: None,
        }
    }

    pub fn in_channels(&self) -> usize {
        self.weight.dim(1)
    }

    pub fn out_channels(&self) -> usize {
        self.weight.dim(0)
    }

    pub fn stride(&self) -> usize {
        self.stride
    }

    pub fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        if x.rank() != 4 || x.dim(1) != self.in_channels() {
            return Err(Error::Shape(format!(
                "conv expects [N, {}, H, W], got {:?}",
                self.in_channels(),
                x.shape()
            )));
        }
        let [n, c, h, w] = [x.dim(0), x.dim(1), x.dim(2), x.dim(3)];
        let (ho, wo) = (conv_out_size(h, self.stride), conv_out_size(w, self.stride));
        let cout = self.out_channels();
        let ck = c * KSIZE * KSIZE;
        let p = ho * wo;
        let mut cols = vec![T::zero(); n * ck * p];
        let mut out = vec![T::zero(); n * cout * p];
        for s in 0..n {
            let col = &mut cols[s * ck * p..(s + 1) * ck * p];
            im2col(&x.data()[s * c * h * w..(s + 1) * c * h * w], c, h, w, self.stride, ho, wo, col);
            let o = &mut out[s * cout * p..(s + 1) * cout * p];
            for (oc, row) in o.chunks_mut(p).enumerate() {
                row.iter_mut().for_each(|v| *v = self.bias.data()[oc]);
            }
            T::gemm(cout, ck, p, T::one(), self.weight.data(), false, col, false, T::one(), o);
        }
        self.cache = (mode == Mode::Train).then_some(ConvCache {
            cols,
            in_shape: [n, c, h, w],
            out_hw: (ho, wo),
        });
        Tensor::new(&[n, cout, ho, wo], out)
    }

    /// Accumulates weight and bias gradients; returns the input gradient
    /// when `input_grad` is set.
    pub fn backward(&mut self, dy: &Tensor<T>, input_grad: bool) -> Result<Option<Tensor<T>>> {
        let cache = self.cache.as_ref().ok_or_else(|| missing_forward("conv"))?;
        let [n, c, h, w] = cache.in_shape;
        let (ho, wo) = cache.out_hw;
        let cout = self.weight.dim(0);
        dy.expect_shape("conv output gradient", &[n, cout, ho, wo])?;
        let ck = c * KSIZE * KSIZE;
        let p = ho * wo;
        let mut dx = input_grad.then(|| vec![T::zero(); n * c * h * w]);
        let mut dcol = vec![T::zero(); ck * p];
        {
            let (_, db) = self.bias.data_and_grad_mut();
            for s in 0..n {
                let g = &dy.data()[s * cout * p..(s + 1) * cout * p];
                for (oc, row) in g.chunks(p).enumerate() {
                    db[oc] += row.iter().copied().sum();
                }
            }
        }
        let (wdata, dw) = self.weight.data_and_grad_mut();
        for s in 0..n {
            let g = &dy.data()[s * cout * p..(s + 1) * cout * p];
            let col = &cache.cols[s * ck * p..(s + 1) * ck * p];
            T::gemm(cout, p, ck, T::one(), g, false, col, true, T::one(), dw);
            if let Some(dx) = dx.as_mut() {
                T::gemm(ck, cout, p, T::one(), wdata, true, g, false, T::zero(), &mut dcol);
                col2im(&dcol, c, h, w, self.stride, ho, wo, &mut dx[s * c * h * w..(s + 1) * c * h * w]);
            }
        }
        dx.map(|d| Tensor::new(&[n, c, h, w], d)).transpose()
    }

    pub fn clear_cache(&mut self) {
        self.cache = None;
    }
}

#[allow(clippy::too_many_arguments)]
fn im2col<T: Real>(x: &[T], c: usize, h: usize, w: usize, stride: usize, ho: usize, wo: usize, col: &mut [T]) {
    let p = ho * wo;
    for ci in 0..c {
        for ky in 0..KSIZE {
            for kx in 0..KSIZE {
                let row = (ci * KSIZE + ky) * KSIZE + kx;
                let dst = &mut col[row * p..(row + 1) * p];
                for oy in 0..ho {
                    let iy = (oy * stride + ky) as isize - PAD as isize;
                    if iy < 0 || iy >= h as isize {
                        dst[oy * wo..(oy + 1) * wo].iter_mut().for_each(|v| *v = T::zero());
                        continue;
                    }
                    let src = &x[(ci * h + iy as usize) * w..(ci * h + iy as usize + 1) * w];
                    for ox in 0..wo {
                        let ix = (ox * stride + kx) as isize - PAD as isize;
                        dst[oy * wo + ox] = if ix < 0 || ix >= w as isize {
                            T::zero()
                        } else {
                            src[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn col2im<T: Real>(col: &[T], c: usize, h: usize, w: usize, stride: usize, ho: usize, wo: usize, dx: &mut [T]) {
    let p = ho * wo;
    for ci in 0..c {
        for ky in 0..KSIZE {
            for kx in 0..KSIZE {
                let row = (ci * KSIZE + ky) * KSIZE + kx;
                let src = &col[row * p..(row + 1) * p];
                for oy in 0..ho {
                    let iy = (oy * stride + ky) as isize - PAD as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let base = (ci * h + iy as usize) * w;
                    for ox in 0..wo {
                        let ix = (ox * stride + kx) as isize - PAD as isize;
                        if ix >= 0 && ix < w as isize {
                            dx[base + ix as usize] += src[oy * wo + ox];
                        }
                    }
                }
            }
        }
    }
}

/// Batch normalization over `[N, C, ...]` inputs, per channel `C`.
///
/// Train mode normalizes with batch statistics (biased variance) and
/// updates the running estimates with momentum 0.1 (unbiased variance);
/// eval mode uses the running estimates.
#[derive(Debug, Clone)]
pub struct BatchNorm<T: Real> {
    pub weight: Tensor<T>,
    pub bias: Option<Tensor<T>>,
    pub running_mean: Tensor<T>,
    pub running_var: Tensor<T>,
    pub momentum: f64,
    pub eps: f64,
    cache: Option<BnCache<T>>,
}

#[derive(Debug, Clone)]
struct BnCache<T> {
    xhat: Vec<T>,
    inv_std: Vec<T>,
    shape: Vec<usize>,
    mode: Mode,
}

impl<T: Real> BatchNorm<T> {
    pub fn new(channels: usize, with_shift: bool) -> Self {
        Self {
            weight: Tensor::param(&[channels], vec![T::one(); channels]).unwrap(),
            bias: with_shift.then(|| Tensor::param(&[channels], vec![T::zero(); channels]).unwrap()),
            running_mean: Tensor::zeros(&[channels]),
            running_var: Tensor::full(&[channels], T::one()),
            momentum: 0.1,
            eps: 1e-5,
            cache: None,
        }
    }

    pub fn channels(&self) -> usize {
        self.weight.len()
    }

    fn split(shape: &[usize]) -> (usize, usize, usize) {
        let n = shape[0];
        let c = shape[1];
        let s = shape[2..].iter().product();
        (n, c, s)
    }

    pub fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        if x.rank() < 2 || x.dim(1) != self.channels() {
            return Err(Error::Shape(format!(
                "batch norm expects [N, {}, ...], got {:?}",
                self.channels(),
                x.shape()
            )));
        }
        let (n, c, s) = Self::split(x.shape());
        let m = n * s;
        let xd = x.data();
        let eps = T::of(self.eps);
        let mut inv_std = vec![T::zero(); c];
        let mut means = vec![T::zero(); c];
        match mode {
            Mode::Train => {
                if m < 2 {
                    return Err(Error::Shape(
                        "batch norm in train mode needs more than one value per channel".into(),
                    ));
                }
                let mom = T::of(self.momentum);
                for ch in 0..c {
                    let mut sum = T::zero();
                    for b in 0..n {
                        sum += xd[(b * c + ch) * s..(b * c + ch + 1) * s].iter().copied().sum();
                    }
                    let mean = sum / T::of(m as f64);
                    let mut sq = T::zero();
                    for b in 0..n {
                        for &v in &xd[(b * c + ch) * s..(b * c + ch + 1) * s] {
                            sq += (v - mean) * (v - mean);
                        }
                    }
                    let var = sq / T::of(m as f64);
                    means[ch] = mean;
                    inv_std[ch] = T::one() / (var + eps).sqrt();
                    let unbiased = sq / T::of((m - 1) as f64);
                    let rm = &mut self.running_mean.data_mut()[ch];
                    *rm = (T::one() - mom) * *rm + mom * mean;
                    let rv = &mut self.running_var.data_mut()[ch];
                    *rv = (T::one() - mom) * *rv + mom * unbiased;
                }
            }
            Mode::Eval => {
                for ch in 0..c {
                    means[ch] = self.running_mean.data()[ch];
                    inv_std[ch] = T::one() / (self.running_var.data()[ch] + eps).sqrt();
                }
            }
        }
        let mut xhat = vec![T::zero(); xd.len()];
        let mut out = vec![T::zero(); xd.len()];
        for b in 0..n {
            for ch in 0..c {
                let g = self.weight.data()[ch];
                let beta = self.bias.as_ref().map_or(T::zero(), |t| t.data()[ch]);
                let off = (b * c + ch) * s;
                for i in off..off + s {
                    let h = (xd[i] - means[ch]) * inv_std[ch];
                    xhat[i] = h;
                    out[i] = g * h + beta;
                }
            }
        }
        self.cache = Some(BnCache {
            xhat,
            inv_std,
            shape: x.shape().to_vec(),
            mode,
        });
        Tensor::new(x.shape(), out)
    }

    pub fn backward(&mut self, dy: &Tensor<T>) -> Result<Tensor<T>> {
        let cache = self.cache.as_ref().ok_or_else(|| missing_forward("batch norm"))?;
        dy.expect_shape("batch norm output gradient", &cache.shape)?;
        let (n, c, s) = Self::split(&cache.shape);
        let m = T::of((n * s) as f64);
        let dyd = dy.data();
        let mut dx = vec![T::zero(); dyd.len()];
        for ch in 0..c {
            let (mut sum_dy, mut sum_dy_xhat) = (T::zero(), T::zero());
            for b in 0..n {
                let off = (b * c + ch) * s;
                for i in off..off + s {
                    sum_dy += dyd[i];
                    sum_dy_xhat += dyd[i] * cache.xhat[i];
                }
            }
            let g = self.weight.data()[ch];
            self.weight.data_and_grad_mut().1[ch] += sum_dy_xhat;
            if let Some(bias) = self.bias.as_mut() {
                bias.data_and_grad_mut().1[ch] += sum_dy;
            }
            let k = g * cache.inv_std[ch];
            for b in 0..n {
                let off = (b * c + ch) * s;
                for i in off..off + s {
                    dx[i] = match cache.mode {
                        Mode::Train => k * (dyd[i] - sum_dy / m - cache.xhat[i] * sum_dy_xhat / m),
                        Mode::Eval => k * dyd[i],
                    };
                }
            }
        }
        Tensor::new(&cache.shape, dx)
    }

    pub fn clear_cache(&mut self) {
        self.cache = None;
    }
}

/// Fully connected layer `y = x W^T (+ b)` on `[N, in]` inputs.
#[derive(Debug, Clone)]
pub struct Linear<T: Real> {
    pub weight: Tensor<T>,
    pub bias: Option<Tensor<T>>,
    cache: Option<Tensor<T>>,
}

impl<T: Real> Linear<T> {
    pub fn new(input: usize, output: usize, with_bias: bool, std: f64, rng: &mut RngStream) -> Self {
        let w = (0..input * output).map(|_| T::of(std * rng.normal())).collect();
        Self {
            weight: Tensor::param(&[output, input], w).unwrap(),
            bias: with_bias.then(|| Tensor::param(&[output], vec![T::zero(); output]).unwrap()),
            cache: None,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weight.dim(1)
    }

    pub fn output_dim(&self) -> usize {
        self.weight.dim(0)
    }

    pub fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        if x.rank() != 2 || x.dim(1) != self.input_dim() {
            return Err(Error::Shape(format!(
                "linear expects [N, {}], got {:?}",
                self.input_dim(),
                x.shape()
            )));
        }
        let n = x.dim(0);
        let o = self.output_dim();
        let mut out = vec![T::zero(); n * o];
        if let Some(b) = &self.bias {
            for row in out.chunks_mut(o) {
                row.copy_from_slice(b.data());
            }
        }
        T::gemm(n, self.input_dim(), o, T::one(), x.data(), false, self.weight.data(), true, T::one(), &mut out);
        self.cache = (mode == Mode::Train).then(|| x.clone());
        Tensor::new(&[n, o], out)
    }

    pub fn backward(&mut self, dy: &Tensor<T>) -> Result<Tensor<T>> {
        let x = self.cache.as_ref().ok_or_else(|| missing_forward("linear"))?;
        let (n, i, o) = (x.dim(0), self.input_dim(), self.output_dim());
        dy.expect_shape("linear output gradient", &[n, o])?;
        if let Some(b) = self.bias.as_mut() {
            let (_, db) = b.data_and_grad_mut();
            for row in dy.data().chunks(o) {
                for (g, &v) in db.iter_mut().zip(row) {
                    *g += v;
                }
            }
        }
        let (w, dw) = self.weight.data_and_grad_mut();
        T::gemm(o, n, i, T::one(), dy.data(), true, x.data(), false, T::one(), dw);
        let mut dx = vec![T::zero(); n * i];
        T::gemm(n, o, i, T::one(), dy.data(), false, w, false, T::zero(), &mut dx);
        Tensor::new(&[n, i], dx)
    }

    pub fn clear_cache(&mut self) {
        self.cache = None;
    }
}

/// Rectifier with a cached output for the backward mask.
#[derive(Debug, Clone, Default)]
pub struct Relu<T: Real> {
    cache: Option<Tensor<T>>,
}

impl<T: Real> Relu<T> {
    pub fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Tensor<T> {
        let mut y = x.clone();
        y.data_mut().iter_mut().for_each(|v| *v = v.max(T::zero()));
        self.cache = (mode == Mode::Train).then(|| y.clone());
        y
    }

    /// Which units were positive in the last train-mode forward.
    pub fn active(&self) -> Option<Vec<bool>> {
        self.cache.as_ref().map(|y| y.data().iter().map(|&v| v > T::zero()).collect())
    }

    pub fn backward(&mut self, dy: &Tensor<T>) -> Result<Tensor<T>> {
        let y = self.cache.as_ref().ok_or_else(|| missing_forward("relu"))?;
        dy.expect_shape("relu output gradient", y.shape())?;
        let data = dy
            .data()
            .iter()
            .zip(y.data())
            .map(|(&g, &o)| if o > T::zero() { g } else { T::zero() })
            .collect();
        Tensor::new(y.shape(), data)
    }

    pub fn clear_cache(&mut self) {
        self.cache = None;
    }
}

/// Inverted dropout, active in train mode only.
#[derive(Debug, Clone)]
pub struct Dropout<T: Real> {
    pub p: f64,
    mask: Option<Vec<T>>,
}

impl<T: Real> Dropout<T> {
    pub fn new(p: f64) -> Self {
        Self { p, mask: None }
    }

    pub fn forward(&mut self, x: &Tensor<T>, mode: Mode, rng: Option<&mut RngStream>) -> Result<Tensor<T>> {
        if mode == Mode::Eval || self.p == 0.0 {
            self.mask = (mode == Mode::Train).then(|| vec![T::one(); x.len()]);
            return Ok(x.clone());
        }
        let rng = rng.ok_or_else(|| Error::State("dropout in train mode needs an RNG stream".into()))?;
        let keep = T::of(1.0 / (1.0 - self.p));
        let mask: Vec<T> = (0..x.len())
            .map(|_| if rng.uniform() < self.p { T::zero() } else { keep })
            .collect();
        let data = x.data().iter().zip(&mask).map(|(&v, &m)| v * m).collect();
        self.mask = Some(mask);
        Tensor::new(x.shape(), data)
    }

    pub fn backward(&mut self, dy: &Tensor<T>) -> Result<Tensor<T>> {
        let mask = self.mask.as_ref().ok_or_else(|| missing_forward("dropout"))?;
        let data = dy.data().iter().zip(mask).map(|(&g, &m)| g * m).collect();
        Tensor::new(dy.shape(), data)
    }

    pub fn clear_cache(&mut self) {
        self.mask = None;
    }
}
