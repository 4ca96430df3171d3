//! Multi-image mixing: AugMix chains and CutMix boxes.

use super::buffer::ImageBuffer;
use super::plan::AugStep;
use super::rng::RngStream;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct AugMixParams {
    pub width: usize,
    pub depth_range: [usize; 2],
    pub alpha: f64,
    pub op_pool: Vec<AugStep>,
}

impl Default for AugMixParams {
    fn default() -> Self {
        Self {
            width: 3,
            depth_range: [1, 3],
            alpha: 1.0,
            op_pool: AugStep::default_augmix_pool(),
        }
    }
}

/// AugMix: `width` chains of randomly chosen ops, mixed with Dirichlet
/// weights, then blended with the clean image by a Beta skip weight.
///
/// Draw order: chain weights, skip weight, then per chain its depth and
/// each op index followed by that op's own parameter draws.
pub fn augmix(img: &ImageBuffer, rng: &mut RngStream, params: &AugMixParams) -> Result<ImageBuffer> {
    if params.width == 0 {
        return Err(Error::Argument("augmix width must be >= 1".into()));
    }
    if params.op_pool.is_empty() {
        return Err(Error::Argument("augmix op pool is empty".into()));
    }
    let [dlo, dhi] = params.depth_range;
    if dlo == 0 || dlo > dhi {
        return Err(Error::Argument(format!(
            "augmix depth range must satisfy 1 <= lo <= hi, got [{dlo}, {dhi}]"
        )));
    }
    if !(params.alpha > 0.0) {
        return Err(Error::Argument("augmix alpha must be positive".into()));
    }
    for step in &params.op_pool {
        step.op.check_augmix_member()?;
    }

    let weights = rng.dirichlet(params.alpha, params.width);
    let skip = rng.beta(params.alpha, params.alpha);
    let mut chains = Vec::with_capacity(params.width);
    for _ in 0..params.width {
        let depth = dlo + rng.below(dhi - dlo + 1);
        let mut x = img.clone();
        for _ in 0..depth {
            let step = &params.op_pool[rng.below(params.op_pool.len())];
            x = step.op.apply(&x, rng)?;
        }
        chains.push(x);
    }
    mix_chains(img, &chains, &weights, skip)
}

/// `skip * x + (1 - skip) * sum_i weights[i] * chains[i]`, clamped.
pub fn mix_chains(
    img: &ImageBuffer,
    chains: &[ImageBuffer],
    weights: &[f64],
    skip: f64,
) -> Result<ImageBuffer> {
    if chains.len() != weights.len() {
        return Err(Error::Argument(format!(
            "{} chains but {} weights",
            chains.len(),
            weights.len()
        )));
    }
    if let Some(bad) = chains.iter().find(|c| !c.same_shape(img)) {
        return Err(Error::Shape(format!(
            "chain output {}x{} differs from input {}x{}",
            bad.height(),
            bad.width(),
            img.height(),
            img.width()
        )));
    }
    let mut out = img.clone();
    for (i, v) in out.data_mut().iter_mut().enumerate() {
        let x = img.data()[i];
        let aug: f64 = chains
            .iter()
            .zip(weights)
            .map(|(c, w)| w * c.data()[i])
            .sum();
        *v = (skip * x + (1.0 - skip) * aug).clamp(0.0, 1.0);
    }
    Ok(out)
}

/// Axis-aligned paste region, half-open on both axes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CutBox {
    pub y0: usize,
    pub y1: usize,
    pub x0: usize,
    pub x1: usize,
}

impl CutBox {
    pub fn area(&self) -> usize {
        (self.y1 - self.y0) * (self.x1 - self.x0)
    }

    /// Box of size `round(H sqrt(1 - lambda)) x round(W sqrt(1 - lambda))`
    /// centered at `(cy, cx)` and clipped to the frame.
    pub fn centered(height: usize, width: usize, lambda: f64, cy: usize, cx: usize) -> Self {
        let cut = (1.0 - lambda.clamp(0.0, 1.0)).sqrt();
        let bh = (height as f64 * cut).round() as i64;
        let bw = (width as f64 * cut).round() as i64;
        let y0 = cy as i64 - bh / 2;
        let x0 = cx as i64 - bw / 2;
        let clip = |v: i64, hi: usize| v.clamp(0, hi as i64) as usize;
        CutBox {
            y0: clip(y0, height),
            y1: clip(y0 + bh, height),
            x0: clip(x0, width),
            x1: clip(x0 + bw, width),
        }
    }

    /// Draws `lambda ~ Beta(alpha, alpha)` and a uniform center.
    pub fn sample(height: usize, width: usize, rng: &mut RngStream, alpha: f64) -> Self {
        let lambda = rng.beta(alpha, alpha);
        let cy = rng.below(height);
        let cx = rng.below(width);
        Self::centered(height, width, lambda, cy, cx)
    }

    /// Fraction of the frame left untouched: `1 - area / (H W)`.
    pub fn lambda_effective(&self, height: usize, width: usize) -> f64 {
        1.0 - self.area() as f64 / (height * width) as f64
    }
}

/// Paste `b` into `a` inside `cut`.
pub fn paste_box(a: &ImageBuffer, b: &ImageBuffer, cut: CutBox) -> Result<(ImageBuffer, f64)> {
    if !a.same_shape(b) {
        return Err(Error::Argument(format!(
            "cutmix needs equal shapes, got {}x{}x{} and {}x{}x{}",
            a.height(),
            a.width(),
            a.channels(),
            b.height(),
            b.width(),
            b.channels()
        )));
    }
    if cut.y1 > a.height() || cut.x1 > a.width() || cut.y0 > cut.y1 || cut.x0 > cut.x1 {
        return Err(Error::Argument(format!("cut box {cut:?} outside frame")));
    }
    let mut out = a.clone();
    let ch = a.channels();
    for y in cut.y0..cut.y1 {
        let s = a.index(y, cut.x0, 0);
        let e = s + (cut.x1 - cut.x0) * ch;
        out.data_mut()[s..e].copy_from_slice(&b.data()[s..e]);
    }
    Ok((out, cut.lambda_effective(a.height(), a.width())))
}

pub fn cutmix(
    a: &ImageBuffer,
    b: &ImageBuffer,
    rng: &mut RngStream,
    beta_alpha: f64,
) -> Result<(ImageBuffer, f64)> {
    if !a.same_shape(b) {
        return paste_box(a, b, CutBox { y0: 0, y1: 0, x0: 0, x1: 0 });
    }
    let cut = CutBox::sample(a.height(), a.width(), rng, beta_alpha);
    paste_box(a, b, cut)
}
