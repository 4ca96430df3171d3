//! Geometric and photometric image operations.
//!
//! All operations return a new buffer and clamp their output to `[0, 1]`.

use serde::{Deserialize, Serialize};

use super::buffer::ImageBuffer;
use super::rng::RngStream;
use crate::error::{Error, Result};

/// Bilinear resize with half-pixel centers: output index `i` samples the
/// source at `(i + 0.5) * in / out - 0.5`, clamped to the edge pixels.
pub fn resize_bilinear(img: &ImageBuffer, out_h: usize, out_w: usize) -> Result<ImageBuffer> {
    if out_h == 0 || out_w == 0 {
        return Err(Error::Argument(format!(
            "resize target must be at least 1x1, got {out_h}x{out_w}"
        )));
    }
    let (in_h, in_w, ch) = (img.height(), img.width(), img.channels());
    if in_h == out_h && in_w == out_w {
        return Ok(img.clone());
    }
    let ys = axis_samples(in_h, out_h);
    let xs = axis_samples(in_w, out_w);
    let src = img.data();
    let mut out = vec![0.0; out_h * out_w * ch];
    for (oy, &(y0, y1, fy)) in ys.iter().enumerate() {
        for (ox, &(x0, x1, fx)) in xs.iter().enumerate() {
            for c in 0..ch {
                let p00 = src[(y0 * in_w + x0) * ch + c];
                let p01 = src[(y0 * in_w + x1) * ch + c];
                let p10 = src[(y1 * in_w + x0) * ch + c];
                let p11 = src[(y1 * in_w + x1) * ch + c];
                let top = p00 + (p01 - p00) * fx;
                let bottom = p10 + (p11 - p10) * fx;
                out[(oy * out_w + ox) * ch + c] = (top + (bottom - top) * fy).clamp(0.0, 1.0);
            }
        }
    }
    ImageBuffer::new(out_h, out_w, ch, out)
}

fn axis_samples(n_in: usize, n_out: usize) -> Vec<(usize, usize, f64)> {
    let scale = n_in as f64 / n_out as f64;
    let max = (n_in - 1) as f64;
    (0..n_out)
        .map(|i| {
            let s = ((i as f64 + 0.5) * scale - 0.5).clamp(0.0, max);
            let i0 = s.floor() as usize;
            let i1 = (i0 + 1).min(n_in - 1);
            (i0, i1, s - i0 as f64)
        })
        .collect()
}

/// Forward 2x3 affine map `[a b tx; c d ty]` from input to output pixel
/// coordinates (x right, y down, pixel centers on integers).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AffineMatrix(pub [[f64; 3]; 2]);

impl AffineMatrix {
    pub const IDENTITY: AffineMatrix = AffineMatrix([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]);

    pub fn translation(tx: f64, ty: f64) -> Self {
        AffineMatrix([[1.0, 0.0, tx], [0.0, 1.0, ty]])
    }

    /// Rotation by `degrees` (counter-clockwise on screen), isotropic scale
    /// and horizontal shear, all about the image center, followed by a
    /// translation of `(tx, ty)` pixels.
    pub fn about_center(
        height: usize,
        width: usize,
        degrees: f64,
        scale: f64,
        shear_degrees: f64,
        tx: f64,
        ty: f64,
    ) -> Self {
        let cx = (width as f64 - 1.0) / 2.0;
        let cy = (height as f64 - 1.0) / 2.0;
        let (s, c) = (-degrees.to_radians()).sin_cos();
        let sh = shear_degrees.to_radians().tan();
        // R * Sh * scale, with Sh = [1 sh; 0 1]
        let a = scale * c;
        let b = scale * (c * sh - s);
        let cc = scale * s;
        let d = scale * (s * sh + c);
        let ex = cx + tx - (a * cx + b * cy);
        let ey = cy + ty - (cc * cx + d * cy);
        AffineMatrix([[a, b, ex], [cc, d, ey]])
    }

    pub fn det(&self) -> f64 {
        let m = &self.0;
        m[0][0] * m[1][1] - m[0][1] * m[1][0]
    }

    pub fn inverse(&self) -> Result<AffineMatrix> {
        let det = self.det();
        if det.abs() <= 1e-8 {
            return Err(Error::Argument(format!(
                "affine matrix is singular (det = {det:e})"
            )));
        }
        let [[a, b, tx], [c, d, ty]] = self.0;
        let ia = d / det;
        let ib = -b / det;
        let ic = -c / det;
        let id = a / det;
        Ok(AffineMatrix([
            [ia, ib, -(ia * tx + ib * ty)],
            [ic, id, -(ic * tx + id * ty)],
        ]))
    }

    #[inline]
    pub fn apply(&self, x: f64, y: f64) -> (f64, f64) {
        let m = &self.0;
        (
            m[0][0] * x + m[0][1] * y + m[0][2],
            m[1][0] * x + m[1][1] * y + m[1][2],
        )
    }
}

/// Warp `img` by the forward map `matrix` using inverse mapping and
/// bilinear interpolation; samples outside the source take `fill`.
pub fn affine(img: &ImageBuffer, matrix: &AffineMatrix, fill: f64) -> Result<ImageBuffer> {
    let inv = matrix.inverse()?;
    if *matrix == AffineMatrix::IDENTITY {
        return Ok(img.clone());
    }
    let (h, w, ch) = (img.height(), img.width(), img.channels());
    let fill = fill.clamp(0.0, 1.0);
    let src = img.data();
    let mut out = vec![0.0; h * w * ch];
    let fetch = |yy: i64, xx: i64, c: usize| -> f64 {
        if yy < 0 || xx < 0 || yy >= h as i64 || xx >= w as i64 {
            fill
        } else {
            src[(yy as usize * w + xx as usize) * ch + c]
        }
    };
    for oy in 0..h {
        for ox in 0..w {
            let (sx, sy) = inv.apply(ox as f64, oy as f64);
            let x0 = sx.floor();
            let y0 = sy.floor();
            let fx = sx - x0;
            let fy = sy - y0;
            let (x0, y0) = (x0 as i64, y0 as i64);
            for c in 0..ch {
                let mut v = 0.0;
                let mut acc = |yy: i64, xx: i64, wgt: f64| {
                    if wgt != 0.0 {
                        v += wgt * fetch(yy, xx, c);
                    }
                };
                acc(y0, x0, (1.0 - fx) * (1.0 - fy));
                acc(y0, x0 + 1, fx * (1.0 - fy));
                acc(y0 + 1, x0, (1.0 - fx) * fy);
                acc(y0 + 1, x0 + 1, fx * fy);
                out[(oy * w + ox) * ch + c] = v.clamp(0.0, 1.0);
            }
        }
    }
    ImageBuffer::new(h, w, ch, out)
}

/// Crop window in pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CropWindow {
    pub top: usize,
    pub left: usize,
    pub height: usize,
    pub width: usize,
}

pub fn crop(img: &ImageBuffer, win: CropWindow) -> Result<ImageBuffer> {
    if win.height == 0
        || win.width == 0
        || win.top + win.height > img.height()
        || win.left + win.width > img.width()
    {
        return Err(Error::Argument(format!(
            "crop window {win:?} outside {}x{} image",
            img.height(),
            img.width()
        )));
    }
    let ch = img.channels();
    let mut out = Vec::with_capacity(win.height * win.width * ch);
    for y in win.top..win.top + win.height {
        let start = img.index(y, win.left, 0);
        out.extend_from_slice(&img.data()[start..start + win.width * ch]);
    }
    ImageBuffer::new(win.height, win.width, ch, out)
}

/// Sample a crop window covering an area fraction in `area_range` with the
/// image's aspect ratio jittered by a log-uniform factor in `aspect_range`
/// (`None` keeps the aspect ratio). Falls back to the full frame after ten
/// rejected draws.
pub fn sample_crop_window(
    height: usize,
    width: usize,
    rng: &mut RngStream,
    area_range: [f64; 2],
    aspect_range: Option<[f64; 2]>,
) -> Result<CropWindow> {
    let [lo, hi] = area_range;
    if !(lo > 0.0 && lo <= hi && hi <= 1.0) {
        return Err(Error::Argument(format!(
            "crop area range must satisfy 0 < lo <= hi <= 1, got [{lo}, {hi}]"
        )));
    }
    for _ in 0..10 {
        let area = rng.uniform_range(lo, hi);
        let ratio = match aspect_range {
            Some([a, b]) => rng.uniform_range(a.ln(), b.ln()).exp(),
            None => 1.0,
        };
        let w = (width as f64 * (area * ratio).sqrt()).round() as usize;
        let h = (height as f64 * (area / ratio).sqrt()).round() as usize;
        if w >= 1 && h >= 1 && w <= width && h <= height {
            let top = rng.below(height - h + 1);
            let left = rng.below(width - w + 1);
            return Ok(CropWindow {
                top,
                left,
                height: h,
                width: w,
            });
        }
    }
    Ok(CropWindow {
        top: 0,
        left: 0,
        height,
        width,
    })
}

pub const DEFAULT_ASPECT_RANGE: [f64; 2] = [3.0 / 4.0, 4.0 / 3.0];

/// Random resized crop back to the input size.
pub fn random_crop_resize(
    img: &ImageBuffer,
    rng: &mut RngStream,
    area_range: [f64; 2],
    aspect_range: Option<[f64; 2]>,
) -> Result<ImageBuffer> {
    let win = sample_crop_window(img.height(), img.width(), rng, area_range, aspect_range)?;
    let cropped = crop(img, win)?;
    resize_bilinear(&cropped, img.height(), img.width())
}

/// Jitter strengths; each factor is drawn uniformly from `[1 - d, 1 + d]`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JitterStrengths {
    #[serde(default)]
    pub brightness: f64,
    #[serde(default)]
    pub contrast: f64,
    #[serde(default)]
    pub saturation: f64,
}

pub fn color_jitter(
    img: &ImageBuffer,
    rng: &mut RngStream,
    strengths: JitterStrengths,
) -> Result<ImageBuffer> {
    for (name, d) in [
        ("brightness", strengths.brightness),
        ("contrast", strengths.contrast),
        ("saturation", strengths.saturation),
    ] {
        if !(0.0..1.0).contains(&d) {
            return Err(Error::Argument(format!(
                "{name} strength must be in [0, 1), got {d}"
            )));
        }
    }
    let fb = rng.uniform_range(1.0 - strengths.brightness, 1.0 + strengths.brightness);
    let fc = rng.uniform_range(1.0 - strengths.contrast, 1.0 + strengths.contrast);
    let fs = rng.uniform_range(1.0 - strengths.saturation, 1.0 + strengths.saturation);
    Ok(adjust_colors(img, fb, fc, fs))
}

/// Brightness, then contrast, then saturation with explicit factors.
/// Saturation is a no-op on grayscale images.
pub fn adjust_colors(img: &ImageBuffer, fb: f64, fc: f64, fs: f64) -> ImageBuffer {
    let mut out = img.clone();
    if fb != 1.0 {
        for v in out.data_mut() {
            *v = (*v * fb).clamp(0.0, 1.0);
        }
    }
    if fc != 1.0 {
        let mean = out.luma_mean();
        for v in out.data_mut() {
            *v = ((*v - mean) * fc + mean).clamp(0.0, 1.0);
        }
    }
    if fs != 1.0 && out.channels() == 3 {
        let n = out.height() * out.width();
        for p in 0..n {
            let gray = out.luma_at(p);
            for c in 0..3 {
                let v = &mut out.data_mut()[p * 3 + c];
                *v = (gray * (1.0 - fs) + *v * fs).clamp(0.0, 1.0);
            }
        }
    }
    out
}

/// Normalized 1-D Gaussian taps for radius `ceil(3 sigma)`.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let r = (3.0 * sigma).ceil() as i64;
    let mut k: Vec<f64> = (-r..=r)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = k.iter().sum();
    for v in &mut k {
        *v /= total;
    }
    k
}

/// Separable Gaussian blur with clamp-to-edge padding.
pub fn gaussian_blur(img: &ImageBuffer, sigma: f64) -> Result<ImageBuffer> {
    if !(sigma >= 0.0) {
        return Err(Error::Argument(format!("blur sigma must be >= 0, got {sigma}")));
    }
    if sigma < 1e-3 {
        return Ok(img.clone());
    }
    let mut out = blur_unclamped(img, sigma);
    out.clamp_unit();
    Ok(out)
}

pub(crate) fn blur_unclamped(img: &ImageBuffer, sigma: f64) -> ImageBuffer {
    let k = gaussian_kernel(sigma);
    let r = (k.len() / 2) as i64;
    let (h, w, ch) = (img.height(), img.width(), img.channels());
    let src = img.data();
    let mut tmp = vec![0.0; src.len()];
    for y in 0..h {
        for x in 0..w {
            for c in 0..ch {
                let mut acc = 0.0;
                for (t, &kv) in k.iter().enumerate() {
                    let xx = (x as i64 + t as i64 - r).clamp(0, w as i64 - 1) as usize;
                    acc += kv * src[(y * w + xx) * ch + c];
                }
                tmp[(y * w + x) * ch + c] = acc;
            }
        }
    }
    let mut out = vec![0.0; src.len()];
    for y in 0..h {
        for x in 0..w {
            for c in 0..ch {
                let mut acc = 0.0;
                for (t, &kv) in k.iter().enumerate() {
                    let yy = (y as i64 + t as i64 - r).clamp(0, h as i64 - 1) as usize;
                    acc += kv * tmp[(yy * w + x) * ch + c];
                }
                out[(y * w + x) * ch + c] = acc;
            }
        }
    }
    ImageBuffer::new(h, w, ch, out).expect("blur preserves shape")
}

pub fn horizontal_flip(img: &ImageBuffer) -> ImageBuffer {
    let (h, w, ch) = (img.height(), img.width(), img.channels());
    let mut out = img.clone();
    for y in 0..h {
        for x in 0..w {
            let s = img.index(y, w - 1 - x, 0);
            let d = img.index(y, x, 0);
            out.data_mut()[d..d + ch].copy_from_slice(&img.data()[s..s + ch]);
        }
    }
    out
}
