//! Declarative augmentation plans and offline dataset expansion.
//!
//! A plan is a JSON document:
//!
//! ```json
//! {"seed": 7, "steps": [{"op": "affine", "p": 0.5, "params": {"rotate": [-10, 10]}}]}
//! ```
//!
//! Each step draws one uniform number to decide whether it fires, then the
//! op draws its own parameters from the same stream.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::buffer::{load_image, save_image, ImageBuffer};
use super::mix::{augmix, AugMixParams};
use super::ops::{
    adjust_colors, affine, color_jitter, gaussian_blur, horizontal_flip, random_crop_resize,
    resize_bilinear, AffineMatrix, JitterStrengths, DEFAULT_ASPECT_RANGE,
};
use super::rng::RngStream;
use crate::error::{Error, Result};
use crate::manifest::{Manifest, ManifestRow};

fn zero() -> f64 {
    0.0
}
fn one() -> f64 {
    1.0
}
fn unit_range() -> [f64; 2] {
    [1.0, 1.0]
}
fn zero_range() -> [f64; 2] {
    [0.0, 0.0]
}
fn default_rotate() -> [f64; 2] {
    [-15.0, 15.0]
}
fn default_shear() -> [f64; 2] {
    [-10.0, 10.0]
}
fn default_translate() -> [f64; 2] {
    [-0.1, 0.1]
}
fn default_area() -> [f64; 2] {
    [0.6, 1.0]
}
fn default_aspect() -> Option<[f64; 2]> {
    Some(DEFAULT_ASPECT_RANGE)
}
fn default_strength() -> f64 {
    0.3
}
fn default_sigma() -> [f64; 2] {
    [0.1, 1.5]
}
fn default_width() -> usize {
    3
}
fn default_depth() -> [usize; 2] {
    [1, 3]
}
fn default_pool() -> Vec<AugStep> {
    AugStep::default_augmix_pool()
}

/// One augmentation operation and its parameter ranges.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", content = "params", rename_all = "snake_case", deny_unknown_fields)]
pub enum AugOp {
    Resize {
        height: usize,
        width: usize,
    },
    /// Rotation (degrees), translation (fraction of the side), isotropic
    /// scale and shear (degrees), all about the image center.
    Affine {
        #[serde(default = "zero_range")]
        rotate: [f64; 2],
        #[serde(default = "zero_range")]
        translate: [f64; 2],
        #[serde(default = "unit_range")]
        scale: [f64; 2],
        #[serde(default = "zero_range")]
        shear: [f64; 2],
        #[serde(default = "zero")]
        fill: f64,
    },
    Rotate {
        #[serde(default = "default_rotate")]
        degrees: [f64; 2],
        #[serde(default = "zero")]
        fill: f64,
    },
    Translate {
        #[serde(default = "default_translate")]
        fraction: [f64; 2],
        #[serde(default = "zero")]
        fill: f64,
    },
    Shear {
        #[serde(default = "default_shear")]
        degrees: [f64; 2],
        #[serde(default = "zero")]
        fill: f64,
    },
    Crop {
        #[serde(default = "default_area")]
        area: [f64; 2],
        #[serde(default = "default_aspect")]
        aspect: Option<[f64; 2]>,
    },
    ColorJitter {
        #[serde(default)]
        brightness: f64,
        #[serde(default)]
        contrast: f64,
        #[serde(default)]
        saturation: f64,
    },
    Brightness {
        #[serde(default = "default_strength")]
        strength: f64,
    },
    Contrast {
        #[serde(default = "default_strength")]
        strength: f64,
    },
    Blur {
        #[serde(default = "default_sigma")]
        sigma: [f64; 2],
    },
    Flip {},
    #[serde(rename = "augmix")]
    AugMix {
        #[serde(default = "default_width")]
        width: usize,
        #[serde(default = "default_depth")]
        depth: [usize; 2],
        #[serde(default = "one")]
        alpha: f64,
        #[serde(default = "default_pool")]
        ops: Vec<AugStep>,
    },
}

impl AugOp {
    pub fn name(&self) -> &'static str {
        match self {
            AugOp::Resize { .. } => "resize",
            AugOp::Affine { .. } => "affine",
            AugOp::Rotate { .. } => "rotate",
            AugOp::Translate { .. } => "translate",
            AugOp::Shear { .. } => "shear",
            AugOp::Crop { .. } => "crop",
            AugOp::ColorJitter { .. } => "color_jitter",
            AugOp::Brightness { .. } => "brightness",
            AugOp::Contrast { .. } => "contrast",
            AugOp::Blur { .. } => "blur",
            AugOp::Flip {} => "flip",
            AugOp::AugMix { .. } => "augmix",
        }
    }

    /// AugMix chains only draw geometric ops, crops, brightness and
    /// contrast; blur and saturation stay out of the pool.
    pub(crate) fn check_augmix_member(&self) -> Result<()> {
        match self {
            AugOp::Affine { .. }
            | AugOp::Rotate { .. }
            | AugOp::Translate { .. }
            | AugOp::Shear { .. }
            | AugOp::Crop { .. }
            | AugOp::Brightness { .. }
            | AugOp::Contrast { .. } => Ok(()),
            other => Err(Error::Argument(format!(
                "`{}` is not allowed in an augmix op pool",
                other.name()
            ))),
        }
    }

    fn validate(&self) -> Result<()> {
        let ordered = |name: &str, r: [f64; 2]| {
            if r[0] <= r[1] && r[0].is_finite() && r[1].is_finite() {
                Ok(())
            } else {
                Err(Error::Config(format!("`{name}` range must be finite and ordered, got {r:?}")))
            }
        };
        match self {
            AugOp::Resize { height, width } => {
                if *height == 0 || *width == 0 {
                    return Err(Error::Config("`resize` needs nonzero height and width".into()));
                }
            }
            AugOp::Affine { rotate, translate, scale, shear, .. } => {
                ordered("rotate", *rotate)?;
                ordered("translate", *translate)?;
                ordered("scale", *scale)?;
                ordered("shear", *shear)?;
                if scale[0] <= 0.0 {
                    return Err(Error::Config("`scale` must be positive".into()));
                }
            }
            AugOp::Rotate { degrees, .. } | AugOp::Shear { degrees, .. } => ordered("degrees", *degrees)?,
            AugOp::Translate { fraction, .. } => ordered("fraction", *fraction)?,
            AugOp::Crop { area, aspect } => {
                ordered("area", *area)?;
                if !(area[0] > 0.0 && area[1] <= 1.0) {
                    return Err(Error::Config(format!("`area` must lie in (0, 1], got {area:?}")));
                }
                if let Some(a) = aspect {
                    ordered("aspect", *a)?;
                    if a[0] <= 0.0 {
                        return Err(Error::Config("`aspect` must be positive".into()));
                    }
                }
            }
            AugOp::ColorJitter { brightness, contrast, saturation } => {
                for (n, v) in [("brightness", brightness), ("contrast", contrast), ("saturation", saturation)] {
                    if !(0.0..1.0).contains(v) {
                        return Err(Error::Config(format!("`{n}` must be in [0, 1), got {v}")));
                    }
                }
            }
            AugOp::Brightness { strength } | AugOp::Contrast { strength } => {
                if !(0.0..1.0).contains(strength) {
                    return Err(Error::Config(format!("`strength` must be in [0, 1), got {strength}")));
                }
            }
            AugOp::Blur { sigma } => {
                ordered("sigma", *sigma)?;
                if sigma[0] < 0.0 {
                    return Err(Error::Config("`sigma` must be >= 0".into()));
                }
            }
            AugOp::Flip {} => {}
            AugOp::AugMix { width, depth, alpha, ops } => {
                if *width == 0 || depth[0] == 0 || depth[0] > depth[1] || !(*alpha > 0.0) {
                    return Err(Error::Config("`augmix` needs width >= 1, 1 <= depth lo <= hi, alpha > 0".into()));
                }
                if ops.is_empty() {
                    return Err(Error::Config("`augmix` op pool is empty".into()));
                }
                for s in ops {
                    s.op.check_augmix_member().map_err(|e| Error::Config(e.to_string()))?;
                    s.validate()?;
                }
            }
        }
        Ok(())
    }

    /// Apply unconditionally, drawing this op's parameters from `rng`.
    pub fn apply(&self, img: &ImageBuffer, rng: &mut RngStream) -> Result<ImageBuffer> {
        let (h, w) = (img.height(), img.width());
        match self {
            AugOp::Resize { height, width } => resize_bilinear(img, *height, *width),
            AugOp::Affine { rotate, translate, scale, shear, fill } => {
                let deg = rng.uniform_range(rotate[0], rotate[1]);
                let s = rng.uniform_range(scale[0], scale[1]);
                let sh = rng.uniform_range(shear[0], shear[1]);
                let tx = rng.uniform_range(translate[0], translate[1]) * w as f64;
                let ty = rng.uniform_range(translate[0], translate[1]) * h as f64;
                affine(img, &AffineMatrix::about_center(h, w, deg, s, sh, tx, ty), *fill)
            }
            AugOp::Rotate { degrees, fill } => {
                let deg = rng.uniform_range(degrees[0], degrees[1]);
                affine(img, &AffineMatrix::about_center(h, w, deg, 1.0, 0.0, 0.0, 0.0), *fill)
            }
            AugOp::Translate { fraction, fill } => {
                let tx = rng.uniform_range(fraction[0], fraction[1]) * w as f64;
                let ty = rng.uniform_range(fraction[0], fraction[1]) * h as f64;
                affine(img, &AffineMatrix::translation(tx, ty), *fill)
            }
            AugOp::Shear { degrees, fill } => {
                let sh = rng.uniform_range(degrees[0], degrees[1]);
                affine(img, &AffineMatrix::about_center(h, w, 0.0, 1.0, sh, 0.0, 0.0), *fill)
            }
            AugOp::Crop { area, aspect } => random_crop_resize(img, rng, *area, *aspect),
            AugOp::ColorJitter { brightness, contrast, saturation } => color_jitter(
                img,
                rng,
                JitterStrengths {
                    brightness: *brightness,
                    contrast: *contrast,
                    saturation: *saturation,
                },
            ),
            AugOp::Brightness { strength } => {
                let f = rng.uniform_range(1.0 - strength, 1.0 + strength);
                Ok(adjust_colors(img, f, 1.0, 1.0))
            }
            AugOp::Contrast { strength } => {
                let f = rng.uniform_range(1.0 - strength, 1.0 + strength);
                Ok(adjust_colors(img, 1.0, f, 1.0))
            }
            AugOp::Blur { sigma } => gaussian_blur(img, rng.uniform_range(sigma[0], sigma[1])),
            AugOp::Flip {} => Ok(horizontal_flip(img)),
            AugOp::AugMix { width, depth, alpha, ops } => augmix(
                img,
                rng,
                &AugMixParams {
                    width: *width,
                    depth_range: *depth,
                    alpha: *alpha,
                    op_pool: ops.clone(),
                },
            ),
        }
    }
}

/// An op applied with probability `p`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawStep", into = "RawStep")]
pub struct AugStep {
    pub op: AugOp,
    pub p: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawStep {
    op: String,
    #[serde(default = "one")]
    p: f64,
    #[serde(default)]
    params: Option<Value>,
}

impl TryFrom<RawStep> for AugStep {
    type Error = String;

    fn try_from(raw: RawStep) -> std::result::Result<Self, String> {
        let params = match raw.params {
            None | Some(Value::Null) => Value::Object(Default::default()),
            Some(v) => v,
        };
        let tagged = serde_json::json!({ "op": raw.op, "params": params });
        let op: AugOp = serde_json::from_value(tagged).map_err(|e| format!("op `{}`: {e}", raw.op))?;
        Ok(AugStep { op, p: raw.p })
    }
}

impl From<AugStep> for RawStep {
    fn from(step: AugStep) -> Self {
        let v = serde_json::to_value(&step.op).expect("AugOp serializes");
        RawStep {
            op: step.op.name().to_string(),
            p: step.p,
            params: v.get("params").cloned(),
        }
    }
}

impl AugStep {
    pub fn new(op: AugOp, p: f64) -> Self {
        Self { op, p }
    }

    pub fn always(op: AugOp) -> Self {
        Self { op, p: 1.0 }
    }

    pub fn default_augmix_pool() -> Vec<AugStep> {
        vec![
            AugStep::always(AugOp::Rotate { degrees: [-15.0, 15.0], fill: 0.0 }),
            AugStep::always(AugOp::Translate { fraction: [-0.1, 0.1], fill: 0.0 }),
            AugStep::always(AugOp::Shear { degrees: [-10.0, 10.0], fill: 0.0 }),
            AugStep::always(AugOp::Crop { area: [0.6, 1.0], aspect: Some(DEFAULT_ASPECT_RANGE) }),
            AugStep::always(AugOp::Brightness { strength: 0.3 }),
            AugStep::always(AugOp::Contrast { strength: 0.3 }),
        ]
    }

    fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.p) {
            return Err(Error::Config(format!(
                "step `{}`: probability `p` must be in [0, 1], got {}",
                self.op.name(),
                self.p
            )));
        }
        self.op.validate()
    }

    /// Draw one uniform; apply the op when it falls below `p`.
    pub fn apply(&self, img: &ImageBuffer, rng: &mut RngStream) -> Result<ImageBuffer> {
        if rng.uniform() < self.p {
            self.op.apply(img, rng)
        } else {
            Ok(img.clone())
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AugPlan {
    pub seed: u64,
    pub steps: Vec<AugStep>,
}

impl AugPlan {
    pub fn new(seed: u64, steps: Vec<AugStep>) -> Result<Self> {
        let plan = Self { seed, steps };
        plan.validate()?;
        Ok(plan)
    }

    /// The full offline expansion used in the augmentation ablations:
    /// augmix, affine, color jitter, blur and crop.
    pub fn full(seed: u64) -> Self {
        Self {
            seed,
            steps: vec![
                AugStep::new(
                    AugOp::AugMix { width: 3, depth: [1, 3], alpha: 1.0, ops: AugStep::default_augmix_pool() },
                    0.5,
                ),
                AugStep::new(
                    AugOp::Affine {
                        rotate: [-10.0, 10.0],
                        translate: [-0.05, 0.05],
                        scale: [0.9, 1.1],
                        shear: [-5.0, 5.0],
                        fill: 0.0,
                    },
                    0.5,
                ),
                AugStep::new(AugOp::ColorJitter { brightness: 0.3, contrast: 0.3, saturation: 0.3 }, 0.8),
                AugStep::new(AugOp::Blur { sigma: [0.1, 1.5] }, 0.5),
                AugStep::new(AugOp::Crop { area: [0.7, 1.0], aspect: Some(DEFAULT_ASPECT_RANGE) }, 0.5),
            ],
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.steps.iter().try_for_each(AugStep::validate)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let plan: AugPlan =
            serde_json::from_str(text).map_err(|e| Error::Config(format!("augmentation plan: {e}")))?;
        plan.validate()?;
        Ok(plan)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plan serializes")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    /// Run every step on `img` with the stream `(seed, substream)`.
    pub fn apply(&self, img: &ImageBuffer, substream: u64) -> Result<ImageBuffer> {
        let mut rng = RngStream::new(self.seed, substream);
        self.apply_with(img, &mut rng)
    }

    pub fn apply_with(&self, img: &ImageBuffer, rng: &mut RngStream) -> Result<ImageBuffer> {
        let mut x = img.clone();
        for step in &self.steps {
            x = step.apply(&x, rng)?;
        }
        Ok(x)
    }
}

/// Offline expansion: for each input image write the original plus
/// `copies` augmented variants under `out_dir/images/`, and the resulting
/// manifest to `out_dir/manifest.csv`. Variant `c` of image `i` uses
/// substream `i * copies + c`.
pub fn apply_plan(manifest: &Manifest, plan: &AugPlan, copies: usize, out_dir: &Path) -> Result<Manifest> {
    plan.validate()?;
    let images_dir = out_dir.join("images");
    fs::create_dir_all(&images_dir).map_err(|e| Error::io(&images_dir, e))?;
    let probe = out_dir.join(".write-probe");
    fs::write(&probe, b"").map_err(|e| Error::io(&probe, e))?;
    let _ = fs::remove_file(&probe);

    let mut rows = Vec::with_capacity(manifest.len() * (copies + 1));
    for (i, row) in manifest.rows.iter().enumerate() {
        let failed = |msg: String| ManifestRow {
            path: row.path.clone(),
            identity: row.identity.clone(),
            origin_path: row.path.clone(),
            error: Some(msg),
        };
        if let Some(e) = &row.error {
            rows.push(failed(e.clone()));
            continue;
        }
        let img = match load_image(manifest.resolve(row)) {
            Ok(img) => img,
            Err(e) => {
                rows.push(failed(e.to_string()));
                continue;
            }
        };
        let ext = if img.channels() == 1 { "pgm" } else { "ppm" };
        let mut emit = |name: String, out: &ImageBuffer| -> Result<()> {
            let rel = format!("images/{name}.{ext}");
            save_image(out, out_dir.join(&rel))?;
            rows.push(ManifestRow {
                path: rel,
                identity: row.identity.clone(),
                origin_path: row.path.clone(),
                error: None,
            });
            Ok(())
        };
        emit(format!("{i:05}_orig"), &img)?;
        for c in 0..copies {
            let aug = plan.apply(&img, (i * copies + c) as u64)?;
            emit(format!("{i:05}_aug{c:03}"), &aug)?;
        }
    }
    let out = Manifest::new(out_dir, rows);
    out.save(out_dir.join("manifest.csv"))?;
    Ok(out)
}
