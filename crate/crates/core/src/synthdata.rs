//! Synthetic nose-print-like identities.
//!
//! Each identity is a continuous texture field: a bank of oriented
//! sinusoids plus a cellular (nearest-seed distance) pattern, both drawn
//! from the identity's seed. Instances of an identity resample the field
//! under a small random similarity transform, add photometric jitter and
//! pixel noise, then apply a [`ShiftProfile`] that models a capture-style
//! difference between train and test data.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imgproc::{gaussian_blur, mix_seed, save_image, ImageBuffer, RngStream};
use crate::manifest::{Manifest, ManifestRow};

const TAG_PATTERN: u64 = 0x5041_5454;
const TAG_INSTANCE: u64 = 0x494e_5354;
const TAG_SHIFT: u64 = 0x5348_4654;

const N_WAVES: usize = 10;
const N_CELLS: usize = 24;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Wave {
    /// Cycles across the unit square.
    pub frequency: f64,
    pub angle: f64,
    pub phase: f64,
    pub amplitude: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdentitySpec {
    pub id: String,
    pub seed: u64,
    pub waves: Vec<Wave>,
    /// Cell seed points in unit coordinates.
    pub cells: Vec<[f64; 2]>,
    pub cell_weight: f64,
}

impl IdentitySpec {
    pub fn from_seed(id: impl Into<String>, seed: u64) -> Self {
        let mut rng = RngStream::derived(seed, TAG_PATTERN, 0);
        let waves = (0..N_WAVES)
            .map(|_| Wave {
                frequency: rng.uniform_range(2.0, 7.0),
                angle: rng.uniform_range(0.0, PI),
                phase: rng.uniform_range(0.0, 2.0 * PI),
                amplitude: rng.uniform_range(0.5, 1.0),
            })
            .collect();
        let cells = (0..N_CELLS)
            .map(|_| [rng.uniform_range(-0.1, 1.1), rng.uniform_range(-0.1, 1.1)])
            .collect();
        Self {
            id: id.into(),
            seed,
            waves,
            cells,
            cell_weight: 1.0,
        }
    }

    /// Unnormalized field value at unit coordinates `(u, v)`.
    pub fn field(&self, u: f64, v: f64) -> f64 {
        let amp: f64 = self.waves.iter().map(|w| w.amplitude).sum();
        let waves: f64 = self
            .waves
            .iter()
            .map(|w| {
                let t = u * w.angle.cos() + v * w.angle.sin();
                w.amplitude * (2.0 * PI * w.frequency * t + w.phase).sin()
            })
            .sum::<f64>()
            / amp;
        let nearest = self
            .cells
            .iter()
            .map(|c| (c[0] - u).powi(2) + (c[1] - v).powi(2))
            .fold(f64::INFINITY, f64::min)
            .sqrt();
        // distance scaled by the mean cell spacing, saturating at 1
        let cell = (nearest * (self.cells.len() as f64).sqrt()).min(1.0);
        0.5 * waves + self.cell_weight * (1.0 - cell)
    }

    fn raw_grid(&self, size: usize, transform: Option<&Similarity>) -> Vec<f64> {
        let mut out = Vec::with_capacity(size * size);
        for y in 0..size {
            for x in 0..size {
                let u = (x as f64 + 0.5) / size as f64;
                let v = (y as f64 + 0.5) / size as f64;
                let (u, v) = match transform {
                    Some(t) => t.inverse_apply(u, v),
                    None => (u, v),
                };
                out.push(self.field(u, v));
            }
        }
        out
    }

    fn normalization(&self, size: usize) -> (f64, f64) {
        let grid = self.raw_grid(size, None);
        let lo = grid.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = grid.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        (lo, hi)
    }
}

fn normalize(raw: Vec<f64>, (lo, hi): (f64, f64)) -> Vec<f64> {
    let span = hi - lo;
    raw.into_iter()
        .map(|v| if span > 0.0 { ((v - lo) / span).clamp(0.0, 1.0) } else { 0.5 })
        .collect()
}

/// Rotation, scale and translation about the image center, in unit coords.
#[derive(Debug, Clone, Copy)]
struct Similarity {
    cos: f64,
    sin: f64,
    scale: f64,
    tx: f64,
    ty: f64,
}

impl Similarity {
    fn inverse_apply(&self, u: f64, v: f64) -> (f64, f64) {
        let du = u - 0.5 - self.tx;
        let dv = v - 0.5 - self.ty;
        (
            0.5 + (self.cos * du + self.sin * dv) / self.scale,
            0.5 + (-self.sin * du + self.cos * dv) / self.scale,
        )
    }
}

/// Per-instance capture variation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstanceJitter {
    pub max_rotate_deg: f64,
    /// Fraction of the image side.
    pub max_translate: f64,
    pub max_scale_delta: f64,
    /// Contrast gain drawn from `[1 - g, 1 + g]` about mid-gray.
    pub max_gain_delta: f64,
    pub max_offset: f64,
    pub noise_std: f64,
}

impl InstanceJitter {
    pub const NONE: InstanceJitter = InstanceJitter {
        max_rotate_deg: 0.0,
        max_translate: 0.0,
        max_scale_delta: 0.0,
        max_gain_delta: 0.0,
        max_offset: 0.0,
        noise_std: 0.0,
    };
}

impl Default for InstanceJitter {
    fn default() -> Self {
        Self {
            max_rotate_deg: 12.0,
            max_translate: 0.06,
            max_scale_delta: 0.08,
            max_gain_delta: 0.3,
            max_offset: 0.25,
            noise_std: 0.04,
        }
    }
}

/// Capture-style shift applied after instance rendering.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShiftProfile {
    pub blur_sigma: f64,
    /// Additive brightness offset.
    pub brightness_delta: f64,
    pub noise_std: f64,
}

impl ShiftProfile {
    pub fn validate(&self) -> Result<()> {
        if self.blur_sigma < 0.0 || self.brightness_delta < 0.0 || self.noise_std < 0.0 {
            return Err(Error::Argument(format!("shift profile fields must be >= 0: {self:?}")));
        }
        Ok(())
    }
}

pub fn render_identity(spec: &IdentitySpec, size: usize) -> Result<ImageBuffer> {
    check_size(size)?;
    let data = normalize(spec.raw_grid(size, None), spec.normalization(size));
    ImageBuffer::new(size, size, 1, data)
}

fn check_size(size: usize) -> Result<()> {
    if size < 16 {
        return Err(Error::Argument(format!("render size must be >= 16, got {size}")));
    }
    Ok(())
}

pub fn render_instance(
    spec: &IdentitySpec,
    instance_idx: u64,
    size: usize,
    jitter: &InstanceJitter,
    shift: &ShiftProfile,
) -> Result<ImageBuffer> {
    check_size(size)?;
    shift.validate()?;
    let mut rng = RngStream::derived(spec.seed, TAG_INSTANCE, instance_idx);
    let sym = |rng: &mut RngStream, m: f64| rng.uniform_range(-m, m);
    let angle = sym(&mut rng, jitter.max_rotate_deg).to_radians();
    let scale = 1.0 + sym(&mut rng, jitter.max_scale_delta);
    let tx = sym(&mut rng, jitter.max_translate);
    let ty = sym(&mut rng, jitter.max_translate);
    let gain = 1.0 + sym(&mut rng, jitter.max_gain_delta);
    let offset = sym(&mut rng, jitter.max_offset);

    let transform = (angle != 0.0 || scale != 1.0 || tx != 0.0 || ty != 0.0).then(|| Similarity {
        cos: angle.cos(),
        sin: angle.sin(),
        scale,
        tx,
        ty,
    });
    let mut data = normalize(spec.raw_grid(size, transform.as_ref()), spec.normalization(size));
    if gain != 1.0 || offset != 0.0 {
        for v in &mut data {
            *v = ((*v - 0.5) * gain + 0.5 + offset).clamp(0.0, 1.0);
        }
    }
    if jitter.noise_std > 0.0 {
        for v in &mut data {
            *v = (*v + jitter.noise_std * rng.normal()).clamp(0.0, 1.0);
        }
    }
    let mut img = ImageBuffer::new(size, size, 1, data)?;

    if shift.blur_sigma > 0.0 {
        img = gaussian_blur(&img, shift.blur_sigma)?;
    }
    if shift.brightness_delta != 0.0 {
        for v in img.data_mut() {
            *v = (*v + shift.brightness_delta).clamp(0.0, 1.0);
        }
    }
    if shift.noise_std > 0.0 {
        let mut nrng = RngStream::derived(spec.seed, TAG_SHIFT, instance_idx);
        for v in img.data_mut() {
            *v = (*v + shift.noise_std * nrng.normal()).clamp(0.0, 1.0);
        }
    }
    Ok(img)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    pub n_ids: usize,
    pub per_id: usize,
    pub size: usize,
    pub seed: u64,
    #[serde(default)]
    pub shift: ShiftProfile,
    #[serde(default)]
    pub jitter: InstanceJitter,
}

impl DatasetSpec {
    pub fn new(n_ids: usize, per_id: usize, size: usize, seed: u64) -> Self {
        Self {
            n_ids,
            per_id,
            size,
            seed,
            shift: ShiftProfile::default(),
            jitter: InstanceJitter::default(),
        }
    }

    pub fn identity(&self, index: usize) -> IdentitySpec {
        IdentitySpec::from_seed(format!("id_{index:04}"), mix_seed(self.seed, index as u64))
    }
}

/// Write `n_ids * per_id` PGM images under `out_dir/images/` and the
/// manifest to `out_dir/manifest.csv`.
pub fn generate_dataset(spec: &DatasetSpec, out_dir: &Path) -> Result<Manifest> {
    if spec.n_ids < 2 || spec.per_id < 2 {
        return Err(Error::Argument(format!(
            "need at least 2 identities with 2 images each, got {} x {}",
            spec.n_ids, spec.per_id
        )));
    }
    check_size(spec.size)?;
    spec.shift.validate()?;
    let images = out_dir.join("images");
    fs::create_dir_all(&images).map_err(|e| Error::io(&images, e))?;
    let mut rows = Vec::with_capacity(spec.n_ids * spec.per_id);
    for i in 0..spec.n_ids {
        let ident = spec.identity(i);
        for k in 0..spec.per_id {
            let img = render_instance(&ident, k as u64, spec.size, &spec.jitter, &spec.shift)?;
            let rel = format!("images/{}_{k:03}.pgm", ident.id);
            save_image(&img, out_dir.join(&rel))?;
            rows.push(ManifestRow::new(rel, ident.id.clone()));
        }
    }
    let manifest = Manifest::new(out_dir, rows);
    manifest.save(out_dir.join("manifest.csv"))?;
    Ok(manifest)
}

/// Pearson correlation of two equally sized pixel arrays.
pub fn pixel_correlation(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa == 0.0 || sbb == 0.0 {
        return 0.0;
    }
    sab / (saa * sbb).sqrt()
}
