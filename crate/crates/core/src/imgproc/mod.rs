//! Image representation, PGM/PPM I/O and the augmentation operations.

mod buffer;
mod mix;
mod ops;
mod plan;
mod rng;

pub use buffer::{load_image, save_image, ImageBuffer};
pub use mix::{augmix, cutmix, mix_chains, paste_box, AugMixParams, CutBox};
pub use ops::{
    adjust_colors, affine, color_jitter, crop, gaussian_blur, gaussian_kernel, horizontal_flip,
    random_crop_resize, resize_bilinear, sample_crop_window, AffineMatrix, CropWindow,
    JitterStrengths, DEFAULT_ASPECT_RANGE,
};
pub use plan::{apply_plan, AugOp, AugPlan, AugStep};
pub use rng::{mix_seed, RngStream};

