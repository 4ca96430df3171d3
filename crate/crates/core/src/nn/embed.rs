use super::layers::Mode;
use super::network::Network;
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::imgproc::{load_image, resize_bilinear, ImageBuffer};
use crate::manifest::Manifest;
use crate::retrieval::{l2_normalize, EmbeddingRecord, Metric};

/// Network input for one image: resized to `size` x `size`, converted to
/// `channels` (luma or replication), centred to [-0.5, 0.5], CHW order.
pub fn image_to_input(img: &ImageBuffer, channels: usize, size: usize) -> Result<Vec<f32>> {
    let resized;
    let img = if img.height() != size || img.width() != size {
        resized = resize_bilinear(img, size, size)?;
        &resized
    } else {
        img
    };
    let hw = size * size;
    let mut out = vec![0.0f32; channels * hw];
    for p in 0..hw {
        for c in 0..channels {
            let v = match (img.channels(), channels) {
                (a, b) if a == b => img.data()[p * a + c],
                (3, 1) => img.luma_at(p),
                (1, _) => img.data()[p],
                (a, b) => return Err(Error::Shape(format!("cannot map {a} image channels to {b}"))),
            };
            out[c * hw + p] = (v - 0.5) as f32;
        }
    }
    Ok(out)
}

/// Stacks images into an `[N, channels, size, size]` tensor.
pub fn images_to_tensor(imgs: &[ImageBuffer], channels: usize, size: usize) -> Result<Tensor<f32>> {
    let mut data = Vec::with_capacity(imgs.len() * channels * size * size);
    for img in imgs {
        data.extend(image_to_input(img, channels, size)?);
    }
    Tensor::new(&[imgs.len(), channels, size, size], data)
}

/// Embeddings for the readable rows of a manifest, and `(path, message)`
/// for the rows that failed.
#[derive(Debug, Clone, Default)]
pub struct EmbedOutcome {
    pub records: Vec<EmbeddingRecord>,
    pub failures: Vec<(String, String)>,
}

/// Eval-mode inference feature of every valid manifest row, keyed by the
/// row path. Images are run one at a time so a vector does not depend on
/// its neighbours in the manifest.
pub fn extract_embedding(
    net: &mut Network<f32>,
    manifest: &Manifest,
    input_size: usize,
    metric: Metric,
) -> Result<EmbedOutcome> {
    let channels = net.config().backbone.in_channels;
    let mut out = EmbedOutcome::default();
    for row in manifest.valid_rows() {
        let vector = load_image(manifest.resolve(row)).and_then(|img| {
            let x = images_to_tensor(std::slice::from_ref(&img), channels, input_size)?;
            let feature = net.forward(&x, Mode::Eval, None)?.feature.into_data();
            match metric {
                Metric::Euclidean => Ok(feature),
                Metric::Cosine => {
                    let wide: Vec<f64> = feature.iter().map(|&v| v as f64).collect();
                    Ok(l2_normalize(&wide)?.into_iter().map(|v| v as f32).collect())
                }
            }
        });
        match vector {
            Ok(v) => out.records.push(EmbeddingRecord::new(row.path.clone(), v)),
            Err(e @ (Error::Shape(_) | Error::Config(_))) => return Err(e),
            Err(e) => out.failures.push((row.path.clone(), e.to_string())),
        }
    }
    net.clear_cache();
    Ok(out)
}
