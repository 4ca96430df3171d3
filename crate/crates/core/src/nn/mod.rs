//! Feature extractor: convolutional backbone, global pooling, heads.

pub mod backbone;
pub mod checkpoint;
pub mod embed;
pub mod head;
pub mod layers;
pub mod network;
pub mod pool;
pub mod real;
pub mod tensor;

pub use backbone::{Backbone, BackboneConfig};
pub use checkpoint::{Checkpoint, NamedTensor};
pub use embed::{extract_embedding, image_to_input, images_to_tensor, EmbedOutcome};
pub use head::{Head, HeadConfig, HeadKind, HeadOutput};
pub use layers::{BatchNorm, Conv2d, Dropout, Linear, Mode, Relu};
pub use network::{ModelConfig, Network};
pub use pool::{pool, Pool, PoolMode};
pub use real::Real;
pub use tensor::Tensor;

/// Callback over `(name, tensor, trainable)`.
pub type TensorVisitor<'a, T> = dyn FnMut(&str, &mut Tensor<T>, bool) + 'a;
