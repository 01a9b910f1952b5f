//! Synthetic image degradation: blur, bicubic downsampling, noise.

pub mod batch;
pub mod image;
pub mod kernel;
pub mod resample;
pub mod synth;

pub use batch::{make_batch, BatchConfig, SpecSource, TrainBatch};
pub use image::ImageBuffer;
pub use kernel::{gaussian_kernel, gaussian_kernel_1d, BlurKind, DegradationSpec};
pub use resample::{bicubic_downsample, bicubic_resize, bicubic_upsample};
pub use synth::{
    dead_leaves_image, degrade, sample_spec, synthetic_image, synthetic_pool, synthetic_pool_of, SpecMode, SyntheticKind,
};
