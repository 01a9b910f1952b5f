//! Image quality metrics, the bicubic baseline and embedding separability.

mod quality;
mod report;
mod separability;

pub use quality::{bicubic_baseline, psnr, psnr_planes, ssim, ssim_planes, PSNR_CAP};
pub use report::{evaluate, EvalReport, ImageScore, REPORT_HEADER};
pub use separability::{separability, MIN_CLUSTER_SIZE};
