//! Contrastive degradation encoder.

pub mod model;
pub mod moco;

pub use model::{DegradationEncoder, Encoded, EncoderConfig};
pub use moco::{degradation_loss, momentum_update, Denominator, MomentumQueue};
