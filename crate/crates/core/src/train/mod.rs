//! Optimisation, losses and the training loop.

pub mod adam;
pub mod data;
pub mod loss;
pub mod run;
pub mod schedule;
pub mod trainer;

pub use adam::Adam;
pub use data::{phase_rng, read_manifest, training_pool, Phase};
pub use loss::{sr_loss, total_loss};
pub use run::{run_encoder, run_joint};
pub use schedule::learning_rate;
pub use trainer::{EncoderStats, JointStats, Models, Parts, TrainState};
