//! Degradation-aware window-attention super-resolution network.

pub mod attention;
pub mod block;
pub mod config;
pub mod model;
pub mod modulation;

pub use block::{Conditioning, MixedBlock, ResidualGroup, SwinLayer};
pub use config::{Ablation, DsatConfig};
pub use model::{DsatNet, ForwardTrace};
pub use modulation::{dcl_forward, Modulation, ModulationGenerator};
