pub mod autodiff;
pub mod checkpoint;
pub mod config;
pub mod degradation;
pub mod encoder;
pub mod error;
pub mod metrics;
pub mod network;
pub mod nn;
pub mod params;
pub mod scalar;
pub mod tensor;
pub mod train;

pub use autodiff::{Gradients, Graph, Var};
pub use error::{Error, Result};
pub use params::{Bound, ParamId, ParamSet};
pub use scalar::{Layout, Scalar};
pub use tensor::Tensor;

pub type Tensor32 = Tensor<f32>;
pub type Tensor64 = Tensor<f64>;
pub type Graph32 = Graph<f32>;
pub type Graph64 = Graph<f64>;
pub type ParamSet32 = ParamSet<f32>;
pub type ParamSet64 = ParamSet<f64>;
pub type TrainState32 = train::TrainState<f32>;
pub type Models32 = train::Models<f32>;
