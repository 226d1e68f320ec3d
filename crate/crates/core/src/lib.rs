pub mod analysis;
pub mod diffgraph;
pub mod distributions;
pub mod driftnet;
pub mod error;
pub mod estimators;
pub mod experiments;
pub mod presets;
pub mod scalar;
pub mod sde;
pub mod trainer;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type TapeF64 = diffgraph::Tape<f64>;
pub type TapeF32 = diffgraph::Tape<f32>;
pub type DriftNetworkF64 = driftnet::DriftNetwork<f64>;
pub type DriftNetworkF32 = driftnet::DriftNetwork<f32>;
pub type PathEnsembleF64 = sde::PathEnsemble<f64>;
pub type PathEnsembleF32 = sde::PathEnsemble<f32>;
pub type TrainOutputF64 = trainer::TrainOutput<f64>;
pub type TrainOutputF32 = trainer::TrainOutput<f32>;
pub type TensorF64 = diffgraph::Tensor<f64>;
pub type TensorF32 = diffgraph::Tensor<f32>;
