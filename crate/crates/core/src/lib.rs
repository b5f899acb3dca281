pub mod data;
pub mod datagen;
pub mod error;
pub mod finetune;
pub mod harness;
pub mod interventions;
pub mod linalg;
pub mod metrics;
pub mod models;
pub mod neural;
pub mod scalar;
pub mod store;

pub use error::{Error, Result};
pub use linalg::Matrix;
pub use scalar::Scalar;

pub type MatrixF64 = Matrix<f64>;
pub type MatrixF32 = Matrix<f32>;
pub type LayeredNetF64 = neural::LayeredNet<f64>;
pub type ConceptDatasetF64 = data::ConceptDataset<f64>;
pub type BlackBoxModelF64 = models::BlackBoxModel<f64>;
pub type CbmModelF64 = models::CbmModel<f64>;
pub type ProbeModelF64 = models::ProbeModel<f64>;
