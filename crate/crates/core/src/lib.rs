//! Multimodal contrastive pretraining on retinal vessel graphs or images
//! paired with tabular records, and supervised fine-tuning for a binary
//! outcome.

pub mod error;
pub mod contrastive;
pub mod dataprep;
pub mod encoders;
pub mod numcore;
pub mod scalar;
pub mod synthdata;
pub mod tasks;
pub mod vesselgraph;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Double-precision instantiations of the generic types.
pub type Tensor = numcore::Tensor<f64>;
pub type Tape = numcore::Tape<f64>;
pub type Mlp = encoders::Mlp<f64>;
pub type GatEncoder = encoders::GatEncoder<f64>;
pub type Cnn = encoders::Cnn<f64>;
pub type Towers = contrastive::Towers<f64>;
pub type Pretrainer<'a> = contrastive::Pretrainer<'a, f64>;
pub type Classifier = tasks::Classifier<f64>;
