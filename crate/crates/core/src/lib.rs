//! Motion-text contrastive fine-tuning with a tethered (distillation
//! regularized) text encoder, plus the text-to-motion evaluation metric
//! suite and the synthetic dataset generator used to drive it.

pub mod autodiff;
pub mod dataset;
pub mod encoder;
pub mod error;
pub mod loss;
pub mod metrics;
pub mod motion;
pub mod params;
pub mod skeleton;
pub mod tensor;
pub mod trainer;

pub use autodiff::{Tape, TensorId};
pub use error::{Error, Result};
pub use tensor::Tensor;
