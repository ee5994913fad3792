//! Staged convolutional binary classifier.
//!
//! The network is a stem convolution followed by four stages of 3×3
//! conv + ReLU blocks (stride 2 entering stages 2–4), global average
//! pooling and a single sigmoid logit. Gradients are written out by hand
//! and checked against finite differences; everything is generic over
//! `f32`/`f64`.

pub mod checkpoint;
pub mod conv;
pub mod data;
mod error;
pub mod input;
pub mod net;
pub mod optim;
pub mod scalar;
pub mod train;

pub use checkpoint::Checkpoint;
pub use error::{Error, Result};
pub use input::normalize_input;
pub use net::{Activation, NetConfig, StageNet};
pub use optim::{Adam, AdamConfig};
pub use scalar::Real;
pub use train::{evaluate, train, EpochLog, Sample, TrainConfig};
