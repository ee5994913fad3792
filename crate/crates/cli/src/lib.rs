//! End-to-end experiment pipeline behind the `flowlab` binary: simulate
//! flow families, label regimes, build image datasets and noise proxies,
//! train classifiers over seeds, and tabulate effective dimensions,
//! adversarial and out-of-distribution results and spectra.

pub mod analysis;
pub mod cache;
pub mod config;
mod error;
pub mod pipeline;
pub mod pool;
pub mod report;

pub use config::{ExperimentConfig, Profile};
pub use error::{Error, Result, StageContext};
pub use pipeline::Pipeline;
