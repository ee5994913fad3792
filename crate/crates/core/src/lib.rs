pub mod compressible;
pub mod datasets;
pub mod error;
pub mod fieldcore;
pub mod forcing;
pub mod incompressible;
pub mod par;
pub mod rng;
pub mod spectra;

pub use error::{Error, Result};
