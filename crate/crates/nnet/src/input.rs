use crate::scalar::Real;
use crate::{Error, Result};

/// Per-image standardisation to zero mean and unit (population) std.
pub fn normalize_input<T: Real>(pixels: &[f64]) -> Result<Vec<T>> {
    if pixels.is_empty() {
        return Err(Error::Shape("empty image".into()));
    }
    let n = pixels.len() as f64;
    let mean = pixels.iter().sum::<f64>() / n;
    let var = pixels.iter().map(|p| (p - mean) * (p - mean)).sum::<f64>() / n;
    let std = var.sqrt();
    if !(std > 1e-12 * mean.abs().max(1.0)) {
        return Err(Error::ZeroStd);
    }
    Ok(pixels.iter().map(|p| T::of((p - mean) / std)).collect())
}
