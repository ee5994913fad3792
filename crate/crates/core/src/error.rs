use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    Grid(String),

    #[error("non-finite value at index {index} ({value})")]
    NonFinite { index: usize, value: f64 },

    #[error("Hermitian symmetry violated at mode ({ix}, {iy}): mismatch {mismatch:e}")]
    Hermitian { ix: usize, iy: usize, mismatch: f64 },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("unsupported derivative order {0}")]
    DerivativeOrder(u8),

    #[error("invalid parameter: {0}")]
    Param(String),

    #[error("corrupt file {path}: {reason}")]
    Corrupt { path: PathBuf, reason: String },

    #[error("simulation diverged at t={t}: {reason}")]
    Diverged { t: f64, reason: String },

    #[error("CFL violation at t={t}: number {cfl:.3} exceeds {limit}")]
    Cfl { t: f64, cfl: f64, limit: f64 },

    #[error("unphysical conserved state at ({x}, {y}): 9E^2 - 8S^2 = {disc:e}")]
    Unphysical { x: usize, y: usize, disc: f64 },

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("insufficient data: {0}")]
    Insufficient(String),

    #[error("hash mismatch: expected {expected}, found {found}")]
    HashMismatch { expected: String, found: String },

    #[error("missing artifacts: {}", .0.join(", "))]
    Missing(Vec<String>),

    #[error("{stage}: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Image(#[from] image::ImageError),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn in_stage(self, stage: &str) -> Error {
        Error::Stage {
            stage: stage.to_string(),
            source: Box::new(self),
        }
    }
}
