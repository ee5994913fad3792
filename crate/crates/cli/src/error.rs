use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid config: {0}")]
    Config(String),

    #[error("stage {stage}: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<Error>,
    },

    #[error("missing artifacts:\n  {}", .0.join("\n  "))]
    Missing(Vec<String>),

    #[error("{path}: {reason}")]
    Artifact { path: PathBuf, reason: String },

    #[error(transparent)]
    Flow(#[from] flowlab::Error),

    #[error(transparent)]
    Net(#[from] nnet::Error),

    #[error(transparent)]
    EffDim(#[from] effdim::Error),

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

pub trait StageContext<T> {
    /// Wraps a failure with the name of the stage that produced it.
    fn stage(self, name: &str) -> Result<T>;
}

impl<T, E: Into<Error>> StageContext<T> for std::result::Result<T, E> {
    fn stage(self, name: &str) -> Result<T> {
        self.map_err(|e| match e.into() {
            e @ Error::Stage { .. } => e,
            e => Error::Stage {
                stage: name.to_string(),
                source: Box::new(e),
            },
        })
    }
}
