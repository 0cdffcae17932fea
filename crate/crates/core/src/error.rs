use std::io;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::classifiers::ClassifierError;
use crate::features::FeatureError;
use crate::imgen::ImageError;
use crate::puf_sim::SimError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Classifier(#[from] ClassifierError),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: io::Error },
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("dataset: {0}")]
    Dataset(String),
    #[error("{0}")]
    Pipeline(String),
    #[error("model container: {0}")]
    Container(String),
    #[error("frame: {0}")]
    Frame(String),
    #[error("scenario: {0}")]
    Scenario(String),
}

impl Error {
    pub(crate) fn io(path: &Path, source: io::Error) -> Self {
        Error::Io { path: path.to_path_buf(), source }
    }
}
