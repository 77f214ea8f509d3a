use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid value: {0}")]
    Invalid(String),
    #[error("inpainting needs at least one known pixel")]
    NothingToPropagate,
    #[error("invalid parameters: {}", .0.iter().map(|e| e.to_string()).collect::<Vec<_>>().join("; "))]
    Params(Vec<FieldError>),
    #[error("style group {0} has fewer than two patches")]
    GroupTooSmall(String),
    #[error("sample {id}: missing {what} at {path}")]
    MissingFile {
        id: String,
        what: &'static str,
        path: PathBuf,
    },
    #[error("manifest: {0}")]
    Manifest(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("checkpoint format version {found}, expected {expected}")]
    CheckpointVersion { found: u32, expected: u32 },
    #[error("objective {objective} is not allowed during stage {stage}")]
    IllegalObjective { stage: String, objective: String },
    #[error("non-finite {network} loss at stage {stage}, step {step}")]
    NonFinite {
        stage: String,
        step: u64,
        network: String,
    },
    #[error("session: {0}")]
    Session(String),
    #[error("unknown item {0}")]
    UnknownItem(u32),
    #[error("item {0} already answered")]
    AlreadyAnswered(u32),
    #[error("empty corpus")]
    EmptyCorpus,
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Nn(#[from] histosynth_nn::NnError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Image(#[from] image::ImageError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// A validation failure tied to one named field.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct FieldError {
    pub field: String,
    pub message: String,
}

impl FieldError {
    pub fn new(field: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            field: field.into(),
            message: message.into(),
        }
    }
}

impl std::fmt::Display for FieldError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

pub type Result<T> = std::result::Result<T, Error>;
