use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("augmentation requires normals")]
    MissingNormals,
    #[error("conflicting label conventions: {0}")]
    LabelConflict(String),
    #[error("{what}: expected {expected} entries, got {got}")]
    LengthMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("no candidates this frame")]
    NoCandidates,
    #[error("evaluation failed: {0}")]
    Evaluation(String),
    #[error("flow resolution mismatch: {0}x{1} vs {2}x{3}")]
    ResolutionMismatch(usize, usize, usize, usize),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("ply: {0}")]
    Ply(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
