use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("degenerate patch: {0}")]
    DegeneratePatch(String),

    #[error("insufficient patches: {0}")]
    InsufficientPatches(String),

    /// The assembled system does not have full column rank. `views` lists the
    /// views whose γ column carries no depth variation.
    #[error("rank-deficient system (rank {rank} < {unknowns}); offending views: {views:?}")]
    RankDeficient {
        rank: usize,
        unknowns: usize,
        views: Vec<String>,
    },

    #[error("solver error: {0}")]
    Solver(String),

    #[error("negative focus distance estimate for view {0}")]
    NegativeFocus(String),

    #[error("no candidate scales: {0}")]
    Candidate(String),

    #[error("loss error: {0}")]
    Loss(String),

    #[error("pipeline failure: no views survived selection ({})", format_reasons(.0))]
    NoSurvivingViews(Vec<(String, String)>),

    #[error("invalid scene: {0}")]
    Scene(String),

    #[error("manifest error: {0}")]
    Manifest(String),

    #[error("PFM error in {path}: {kind}")]
    Pfm { path: PathBuf, kind: PfmErrorKind },

    #[error("image error in {path}: {message}")]
    Image { path: PathBuf, message: String },

    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PfmErrorKind {
    #[error("bad magic {0:?}")]
    BadMagic(String),
    #[error("unsupported format {0:?} (only grayscale \"Pf\" is accepted)")]
    Unsupported(String),
    #[error("malformed header: {0}")]
    Header(String),
    #[error("zero scale factor")]
    ZeroScale,
    #[error("truncated payload: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },
}

fn format_reasons(reasons: &[(String, String)]) -> String {
    reasons
        .iter()
        .map(|(v, r)| format!("{v}: {r}"))
        .collect::<Vec<_>>()
        .join("; ")
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Wraps an error with the name of the pipeline stage that produced it.
    pub fn at_stage(self, stage: &'static str) -> Self {
        match self {
            e @ Error::Stage { .. } => e,
            e => Error::Stage {
                stage,
                source: Box::new(e),
            },
        }
    }

    /// Strips any stage attribution.
    pub fn root(&self) -> &Error {
        match self {
            Error::Stage { source, .. } => source.root(),
            e => e,
        }
    }
}
