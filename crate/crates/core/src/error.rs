use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("point cloud is empty")]
    EmptyCloud,
    #[error("frame mismatch: {0:?} vs {1:?}")]
    FrameMismatch(crate::geometry::Frame, crate::geometry::Frame),
    #[error("degenerate axis {axis}: extent is zero")]
    DegenerateAxis { axis: char },
    #[error("unknown view {view} (model has {views} decoder(s))")]
    UnknownView { view: usize, views: usize },
    #[error("backward requires a scalar root, got shape {0:?}")]
    NonScalarRoot(Vec<usize>),
    #[error("graph was built without gradient recording")]
    NotRecording,
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("parse error in {path}: {msg}")]
    Parse { path: PathBuf, msg: String },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn shape(op: &'static str, left: &[usize], right: &[usize]) -> Self {
        Error::ShapeMismatch {
            op,
            left: left.to_vec(),
            right: right.to_vec(),
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, msg: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            msg: msg.into(),
        }
    }

    /// True for failures caused by numerical state (NaN/inf, degenerate data).
    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::NonFinite(_) | Error::DegenerateAxis { .. })
    }

    pub fn is_io(&self) -> bool {
        matches!(self, Error::Io { .. } | Error::Parse { .. } | Error::Checkpoint(_))
    }
}
