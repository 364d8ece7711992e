use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {context}: expected {expected}, got {got}")]
    Shape {
        context: String,
        expected: String,
        got: String,
    },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("svd did not converge for {rows}x{cols} matrix after {sweeps} sweeps")]
    SvdNoConvergence { rows: usize, cols: usize, sweeps: usize },

    #[error("infeasible transport marginals: source mass {src}, target mass {dst}")]
    InfeasibleMarginals { src: f64, dst: f64 },

    #[error("duplicate task {0}")]
    DuplicateTask(u32),

    #[error("unknown task {0}")]
    UnknownTask(u32),

    #[error("label {label} out of range for head of size {classes}")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("gradient alignment already applied for task {0}")]
    AlignmentAlreadyApplied(u32),

    #[error("knowledge base format version {found} not supported (max {supported})")]
    Version { found: u32, supported: u32 },

    #[error("knowledge base truncated: {0}")]
    Truncated(String),

    #[error("knowledge base checksum mismatch: stored {stored:08x}, computed {computed:08x}")]
    Checksum { stored: u32, computed: u32 },

    #[error("bad magic: {0}")]
    BadMagic(String),

    #[error("malformed data: {0}")]
    Malformed(String),

    #[error("config error at {path}: {message}")]
    Config { path: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn shape(
        context: impl Into<String>,
        expected: impl std::fmt::Display,
        got: impl std::fmt::Display,
    ) -> Self {
        Error::Shape {
            context: context.into(),
            expected: expected.to_string(),
            got: got.to_string(),
        }
    }
}
