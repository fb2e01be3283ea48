use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape error in {op}: {lhs:?} vs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("config error: {0}")]
    Config(String),
    #[error("evaluation error: {0}")]
    Eval(String),
    #[error("label error: {0}")]
    Label(String),
    #[error("empty annotation: mask has no set pixels")]
    EmptyAnnotation,
    #[error("degenerate sample: {0}")]
    DegenerateSample(String),
    #[error("schedule error: {0}")]
    Schedule(String),
    #[error("training error at iteration {iter}: {msg}")]
    Training { iter: usize, msg: String },
    #[error("checkpoint error at byte offset {offset}: {msg}")]
    Checkpoint { offset: usize, msg: String },
    #[error("format error at byte offset {offset}: {msg}")]
    Format { offset: usize, msg: String },
    #[error("fixture error: {0}")]
    Fixture(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn shape(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Self {
        Error::Shape {
            op,
            lhs: lhs.to_vec(),
            rhs: rhs.to_vec(),
        }
    }
}
