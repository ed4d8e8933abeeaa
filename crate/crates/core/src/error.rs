use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("domain error in {op}: {detail}")]
    Domain { op: &'static str, detail: String },

    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    /// The label sequence cannot be aligned to the available frames.
    #[error(
        "infeasible alignment: {labels} labels with {repeats} adjacent repeats need more than {frames} frames"
    )]
    Infeasible {
        labels: usize,
        repeats: usize,
        frames: usize,
    },

    #[error("instance too large for exhaustive enumeration ({paths} paths)")]
    TooLarge { paths: f64 },

    #[error("internal invariant violated: {0}")]
    InvariantFault(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("cannot encode {ch:?} at byte offset {offset}")]
    Unencodable { ch: char, offset: usize },

    #[error("charset error: {0}")]
    Charset(String),

    #[error("error rate is undefined for an empty reference")]
    EmptyReference,

    #[error("empty input sequence")]
    EmptyInput,

    #[error("malformed file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
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
