use thiserror::Error;

/// Errors produced anywhere in the library.
#[derive(Error, Debug, Clone, PartialEq, Eq)]
pub enum Error {
    #[error("newick syntax error at byte {pos}: {msg}")]
    NewickSyntax { pos: usize, msg: String },
    #[error("duplicate taxon name `{0}`")]
    DuplicateTaxon(String),
    #[error("invalid tree: {0}")]
    InvalidTree(String),
    #[error("unknown taxon `{0}`")]
    UnknownTaxon(String),
    #[error("unknown vertex `{0}`")]
    UnknownVertex(String),
    #[error("edge {0} is not in the tree")]
    NoSuchEdge(usize),
    #[error("vertex {0} is a leaf")]
    LeafVertex(usize),
    #[error("`{0}` and `{1}` do not form a cherry")]
    NotACherry(String, String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid partition: {0}")]
    Partition(String),
    #[error("index out of range: {0}")]
    OutOfRange(String),
    #[error("non-finite value in numeric input")]
    NonFinite,
    #[error("parameter error: {0}")]
    Params(String),
    #[error("{what} has rank {rank}, exceeding {kappa}")]
    RankExceeded {
        what: String,
        rank: usize,
        kappa: usize,
    },
    #[error("minor of size {size} exceeds the configured maximum {max}")]
    MinorTooLarge { size: usize, max: usize },
    #[error(
        "symbolic expansion would produce about {estimate} terms (limit {limit}); use probe mode"
    )]
    TermGuard { estimate: u128, limit: u128 },
    #[error("no base generator set known for kappa = {kappa} with {leaves} leaves; supply one")]
    MissingBase { kappa: usize, leaves: usize },
    #[error("parse error on line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("{0}")]
    Invalid(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn parse_err<T>(line: usize, msg: impl Into<String>) -> Result<T> {
    Err(Error::Parse {
        line,
        msg: msg.into(),
    })
}

impl Error {
    pub fn parse(line: usize, msg: impl Into<String>) -> Error {
        Error::Parse {
            line,
            msg: msg.into(),
        }
    }
}
