use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error: {0}")]
    Parse(String),
    #[error("invalid graph: {0}")]
    InvalidGraph(String),
    #[error("nonpositive weight on edge {0}")]
    NonpositiveWeight(String),
    #[error("Kasteleyn flatness violation on face {face}: alternating product {product}, expected {expected}")]
    Flatness {
        face: String,
        product: String,
        expected: f64,
    },
    #[error("invalid pattern: {0}")]
    Pattern(String),
    #[error("enumeration budget exceeded: {0} vertices")]
    Budget(usize),
    #[error("phase: {0}")]
    Phase(String),
    #[error("resonant case: {0}")]
    Resonant(String),
    #[error("precondition: {0}")]
    Precondition(String),
    #[error("numerical breakdown: {0}")]
    Breakdown(String),
    #[error("convergence: {0}")]
    Convergence(String),
    #[error("offset ({0},{1}) outside kernel table radius {2}")]
    OutOfTable(i64, i64, i64),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Stable snake_case tag for machine-readable error records.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Parse(_) => "parse",
            Error::InvalidGraph(_) => "invalid_graph",
            Error::NonpositiveWeight(_) => "nonpositive_weight",
            Error::Flatness { .. } => "flatness",
            Error::Pattern(_) => "pattern",
            Error::Budget(_) => "budget",
            Error::Phase(_) => "phase",
            Error::Resonant(_) => "resonant",
            Error::Precondition(_) => "precondition",
            Error::Breakdown(_) => "breakdown",
            Error::Convergence(_) => "convergence",
            Error::OutOfTable(..) => "out_of_table",
            Error::Io(_) => "io",
        }
    }
}
