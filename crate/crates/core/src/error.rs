use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("row {row} of p sums to {sum}, expected 1")]
    RowSum { row: usize, sum: f64 },

    #[error("p[{row}][{col}] = {value} is outside the open interval (0, 1)")]
    ProbabilityOutOfRange { row: usize, col: usize, value: f64 },

    #[error("parameter {name} = {value} is outside its domain {domain}")]
    ParameterDomain {
        name: &'static str,
        value: f64,
        domain: String,
    },

    #[error("group {group} out of range for k = {k}")]
    GroupOutOfRange { group: usize, k: usize },

    #[error("column {column} out of range for 2m = {width}")]
    ColumnOutOfRange { column: usize, width: usize },

    #[error("value {0} is not in the alphabet")]
    ValueNotInAlphabet(i32),

    #[error("budget of {budget} bits cannot fund a single user at {bits_per_user} bits/user")]
    BudgetTooSmall { budget: u64, bits_per_user: u32 },

    #[error("invalid experiment config: {0}")]
    InvalidConfig(String),

    #[error("unknown scheme `{0}`")]
    UnknownScheme(String),

    #[error("wire format: {0}")]
    Wire(String),

    #[error("io: {0}")]
    Io(String),

    #[error("internal invariant violated: {0}")]
    Internal(String),
}

impl Error {
    /// True for failures caused by bad input rather than a bug.
    pub fn is_config_error(&self) -> bool {
        !matches!(self, Error::Internal(_))
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
