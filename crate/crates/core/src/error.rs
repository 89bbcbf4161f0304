use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("dimension mismatch in `{field}`: expected {expected}, found {found}")]
    Dimension {
        field: String,
        expected: String,
        found: String,
    },

    #[error("invalid model: {0}")]
    Validation(String),

    #[error("parse error: {0}")]
    Parse(#[from] serde_json::Error),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("{required} configurations exceed the enumeration cap of {cap}")]
    CapExceeded { required: u128, cap: u64 },

    #[error("{required} regime paths exceed the path budget of {budget}")]
    BudgetExceeded { required: u128, budget: u64 },

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("singular matrix: {0}")]
    Singular(String),

    #[error("indeterminate manifold: {0}")]
    IndeterminateManifold(String),

    #[error("not eligible for quasi-differencing: {0}")]
    NotEligible(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn dim_err(field: &str, expected: impl ToString, found: impl ToString) -> Error {
    Error::Dimension {
        field: field.to_string(),
        expected: expected.to_string(),
        found: found.to_string(),
    }
}
