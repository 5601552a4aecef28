use chrono::NaiveDate;
use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    /// A quantity was requested outside the region where it is defined,
    /// e.g. the covariance of a t distribution with ν ≤ 2.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("design matrix is rank deficient; least squares is undefined")]
    SingularDesign,

    #[error("matrix is singular or not positive definite: {0}")]
    Singular(String),

    #[error("VAR model is not stationary (spectral radius {0:.6})")]
    NonStationary(f64),

    #[error("series are not aligned on dates: {}", format_dates(.0))]
    Alignment(Vec<NaiveDate>),

    #[error("row {row}: {message}")]
    Parse { row: usize, message: String },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for failures caused by the input data rather than by the numerics.
    pub fn is_data_error(&self) -> bool {
        matches!(
            self,
            Error::InsufficientData(_)
                | Error::Data(_)
                | Error::Dimension(_)
                | Error::Parameter(_)
                | Error::Alignment(_)
                | Error::Parse { .. }
                | Error::Io(_)
                | Error::Csv(_)
                | Error::Json(_)
        )
    }
}

fn format_dates(dates: &[NaiveDate]) -> String {
    const SHOWN: usize = 10;
    let mut out = dates
        .iter()
        .take(SHOWN)
        .map(|d| d.to_string())
        .collect::<Vec<_>>()
        .join(", ");
    if dates.len() > SHOWN {
        out.push_str(&format!(" (+{} more)", dates.len() - SHOWN));
    }
    out
}
