use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("parse failure at row {row}: {message}")]
    ParseFailure { row: usize, message: String },

    #[error("missing column `{0}`")]
    MissingColumn(String),

    #[error("unbalanced panel: {}", format_missing(.missing))]
    UnbalancedPanel { missing: Vec<(String, String)> },

    #[error("duplicate record for firm {firm} on {date}")]
    DuplicateRecord { firm: String, date: String },

    #[error("macro series has no record for {0}")]
    MissingMacroDate(String),

    #[error("non-positive price {value} for firm {firm} on {date}")]
    NonPositivePrice { firm: String, date: String, value: f64 },

    #[error("negative turnover {value} for firm {firm} on {date}")]
    NegativeTurnover { firm: String, date: String, value: f64 },

    #[error("relative change of {series} is not finite on {date}")]
    NonFiniteChange { series: String, date: String },

    #[error("insufficient history: need {needed} observations, have {available}")]
    InsufficientHistory { needed: usize, available: usize },

    #[error("rank deficient design: column {column} is linearly dependent on earlier columns")]
    RankDeficient { column: usize },

    #[error("degenerate valuation {value} against price {price}")]
    DegenerateValuation { value: f64, price: f64 },

    #[error("non-positive turnover inside volume window at index {index}")]
    NonPositiveTurnover { index: usize },

    #[error("zero variance for firm {firm}, feature {feature}")]
    ZeroVariance { firm: String, feature: String },

    #[error("unknown model `{0}`")]
    UnknownModel(String),

    #[error("clustered covariance needs at least two clusters")]
    SingleCluster,

    #[error("restricted and unrestricted fits use different samples")]
    MismatchedSamples,

    #[error("no significant terms at alpha {alpha}")]
    NoSignificantTerms { alpha: f64 },

    #[error("cubic has no interior extrema")]
    NoInteriorExtrema,

    #[error("empty range: {0}")]
    EmptyRange(String),

    #[error("too few observations: {available} available, {needed} needed")]
    TooFewObservations { needed: usize, available: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("io error: {0}")]
    Io(String),
}

impl Error {
    /// Stable machine-readable class name, used by the command line front end.
    pub fn class(&self) -> &'static str {
        match self {
            Error::ParseFailure { .. } => "ParseFailure",
            Error::MissingColumn(_) => "MissingColumn",
            Error::UnbalancedPanel { .. } => "UnbalancedPanel",
            Error::DuplicateRecord { .. } => "DuplicateRecord",
            Error::MissingMacroDate(_) => "MissingMacroDate",
            Error::NonPositivePrice { .. } => "NonPositivePrice",
            Error::NegativeTurnover { .. } => "NegativeTurnover",
            Error::NonFiniteChange { .. } => "NonFiniteChange",
            Error::InsufficientHistory { .. } => "InsufficientHistory",
            Error::RankDeficient { .. } => "RankDeficient",
            Error::DegenerateValuation { .. } => "DegenerateValuation",
            Error::NonPositiveTurnover { .. } => "NonPositiveTurnover",
            Error::ZeroVariance { .. } => "ZeroVariance",
            Error::UnknownModel(_) => "UnknownModel",
            Error::SingleCluster => "SingleCluster",
            Error::MismatchedSamples => "MismatchedSamples",
            Error::NoSignificantTerms { .. } => "NoSignificantTerms",
            Error::NoInteriorExtrema => "NoInteriorExtrema",
            Error::EmptyRange(_) => "EmptyRange",
            Error::TooFewObservations { .. } => "TooFewObservations",
            Error::InvalidConfig(_) => "InvalidConfig",
            Error::DimensionMismatch { .. } => "DimensionMismatch",
            Error::Io(_) => "Io",
        }
    }
}

fn format_missing(missing: &[(String, String)]) -> String {
    const SHOWN: usize = 10;
    let mut parts: Vec<String> = missing
        .iter()
        .take(SHOWN)
        .map(|(firm, date)| format!("{firm} missing {date}"))
        .collect();
    if missing.len() > SHOWN {
        parts.push(format!("and {} more", missing.len() - SHOWN));
    }
    parts.join(", ")
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        let row = e.position().map(|p| p.line() as usize).unwrap_or_default();
        Error::ParseFailure {
            row,
            message: e.to_string(),
        }
    }
}
