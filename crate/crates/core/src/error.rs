use thiserror::Error;

/// Errors produced by the coding engine.
///
/// Variants are grouped so callers (notably the CLI) can map them onto
/// exit codes: [`VaError::is_io`] distinguishes I/O and network failures
/// from validation/configuration problems.
#[derive(Debug, Error)]
pub enum VaError {
    /// Malformed input file (wrong column count, bad header, bad token).
    #[error("format error: {0}")]
    Format(String),

    /// Input data violates a documented invariant.
    #[error("validation error: {0}")]
    Validation(String),

    /// Dataset and probability matrix share no symptoms.
    #[error("alignment error: no common symptoms between data ({data_symptoms:?}) and probabilities ({prob_symptoms:?})")]
    Alignment {
        data_symptoms: Vec<String>,
        prob_symptoms: Vec<String>,
    },

    /// Training data cannot support the requested model.
    #[error("training error: {0}")]
    Training(String),

    /// Bad configuration (hierarchy, cutoff table, grade table, options).
    #[error("configuration error: {0}")]
    Config(String),

    /// Network fetch failed.
    #[error("fetch error: {url}: {reason}")]
    Fetch { url: String, reason: String },

    /// Downloaded or supplied table does not match the expected schema.
    #[error("schema error: {0}")]
    Schema(String),

    /// Operation not supported for this result kind (e.g. individual
    /// probabilities from a Tariff fit).
    #[error("unsupported operation: {0}")]
    Unsupported(String),

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
}

impl VaError {
    /// True for failures of the environment (filesystem, network) rather
    /// than of the inputs.
    pub fn is_io(&self) -> bool {
        matches!(self, VaError::Io(_) | VaError::Csv(_) | VaError::Fetch { .. })
    }

    /// Stable machine-parsable tag for each variant.
    pub fn kind(&self) -> &'static str {
        match self {
            VaError::Format(_) => "format",
            VaError::Validation(_) => "validation",
            VaError::Alignment { .. } => "alignment",
            VaError::Training(_) => "training",
            VaError::Config(_) => "config",
            VaError::Fetch { .. } => "fetch",
            VaError::Schema(_) => "schema",
            VaError::Unsupported(_) => "unsupported",
            VaError::Io(_) => "io",
            VaError::Csv(_) => "csv",
        }
    }
}

pub type Result<T> = std::result::Result<T, VaError>;
