use thiserror::Error;

/// Errors produced across the crate.
#[derive(Debug, Error)]
pub enum EfmError {
    /// A dimension precondition was violated (empty vector, window larger than panel, ...).
    #[error("dimension error: {0}")]
    Dimension(String),

    /// A parameter is outside its admissible domain.
    #[error("domain error: {0}")]
    Domain(String),

    /// Input data contains non-finite or otherwise unusable values.
    #[error("data error: {0}")]
    Data(String),

    /// CSV or config parsing failed.
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    /// The eigensolver or another numeric kernel failed.
    #[error("numeric error: {msg}\n{diagnostics}")]
    Numeric { msg: String, diagnostics: String },

    /// No adaptive magnifier interval satisfies the two feasibility conditions.
    #[error("infeasible magnifier at index {index}: condition ({condition}) cannot hold")]
    InfeasibleMagnifier { index: usize, condition: u8 },

    /// A fourth moment does not exist for the requested law.
    #[error("divergent moment: {0}")]
    DivergentMoment(String),

    /// Root bracketing failed; the model assumptions do not hold at this scale.
    #[error("no bracketed root: f(lo)={f_lo:.6e}, f(hi)={f_hi:.6e}")]
    NoBracketedRoot { f_lo: f64, f_hi: f64 },

    /// Fixed-point iteration did not converge.
    #[error("iteration diverged after {iterations} steps (last delta {last_delta:.3e})")]
    IterationDiverged { iterations: usize, last_delta: f64 },

    /// The outlier-location equation has no sign change on the search interval.
    #[error("no outlier predicted: {0}")]
    NoOutlierPredicted(String),

    /// A plot or report was requested before its producing step ran.
    #[error("missing artifact: run `{required_step}` first")]
    MissingArtifact { required_step: String },

    /// Invalid experiment or CLI configuration.
    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, EfmError>;
