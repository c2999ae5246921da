use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, IatcError>;

#[derive(Debug, Error)]
pub enum IatcError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("missing manifest: {0}")]
    MissingManifest(PathBuf),

    #[error("malformed manifest {path}: {message}")]
    Manifest { path: PathBuf, message: String },

    #[error("csv error in {path}: {message}")]
    Csv { path: PathBuf, message: String },

    #[error("non-finite value in {file} at row {row}, column {column}")]
    NonFinite {
        file: String,
        row: usize,
        column: usize,
    },

    #[error("dimension mismatch{}: {message}", context_suffix(.context))]
    DimensionMismatch {
        context: Option<String>,
        message: String,
    },

    #[error("duplicate profile key ({subject}, {area}, {stage})")]
    DuplicateProfile {
        subject: String,
        area: String,
        stage: String,
    },

    #[error("invalid data: {0}")]
    InvalidData(String),

    #[error("too few stimuli: {0}")]
    TooFewStimuli(String),

    #[error("degenerate design: {0}")]
    DegenerateDesign(String),

    #[error("degenerate fold {fold}: {message}")]
    DegenerateFold { fold: usize, message: String },

    #[error("zero-variance neuron {index} in {role}")]
    ZeroVarianceNeuron { role: String, index: usize },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("lasso did not converge after {sweeps} sweeps (duality gap {gap:e}, target neuron {neuron})")]
    LassoNonConvergence {
        neuron: usize,
        sweeps: usize,
        gap: f64,
    },

    #[error("transport scaling did not converge after {iterations} iterations (marginal error {error:e})")]
    TransportNonConvergence { iterations: usize, error: f64 },

    #[error("IRLS did not converge{}: deviance trace {trace:?}", neuron_suffix(.neuron))]
    IrlsNonConvergence {
        neuron: Option<usize>,
        trace: Vec<f64>,
    },

    #[error("IRLS diverged{}: {message}", neuron_suffix(.neuron))]
    IrlsDivergence {
        neuron: Option<usize>,
        message: String,
    },

    #[error("MLP training diverged at epoch {epoch}")]
    MlpDivergence { epoch: usize },

    #[error("power transform fit failed: {0}")]
    PowerTransform(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("serialization error: {0}")]
    Serialization(String),
}

fn context_suffix(context: &Option<String>) -> String {
    context.as_ref().map(|c| format!(" in {c}")).unwrap_or_default()
}

fn neuron_suffix(neuron: &Option<usize>) -> String {
    neuron.map(|n| format!(" for target neuron {n}")).unwrap_or_default()
}

impl IatcError {
    pub fn dims(message: impl Into<String>) -> Self {
        IatcError::DimensionMismatch {
            context: None,
            message: message.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        IatcError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn with_neuron(self, neuron: usize) -> Self {
        match self {
            IatcError::IrlsNonConvergence { trace, .. } => IatcError::IrlsNonConvergence {
                neuron: Some(neuron),
                trace,
            },
            IatcError::IrlsDivergence { message, .. } => IatcError::IrlsDivergence {
                neuron: Some(neuron),
                message,
            },
            other => other,
        }
    }

    /// Whether the error stems from the input data (as opposed to the
    /// configuration). Used by the CLI to pick an exit code.
    pub fn is_data_error(&self) -> bool {
        !matches!(self, IatcError::Config(_))
    }
}
