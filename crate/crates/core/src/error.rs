use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("duplicate patient_id `{0}`")]
    DuplicatePatient(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("state error: {0}")]
    State(String),

    #[error("size error: {0}")]
    Size(String),

    #[error("metric undefined: {0}")]
    UndefinedMetric(String),

    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("prompt for patient `{patient_id}` needs {est_tokens} tokens, budget is {budget}")]
    PromptOverflow {
        patient_id: String,
        est_tokens: usize,
        budget: usize,
    },

    #[error("gateway error for patient `{patient_id}`: {msg}")]
    Gateway { patient_id: String, msg: String },

    #[error("backend capability missing: {0}")]
    Capability(String),

    #[error("backend error: {0}")]
    Backend(String),

    #[error("degenerate task: {0}")]
    DegenerateTask(String),

    #[error("missing artifact `{artifact}`; run stage `{stage}` first")]
    Dependency { stage: String, artifact: String },

    #[error("stale artifact for stage `{stage}`: {msg}")]
    Stale { stage: String, msg: String },

    #[error("bad artifact `{path}`: {msg}")]
    Artifact { path: PathBuf, msg: String },

    #[error("output directory is locked by another run ({0})")]
    Locked(PathBuf),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub fn data(msg: impl Into<String>) -> Self {
        Error::Data(msg.into())
    }
}
