use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{op}: dimension mismatch between {lhs:?} and {rhs:?}")]
    Dimension {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("invalid shape: {0}")]
    Shape(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("invalid search space: gene `{gene}`: {reason}")]
    Invariant { gene: String, reason: String },

    #[error(
        "infeasible parameter budget [{min}, {max}]: no genome found after {attempts} attempts"
    )]
    InfeasibleBudget { min: u64, max: u64, attempts: usize },

    #[error("missing tensor `{0}` in checkpoint")]
    MissingTensor(String),

    #[error("{}: {message}", location(.path, .line))]
    Parse {
        path: Option<PathBuf>,
        line: Option<u64>,
        message: String,
    },

    #[error("{}: {source}", .path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("kendall tau is undefined: {0}")]
    DegenerateTau(String),

    #[error("oracle has no accuracy for genome {0}")]
    OracleMiss(String),

    #[error("candidate {}genome {hash}: {source}", index_label(.index))]
    Candidate {
        index: Option<usize>,
        hash: String,
        #[source]
        source: Box<Error>,
    },
}

fn index_label(index: &Option<usize>) -> String {
    index.map(|i| format!("#{i} ")).unwrap_or_default()
}

fn location(path: &Option<PathBuf>, line: &Option<u64>) -> String {
    match (path, line) {
        (Some(p), Some(l)) => format!("{}:{l}", p.display()),
        (Some(p), None) => p.display().to_string(),
        (None, Some(l)) => format!("line {l}"),
        (None, None) => "parse error".to_string(),
    }
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: Option<PathBuf>, line: Option<u64>, message: impl ToString) -> Self {
        Error::Parse {
            path,
            line,
            message: message.to_string(),
        }
    }

    /// True for errors caused by bad user input (configs, spaces, checkpoints,
    /// tables) rather than by a failure while running.
    pub fn is_config(&self) -> bool {
        match self {
            Error::Config(_)
            | Error::Invariant { .. }
            | Error::InfeasibleBudget { .. }
            | Error::MissingTensor(_)
            | Error::Parse { .. } => true,
            Error::Candidate { source, .. } => source.is_config(),
            _ => false,
        }
    }
}
