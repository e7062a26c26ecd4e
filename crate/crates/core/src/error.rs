use thiserror::Error;

/// A single validation problem found in a case or schedule document.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Issue {
    /// Dotted path to the offending item, e.g. `avrs[2].generator`.
    pub path: String,
    pub message: String,
}

impl Issue {
    pub fn new(path: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            path: path.into(),
            message: message.into(),
        }
    }
}

impl std::fmt::Display for Issue {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.path, self.message)
    }
}

/// Errors raised while reading or validating input documents.
#[derive(Debug, Error)]
pub enum InputError {
    #[error("malformed document: {0}")]
    Syntax(String),
    #[error("{} validation error(s): {}", .0.len(), join_issues(.0))]
    Invalid(Vec<Issue>),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

fn join_issues(issues: &[Issue]) -> String {
    issues
        .iter()
        .map(|i| i.to_string())
        .collect::<Vec<_>>()
        .join("; ")
}

impl InputError {
    pub fn issues(&self) -> &[Issue] {
        match self {
            InputError::Invalid(v) => v,
            _ => &[],
        }
    }
}

/// Errors raised by the numerical engines.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("newton iteration did not converge (residual {residual:.3e} after {iterations} iterations)")]
    NewtonFailure { residual: f64, iterations: usize },
    #[error("singular iteration matrix")]
    SingularMatrix,
    #[error("manifold solve failed: {0}")]
    ManifoldSolve(String),
    #[error("no equilibrium found (residual {residual:.3e})")]
    NoEquilibrium { residual: f64 },
    #[error("power flow did not converge (mismatch {mismatch:.3e})")]
    PowerFlow { mismatch: f64 },
    #[error("internal invariant violated: {0}")]
    Invariant(String),
}

pub type SimResult<T> = Result<T, SimError>;
