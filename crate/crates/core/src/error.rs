use thiserror::Error;

/// Errors raised by the numerical core.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("agent {agent}: `{field}` violates {constraint}")]
    InvalidAgent {
        agent: usize,
        field: &'static str,
        constraint: &'static str,
    },
    #[error("scenario: `{field}` violates {constraint}")]
    InvalidScenario {
        field: &'static str,
        constraint: &'static str,
    },
    #[error("time {t} outside [0, {horizon}]")]
    TimeOutOfRange { t: f64, horizon: f64 },
    #[error("cost state {state} out of range ({count} states)")]
    UnknownState { state: usize, count: usize },
    #[error("agent {agent}: Riccati value {value:e} at state {state}, node {node} is negative")]
    NegativeRiccati {
        agent: usize,
        state: usize,
        node: usize,
        value: f64,
    },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("Riccati system needs {substeps} RK4 substeps per grid step")]
    TooStiff { substeps: usize },
    #[error("1 - gamma_bar * theta = {value:e} is not positive")]
    DegenerateInverse { value: f64 },
    #[error("agent {agent}: 1 - a = {value:e} is not positive")]
    DegenerateRate { agent: usize, value: f64 },
    #[error("precondition violated: {0}")]
    Precondition(&'static str),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("singular linear system (pivot ratio {condition:e})")]
    Singular { condition: f64 },
    #[error("linear solve residual {residual:e} above tolerance")]
    Residual { residual: f64 },
    #[error("empty input: {0}")]
    Empty(&'static str),
}

pub type Result<T> = core::result::Result<T, Error>;

pub(crate) fn ensure_len(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::Dimension { expected, got })
    }
}
