use thiserror::Error;

/// Which scalar function of a problem produced a value.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FnRole {
    Objective,
    Equality(usize),
    Inequality(usize),
}

impl std::fmt::Display for FnRole {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            FnRole::Objective => write!(f, "objective"),
            FnRole::Equality(i) => write!(f, "equality constraint h{}", i + 1),
            FnRole::Inequality(j) => write!(f, "inequality constraint g{}", j + 1),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("matrix is not square ({rows}x{cols})")]
    NonSquare { rows: usize, cols: usize },

    #[error("equality count m={m} must be smaller than n={n}")]
    TooManyEqualities { m: usize, n: usize },

    #[error("non-finite {what} from {role} at x")]
    NonFinite { role: FnRole, what: &'static str },

    #[error("unknown problem `{name}` (available: {available})")]
    UnknownProblem { name: String, available: String },

    #[error("syntax error at byte {offset}: {message}")]
    Syntax { offset: usize, message: String },

    #[error("unknown identifier `{name}` at byte {offset}")]
    UnknownIdentifier { name: String, offset: usize },

    #[error("variable x{index} at byte {offset} is out of range (n = {n})")]
    VariableOutOfRange { index: usize, n: usize, offset: usize },

    #[error("division by zero")]
    DivisionByZero,

    #[error("problem file line {line}: {message}")]
    ProblemFile { line: usize, message: String },

    #[error("constraint qualification fails at x: det(Q) = {det_q:e}")]
    ConstraintQualification { det_q: f64 },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("non-finite stage value in integrator step")]
    NonFiniteStage,
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
