use alloc::string::String;
use core::fmt;

pub type Result<T> = core::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// Problem data violates a standing assumption.
    InvalidProblem(String),
    /// Mesh request cannot be honoured.
    InvalidGrid(String),
    /// Weight parameters produce non-finite or ill-ordered weights.
    InvalidWeights {
        parameter: &'static str,
        reason: String,
    },
    /// Field or region dimensions disagree with the grid.
    ShapeMismatch(String),
    /// A banded factorization hit a zero pivot.
    SingularMatrix {
        step: usize,
        pivot_row: usize,
    },
    NewtonDiverged {
        step: usize,
        residual: f64,
        iterations: usize,
    },
    NonlinearInstability {
        step: usize,
        norm: f64,
    },
    CgNotConverged {
        iterations: usize,
        relative_residual: f64,
    },
    PicardDiverged {
        iterate: usize,
        terminal_error: f64,
    },
    /// Observability case with identically zero data.
    VacuousCase,
    NonFinite(String),
    /// One member of an ensemble failed.
    Sample {
        index: usize,
        reason: String,
    },
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::InvalidProblem(msg) => write!(f, "invalid problem: {msg}"),
            Error::InvalidGrid(msg) => write!(f, "invalid grid: {msg}"),
            Error::InvalidWeights { parameter, reason } => {
                write!(f, "invalid weight parameter `{parameter}`: {reason}")
            }
            Error::ShapeMismatch(msg) => write!(f, "shape mismatch: {msg}"),
            Error::SingularMatrix { step, pivot_row } => write!(
                f,
                "step matrix singular at step {step} (zero pivot in row {pivot_row}); reduce dt or raise the shift K"
            ),
            Error::NewtonDiverged { step, residual, iterations } => write!(
                f,
                "Newton did not converge at step {step} after {iterations} iterations (residual {residual:e})"
            ),
            Error::NonlinearInstability { step, norm } => {
                write!(f, "nonlinear instability, reduce dt (step {step}, norm {norm:e})")
            }
            Error::CgNotConverged { iterations, relative_residual } => write!(
                f,
                "conjugate gradient stopped after {iterations} iterations at relative residual {relative_residual:e}; \
                 the normal equations are ill-conditioned, try a larger epsilon or a coarser grid"
            ),
            Error::PicardDiverged { iterate, terminal_error } => write!(
                f,
                "Picard iteration diverging at iterate {iterate} (terminal error {terminal_error:e}); \
                 use a smaller initial perturbation"
            ),
            Error::VacuousCase => write!(f, "vacuous case: all data are zero"),
            Error::NonFinite(what) => write!(f, "non-finite value in {what}"),
            Error::Sample { index, reason } => write!(f, "sample {index} failed: {reason}"),
        }
    }
}

impl core::error::Error for Error {}
