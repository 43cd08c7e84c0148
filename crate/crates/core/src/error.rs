use thiserror::Error;

use crate::krylov::SolveStats;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("assembly error: {0}")]
    Assembly(String),

    #[error("numerical degeneracy: {0}")]
    NumericalDegeneracy(String),

    #[error("oracle error: {0}")]
    Oracle(String),

    #[error("preconditioner construction failed: {0}")]
    PreconditionerConstruction(String),

    #[error("PCG did not converge in {} iterations (relative residual {:.3e})", .stats.iterations, .stats.final_residual())]
    NonConvergence { stats: Box<SolveStats> },

    #[error("numerical breakdown in PCG at iteration {}", .stats.iterations)]
    NumericalBreakdown { stats: Box<SolveStats> },

    #[error("time step {step} (t = {time_ms} ms): {source}")]
    TimeStep {
        step: usize,
        time_ms: f64,
        #[source]
        source: Box<Error>,
    },

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True for failures of the numerics rather than of the caller's input.
    pub fn is_numerical(&self) -> bool {
        match self {
            Error::NumericalDegeneracy(_)
            | Error::Oracle(_)
            | Error::PreconditionerConstruction(_)
            | Error::NonConvergence { .. }
            | Error::NumericalBreakdown { .. }
            | Error::Assembly(_) => true,
            Error::TimeStep { source, .. } => source.is_numerical(),
            _ => false,
        }
    }
}

pub(crate) fn check_len(what: &str, got: usize, expected: usize) -> Result<()> {
    if got != expected {
        return Err(Error::InvalidArgument(format!(
            "{what}: expected length {expected}, got {got}"
        )));
    }
    Ok(())
}
