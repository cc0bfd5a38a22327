use thiserror::Error;

/// Errors raised by the simulation, control and analysis routines.
#[derive(Debug, Error)]
pub enum Error {
    #[error("syntax error at line {line}, column {column}: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("invalid model: {0}")]
    Semantic(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("density {0:?} does not lie on the scaled lattice")]
    NonLatticeDensity(Vec<f64>),

    #[error("no control defined for state {state:?} at stage {stage}")]
    PolicyLookup { stage: usize, state: Vec<i64> },

    #[error("resource cap exceeded: {0}")]
    ResourceCap(String),

    #[error("ODE solution left the guard box at t = {time}: z = {state:?}")]
    BlowUp { time: f64, state: Vec<f64> },

    #[error("value iteration did not converge within {sweeps} sweeps (last change {last_change:e})")]
    NonConvergence { sweeps: usize, last_change: f64 },

    #[error("too many out-of-space endpoints: {capped} of {total} backups hit the regeneration cap; enlarge the truncation box")]
    RegenerationCap { capped: usize, total: usize },
}

pub type Result<T> = std::result::Result<T, Error>;
