use thiserror::Error;

use crate::ode::Trajectory;

/// Errors raised by the numerical solvers.
#[derive(Debug, Error)]
pub enum SolveError {
    #[error("step limit of {max_steps} reached at t = {time}")]
    StepLimit {
        max_steps: usize,
        time: f64,
        partial: Box<Trajectory>,
    },
    #[error("trajectory diverged at t = {time}")]
    Diverged { time: f64, partial: Box<Trajectory> },
    #[error("step size underflow at t = {time}")]
    StepUnderflow { time: f64, partial: Box<Trajectory> },
}

impl SolveError {
    pub fn partial(&self) -> &Trajectory {
        match self {
            SolveError::StepLimit { partial, .. }
            | SolveError::Diverged { partial, .. }
            | SolveError::StepUnderflow { partial, .. } => partial,
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    Dimension {
        context: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("domain error: {0}")]
    Domain(String),
    #[error("invalid field specification: {0}")]
    InvalidSpec(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("solver failed in environment {environment}: {source}")]
    Solver {
        environment: usize,
        #[source]
        source: SolveError,
    },
    #[error(transparent)]
    Solve(#[from] SolveError),
    #[error("optimizer stalled after {iterations} iterations (best objective {best_objective})")]
    Stalled {
        iterations: usize,
        best_objective: f64,
        best_theta: Vec<f64>,
    },
    #[error("infeasible: {0}")]
    Infeasible(String),
    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
    #[error("parse error: {0}")]
    Parse(String),
    #[error("schema version mismatch: expected {expected}, found {found}")]
    Schema { expected: u32, found: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn dim(context: &'static str, expected: usize, got: usize) -> Self {
        Error::Dimension {
            context,
            expected,
            got,
        }
    }

    pub(crate) fn in_stage(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
