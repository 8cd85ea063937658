//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Input violates a documented precondition (non-unit quaternion,
    /// non-finite value, bad dimension, ...).
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// Vehicle mass reached a value where the dynamics are singular.
    #[error("singular mass: m = {0}")]
    SingularMass(f64),

    /// Nonlinear propagation left the sane-mass envelope and was aborted.
    #[error("propagation aborted at node {node}: {reason}")]
    AbortedPropagation { node: usize, reason: String },

    /// Attitude is inside the Euler gimbal-lock region.
    #[error("degenerate attitude: pitch within {0} rad of +/-90 deg")]
    DegenerateAttitude(f64),

    /// Temporal grid with fewer than two nodes or non-positive horizon.
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    /// Reference thrust too small to linearize the minimum-thrust bound.
    #[error("min-thrust linearization singular at node {node}: |T_ref| = {norm:.3e}")]
    MinThrustSingularity { node: usize, norm: f64 },

    /// Extracting a trajectory from a non-optimal solution.
    #[error("extraction requires an optimal solution, got {0}")]
    ExtractionStatus(String),

    /// LQR Riccati recursion hit a singular input-weight matrix.
    #[error("gain synthesis failed at interval {0}: R + B'PB not invertible")]
    GainSynthesis(usize),

    /// A subproblem solve came back infeasible or numerically broken
    /// where the caller needs optimality.
    #[error("subproblem failed at iteration {iteration}: {status}")]
    SubproblemFailed { iteration: usize, status: String },

    /// Too many trajectories dropped during a GPS run.
    #[error("{dropped} of {total} trajectories dropped (> 20% limit)")]
    TooManyDrops { dropped: usize, total: usize },

    /// Empty dataset, empty validation set, and similar.
    #[error("{0}")]
    EmptyInput(String),

    /// Persistence format problems, with the first offending line when known.
    #[error("load error{}: {msg}", line.map(|l| format!(" at line {l}")).unwrap_or_default())]
    Load { line: Option<usize>, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn invalid_input(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub fn load(line: Option<usize>, msg: impl Into<String>) -> Self {
        Error::Load {
            line,
            msg: msg.into(),
        }
    }
}
