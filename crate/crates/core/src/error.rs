use thiserror::Error;

/// Errors raised by the geometry, solver, design and control layers.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("solver failure: {0}")]
    Solver(String),

    #[error("unknown subsystem id {0}")]
    UnknownSubsystem(usize),

    #[error("no RCI design exists at horizon h = {h} for subsystem {subsystem}; try a larger h or weaker coupling")]
    NoRciDesign { subsystem: usize, h: usize },

    #[error("design failure for subsystem {subsystem}: {reason}")]
    Design { subsystem: usize, reason: String },

    #[error("coupling too strong for nested design at subsystem {subsystem}: beta_x = {beta_x:.6}, beta_u = {beta_u:.6}")]
    CouplingTooStrong {
        subsystem: usize,
        beta_x: f64,
        beta_u: f64,
    },

    #[error("main problem infeasible for subsystem {0}: nominal state outside the feasible region")]
    MainInfeasible(usize),

    #[error("ancillary problem infeasible for subsystem {0}")]
    AncillaryInfeasible(usize),

    #[error("both ancillary solves infeasible for subsystem {0}; recursive feasibility violated")]
    DoubleInfeasible(usize),

    #[error("missing prediction from neighbour {neighbour} of subsystem {subsystem}")]
    MissingPrediction { subsystem: usize, neighbour: usize },

    #[error("round {round}, subsystem {subsystem}: {source}")]
    Round {
        round: usize,
        subsystem: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("consistency check failed: {0}")]
    Consistency(String),
}

pub type Result<T> = std::result::Result<T, Error>;
