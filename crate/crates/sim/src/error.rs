use thiserror::Error;

/// Failures of the driver layer.
#[derive(Debug, Error)]
pub enum SimError {
    #[error("config error: {0}")]
    Config(String),

    #[error("design file error: {0}")]
    DesignFile(String),

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("trace error: {0}")]
    Trace(#[from] csv::Error),

    #[error(transparent)]
    Core(#[from] nedmpc_core::Error),
}

pub type Result<T> = std::result::Result<T, SimError>;

/// Process exit codes.
pub mod exit {
    pub const PASS: i32 = 0;
    pub const INVARIANT: i32 = 1;
    pub const USAGE: i32 = 2;
    pub const SOLVER: i32 = 3;
}

impl SimError {
    pub fn exit_code(&self) -> i32 {
        use nedmpc_core::Error as E;
        match self {
            SimError::Config(_) | SimError::DesignFile(_) | SimError::Io { .. } | SimError::Trace(_) => {
                exit::USAGE
            }
            SimError::Core(e) => {
                let mut e = e;
                while let E::Round { source, .. } = e {
                    e = source;
                }
                match e {
                    E::Parameter(_) | E::Dimension(_) | E::UnknownSubsystem(_) => exit::USAGE,
                    E::Solver(_) => exit::SOLVER,
                    _ => exit::INVARIANT,
                }
            }
        }
    }
}
