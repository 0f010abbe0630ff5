use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid environment: {0}")]
    InvalidEnvironment(String),

    #[error("invalid penalty configuration: {0}")]
    InvalidConfig(String),

    #[error("parse error at byte {offset}: {message}")]
    Parse { offset: usize, message: String },

    #[error("unknown proposition `{0}`")]
    UnknownProposition(String),

    #[error("environment is disconnected: {0}")]
    EnvironmentDisconnected(String),

    #[error("value iteration did not converge after {sweeps} sweeps (residual {residual:e})")]
    NonConvergence { sweeps: usize, residual: f64 },

    #[error("{count} G_ok subsets exceed the cap of {cap}; pass an explicit override to enumerate them")]
    SubsetExplosion { count: usize, cap: usize },

    #[error("incompatible tables: {0}")]
    IncompatibleTables(String),

    #[error("missing task `{0}` in library")]
    MissingTask(String),

    #[error("negation unavailable: {0}")]
    NegationUnavailable(String),

    #[error("oracle enumeration exceeded the node cap of {cap}")]
    ExplosionGuard { cap: usize },

    #[error("oracle search exceeded {cap} states")]
    OracleTimeout { cap: usize },

    #[error("bad table file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Non-fatal conditions surfaced alongside a successful result.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Warning {
    /// No region satisfies the formula.
    SemanticallyEmpty { formula: String },
    /// More than one learned negated table was combined without safety-extended slices,
    /// so rollouts may chatter.
    AssumptionViolated { negated_tables: Vec<String> },
}

impl std::fmt::Display for Warning {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Warning::SemanticallyEmpty { formula } => {
                write!(f, "no region satisfies `{formula}`")
            }
            Warning::AssumptionViolated { negated_tables } => write!(
                f,
                "composition combines {} learned negated tables ({}); single-negation assumption unmet, rollouts may chatter",
                negated_tables.len(),
                negated_tables.join(", ")
            ),
        }
    }
}
