use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("position ({alpha}, {beta}) outside [0,1]^2")]
    Domain { alpha: f64, beta: f64 },

    #[error("invalid graphon: {0}")]
    Graphon(String),

    #[error("model definition error at state {state}, action {action}: {reason}")]
    ModelDefinition {
        state: usize,
        action: usize,
        reason: String,
    },

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid distribution: {0}")]
    Distribution(String),

    #[error("propagated mass {mass} deviates from 1 (class {class})")]
    MassLoss { class: usize, mass: f64 },

    #[error("population state at t={t} is outside the policy domain: {reason}")]
    OutsideDomain { t: usize, reason: String },

    #[error("mean-field grid has {nodes} nodes, above the budget of {budget}")]
    GridTooLarge { nodes: u128, budget: u128 },

    #[error("stage fixed point did not converge (best residual {best_residual:e} after {iterations} iterations)")]
    NoFixedPoint {
        best_residual: f64,
        iterations: usize,
        last_iterate: Vec<Vec<Vec<f64>>>,
    },

    #[error("stage t={t}, node {node}: {source}")]
    Stage {
        t: usize,
        node: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("infinite-horizon iteration did not converge after {sweeps} sweeps (last value residual {last_value:e}, last prescription residual {last_prescription:e})")]
    NoStationaryPoint {
        sweeps: usize,
        last_value: f64,
        last_prescription: f64,
        history: Vec<(f64, f64)>,
    },

    #[error("config error in field `{field}`: {message}")]
    Config { field: String, message: String },

    #[error("policy file error: {0}")]
    PolicyFormat(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            message: message.into(),
        }
    }
}
