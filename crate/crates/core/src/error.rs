use std::path::PathBuf;

use thiserror::Error;

use crate::mdp::Violation;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("schema error at `{path}`: {message}")]
    Schema { path: String, message: String },

    #[error("validation failed: {}", format_violations(.0))]
    Validation(Vec<Violation>),

    #[error("i/o error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// Enumeration refused. `count` is the exact number of positive-probability
    /// trajectories (saturating at `u128::MAX`).
    #[error(
        "enumeration budget exceeded: {count} trajectories > budget {budget}; \
         use the categorical return DP or Monte Carlo estimation instead"
    )]
    BudgetExceeded { count: u128, budget: u64 },

    #[error("{0} is unreachable under the initial distribution and policy")]
    Unreachable(String),

    #[error("unknown variable `{0}`")]
    UnknownVariable(String),

    #[error("variable sets overlap on `{0}`")]
    OverlappingVariables(String),

    #[error("sequence length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    /// A floating residue below the clamp guard; indicates a table bug rather than rounding.
    #[error("{quantity} evaluated to {value:e}, below the -1e-12 clamp guard")]
    NegativeResidue { quantity: String, value: f64 },
}

fn format_violations(v: &[Violation]) -> String {
    v.iter()
        .map(|x| x.to_string())
        .collect::<Vec<_>>()
        .join("; ")
}
