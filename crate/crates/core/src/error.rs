use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid {name}: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    /// The pool cannot deliver the requested amount; on chain the swap reverts.
    #[error("insufficient reserves: requested {requested} with only {available} in the pool")]
    InsufficientReserves { requested: f64, available: f64 },

    #[error("liquidation size {size} outside the admissible range [0, {max}]")]
    SizeOutOfRange { size: f64, max: f64 },

    #[error("health factor {health_factor} is above the target {target}")]
    NotLiquidatable { health_factor: f64, target: f64 },

    #[error("strategy list is empty")]
    EmptyStrategyList,

    #[error(
        "attack profit does not change sign on the fee interval: \
         sup profit {profit_low} at fee {fee_low}, {profit_high} at fee {fee_high}"
    )]
    NoThreshold {
        fee_low: f64,
        fee_high: f64,
        profit_low: f64,
        profit_high: f64,
    },

    #[error("sup attack profit is not monotone in the fee across interior probes {probes:?}")]
    NonMonotone { probes: Vec<(f64, f64)> },
}

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name,
        reason: reason.into(),
    }
}
