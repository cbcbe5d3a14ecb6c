//! Optimal liquidation and oracle-manipulation economics for a lending
//! protocol that prices collateral off a fee-charging constant-product pool.

pub mod amm;
pub mod attack;
pub mod error;
pub mod lending;
pub mod liquidation;
pub mod search;
pub mod verify;

pub use amm::PoolState;
pub use error::{Error, Result};
pub use lending::{LoanPosition, RepaymentConvention, RiskParams};
pub use liquidation::{LiquidationResult, Liquidator, StrategyChoice, ThresholdPair};
pub use attack::{AttackResult, DeltaBounds};
