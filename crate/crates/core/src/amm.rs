//! Constant-product market maker with a proportional fee on the incoming leg.
//!
//! A swap of `a` collateral into the pool credits only `a (1 - fee)` to the
//! reserve, and the debt-asset reserve is set so that the product of the two
//! reserves is unchanged. The same rule is applied in the other direction for
//! exact-output purchases.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Reserves of a two-asset constant-product pool and its fee.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoolState {
    reserve_collateral: f64,
    reserve_debt: f64,
    fee: f64,
}

impl PoolState {
    pub fn new(reserve_collateral: f64, reserve_debt: f64, fee: f64) -> Result<Self> {
        if !(reserve_collateral.is_finite() && reserve_collateral > 0.0) {
            return Err(invalid(
                "reserve_collateral",
                format!("must be finite and positive, got {reserve_collateral}"),
            ));
        }
        if !(reserve_debt.is_finite() && reserve_debt > 0.0) {
            return Err(invalid(
                "reserve_debt",
                format!("must be finite and positive, got {reserve_debt}"),
            ));
        }
        if !(0.0..1.0).contains(&fee) {
            return Err(invalid("fee", format!("must lie in [0, 1), got {fee}")));
        }
        Ok(Self {
            reserve_collateral,
            reserve_debt,
            fee,
        })
    }

    /// Pool with liquidity `k = A·B` quoting `price = B/A`.
    pub fn from_liquidity(k: f64, price: f64, fee: f64) -> Result<Self> {
        if !(k.is_finite() && k > 0.0) {
            return Err(invalid("liquidity", format!("must be positive, got {k}")));
        }
        if !(price.is_finite() && price > 0.0) {
            return Err(invalid("price", format!("must be positive, got {price}")));
        }
        Self::new((k / price).sqrt(), (k * price).sqrt(), fee)
    }

    pub fn reserve_collateral(&self) -> f64 {
        self.reserve_collateral
    }

    pub fn reserve_debt(&self) -> f64 {
        self.reserve_debt
    }

    pub fn fee(&self) -> f64 {
        self.fee
    }

    /// Same reserves, different fee.
    pub fn with_fee(&self, fee: f64) -> Result<Self> {
        Self::new(self.reserve_collateral, self.reserve_debt, fee)
    }

    /// Both reserves multiplied by `s`; the spot price is unchanged.
    pub fn scaled(&self, s: f64) -> Result<Self> {
        Self::new(self.reserve_collateral * s, self.reserve_debt * s, self.fee)
    }

    /// Debt asset per unit of collateral.
    pub fn spot_price(&self) -> f64 {
        self.reserve_debt / self.reserve_collateral
    }

    /// The constant `k = A·B`.
    pub fn liquidity_invariant(&self) -> f64 {
        self.reserve_collateral * self.reserve_debt
    }

    /// Sells `amount_in` collateral into the pool and returns the debt asset
    /// paid out together with the updated pool.
    pub fn sell_collateral(&self, amount_in: f64) -> Result<(f64, PoolState)> {
        if !(amount_in >= 0.0) {
            return Err(invalid(
                "amount_in",
                format!("must be non-negative, got {amount_in}"),
            ));
        }
        if amount_in == 0.0 {
            return Ok((0.0, *self));
        }
        let credited = amount_in * (1.0 - self.fee);
        let new_collateral = self.reserve_collateral + credited;
        let new_debt = self.liquidity_invariant() / new_collateral;
        // B·a(1-γ)/(A + a(1-γ)) avoids the cancellation in B - B'.
        let amount_out = self.reserve_debt * credited / new_collateral;
        Ok((
            amount_out,
            PoolState {
                reserve_collateral: new_collateral,
                reserve_debt: new_debt,
                fee: self.fee,
            },
        ))
    }

    /// Buys exactly `amount_out` collateral from the pool, paying in the debt
    /// asset. Fails with [`Error::InsufficientReserves`] unless
    /// `amount_out < reserve_collateral`.
    pub fn buy_collateral_exact(&self, amount_out: f64) -> Result<(f64, PoolState)> {
        if !(amount_out >= 0.0) {
            return Err(invalid(
                "amount_out",
                format!("must be non-negative, got {amount_out}"),
            ));
        }
        if amount_out == 0.0 {
            return Ok((0.0, *self));
        }
        if amount_out >= self.reserve_collateral {
            return Err(Error::InsufficientReserves {
                requested: amount_out,
                available: self.reserve_collateral,
            });
        }
        let new_collateral = self.reserve_collateral - amount_out;
        let cost = self.reserve_debt * amount_out / ((1.0 - self.fee) * new_collateral);
        let new_debt = self.liquidity_invariant() / new_collateral;
        Ok((
            cost,
            PoolState {
                reserve_collateral: new_collateral,
                reserve_debt: new_debt,
                fee: self.fee,
            },
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn pool(a: f64, b: f64, fee: f64) -> PoolState {
        PoolState::new(a, b, fee).unwrap()
    }

    #[test]
    fn spot_price_examples() {
        assert_eq!(pool(1000.0, 2_000_000.0, 0.003).spot_price(), 2000.0);
        assert_eq!(pool(7.5, 7.5, 0.01).spot_price(), 1.0);
        assert_eq!(pool(10_000.0, 28_000_000.0, 0.0).spot_price(), 2800.0);
    }

    #[test]
    fn rejects_invalid_pools() {
        assert!(PoolState::new(0.0, 1.0, 0.0).is_err());
        assert!(PoolState::new(1.0, -1.0, 0.0).is_err());
        assert!(PoolState::new(1.0, 1.0, 1.0).is_err());
        assert!(PoolState::new(1.0, 1.0, -0.1).is_err());
        assert!(PoolState::new(f64::NAN, 1.0, 0.0).is_err());
    }

    #[test]
    fn zero_swaps_are_noops() {
        let p = pool(1000.0, 2_000_000.0, 0.003);
        assert_eq!(p.sell_collateral(0.0).unwrap(), (0.0, p));
        assert_eq!(p.buy_collateral_exact(0.0).unwrap(), (0.0, p));
    }

    #[test]
    fn sell_without_fee_halves_debt_reserve() {
        let (out, next) = pool(1000.0, 2_000_000.0, 0.0).sell_collateral(1000.0).unwrap();
        assert_relative_eq!(out, 1_000_000.0, max_relative = 1e-15);
        assert_relative_eq!(next.reserve_collateral(), 2000.0);
        assert_relative_eq!(next.reserve_debt(), 1_000_000.0, max_relative = 1e-15);
    }

    #[test]
    fn sell_with_fee_matches_invariant_solution() {
        // (A + a(1-γ))(B - out) = AB solved for out.
        let (a, b, fee, x) = (1000.0, 2_000_000.0, 0.003, 100.0);
        let credited = x * (1.0 - fee);
        let expected = b - a * b / (a + credited);
        let (out, next) = pool(a, b, fee).sell_collateral(x).unwrap();
        assert_relative_eq!(out, expected, max_relative = 1e-12);
        assert_relative_eq!(out, 181_322.178_776_029_8, max_relative = 1e-12);
        assert_relative_eq!(next.liquidity_invariant(), a * b, max_relative = 1e-12);
    }

    #[test]
    fn buy_exact_matches_substitution() {
        let b = 2_000_000_000.0 / 1006.0;
        let p = pool(1006.0, b, 0.0);
        let (cost, next) = p.buy_collateral_exact(6.0).unwrap();
        assert_relative_eq!(cost, 6.0 * b / 1000.0, max_relative = 1e-14);
        assert_relative_eq!(next.reserve_collateral(), 1000.0);
        assert_relative_eq!(next.liquidity_invariant(), p.liquidity_invariant(), max_relative = 1e-12);
    }

    #[test]
    fn buy_cost_blows_up_near_reserve() {
        let p = pool(1000.0, 2_000_000.0, 0.003);
        let (c1, _) = p.buy_collateral_exact(999.0).unwrap();
        let (c2, _) = p.buy_collateral_exact(999.9).unwrap();
        assert!(c2 > 9.0 * c1);
        assert!(matches!(
            p.buy_collateral_exact(1000.0),
            Err(Error::InsufficientReserves { .. })
        ));
    }

    #[test]
    fn negative_amounts_rejected() {
        let p = pool(1.0, 1.0, 0.0);
        assert!(p.sell_collateral(-1.0).is_err());
        assert!(p.buy_collateral_exact(-1e-9).is_err());
        assert!(p.sell_collateral(f64::NAN).is_err());
    }

    #[test]
    fn liquidity_examples() {
        assert_eq!(pool(1000.0, 2_000_000.0, 0.0).liquidity_invariant(), 2e9);
        assert_eq!(pool(1.0, 1.0, 0.0).liquidity_invariant(), 1.0);
        let p = PoolState::from_liquidity(2e9, 1756.76, 0.0).unwrap();
        assert_relative_eq!(p.liquidity_invariant(), 2e9, max_relative = 1e-12);
        assert_relative_eq!(p.spot_price(), 1756.76, max_relative = 1e-12);
    }
}
