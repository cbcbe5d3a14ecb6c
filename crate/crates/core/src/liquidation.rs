//! Two-phase optimal liquidation against a constant-product oracle.
//!
//! Phase one liquidates marginally until the first of collateral
//! exhaustion, full repayment or recovery of the health factor to the
//! closing threshold. If the threshold was reached first, one final atomic
//! liquidation follows, sized at the smallest of the remaining collateral,
//! the κ debt cap and the single-shot profit maximizer.

use serde::{Deserialize, Serialize};

use crate::amm::PoolState;
use crate::error::{Error, Result};
use crate::lending::{
    bound_collateral, fee_blocks_liquidation, gross_multiplier, health_factor, post_liquidation_state, BoundSet, Execution,
    LoanPosition, RepaymentConvention, RiskParams,
};

/// A `(CF, κ)` pair: phase one runs while HF ≤ `closing_factor`; the final
/// liquidation may repay at most `max_liq_fraction` of the remaining debt.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdPair {
    pub closing_factor: f64,
    pub max_liq_fraction: f64,
}

impl ThresholdPair {
    pub fn new(closing_factor: f64, max_liq_fraction: f64) -> Self {
        Self {
            closing_factor,
            max_liq_fraction,
        }
    }

    fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("closing_factor", self.closing_factor),
            ("max_liq_fraction", self.max_liq_fraction),
        ] {
            if !(v > 0.0 && v <= 1.0) {
                return Err(crate::error::invalid(name, format!("must lie in (0, 1], got {v}")));
            }
        }
        Ok(())
    }
}

/// Bound that stopped phase one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Binding {
    Collateral,
    Debt,
    ClosingFactor,
}

impl Binding {
    pub fn name(&self) -> &'static str {
        match self {
            Binding::Collateral => "collateral",
            Binding::Debt => "debt",
            Binding::ClosingFactor => "closing_factor",
        }
    }
}

/// What sized the final liquidation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LastBinding {
    CollateralRemainder,
    KappaCap,
    InteriorMax,
    None,
}

impl LastBinding {
    pub fn name(&self) -> &'static str {
        match self {
            LastBinding::CollateralRemainder => "collateral_remainder",
            LastBinding::KappaCap => "kappa_cap",
            LastBinding::InteriorMax => "interior_max",
            LastBinding::None => "none",
        }
    }
}

/// Why a run ended the way it did.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Liquidated,
    /// Health factor above the pair's closing factor.
    AboveThreshold,
    /// `(1-γ)(1+ℓ) ≤ 1`: every liquidation loses money.
    FeeGate,
    /// No collateral or no debt.
    EmptyPosition,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LiquidationResult {
    pub pair: ThresholdPair,
    pub outcome: Outcome,
    pub health_factor: f64,
    /// `None` when nothing was liquidated for a reason other than an empty side.
    pub bounds: Option<BoundSet>,
    pub x_liq: f64,
    pub binding: Option<Binding>,
    pub pi_liq: f64,
    pub x_last: f64,
    pub last_binding: LastBinding,
    pub pi_last: f64,
    pub pi_tot: f64,
    pub post_position: LoanPosition,
    pub post_pool: PoolState,
    /// Debt left once the collateral is gone.
    pub bad_debt: f64,
}

impl LiquidationResult {
    fn idle(pair: ThresholdPair, outcome: Outcome, hf: f64, binding: Option<Binding>, pos: &LoanPosition, pool: &PoolState) -> Self {
        Self {
            pair,
            outcome,
            health_factor: hf,
            bounds: None,
            x_liq: 0.0,
            binding,
            pi_liq: 0.0,
            x_last: 0.0,
            last_binding: LastBinding::None,
            pi_last: 0.0,
            pi_tot: 0.0,
            post_position: *pos,
            post_pool: *pool,
            bad_debt: if pos.collateral == 0.0 { pos.debt } else { 0.0 },
        }
    }

    /// Collateral claimed before the bonus, over both phases.
    pub fn collateral_claimed(&self) -> f64 {
        self.x_liq + self.x_last
    }
}

/// Profit of a single liquidation of size `x`: swap proceeds of
/// `x (1+ℓ)` minus the `B x / A` paid at the pre-trade price.
pub fn single_shot_profit(pool: &PoolState, x: f64, bonus: f64) -> f64 {
    let (a, b) = (pool.reserve_collateral(), pool.reserve_debt());
    let g = gross_multiplier(pool.fee(), bonus);
    b * x * g / (a + x * g) - b * x / a
}

/// Profit of marginally liquidating a total of `x_liq`:
/// `B (g − 1) x / (A + g x)`.
pub fn marginal_phase_profit(pool: &PoolState, x_liq: f64, bonus: f64) -> f64 {
    if x_liq == 0.0 {
        return 0.0;
    }
    let (a, b) = (pool.reserve_collateral(), pool.reserve_debt());
    let g = gross_multiplier(pool.fee(), bonus);
    b * (g - 1.0) * x_liq / (a + x_liq * g)
}

/// Maximizer of [`single_shot_profit`], `A (√g − 1) / g`. Non-positive
/// exactly when `g ≤ 1`.
pub fn interior_maximizer(pool: &PoolState, bonus: f64) -> f64 {
    let g = gross_multiplier(pool.fee(), bonus);
    pool.reserve_collateral() * (g.sqrt() - 1.0) / g
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FinalTranche {
    pub x_last: f64,
    pub pi_last: f64,
    pub binding: LastBinding,
    pub x_kappa: f64,
    pub x_star: f64,
}

/// The closing atomic liquidation from the post-phase-one state.
pub fn final_tranche(
    pool_bar: &PoolState,
    pos_bar: &LoanPosition,
    params: &RiskParams,
    kappa: f64,
    remaining_collateral_bound: f64,
    convention: RepaymentConvention,
) -> FinalTranche {
    let x_kappa = convention.atomic_debt_bound(kappa * pos_bar.debt, pool_bar, params.bonus);
    let x_star = interior_maximizer(pool_bar, params.bonus);
    if x_star <= 0.0 {
        return FinalTranche {
            x_last: 0.0,
            pi_last: 0.0,
            binding: LastBinding::None,
            x_kappa,
            x_star,
        };
    }
    let mut x_last = remaining_collateral_bound.max(0.0);
    let mut binding = LastBinding::CollateralRemainder;
    if x_kappa < x_last {
        x_last = x_kappa;
        binding = LastBinding::KappaCap;
    }
    if x_star < x_last {
        x_last = x_star;
        binding = LastBinding::InteriorMax;
    }
    let pi_last = single_shot_profit(pool_bar, x_last, params.bonus);
    FinalTranche {
        x_last,
        pi_last,
        binding,
        x_kappa,
        x_star,
    }
}

/// Which of the two standard threshold pairs won.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrategyChoice {
    /// `(CF, 1)`
    CfFull,
    /// `(1, κ)`
    OneKappa,
}

impl StrategyChoice {
    pub fn name(&self) -> &'static str {
        match self {
            StrategyChoice::CfFull => "cf_full",
            StrategyChoice::OneKappa => "one_kappa",
        }
    }
}

/// Liquidation engine for fixed protocol parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Liquidator {
    pub params: RiskParams,
    pub convention: RepaymentConvention,
}

impl Liquidator {
    pub fn new(params: RiskParams) -> Self {
        Self {
            params,
            convention: RepaymentConvention::default(),
        }
    }

    pub fn with_convention(mut self, convention: RepaymentConvention) -> Self {
        self.convention = convention;
        self
    }

    /// `(CF, 1)` from the configured parameters.
    pub fn cf_full_pair(&self) -> ThresholdPair {
        ThresholdPair::new(self.params.closing_factor, 1.0)
    }

    /// `(1, κ)` from the configured parameters.
    pub fn one_kappa_pair(&self) -> ThresholdPair {
        ThresholdPair::new(1.0, self.params.max_liq_fraction)
    }

    /// Optimal liquidation profit `L(CF, κ)` and the resulting state.
    pub fn run(&self, pos: &LoanPosition, pool: &PoolState, pair: ThresholdPair) -> Result<LiquidationResult> {
        self.params.validate()?;
        pos.validate()?;
        pair.validate()?;
        let params = &self.params;
        let conv = self.convention;
        let hf = health_factor(pos, pool, params.haircut);

        if pos.collateral == 0.0 {
            return Ok(LiquidationResult::idle(pair, Outcome::EmptyPosition, hf, Some(Binding::Collateral), pos, pool));
        }
        if pos.debt == 0.0 {
            return Ok(LiquidationResult::idle(pair, Outcome::EmptyPosition, hf, Some(Binding::Debt), pos, pool));
        }
        if hf > pair.closing_factor {
            return Ok(LiquidationResult::idle(pair, Outcome::AboveThreshold, hf, None, pos, pool));
        }
        if fee_blocks_liquidation(pool.fee(), params.bonus) {
            return Ok(LiquidationResult::idle(pair, Outcome::FeeGate, hf, None, pos, pool));
        }

        let bounds = BoundSet::compute(pos, pool, params, pair.closing_factor, pair.max_liq_fraction, conv)?;
        let (mut x_liq, mut binding) = (bounds.x_c, Binding::Collateral);
        if bounds.x_b < x_liq {
            x_liq = bounds.x_b;
            binding = Binding::Debt;
        }
        if bounds.x_cf < x_liq {
            x_liq = bounds.x_cf;
            binding = Binding::ClosingFactor;
        }
        let pi_liq = marginal_phase_profit(pool, x_liq, params.bonus);
        let (pos_bar, pool_bar) = post_liquidation_state(pos, pool, x_liq, params, conv, Execution::Marginal)?;

        let mut result = LiquidationResult {
            pair,
            outcome: Outcome::Liquidated,
            health_factor: hf,
            bounds: Some(bounds),
            x_liq,
            binding: Some(binding),
            pi_liq,
            x_last: 0.0,
            last_binding: LastBinding::None,
            pi_last: 0.0,
            pi_tot: pi_liq,
            post_position: pos_bar,
            post_pool: pool_bar,
            bad_debt: 0.0,
        };

        if binding == Binding::ClosingFactor {
            let remaining = bound_collateral(&pos_bar, params.bonus);
            let last = final_tranche(&pool_bar, &pos_bar, params, pair.max_liq_fraction, remaining, conv);
            if last.x_last > 0.0 {
                let (pos_end, pool_end) =
                    post_liquidation_state(&pos_bar, &pool_bar, last.x_last, params, conv, Execution::Atomic)?;
                result.post_position = pos_end;
                result.post_pool = pool_end;
            }
            result.x_last = last.x_last;
            result.last_binding = last.binding;
            result.pi_last = last.pi_last;
            result.pi_tot = pi_liq + last.pi_last;
        }

        let end = result.post_position;
        if end.collateral == 0.0 && end.debt > 0.0 {
            result.bad_debt = end.debt;
        }
        Ok(result)
    }

    /// Better of `L(CF, 1)` and `L(1, κ)`; ties go to `(CF, 1)`.
    pub fn best_strategy(&self, pos: &LoanPosition, pool: &PoolState) -> Result<(LiquidationResult, StrategyChoice)> {
        let full = self.run(pos, pool, self.cf_full_pair())?;
        let capped = self.run(pos, pool, self.one_kappa_pair())?;
        if capped.pi_tot > full.pi_tot {
            Ok((capped, StrategyChoice::OneKappa))
        } else {
            Ok((full, StrategyChoice::CfFull))
        }
    }

    /// Best result over `pairs`; the first of equal maxima wins.
    pub fn strategy_grid(
        &self,
        pos: &LoanPosition,
        pool: &PoolState,
        pairs: &[ThresholdPair],
    ) -> Result<(usize, LiquidationResult)> {
        let mut best: Option<(usize, LiquidationResult)> = None;
        for (i, pair) in pairs.iter().enumerate() {
            let r = self.run(pos, pool, *pair)?;
            if best.as_ref().map_or(true, |(_, b)| r.pi_tot > b.pi_tot) {
                best = Some((i, r));
            }
        }
        best.ok_or(Error::EmptyStrategyList)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn example_one(s: f64) -> (LoanPosition, PoolState, Liquidator) {
        let pool = PoolState::new(1000.0 * s, 2_000_000.0 * s, 0.003).unwrap();
        let b = 10_000.0;
        let c = b * 1000.0 / (0.85 * 2_000_000.0) - 0.35;
        let liq = Liquidator::new(RiskParams::new(0.85, 0.05, 0.95, 0.5).unwrap());
        (LoanPosition::new(c, b).unwrap(), pool, liq)
    }

    #[test]
    fn marginal_profit_edge_cases() {
        let pool = PoolState::new(1000.0, 2e6, 0.003).unwrap();
        assert_eq!(marginal_phase_profit(&pool, 0.0, 0.05), 0.0);
        // (1-γ)(1+ℓ) = 1
        let bonus = 0.003 / 0.997;
        for x in [0.5, 3.0, 40.0] {
            assert!(marginal_phase_profit(&pool, x, bonus).abs() < 1e-9);
        }
        let lossy = PoolState::new(1000.0, 2e6, 0.1).unwrap();
        assert!(marginal_phase_profit(&lossy, 2.0, 0.05) < 0.0);
    }

    #[test]
    fn interior_maximizer_vanishes_at_break_even() {
        let pool = PoolState::new(1000.0, 2e6, 0.003).unwrap();
        let bonus = 0.003 / 0.997;
        assert!(interior_maximizer(&pool, bonus).abs() < 1e-9);
        let pos = LoanPosition::new(5.0, 9000.0).unwrap();
        let params = RiskParams::new(0.85, bonus, 0.95, 0.5).unwrap();
        let ft = final_tranche(&pool, &pos, &params, 0.5, 5.0, RepaymentConvention::default());
        assert_eq!(ft.pi_last, 0.0);
        assert_eq!(ft.binding, LastBinding::None);
    }

    #[test]
    fn final_tranche_kappa_cap_matches_substitution() {
        let pool = PoolState::new(1000.0, 2e6, 0.003).unwrap();
        let pos = LoanPosition::new(50.0, 1_000.0).unwrap();
        let params = RiskParams::new(0.85, 0.05, 0.95, 0.5).unwrap();
        let conv = RepaymentConvention::ExecutionValue;
        let ft = final_tranche(&pool, &pos, &params, 0.5, 50.0 / 1.05, conv);
        assert_eq!(ft.binding, LastBinding::KappaCap);
        let g = 0.997 * 1.05;
        let x = 500.0 * 1000.0 / (2e6 - 500.0 * g);
        assert_relative_eq!(ft.x_last, x, max_relative = 1e-14);
        let expected = 2e6 * x * g / (1000.0 + x * g) - 2e6 * x / 1000.0;
        assert_relative_eq!(ft.pi_last, expected, max_relative = 1e-12);
    }

    #[test]
    fn above_threshold_returns_zero() {
        let pool = PoolState::new(1000.0, 2e6, 0.003).unwrap();
        let pos = LoanPosition::new(6.0, 10_000.0).unwrap(); // HF = 1.02
        let liq = Liquidator::new(RiskParams::new(0.85, 0.05, 0.8, 0.5).unwrap());
        let (r, choice) = liq.best_strategy(&pos, &pool).unwrap();
        assert_eq!(r.pi_tot, 0.0);
        assert_eq!(r.outcome, Outcome::AboveThreshold);
        assert_eq!(choice, StrategyChoice::CfFull);
        assert_eq!(r.post_pool, pool);
    }

    #[test]
    fn empty_positions() {
        let pool = PoolState::new(1000.0, 2e6, 0.003).unwrap();
        let liq = Liquidator::new(RiskParams::new(0.85, 0.05, 0.8, 0.5).unwrap());
        let r = liq.run(&LoanPosition::new(0.0, 100.0).unwrap(), &pool, liq.cf_full_pair()).unwrap();
        assert_eq!((r.pi_tot, r.binding, r.bad_debt), (0.0, Some(Binding::Collateral), 100.0));
        let r = liq.run(&LoanPosition::new(3.0, 0.0).unwrap(), &pool, liq.cf_full_pair()).unwrap();
        assert_eq!((r.pi_tot, r.binding, r.bad_debt), (0.0, Some(Binding::Debt), 0.0));
    }

    #[test]
    fn fee_gate() {
        let (pos, pool, liq) = example_one(1.0);
        let gated = pool.with_fee(0.05 / 1.05).unwrap();
        let r = liq.run(&pos, &gated, liq.cf_full_pair()).unwrap();
        assert_eq!((r.outcome, r.pi_tot), (Outcome::FeeGate, 0.0));
        let open = pool.with_fee(0.05 / 1.05 - 1e-4).unwrap();
        let r = liq.run(&pos, &open, liq.cf_full_pair()).unwrap();
        assert!(r.pi_tot > 0.0, "{r:?}");
    }

    #[test]
    fn totals_add_up_and_post_state_is_consistent() {
        for s in [0.05, 0.3, 1.0, 10.0] {
            let (pos, pool, liq) = example_one(s);
            for pair in [liq.cf_full_pair(), liq.one_kappa_pair()] {
                let r = liq.run(&pos, &pool, pair).unwrap();
                assert_eq!(r.pi_tot, r.pi_liq + r.pi_last);
                let b = r.bounds.unwrap();
                assert_eq!(r.x_liq, b.x_c.min(b.x_b).min(b.x_cf));
                assert_relative_eq!(
                    r.post_pool.liquidity_invariant(),
                    pool.liquidity_invariant(),
                    max_relative = 1e-12
                );
                let sold = r.post_pool.reserve_collateral() - pool.reserve_collateral();
                assert_relative_eq!(sold, r.collateral_claimed() * 1.05 * 0.997, max_relative = 1e-9);
                if r.bad_debt > 0.0 {
                    assert_eq!(r.post_position.collateral, 0.0);
                }
            }
        }
    }

    #[test]
    fn deep_pools_prefer_cf_full() {
        let (pos, pool, liq) = example_one(50.0);
        let (_, choice) = liq.best_strategy(&pos, &pool).unwrap();
        assert_eq!(choice, StrategyChoice::CfFull);
    }

    #[test]
    fn strategy_grid_reductions() {
        let (pos, pool, liq) = example_one(0.3);
        let single = liq.strategy_grid(&pos, &pool, &[liq.cf_full_pair()]).unwrap();
        assert_eq!(single.1, liq.run(&pos, &pool, liq.cf_full_pair()).unwrap());

        let pairs = [liq.cf_full_pair(), liq.one_kappa_pair()];
        let (idx, r) = liq.strategy_grid(&pos, &pool, &pairs).unwrap();
        let (best, choice) = liq.best_strategy(&pos, &pool).unwrap();
        assert_eq!(r, best);
        assert_eq!(idx == 0, choice == StrategyChoice::CfFull);

        assert_eq!(liq.strategy_grid(&pos, &pool, &[]), Err(Error::EmptyStrategyList));
    }

    #[test]
    fn tie_break_prefers_first_pair() {
        let (pos, pool, liq) = example_one(1.0);
        let pair = liq.cf_full_pair();
        let (idx, _) = liq.strategy_grid(&pos, &pool, &[pair, pair, pair]).unwrap();
        assert_eq!(idx, 0);
    }

    #[test]
    fn invalid_pair_is_rejected() {
        let (pos, pool, liq) = example_one(1.0);
        assert!(liq.run(&pos, &pool, ThresholdPair::new(0.0, 0.5)).is_err());
        assert!(liq.run(&pos, &pool, ThresholdPair::new(0.9, 1.5)).is_err());
    }
}
