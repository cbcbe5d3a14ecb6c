//! Oracle manipulation by sandwiching a liquidation.
//!
//! The attacker sells `Δ` collateral into the pool, liquidates the now
//! underwater position at the depressed price, then buys `Δ` back. Profit
//! is front-run proceeds plus liquidation profit minus the buy-back cost.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::amm::PoolState;
use crate::error::{invalid, Error, Result};
use crate::lending::{health_factor, LoanPosition};
use crate::liquidation::{LiquidationResult, Liquidator, StrategyChoice};
use crate::search::golden_max;

/// Fraction of `Δ_max` kept clear of the singular buy-back.
pub const GUARD_BAND: f64 = 1e-6;

/// Sell `Δ` into the pool.
pub fn front_run(pool: &PoolState, delta: f64) -> Result<(f64, PoolState)> {
    pool.sell_collateral(delta)
}

/// Smallest front-run that brings the health factor down to `target`.
/// Zero if the position is already at or below it.
pub fn delta_for_health_factor(pos: &LoanPosition, pool: &PoolState, haircut: f64, target: f64) -> f64 {
    if pos.debt <= 0.0 {
        return f64::INFINITY;
    }
    let (a, b) = (pool.reserve_collateral(), pool.reserve_debt());
    // θ c A₀B₀ / (A₁² b) = target
    let a1 = (haircut * pos.collateral * a * b / (pos.debt * target)).sqrt();
    ((a1 - a) / (1.0 - pool.fee())).max(0.0)
}

/// Smallest front-run that makes the position liquidatable (HF ≤ 1).
pub fn delta_trigger_bound(pos: &LoanPosition, pool: &PoolState, haircut: f64) -> f64 {
    delta_for_health_factor(pos, pool, haircut, 1.0)
}

/// Largest front-run after which the pool still holds the debt-asset
/// reserves to cover the loan, floored at zero.
pub fn delta_baddebt_cap(pos: &LoanPosition, pool: &PoolState, bonus: f64) -> f64 {
    if pos.debt <= 0.0 {
        return f64::INFINITY;
    }
    let (a, b) = (pool.reserve_collateral(), pool.reserve_debt());
    let keep = 1.0 - pool.fee();
    (a * b / (pos.debt * keep * keep * (1.0 + bonus)) - a / keep).max(0.0)
}

/// Largest attack whose buy-back does not revert when the whole collateral
/// is liquidated; `+∞` without fees.
pub fn delta_max_no_revert(pool: &PoolState, collateral: f64) -> f64 {
    let fee = pool.fee();
    if fee == 0.0 {
        return f64::INFINITY;
    }
    (pool.reserve_collateral() + (1.0 - fee) * collateral) / fee
}

/// Liquidation value of the collateral, the `Δ → ∞` profit without fees.
pub fn limiting_profit_nofee(pool: &PoolState, collateral: f64) -> f64 {
    let a = pool.reserve_collateral();
    pool.reserve_debt() * collateral / (a + collateral)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeltaBounds {
    pub delta_trigger: f64,
    pub delta_baddebt_cap: f64,
    pub delta_max: f64,
}

impl DeltaBounds {
    pub fn compute(pos: &LoanPosition, pool: &PoolState, liquidator: &Liquidator) -> Self {
        let p = &liquidator.params;
        Self {
            delta_trigger: delta_trigger_bound(pos, pool, p.haircut),
            delta_baddebt_cap: delta_baddebt_cap(pos, pool, p.bonus),
            delta_max: delta_max_no_revert(pool, pos.collateral),
        }
    }

    /// `min(Δ_cap, Δ_max (1 − ε))`.
    pub fn search_upper(&self) -> f64 {
        self.delta_baddebt_cap.min(self.delta_max * (1.0 - GUARD_BAND))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AttackResult {
    pub delta: f64,
    pub front_proceeds: f64,
    pub liq_profit: f64,
    /// `+∞` when the buy-back reverts.
    pub buyback_cost: f64,
    /// `front_proceeds + liq_profit − buyback_cost`; `−∞` when infeasible.
    pub total_profit: f64,
    pub feasible: bool,
    /// The front-run pushed the health factor to 1 or below.
    pub triggered: bool,
    pub health_factor_after_front: f64,
    pub strategy: StrategyChoice,
    pub liquidation: LiquidationResult,
    pub pool_after_front: PoolState,
    pub pool_after_liq: PoolState,
}

impl AttackResult {
    /// Collateral claimed by the embedded liquidation, before the bonus.
    pub fn collateral_claimed(&self) -> f64 {
        self.liquidation.collateral_claimed()
    }

    /// Profit of the sandwich legs alone.
    pub fn round_trip_profit(&self) -> f64 {
        self.front_proceeds - self.buyback_cost
    }
}

/// Evaluate the attack of size `delta` with the optimal embedded liquidation.
pub fn attack_profit(delta: f64, pos: &LoanPosition, pool: &PoolState, liquidator: &Liquidator) -> Result<AttackResult> {
    if !(delta >= 0.0) || !delta.is_finite() {
        return Err(invalid("delta", format!("must be finite and non-negative, got {delta}")));
    }
    let (front_proceeds, pool_after_front) = front_run(pool, delta)?;
    let hf = health_factor(pos, &pool_after_front, liquidator.params.haircut);
    let (liquidation, strategy) = liquidator.best_strategy(pos, &pool_after_front)?;
    let pool_after_liq = liquidation.post_pool;
    let buyback = match pool_after_liq.buy_collateral_exact(delta) {
        Ok((cost, _)) => Some(cost),
        Err(Error::InsufficientReserves { .. }) => None,
        Err(e) => return Err(e),
    };
    let (buyback_cost, total_profit, feasible) = match buyback {
        Some(cost) => (cost, front_proceeds + liquidation.pi_tot - cost, true),
        None => (f64::INFINITY, f64::NEG_INFINITY, false),
    };
    Ok(AttackResult {
        delta,
        front_proceeds,
        liq_profit: liquidation.pi_tot,
        buyback_cost,
        total_profit,
        feasible,
        triggered: hf <= 1.0,
        health_factor_after_front: hf,
        strategy,
        liquidation,
        pool_after_front,
        pool_after_liq,
    })
}

/// Sell `Δ` and buy it straight back with nothing in between. Returns
/// `(proceeds, cost)`.
pub fn round_trip(pool: &PoolState, delta: f64) -> Result<(f64, f64)> {
    let (proceeds, after) = pool.sell_collateral(delta)?;
    let (cost, _) = after.buy_collateral_exact(delta)?;
    Ok((proceeds, cost))
}

/// Search range and resolution for [`optimize_attack`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AttackSearch {
    pub lower: f64,
    pub upper: f64,
    /// Coarse grid size; half log-spaced, half linear.
    pub grid_points: usize,
    pub refine_iterations: usize,
}

impl AttackSearch {
    pub fn new(lower: f64, upper: f64) -> Self {
        Self {
            lower,
            upper,
            grid_points: 400,
            refine_iterations: 120,
        }
    }

    /// `[0, min(Δ_cap, Δ_max (1 − ε))]`.
    pub fn default_for(bounds: &DeltaBounds) -> Self {
        Self::new(0.0, bounds.search_upper())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AttackOptimum {
    /// Best over the range, `Δ = 0` included.
    pub best: AttackResult,
    /// Best over attacks that actually trigger a liquidation.
    pub best_triggered: Option<AttackResult>,
    pub bounds: DeltaBounds,
    pub grid_points: usize,
    pub evaluations: usize,
}

impl AttackOptimum {
    /// Supremum of triggering-attack profit, `−∞` if none triggers.
    pub fn sup_triggered_profit(&self) -> f64 {
        self.best_triggered.map_or(f64::NEG_INFINITY, |r| r.total_profit)
    }
}

fn nudge_to_target(pos: &LoanPosition, pool: &PoolState, haircut: f64, target: f64, delta: f64) -> f64 {
    let below = |d: f64| {
        pool.sell_collateral(d)
            .map(|(_, p)| health_factor(pos, &p, haircut) <= target)
            .unwrap_or(false)
    };
    let mut d = delta;
    let mut step = delta.max(1.0) * f64::EPSILON;
    for _ in 0..80 {
        if below(d) {
            return d;
        }
        d = delta + step;
        step *= 2.0;
    }
    d
}

fn better(a: &AttackResult, b: &AttackResult) -> bool {
    a.total_profit > b.total_profit || (a.total_profit == b.total_profit && a.delta < b.delta)
}

/// Maximize total attack profit over `Δ`.
///
/// Evaluates `Δ = 0`, the two trigger points (HF = 1 and HF = CF, just past
/// the jump), a log and a linear grid, then refines around the best grid
/// point by golden section.
pub fn optimize_attack(
    pos: &LoanPosition,
    pool: &PoolState,
    liquidator: &Liquidator,
    search: &AttackSearch,
) -> Result<AttackOptimum> {
    let bounds = DeltaBounds::compute(pos, pool, liquidator);
    let (lo, hi) = (search.lower.max(0.0), search.upper);
    let haircut = liquidator.params.haircut;

    let mut deltas = vec![lo];
    if hi > lo && hi.is_finite() {
        deltas.push(hi);
        let n = search.grid_points.max(4);
        let half = n / 2;
        let log_lo = if lo > 0.0 { lo } else { hi * 1e-9 };
        let ratio = (hi / log_lo).ln();
        for i in 0..half {
            deltas.push(log_lo * (ratio * i as f64 / (half - 1) as f64).exp());
        }
        for i in 1..(n - half) {
            deltas.push(lo + (hi - lo) * i as f64 / (n - half) as f64);
        }
        for target in [1.0, liquidator.params.closing_factor] {
            let t = delta_for_health_factor(pos, pool, haircut, target);
            if t > 0.0 && t.is_finite() {
                let t = nudge_to_target(pos, pool, haircut, target, t);
                if t >= lo && t <= hi {
                    deltas.push(t);
                }
            }
        }
    }
    deltas.sort_by(f64::total_cmp);
    deltas.dedup();

    let evaluated: Vec<AttackResult> = deltas
        .par_iter()
        .map(|&d| attack_profit(d, pos, pool, liquidator))
        .collect::<Result<_>>()?;
    let mut evaluations = evaluated.len();

    let pick = |filter: &dyn Fn(&AttackResult) -> bool| -> Option<usize> {
        let mut best: Option<usize> = None;
        for (i, r) in evaluated.iter().enumerate() {
            if filter(r) && best.map_or(true, |j| better(r, &evaluated[j])) {
                best = Some(i);
            }
        }
        best
    };

    let mut refine = |idx: usize, need_trigger: bool| -> Result<AttackResult> {
        let mut best = evaluated[idx];
        let a = evaluated[idx.saturating_sub(1)].delta;
        let b = evaluated[(idx + 1).min(evaluated.len() - 1)].delta;
        if b > a {
            let mut found: Option<AttackResult> = None;
            let mut count = 0usize;
            golden_max(
                |d| {
                    count += 1;
                    match attack_profit(d, pos, pool, liquidator) {
                        Ok(r) if r.triggered || !need_trigger => {
                            if found.map_or(true, |f| better(&r, &f)) {
                                found = Some(r);
                            }
                            r.total_profit
                        }
                        _ => f64::NEG_INFINITY,
                    }
                },
                a,
                b,
                search.refine_iterations,
            );
            evaluations += count;
            if let Some(f) = found {
                if better(&f, &best) {
                    best = f;
                }
            }
        }
        Ok(best)
    };

    let overall = pick(&|_| true).expect("at least one evaluation");
    let mut best = refine(overall, false)?;
    let best_triggered = match pick(&|r| r.triggered) {
        Some(i) => Some(refine(i, true)?),
        None => None,
    };
    if let Some(t) = best_triggered {
        if better(&t, &best) {
            best = t;
        }
    }

    Ok(AttackOptimum {
        best,
        best_triggered,
        bounds,
        grid_points: deltas.len(),
        evaluations,
    })
}

/// One evaluation of the supremum during the fee search.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeeProbe {
    pub fee: f64,
    pub sup_profit: f64,
    pub best_delta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriticalFee {
    /// Smallest fee found at which no triggering attack is profitable.
    pub fee: f64,
    /// Last fee known to leave a profitable attack.
    pub fee_profitable: f64,
    pub probes: Vec<FeeProbe>,
    pub trace: Vec<FeeProbe>,
}

/// Absolute fee tolerance of the bisection.
pub const FEE_TOLERANCE: f64 = 1e-5;

/// Sup of triggering-attack profit at fee `fee`.
pub fn sup_attack_profit(pos: &LoanPosition, pool: &PoolState, liquidator: &Liquidator, fee: f64) -> Result<FeeProbe> {
    let pool = pool.with_fee(fee)?;
    let bounds = DeltaBounds::compute(pos, &pool, liquidator);
    let opt = optimize_attack(pos, &pool, liquidator, &AttackSearch::default_for(&bounds))?;
    Ok(FeeProbe {
        fee,
        sup_profit: opt.sup_triggered_profit(),
        best_delta: opt.best_triggered.map_or(f64::NAN, |r| r.delta),
    })
}

/// Smallest pool fee in `[fee_low, fee_high]` that makes every triggering
/// attack unprofitable, by bisection to [`FEE_TOLERANCE`].
///
/// Monotonicity in the fee is checked at five interior probes first.
pub fn critical_fee(
    pos: &LoanPosition,
    pool: &PoolState,
    liquidator: &Liquidator,
    fee_low: f64,
    fee_high: f64,
) -> Result<CriticalFee> {
    if !(fee_low >= 0.0 && fee_high > fee_low && fee_high < 1.0) {
        return Err(invalid("fee interval", format!("need 0 <= low < high < 1, got [{fee_low}, {fee_high}]")));
    }
    let fees: Vec<f64> = (0..7).map(|i| fee_low + (fee_high - fee_low) * i as f64 / 6.0).collect();
    let probes: Vec<FeeProbe> = fees
        .par_iter()
        .map(|&f| sup_attack_profit(pos, pool, liquidator, f))
        .collect::<Result<_>>()?;
    // Round-off in a fee-free round trip is of order ε B.
    let floor = 1e-12 * pool.reserve_debt();
    let profitable = |p: &FeeProbe| p.sup_profit > floor;
    let (first, last) = (probes[0], probes[6]);
    if !profitable(&first) || profitable(&last) {
        return Err(Error::NoThreshold {
            fee_low,
            fee_high,
            profit_low: first.sup_profit,
            profit_high: last.sup_profit,
        });
    }
    for w in probes.windows(2) {
        let slack = 1e-9 * w[0].sup_profit.abs().max(1.0);
        if w[1].sup_profit > w[0].sup_profit + slack {
            return Err(Error::NonMonotone {
                probes: probes.iter().map(|p| (p.fee, p.sup_profit)).collect(),
            });
        }
    }
    let i = probes.iter().position(|p| !profitable(p)).expect("last probe is unprofitable");
    let (mut lo, mut hi) = (probes[i - 1], probes[i]);
    let mut trace = vec![lo, hi];
    while hi.fee - lo.fee > FEE_TOLERANCE {
        let mid = sup_attack_profit(pos, pool, liquidator, 0.5 * (lo.fee + hi.fee))?;
        trace.push(mid);
        if profitable(&mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(CriticalFee {
        fee: hi.fee,
        fee_profitable: lo.fee,
        probes,
        trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lending::RiskParams;
    use approx::assert_relative_eq;

    fn ex5() -> (LoanPosition, PoolState, Liquidator) {
        (
            LoanPosition::new(20.12, 32_000.0).unwrap(),
            PoolState::new(10_000.0, 28_000_000.0, 0.003).unwrap(),
            Liquidator::new(RiskParams::new(0.85, 0.05, 0.8, 0.5).unwrap()),
        )
    }

    #[test]
    fn front_run_examples() {
        let (_, pool, _) = ex5();
        assert_eq!(front_run(&pool, 0.0).unwrap(), (0.0, pool));
        let (out, next) = front_run(&pool, 500.0).unwrap();
        let a1 = 10_000.0 + 500.0 * 0.997;
        assert_relative_eq!(out, 28e6 * 500.0 * 0.997 / a1, max_relative = 1e-14);
        assert_relative_eq!(next.reserve_debt(), 2.8e11 / a1, max_relative = 1e-14);
        let free = pool.with_fee(0.0).unwrap();
        let (out, _) = front_run(&free, 1e12).unwrap();
        assert_relative_eq!(out, 28e6, max_relative = 1e-7);
    }

    #[test]
    fn trigger_bound_hits_unit_health_factor() {
        let (pos, pool, liq) = ex5();
        let d = delta_trigger_bound(&pos, &pool, 0.85);
        let (_, p1) = front_run(&pool, d).unwrap();
        assert_relative_eq!(health_factor(&pos, &p1, 0.85), 1.0, max_relative = 1e-9);
        let sick = LoanPosition::new(5.0, 32_000.0).unwrap();
        assert_eq!(delta_trigger_bound(&sick, &pool, 0.85), 0.0);
        let _ = liq;
    }

    #[test]
    fn baddebt_cap_leaves_debt_covered() {
        let (pos, pool, _) = ex5();
        let cap = delta_baddebt_cap(&pos, &pool, 0.05);
        let (_, p1) = front_run(&pool, cap).unwrap();
        assert_relative_eq!(p1.reserve_debt(), 32_000.0 * 0.997 * 1.05, max_relative = 1e-9);
        let tiny = LoanPosition::new(20.12, 0.0).unwrap();
        assert_eq!(delta_baddebt_cap(&tiny, &pool, 0.05), f64::INFINITY);
        let huge = LoanPosition::new(20.12, 1e9).unwrap();
        assert_eq!(delta_baddebt_cap(&huge, &pool, 0.05), 0.0);
    }

    #[test]
    fn delta_max_examples() {
        let (_, pool, _) = ex5();
        assert_eq!(delta_max_no_revert(&pool.with_fee(0.0).unwrap(), 20.12), f64::INFINITY);
        let dm = delta_max_no_revert(&pool, 20.12);
        assert_relative_eq!(dm, (10_000.0 + 0.997 * 20.12) / 0.003, max_relative = 1e-15);
        // A₂(Δ_max, x_c) = Δ_max
        let a2 = 10_000.0 + 0.997 * dm + 0.997 * 20.12;
        assert_relative_eq!(a2, dm, max_relative = 1e-9);
    }

    #[test]
    fn buyback_matches_printed_expression() {
        let (pos, pool, liq) = ex5();
        for d in [500.0, 5_000.0, 50_000.0, 1e6] {
            let r = attack_profit(d, &pos, &pool, &liq).unwrap();
            let (a2, b2) = (r.pool_after_liq.reserve_collateral(), r.pool_after_liq.reserve_debt());
            let printed = b2 * d / ((1.0 - 0.003) * (a2 - d));
            assert_relative_eq!(r.buyback_cost, printed, max_relative = 1e-12);
        }
    }

    #[test]
    fn attack_invariants() {
        let (pos, pool, liq) = ex5();
        let k = pool.liquidity_invariant();
        for d in [0.0, 10.0, 3_000.0, 80_000.0, 2e6] {
            let r = attack_profit(d, &pos, &pool, &liq).unwrap();
            assert!(r.feasible);
            assert_eq!(r.total_profit, r.front_proceeds + r.liq_profit - r.buyback_cost);
            assert_relative_eq!(r.pool_after_front.liquidity_invariant(), k, max_relative = 1e-12);
            assert_relative_eq!(r.pool_after_liq.liquidity_invariant(), k, max_relative = 1e-12);
        }
        let zero = attack_profit(0.0, &pos, &pool, &liq).unwrap();
        assert_eq!(zero.total_profit, 0.0);
        assert!(!zero.triggered);
    }

    #[test]
    fn attack_beyond_delta_max_reverts() {
        let (pos, pool, liq) = ex5();
        let dm = delta_max_no_revert(&pool, pos.collateral);
        let r = attack_profit(dm * 1.001, &pos, &pool, &liq).unwrap();
        assert!(!r.feasible);
        assert_eq!(r.total_profit, f64::NEG_INFINITY);
        assert!(attack_profit(-1.0, &pos, &pool, &liq).is_err());
    }

    #[test]
    fn round_trip_loses_only_fees() {
        let (_, pool, _) = ex5();
        for d in [1.0, 100.0, 1e5] {
            let (p, c) = round_trip(&pool, d).unwrap();
            assert!(p < c);
            let (p, c) = round_trip(&pool.with_fee(0.0).unwrap(), d).unwrap();
            assert_relative_eq!(p, c, max_relative = 1e-12);
        }
        assert_eq!(round_trip(&pool, 0.0).unwrap(), (0.0, 0.0));
    }

    #[test]
    fn limiting_profit_examples() {
        let pool = PoolState::new(1000.0, 2e6, 0.0).unwrap();
        assert_relative_eq!(limiting_profit_nofee(&pool, 6.0), 12e6 / 1006.0, max_relative = 1e-15);
        assert_eq!(limiting_profit_nofee(&pool, 0.0), 0.0);
    }

    #[test]
    fn thirty_bps_deters_attack() {
        let (pos, pool, liq) = ex5();
        let bounds = DeltaBounds::compute(&pos, &pool, &liq);
        let opt = optimize_attack(&pos, &pool, &liq, &AttackSearch::default_for(&bounds)).unwrap();
        assert_eq!(opt.best.delta, 0.0);
        assert!(opt.sup_triggered_profit() < 0.0);
    }

    #[test]
    fn empty_range_gives_zero_attack() {
        let (pos, pool, liq) = ex5();
        let opt = optimize_attack(&pos, &pool, &liq, &AttackSearch::new(0.0, -1.0)).unwrap();
        assert_eq!(opt.best.delta, 0.0);
        assert_eq!(opt.evaluations, 1);
    }

    #[test]
    fn degenerate_position_has_no_threshold() {
        let (_, pool, liq) = ex5();
        let pos = LoanPosition::new(0.0, 32_000.0).unwrap();
        let r = critical_fee(&pos, &pool, &liq, 0.0, 0.003);
        assert!(matches!(r, Err(Error::NoThreshold { .. })), "{r:?}");
    }
}
