//! Brute-force counterparts of the closed forms.
//!
//! Nothing here calls the liquidation engine. The oracles rebuild states
//! from pool swaps and the repayment convention's per-trade rule.

use serde::{Deserialize, Serialize};

use crate::amm::PoolState;
use crate::lending::{gross_multiplier, LoanPosition, RepaymentConvention, RiskParams};
use crate::search::{bisect_boundary, golden_max};

const TRANCHE_ITERATIONS: usize = 90;

fn hf(theta: f64, collateral: f64, debt: f64, pool: &PoolState) -> f64 {
    if debt <= 0.0 {
        return f64::INFINITY;
    }
    theta * collateral * pool.spot_price() / debt
}

/// One atomic liquidation: swap proceeds of `x (1+ℓ)` minus `B x / A`.
fn trade_profit(pool: &PoolState, x: f64, bonus: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    let (out, _) = pool
        .sell_collateral(x * (1.0 + bonus))
        .expect("non-negative sale always succeeds");
    out - x * pool.spot_price()
}

#[derive(Debug, Clone, Copy)]
struct Node {
    pool: PoolState,
    collateral: f64,
    debt: f64,
}

impl Node {
    fn after(&self, y: f64, bonus: f64, convention: RepaymentConvention) -> Node {
        let repaid = convention.atomic_repayment(&self.pool, y, bonus);
        let (_, pool) = self.pool.sell_collateral(y * (1.0 + bonus)).expect("non-negative sale");
        Node {
            pool,
            collateral: (self.collateral - y * (1.0 + bonus)).max(0.0),
            debt: (self.debt - repaid).max(0.0),
        }
    }
}

/// Discretized value function for the threshold pair `(cf_target, κ)`.
///
/// Liquidation proceeds in atomic steps of `c / ((1+ℓ) N)` while the health
/// factor stays at or below `cf_target`; steps are cut at collateral
/// exhaustion, full repayment, and the crossing of `cf_target`. At every
/// node the liquidator may instead stop with one final liquidation of any
/// size up to the remaining collateral and `κ` of the remaining debt. The
/// value is the backward recursion `V_k = max(F_k, step_k + V_{k+1})`.
pub fn dp_oracle(
    pos: &LoanPosition,
    pool: &PoolState,
    params: &RiskParams,
    cf_target: f64,
    kappa: f64,
    grid_n: usize,
    convention: RepaymentConvention,
) -> f64 {
    let grid_n = grid_n.max(2);
    let (theta, bonus) = (params.haircut, params.bonus);
    let start = Node {
        pool: *pool,
        collateral: pos.collateral,
        debt: pos.debt,
    };
    if pos.collateral <= 0.0 || pos.debt <= 0.0 || hf(theta, start.collateral, start.debt, pool) > cf_target {
        return 0.0;
    }
    let h = pos.collateral / (1.0 + bonus) / grid_n as f64;

    // Forward pass: the path of states and the profit of each step.
    let mut nodes = vec![start];
    let mut steps: Vec<f64> = Vec::with_capacity(grid_n + 1);
    loop {
        let cur = *nodes.last().unwrap();
        if cur.collateral <= 0.0 || cur.debt <= 0.0 || hf(theta, cur.collateral, cur.debt, &cur.pool) > cf_target {
            break;
        }
        let mut y = h;
        let mut exhaust_collateral = false;
        let mut exhaust_debt = false;
        let x_c = cur.collateral / (1.0 + bonus);
        if y >= x_c {
            y = x_c;
            exhaust_collateral = true;
        }
        if convention.atomic_repayment(&cur.pool, y, bonus) >= cur.debt {
            y = convention.atomic_debt_bound(cur.debt, &cur.pool, bonus).min(y);
            exhaust_debt = true;
            exhaust_collateral = false;
        }
        let mut next = cur.after(y, bonus, convention);
        if exhaust_collateral {
            next.collateral = 0.0;
        }
        if exhaust_debt {
            next.debt = 0.0;
        }
        if hf(theta, next.collateral, next.debt, &next.pool) > cf_target {
            // Land on the threshold instead of overshooting it.
            let below = |z: f64| {
                let n = cur.after(z, bonus, convention);
                hf(theta, n.collateral, n.debt, &n.pool) <= cf_target
            };
            let z = bisect_boundary(below, 0.0, y, 1e-15);
            if z > 0.0 {
                steps.push(trade_profit(&cur.pool, z, bonus));
                nodes.push(cur.after(z, bonus, convention));
            }
            break;
        }
        steps.push(trade_profit(&cur.pool, y, bonus));
        nodes.push(next);
    }

    // Backward pass.
    let mut value = 0.0_f64;
    for k in (0..nodes.len()).rev() {
        let n = nodes[k];
        let mut best_stop = 0.0;
        if n.collateral > 0.0 && n.debt > 0.0 && hf(theta, n.collateral, n.debt, &n.pool) <= cf_target {
            let cap = (n.collateral / (1.0 + bonus)).min(convention.atomic_debt_bound(kappa * n.debt, &n.pool, bonus));
            let (_, f) = golden_max(|y| trade_profit(&n.pool, y, bonus), 0.0, cap, TRANCHE_ITERATIONS);
            best_stop = f.max(0.0);
        }
        let cont = if k < steps.len() { steps[k] + value } else { f64::NEG_INFINITY };
        value = best_stop.max(cont);
    }
    value
}

fn midpoint<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, n: usize) -> f64 {
    let h = (b - a) / n as f64;
    let mut sum = 0.0;
    // Block sums keep round-off low for large n.
    for start in (0..n).step_by(256) {
        let mut s = 0.0;
        for i in start..(start + 256).min(n) {
            s += f(a + (i as f64 + 0.5) * h);
        }
        sum += s;
    }
    sum * h
}

/// Quadrature of the marginal profit rate
/// `(B − y(x)) (g − 1) / (A + g x)` over `[0, x_liq]`, with `y(x)` the
/// debt asset paid out by the pool after selling `x (1+ℓ)`.
///
/// Composite midpoint on `quad_n` and `quad_n / 2` panels, combined by one
/// Richardson step.
pub fn integral_oracle(pool: &PoolState, x_liq: f64, fee: f64, bonus: f64, quad_n: usize) -> f64 {
    if x_liq <= 0.0 {
        return 0.0;
    }
    let quad_n = quad_n.max(16);
    let (a, b) = (pool.reserve_collateral(), pool.reserve_debt());
    let g = gross_multiplier(fee, bonus);
    let rate = |x: f64| {
        let ax = a + g * x;
        let y = b * g * x / ax;
        (b - y) * (g - 1.0) / ax
    };
    let fine = midpoint(&rate, 0.0, x_liq, quad_n);
    let coarse = midpoint(&rate, 0.0, x_liq, quad_n / 2);
    (4.0 * fine - coarse) / 3.0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SubadditivityCheck {
    pub lhs: f64,
    pub rhs: f64,
    pub holds: bool,
}

/// `π(x₁+x₂) ≤ π(x₁) + π(x₂; x₁)` for single liquidations.
pub fn subadditivity_check(pool: &PoolState, bonus: f64, x1: f64, x2: f64) -> SubadditivityCheck {
    let lhs = trade_profit(pool, x1 + x2, bonus);
    let (_, after) = pool.sell_collateral(x1 * (1.0 + bonus)).expect("non-negative sale");
    let rhs = trade_profit(pool, x1, bonus) + trade_profit(&after, x2, bonus);
    let scale = (x1 + x2) * pool.spot_price();
    SubadditivityCheck {
        lhs,
        rhs,
        holds: lhs <= rhs + 1e-12 * scale,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HfMonotonicityCheck {
    pub hf_first: f64,
    pub hf_joint: f64,
    pub hf_sequential: f64,
    pub prices: [f64; 3],
    /// `HF(x₁) ≤ CF` and both debts stay positive.
    pub applicable: bool,
    pub prices_ordered: bool,
    pub holds: bool,
}

/// `HF(x₁+x₂) ≥ HF(x₂; x₁)` with each trade repaying at its own pre-trade
/// spot price, prices `p₀ ≥ p₁ ≥ p₂` taken along the sequential path.
pub fn hf_monotonicity_check(
    pos: &LoanPosition,
    pool: &PoolState,
    params: &RiskParams,
    cf_target: f64,
    x1: f64,
    x2: f64,
) -> HfMonotonicityCheck {
    let (theta, bonus) = (params.haircut, params.bonus);
    let p0 = pool.spot_price();
    let (_, pool1) = pool.sell_collateral(x1 * (1.0 + bonus)).expect("non-negative sale");
    let (_, pool2) = pool1.sell_collateral(x2 * (1.0 + bonus)).expect("non-negative sale");
    let (p1, p2) = (pool1.spot_price(), pool2.spot_price());

    let c_left = pos.collateral - (x1 + x2) * (1.0 + bonus);
    let debt_first = pos.debt - x1 * p0;
    let debt_joint = pos.debt - (x1 + x2) * p0;
    let debt_seq = pos.debt - x1 * p0 - x2 * p1;

    let hf_first = theta * (pos.collateral - x1 * (1.0 + bonus)) * p1 / debt_first;
    let hf_joint = theta * c_left * p2 / debt_joint;
    let hf_sequential = theta * c_left * p2 / debt_seq;

    let applicable = debt_joint > 0.0 && debt_first > 0.0 && c_left >= 0.0 && hf_first <= cf_target;
    let prices_ordered = p0 >= p1 && p1 >= p2;
    let slack = 1e-12 * hf_joint.abs().max(1.0);
    HfMonotonicityCheck {
        hf_first,
        hf_joint,
        hf_sequential,
        prices: [p0, p1, p2],
        applicable,
        prices_ordered,
        holds: !applicable || hf_joint + slack >= hf_sequential,
    }
}

/// Central difference of the single-liquidation profit at `x`, step
/// `rel_step · x`.
pub fn profit_derivative(pool: &PoolState, bonus: f64, x: f64, rel_step: f64) -> f64 {
    let h = x * rel_step;
    (trade_profit(pool, x + h, bonus) - trade_profit(pool, x - h, bonus)) / (2.0 * h)
}

/// Health factor after marginally liquidating `x`, rebuilt from the pool
/// sale and the convention's cumulative repayment.
pub fn marginal_health_factor(
    pos: &LoanPosition,
    pool: &PoolState,
    params: &RiskParams,
    x: f64,
    convention: RepaymentConvention,
) -> f64 {
    let (_, after) = pool.sell_collateral(x * (1.0 + params.bonus)).expect("non-negative sale");
    let repaid = convention.marginal_repayment(pool, x, params.bonus);
    hf(params.haircut, pos.collateral - x * (1.0 + params.bonus), pos.debt - repaid, &after)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::liquidation::{marginal_phase_profit, Liquidator, ThresholdPair};
    use approx::assert_relative_eq;

    fn setup() -> (LoanPosition, PoolState, RiskParams) {
        (
            LoanPosition::new(5.5, 10_000.0).unwrap(),
            PoolState::new(1000.0, 2e6, 0.003).unwrap(),
            RiskParams::new(0.85, 0.05, 0.8, 0.5).unwrap(),
        )
    }

    #[test]
    fn dp_is_zero_above_threshold() {
        let (_, pool, params) = setup();
        let healthy = LoanPosition::new(6.0, 10_000.0).unwrap();
        for n in [2, 100, 10_000] {
            assert_eq!(dp_oracle(&healthy, &pool, &params, 0.8, 1.0, n, RepaymentConvention::default()), 0.0);
        }
    }

    #[test]
    fn dp_refines_towards_engine() {
        let (pos, pool, params) = setup();
        let liq = Liquidator::new(params);
        let pair = ThresholdPair::new(0.8, 1.0);
        let target = liq.run(&pos, &pool, pair).unwrap().pi_tot;
        let coarse = dp_oracle(&pos, &pool, &params, 0.8, 1.0, 2, liq.convention);
        let fine = dp_oracle(&pos, &pool, &params, 0.8, 1.0, 10_000, liq.convention);
        assert!(coarse <= fine + 1e-9 * fine.abs());
        assert!((fine - target).abs() / target.max(1.0) < 1e-3, "{fine} vs {target}");
    }

    #[test]
    fn integral_matches_closed_form() {
        let pool = PoolState::new(1000.0, 2e6, 0.003).unwrap();
        let num = integral_oracle(&pool, 3.7, 0.003, 0.05, 1 << 14);
        assert_relative_eq!(num, marginal_phase_profit(&pool, 3.7, 0.05), max_relative = 1e-9);
        assert_eq!(integral_oracle(&pool, 0.0, 0.003, 0.05, 64), 0.0);
        let free = PoolState::new(1000.0, 2e6, 0.0).unwrap();
        assert_eq!(integral_oracle(&free, 3.7, 0.0, 0.0, 64), 0.0);
    }

    #[test]
    fn subadditivity_trivial_split() {
        let pool = PoolState::new(1000.0, 2e6, 0.003).unwrap();
        let c = subadditivity_check(&pool, 0.05, 2.0, 0.0);
        assert_eq!(c.lhs, c.rhs);
        assert!(c.holds);
        assert!(subadditivity_check(&pool, 0.05, 2.0, 3.0).holds);
    }

    #[test]
    fn hf_check_trivial_split() {
        let (pos, pool, params) = setup();
        let c = hf_monotonicity_check(&pos, &pool, &params, 1.0, 0.5, 0.0);
        assert!(c.applicable && c.holds && c.prices_ordered);
        assert_eq!(c.hf_joint, c.hf_sequential);
    }

    #[test]
    fn derivative_vanishes_at_interior_max() {
        let pool = PoolState::new(1000.0, 2e6, 0.003).unwrap();
        let g: f64 = 0.997 * 1.05;
        let x_star = 1000.0 * (g.sqrt() - 1.0) / g;
        assert!(profit_derivative(&pool, 0.05, x_star, 1e-4).abs() < 1e-6 * pool.spot_price());
        assert!(profit_derivative(&pool, 0.05, 0.5 * x_star, 1e-4) > 0.0);
    }
}
