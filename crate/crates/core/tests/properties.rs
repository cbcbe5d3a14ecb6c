use approx::assert_relative_eq;
use liqsim_core::attack::{attack_profit, round_trip};
use liqsim_core::lending::{health_factor, RepaymentConvention};
use liqsim_core::liquidation::{Binding, Liquidator, Outcome};
use liqsim_core::verify::{hf_monotonicity_check, subadditivity_check};
use liqsim_core::{LoanPosition, PoolState, RiskParams};
use proptest::prelude::*;

fn fee() -> impl Strategy<Value = f64> {
    prop_oneof![Just(0.0), Just(0.0005), Just(0.003), 0.0..0.05]
}

fn pool() -> impl Strategy<Value = PoolState> {
    (1e2..1e7f64, 0.1..1e4f64, fee()).prop_map(|(a, p, g)| PoolState::new(a, a * p, g).unwrap())
}

fn params() -> impl Strategy<Value = RiskParams> {
    (0.5..0.95f64, 0.0..0.15f64, 0.5..1.0f64, 0.1..1.0f64)
        .prop_map(|(t, l, cf, k)| RiskParams::new(t, l, cf, k).unwrap())
}

/// Pool, position with HF in `[0.2, 1.3]`, parameters.
fn market() -> impl Strategy<Value = (PoolState, LoanPosition, RiskParams)> {
    (pool(), params(), 1e-5..0.05f64, 0.2..1.3f64).prop_map(|(pool, params, share, hf)| {
        let debt = pool.reserve_debt() * share;
        let c = hf * debt / (params.haircut * pool.spot_price());
        (pool, LoanPosition::new(c, debt).unwrap(), params)
    })
}

fn conventions() -> impl Strategy<Value = RepaymentConvention> {
    prop::sample::select(RepaymentConvention::ALL.to_vec())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(512))]

    #[test]
    fn swaps_preserve_the_product(pool in pool(), frac in 0.0..50.0f64) {
        let amount = pool.reserve_collateral() * frac;
        let (out, next) = pool.sell_collateral(amount).unwrap();
        prop_assert!(out >= 0.0 && out < pool.reserve_debt());
        prop_assert!((next.liquidity_invariant() / pool.liquidity_invariant() - 1.0).abs() < 1e-12);
        let buy = pool.reserve_collateral() * (frac / (1.0 + frac));
        let (_, after_buy) = pool.buy_collateral_exact(buy).unwrap();
        prop_assert!((after_buy.liquidity_invariant() / pool.liquidity_invariant() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn sale_proceeds_fall_with_the_fee(pool in pool(), frac in 1e-6..5.0f64, extra in 1e-4..0.05f64) {
        let amount = pool.reserve_collateral() * frac;
        let (cheap, _) = pool.sell_collateral(amount).unwrap();
        let (dear, _) = pool.with_fee((pool.fee() + extra).min(0.99)).unwrap().sell_collateral(amount).unwrap();
        prop_assert!(dear <= cheap);
    }

    #[test]
    fn round_trip_never_gains(pool in pool(), frac in 1e-6..5.0f64) {
        let (proceeds, cost) = round_trip(&pool, pool.reserve_collateral() * frac).unwrap();
        if pool.fee() == 0.0 {
            prop_assert!((proceeds - cost).abs() <= 1e-10 * cost);
        } else {
            prop_assert!(proceeds < cost);
        }
    }

    #[test]
    fn liquidation_is_scale_free(
        (pool, pos, params) in market(),
        conv in conventions(),
        s in 1e-3..1e3f64,
    ) {
        let liq = Liquidator::new(params).with_convention(conv);
        let (base, choice) = liq.best_strategy(&pos, &pool).unwrap();
        let (scaled, scaled_choice) = liq.best_strategy(&pos.scaled(s), &pool.scaled(s).unwrap()).unwrap();
        prop_assert_eq!(base.binding, scaled.binding);
        let tol = 1e-8 * (base.pi_tot.abs() * s).max(1e-9 * pos.debt * s);
        prop_assert!((scaled.pi_tot - s * base.pi_tot).abs() <= tol,
            "{} vs {}", scaled.pi_tot, s * base.pi_tot);
        if (base.pi_tot - liq.run(&pos, &pool, liq.one_kappa_pair()).unwrap().pi_tot).abs() > 1e-6 * base.pi_tot.abs() {
            prop_assert_eq!(choice, scaled_choice);
        }
    }

    #[test]
    fn liquidation_respects_its_bounds((pool, pos, params) in market(), conv in conventions()) {
        let liq = Liquidator::new(params).with_convention(conv);
        for pair in [liq.cf_full_pair(), liq.one_kappa_pair()] {
            let r = liq.run(&pos, &pool, pair).unwrap();
            prop_assert!(r.pi_tot >= 0.0);
            prop_assert!(r.post_position.collateral >= 0.0 && r.post_position.debt >= 0.0);
            prop_assert!(r.post_position.collateral <= pos.collateral);
            prop_assert!(r.post_position.debt <= pos.debt * (1.0 + 1e-12));
            if r.outcome == Outcome::Liquidated {
                let b = r.bounds.unwrap();
                prop_assert!(r.x_liq <= b.x_c && r.x_liq <= b.x_b && r.x_liq <= b.x_cf);
                if r.binding == Some(Binding::ClosingFactor) {
                    let hf = health_factor(&pos, &pool, params.haircut);
                    prop_assert!(hf <= pair.closing_factor);
                }
            }
            if r.bad_debt > 0.0 {
                prop_assert_eq!(r.post_position.collateral, 0.0);
            }
        }
    }

    #[test]
    fn attack_total_is_the_sum_of_its_legs((pool, pos, params) in market(), frac in 0.0..3.0f64) {
        let liq = Liquidator::new(params);
        let delta = pool.reserve_collateral() * frac;
        let r = attack_profit(delta, &pos, &pool, &liq).unwrap();
        if r.feasible {
            prop_assert_eq!(r.total_profit, r.front_proceeds + r.liq_profit - r.buyback_cost);
            let k = pool.liquidity_invariant();
            prop_assert!((r.pool_after_liq.liquidity_invariant() / k - 1.0).abs() < 1e-12);
        } else {
            prop_assert_eq!(r.total_profit, f64::NEG_INFINITY);
        }
    }

    #[test]
    fn attack_profit_falls_with_the_fee(
        (pool, pos, params) in market(),
        frac in 1e-4..2.0f64,
        extra in 1e-4..0.01f64,
    ) {
        let liq = Liquidator::new(params);
        let delta = pool.reserve_collateral() * frac;
        let low = attack_profit(delta, &pos, &pool, &liq).unwrap();
        let high_pool = pool.with_fee(pool.fee() + extra).unwrap();
        let high = attack_profit(delta, &pos, &high_pool, &liq).unwrap();
        let slack = 1e-9 * (low.front_proceeds + low.buyback_cost);
        prop_assert!(high.total_profit <= low.total_profit + slack,
            "{} > {}", high.total_profit, low.total_profit);
    }

    #[test]
    fn splitting_never_loses((pool, pos, params) in market(), u in 0.0..1.0f64, v in 0.0..1.0f64) {
        let x_c = pos.collateral / (1.0 + params.bonus);
        let (x1, x2) = (x_c * u * v, x_c * u * (1.0 - v));
        prop_assert!(subadditivity_check(&pool, params.bonus, x1, x2).holds);
        let hc = hf_monotonicity_check(&pos, &pool, &params, params.closing_factor, x1, x2);
        prop_assert!(hc.holds && hc.prices_ordered);
    }
}

#[test]
fn execution_conventions_agree_on_the_marginal_path() {
    let pool = PoolState::new(1000.0, 2e6, 0.003).unwrap();
    let pos = LoanPosition::new(5.0, 10_000.0).unwrap();
    let params = RiskParams::new(0.85, 0.05, 0.8, 0.5).unwrap();
    let a = Liquidator::new(params).with_convention(RepaymentConvention::SpotPrice);
    let b = Liquidator::new(params).with_convention(RepaymentConvention::ExecutionValue);
    let ra = a.run(&pos, &pool, a.cf_full_pair()).unwrap();
    let rb = b.run(&pos, &pool, b.cf_full_pair()).unwrap();
    assert_relative_eq!(ra.x_liq, rb.x_liq, max_relative = 1e-12);
    assert_relative_eq!(ra.pi_liq, rb.pi_liq, max_relative = 1e-12);
}
