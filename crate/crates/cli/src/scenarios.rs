//! The five built-in scenarios and the generic sweep.

use anyhow::bail;
use liqsim_core::attack::{attack_profit, optimize_attack, AttackSearch, DeltaBounds};
use liqsim_core::lending::health_factor;
use liqsim_core::liquidation::LiquidationResult;
use liqsim_core::{Liquidator, LoanPosition, PoolState, RiskParams};
use rayon::prelude::*;

use crate::config::ScenarioConfig;
use crate::table::{Cell, Table};

/// Liquidity of the fee-free scenarios.
pub const LIQUIDITY: f64 = 2e9;

/// Initial health factors of the per-HF price sweep.
pub const HF_LEVELS: [f64; 5] = [0.50, 0.90, 0.92, 0.94, 0.99];

/// Fees of the attack-by-fee sweep; 17 bps sits at the deterrence threshold.
pub const ATTACK_FEES: [f64; 4] = [0.0, 0.001, 0.0017, 0.003];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Setup {
    pub position: LoanPosition,
    pub pool: PoolState,
    pub liquidator: Liquidator,
}

fn params(closing_factor: f64) -> RiskParams {
    RiskParams::new(0.85, 0.05, closing_factor, 0.5).expect("valid constants")
}

/// Pool of depth `s` relative to (1,000, 2,000,000) at 30 bps; collateral
/// set 0.35 below the unit-health level.
pub fn depth_setup(s: f64) -> Setup {
    let (a, b, debt) = (1_000.0, 2_000_000.0, 10_000.0);
    let p = params(0.95);
    let collateral = debt * a / (p.haircut * b) - 0.35;
    Setup {
        position: LoanPosition::new(collateral, debt).expect("valid"),
        pool: PoolState::new(a * s, b * s, 0.003).expect("valid"),
        liquidator: Liquidator::new(p),
    }
}

/// Fee-free pool of liquidity 2e9 at `price`, collateral set so the
/// position has health factor `hf`.
pub fn health_level_setup(hf: f64, price: f64) -> Setup {
    let p = params(0.8);
    let debt = 10_000.0;
    Setup {
        position: LoanPosition::new(hf * debt / (p.haircut * price), debt).expect("valid"),
        pool: PoolState::from_liquidity(LIQUIDITY, price, 0.0).expect("valid"),
        liquidator: Liquidator::new(p),
    }
}

/// Fixed position (c = 6, b = 10,000) against a fee-free pool at `price`.
pub fn price_setup(price: f64) -> Setup {
    Setup {
        position: LoanPosition::new(6.0, 10_000.0).expect("valid"),
        pool: PoolState::from_liquidity(LIQUIDITY, price, 0.0).expect("valid"),
        liquidator: Liquidator::new(params(0.8)),
    }
}

/// Healthy starting price (HF = 1.02) for the fee-free attack.
pub const ATTACK_PRICE: f64 = 2_000.0;

/// Deep pool (10,000 / 28,000,000) with a 20.12 / 32,000 position.
pub fn fee_setup(fee: f64) -> Setup {
    Setup {
        position: LoanPosition::new(20.12, 32_000.0).expect("valid"),
        pool: PoolState::new(10_000.0, 28_000_000.0, fee).expect("valid"),
        liquidator: Liquidator::new(params(0.8)),
    }
}

fn linspace(from: f64, to: f64, n: usize) -> Vec<f64> {
    (0..n).map(|i| from + (to - from) * i as f64 / (n - 1) as f64).collect()
}

fn logspace(from: f64, to: f64, n: usize) -> Vec<f64> {
    let (a, b) = (from.ln(), to.ln());
    (0..n).map(|i| (a + (b - a) * i as f64 / (n - 1) as f64).exp()).collect()
}

fn binding_name(r: &LiquidationResult) -> &'static str {
    r.binding.map_or("none", |b| b.name())
}

pub fn ex1() -> anyhow::Result<Table> {
    let mut t = Table::new(vec![
        ("s", "pool depth multiplier"),
        ("l_cf_full", "optimal profit with thresholds (CF, 1)"),
        ("l_one_kappa", "optimal profit with thresholds (1, kappa)"),
    ]);
    let rows: Vec<_> = logspace(0.01, 100.0, 81)
        .into_par_iter()
        .map(|s| {
            let su = depth_setup(s);
            let l = &su.liquidator;
            let full = l.run(&su.position, &su.pool, l.cf_full_pair())?.pi_tot;
            let capped = l.run(&su.position, &su.pool, l.one_kappa_pair())?.pi_tot;
            Ok(vec![s.into(), full.into(), capped.into()])
        })
        .collect::<anyhow::Result<_>>()?;
    rows.into_iter().for_each(|r| t.push(r));
    Ok(t)
}

pub fn ex2() -> anyhow::Result<Table> {
    let mut t = Table::new(vec![
        ("hf0", "initial health factor"),
        ("price", "initial pool price"),
        ("pi_liq", "marginal-phase profit"),
        ("pi_last", "final-liquidation profit"),
        ("pi_tot", "total liquidation profit, best threshold pair"),
        ("binding", "bound that stopped the marginal phase"),
    ]);
    let grid: Vec<(f64, f64)> = HF_LEVELS
        .iter()
        .flat_map(|&h| linspace(500.0, 5_000.0, 181).into_iter().map(move |p| (h, p)))
        .collect();
    let rows: Vec<_> = grid
        .into_par_iter()
        .map(|(h, p)| {
            let su = health_level_setup(h, p);
            let (r, _) = su.liquidator.best_strategy(&su.position, &su.pool)?;
            Ok(vec![h.into(), p.into(), r.pi_liq.into(), r.pi_last.into(), r.pi_tot.into(), binding_name(&r).into()])
        })
        .collect::<anyhow::Result<_>>()?;
    rows.into_iter().for_each(|r| t.push(r));
    Ok(t)
}

pub fn ex3_row(price: f64) -> anyhow::Result<(f64, LiquidationResult)> {
    let su = price_setup(price);
    let hf = health_factor(&su.position, &su.pool, su.liquidator.params.haircut);
    let (r, _) = su.liquidator.best_strategy(&su.position, &su.pool)?;
    Ok((hf, r))
}

pub fn ex3() -> anyhow::Result<Table> {
    let mut t = Table::new(vec![
        ("price", "initial pool price"),
        ("hf", "initial health factor"),
        ("pi_liq", "marginal-phase profit"),
        ("pi_last", "final-liquidation profit"),
        ("pi_tot", "total liquidation profit, best threshold pair"),
        ("binding", "bound that stopped the marginal phase"),
        ("last_binding", "what sized the final liquidation"),
        ("bad_debt", "debt left with no collateral"),
    ]);
    let rows: Vec<_> = linspace(400.0, 2_400.0, 1_001)
        .into_par_iter()
        .map(|p| {
            let (hf, r) = ex3_row(p)?;
            Ok(vec![
                p.into(),
                hf.into(),
                r.pi_liq.into(),
                r.pi_last.into(),
                r.pi_tot.into(),
                binding_name(&r).into(),
                r.last_binding.name().into(),
                r.bad_debt.into(),
            ])
        })
        .collect::<anyhow::Result<_>>()?;
    rows.into_iter().for_each(|r| t.push(r));
    Ok(t)
}

fn attack_columns() -> Vec<(&'static str, &'static str)> {
    vec![
        ("hf_after_front", "health factor after the front-run"),
        ("front_proceeds", "debt asset received for the front-run"),
        ("liq_profit", "embedded liquidation profit"),
        ("buyback_cost", "debt asset paid to buy the collateral back"),
        ("total_profit", "front_proceeds + liq_profit - buyback_cost"),
        ("feasible", "buy-back does not revert"),
    ]
}

fn attack_cells(r: &liqsim_core::AttackResult) -> Vec<Cell> {
    vec![
        r.health_factor_after_front.into(),
        r.front_proceeds.into(),
        r.liq_profit.into(),
        r.buyback_cost.into(),
        r.total_profit.into(),
        r.feasible.into(),
    ]
}

pub fn ex4() -> anyhow::Result<Table> {
    let mut cols = vec![("delta", "attack size")];
    cols.extend(attack_columns());
    let mut t = Table::new(cols);
    let su = price_setup(ATTACK_PRICE);
    let rows: Vec<_> = linspace(0.0, 400.0, 801)
        .into_par_iter()
        .map(|d| {
            let r = attack_profit(d, &su.position, &su.pool, &su.liquidator)?;
            let mut row = vec![d.into()];
            row.extend(attack_cells(&r));
            Ok(row)
        })
        .collect::<anyhow::Result<_>>()?;
    rows.into_iter().for_each(|r| t.push(r));
    Ok(t)
}

pub fn ex5() -> anyhow::Result<Table> {
    let mut cols = vec![("fee_bps", "pool fee in basis points"), ("delta", "attack size")];
    cols.extend(attack_columns());
    let mut t = Table::new(cols);
    let grid: Vec<(f64, f64)> = ATTACK_FEES
        .iter()
        .flat_map(|&fee| {
            let su = fee_setup(fee);
            let upper = DeltaBounds::compute(&su.position, &su.pool, &su.liquidator)
                .delta_baddebt_cap
                .min(liqsim_core::attack::delta_max_no_revert(&su.pool, su.position.collateral));
            logspace(1.0, 0.999 * upper, 241).into_iter().map(move |d| (fee, d))
        })
        .collect();
    let rows: Vec<_> = grid
        .into_par_iter()
        .map(|(fee, d)| {
            let su = fee_setup(fee);
            let r = attack_profit(d, &su.position, &su.pool, &su.liquidator)?;
            let mut row = vec![(fee * 1e4).into(), d.into()];
            row.extend(attack_cells(&r));
            Ok(row)
        })
        .collect::<anyhow::Result<_>>()?;
    rows.into_iter().for_each(|r| t.push(r));
    Ok(t)
}

pub fn run_example(id: &str) -> anyhow::Result<Table> {
    match id {
        "ex1" => ex1(),
        "ex2" => ex2(),
        "ex3" => ex3(),
        "ex4" => ex4(),
        "ex5" => ex5(),
        other => bail!("unknown example {other:?}; expected one of ex1..ex5"),
    }
}

/// One row per sweep point of `config`, in sweep order.
pub fn sweep(config: &ScenarioConfig) -> anyhow::Result<Table> {
    let Some(spec) = &config.sweep else {
        bail!(crate::config::ConfigError {
            problems: vec!["sweep needs a [sweep] section".into()],
        });
    };
    let mut cols = vec![
        (spec.variable.name(), "swept value"),
        ("hf", "initial health factor"),
        ("pi_liq", "marginal-phase profit"),
        ("pi_last", "final-liquidation profit"),
        ("pi_tot", "total liquidation profit, best threshold pair"),
        ("strategy", "winning threshold pair"),
        ("binding", "bound that stopped the marginal phase"),
        ("last_binding", "what sized the final liquidation"),
    ];
    let attack = config.attack.clone();
    if attack.is_some() {
        cols.extend([
            ("delta", "attack size evaluated"),
            ("delta_trigger", "smallest attack reaching health factor 1"),
            ("delta_cap", "largest attack leaving the loan covered"),
            ("delta_max", "largest attack that does not revert"),
        ]);
        cols.extend(attack_columns());
    }
    let mut t = Table::new(cols);
    let rows: Vec<_> = spec
        .points()
        .into_par_iter()
        .map(|v| {
            let m = config.market_at(v)?;
            let liq = Liquidator::new(m.params).with_convention(config.convention);
            let hf = health_factor(&m.position, &m.pool, m.params.haircut);
            let (r, choice) = liq.best_strategy(&m.position, &m.pool)?;
            let mut row: Vec<Cell> = vec![
                v.into(),
                hf.into(),
                r.pi_liq.into(),
                r.pi_last.into(),
                r.pi_tot.into(),
                choice.name().into(),
                binding_name(&r).into(),
                r.last_binding.name().into(),
            ];
            if let Some(a) = &attack {
                let bounds = DeltaBounds::compute(&m.position, &m.pool, &liq);
                let res = match m.delta {
                    Some(d) => attack_profit(d, &m.position, &m.pool, &liq)?,
                    None => {
                        let mut search = AttackSearch::default_for(&bounds);
                        search.grid_points = a.grid_points;
                        optimize_attack(&m.position, &m.pool, &liq, &search)?.best
                    }
                };
                row.extend([
                    res.delta.into(),
                    bounds.delta_trigger.into(),
                    bounds.delta_baddebt_cap.into(),
                    bounds.delta_max.into(),
                ]);
                row.extend(attack_cells(&res));
            }
            Ok(row)
        })
        .collect::<anyhow::Result<_>>()?;
    rows.into_iter().for_each(|r| t.push(r));
    Ok(t)
}
