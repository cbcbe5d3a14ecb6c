//! Text reports behind the subcommands, and the exit-code policy.

use std::fmt::Write as _;

use liqsim_core::attack::{attack_profit, critical_fee, optimize_attack, AttackSearch, DeltaBounds};
use liqsim_core::lending::health_factor;
use liqsim_core::verify::{run_verification, OracleConfig, VerificationReport};
use liqsim_core::Liquidator;

use crate::config::{ConfigError, ScenarioConfig};
use crate::table::fmt_num;

/// The requested attack reverts or has nothing to act on.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("infeasible: {0}")]
pub struct Infeasible(pub String);

/// At least one oracle check failed.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("verification failed: {failed} of {total} checks")]
pub struct VerificationFailed {
    pub failed: usize,
    pub total: usize,
}

pub const EXIT_FAILURE: u8 = 1;
pub const EXIT_CONFIG: u8 = 2;
pub const EXIT_INFEASIBLE: u8 = 3;
pub const EXIT_VERIFICATION: u8 = 4;

pub fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<ConfigError>() {
            return EXIT_CONFIG;
        }
        if cause.is::<Infeasible>() {
            return EXIT_INFEASIBLE;
        }
        if cause.is::<VerificationFailed>() {
            return EXIT_VERIFICATION;
        }
        if let Some(e) = cause.downcast_ref::<liqsim_core::Error>() {
            return match e {
                liqsim_core::Error::NoThreshold { .. } => EXIT_INFEASIBLE,
                liqsim_core::Error::InvalidParameter { .. } => EXIT_CONFIG,
                _ => EXIT_FAILURE,
            };
        }
    }
    EXIT_FAILURE
}

fn line(out: &mut String, key: &str, value: impl std::fmt::Display) {
    let _ = writeln!(out, "{key:<22} {value}");
}

pub fn liquidate(cfg: &ScenarioConfig) -> anyhow::Result<String> {
    let m = cfg.base_market()?;
    let liq = Liquidator::new(m.params).with_convention(cfg.convention);
    let (best, choice) = liq.best_strategy(&m.position, &m.pool)?;
    let mut out = String::new();
    line(&mut out, "health_factor", fmt_num(health_factor(&m.position, &m.pool, m.params.haircut)));
    line(&mut out, "convention", cfg.convention.name());
    for (name, pair) in [("cf_full", liq.cf_full_pair()), ("one_kappa", liq.one_kappa_pair())] {
        let r = liq.run(&m.position, &m.pool, pair)?;
        let _ = writeln!(out, "[{name}]");
        line(&mut out, "outcome", format!("{:?}", r.outcome));
        line(&mut out, "x_liq", fmt_num(r.x_liq));
        line(&mut out, "binding", r.binding.map_or("none", |b| b.name()));
        line(&mut out, "pi_liq", fmt_num(r.pi_liq));
        line(&mut out, "x_last", fmt_num(r.x_last));
        line(&mut out, "last_binding", r.last_binding.name());
        line(&mut out, "pi_last", fmt_num(r.pi_last));
        line(&mut out, "pi_tot", fmt_num(r.pi_tot));
        line(&mut out, "bad_debt", fmt_num(r.bad_debt));
        if let Some(b) = r.bounds {
            line(&mut out, "x_c", fmt_num(b.x_c));
            line(&mut out, "x_b", fmt_num(b.x_b));
            line(&mut out, "x_kb", fmt_num(b.x_kb));
            line(&mut out, "x_cf", fmt_num(b.x_cf));
        }
    }
    let _ = writeln!(out, "[best]");
    line(&mut out, "strategy", choice.name());
    line(&mut out, "pi_tot", fmt_num(best.pi_tot));
    Ok(out)
}

pub fn attack(cfg: &ScenarioConfig) -> anyhow::Result<String> {
    let m = cfg.base_market()?;
    let liq = Liquidator::new(m.params).with_convention(cfg.convention);
    let bounds = DeltaBounds::compute(&m.position, &m.pool, &liq);
    let mut out = String::new();
    line(&mut out, "delta_trigger", fmt_num(bounds.delta_trigger));
    line(&mut out, "delta_cap", fmt_num(bounds.delta_baddebt_cap));
    line(&mut out, "delta_max", fmt_num(bounds.delta_max));
    let result = match m.delta {
        Some(d) => {
            let r = attack_profit(d, &m.position, &m.pool, &liq)?;
            if !r.feasible {
                anyhow::bail!(Infeasible(format!(
                    "attack of {} reverts on the buy-back (delta_max {})",
                    fmt_num(d),
                    fmt_num(bounds.delta_max)
                )));
            }
            r
        }
        None => {
            let mut search = AttackSearch::default_for(&bounds);
            if let Some(a) = &cfg.attack {
                search.grid_points = a.grid_points;
            }
            let opt = optimize_attack(&m.position, &m.pool, &liq, &search)?;
            line(&mut out, "search_upper", fmt_num(search.upper));
            line(&mut out, "grid_points", opt.grid_points);
            line(&mut out, "evaluations", opt.evaluations);
            line(&mut out, "best_triggered_delta", fmt_num(opt.best_triggered.map_or(f64::NAN, |r| r.delta)));
            line(&mut out, "best_triggered_profit", fmt_num(opt.sup_triggered_profit()));
            opt.best
        }
    };
    line(&mut out, "delta", fmt_num(result.delta));
    line(&mut out, "triggered", result.triggered);
    line(&mut out, "strategy", result.strategy.name());
    line(&mut out, "front_proceeds", fmt_num(result.front_proceeds));
    line(&mut out, "liq_profit", fmt_num(result.liq_profit));
    line(&mut out, "buyback_cost", fmt_num(result.buyback_cost));
    line(&mut out, "total_profit", fmt_num(result.total_profit));
    Ok(out)
}

pub fn fee_threshold(cfg: &ScenarioConfig) -> anyhow::Result<String> {
    let m = cfg.base_market()?;
    let liq = Liquidator::new(m.params).with_convention(cfg.convention);
    let (lo, hi) = cfg
        .attack
        .as_ref()
        .map_or((0.0, 0.01), |a| (a.fee_low, a.fee_high));
    let cf = critical_fee(&m.position, &m.pool, &liq, lo, hi)?;
    let mut out = String::new();
    line(&mut out, "critical_fee_bps", fmt_num(cf.fee * 1e4));
    line(&mut out, "last_profitable_bps", fmt_num(cf.fee_profitable * 1e4));
    let _ = writeln!(out, "fee_bps,sup_profit,best_delta");
    for p in cf.trace.iter() {
        let _ = writeln!(out, "{},{},{}", fmt_num(p.fee * 1e4), fmt_num(p.sup_profit), fmt_num(p.best_delta));
    }
    Ok(out)
}

/// JSON lines, one record per check.
pub fn report_lines(report: &VerificationReport) -> anyhow::Result<String> {
    let mut out = String::new();
    for r in &report.records {
        out.push_str(&serde_json::to_string(r)?);
        out.push('\n');
    }
    Ok(out)
}

pub fn verify(instances: usize, seed: u64, grid_n: usize, splits: usize) -> anyhow::Result<(VerificationReport, String)> {
    let cfg = OracleConfig {
        grid_n,
        tol_rel: 1e-3,
        seed,
    };
    let report = run_verification(&cfg, instances, splits)?;
    let mut summary = String::new();
    for (check, passed, total) in report.summary() {
        let _ = writeln!(summary, "{check:<18} {passed}/{total}");
    }
    Ok((report, summary))
}
