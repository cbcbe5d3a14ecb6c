//! Lending-side state: positions, risk parameters, health factor and the
//! closed-form liquidation bounds.
//!
//! Sizes `x` are measured in collateral units claimed *before* the bonus; a
//! liquidation of size `x` removes `x (1 + bonus)` collateral from the
//! position and sells all of it into the pool.

use serde::{Deserialize, Serialize};

use crate::amm::PoolState;
use crate::error::{invalid, Error, Result};

/// Relative slack accepted when a caller passes a size sitting on a bound.
const BOUND_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LoanPosition {
    pub collateral: f64,
    pub debt: f64,
}

impl LoanPosition {
    pub fn new(collateral: f64, debt: f64) -> Result<Self> {
        let pos = Self { collateral, debt };
        pos.validate()?;
        Ok(pos)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.collateral.is_finite() && self.collateral >= 0.0) {
            return Err(invalid("collateral", format!("must be finite and >= 0, got {}", self.collateral)));
        }
        if !(self.debt.is_finite() && self.debt >= 0.0) {
            return Err(invalid("debt", format!("must be finite and >= 0, got {}", self.debt)));
        }
        Ok(())
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self {
            collateral: self.collateral * s,
            debt: self.debt * s,
        }
    }
}

/// Protocol risk parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RiskParams {
    /// Liquidation threshold θ applied to the collateral value.
    pub haircut: f64,
    /// Liquidation bonus ℓ.
    pub bonus: f64,
    /// Health factor below which the whole debt may be liquidated.
    pub closing_factor: f64,
    /// Fraction κ of the debt repayable in one liquidation above the closing factor.
    pub max_liq_fraction: f64,
}

impl RiskParams {
    pub fn new(haircut: f64, bonus: f64, closing_factor: f64, max_liq_fraction: f64) -> Result<Self> {
        let p = Self {
            haircut,
            bonus,
            closing_factor,
            max_liq_fraction,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let unit = |name: &'static str, v: f64| {
            if v > 0.0 && v <= 1.0 {
                Ok(())
            } else {
                Err(invalid(name, format!("must lie in (0, 1], got {v}")))
            }
        };
        unit("haircut", self.haircut)?;
        unit("closing_factor", self.closing_factor)?;
        unit("max_liq_fraction", self.max_liq_fraction)?;
        if !(self.bonus.is_finite() && self.bonus >= 0.0) {
            return Err(invalid("bonus", format!("must be finite and >= 0, got {}", self.bonus)));
        }
        Ok(())
    }
}

/// `(1 - γ)(1 + ℓ)`: debt-asset proceeds per unit of `x` at the margin,
/// relative to the spot price.
pub fn gross_multiplier(fee: f64, bonus: f64) -> f64 {
    (1.0 - fee) * (1.0 + bonus)
}

/// Liquidation cannot pay: `γ ≥ ℓ/(1+ℓ)`, equivalently `g ≤ 1`.
///
/// Both forms are tested so the boundary fee is closed whichever way
/// `g` rounds.
pub fn fee_blocks_liquidation(fee: f64, bonus: f64) -> bool {
    fee >= bonus / (1.0 + bonus) || gross_multiplier(fee, bonus) <= 1.0
}

/// How much debt a liquidation of size `x` retires.
///
/// The three variants differ only in the debt path; liquidator profit is
/// always the swap proceeds minus `B x / A` at the pre-trade price.
///
/// For a single (atomic) liquidation from reserves `(A, B)`, with
/// `g = (1-γ)(1+ℓ)`, the debt repaid is
///
/// * `SpotPrice`: `B x / A`
/// * `ExecutionValue`: `B x / (A + g x)`
/// * `ExecutionValuePerBonus`: `(1-γ) B x / (A + g x)`, i.e. swap proceeds over `1 + ℓ`
///
/// Along a path of marginal liquidations the first two both integrate to
/// `B x / (A + g x)`; the last integrates to `(1-γ) B x / (A + g x)`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RepaymentConvention {
    SpotPrice,
    ExecutionValue,
    #[default]
    ExecutionValuePerBonus,
}

impl RepaymentConvention {
    pub const ALL: [RepaymentConvention; 3] = [
        RepaymentConvention::SpotPrice,
        RepaymentConvention::ExecutionValue,
        RepaymentConvention::ExecutionValuePerBonus,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Self::SpotPrice => "spot_price",
            Self::ExecutionValue => "execution_value",
            Self::ExecutionValuePerBonus => "execution_value_per_bonus",
        }
    }

    /// Scale `ρ` of the cumulative marginal repayment `ρ B x / (A + g x)`.
    pub fn marginal_rate(&self, fee: f64) -> f64 {
        match self {
            Self::SpotPrice | Self::ExecutionValue => 1.0,
            Self::ExecutionValuePerBonus => 1.0 - fee,
        }
    }

    /// Debt repaid by one liquidation of size `x` from `pool`.
    pub fn atomic_repayment(&self, pool: &PoolState, x: f64, bonus: f64) -> f64 {
        let (a, b) = (pool.reserve_collateral(), pool.reserve_debt());
        let g = gross_multiplier(pool.fee(), bonus);
        match self {
            Self::SpotPrice => b * x / a,
            Self::ExecutionValue => b * x / (a + g * x),
            Self::ExecutionValuePerBonus => (1.0 - pool.fee()) * b * x / (a + g * x),
        }
    }

    /// Debt repaid after marginally liquidating a total of `x` from `pool`.
    pub fn marginal_repayment(&self, pool: &PoolState, x: f64, bonus: f64) -> f64 {
        let (a, b) = (pool.reserve_collateral(), pool.reserve_debt());
        let g = gross_multiplier(pool.fee(), bonus);
        self.marginal_rate(pool.fee()) * b * x / (a + g * x)
    }

    /// Largest single liquidation that repays no more than `debt_cap`.
    pub fn atomic_debt_bound(&self, debt_cap: f64, pool: &PoolState, bonus: f64) -> f64 {
        if debt_cap <= 0.0 {
            return 0.0;
        }
        let (a, b) = (pool.reserve_collateral(), pool.reserve_debt());
        let g = gross_multiplier(pool.fee(), bonus);
        // ρ B x = cap (A + σ g x)
        let (rho, sigma) = match self {
            Self::SpotPrice => (1.0, 0.0),
            Self::ExecutionValue => (1.0, 1.0),
            Self::ExecutionValuePerBonus => (1.0 - pool.fee(), 1.0),
        };
        ratio_or_infinity(debt_cap * a, rho * b - sigma * debt_cap * g)
    }

    /// Total marginal liquidation size that retires exactly `debt_cap`.
    pub fn marginal_debt_bound(&self, debt_cap: f64, pool: &PoolState, bonus: f64) -> f64 {
        if debt_cap <= 0.0 {
            return 0.0;
        }
        let (a, b) = (pool.reserve_collateral(), pool.reserve_debt());
        let g = gross_multiplier(pool.fee(), bonus);
        let rho = self.marginal_rate(pool.fee());
        ratio_or_infinity(debt_cap * a, rho * b - debt_cap * g)
    }
}

fn ratio_or_infinity(num: f64, den: f64) -> f64 {
    if den > 0.0 {
        num / den
    } else {
        f64::INFINITY
    }
}

/// `θ B c / (A b)`; `+∞` for a debt-free position.
pub fn health_factor(pos: &LoanPosition, pool: &PoolState, haircut: f64) -> f64 {
    if pos.debt == 0.0 {
        return f64::INFINITY;
    }
    haircut * pool.spot_price() * pos.collateral / pos.debt
}

/// Collateral-exhaustion bound `c / (1 + ℓ)`.
pub fn bound_collateral(pos: &LoanPosition, bonus: f64) -> f64 {
    pos.collateral / (1.0 + bonus)
}

/// κ-capped debt bound `κ b A / (B - κ b (1-γ)(1+ℓ))`, `+∞` when the
/// denominator is not positive.
///
/// This is the cap for the `ExecutionValue` convention (and for any marginal
/// path under `SpotPrice`); use [`RepaymentConvention::atomic_debt_bound`]
/// for the others.
pub fn bound_debt(pos: &LoanPosition, pool: &PoolState, kappa: f64, bonus: f64) -> f64 {
    RepaymentConvention::ExecutionValue.atomic_debt_bound(kappa * pos.debt, pool, bonus)
}

/// Health factor after marginally liquidating `x` from `(pos, pool)`, with
/// `debt` standing in for the position's debt in the denominator.
///
/// `θ (c - x(1+ℓ)) A B / (A + g x)²  /  (debt - ρ B x / (A + g x))`
pub fn marginal_path_health_factor(
    pos: &LoanPosition,
    pool: &PoolState,
    params: &RiskParams,
    debt: f64,
    x: f64,
    convention: RepaymentConvention,
) -> f64 {
    let (a, b) = (pool.reserve_collateral(), pool.reserve_debt());
    let g = gross_multiplier(pool.fee(), params.bonus);
    let ax = a + g * x;
    let price = a * b / (ax * ax);
    let rho = convention.marginal_rate(pool.fee());
    let remaining = debt - rho * b * x / ax;
    params.haircut * (pos.collateral - x * (1.0 + params.bonus)) * price / remaining
}

/// Which formula produced the closing-factor bound.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RootBranch {
    Quadratic,
    /// Leading coefficient vanished; the linear equation was solved instead.
    Linear,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClosingBound {
    pub x_cf: f64,
    pub lambda: f64,
    pub gamma: f64,
    pub discriminant: f64,
    pub branch: RootBranch,
}

/// Marginal liquidation size at which the health factor first reaches
/// `cf_target`.
///
/// Clearing denominators in `marginal_path_health_factor(x) = CF` gives
///
/// `CF·Γ x² − Λ x − (CF·d·A² − θ B A c) = 0`
///
/// with `g = (1-γ)(1+ℓ)`, `d` the debt argument and `ρ` the convention's
/// marginal rate:
///
/// * `Λ = CF (2 A d g − ρ B A) + θ B A (1+ℓ)`
/// * `Γ = ρ B g − d g²`
/// * `D = Λ² + 4 CF Γ (CF d A² − θ B A c)`
///
/// Only roots inside `[0, min(x_c, x_b)]` are admissible (outside that range
/// the collateral or the remaining debt is negative). The smallest admissible
/// root is returned, or `+∞` if there is none.
pub fn bound_closing(
    pos: &LoanPosition,
    pool: &PoolState,
    params: &RiskParams,
    cf_target: f64,
    debt: f64,
    convention: RepaymentConvention,
) -> Result<ClosingBound> {
    let hf = health_factor(&LoanPosition { collateral: pos.collateral, debt }, pool, params.haircut);
    if hf > cf_target {
        return Err(Error::NotLiquidatable {
            health_factor: hf,
            target: cf_target,
        });
    }
    let (a, b) = (pool.reserve_collateral(), pool.reserve_debt());
    let (theta, bonus, c) = (params.haircut, params.bonus, pos.collateral);
    let g = gross_multiplier(pool.fee(), bonus);
    let rho = convention.marginal_rate(pool.fee());

    let lambda = cf_target * (2.0 * a * debt * g - rho * b * a) + theta * b * a * (1.0 + bonus);
    let gamma = rho * b * g - debt * g * g;
    let constant = cf_target * debt * a * a - theta * b * a * c;
    let discriminant = lambda * lambda + 4.0 * cf_target * gamma * constant;

    let limit = bound_collateral(pos, bonus).min(convention.marginal_debt_bound(debt, pool, bonus));
    // poly(x) = qa x² + qb x + qc
    let (qa, qb, qc) = (cf_target * gamma, -lambda, -constant);
    let poly = |x: f64| (qa * x + qb) * x + qc;
    let dpoly = |x: f64| 2.0 * qa * x + qb;

    let scale = (cf_target * b * g).abs() + (cf_target * debt * g * g).abs();
    let (mut roots, branch) = if gamma.abs() <= 1e-13 * scale {
        if lambda == 0.0 {
            (vec![], RootBranch::Linear)
        } else {
            (vec![-qc / qb], RootBranch::Linear)
        }
    } else if discriminant < 0.0 {
        (vec![], RootBranch::Quadratic)
    } else {
        // Cancellation-free pair of roots.
        let sq = discriminant.sqrt();
        let q = -0.5 * (qb + qb.signum() * sq);
        let mut r = vec![q / qa];
        if q != 0.0 {
            r.push(qc / q);
        }
        (r, RootBranch::Quadratic)
    };
    for r in roots.iter_mut() {
        // Newton polish against the unscaled polynomial.
        for _ in 0..2 {
            let d = dpoly(*r);
            if d != 0.0 && d.is_finite() {
                *r -= poly(*r) / d;
            }
        }
    }
    let tol = BOUND_SLACK * limit.min(bound_collateral(pos, bonus)).max(f64::MIN_POSITIVE);
    let x_cf = roots
        .into_iter()
        .filter(|r| r.is_finite() && *r >= -tol && *r <= limit + tol)
        .map(|r| r.max(0.0))
        .fold(f64::INFINITY, f64::min);
    Ok(ClosingBound {
        x_cf,
        lambda,
        gamma,
        discriminant,
        branch,
    })
}

/// All bounds for one state under the threshold pair `(cf_target, kappa)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundSet {
    /// Collateral exhaustion.
    pub x_c: f64,
    /// Full-debt bound along the marginal path.
    pub x_b: f64,
    /// κ-capped debt bound for a single liquidation from this state.
    pub x_kb: f64,
    /// Closing-factor bound; `+∞` when unreachable.
    pub x_cf: f64,
    pub lambda: f64,
    pub gamma: f64,
    pub discriminant: f64,
    pub branch: RootBranch,
}

impl BoundSet {
    pub fn compute(
        pos: &LoanPosition,
        pool: &PoolState,
        params: &RiskParams,
        cf_target: f64,
        kappa: f64,
        convention: RepaymentConvention,
    ) -> Result<Self> {
        let closing = bound_closing(pos, pool, params, cf_target, pos.debt, convention)?;
        Ok(Self {
            x_c: bound_collateral(pos, params.bonus),
            x_b: convention.marginal_debt_bound(pos.debt, pool, params.bonus),
            x_kb: convention.atomic_debt_bound(kappa * pos.debt, pool, params.bonus),
            x_cf: closing.x_cf,
            lambda: closing.lambda,
            gamma: closing.gamma,
            discriminant: closing.discriminant,
            branch: closing.branch,
        })
    }
}

/// How a liquidation of size `x` is executed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Execution {
    /// One swap of `x (1 + ℓ)`.
    Atomic,
    /// A continuum of infinitesimal liquidations totalling `x`.
    Marginal,
}

/// State after liquidating `x`: collateral drops by `x (1 + ℓ)`, the debt by
/// the convention's repayment and the pool absorbs the sale.
///
/// `x` must lie in `[0, min(x_c, x_b)]` where `x_b` is the full-debt bound
/// for the chosen execution.
pub fn post_liquidation_state(
    pos: &LoanPosition,
    pool: &PoolState,
    x: f64,
    params: &RiskParams,
    convention: RepaymentConvention,
    execution: Execution,
) -> Result<(LoanPosition, PoolState)> {
    let x_c = bound_collateral(pos, params.bonus);
    let x_b = match execution {
        Execution::Atomic => convention.atomic_debt_bound(pos.debt, pool, params.bonus),
        Execution::Marginal => convention.marginal_debt_bound(pos.debt, pool, params.bonus),
    };
    let max = x_c.min(x_b);
    if !(x >= 0.0) || x > max * (1.0 + BOUND_SLACK) {
        return Err(Error::SizeOutOfRange { size: x, max });
    }
    if x == 0.0 {
        return Ok((*pos, *pool));
    }
    let x = x.min(max);
    let collateral = if x >= x_c {
        0.0
    } else {
        (pos.collateral - x * (1.0 + params.bonus)).max(0.0)
    };
    let repaid = match execution {
        Execution::Atomic => convention.atomic_repayment(pool, x, params.bonus),
        Execution::Marginal => convention.marginal_repayment(pool, x, params.bonus),
    };
    let debt = if x >= x_b { 0.0 } else { (pos.debt - repaid).max(0.0) };
    let (_, next_pool) = pool.sell_collateral(x * (1.0 + params.bonus))?;
    Ok((LoanPosition { collateral, debt }, next_pool))
}
