//! Scenario files.
//!
//! TOML, parsed strictly: unknown keys are rejected. A scenario describes
//! one pool, one position and one set of risk parameters, plus an optional
//! sweep over a single variable and an optional attack section.
//!
//! ```toml
//! convention = "execution_value_per_bonus"   # optional
//!
//! [pool]
//! liquidity = 2e9        # or reserve_collateral / reserve_debt
//! price = 2000.0
//! fee = 0.003
//! scale = 1.0            # optional depth multiplier
//!
//! [position]
//! debt = 10000.0
//! collateral = 6.0       # or health_factor = 0.5
//!
//! [risk]
//! haircut = 0.85
//! bonus = 0.05
//! closing_factor = 0.8
//! max_liq_fraction = 0.5
//!
//! [sweep]
//! variable = "price"
//! from = 1000.0
//! to = 2500.0
//! steps = 151
//! spacing = "linear"     # or "log"
//!
//! [attack]               # presence switches sweeps to attack mode
//! delta = 500.0          # optional; optimized when absent
//! fee_low = 0.0
//! fee_high = 0.003
//! ```

use std::fmt;
use std::path::Path;

use anyhow::Context;
use liqsim_core::{LoanPosition, PoolState, RepaymentConvention, RiskParams};
use serde::Deserialize;

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default)]
    pub convention: RepaymentConvention,
    pub pool: PoolSpec,
    pub position: PositionSpec,
    pub risk: RiskParams,
    pub sweep: Option<SweepSpec>,
    pub attack: Option<AttackSpec>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoolSpec {
    pub reserve_collateral: Option<f64>,
    pub reserve_debt: Option<f64>,
    pub liquidity: Option<f64>,
    pub price: Option<f64>,
    #[serde(default)]
    pub fee: f64,
    #[serde(default = "one")]
    pub scale: f64,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PositionSpec {
    pub debt: f64,
    pub collateral: Option<f64>,
    pub health_factor: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepVariable {
    Price,
    Scale,
    Fee,
    Delta,
    HealthFactor,
    Collateral,
    Debt,
    Haircut,
    Bonus,
}

impl SweepVariable {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Price => "price",
            Self::Scale => "scale",
            Self::Fee => "fee",
            Self::Delta => "delta",
            Self::HealthFactor => "health_factor",
            Self::Collateral => "collateral",
            Self::Debt => "debt",
            Self::Haircut => "haircut",
            Self::Bonus => "bonus",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Spacing {
    #[default]
    Linear,
    Log,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub variable: SweepVariable,
    pub from: f64,
    pub to: f64,
    pub steps: usize,
    #[serde(default)]
    pub spacing: Spacing,
}

impl SweepSpec {
    pub fn points(&self) -> Vec<f64> {
        if self.steps == 1 {
            return vec![self.from];
        }
        let last = (self.steps - 1) as f64;
        (0..self.steps)
            .map(|i| {
                let t = i as f64 / last;
                match self.spacing {
                    Spacing::Linear => self.from + (self.to - self.from) * t,
                    Spacing::Log => (self.from.ln() + (self.to.ln() - self.from.ln()) * t).exp(),
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackSpec {
    pub delta: Option<f64>,
    #[serde(default)]
    pub fee_low: f64,
    #[serde(default = "default_fee_high")]
    pub fee_high: f64,
    #[serde(default = "default_grid")]
    pub grid_points: usize,
}

fn default_fee_high() -> f64 {
    0.01
}

fn default_grid() -> usize {
    400
}

/// Every problem found while validating a scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub problems: Vec<String>,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "invalid scenario:")?;
        for p in &self.problems {
            write!(f, "\n  - {p}")?;
        }
        Ok(())
    }
}

impl std::error::Error for ConfigError {}

/// A fully resolved market at one sweep point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Market {
    pub pool: PoolState,
    pub position: LoanPosition,
    pub params: RiskParams,
    /// Attack size when the sweep runs over `delta`.
    pub delta: Option<f64>,
}

fn positive(v: f64) -> bool {
    v.is_finite() && v > 0.0
}

impl ScenarioConfig {
    pub fn from_toml(text: &str) -> anyhow::Result<Self> {
        let cfg: ScenarioConfig = toml::from_str(text).map_err(|e| ConfigError {
            problems: vec![e.to_string()],
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError {
                problems: vec![format!("cannot read {}: {e}", path.display())],
            })
            .with_context(|| format!("loading {}", path.display()))?;
        Self::from_toml(&text)
    }

    pub fn attack_mode(&self) -> bool {
        self.attack.is_some()
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let mut p = vec![];
        let pool = &self.pool;
        match (pool.reserve_collateral, pool.reserve_debt, pool.liquidity, pool.price) {
            (Some(a), Some(b), None, None) => {
                if !positive(a) || !positive(b) {
                    p.push(format!("pool reserves must be positive, got ({a}, {b})"));
                }
            }
            (None, None, Some(k), Some(price)) => {
                if !positive(k) || !positive(price) {
                    p.push(format!("pool liquidity and price must be positive, got ({k}, {price})"));
                }
            }
            _ => p.push("pool needs either reserve_collateral + reserve_debt or liquidity + price".into()),
        }
        if !(pool.fee >= 0.0 && pool.fee < 1.0) {
            p.push(format!("pool.fee must lie in [0, 1), got {}", pool.fee));
        }
        if !positive(pool.scale) {
            p.push(format!("pool.scale must be positive, got {}", pool.scale));
        }
        let pos = &self.position;
        if !(pos.debt.is_finite() && pos.debt >= 0.0) {
            p.push(format!("position.debt must be non-negative, got {}", pos.debt));
        }
        match (pos.collateral, pos.health_factor) {
            (Some(c), None) if !(c.is_finite() && c >= 0.0) => {
                p.push(format!("position.collateral must be non-negative, got {c}"))
            }
            (None, Some(h)) if !(h.is_finite() && h >= 0.0) => {
                p.push(format!("position.health_factor must be non-negative, got {h}"))
            }
            (Some(_), None) | (None, Some(_)) => {}
            _ => p.push("position needs exactly one of collateral or health_factor".into()),
        }
        if let Err(e) = self.risk.validate() {
            p.push(e.to_string());
        }
        if let Some(s) = &self.sweep {
            if s.steps == 0 {
                p.push("sweep.steps must be at least 1".into());
            }
            if !s.from.is_finite() || !s.to.is_finite() {
                p.push("sweep range must be finite".into());
            }
            if s.spacing == Spacing::Log && !(s.from > 0.0 && s.to > 0.0) {
                p.push("log spacing needs a positive range".into());
            }
            if s.variable == SweepVariable::Delta && self.attack.is_none() {
                p.push("sweeping delta needs an [attack] section".into());
            }
            if s.variable == SweepVariable::HealthFactor && pos.health_factor.is_none() {
                p.push("sweeping health_factor needs position.health_factor".into());
            }
            if s.variable == SweepVariable::Collateral && pos.collateral.is_none() {
                p.push("sweeping collateral needs position.collateral".into());
            }
        }
        if let Some(a) = &self.attack {
            if let Some(d) = a.delta {
                if !(d.is_finite() && d >= 0.0) {
                    p.push(format!("attack.delta must be non-negative, got {d}"));
                }
            }
            if !(a.fee_low >= 0.0 && a.fee_high > a.fee_low && a.fee_high < 1.0) {
                p.push(format!("attack fee interval [{}, {}] is not valid", a.fee_low, a.fee_high));
            }
            if a.grid_points < 4 {
                p.push("attack.grid_points must be at least 4".into());
            }
        }
        if p.is_empty() {
            Ok(())
        } else {
            Err(ConfigError { problems: p })
        }
    }

    /// The market with no sweep override.
    pub fn base_market(&self) -> anyhow::Result<Market> {
        self.market(None)
    }

    /// The market at sweep value `value` of the configured axis.
    pub fn market_at(&self, value: f64) -> anyhow::Result<Market> {
        let var = self
            .sweep
            .as_ref()
            .map(|s| s.variable)
            .context("scenario has no [sweep] section")?;
        self.market(Some((var, value)))
    }

    fn market(&self, over: Option<(SweepVariable, f64)>) -> anyhow::Result<Market> {
        let pick = |v: SweepVariable, base: f64| match over {
            Some((var, x)) if var == v => x,
            _ => base,
        };
        let spec = &self.pool;
        let (k, base_price) = match (spec.reserve_collateral, spec.reserve_debt, spec.liquidity, spec.price) {
            (Some(a), Some(b), _, _) => (a * b, b / a),
            (_, _, Some(k), Some(p)) => (k, p),
            _ => unreachable!("validated"),
        };
        let price = pick(SweepVariable::Price, base_price);
        let scale = pick(SweepVariable::Scale, spec.scale);
        let fee = pick(SweepVariable::Fee, spec.fee);
        let pool = PoolState::from_liquidity(k, price, fee)?.scaled(scale)?;

        let mut params = self.risk;
        params.haircut = pick(SweepVariable::Haircut, params.haircut);
        params.bonus = pick(SweepVariable::Bonus, params.bonus);
        params.validate()?;

        let debt = pick(SweepVariable::Debt, self.position.debt);
        let collateral = match (self.position.collateral, self.position.health_factor) {
            (Some(c), _) => pick(SweepVariable::Collateral, c),
            (None, Some(h)) => pick(SweepVariable::HealthFactor, h) * debt / (params.haircut * price),
            _ => unreachable!("validated"),
        };
        let position = LoanPosition::new(collateral, debt)?;
        let delta = match over {
            Some((SweepVariable::Delta, d)) => Some(d),
            _ => self.attack.as_ref().and_then(|a| a.delta),
        };
        Ok(Market {
            pool,
            position,
            params,
            delta,
        })
    }
}
