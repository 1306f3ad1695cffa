use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Market and preference rates.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MarketParams {
    /// Riskless rate.
    pub r: f64,
    /// Excess return of the risky asset.
    pub mu: f64,
    /// Volatility.
    pub sigma: f64,
    /// Habit persistence.
    pub rho: f64,
    /// Effective discount rate.
    pub delta: f64,
}

impl Default for MarketParams {
    fn default() -> Self {
        MarketParams { r: 0.02, mu: 0.1, sigma: 0.2, rho: 1.0, delta: 0.3 }
    }
}

impl MarketParams {
    pub fn new(r: f64, mu: f64, sigma: f64, rho: f64, delta: f64) -> Result<Self> {
        let m = MarketParams { r, mu, sigma, rho, delta };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = [self.r, self.mu, self.sigma, self.rho, self.delta].iter().all(|v| v.is_finite());
        if !ok {
            return Err(Error::InvalidParameter("market parameters must be finite".into()));
        }
        let fail = |m: &str| Err(Error::InvalidParameter(m.to_string()));
        if self.r < 0.0 {
            return fail("r must be nonnegative");
        }
        if self.mu <= 0.0 {
            return fail("mu must be positive");
        }
        if self.sigma <= 0.0 {
            return fail("sigma must be positive");
        }
        if self.rho <= 0.0 {
            return fail("rho must be positive");
        }
        if self.delta <= 0.0 {
            return fail("delta must be positive");
        }
        Ok(())
    }

    /// `mu^2 / (2 sigma^2)`.
    pub fn half_sharpe_sq(&self) -> f64 {
        self.mu * self.mu / (2.0 * self.sigma * self.sigma)
    }
}

/// Roots of the Euler-branch characteristic quadratic.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Roots {
    /// Negative root.
    pub lam: f64,
    /// Positive root.
    pub lamp: f64,
    /// `lam / (lam - 1)`.
    pub gamma: f64,
}

/// Solves `a x^2 - (a + r + rho - delta) x - delta = 0`, `a = mu^2 / (2 sigma^2)`.
pub fn solve_roots(m: &MarketParams) -> Roots {
    let a = m.half_sharpe_sq();
    let b = a + m.r + m.rho - m.delta;
    let disc = (b * b + 4.0 * a * m.delta).sqrt();
    let lam = if b > 0.0 { -2.0 * m.delta / (b + disc) } else { (b - disc) / (2.0 * a) };
    let lamp = -m.delta / (a * lam);
    Roots { lam, lamp, gamma: lam / (lam - 1.0) }
}

impl Roots {
    /// Residual of the characteristic quadratic at `x`.
    pub fn quadratic(m: &MarketParams, x: f64) -> f64 {
        let a = m.half_sharpe_sq();
        a * x * x - (a + m.r + m.rho - m.delta) * x - m.delta
    }
}

/// Closed-form benchmark without habit or loss aversion.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MertonBenchmark {
    /// Consumption-to-wealth rate.
    pub gamma_m: f64,
    /// Risky-asset weight.
    pub weight: f64,
}

pub fn merton(m: &MarketParams, p: f64) -> Result<MertonBenchmark> {
    if !(p < 1.0) || p == 0.0 || !p.is_finite() {
        return Err(Error::InvalidParameter(format!("Merton exponent must satisfy p < 1, p != 0; got {p}")));
    }
    let s2 = m.sigma * m.sigma;
    let weight = m.mu / ((1.0 - p) * s2);
    let gamma_m = (m.delta - p * (m.r + m.mu * m.mu / (2.0 * (1.0 - p) * s2))) / (1.0 - p);
    if gamma_m <= 0.0 {
        return Err(Error::IllPosedMerton(gamma_m));
    }
    Ok(MertonBenchmark { gamma_m, weight })
}
