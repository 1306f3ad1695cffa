//! Primal value function and feedback policies in the wealth-to-habit ratio.

use std::sync::atomic::{AtomicUsize, Ordering};

use serde::{Deserialize, Serialize};

use crate::dual::DualSolution;
use crate::error::{Error, Result};

/// Primal solution obtained by inverting the dual transform.
#[derive(Debug)]
pub struct PrimalSolution {
    pub dual: DualSolution,
    /// Austerity threshold.
    pub x0: f64,
    /// Largest ratio covered by the stored dual grid.
    pub x_max: f64,
    clamps: AtomicUsize,
}

impl Clone for PrimalSolution {
    fn clone(&self) -> Self {
        PrimalSolution {
            dual: self.dual.clone(),
            x0: self.x0,
            x_max: self.x_max,
            clamps: AtomicUsize::new(self.clamp_count()),
        }
    }
}

/// Everything known at one wealth-to-habit ratio.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolicyPoint {
    pub x: f64,
    pub v: f64,
    pub dv: f64,
    pub ddv: f64,
    pub c: f64,
    pub pi: f64,
    /// True when the query fell beyond `x_max`.
    pub clamped: bool,
}

impl PrimalSolution {
    pub fn new(dual: DualSolution) -> Self {
        let x0 = dual.x0();
        let x_max = dual.x_max;
        PrimalSolution { dual, x0, x_max, clamps: AtomicUsize::new(0) }
    }

    /// Number of queries that used the clamped tail beyond `x_max`.
    pub fn clamp_count(&self) -> usize {
        self.clamps.load(Ordering::Relaxed)
    }

    /// Evaluates the value function and policies at `x > 0`.
    pub fn eval(&self, x: f64) -> Result<PolicyPoint> {
        if !(x > 0.0) || !x.is_finite() {
            return Err(Error::InvalidParameter(format!("wealth-to-habit ratio must be positive, got {x}")));
        }
        let d = &self.dual;
        let m = &d.market;
        let env = &d.envelope;
        let s2 = m.sigma * m.sigma;
        if x < self.x0 {
            let lam = d.roots.lam;
            let t = x / self.x0;
            let e = 1.0 / (lam - 1.0);
            let dv = d.y0 * t.powf(e);
            return Ok(PolicyPoint {
                x,
                v: self.x0 * d.y0 * (lam - 1.0) / lam * t.powf(d.roots.gamma) + env.u_at_zero / m.delta,
                dv,
                ddv: dv * e / x,
                c: 0.0,
                pi: m.mu * (1.0 - lam) * x / s2,
                clamped: false,
            });
        }
        let s = d.state_at_x(x);
        if s.clamped {
            self.clamps.fetch_add(1, Ordering::Relaxed);
        }
        let phi = if x == self.x0 { env.phi0 } else { s.phi };
        let p = d.branch_point(&s)?;
        Ok(PolicyPoint {
            x,
            v: p.u + x * s.y,
            dv: s.y,
            ddv: -1.0 / p.ddu,
            c: env.chat(&d.spec, phi)?,
            pi: m.mu / (s2 * m.rho) * (1.0 + m.rho * x) * s.psi,
            clamped: s.clamped,
        })
    }

    /// Consumption and portfolio at `x > 0` without the value.
    pub fn policy(&self, x: f64) -> Result<(f64, f64)> {
        if !(x > 0.0) || !x.is_finite() {
            return Err(Error::InvalidParameter(format!("wealth-to-habit ratio must be positive, got {x}")));
        }
        let d = &self.dual;
        let m = &d.market;
        let s2 = m.sigma * m.sigma;
        if x < self.x0 {
            return Ok((0.0, m.mu * (1.0 - d.roots.lam) * x / s2));
        }
        let s = d.state_at_x(x);
        if s.clamped {
            self.clamps.fetch_add(1, Ordering::Relaxed);
        }
        let phi = if x == self.x0 { d.envelope.phi0 } else { s.phi };
        Ok((d.envelope.chat(&d.spec, phi)?, m.mu / (s2 * m.rho) * (1.0 + m.rho * x) * s.psi))
    }

    pub fn value(&self, x: f64) -> Result<f64> {
        Ok(self.eval(x)?.v)
    }

    pub fn marginal(&self, x: f64) -> Result<f64> {
        Ok(self.eval(x)?.dv)
    }

    pub fn policy_c(&self, x: f64) -> Result<f64> {
        Ok(self.eval(x)?.c)
    }

    pub fn policy_pi(&self, x: f64) -> Result<f64> {
        Ok(self.eval(x)?.pi)
    }

    /// Geometric report grid on `[x0 / 100, min(x_max, 100 x0)]`.
    pub fn report_grid(&self, n: usize) -> Vec<f64> {
        geometric_grid(self.x0 / 100.0, self.x_max.min(100.0 * self.x0), n)
    }
}

/// `n` geometrically spaced points from `a` to `b` inclusive.
pub fn geometric_grid(a: f64, b: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![a];
    }
    let r = (b / a).ln();
    (0..n).map(|i| a * (r * i as f64 / (n - 1) as f64).exp()).collect()
}
