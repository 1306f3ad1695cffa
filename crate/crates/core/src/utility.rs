//! S-shaped utility families and their concave envelope.
//!
//! A utility is described by a reference level `alpha`, a gain branch
//! `U+` on `[0, inf)` and a loss-magnitude branch `U-` on `[0, alpha]`:
//! `U(c) = U+(c - alpha)` above the reference and `-U-(alpha - c)` below.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{bisect, invert_decreasing};

/// Parameters of a built-in utility family.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum Family {
    /// `U+(x) = x^p`, `U-(x) = kappa x^q`.
    Power { alpha: f64, p: f64, q: f64, kappa: f64 },
    /// `U+(x) = ((alpha + x)^p - alpha^p) / p` for `p < 0`, `U-(x) = kappa x^q`.
    ShiftedPower { alpha: f64, p: f64, q: f64, kappa: f64 },
    /// `U+(x) = 1 - exp(-p x)`, `U-(x) = kappa (1 - exp(-q x))`.
    Exponential { alpha: f64, p: f64, q: f64, kappa: f64 },
    /// Symmetric asymptotic hyperbolic absolute risk aversion on both branches.
    Sahara { alpha: f64, gamma1: f64, beta1: f64, gamma2: f64, beta2: f64 },
    /// Three-piece utility approximating a hard consumption floor at `alpha`.
    Aby22 { alpha: f64, kappa: f64, epsilon: f64 },
}

impl Family {
    pub fn alpha(&self) -> f64 {
        match *self {
            Family::Power { alpha, .. }
            | Family::ShiftedPower { alpha, .. }
            | Family::Exponential { alpha, .. }
            | Family::Sahara { alpha, .. }
            | Family::Aby22 { alpha, .. } => alpha,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Family::Power { .. } => "power",
            Family::ShiftedPower { .. } => "shifted_power",
            Family::Exponential { .. } => "exponential",
            Family::Sahara { .. } => "sahara",
            Family::Aby22 { .. } => "aby22",
        }
    }

    /// Validates parameters and builds the utility.
    pub fn build(&self) -> Result<UtilitySpec> {
        match *self {
            Family::Power { alpha, p, q, kappa } => make_power(alpha, p, q, kappa),
            Family::ShiftedPower { alpha, p, q, kappa } => make_shifted_power(alpha, p, q, kappa),
            Family::Exponential { alpha, p, q, kappa } => make_exponential(alpha, p, q, kappa),
            Family::Sahara { alpha, gamma1, beta1, gamma2, beta2 } => {
                make_sahara(alpha, gamma1, beta1, gamma2, beta2)
            }
            Family::Aby22 { alpha, kappa, epsilon } => make_aby22_approx(alpha, kappa, epsilon),
        }
    }
}

impl Default for Family {
    fn default() -> Self {
        Family::Power { alpha: 0.75, p: 0.2, q: 0.5, kappa: 2.0 }
    }
}

/// Maximum number of geometric bracket expansions for numeric inversion.
pub const MAX_BRACKET_DOUBLINGS: usize = 200;

#[derive(Clone, Debug, PartialEq)]
enum Kind {
    Power { p: f64, q: f64, kappa: f64 },
    ShiftedPower { p: f64, q: f64, kappa: f64 },
    Exponential { p: f64, q: f64, kappa: f64 },
    Sahara { g1: f64, b1: f64, g2: f64, b2: f64, shift1: f64, shift2: f64 },
    Aby22 { kappa: f64, eps: f64, a: f64, amp: f64 },
}

/// An S-shaped utility with validated parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct UtilitySpec {
    alpha: f64,
    kind: Kind,
    family: Family,
}

fn sahara_raw(gamma: f64, beta: f64, x: f64) -> f64 {
    let s = (x * x + beta * beta).sqrt();
    if (gamma - 1.0).abs() < 1e-12 {
        0.5 * (x + s).ln() + x / (2.0 * (x + s))
    } else {
        (x + gamma * s) * (x + s).powf(-gamma) / (1.0 - gamma * gamma)
    }
}

fn sahara_prime(gamma: f64, beta: f64, x: f64) -> f64 {
    (x + (x * x + beta * beta).sqrt()).powf(-gamma)
}

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<()> {
    if cond {
        Ok(())
    } else {
        Err(Error::InvalidParameter(msg()))
    }
}

fn check_finite(vals: &[f64]) -> Result<()> {
    check(vals.iter().all(|v| v.is_finite()), || "parameters must be finite".into())
}

/// Power S-shaped utility `x^p` over gains and `kappa x^q` over losses.
pub fn make_power(alpha: f64, p: f64, q: f64, kappa: f64) -> Result<UtilitySpec> {
    check_finite(&[alpha, p, q, kappa])?;
    check(alpha > 0.0, || format!("alpha must be positive, got {alpha}"))?;
    check(p > 0.0 && p < 1.0, || format!("p must lie in (0, 1), got {p}"))?;
    check(q > 0.0 && q <= 1.0, || format!("q must lie in (0, 1], got {q}"))?;
    check(kappa >= 1.0, || format!("kappa must be at least 1, got {kappa}"))?;
    Ok(UtilitySpec {
        alpha,
        kind: Kind::Power { p, q, kappa },
        family: Family::Power { alpha, p, q, kappa },
    })
}

/// Power gain branch with negative exponent, shifted so the marginal at the
/// reference is finite: `U+(x) = ((alpha + x)^p - alpha^p) / p`.
pub fn make_shifted_power(alpha: f64, p: f64, q: f64, kappa: f64) -> Result<UtilitySpec> {
    check_finite(&[alpha, p, q, kappa])?;
    check(alpha > 0.0, || format!("alpha must be positive, got {alpha}"))?;
    check(p < 0.0, || format!("p must be negative, got {p}"))?;
    check(q > 0.0 && q <= 1.0, || format!("q must lie in (0, 1], got {q}"))?;
    check(kappa > 0.0, || format!("kappa must be positive, got {kappa}"))?;
    let spec = UtilitySpec {
        alpha,
        kind: Kind::ShiftedPower { p, q, kappa },
        family: Family::ShiftedPower { alpha, p, q, kappa },
    };
    spec.check_moderate_loss_aversion()?;
    Ok(spec)
}

/// Exponential S-shaped utility: `1 - exp(-p x)` over gains and
/// `kappa (1 - exp(-q x))` loss magnitude.
pub fn make_exponential(alpha: f64, p: f64, q: f64, kappa: f64) -> Result<UtilitySpec> {
    check_finite(&[alpha, p, q, kappa])?;
    check(alpha > 0.0, || format!("alpha must be positive, got {alpha}"))?;
    check(p > 0.0, || format!("p must be positive, got {p}"))?;
    check(q >= p, || format!("q must be at least p, got q = {q}, p = {p}"))?;
    check(kappa >= 1.0, || format!("kappa must be at least 1, got {kappa}"))?;
    let spec = UtilitySpec {
        alpha,
        kind: Kind::Exponential { p, q, kappa },
        family: Family::Exponential { alpha, p, q, kappa },
    };
    spec.check_moderate_loss_aversion()?;
    Ok(spec)
}

/// SAHARA S-shaped utility, each branch shifted to vanish at zero.
pub fn make_sahara(alpha: f64, gamma1: f64, beta1: f64, gamma2: f64, beta2: f64) -> Result<UtilitySpec> {
    check_finite(&[alpha, gamma1, beta1, gamma2, beta2])?;
    check(alpha > 0.0, || format!("alpha must be positive, got {alpha}"))?;
    check(gamma1 > 0.0 && gamma2 > 0.0, || "gamma1 and gamma2 must be positive".into())?;
    check(beta1 > 0.0 && beta2 > 0.0, || "beta1 and beta2 must be positive".into())?;
    let spec = UtilitySpec {
        alpha,
        kind: Kind::Sahara {
            g1: gamma1,
            b1: beta1,
            g2: gamma2,
            b2: beta2,
            shift1: sahara_raw(gamma1, beta1, 0.0),
            shift2: sahara_raw(gamma2, beta2, 0.0),
        },
        family: Family::Sahara { alpha, gamma1, beta1, gamma2, beta2 },
    };
    spec.check_moderate_loss_aversion()?;
    Ok(spec)
}

/// Three-piece utility: a power segment on `[alpha, alpha + epsilon)` glued to
/// `1/alpha - 1/c` above, with loss magnitude `2 kappa x^0.5`.
pub fn make_aby22_approx(alpha: f64, kappa: f64, epsilon: f64) -> Result<UtilitySpec> {
    check_finite(&[alpha, kappa, epsilon])?;
    check(alpha > 0.0, || format!("alpha must be positive, got {alpha}"))?;
    check(kappa > 0.0, || format!("kappa must be positive, got {kappa}"))?;
    check(epsilon > 0.0, || format!("epsilon must be positive, got {epsilon}"))?;
    let a = alpha / (alpha + epsilon);
    let amp = epsilon.powf(epsilon / (alpha + epsilon)) / (alpha * (alpha + epsilon));
    Ok(UtilitySpec {
        alpha,
        kind: Kind::Aby22 { kappa, eps: epsilon, a, amp },
        family: Family::Aby22 { alpha, kappa, epsilon },
    })
}

impl UtilitySpec {
    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn family(&self) -> &Family {
        &self.family
    }

    /// Gain branch `U+(x)`, `x >= 0`.
    pub fn gain(&self, x: f64) -> f64 {
        match self.kind {
            Kind::Power { p, .. } => x.powf(p),
            Kind::ShiftedPower { p, .. } => {
                let a = self.alpha;
                a.powf(p) * ((1.0 + x / a).powf(p) - 1.0) / p
            }
            Kind::Exponential { p, .. } => -(-p * x).exp_m1(),
            Kind::Sahara { g1, b1, shift1, .. } => sahara_raw(g1, b1, x) - shift1,
            Kind::Aby22 { eps, a, amp, .. } => {
                if x < eps {
                    amp * x.powf(a)
                } else {
                    x / (self.alpha * (self.alpha + x))
                }
            }
        }
    }

    /// Gain marginal `U+'(x)`.
    pub fn gain_prime(&self, x: f64) -> f64 {
        match self.kind {
            Kind::Power { p, .. } => p * x.powf(p - 1.0),
            Kind::ShiftedPower { p, .. } => (self.alpha + x).powf(p - 1.0),
            Kind::Exponential { p, .. } => p * (-p * x).exp(),
            Kind::Sahara { g1, b1, .. } => sahara_prime(g1, b1, x),
            Kind::Aby22 { eps, a, amp, .. } => {
                if x < eps {
                    amp * a * x.powf(a - 1.0)
                } else {
                    (self.alpha + x).powi(-2)
                }
            }
        }
    }

    /// `U+'(0+)`, possibly infinite.
    pub fn gain_prime_sup(&self) -> f64 {
        match self.kind {
            Kind::Power { .. } | Kind::Aby22 { .. } => f64::INFINITY,
            Kind::ShiftedPower { p, .. } => self.alpha.powf(p - 1.0),
            Kind::Exponential { p, .. } => p,
            Kind::Sahara { g1, b1, .. } => b1.powf(-g1),
        }
    }

    /// Inverse of the gain marginal, `(U+')^{-1}(phi)`.
    pub fn gain_inv(&self, phi: f64) -> Result<f64> {
        if !(phi > 0.0) || !phi.is_finite() {
            return Err(Error::InvalidParameter(format!("marginal must be positive and finite, got {phi}")));
        }
        let sup = self.gain_prime_sup();
        if phi > sup {
            return Err(Error::MarginalDomain { phi, sup });
        }
        Ok(match self.kind {
            Kind::Power { p, .. } => (phi / p).powf(1.0 / (p - 1.0)),
            Kind::ShiftedPower { p, .. } => (phi.powf(1.0 / (p - 1.0)) - self.alpha).max(0.0),
            Kind::Exponential { p, .. } => (-(phi / p).ln() / p).max(0.0),
            Kind::Sahara { .. } => return self.gain_inv_numeric(phi),
            Kind::Aby22 { eps, a, amp, .. } => {
                if phi >= (self.alpha + eps).powi(-2) {
                    (phi / (amp * a)).powf(1.0 / (a - 1.0)).min(eps)
                } else {
                    (phi.powf(-0.5) - self.alpha).max(eps)
                }
            }
        })
    }

    /// Numeric inverse of the gain marginal by bracketed root finding.
    pub fn gain_inv_numeric(&self, phi: f64) -> Result<f64> {
        let sup = self.gain_prime_sup();
        if phi > sup {
            return Err(Error::MarginalDomain { phi, sup });
        }
        invert_decreasing(|x| self.gain_prime(x), phi, sup.is_finite(), MAX_BRACKET_DOUBLINGS)
    }

    /// Loss magnitude `U-(x)`, `0 <= x <= alpha`.
    pub fn loss(&self, x: f64) -> f64 {
        match self.kind {
            Kind::Power { q, kappa, .. } | Kind::ShiftedPower { q, kappa, .. } => kappa * x.powf(q),
            Kind::Exponential { q, kappa, .. } => -kappa * (-q * x).exp_m1(),
            Kind::Sahara { g2, b2, shift2, .. } => sahara_raw(g2, b2, x) - shift2,
            Kind::Aby22 { kappa, .. } => 2.0 * kappa * x.sqrt(),
        }
    }

    /// Loss marginal `U-'(x)`.
    pub fn loss_prime(&self, x: f64) -> f64 {
        match self.kind {
            Kind::Power { q, kappa, .. } | Kind::ShiftedPower { q, kappa, .. } => kappa * q * x.powf(q - 1.0),
            Kind::Exponential { q, kappa, .. } => kappa * q * (-q * x).exp(),
            Kind::Sahara { g2, b2, .. } => sahara_prime(g2, b2, x),
            Kind::Aby22 { kappa, .. } => kappa / x.sqrt(),
        }
    }

    /// The S-shaped utility `U(c)`, `c >= 0`.
    pub fn u(&self, c: f64) -> f64 {
        if c > self.alpha {
            self.gain(c - self.alpha)
        } else {
            -self.loss(self.alpha - c)
        }
    }

    /// `U(0) = -U-(alpha)`.
    pub fn u_at_zero(&self) -> f64 {
        -self.loss(self.alpha)
    }

    fn check_moderate_loss_aversion(&self) -> Result<()> {
        let lhs = self.loss(self.alpha);
        let rhs = self.alpha * self.gain_prime_sup();
        if lhs <= rhs * (1.0 + 1e-14) {
            Ok(())
        } else {
            Err(Error::AssumptionViolated(format!(
                "loss at zero consumption {lhs} exceeds alpha times the gain marginal at the reference {rhs}"
            )))
        }
    }
}

/// Constants of the concave envelope.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Envelope {
    /// Tangency point of the linear segment.
    pub c0: f64,
    /// Slope of the linear segment, `U+'(c0 - alpha)`.
    pub phi0: f64,
    /// `U(0)`.
    pub u_at_zero: f64,
    /// `c0 - alpha`, kept separately since it can be far below the resolution of `c0`.
    pub excess: f64,
}

/// Initial offset above `alpha` for the bracket search.
const BRACKET_OFFSET: f64 = 1e-3;

/// Computes the concave envelope constants of an S-shaped utility.
pub fn concavify(spec: &UtilitySpec) -> Result<Envelope> {
    let alpha = spec.alpha;
    let loss_alpha = spec.loss(alpha);
    let g_alpha = alpha * spec.gain_prime_sup() - loss_alpha;
    if g_alpha < -1e-14 * loss_alpha.abs().max(1.0) {
        return Err(Error::AssumptionViolated(format!(
            "envelope equation is negative at the reference: g(alpha) = {g_alpha}"
        )));
    }
    if g_alpha <= 1e-14 * loss_alpha.abs().max(1.0) {
        return Ok(Envelope { c0: alpha, phi0: spec.gain_prime(0.0), u_at_zero: -loss_alpha, excess: 0.0 });
    }
    // Tangency in the excess x = c - alpha, bisected geometrically.
    let g = |x: f64| (alpha + x) * spec.gain_prime(x) - spec.gain(x) - loss_alpha;
    let start = BRACKET_OFFSET * alpha;
    let (mut lo, mut hi) = (start, start);
    if g(start) > 0.0 {
        while g(hi) > 0.0 {
            lo = hi;
            hi *= 2.0;
            if hi > 1e6 * alpha {
                return Err(Error::Bracket(format!("envelope tangency not found below c = {}", alpha + hi)));
            }
        }
    } else {
        if g(f64::MIN_POSITIVE) <= 0.0 {
            // Tangency closer to the reference than any normal float.
            return Ok(Envelope { c0: alpha, phi0: loss_alpha / alpha, u_at_zero: -loss_alpha, excess: 0.0 });
        }
        while g(lo) <= 0.0 {
            hi = lo;
            lo *= 0.5;
        }
    }
    let t = bisect(|t| g(t.exp()), lo.ln(), hi.ln(), 1e-15)?;
    let excess = t.exp();
    Ok(Envelope { c0: alpha + excess, phi0: spec.gain_prime(excess), u_at_zero: -loss_alpha, excess })
}

impl Envelope {
    /// Concave envelope value at consumption `c >= 0`.
    pub fn value(&self, spec: &UtilitySpec, c: f64) -> f64 {
        if c <= self.c0 {
            self.u_at_zero + self.phi0 * c
        } else {
            spec.u(c)
        }
    }

    /// Largest maximizer of `U~(c) - phi c`.
    pub fn chat(&self, spec: &UtilitySpec, phi: f64) -> Result<f64> {
        if phi > self.phi0 {
            Ok(0.0)
        } else if phi == self.phi0 {
            Ok(self.c0)
        } else {
            Ok(spec.alpha + spec.gain_inv(phi)?)
        }
    }

    /// `G(phi) = U+(I(phi)) - phi (alpha + I(phi))` for `phi <= phi0`.
    pub fn g_fn(&self, spec: &UtilitySpec, phi: f64) -> Result<f64> {
        let i = spec.gain_inv(phi)?;
        Ok(spec.gain(i) - phi * (spec.alpha + i))
    }

    /// `sup_{c >= 0} { U~(c) - phi c }`.
    pub fn conjugate(&self, spec: &UtilitySpec, phi: f64) -> Result<f64> {
        if phi >= self.phi0 {
            Ok(self.u_at_zero)
        } else {
            self.g_fn(spec, phi)
        }
    }

    /// Residual of the tangency equation at `c0`.
    pub fn residual(&self, spec: &UtilitySpec) -> f64 {
        let a = spec.alpha;
        (a + self.excess) * self.phi0 - spec.gain(self.excess) - spec.loss(a)
    }
}

/// Free-function form of [`Envelope::value`].
pub fn envelope_value(spec: &UtilitySpec, env: &Envelope, c: f64) -> f64 {
    env.value(spec, c)
}

/// Free-function form of [`Envelope::chat`].
pub fn chat(spec: &UtilitySpec, env: &Envelope, phi: f64) -> Result<f64> {
    env.chat(spec, phi)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn defaults() -> UtilitySpec {
        make_power(0.75, 0.2, 0.5, 2.0).unwrap()
    }

    #[test]
    fn power_defaults_loss_at_zero() {
        let s = defaults();
        assert_relative_eq!(s.loss(0.75), 2.0 * 0.75f64.sqrt(), max_relative = 1e-15);
        assert_eq!(s.gain(0.0), 0.0);
        assert_eq!(s.loss(0.0), 0.0);
        assert!((s.gain_inv(s.gain_prime(1.0)).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn power_rejects_outside_regime() {
        assert!(make_power(0.75, 1.0, 0.5, 2.0).is_err());
        assert!(make_power(0.75, 0.2, 1.5, 2.0).is_err());
        assert!(make_power(0.75, 0.2, 0.5, 0.5).is_err());
        assert!(make_power(0.0, 0.2, 0.5, 2.0).is_err());
    }

    #[test]
    fn exponential_marginal_domain() {
        let s = make_exponential(0.5, 1.0, 1.0, 1.0).unwrap();
        assert_eq!(s.gain_inv(1.0).unwrap(), 0.0);
        assert!(matches!(s.gain_inv(1.0 + 1e-9), Err(Error::MarginalDomain { .. })));
        assert_relative_eq!(s.gain_prime(0.0), s.loss_prime(0.0));
    }

    #[test]
    fn exponential_rejects_excess_loss() {
        assert!(make_exponential(0.5, 0.1, 1.0, 5.0).is_err());
    }

    #[test]
    fn sahara_risk_aversion_at_zero() {
        let s = make_sahara(2.0, 1.0, 1.0, 0.5, 0.1).unwrap();
        let h = 1e-5;
        let d2 = (s.gain_prime(h) - s.gain_prime(0.0)) / h;
        let ara = -d2 / s.gain_prime(0.0);
        assert!((ara - 1.0).abs() < 1e-4, "ara = {ara}");
    }

    #[test]
    fn sahara_marginal_matches_finite_difference() {
        let s = make_sahara(0.75, 0.5, 0.1, 0.5, 0.1).unwrap();
        let h = 1e-5;
        let fd = (s.gain(1.0 + h) - s.gain(1.0 - h)) / (2.0 * h);
        assert_relative_eq!(fd, s.gain_prime(1.0), max_relative = 1e-9);
        let fdl = (s.loss(0.3 + h) - s.loss(0.3 - h)) / (2.0 * h);
        assert_relative_eq!(fdl, s.loss_prime(0.3), max_relative = 1e-9);
    }

    #[test]
    fn sahara_log_case_derivative() {
        let s = make_sahara(0.75, 1.0, 0.3, 1.0, 0.2).unwrap();
        let h = 1e-5;
        let fd = (s.gain(0.7 + h) - s.gain(0.7 - h)) / (2.0 * h);
        assert_relative_eq!(fd, s.gain_prime(0.7), max_relative = 1e-9);
        assert!(s.gain(0.0).abs() < 1e-15);
    }

    #[test]
    fn sahara_numeric_inverse() {
        let s = make_sahara(0.75, 0.8, 0.1, 0.5, 0.1).unwrap();
        for &phi in &[1e-3, 0.1, 1.0, 5.0, 6.0] {
            let x = s.gain_inv(phi).unwrap();
            assert_relative_eq!(s.gain_prime(x), phi, max_relative = 1e-10);
            let w = phi.powf(-1.0 / 0.8);
            let closed = (w * w - 0.01) / (2.0 * w);
            assert_relative_eq!(x, closed, max_relative = 1e-10, epsilon = 1e-13);
        }
    }

    #[test]
    fn aby22_glued_at_epsilon() {
        let s = make_aby22_approx(0.75, 15.0, 0.35).unwrap();
        let lower = {
            let a = 0.75 / 1.1;
            let amp = 0.35f64.powf(0.35 / 1.1) / (0.75 * 1.1);
            amp * 0.35f64.powf(a)
        };
        assert_relative_eq!(lower, 1.0 / 0.75 - 1.0 / 1.1, max_relative = 1e-14);
        assert_relative_eq!(s.gain(0.35), 1.0 / 0.75 - 1.0 / 1.1, max_relative = 1e-14);
        let e = 1e-9;
        assert_relative_eq!(s.gain_prime(0.35 - e), s.gain_prime(0.35), max_relative = 1e-7);
        for &x in &[0.01, 0.2, 0.35, 0.5, 3.0] {
            assert_relative_eq!(s.gain_inv(s.gain_prime(x)).unwrap(), x, max_relative = 1e-10);
        }
    }

    #[test]
    fn shifted_power_reciprocal() {
        let s = make_shifted_power(0.1, -1.0, 0.5, 2.0).unwrap();
        assert_relative_eq!(s.gain(0.4), 1.0 / 0.1 - 1.0 / 0.5, max_relative = 1e-13);
        assert_relative_eq!(s.gain_inv(s.gain_prime(0.4)).unwrap(), 0.4, max_relative = 1e-12);
    }

    #[test]
    fn envelope_tangency_boundary_case() {
        // loss chosen so that U-(alpha) = alpha U+'(0)
        let alpha: f64 = 0.5;
        let kappa = alpha * 1.0 / (1.0 - (-alpha).exp());
        let s = make_exponential(alpha, 1.0, 1.0, kappa).unwrap();
        let env = concavify(&s).unwrap();
        assert!((env.c0 - alpha).abs() < 1e-12);
        assert_relative_eq!(env.phi0, 1.0, max_relative = 1e-12);
    }

    #[test]
    fn envelope_power_strictly_above_reference() {
        let s = defaults();
        let env = concavify(&s).unwrap();
        assert!(env.c0 > 0.75);
        assert!(env.residual(&s).abs() < 1e-10);
        assert_eq!(env.u_at_zero, -2.0 * 0.75f64.sqrt());
        assert_eq!(env.value(&s, 0.0), s.u(0.0));
    }

    #[test]
    fn chat_tie_and_jump() {
        let s = defaults();
        let env = concavify(&s).unwrap();
        assert_eq!(env.chat(&s, env.phi0).unwrap(), env.c0);
        assert_eq!(env.chat(&s, env.phi0 * (1.0 + 1e-12)).unwrap(), 0.0);
        let below = env.chat(&s, env.phi0 * (1.0 - 1e-9)).unwrap();
        assert!(below >= env.c0 && below - env.c0 < 1e-6);
    }

    #[test]
    fn conjugate_matches_grid_search() {
        let s = defaults();
        let env = concavify(&s).unwrap();
        for &phi in &[0.2, 1.0, 2.0, 2.8, 3.5] {
            let n = 200_000;
            let best = (0..=n)
                .map(|i| {
                    let c = 50.0 * i as f64 / n as f64;
                    s.u(c) - phi * c
                })
                .fold(f64::NEG_INFINITY, f64::max);
            let h = env.conjugate(&s, phi).unwrap();
            assert!((best - h).abs() < 1e-3 * (1.0 + h.abs()), "phi {phi}: {best} vs {h}");
            assert!(best <= h + 1e-12);
        }
    }

    #[test]
    fn family_roundtrip_json() {
        let f = Family::Sahara { alpha: 0.75, gamma1: 0.8, beta1: 0.1, gamma2: 0.5, beta2: 0.1 };
        let j = serde_json::to_string(&f).unwrap();
        assert!(j.contains("\"family\":\"sahara\""));
        let back: Family = serde_json::from_str(&j).unwrap();
        assert_eq!(back, f);
        let bad = r#"{"family":"power","alpha":0.75,"p":0.2,"q":0.5,"kappa":2,"zeta":1}"#;
        assert!(serde_json::from_str::<Family>(bad).is_err());
    }
}
