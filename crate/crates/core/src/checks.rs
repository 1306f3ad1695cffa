//! Residual and structure diagnostics for a solved problem.
//!
//! Derivatives entering the residuals are taken by finite differences of
//! the evaluated functions, so the checks exercise the interpolated
//! solution rather than the closed-form identities it was built from.

use serde::{Deserialize, Serialize};

use crate::dual::{psi_cap, DualSolution};
use crate::error::Result;
use crate::primal::{geometric_grid, PrimalSolution};
use crate::utility::{Envelope, UtilitySpec};

/// One named diagnostic.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub threshold: f64,
    pub pass: bool,
}

impl Check {
    /// Passes when `value < threshold`.
    pub fn below(name: &str, value: f64, threshold: f64) -> Self {
        Check { name: name.into(), value, threshold, pass: value < threshold }
    }

    /// Boolean diagnostic recorded as count of violations.
    pub fn count(name: &str, violations: usize) -> Self {
        Check { name: name.into(), value: violations as f64, threshold: 1.0, pass: violations == 0 }
    }
}

/// Concave-envelope diagnostics.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvelopeCheck {
    /// Tangency residual at `c0`.
    pub residual: f64,
    /// Largest `(U - U~) / (1 + |U|)` on `[0, 10 c0]`; nonpositive when dominance holds.
    pub max_shortfall: f64,
    /// Largest `|U~ - U|` on `[c0, 10 c0]`.
    pub max_mismatch: f64,
}

/// Samples `n` points of `[0, 10 c0]` and `n` points of `[c0, 10 c0]`.
pub fn envelope(spec: &UtilitySpec, env: &Envelope, n: usize) -> EnvelopeCheck {
    let top = 10.0 * env.c0;
    let mut shortfall = f64::NEG_INFINITY;
    let mut mismatch = 0.0f64;
    for i in 0..n {
        let t = i as f64 / (n - 1) as f64;
        let c = top * t;
        let u = spec.u(c);
        shortfall = shortfall.max((u - env.value(spec, c)) / (1.0 + u.abs()));
        let c = env.c0 + (top - env.c0) * t;
        mismatch = mismatch.max((env.value(spec, c) - spec.u(c)).abs());
    }
    EnvelopeCheck { residual: env.residual(spec), max_shortfall: shortfall, max_mismatch: mismatch }
}

/// Which stencil to use around a kink.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Side {
    Central,
    Forward,
    Backward,
}

/// First and second derivatives with fourth-order stencils.
fn derivs<F: Fn(f64) -> Result<f64>>(f: &F, x: f64, h: f64, side: Side) -> Result<(f64, f64)> {
    match side {
        Side::Central => {
            let (fm2, fm1, f0, f1, f2) = (f(x - 2.0 * h)?, f(x - h)?, f(x)?, f(x + h)?, f(x + 2.0 * h)?);
            let d1 = (fm2 - 8.0 * fm1 + 8.0 * f1 - f2) / (12.0 * h);
            let d2 = (-fm2 + 16.0 * fm1 - 30.0 * f0 + 16.0 * f1 - f2) / (12.0 * h * h);
            Ok((d1, d2))
        }
        Side::Forward | Side::Backward => {
            let s = if side == Side::Forward { h } else { -h };
            let v: Vec<f64> = (0..6).map(|k| f(x + k as f64 * s)).collect::<Result<_>>()?;
            let d1 = (-25.0 * v[0] + 48.0 * v[1] - 36.0 * v[2] + 16.0 * v[3] - 3.0 * v[4]) / (12.0 * s);
            let d2 = (45.0 * v[0] - 154.0 * v[1] + 214.0 * v[2] - 156.0 * v[3] + 61.0 * v[4] - 10.0 * v[5])
                / (12.0 * h * h);
            Ok((d1, d2))
        }
    }
}

/// Picks the step and stencil so that no stencil point crosses `kink`.
fn stencil(x: f64, h: f64, kink: f64) -> (f64, Side) {
    let gap = (x - kink).abs();
    if gap >= 2.0 * h {
        (h, Side::Central)
    } else if x >= kink {
        (h, Side::Forward)
    } else {
        (h, Side::Backward)
    }
}

const FD_REL_STEP: f64 = 2e-3;

/// Largest normalized residual of the dual equation on `n` points of `(y_min, y0]`.
pub fn dual_residual(d: &DualSolution, n: usize) -> Result<f64> {
    let m = &d.market;
    let a = m.half_sharpe_sq();
    let lo = d.y_min * 1.01f64.powi(10);
    let mut worst: f64 = 0.0;
    for y in geometric_grid(lo, d.y0, n) {
        let z = y.ln();
        let (h, side) = stencil(z, FD_REL_STEP, d.y0.ln());
        let uz = |t: f64| Ok(d.dual_u(t.exp())?.u);
        let duz = |t: f64| Ok(d.dual_u(t.exp())?.du);
        let (du_z, _) = derivs(&uz, z, h, side)?;
        let (ddu_z, _) = derivs(&duz, z, h, side)?;
        let du = du_z / y;
        let ddu = ddu_z / y;
        let u = d.dual_u(y)?.u;
        let phi = y - m.rho * y * du;
        let res = a * y * y * ddu + d.envelope.conjugate(&d.spec, phi)? + (m.delta - m.r - m.rho) * y * du - m.delta * u;
        worst = worst.max(res.abs() / (1.0 + u.abs()));
    }
    Ok(worst)
}

/// Largest normalized residual of the Euler equation on `(y0, 10 y0]`.
pub fn euler_residual(d: &DualSolution, n: usize) -> Result<f64> {
    let m = &d.market;
    let a = m.half_sharpe_sq();
    let mut worst: f64 = 0.0;
    for i in 1..=n {
        let y = d.y0 * (1.0 + 9.0 * i as f64 / n as f64);
        let p = d.dual_u(y)?;
        let res = a * y * y * p.ddu + (m.delta - m.r - m.rho) * y * p.du - m.delta * p.u + d.envelope.u_at_zero;
        worst = worst.max(res.abs() / (1.0 + p.u.abs()));
    }
    Ok(worst)
}

/// Largest normalized residual of the primal HJB equation on `n` points of `(0, x_max]`.
pub fn primal_residual(p: &PrimalSolution, n: usize) -> Result<f64> {
    let d = &p.dual;
    let m = &d.market;
    let a = m.half_sharpe_sq();
    let hi = p.x_max / (1.0 + 3.0 * FD_REL_STEP);
    let mut worst: f64 = 0.0;
    for x in geometric_grid(p.x0 * 1e-3, hi, n) {
        let (h, side) = stencil(x, FD_REL_STEP * x, p.x0);
        let v = |t: f64| p.value(t);
        let (dv, ddv) = derivs(&v, x, h, side)?;
        let vx = p.value(x)?;
        let ham = d.envelope.conjugate(&d.spec, (1.0 + m.rho * x) * dv)?;
        let res = -a * dv * dv / ddv + ham + (m.r + m.rho) * x * dv - m.delta * vx;
        worst = worst.max(res.abs() / (1.0 + vx.abs()));
    }
    Ok(worst)
}

/// Relative mismatches of `u`, `u'`, `u''` between the two branches at `y0`.
pub fn smooth_pasting(d: &DualSolution) -> Result<[f64; 3]> {
    let m = &d.market;
    let env = &d.envelope;
    let lam = d.roots.lam;
    let base = (d.y0 - env.phi0) / m.rho;
    let euler = [base / lam + env.u_at_zero / m.delta, base / d.y0, base * (lam - 1.0) / (d.y0 * d.y0)];
    let branch = d.dual_u(d.y0)?;
    let b = [branch.u, branch.du, branch.ddu];
    Ok([0, 1, 2].map(|i| (b[i] - euler[i]).abs() / euler[i].abs().max(1e-300)))
}

/// Relative mismatch of the marginal after a round trip `y -> x -> y`.
pub fn legendre_roundtrip(p: &PrimalSolution, n: usize) -> Result<f64> {
    let d = &p.dual;
    let nodes = d.nodes();
    let stride = (nodes.len() / n).max(1);
    let mut worst: f64 = 0.0;
    for node in nodes.iter().step_by(stride) {
        let y = node.y();
        let x = -d.dual_u(y)?.du;
        if x <= p.x0 || x >= p.x_max {
            continue;
        }
        worst = worst.max((p.marginal(x)? - y).abs() / y);
    }
    Ok(worst)
}

/// Structural properties of the dual and primal solutions.
pub fn structure(p: &PrimalSolution, n: usize) -> Result<Vec<Check>> {
    let d = &p.dual;
    let m = &d.market;
    let env = &d.envelope;
    let mut out = Vec::new();

    let xs = geometric_grid(p.x0 / 100.0, p.x_max / 2.0, n);
    let pts: Vec<_> = xs.iter().map(|&x| p.eval(x)).collect::<Result<_>>()?;
    let bad_v = pts.windows(2).filter(|w| !(w[1].v > w[0].v)).count() + pts.iter().filter(|q| !(q.dv > 0.0)).count();
    out.push(Check::count("v increasing", bad_v));
    let bad_cc = pts.iter().filter(|q| !(q.ddv < 0.0)).count()
        + pts.windows(2).filter(|w| !(w[1].dv < w[0].dv)).count();
    out.push(Check::count("v concave", bad_cc));

    let nodes = d.nodes();
    let mut bad_u = 0;
    let mut bad_phi = 0;
    let mut bad_psi = 0;
    let mut bad_cap = 0;
    let mut prev: Option<(f64, f64, f64)> = None;
    for nd in nodes {
        let y = nd.y();
        let q = d.dual_u(y)?;
        if !(q.du < 0.0 && q.ddu > 0.0) {
            bad_u += 1;
        }
        if let Some((pu, pdu, pphi)) = prev {
            if !(q.u < pu && q.du > pdu) {
                bad_u += 1;
            }
            if !(nd.phi() > pphi) {
                bad_phi += 1;
            }
        }
        if !(nd.psi > 0.0 && nd.psi < 1.0) {
            bad_psi += 1;
        }
        if nd.psi > psi_cap(y, env, &d.roots) + 1e-12 {
            bad_cap += 1;
        }
        prev = Some((q.u, q.du, nd.phi()));
    }
    out.push(Check::count("u decreasing and convex", bad_u));
    out.push(Check::count("phi increasing", bad_phi));
    out.push(Check::count("psi strictly inside (0, 1)", bad_psi));
    out.push(Check::count("psi below cap", bad_cap));

    let mut bad_order = 0;
    let mut prev_g = f64::INFINITY;
    for q in &pts {
        let g = (1.0 + m.rho * q.x) * q.dv;
        let ok = if q.x < p.x0 { g > env.phi0 } else { g <= env.phi0 * (1.0 + 1e-12) };
        if !ok || !(g < prev_g) {
            bad_order += 1;
        }
        prev_g = g;
    }
    out.push(Check::count("(1+rho x) v' decreasing through phi0", bad_order));
    let at = p.eval(p.x0)?;
    out.push(Check::below(
        "free boundary (1+rho x0) v'(x0) = phi0",
        ((1.0 + m.rho * p.x0) * at.dv - env.phi0).abs() / env.phi0,
        1e-8,
    ));

    let left = p.eval(p.x0 * (1.0 - 1e-12))?;
    let jump_ok = left.c == 0.0 && at.c == env.c0;
    out.push(Check::count("c* jumps from 0 to c0 at x0", usize::from(!jump_ok)));
    let bad_c = pts.iter().filter(|q| (q.x < p.x0 && q.c != 0.0) || (q.x >= p.x0 && q.c < env.c0)).count();
    out.push(Check::count("c* zero below x0 and at least c0 above", bad_c));
    out.push(Check::below("pi* continuous at x0", (left.pi - at.pi).abs() / at.pi, 1e-8));
    out.push(Check::count("pi* positive", pts.iter().filter(|q| !(q.pi > 0.0)).count()));
    Ok(out)
}

/// Tail-bound consistency for `eps` in {0.5, 0.1}.
///
/// With `eta` the largest grid point below which `1 - psi < eps` holds
/// throughout, `B = phi(eta) / y0^eps` must satisfy `phi(y) >= B y^eps` on
/// the whole grid. Applies when the asymptote is classified as `psi -> 1`
/// or `psi` is still rising toward `y_min`; returns `None` otherwise.
pub fn tail_bound(d: &DualSolution) -> Option<Vec<Check>> {
    use crate::dual::AsymptoteKind;
    if d.asymptote.kind != AsymptoteKind::PsiToOne && !d.asymptote.psi_rising {
        return None;
    }
    let nodes = d.nodes();
    Some(
        [0.5, 0.1]
            .iter()
            .map(|&eps| {
                let k = nodes.partition_point(|n| 1.0 - n.psi < eps);
                let name = format!("tail bound eps = {eps}");
                if k == 0 {
                    return Check { name, value: f64::INFINITY, threshold: 0.0, pass: false };
                }
                let b = nodes[k - 1].phi() / d.y0.powf(eps);
                let worst = nodes
                    .iter()
                    .map(|n| (b * n.y().powf(eps) - n.phi()) / n.phi())
                    .fold(f64::NEG_INFINITY, f64::max);
                Check::below(&name, worst, 1e-12)
            })
            .collect(),
    )
}

/// All residual and structure checks with their acceptance thresholds.
pub fn full_report(p: &PrimalSolution) -> Result<Vec<Check>> {
    let d = &p.dual;
    let mut out = vec![
        Check::below("dual equation residual", dual_residual(d, 1000)?, 1e-7),
        Check::below("Euler branch residual", euler_residual(d, 1000)?, 1e-10),
        Check::below("primal HJB residual", primal_residual(p, 1000)?, 1e-6),
    ];
    let sp = smooth_pasting(d)?;
    out.push(Check::below("smooth pasting u", sp[0], 1e-8));
    out.push(Check::below("smooth pasting u'", sp[1], 1e-8));
    out.push(Check::below("smooth pasting u''", sp[2], 1e-8));
    out.push(Check::below("Legendre round trip", legendre_roundtrip(p, 1000)?, 1e-9));
    out.extend(structure(p, 400)?);
    let asym_ok = d.asymptote.psi > 0.999 || d.asymptote.phi > 1e-6;
    out.push(Check::count("asymptotic dichotomy at y_min", usize::from(!asym_ok)));
    if let Some(t) = tail_bound(d) {
        out.extend(t);
    }
    Ok(out)
}
