//! Upwind implicit finite-difference policy iteration for the concavified
//! primal HJB equation on a truncated ratio domain.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::market::{solve_roots, MarketParams};
use crate::primal::PrimalSolution;
use crate::utility::{Envelope, UtilitySpec};

/// Grid and iteration settings.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FdConfig {
    /// Upper truncation of the ratio domain.
    pub x_hi: f64,
    /// Number of nodes including both ends.
    pub n: usize,
    /// Scale below which the grid is close to uniform.
    pub x_lin: f64,
    /// Sup-norm policy change at which iteration stops.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for FdConfig {
    fn default() -> Self {
        FdConfig { x_hi: 1000.0, n: 4000, x_lin: 0.05, tol: 1e-9, max_iter: 500 }
    }
}

impl FdConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.x_hi > 0.0) || !self.x_hi.is_finite() {
            return Err(Error::InvalidParameter(format!("fd.x_hi must be positive, got {}", self.x_hi)));
        }
        if self.n < 8 {
            return Err(Error::InvalidParameter(format!("fd.n must be at least 8, got {}", self.n)));
        }
        if !(self.x_lin > 0.0) || self.x_lin >= self.x_hi {
            return Err(Error::InvalidParameter(format!("fd.x_lin must lie in (0, x_hi), got {}", self.x_lin)));
        }
        if !(self.tol > 0.0) || self.max_iter == 0 {
            return Err(Error::InvalidParameter("fd.tol and fd.max_iter must be positive".into()));
        }
        Ok(())
    }

    /// Nodes `x_lin (e^s - 1)` for `s` uniform, so spacing is linear near 0 and
    /// logarithmic far from it.
    pub fn nodes(&self) -> Vec<f64> {
        let smax = (self.x_hi / self.x_lin).ln_1p();
        let last = self.n - 1;
        let mut xs: Vec<f64> = (0..self.n).map(|i| self.x_lin * (smax * i as f64 / last as f64).exp_m1()).collect();
        xs[0] = 0.0;
        xs[last] = self.x_hi;
        xs
    }
}

/// Converged discrete value and policies.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FdGrid {
    pub x: Vec<f64>,
    pub v: Vec<f64>,
    pub c: Vec<f64>,
    pub pi: Vec<f64>,
    pub iterations: usize,
    /// Last sup-norm policy change.
    pub policy_change: f64,
    /// Iteration stopped on a round-off plateau above `tol`.
    pub plateau: bool,
    /// Nodes where the portfolio cap is active.
    pub cap_binding: usize,
    /// Interior nodes with a nonnegative second difference.
    pub convexity_violations: usize,
}

impl FdGrid {
    /// Piecewise-linear value at `x` inside the grid.
    pub fn value_at(&self, x: f64) -> f64 {
        let k = self.x.partition_point(|&t| t <= x).clamp(1, self.x.len() - 1);
        let (x0, x1) = (self.x[k - 1], self.x[k]);
        let t = ((x - x0) / (x1 - x0)).clamp(0.0, 1.0);
        self.v[k - 1] + t * (self.v[k] - self.v[k - 1])
    }

    /// A hint when the discrete solution shows resolution problems.
    pub fn suggestion(&self) -> Option<String> {
        if self.convexity_violations > 0 {
            Some(format!(
                "discrete value is not concave at {} interior nodes; refine the grid (increase fd.n)",
                self.convexity_violations
            ))
        } else {
            None
        }
    }
}

struct Tridiag {
    lo: Vec<f64>,
    di: Vec<f64>,
    up: Vec<f64>,
}

impl Tridiag {
    fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        let n = self.di.len();
        let mut cp = vec![0.0; n];
        let mut dp = vec![0.0; n];
        cp[0] = self.up[0] / self.di[0];
        dp[0] = rhs[0] / self.di[0];
        for i in 1..n {
            let m = self.di[i] - self.lo[i] * cp[i - 1];
            cp[i] = self.up[i] / m;
            dp[i] = (rhs[i] - self.lo[i] * dp[i - 1]) / m;
        }
        let mut x = vec![0.0; n];
        x[n - 1] = dp[n - 1];
        for i in (0..n - 1).rev() {
            x[i] = dp[i] - cp[i] * x[i + 1];
        }
        x
    }
}

const PLATEAU_ITERATIONS: usize = 20;
const PLATEAU_CEILING: f64 = 1e-7;

/// Solves the discrete HJB by policy iteration.
pub fn solve_fd(m: &MarketParams, spec: &UtilitySpec, env: &Envelope, cfg: &FdConfig) -> Result<FdGrid> {
    m.validate()?;
    cfg.validate()?;
    let xs = cfg.nodes();
    let n = xs.len();
    let s2 = m.sigma * m.sigma;
    let lam = solve_roots(m).lam;
    let slope = m.mu * (1.0 - lam) / s2;
    let cap: Vec<f64> = xs.iter().map(|&x| 10.0 * slope * x).collect();
    let floor = env.u_at_zero / m.delta;

    let mut c: Vec<f64> = xs.iter().map(|&x| m.delta * x / (1.0 + m.rho * x)).collect();
    let mut pi: Vec<f64> = xs.iter().map(|&x| slope * x).collect();
    pi[n - 1] = 0.0;
    c[n - 1] = c[n - 1].max((m.r + m.rho) * xs[n - 1] / (1.0 + m.rho * xs[n - 1]));
    let mut v = evaluate(m, spec, env, &xs, &c, &pi, floor)?;
    let mut change = f64::INFINITY;
    let mut iterations = 0;
    let mut best = f64::INFINITY;
    let mut stalled = 0;
    let mut plateau = false;
    while iterations < cfg.max_iter {
        iterations += 1;
        let (nc, npi) = improve(m, spec, env, &xs, &v, &cap)?;
        change = nc
            .iter()
            .zip(&c)
            .chain(npi.iter().zip(&pi))
            .map(|(a, b)| (a - b).abs() / (1.0 + b.abs()))
            .fold(0.0, f64::max);
        c = nc;
        pi = npi;
        let nv = evaluate(m, spec, env, &xs, &c, &pi, floor)?;
        let dv = nv.iter().zip(&v).map(|(a, b)| (a - b).abs() / (1.0 + b.abs())).fold(0.0, f64::max);
        v = nv;
        log::debug!("fd iteration {iterations}: policy change {change:.3e}, value change {dv:.3e}");
        if change < cfg.tol {
            break;
        }
        // Divided differences of a converged value carry round-off that the
        // maximiser turns into policy noise of a few 1e-9 on fine grids.
        if change < best {
            best = change;
            stalled = 0;
        } else {
            stalled += 1;
        }
        if stalled >= PLATEAU_ITERATIONS && best < PLATEAU_CEILING {
            plateau = true;
            log::info!("fd policy iteration reached a round-off plateau at policy change {best:.3e}");
            break;
        }
    }
    if change >= cfg.tol && !plateau {
        return Err(Error::FiniteDifference(format!(
            "policy iteration did not converge in {} iterations (last policy change {change:.3e})",
            cfg.max_iter
        )));
    }
    let mut cap_binding = 0;
    for i in 1..n {
        if pi[i] >= cap[i] * (1.0 - 1e-12) {
            cap_binding += 1;
        }
    }
    let mut convexity_violations = 0;
    for i in 1..n - 1 {
        let (hm, hp) = (xs[i] - xs[i - 1], xs[i + 1] - xs[i]);
        let d2 = (v[i + 1] - v[i]) / hp - (v[i] - v[i - 1]) / hm;
        if d2 > 1e-10 * (1.0 + v[i].abs()) * (hp + hm) / xs[i].max(cfg.x_lin) {
            convexity_violations += 1;
        }
    }
    let grid = FdGrid { x: xs, v, c, pi, iterations, policy_change: change, plateau, cap_binding, convexity_violations };
    if let Some(s) = grid.suggestion() {
        log::warn!("{s}");
    }
    Ok(grid)
}

fn evaluate(
    m: &MarketParams,
    spec: &UtilitySpec,
    env: &Envelope,
    xs: &[f64],
    c: &[f64],
    pi: &[f64],
    floor: f64,
) -> Result<Vec<f64>> {
    let n = xs.len();
    let mut a = Tridiag { lo: vec![0.0; n], di: vec![0.0; n], up: vec![0.0; n] };
    let mut rhs = vec![0.0; n];
    a.di[0] = 1.0;
    rhs[0] = floor;
    for i in 1..n {
        let x = xs[i];
        let b = (m.r + m.rho) * x + m.mu * pi[i] - (1.0 + m.rho * x) * c[i];
        let hm = x - xs[i - 1];
        let (lo, up) = if i < n - 1 {
            let hp = xs[i + 1] - x;
            let diff = 0.5 * m.sigma * m.sigma * pi[i] * pi[i];
            (-(2.0 * diff / (hm * (hm + hp)) + (-b).max(0.0) / hm), -(2.0 * diff / (hp * (hm + hp)) + b.max(0.0) / hp))
        } else {
            (-((-b).max(0.0) / hm), 0.0)
        };
        if lo > 0.0 || up > 0.0 {
            return Err(Error::FiniteDifference(format!("scheme lost monotonicity at x = {x}")));
        }
        a.lo[i] = lo;
        a.up[i] = up;
        a.di[i] = m.delta - lo - up;
        rhs[i] = env.value(spec, c[i]);
    }
    let v = a.solve(&rhs);
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::FiniteDifference("linear solve produced non-finite values".into()));
    }
    Ok(v)
}

fn improve(
    m: &MarketParams,
    spec: &UtilitySpec,
    env: &Envelope,
    xs: &[f64],
    v: &[f64],
    cap: &[f64],
) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = xs.len();
    let s2 = m.sigma * m.sigma;
    let mut c = vec![0.0; n];
    let mut pi = vec![0.0; n];
    let consume = |x: f64, p: f64| env.chat(spec, ((1.0 + m.rho * x) * p).max(1e-12 * env.phi0));
    for i in 1..n - 1 {
        let x = xs[i];
        let (hm, hp) = (x - xs[i - 1], xs[i + 1] - x);
        let pb = (v[i] - v[i - 1]) / hm;
        let pf = (v[i + 1] - v[i]) / hp;
        let d2 = 2.0 * (pf - pb) / (hp + hm);
        let controls = |p: f64| -> Result<(f64, f64, f64)> {
            let pi = if d2 < 0.0 {
                (-m.mu * p / (s2 * d2)).clamp(-cap[i], cap[i])
            } else {
                cap[i] * p.signum()
            };
            let c = consume(x, p)?;
            Ok((c, pi, (m.r + m.rho) * x + m.mu * pi - (1.0 + m.rho * x) * c))
        };
        let hamiltonian = |(c, pi, b): (f64, f64, f64), p: f64| env.value(spec, c) + b * p + 0.5 * s2 * d2 * pi * pi;
        let f = controls(pf)?;
        let bk = controls(pb)?;
        let fwd = (f.2 > 0.0).then(|| (hamiltonian(f, pf), f));
        let bwd = (bk.2 < 0.0).then(|| (hamiltonian(bk, pb), bk));
        let best = match (fwd, bwd) {
            (Some((hf, f)), Some((hb, bk))) => {
                if hf >= hb {
                    f
                } else {
                    bk
                }
            }
            (Some((_, f)), None) => f,
            (None, Some((_, bk))) => bk,
            (None, None) => zero_drift(&controls, pf.min(pb), pf.max(pb))?,
        };
        c[i] = best.0;
        pi[i] = best.1;
    }
    // State constraint at the upper end: no diffusion and no upward drift.
    let x = xs[n - 1];
    let pb = (v[n - 1] - v[n - 2]) / (x - xs[n - 2]);
    c[n - 1] = consume(x, pb)?.max((m.r + m.rho) * x / (1.0 + m.rho * x));
    pi[n - 1] = 0.0;
    Ok((c, pi))
}

/// Controls for the marginal value in `[lo, hi]` at which the drift vanishes.
fn zero_drift<F: Fn(f64) -> Result<(f64, f64, f64)>>(controls: &F, lo: f64, hi: f64) -> Result<(f64, f64, f64)> {
    let (mut lo, mut hi) = (lo, hi);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if controls(mid)?.2 > 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    controls(0.5 * (lo + hi))
}

/// Sup-relative gap `sup |v_fd - v| / sup |v|` over FD nodes in `[lo, hi]`.
pub fn fd_gap(fd: &FdGrid, primal: &PrimalSolution, lo: f64, hi: f64) -> Result<f64> {
    let mut num: f64 = 0.0;
    let mut den: f64 = 0.0;
    for (&x, &vf) in fd.x.iter().zip(&fd.v) {
        if x < lo || x > hi {
            continue;
        }
        let v = primal.value(x)?;
        num = num.max((vf - v).abs());
        den = den.max(v.abs());
    }
    if den == 0.0 {
        return Err(Error::FiniteDifference(format!("no grid nodes in [{lo}, {hi}]")));
    }
    Ok(num / den)
}
