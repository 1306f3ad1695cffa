//! Dual free-boundary problem: backward shooting for the boundary `y0`.
//!
//! The pair `(phi, psi)` is integrated in the variables `z = ln y` and
//! `w = ln(phi / y)`, which keeps the wealth ratio `x = expm1(w) / rho`
//! accurate for small habit persistence. The separatrix that survives to
//! `y -> 0` is unstable backward in `y`, so the shot is continued in
//! segments: whenever two bracketing trajectories drift apart the state is
//! frozen and the bracket is rebuilt in `psi`.

use log::debug;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::interp::MonotoneCubic;
use crate::market::{solve_roots, MarketParams, Roots};
use crate::ode::{integrate, Control, DenseStep, Dopri5Options};
use crate::utility::{Envelope, UtilitySpec};

/// Numerical controls of the shooting solver.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverControls {
    pub rel_tol: f64,
    pub abs_tol: f64,
    /// Truncation point as a multiple of `phi0`.
    pub y_min_factor: f64,
    /// Bracket width for `y0` relative to `phi0`.
    pub shoot_tol: f64,
    pub max_steps: usize,
}

impl Default for SolverControls {
    fn default() -> Self {
        SolverControls { rel_tol: 1e-12, abs_tol: 1e-14, y_min_factor: 1e-8, shoot_tol: 1e-10, max_steps: 200_000 }
    }
}

impl SolverControls {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidParameter(m.to_string()));
        if !(self.rel_tol > 0.0 && self.rel_tol < 1e-2) {
            return bad("rel_tol must lie in (0, 1e-2)");
        }
        if !(self.abs_tol > 0.0 && self.abs_tol < 1e-2) {
            return bad("abs_tol must lie in (0, 1e-2)");
        }
        if !(self.y_min_factor > 0.0 && self.y_min_factor < 0.1) {
            return bad("y_min_factor must lie in (0, 0.1)");
        }
        if !(self.shoot_tol > 0.0 && self.shoot_tol < 1e-2) {
            return bad("shoot_tol must lie in (0, 1e-2)");
        }
        if self.max_steps < 10 {
            return bad("max_steps must be at least 10");
        }
        Ok(())
    }

    fn ode_options(&self) -> Dopri5Options {
        Dopri5Options { rtol: self.rel_tol, atol: self.abs_tol, h_init: None, h_max: 0.25, max_steps: self.max_steps }
    }
}

/// How a backward trajectory leaves the strip `0 < psi < 1`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Exit {
    ThroughPsiZero,
    ThroughPsiOne,
    ReachedYMin,
}

/// The affine cap `(lam - 1)(ybar - phi0) / phi0`.
pub fn psi_cap(ybar: f64, env: &Envelope, roots: &Roots) -> f64 {
    (roots.lam - 1.0) * (ybar - env.phi0) / env.phi0
}

/// Right-hand side `(phi', psi')` of the coupled system in the variable `y`.
pub fn ode_rhs(y: f64, phi: f64, psi: f64, m: &MarketParams, spec: &UtilitySpec) -> Result<(f64, f64)> {
    let inv = spec.gain_inv(phi)?;
    let (r, mu, s2, rho, delta) = (m.r, m.mu, m.sigma * m.sigma, m.rho, m.delta);
    let dphi = phi * (1.0 - psi) / y;
    let inner = (mu * mu / (2.0 * rho * s2)) * psi - inv + (r - delta) / rho + 1.0 - spec.alpha();
    let dpsi = -(2.0 * rho * s2 / (mu * mu))
        * (((1.0 - psi) / y) * inner - (r + rho) / (rho * phi) + delta / (rho * y));
    Ok((dphi, dpsi))
}

struct System<'a> {
    m: MarketParams,
    spec: &'a UtilitySpec,
    k: f64,
}

impl<'a> System<'a> {
    fn new(m: &MarketParams, spec: &'a UtilitySpec) -> Self {
        System { m: *m, spec, k: 2.0 * m.sigma * m.sigma / (m.mu * m.mu) }
    }

    /// Derivatives of `(w, psi)` with respect to `z`.
    fn rhs(&self, z: f64, s: &[f64; 2]) -> Option<[f64; 2]> {
        let (w, psi) = (s[0], s[1]);
        let phi = (z + w).exp();
        if !phi.is_finite() {
            return None;
        }
        let inv = self.spec.gain_inv(phi).ok()?;
        let m = &self.m;
        let bracket = (1.0 - psi) * (m.r - m.delta + m.rho * (1.0 - self.spec.alpha() - inv))
            - (m.r + m.rho) * (-w).exp()
            + m.delta;
        Some([-psi, -(1.0 - psi) * psi - self.k * bracket])
    }
}

/// A stored point of a trajectory in the variables `(z, w, psi)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Node {
    pub z: f64,
    pub w: f64,
    pub psi: f64,
    pub dw: f64,
    pub dpsi: f64,
}

impl Node {
    pub fn y(&self) -> f64 {
        self.z.exp()
    }

    pub fn phi(&self) -> f64 {
        (self.z + self.w).exp()
    }
}

/// Backward solution from a candidate boundary.
#[derive(Clone, Debug)]
pub struct Trajectory {
    pub ybar: f64,
    pub exit: Exit,
    /// `y` at which the trajectory left the strip or was truncated.
    pub y_exit: f64,
    nodes: Vec<Node>,
    steps: Vec<DenseStep<2>>,
}

impl Trajectory {
    /// Stored nodes in integration order (decreasing `y`).
    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    /// Grid in increasing `y`.
    pub fn ys(&self) -> Vec<f64> {
        self.nodes.iter().rev().map(Node::y).collect()
    }

    pub fn phis(&self) -> Vec<f64> {
        self.nodes.iter().rev().map(Node::phi).collect()
    }

    pub fn psis(&self) -> Vec<f64> {
        self.nodes.iter().rev().map(|n| n.psi).collect()
    }

    /// Dense state `(w, psi)` at `z` if `z` lies inside an interior step.
    fn eval(&self, z: f64) -> Option<[f64; 2]> {
        let interior = self.interior_steps();
        let k = interior.partition_point(|s| s.t1 > z);
        let s = interior.get(k)?;
        (z <= s.t0 && z >= s.t1).then(|| s.eval(z))
    }

    fn interior_steps(&self) -> &[DenseStep<2>] {
        let n = self.nodes.len().saturating_sub(1).min(self.steps.len());
        &self.steps[..n]
    }
}

const EXIT_BAND: f64 = 1e-12;
/// Extra integration depth in `z` below the truncation point.
const FLOOR_MARGIN: f64 = 10.0;
/// Trajectories closer than this in `(w, psi)` are treated as coincident.
const AGREEMENT_TOL: f64 = 1e-10;
/// Largest node spacing in `z` of the stored solution.
pub const MAX_NODE_SPACING: f64 = 2e-3;
const MIN_NODE_SPACING: f64 = 1e-12;
const MAX_SEGMENTS: usize = 10_000;
/// Relative offset of the initial bracket from the ends of `(gamma phi0, phi0)`.
const BRACKET_INSET: f64 = 1e-6;

fn run(sys: &System, ybar: f64, z0: f64, s0: [f64; 2], z_stop: f64, opts: &Dopri5Options) -> Result<Trajectory> {
    let d0 = sys
        .rhs(z0, &s0)
        .ok_or_else(|| Error::Integration(format!("right-hand side undefined at the start y = {}", z0.exp())))?;
    let mut nodes = vec![Node { z: z0, w: s0[0], psi: s0[1], dw: d0[0], dpsi: d0[1] }];
    let mut steps = Vec::new();
    let mut exit = Exit::ReachedYMin;
    let mut z_exit = z_stop;
    let mut nonfinite = false;
    integrate(|z, s| sys.rhs(z, s), z0, s0, z_stop, opts, |step| {
        let psi1 = step.y1[1];
        if !psi1.is_finite() || !step.y1[0].is_finite() {
            nonfinite = true;
            return Control::Stop;
        }
        let barrier = if psi1 <= EXIT_BAND {
            Some((0.0, Exit::ThroughPsiZero))
        } else if psi1 >= 1.0 - EXIT_BAND {
            Some((1.0, Exit::ThroughPsiOne))
        } else {
            None
        };
        steps.push(step.clone());
        match barrier {
            None => {
                nodes.push(Node { z: step.t1, w: step.y1[0], psi: psi1, dw: step.f1[0], dpsi: step.f1[1] });
                Control::Continue
            }
            Some((level, kind)) => {
                let side = |z: f64| (step.eval(z)[1] - level) * if level == 0.0 { 1.0 } else { -1.0 };
                let (mut a, mut b) = (step.t0, step.t1);
                while (a - b).abs() > 1e-13 * (1.0 + a.abs()) {
                    let mid = 0.5 * (a + b);
                    if mid == a || mid == b {
                        break;
                    }
                    if side(mid) > 0.0 {
                        a = mid;
                    } else {
                        b = mid;
                    }
                }
                let s = step.eval(b);
                let sc = [s[0], level];
                let d = sys.rhs(b, &sc).unwrap_or([-level, 0.0]);
                nodes.push(Node { z: b, w: s[0], psi: level, dw: d[0], dpsi: d[1] });
                exit = kind;
                z_exit = b;
                Control::Stop
            }
        }
    })?;
    if nonfinite {
        return Err(Error::Integration(format!("non-finite state near y = {}", nodes.last().unwrap().y())));
    }
    Ok(Trajectory { ybar, exit, y_exit: z_exit.exp(), nodes, steps })
}

/// Context shared by all shots of one solve.
pub struct Shooter<'a> {
    sys: System<'a>,
    env: Envelope,
    roots: Roots,
    opts: Dopri5Options,
    z_min: f64,
}

impl<'a> Shooter<'a> {
    pub fn new(m: &MarketParams, spec: &'a UtilitySpec, env: &Envelope, controls: &SolverControls) -> Result<Self> {
        m.validate()?;
        controls.validate()?;
        if env.phi0 > spec.gain_prime_sup() * (1.0 + 1e-12) {
            return Err(Error::AssumptionViolated("phi0 exceeds the supremum of the gain marginal".into()));
        }
        Ok(Shooter {
            sys: System::new(m, spec),
            env: *env,
            roots: solve_roots(m),
            opts: controls.ode_options(),
            z_min: (controls.y_min_factor * env.phi0).ln(),
        })
    }

    pub fn roots(&self) -> Roots {
        self.roots
    }

    fn start(&self, ybar: f64) -> (f64, [f64; 2]) {
        (ybar.ln(), [(self.env.phi0 / ybar).ln(), psi_cap(ybar, &self.env, &self.roots)])
    }

    /// Integrates from the candidate `ybar` down to `y_stop`.
    pub fn candidate(&self, ybar: f64, y_stop: f64) -> Result<Trajectory> {
        let (z0, s0) = self.start(ybar);
        run(&self.sys, ybar, z0, s0, y_stop.ln(), &self.opts)
    }

    fn lower_bound(&self) -> f64 {
        self.roots.gamma * self.env.phi0
    }

    /// Initial bracket on the candidate boundary.
    pub fn initial_bracket(&self) -> (f64, f64) {
        let lo = self.lower_bound();
        let span = self.env.phi0 - lo;
        (lo + BRACKET_INSET * span, self.env.phi0 - BRACKET_INSET * span)
    }
}

enum Bisected {
    /// Trajectories exiting through `psi = 1` and `psi = 0` at adjacent parameters.
    Pair { one: Trajectory, zero: Trajectory, width: f64 },
    /// A trajectory that survived to the integration floor.
    Survivor(Trajectory),
}

/// Bisects a one-parameter family of initial states between exits
/// through `psi = 1` (at `s_one`) and `psi = 0` (at `s_zero`).
fn bisect_family<F>(
    sys: &System,
    opts: &Dopri5Options,
    z_floor: f64,
    mut s_one: f64,
    mut s_zero: f64,
    mut one: Trajectory,
    mut zero: Trajectory,
    start: F,
) -> Result<Bisected>
where
    F: Fn(f64) -> (f64, f64, [f64; 2]),
{
    loop {
        let mid = 0.5 * (s_one + s_zero);
        if mid == s_one || mid == s_zero {
            return Ok(Bisected::Pair { one, zero, width: (s_one - s_zero).abs() });
        }
        let (ybar, z0, s0) = start(mid);
        let t = run(sys, ybar, z0, s0, z_floor, opts)?;
        match t.exit {
            Exit::ThroughPsiOne => {
                s_one = mid;
                one = t;
            }
            Exit::ThroughPsiZero => {
                s_zero = mid;
                zero = t;
            }
            Exit::ReachedYMin => return Ok(Bisected::Survivor(t)),
        }
    }
}

/// Leading part of `a` along which `b` stays within tolerance: the number of
/// whole steps, plus the furthest agreeing point inside the next step.
fn agreeing_prefix(a: &Trajectory, b: &Trajectory) -> (usize, Option<f64>) {
    let agree = |s: &DenseStep<2>, z: f64| -> bool {
        let va = s.eval(z);
        match b.eval(z) {
            Some(vb) => {
                (va[1] - vb[1]).abs() <= AGREEMENT_TOL && (va[0] - vb[0]).abs() <= AGREEMENT_TOL * (1.0 + va[0].abs())
            }
            None => false,
        }
    };
    let steps = a.interior_steps();
    for (i, s) in steps.iter().enumerate() {
        for th in [0.25, 0.5, 0.75, 1.0] {
            if !agree(s, s.t0 + th * (s.t1 - s.t0)) {
                let (mut lo, mut hi) = (0.0, th);
                for _ in 0..40 {
                    let mid = 0.5 * (lo + hi);
                    if agree(s, s.t0 + mid * (s.t1 - s.t0)) {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                return (i, (lo > 0.0).then(|| s.t0 + lo * (s.t1 - s.t0)));
            }
        }
    }
    (steps.len(), None)
}

/// Classification of the behaviour of `(phi, psi)` as `y -> 0`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum AsymptoteKind {
    /// `psi(y_min)` above 0.999.
    PsiToOne,
    /// `phi(y_min)` above 1e-6.
    PhiPositive,
    Undetermined,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Asymptote {
    pub phi: f64,
    pub psi: f64,
    pub kind: AsymptoteKind,
    /// Whether `psi` increases toward `y_min` over the last decade of `y`.
    pub psi_rising: bool,
}

/// Solved dual problem.
#[derive(Clone, Debug)]
pub struct DualSolution {
    pub market: MarketParams,
    pub spec: UtilitySpec,
    pub envelope: Envelope,
    pub roots: Roots,
    pub controls: SolverControls,
    pub y0: f64,
    pub y_min: f64,
    /// `-u'(y_min)`.
    pub x_max: f64,
    pub asymptote: Asymptote,
    /// Final bisection bracket width on `y0`.
    pub bracket_width: f64,
    /// Number of continuation segments used.
    pub segments: usize,
    nodes: Vec<Node>,
    w_it: MonotoneCubic,
    psi_it: MonotoneCubic,
}

/// Integrates a single candidate boundary down to the configured `y_min`.
pub fn integrate_candidate(
    ybar: f64,
    m: &MarketParams,
    spec: &UtilitySpec,
    env: &Envelope,
    controls: &SolverControls,
) -> Result<Trajectory> {
    let sh = Shooter::new(m, spec, env, controls)?;
    let (lo, hi) = (sh.lower_bound(), env.phi0);
    if !(ybar > lo && ybar < hi) {
        return Err(Error::InvalidParameter(format!("candidate {ybar} outside ({lo}, {hi})")));
    }
    sh.candidate(ybar, controls.y_min_factor * env.phi0)
}

/// Exit classification of `n` equally spaced interior candidates of `(lo, hi)`,
/// independent of bisection. The range must lie in `[gamma phi0, phi0]`.
pub fn scan_exits(
    m: &MarketParams,
    spec: &UtilitySpec,
    env: &Envelope,
    controls: &SolverControls,
    (lo, hi): (f64, f64),
    n: usize,
) -> Result<Vec<(f64, Exit)>> {
    let sh = Shooter::new(m, spec, env, controls)?;
    if !(lo >= sh.lower_bound() && hi <= env.phi0 && lo < hi) {
        return Err(Error::InvalidParameter(format!(
            "scan range ({lo}, {hi}) outside [{}, {}]",
            sh.lower_bound(),
            env.phi0
        )));
    }
    let y_stop = controls.y_min_factor * env.phi0;
    (1..=n)
        .map(|i| {
            let yb = lo + (hi - lo) * i as f64 / (n + 1) as f64;
            Ok((yb, sh.candidate(yb, y_stop)?.exit))
        })
        .collect()
}

/// Shoots for the free boundary `y0` and assembles the dual solution.
pub fn shoot_y0(m: &MarketParams, spec: &UtilitySpec, env: &Envelope, controls: &SolverControls) -> Result<DualSolution> {
    let sh = Shooter::new(m, spec, env, controls)?;
    let sys = &sh.sys;
    let opts = &sh.opts;
    let z_min = sh.z_min;
    let z_floor = z_min - FLOOR_MARGIN;

    let (ylo, yhi) = sh.initial_bracket();
    let t_lo = sh.candidate(ylo, z_floor.exp())?;
    let t_hi = sh.candidate(yhi, z_floor.exp())?;
    if t_lo.exit != Exit::ThroughPsiOne || t_hi.exit != Exit::ThroughPsiZero {
        return Err(Error::Shooting(format!(
            "initial bracket misclassified: {:?} at {ylo}, {:?} at {yhi}",
            t_lo.exit, t_hi.exit
        )));
    }
    let first = bisect_family(sys, opts, z_floor, ylo, yhi, t_lo, t_hi, |yb| {
        let (z0, s0) = sh.start(yb);
        (yb, z0, s0)
    })?;
    let (y0, bracket_width) = match &first {
        Bisected::Pair { one, width, .. } => (one.ybar, *width),
        Bisected::Survivor(t) => (t.ybar, 0.0),
    };
    if bracket_width > controls.shoot_tol * env.phi0 {
        return Err(Error::Shooting(format!("bracket width {bracket_width} above tolerance")));
    }
    debug!("y0 = {y0}, bracket width {bracket_width:e}");

    let mut accepted: Vec<(DenseStep<2>, f64)> = Vec::new();
    let mut current = first;
    let mut segments = 0usize;
    loop {
        segments += 1;
        let (primary, n_ok, partial, done) = match current {
            Bisected::Survivor(t) => {
                let n = t.interior_steps().len();
                (t, n, None, true)
            }
            Bisected::Pair { one, zero, .. } => {
                let (n, partial) = agreeing_prefix(&one, &zero);
                (one, n, partial, false)
            }
        };
        let steps = &primary.interior_steps()[..n_ok];
        let reached = steps.iter().position(|s| s.t1 <= z_min);
        match reached {
            Some(k) => {
                accepted.extend(steps[..=k].iter().map(|s| (s.clone(), s.t1)));
                break;
            }
            None if done => {
                return Err(Error::Shooting("surviving trajectory ended above y_min".into()));
            }
            None => {}
        }
        accepted.extend(steps.iter().map(|s| (s.clone(), s.t1)));
        if let Some(zp) = partial {
            let s = &primary.interior_steps()[n_ok];
            accepted.push((s.clone(), zp));
            if zp <= z_min {
                break;
            }
        } else if n_ok == 0 {
            return Err(Error::Shooting(format!(
                "continuation stalled at y = {} (segment {segments})",
                primary.nodes[0].y()
            )));
        }
        if segments > MAX_SEGMENTS {
            return Err(Error::Shooting("too many continuation segments".into()));
        }
        let (last, zc) = accepted.last().unwrap();
        let cut = last.eval(*zc);
        let (zc, wc, pc) = (*zc, cut[0], cut[1]);
        debug!("segment {segments} ends at y = {:e}, psi = {pc}", zc.exp());
        let start = |p: f64| (y0, zc, [wc, p]);
        let mut d = 1e-9f64;
        let (mut s_one, mut s_zero, t_one, t_zero);
        loop {
            s_one = (pc + d).min(0.5 * (pc + 1.0));
            s_zero = (pc - d).max(0.5 * pc);
            let a = run(sys, y0, zc, [wc, s_one], z_floor, opts)?;
            let b = run(sys, y0, zc, [wc, s_zero], z_floor, opts)?;
            if a.exit == Exit::ThroughPsiOne && b.exit == Exit::ThroughPsiZero {
                t_one = a;
                t_zero = b;
                break;
            }
            if a.exit == Exit::ReachedYMin || b.exit == Exit::ReachedYMin {
                let surv = if a.exit == Exit::ReachedYMin { a } else { b };
                t_one = surv.clone();
                t_zero = surv;
                break;
            }
            d *= 8.0;
            if d > 0.5 {
                return Err(Error::Shooting(format!("cannot bracket the continuation at y = {:e}", zc.exp())));
            }
        }
        current = if t_one.exit == Exit::ReachedYMin {
            Bisected::Survivor(t_one)
        } else {
            bisect_family(sys, opts, z_floor, s_one, s_zero, t_one, t_zero, start)?
        };
    }

    let nodes = refine(sys, &accepted, z_min)?;
    let y_min = z_min.exp();
    DualSolution::assemble(m, spec, env, sh.roots, controls, y0, y_min, bracket_width, segments, nodes)
}

/// Builds the node list from accepted steps, capping the spacing and
/// truncating exactly at `z_min`.
fn refine(sys: &System, steps: &[(DenseStep<2>, f64)], z_min: f64) -> Result<Vec<Node>> {
    let mk = |z: f64, s: [f64; 2]| -> Result<Node> {
        let d = sys
            .rhs(z, &s)
            .ok_or_else(|| Error::Integration(format!("right-hand side undefined at y = {}", z.exp())))?;
        Ok(Node { z, w: s[0], psi: s[1], dw: d[0], dpsi: d[1] })
    };
    let (first, _) = steps.first().ok_or_else(|| Error::Shooting("empty trajectory".into()))?;
    let mut out = vec![mk(first.t0, first.y0)?];
    for (s, end) in steps {
        let t_end = end.max(z_min);
        let n = ((s.t0 - t_end) / MAX_NODE_SPACING).ceil().max(1.0) as usize;
        for j in 1..=n {
            let z = if j == n { t_end } else { s.t0 + (t_end - s.t0) * j as f64 / n as f64 };
            if out.last().is_some_and(|l: &Node| l.z - z < MIN_NODE_SPACING) {
                continue;
            }
            let v = if j == n && t_end == s.t1 { s.y1 } else { s.eval(z) };
            out.push(mk(z, v)?);
        }
        if t_end == z_min {
            break;
        }
    }
    Ok(out)
}

/// Values of the dual function and its first two derivatives.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DualPoint {
    pub u: f64,
    pub du: f64,
    pub ddu: f64,
}

/// State of the nonlinear branch at one `y`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BranchState {
    pub y: f64,
    pub phi: f64,
    pub psi: f64,
    /// `-u'(y)`.
    pub x: f64,
    /// True if `y` lies below `y_min` and the state was clamped.
    pub clamped: bool,
}

impl DualSolution {
    #[allow(clippy::too_many_arguments)]
    fn assemble(
        m: &MarketParams,
        spec: &UtilitySpec,
        env: &Envelope,
        roots: Roots,
        controls: &SolverControls,
        y0: f64,
        y_min: f64,
        bracket_width: f64,
        segments: usize,
        mut nodes: Vec<Node>,
    ) -> Result<Self> {
        nodes.reverse();
        nodes.dedup_by(|b, a| b.z <= a.z);
        let zs: Vec<f64> = nodes.iter().map(|n| n.z).collect();
        let w_it = MonotoneCubic::new(
            zs.clone(),
            nodes.iter().map(|n| n.w).collect(),
            Some(nodes.iter().map(|n| n.dw).collect()),
        )?;
        let psi_it = MonotoneCubic::new(
            zs,
            nodes.iter().map(|n| n.psi).collect(),
            Some(nodes.iter().map(|n| n.dpsi).collect()),
        )?;
        let low = nodes[0];
        let x_max = low.w.exp_m1() / m.rho;
        let decade = nodes.partition_point(|n| n.z < low.z + std::f64::consts::LN_10);
        let psi_rising = nodes[..decade.max(2)].windows(2).all(|p| p[0].psi >= p[1].psi);
        let kind = if low.psi > 0.999 {
            AsymptoteKind::PsiToOne
        } else if low.phi() > 1e-6 {
            AsymptoteKind::PhiPositive
        } else {
            AsymptoteKind::Undetermined
        };
        let asymptote = Asymptote { phi: low.phi(), psi: low.psi, kind, psi_rising };
        Ok(DualSolution {
            market: *m,
            spec: spec.clone(),
            envelope: *env,
            roots,
            controls: *controls,
            y0,
            y_min,
            x_max,
            asymptote,
            bracket_width,
            segments,
            nodes,
            w_it,
            psi_it,
        })
    }

    /// Stored nodes in increasing `y`.
    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    /// Austerity threshold `(phi0 - y0) / (rho y0)`.
    pub fn x0(&self) -> f64 {
        (self.envelope.phi0 - self.y0) / (self.market.rho * self.y0)
    }

    /// Interpolated state on `(0, y0]`.
    pub fn state(&self, y: f64) -> BranchState {
        let z = y.ln();
        let first = &self.nodes[0];
        if z <= first.z {
            let phi = first.phi();
            let x = (phi / y - 1.0) / self.market.rho;
            return BranchState { y, phi, psi: first.psi, x, clamped: z < first.z };
        }
        let k = self.w_it.locate(z);
        let w = self.w_it.eval_in(k, z).0;
        let psi = self.psi_it.eval_in(k, z).0;
        BranchState { y, phi: (z + w).exp(), psi, x: w.exp_m1() / self.market.rho, clamped: false }
    }

    /// Nonlinear branch state at wealth ratio `x` in `[x0, x_max]`.
    pub fn state_at_x(&self, x: f64) -> BranchState {
        let x0 = self.x0();
        if x <= x0 {
            let top = self.nodes.last().unwrap();
            return BranchState { y: self.y0, phi: self.envelope.phi0, psi: top.psi, x: x0, clamped: false };
        }
        if x >= self.x_max {
            let mut s = self.state(self.y_min);
            s.clamped = x > self.x_max;
            if s.clamped {
                s.y = s.phi / (1.0 + self.market.rho * x);
                s.x = x;
            }
            return s;
        }
        let target = (self.market.rho * x).ln_1p();
        let ws = self.w_it.ys();
        let i = ws.partition_point(|&w| w > target).clamp(1, ws.len() - 1);
        let k = i - 1;
        let xs = self.w_it.xs();
        let (mut a, mut b) = (xs[k], xs[k + 1]);
        let mut z = a + (b - a) * (ws[k] - target) / (ws[k] - ws[k + 1]);
        for _ in 0..100 {
            let (w, dw) = self.w_it.eval_in(k, z);
            let h = w - target;
            if h == 0.0 {
                break;
            }
            if h > 0.0 {
                a = z;
            } else {
                b = z;
            }
            let mut zn = if dw < 0.0 { z - h / dw } else { 0.5 * (a + b) };
            if !(zn > a && zn < b) {
                zn = 0.5 * (a + b);
            }
            if (zn - z).abs() <= 4.0 * f64::EPSILON * z.abs().max(1.0) {
                z = zn;
                break;
            }
            z = zn;
        }
        let psi = self.psi_it.eval_in(k, z).0;
        let w = self.w_it.eval_in(k, z).0;
        BranchState { y: z.exp(), phi: (z + w).exp(), psi, x, clamped: false }
    }

    /// `u`, `u'`, `u''` at `y > 0`.
    pub fn dual_u(&self, y: f64) -> Result<DualPoint> {
        if !(y > 0.0) {
            return Err(Error::InvalidParameter(format!("dual variable must be positive, got {y}")));
        }
        let m = &self.market;
        let env = &self.envelope;
        if y > self.y0 {
            let lam = self.roots.lam;
            let base = (self.y0 - env.phi0) / m.rho;
            let ratio = y / self.y0;
            return Ok(DualPoint {
                u: base / lam * ratio.powf(lam) + env.u_at_zero / m.delta,
                du: base / self.y0 * ratio.powf(lam - 1.0),
                ddu: base * (lam - 1.0) / (self.y0 * self.y0) * ratio.powf(lam - 2.0),
            });
        }
        let s = if y == self.y0 {
            let top = self.nodes.last().unwrap();
            BranchState { y, phi: env.phi0, psi: top.psi, x: self.x0(), clamped: false }
        } else {
            self.state(y)
        };
        self.branch_point(&s)
    }

    /// Dual values from a nonlinear-branch state.
    pub fn branch_point(&self, s: &BranchState) -> Result<DualPoint> {
        let m = &self.market;
        let g = self.envelope.g_fn(&self.spec, s.phi)?;
        let a = m.half_sharpe_sq();
        let u = (a / m.rho * s.phi * s.psi + g - (m.delta - m.r - m.rho) * s.x * s.y) / m.delta;
        Ok(DualPoint { u, du: -s.x, ddu: s.phi * s.psi / (m.rho * s.y * s.y) })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::utility::{concavify, make_power};

    fn setup() -> (MarketParams, UtilitySpec, Envelope) {
        let m = MarketParams::default();
        let s = make_power(0.75, 0.2, 0.5, 2.0).unwrap();
        let e = concavify(&s).unwrap();
        (m, s, e)
    }

    #[test]
    fn psi_cap_anchors() {
        let (m, _, e) = setup();
        let r = solve_roots(&m);
        assert_eq!(psi_cap(e.phi0, &e, &r), 0.0);
        assert!((psi_cap(r.gamma * e.phi0, &e, &r) - 1.0).abs() < 1e-14);
        assert!((psi_cap(0.5 * (r.gamma + 1.0) * e.phi0, &e, &r) - 0.5).abs() < 1e-14);
    }

    #[test]
    fn rhs_flat_phi_at_psi_one() {
        let (m, s, _) = setup();
        let (dphi, _) = ode_rhs(0.5, 1.0, 1.0, &m, &s).unwrap();
        assert_eq!(dphi, 0.0);
    }

    #[test]
    fn log_form_matches_literal_form() {
        let (m, s, _) = setup();
        let sys = System::new(&m, &s);
        for &(y, phi, psi) in &[(0.3, 1.1, 0.4), (1.2, 2.5, 0.9), (1e-4, 0.2, 0.1)] {
            let (dphi, dpsi) = ode_rhs(y, phi, psi, &m, &s).unwrap();
            let d = sys.rhs(f64::ln(y), &[(phi / y).ln(), psi]).unwrap();
            assert!((d[0] - (y * dphi / phi - 1.0)).abs() < 1e-12);
            assert!((d[1] - y * dpsi).abs() < 1e-12 * (1.0 + d[1].abs()));
        }
    }

    #[test]
    fn bracket_endpoints_classify() {
        let (m, s, e) = setup();
        let c = SolverControls::default();
        let sh = Shooter::new(&m, &s, &e, &c).unwrap();
        let (lo, hi) = sh.initial_bracket();
        assert_eq!(sh.candidate(lo, 1e-8).unwrap().exit, Exit::ThroughPsiOne);
        assert_eq!(sh.candidate(hi, 1e-8).unwrap().exit, Exit::ThroughPsiZero);
    }

    #[test]
    fn scan_classification_is_monotone_around_y0() {
        let (m, s, e) = setup();
        let c = SolverControls::default();
        let y0 = shoot_y0(&m, &s, &e, &c).unwrap().y0;
        let lo = solve_roots(&m).gamma * e.phi0;
        let scan = scan_exits(&m, &s, &e, &c, (lo, e.phi0), 40).unwrap();
        for (yb, exit) in scan {
            if yb < y0 * (1.0 - 1e-6) {
                assert_eq!(exit, Exit::ThroughPsiOne, "at {yb}");
            } else if yb > y0 * (1.0 + 1e-6) {
                assert_eq!(exit, Exit::ThroughPsiZero, "at {yb}");
            }
        }
        assert!(scan_exits(&m, &s, &e, &c, (0.5 * lo, e.phi0), 4).is_err());
    }

    #[test]
    fn candidate_rejects_outside_interval() {
        let (m, s, e) = setup();
        assert!(integrate_candidate(e.phi0 * 1.01, &m, &s, &e, &SolverControls::default()).is_err());
    }

    #[test]
    fn trajectory_invariants() {
        let (m, s, e) = setup();
        let r = solve_roots(&m);
        let t = integrate_candidate(0.9 * e.phi0, &m, &s, &e, &SolverControls::default()).unwrap();
        let ys = t.ys();
        let phis = t.phis();
        let psis = t.psis();
        assert!(ys.windows(2).all(|w| w[1] > w[0]));
        assert!(phis.windows(2).all(|w| w[1] > w[0]));
        for (y, p) in ys.iter().zip(&psis) {
            assert!((0.0..=1.0).contains(p));
            assert!(*p <= psi_cap(*y, &e, &r) + 1e-12);
        }
    }

    #[test]
    fn controls_validation() {
        let c = SolverControls { rel_tol: 0.0, ..Default::default() };
        assert!(c.validate().is_err());
        assert!(SolverControls::default().validate().is_ok());
    }
}
