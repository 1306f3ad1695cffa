//! Limiting-case experiments checked against closed forms and self-convergence.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dual::{shoot_y0, SolverControls};
use crate::error::Result;
use crate::market::{merton, MarketParams, MertonBenchmark};
use crate::primal::{geometric_grid, PrimalSolution};
use crate::utility::{concavify, make_aby22_approx, make_power, make_shifted_power, UtilitySpec};

/// Points per sampled policy curve.
pub const CURVE_POINTS: usize = 400;

/// Gaps below this are treated as round-off and count as converged.
pub const GAP_FLOOR: f64 = 1e-9;

/// Policy curve sampled on a ratio grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Curve {
    pub label: String,
    pub x0: f64,
    pub x: Vec<f64>,
    pub v: Vec<f64>,
    /// Portfolio weight `pi / x`.
    pub weight: Vec<f64>,
    /// Consumption rate `c / x`.
    pub cw: Vec<f64>,
}

impl Curve {
    pub fn sample(label: impl Into<String>, p: &PrimalSolution, xs: &[f64]) -> Result<Self> {
        let mut c = Curve { label: label.into(), x0: p.x0, x: xs.to_vec(), v: vec![], weight: vec![], cw: vec![] };
        for &x in xs {
            let q = p.eval(x)?;
            c.v.push(q.v);
            c.weight.push(q.pi / x);
            c.cw.push(q.c / x);
        }
        Ok(c)
    }
}

pub fn solve(m: &MarketParams, spec: &UtilitySpec, controls: &SolverControls) -> Result<PrimalSolution> {
    let env = concavify(spec)?;
    Ok(PrimalSolution::new(shoot_y0(m, spec, &env, controls)?))
}

/// Sup of the absolute differences of weights and consumption rates.
fn sup_gaps(a: &Curve, b: &Curve) -> (f64, f64) {
    let sup = |u: &[f64], w: &[f64]| u.iter().zip(w).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max);
    (sup(&a.weight, &b.weight), sup(&a.cw, &b.cw))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MertonRow {
    pub alpha: f64,
    pub rho: f64,
    pub x0: f64,
    /// Sup of `|pi/x - weight|` over the comparison window.
    pub weight_gap: f64,
    /// Sup of `|c/x - gamma_m|` over the comparison window.
    pub consumption_gap: f64,
    pub weight_gap_rel: f64,
    pub consumption_gap_rel: f64,
    /// Lower end of the window actually used.
    pub x_lo: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MertonReport {
    pub p: f64,
    pub benchmark: MertonBenchmark,
    pub rows: Vec<MertonRow>,
    /// Gaps shrink along the sequence.
    pub monotone: bool,
    pub curves: Vec<Curve>,
}

/// Convergence to the Merton problem as `alpha, rho -> 0` on `x in [0.5, 5]`,
/// restricted to `x > 2 x0`.
pub fn merton_limit(
    m: &MarketParams,
    p: f64,
    pairs: &[(f64, f64)],
    controls: &SolverControls,
) -> Result<MertonReport> {
    let benchmark = merton(m, p)?;
    let runs: Vec<(MertonRow, Curve)> = pairs
        .par_iter()
        .map(|&(alpha, rho)| {
            let mk = MarketParams { rho, ..*m };
            let sol = solve(&mk, &make_power(alpha, p, 0.5, 2.0)?, controls)?;
            let x_lo = 0.5f64.max(2.0 * sol.x0);
            let curve = Curve::sample(format!("alpha={alpha}, rho={rho}"), &sol, &geometric_grid(x_lo, 5.0, CURVE_POINTS))?;
            let wg = curve.weight.iter().map(|w| (w - benchmark.weight).abs()).fold(0.0, f64::max);
            let cg = curve.cw.iter().map(|c| (c - benchmark.gamma_m).abs()).fold(0.0, f64::max);
            let row = MertonRow {
                alpha,
                rho,
                x0: sol.x0,
                weight_gap: wg,
                consumption_gap: cg,
                weight_gap_rel: wg / benchmark.weight,
                consumption_gap_rel: cg / benchmark.gamma_m,
                x_lo,
            };
            Ok((row, curve))
        })
        .collect::<Result<Vec<_>>>()?;
    let (rows, curves): (Vec<_>, Vec<_>) = runs.into_iter().unzip();
    let monotone = rows.windows(2).all(|w| w[1].weight_gap < w[0].weight_gap && w[1].consumption_gap < w[0].consumption_gap);
    Ok(MertonReport { p, benchmark, rows, monotone, curves })
}

/// Market of the fixed-reference-point comparison.
pub fn fixed_reference_market() -> MarketParams {
    MarketParams { r: 0.01, mu: 0.04, sigma: 0.2, rho: 1e-2, delta: 0.07 }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SequenceReport {
    pub labels: Vec<String>,
    pub x0: Vec<f64>,
    /// Sup weight gap between successive members.
    pub weight_gaps: Vec<f64>,
    /// Sup consumption-rate gap between successive members.
    pub consumption_gaps: Vec<f64>,
    pub monotone: bool,
    pub window: (f64, f64),
    pub curves: Vec<Curve>,
}

fn sequence(labels: Vec<String>, sols: Vec<PrimalSolution>, window: (f64, f64)) -> Result<SequenceReport> {
    let xs = geometric_grid(window.0, window.1, CURVE_POINTS);
    let curves =
        labels.iter().zip(&sols).map(|(l, s)| Curve::sample(l.clone(), s, &xs)).collect::<Result<Vec<_>>>()?;
    let gaps: Vec<(f64, f64)> = curves.windows(2).map(|w| sup_gaps(&w[0], &w[1])).collect();
    let shrinks = |a: f64, b: f64| b < a || (a < GAP_FLOOR && b < GAP_FLOOR);
    let monotone = gaps.windows(2).all(|g| shrinks(g[0].0, g[1].0) && shrinks(g[0].1, g[1].1));
    Ok(SequenceReport {
        labels,
        x0: sols.iter().map(|s| s.x0).collect(),
        weight_gaps: gaps.iter().map(|g| g.0).collect(),
        consumption_gaps: gaps.iter().map(|g| g.1).collect(),
        monotone,
        window,
        curves,
    })
}

/// Self-convergence of the policies as `rho -> 0` with a fixed reference.
pub fn fixed_reference_limit(m: &MarketParams, rhos: &[f64], controls: &SolverControls) -> Result<SequenceReport> {
    let spec = make_power(1.0, 0.68, 0.68, 2.25)?;
    let sols = rhos
        .par_iter()
        .map(|&rho| solve(&MarketParams { rho, ..*m }, &spec, controls))
        .collect::<Result<Vec<_>>>()?;
    let top = sols.iter().map(|s| s.x0).fold(0.0, f64::max);
    sequence(rhos.iter().map(|r| format!("rho={r}")).collect(), sols, (1.5 * top, 15.0 * top))
}

/// Market of the CRRA comparison with `p = -1`.
pub fn rogers_market() -> MarketParams {
    MarketParams { r: 0.05, mu: 0.09, sigma: 0.35, rho: 1.0, delta: 0.02 }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RogersReport {
    pub sequence: SequenceReport,
    pub benchmark: MertonBenchmark,
    /// Sup distance of each member to the benchmark weight.
    pub merton_weight_gaps: Vec<f64>,
}

/// Convergence as the reference level `alpha -> 0` for the shifted `p = -1` family.
pub fn rogers_limit(m: &MarketParams, alphas: &[f64], controls: &SolverControls) -> Result<RogersReport> {
    let specs = alphas.iter().map(|&a| make_shifted_power(a, -1.0, 0.5, 2.0)).collect::<Result<Vec<_>>>()?;
    let phis = specs.iter().map(|s| Ok(concavify(s)?.phi0)).collect::<Result<Vec<f64>>>()?;
    let phi_ref = phis.iter().cloned().fold(f64::INFINITY, f64::min);
    // The marginal at the kink grows like 1/alpha^2, so the truncation level
    // is held fixed in absolute terms across the sequence.
    let sols = specs
        .par_iter()
        .zip(&phis)
        .map(|(s, &phi0)| {
            let c = SolverControls { y_min_factor: controls.y_min_factor * phi_ref / phi0, ..*controls };
            solve(m, s, &c)
        })
        .collect::<Result<Vec<_>>>()?;
    let top = sols.iter().map(|s| s.x0).fold(0.0, f64::max);
    let sequence = sequence(alphas.iter().map(|a| format!("alpha={a}")).collect(), sols, (2.0 * top, 20.0 * top.max(0.05)))?;
    let benchmark = merton(m, -1.0)?;
    let merton_weight_gaps = sequence
        .curves
        .iter()
        .map(|c| c.weight.iter().map(|w| (w - benchmark.weight).abs()).fold(0.0, f64::max))
        .collect();
    Ok(RogersReport { sequence, benchmark, merton_weight_gaps })
}

/// No-bankruptcy level `alpha / (r + rho (1 - alpha))` of the habit-constrained problem.
pub fn no_bankruptcy_level(m: &MarketParams, alpha: f64) -> f64 {
    alpha / (m.r + m.rho * (1.0 - alpha))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aby22Row {
    pub kappa: f64,
    pub epsilon: f64,
    pub x0: f64,
    /// `pi / x` at the no-bankruptcy level.
    pub weight_at_level: f64,
    /// Minimum of `pi / x` within 5% of the no-bankruptcy level.
    pub min_weight_near_level: f64,
}

/// Plain power utility with loss weight `kappa` at the same level.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PowerRow {
    pub kappa: f64,
    pub x0: f64,
    pub weight_at_level: f64,
    pub min_weight_near_level: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aby22Report {
    pub alpha: f64,
    pub level: f64,
    pub rows: Vec<Aby22Row>,
    pub power_rows: Vec<PowerRow>,
    pub sequence: SequenceReport,
}

/// Power utility `(alpha, 0.2, 0.5, kappa)` evaluated around the no-bankruptcy level.
pub fn power_row(m: &MarketParams, alpha: f64, kappa: f64, controls: &SolverControls) -> Result<PowerRow> {
    let level = no_bankruptcy_level(m, alpha);
    let s = solve(m, &make_power(alpha, 0.2, 0.5, kappa)?, controls)?;
    Ok(PowerRow {
        kappa,
        x0: s.x0,
        weight_at_level: s.policy_pi(level)? / level,
        min_weight_near_level: min_weight_near(&s, level)?,
    })
}

/// Minimum portfolio weight over `[0.95 level, 1.05 level]`.
pub fn min_weight_near(p: &PrimalSolution, level: f64) -> Result<f64> {
    let mut best = f64::INFINITY;
    for x in geometric_grid(0.95 * level, 1.05 * level, 201) {
        best = best.min(p.policy_pi(x)? / x);
    }
    Ok(best)
}

/// Approach to the habit-constrained problem as `kappa -> inf, epsilon -> 0`.
pub fn aby22_limit(
    m: &MarketParams,
    alpha: f64,
    pairs: &[(f64, f64)],
    power_kappas: &[f64],
    controls: &SolverControls,
) -> Result<Aby22Report> {
    let level = no_bankruptcy_level(m, alpha);
    let sols = pairs
        .par_iter()
        .map(|&(k, e)| solve(m, &make_aby22_approx(alpha, k, e)?, controls))
        .collect::<Result<Vec<_>>>()?;
    let rows = pairs
        .iter()
        .zip(&sols)
        .map(|(&(kappa, epsilon), s)| {
            Ok(Aby22Row {
                kappa,
                epsilon,
                x0: s.x0,
                weight_at_level: s.policy_pi(level)? / level,
                min_weight_near_level: min_weight_near(s, level)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let labels = pairs.iter().map(|(k, e)| format!("kappa={k}, epsilon={e}")).collect();
    let sequence = sequence(labels, sols, (level, 5.0 * level))?;
    let power_rows = power_kappas.par_iter().map(|&k| power_row(m, alpha, k, controls)).collect::<Result<Vec<_>>>()?;
    Ok(Aby22Report { alpha, level, rows, power_rows, sequence })
}
