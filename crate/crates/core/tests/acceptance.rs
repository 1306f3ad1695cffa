//! Acceptance criteria. Each criterion prints one PASS/FAIL line with the
//! measured quantities and its runtime; the process fails if any criterion does.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::Instant;

use habitfbp_core::checks::{self, envelope};
use habitfbp_core::dual::{integrate_candidate, scan_exits, shoot_y0, Exit, SolverControls};
use habitfbp_core::fd::{fd_gap, solve_fd, FdConfig};
use habitfbp_core::limits::{merton_limit, no_bankruptcy_level, power_row, solve};
use habitfbp_core::market::{solve_roots, MarketParams, Roots};
use habitfbp_core::primal::PrimalSolution;
use habitfbp_core::simulate::{level_study, simulate, SimConfig};
use habitfbp_core::utility::{
    concavify, make_aby22_approx, make_exponential, make_power, make_sahara, make_shifted_power, UtilitySpec,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

impl Outcome {
    fn new(pass: bool, detail: String) -> Self {
        Outcome { pass, detail }
    }
}

fn criterion(id: u32, name: &str, limit_s: f64, f: impl FnOnce() -> Outcome) -> bool {
    let start = Instant::now();
    let out = catch_unwind(AssertUnwindSafe(f));
    let secs = start.elapsed().as_secs_f64();
    let (pass, detail) = match out {
        Ok(o) => (o.pass && secs < limit_s, o.detail),
        Err(e) => {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            (false, format!("panicked: {msg}"))
        }
    };
    let tag = if pass { "PASS" } else { "FAIL" };
    println!("criterion {id} {name}: {tag} | {detail} | runtime {secs:.3} s (limit {limit_s} s)");
    pass
}

fn base() -> (MarketParams, UtilitySpec, SolverControls) {
    (MarketParams::default(), make_power(0.75, 0.2, 0.5, 2.0).unwrap(), SolverControls::default())
}

fn root_bounds() -> Outcome {
    let m = MarketParams::default();
    let r = solve_roots(&m);
    let res = Roots::quadratic(&m, r.lam).abs();
    let pass = res < 1e-12 && r.lam > -2.4 && r.lam < 0.0;
    Outcome::new(pass, format!("lambda = {:.15}, quadratic residual {res:.2e} (< 1e-12)", r.lam))
}

/// Zooming dense scans for the change of exit face, without bisection.
fn scan_oracle(m: &MarketParams, s: &UtilitySpec, c: &SolverControls) -> (f64, bool) {
    let env = concavify(s).unwrap();
    let mut range = (solve_roots(m).gamma * env.phi0, env.phi0);
    let mut ordered = true;
    while range.1 - range.0 > 1e-8 * env.phi0 {
        let scan = scan_exits(m, s, &env, c, range, 32).unwrap();
        let last_one = scan.iter().rposition(|(_, e)| *e == Exit::ThroughPsiOne);
        let first_zero = scan.iter().position(|(_, e)| *e == Exit::ThroughPsiZero);
        if let (Some(i), Some(j)) = (last_one, first_zero) {
            ordered &= i < j;
        }
        let lo = last_one.map_or(range.0, |i| scan[i].0);
        let hi = first_zero.map_or(range.1, |j| scan[j].0);
        if !(hi > lo) {
            return (f64::NAN, false);
        }
        range = (lo, hi);
    }
    (0.5 * (range.0 + range.1), ordered)
}

fn shooting() -> Outcome {
    let (m, s, c) = base();
    let env = concavify(&s).unwrap();
    let d = shoot_y0(&m, &s, &env, &c).unwrap();
    let lo = d.roots.gamma * env.phi0;
    let in_bounds = d.y0 > lo && d.y0 < env.phi0;
    let (oracle, ordered) = scan_oracle(&m, &s, &c);
    let gap = (oracle - d.y0).abs() / env.phi0;
    let span = env.phi0 - lo;
    let low_exit = integrate_candidate(lo + 1e-3 * span, &m, &s, &env, &c).unwrap().exit;
    let high_exit = integrate_candidate(env.phi0 - 1e-3 * span, &m, &s, &env, &c).unwrap().exit;
    let exits_ok = low_exit == Exit::ThroughPsiOne && high_exit == Exit::ThroughPsiZero;
    let pass = in_bounds && ordered && gap < 1e-6 && exits_ok;
    Outcome::new(
        pass,
        format!(
            "y0 = {:.12} in ({lo:.6}, {:.6}); scan oracle {oracle:.12}, |diff|/phi0 = {gap:.2e} (< 1e-6); \
             endpoint exits {low_exit:?}/{high_exit:?}; scan ordered {ordered}",
            d.y0, env.phi0
        ),
    )
}

fn residuals() -> Outcome {
    let (m, s, c) = base();
    let p = solve(&m, &s, &c).unwrap();
    let dual = checks::dual_residual(&p.dual, 1000).unwrap();
    let primal = checks::primal_residual(&p, 1000).unwrap();
    let sp = checks::smooth_pasting(&p.dual).unwrap();
    let sp_max = sp.iter().copied().fold(0.0, f64::max);
    let pass = dual < 1e-7 && primal < 1e-6 && sp_max < 1e-8;
    Outcome::new(
        pass,
        format!(
            "dual {dual:.2e} (< 1e-7), primal {primal:.2e} (< 1e-6), smooth pasting u/u'/u'' \
             {:.1e}/{:.1e}/{:.1e} (< 1e-8)",
            sp[0], sp[1], sp[2]
        ),
    )
}

fn structure() -> Outcome {
    let (m, s, c) = base();
    let p = solve(&m, &s, &c).unwrap();
    let list = checks::structure(&p, 1000).unwrap();
    let failed: Vec<&str> = list.iter().filter(|k| !k.pass).map(|k| k.name.as_str()).collect();
    Outcome::new(
        failed.is_empty(),
        format!("{} checks, failing: [{}]", list.len(), failed.join(", ")),
    )
}

fn cross_oracle() -> Outcome {
    let m = MarketParams::default();
    let c = SolverControls::default();
    let cases = [
        ("power", make_power(0.75, 0.2, 0.5, 2.0).unwrap()),
        ("exponential", make_exponential(0.75, 1.0, 1.0, 1.0).unwrap()),
        ("sahara", make_sahara(0.75, 0.8, 0.1, 0.5, 0.1).unwrap()),
    ];
    let mut pass = true;
    let mut parts = Vec::new();
    for (name, s) in cases {
        let env = concavify(&s).unwrap();
        let p = PrimalSolution::new(shoot_y0(&m, &s, &env, &c).unwrap());
        let fd = solve_fd(&m, &s, &env, &FdConfig::default()).unwrap();
        let gap = fd_gap(&fd, &p, p.x0 / 2.0, 10.0 * p.x0).unwrap();
        pass &= gap < 0.01;
        parts.push(format!("{name} {gap:.2e}"));
    }
    Outcome::new(pass, format!("sup relative value gap {} (< 1e-2)", parts.join(", ")))
}

fn merton() -> Outcome {
    let m = MarketParams::default();
    let rep = merton_limit(&m, 0.2, &[(1e-3, 1e-3)], &SolverControls::default()).unwrap();
    let row = &rep.rows[0];
    let weight_ok = (rep.benchmark.weight - 3.125).abs() < 1e-12;
    let gamma_ok = (rep.benchmark.gamma_m - 0.330_937_5).abs() < 1e-12;
    let pass = weight_ok && gamma_ok && row.weight_gap_rel < 0.02 && row.consumption_gap_rel < 0.02;
    Outcome::new(
        pass,
        format!(
            "benchmark weight {} gamma_M {}; on [{:.3}, 5] weight gap {:.3}% consumption gap {:.3}% (< 2%)",
            rep.benchmark.weight,
            rep.benchmark.gamma_m,
            row.x_lo,
            100.0 * row.weight_gap_rel,
            100.0 * row.consumption_gap_rel
        ),
    )
}

fn aby22() -> Outcome {
    let m = MarketParams::default();
    let level = no_bankruptcy_level(&m, 0.75);
    let row = power_row(&m, 0.75, 100.0, &SolverControls::default()).unwrap();
    let level_ok = (level - 2.777_777_777_777_778).abs() < 1e-12;
    let pass = level_ok && row.min_weight_near_level < 0.1;
    Outcome::new(
        pass,
        format!(
            "level {level:.4}, x0 {:.4}, weight at level {:.4}, min weight in +-5% window {:.4} (< 0.1)",
            row.x0, row.weight_at_level, row.min_weight_near_level
        ),
    )
}

fn simulation() -> Outcome {
    let (m, s, c) = base();
    let p = solve(&m, &s, &c).unwrap();
    let mut parts = Vec::new();

    let cfg = SimConfig::default();
    let set = simulate(&p, &cfg).unwrap();
    let aborted = set.paths.iter().filter(|q| q.aborted.is_some()).count();
    let nonpositive = set
        .paths
        .iter()
        .filter(|q| !q.x.iter().chain(&q.h).chain(&q.w).all(|&v| v > 0.0 && v.is_finite()))
        .count();
    let positive = aborted == 0 && nonpositive == 0;
    parts.push(format!("{} paths, {nonpositive} nonpositive, {aborted} aborted", set.paths.len()));

    let trend = set.discounted_value(&p).unwrap();
    let at: Vec<(f64, f64, f64)> = [5.0, 10.0, 20.0, 40.0]
        .iter()
        .map(|&t| *trend.iter().find(|r| (r.0 - t).abs() < 1e-9).unwrap())
        .collect();
    let decreasing = at.windows(2).all(|w| w[1].1.abs() <= w[0].1.abs() + 2.0 * w[0].2.hypot(w[1].2));
    let v_init = p.value(cfg.x_init.unwrap_or(2.0 * p.x0)).unwrap().abs();
    let last = at[3];
    let small = last.1.abs() - 3.0 * last.2 < 0.1 * v_init;
    parts.push(format!(
        "E[e^-dT v(X_T)] at T=5,10,20,40: {} (|v(x_init)| {v_init:.4})",
        at.iter().map(|r| format!("{:.3e}+-{:.1e}", r.1, r.2)).collect::<Vec<_>>().join(", ")
    ));

    let aus = SimConfig {
        x_init: Some(p.x0 / 20.0),
        h_init: 2.0,
        horizon: 0.5,
        dt: 0.01,
        n_paths: 100,
        record_every: 1,
        ..Default::default()
    };
    let aset = simulate(&p, &aus).unwrap();
    let habit_err = aset
        .paths
        .iter()
        .flat_map(|q| aset.t.iter().zip(&q.h).map(|(t, h)| (h / (2.0 * (-m.rho * t).exp()) - 1.0).abs()))
        .fold(0.0, f64::max);
    let no_consumption = aset.paths.iter().all(|q| q.c.iter().all(|&c| c == 0.0));
    let austerity = habit_err < 1e-13 && no_consumption;
    parts.push(format!("austerity habit rel err {habit_err:.1e}"));

    let small_cfg = SimConfig { horizon: 5.0, n_paths: 200, seed: 7, ..Default::default() };
    let a = simulate(&p, &small_cfg).unwrap();
    let b = simulate(&p, &small_cfg).unwrap();
    let reproducible = a.paths == b.paths;
    parts.push(format!("reproducible {reproducible}"));

    let ls = level_study(&p, &SimConfig { horizon: 5.0, dt: 0.02, ..Default::default() }, 3).unwrap();
    let weak_ok = ls.weak_diff[1] < ls.weak_diff[0];
    parts.push(format!(
        "weak diffs dt=0.02/0.01 {:.2e}+-{:.1e}, 0.01/0.005 {:.2e}+-{:.1e}",
        ls.weak_diff[0], ls.weak_se[0], ls.weak_diff[1], ls.weak_se[1]
    ));

    let pass = positive && decreasing && small && austerity && reproducible && weak_ok;
    Outcome::new(pass, parts.join("; "))
}

fn envelopes() -> Outcome {
    let mut rng = ChaCha20Rng::seed_from_u64(20_240_601);
    let mut worst = (0.0f64, 0.0f64, 0.0f64);
    let mut counts = Vec::new();
    let mut check = |s: &UtilitySpec| {
        let env = concavify(s).unwrap();
        let k = envelope(s, &env, 10_000);
        worst.0 = worst.0.max(k.residual.abs());
        worst.1 = worst.1.max(k.max_shortfall);
        worst.2 = worst.2.max(k.max_mismatch);
    };
    let families: [(&str, Box<dyn Fn(&mut ChaCha20Rng) -> Option<UtilitySpec>>); 5] = [
        (
            "power",
            Box::new(|r| {
                make_power(r.random_range(0.1..2.0), r.random_range(0.05..0.95), r.random_range(0.05..1.0), r.random_range(1.0..10.0))
                    .ok()
            }),
        ),
        (
            "shifted power",
            Box::new(|r| {
                make_shifted_power(r.random_range(0.05..2.0), r.random_range(-3.0..-0.2), r.random_range(0.05..1.0), r.random_range(0.1..5.0))
                    .ok()
            }),
        ),
        (
            "exponential",
            Box::new(|r| {
                let alpha: f64 = r.random_range(0.1..2.0);
                let p: f64 = r.random_range(0.2..3.0);
                let q_max = if p * alpha >= 1.0 { 3.0 * p } else { (3.0 * p).min(-(1.0 - p * alpha).ln() / alpha) };
                let q = p + r.random_range(0.0..1.0) * (q_max - p);
                let kappa_max = p * alpha / (1.0 - (-q * alpha).exp());
                let kappa = 1.0 + r.random_range(0.0..1.0) * (kappa_max - 1.0);
                make_exponential(alpha, p, q, kappa).ok()
            }),
        ),
        (
            "sahara",
            Box::new(|r| {
                make_sahara(
                    r.random_range(0.2..2.0),
                    r.random_range(0.2..3.0),
                    r.random_range(0.05..1.0),
                    r.random_range(0.2..3.0),
                    r.random_range(0.05..1.0),
                )
                .ok()
            }),
        ),
        (
            "three-piece",
            Box::new(|r| make_aby22_approx(r.random_range(0.2..2.0), r.random_range(1.0..100.0), r.random_range(0.01..1.0)).ok()),
        ),
    ];
    for (name, draw) in &families {
        let mut accepted = 0;
        let mut tries = 0;
        while accepted < 100 && tries < 10_000 {
            tries += 1;
            if let Some(s) = draw(&mut rng) {
                check(&s);
                accepted += 1;
            }
        }
        counts.push(format!("{name} {accepted}"));
    }
    let all = counts.iter().all(|c| c.ends_with(" 100"));
    let pass = all && worst.0 < 1e-9 && worst.1 <= 1e-12 && worst.2 <= 1e-12;
    Outcome::new(
        pass,
        format!(
            "draws [{}]; worst residual {:.1e} (< 1e-9), dominance shortfall {:.1e} (<= 1e-12), branch mismatch {:.1e} (<= 1e-12)",
            counts.join(", "),
            worst.0,
            worst.1,
            worst.2
        ),
    )
}

fn main() -> ExitCode {
    println!("acceptance suite");
    let results = [
        criterion(1, "root bounds", 1e-3, root_bounds),
        criterion(2, "shooting correctness", 5.0, shooting),
        criterion(3, "equation residuals", 5.0, residuals),
        criterion(4, "structure suite", 5.0, structure),
        criterion(5, "finite-difference cross-oracle", 60.0, cross_oracle),
        criterion(6, "Merton limit", 10.0, merton),
        criterion(7, "habit-constraint phenomenon", 10.0, aby22),
        criterion(8, "simulation suite", 60.0, simulation),
        criterion(9, "envelope property suite", 5.0, envelopes),
    ];
    let passed = results.iter().filter(|&&p| p).count();
    println!("acceptance: {passed}/{} criteria passed", results.len());
    if passed == results.len() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
