use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use habitfbp_core::checks::{full_report, Check};
use habitfbp_core::config::{Config, SWEEP_PARAMS};
use habitfbp_core::fd::{fd_gap, solve_fd};
use habitfbp_core::limits::{self, Curve, SequenceReport};
use habitfbp_core::primal::geometric_grid;
use habitfbp_core::report::{num, write_csv, write_json, write_numeric_csv, Chart};
use habitfbp_core::simulate::simulate;
use habitfbp_core::{concavify, shoot_y0, Error, PrimalSolution};
use log::{info, warn};
use rayon::prelude::*;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::Case;

#[derive(Debug)]
pub enum CliError {
    /// Bad input: schema, parameters, unknown names.
    Usage(String),
    /// The numerical method could not complete or a check failed.
    Solver(String),
    Io(String),
}

impl CliError {
    pub fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Solver(_) => 3,
            CliError::Io(_) => 1,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Solver(m) | CliError::Io(m) => f.write_str(m),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let msg = e.to_string();
        match e {
            Error::Schema { .. } | Error::InvalidParameter(_) | Error::AssumptionViolated(_) | Error::IllPosedMerton(_) => {
                CliError::Usage(msg)
            }
            Error::Io(_) | Error::Csv(_) | Error::Json(_) => CliError::Io(msg),
            _ => CliError::Solver(msg),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

type Result<T> = std::result::Result<T, CliError>;

pub struct Context {
    cfg: Config,
    dir: PathBuf,
}

#[derive(Serialize)]
struct Header {
    family: &'static str,
    lambda: f64,
    lambda_prime: f64,
    gamma: f64,
    c0: f64,
    phi0: f64,
    u_at_zero: f64,
    y0: f64,
    x0: f64,
    y_min: f64,
    x_max: f64,
    bracket_width: f64,
    segments: usize,
    clamped_queries: usize,
}

fn header(p: &PrimalSolution) -> Header {
    let d = &p.dual;
    Header {
        family: d.spec.family().name(),
        lambda: d.roots.lam,
        lambda_prime: d.roots.lamp,
        gamma: d.roots.gamma,
        c0: d.envelope.c0,
        phi0: d.envelope.phi0,
        u_at_zero: d.envelope.u_at_zero,
        y0: d.y0,
        x0: p.x0,
        y_min: d.y_min,
        x_max: p.x_max,
        bracket_width: d.bracket_width,
        segments: d.segments,
        clamped_queries: p.clamp_count(),
    }
}

const POLICY_HEADER: [&str; 7] = ["x", "v", "dv", "c_star", "pi_star", "weight", "cw"];

fn policy_rows(p: &PrimalSolution, xs: &[f64]) -> Result<Vec<Vec<f64>>> {
    xs.iter()
        .map(|&x| {
            let q = p.eval(x)?;
            Ok(vec![x, q.v, q.dv, q.c, q.pi, q.pi / x, q.c / x])
        })
        .collect()
}

fn column(rows: &[Vec<f64>], k: usize) -> Vec<f64> {
    rows.iter().map(|r| r[k]).collect()
}

fn warn_clamps(p: &PrimalSolution, what: &str) {
    let n = p.clamp_count();
    if n > 0 {
        warn!("{what}: {n} queries beyond x_max = {} used the clamped tail", p.x_max);
    }
}

fn label_value(v: f64) -> String {
    format!("{v}")
}

fn write_curves(dir: &Path, curves: &[Curve]) -> Result<()> {
    let rows = curves.iter().flat_map(|c| {
        (0..c.x.len()).map(move |i| vec![c.label.clone(), num(c.x[i]), num(c.v[i]), num(c.weight[i]), num(c.cw[i])])
    });
    write_csv(dir.join("curves.csv"), &["label", "x", "v", "weight", "cw"], rows)?;
    Ok(())
}

fn curve_chart(title: &str, y_label: &str, curves: &[Curve], pick: fn(&Curve) -> &Vec<f64>, log_x: bool) -> Chart {
    let mut chart = Chart::new(title, "wealth-to-habit ratio x", y_label, log_x);
    for c in curves {
        chart = chart.line(c.label.clone(), &c.x, pick(c));
    }
    for c in curves {
        chart = chart.marker(format!("x0 {}", c.label), c.x0);
    }
    chart
}

fn sequence_charts(dir: &Path, name: &str, s: &SequenceReport, reference: Option<(f64, f64)>) -> Result<()> {
    let mut w = curve_chart(&format!("{name}: portfolio weight"), "pi/x", &s.curves, |c| &c.weight, true);
    let mut c = curve_chart(&format!("{name}: consumption rate"), "c/x", &s.curves, |c| &c.cw, true);
    if let (Some((weight, rate)), Some(first)) = (reference, s.curves.first()) {
        let xs = [first.x[0], *first.x.last().unwrap()];
        w = w.line("Merton", &xs, &[weight, weight]);
        c = c.line("Merton", &xs, &[rate, rate]);
    }
    w.write(dir.join("weight.svg"))?;
    c.write(dir.join("consumption.svg"))?;
    Ok(())
}

impl Context {
    pub fn load(path: Option<&Path>, out: &Path, seed: Option<u64>) -> Result<Self> {
        let mut cfg = match path {
            Some(p) => {
                let text = fs::read_to_string(p).map_err(|e| CliError::Usage(format!("{}: {e}", p.display())))?;
                Config::from_json(&text)?
            }
            None => Config::default(),
        };
        if let Some(s) = seed {
            cfg.simulation.seed = s;
        }
        cfg.validate()?;
        let digest = Sha256::digest(cfg.canonical_json().as_bytes());
        let dir = out.join(format!("run-{}", &hex::encode(digest)[..16]));
        fs::create_dir_all(&dir)?;
        write_json(dir.join("config.json"), &cfg)?;
        info!("run directory {}", dir.display());
        println!("{}", dir.display());
        Ok(Context { cfg, dir })
    }

    fn subdir(&self, name: &str) -> Result<PathBuf> {
        let d = self.dir.join(name);
        fs::create_dir_all(&d)?;
        Ok(d)
    }

    fn solve_config(cfg: &Config) -> Result<PrimalSolution> {
        let spec = cfg.utility.build()?;
        let env = concavify(&spec)?;
        Ok(PrimalSolution::new(shoot_y0(&cfg.market, &spec, &env, &cfg.solver)?))
    }

    fn policy_grid(&self, x0_lo: f64, x0_hi: f64, x_max: f64) -> Vec<f64> {
        let o = &self.cfg.output;
        let lo = o.x_lo_factor * x0_lo;
        let hi = (o.x_hi_factor * x0_hi).min(x_max);
        if o.log_x {
            geometric_grid(lo, hi, o.policy_points)
        } else {
            (0..o.policy_points).map(|i| lo + (hi - lo) * i as f64 / (o.policy_points - 1) as f64).collect()
        }
    }

    pub fn solve(&self) -> Result<()> {
        let p = Self::solve_config(&self.cfg)?;
        let d = &p.dual;
        let dual_rows: Vec<Vec<String>> = geometric_grid(d.y_min, d.envelope.phi0 * 10.0, self.cfg.output.policy_points)
            .into_iter()
            .map(|y| {
                let q = d.dual_u(y)?;
                let (branch, phi, psi) = if y > d.y0 {
                    ("euler", String::new(), String::new())
                } else {
                    let s = d.state(y);
                    ("nonlinear", num(s.phi), num(s.psi))
                };
                Ok(vec![
                    num(y),
                    branch.into(),
                    phi,
                    psi,
                    num(q.u),
                    num(q.du),
                    num(q.ddu),
                ])
            })
            .collect::<std::result::Result<_, Error>>()?;
        write_csv(self.dir.join("dual.csv"), &["y", "branch", "phi", "psi", "u", "du", "ddu"], dual_rows)?;
        let xs = self.policy_grid(p.x0, p.x0, p.x_max);
        let rows = policy_rows(&p, &xs)?;
        write_numeric_csv(self.dir.join("policy.csv"), &POLICY_HEADER, &rows)?;
        let log_x = self.cfg.output.log_x;
        let charts = [
            ("value.svg", "value function", "v", 1),
            ("weight.svg", "portfolio weight", "pi/x", 5),
            ("consumption.svg", "consumption rate", "c/x", 6),
        ];
        for (file, title, y, k) in charts {
            Chart::new(title, "wealth-to-habit ratio x", y, log_x)
                .line("solution", &xs, &column(&rows, k))
                .marker("x0", p.x0)
                .write(self.dir.join(file))?;
        }
        warn_clamps(&p, "solve");
        write_json(self.dir.join("header.json"), &header(&p))?;
        println!("y0 = {}  x0 = {}", d.y0, p.x0);
        Ok(())
    }

    pub fn sweep(&self, param: &str, values: &[f64]) -> Result<()> {
        if !SWEEP_PARAMS.contains(&param) {
            return Err(CliError::Usage(format!(
                "unknown sweep parameter {param}; expected one of {}",
                SWEEP_PARAMS.join(", ")
            )));
        }
        let cfgs = values
            .iter()
            .map(|&v| {
                let c = self.cfg.with_param(param, v)?;
                c.validate()?;
                Ok(c)
            })
            .collect::<std::result::Result<Vec<_>, Error>>()?;
        let sols = cfgs.par_iter().map(Self::solve_config).collect::<Result<Vec<_>>>()?;
        let dir = self.subdir(&format!("sweep-{param}"))?;
        let lo = sols.iter().map(|s| s.x0).fold(f64::INFINITY, f64::min);
        let hi = sols.iter().map(|s| s.x0).fold(0.0, f64::max);
        let x_max = sols.iter().map(|s| s.x_max).fold(f64::INFINITY, f64::min);
        let xs = self.policy_grid(lo, hi, x_max);
        let log_x = self.cfg.output.log_x;
        let mut charts = [
            (Chart::new(&format!("value function, {param} sweep"), "wealth-to-habit ratio x", "v", log_x), 1, "value.svg"),
            (Chart::new(&format!("portfolio weight, {param} sweep"), "wealth-to-habit ratio x", "pi/x", log_x), 5, "weight.svg"),
            (Chart::new(&format!("consumption rate, {param} sweep"), "wealth-to-habit ratio x", "c/x", log_x), 6, "consumption.svg"),
        ];
        let mut headers = Vec::new();
        for (v, p) in values.iter().zip(&sols) {
            let rows = policy_rows(p, &xs)?;
            let tag = format!("{param}={}", label_value(*v));
            write_numeric_csv(dir.join(format!("policy-{tag}.csv")), &POLICY_HEADER, &rows)?;
            for (chart, k, _) in charts.iter_mut() {
                *chart = std::mem::take(chart).line(tag.clone(), &xs, &column(&rows, *k)).marker(format!("x0 {tag}"), p.x0);
            }
            warn_clamps(p, &tag);
            headers.push(serde_json::json!({ "param": param, "value": v, "header": header(p) }));
        }
        for (chart, _, file) in &charts {
            chart.write(dir.join(file))?;
        }
        write_json(dir.join("headers.json"), &headers)?;
        for (v, p) in values.iter().zip(&sols) {
            println!("{param} = {v}: x0 = {}", p.x0);
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let p = Self::solve_config(&self.cfg)?;
        let d = &p.dual;
        let mut checks = vec![Check::below("envelope residual", d.envelope.residual(&d.spec).abs(), 1e-10)];
        checks.extend(full_report(&p)?);
        let fd = solve_fd(&d.market, &d.spec, &d.envelope, &self.cfg.fd)?;
        let gap = fd_gap(&fd, &p, 0.5 * p.x0, 10.0 * p.x0)?;
        checks.push(Check::below("finite-difference value gap", gap, 1e-2));
        checks.push(Check::count("finite-difference portfolio cap binding", fd.cap_binding));
        if let Some(s) = fd.suggestion() {
            warn!("{s}");
        }
        let fd_rows: Vec<Vec<f64>> = (0..fd.x.len()).map(|i| vec![fd.x[i], fd.v[i], fd.c[i], fd.pi[i]]).collect();
        write_numeric_csv(self.dir.join("fd.csv"), &["x", "v_fd", "c_fd", "pi_fd"], &fd_rows)?;
        let pass = checks.iter().all(|c| c.pass);
        for c in &checks {
            println!("{} {}: {:.3e} (threshold {:.0e})", if c.pass { "PASS" } else { "FAIL" }, c.name, c.value, c.threshold);
        }
        #[derive(Serialize)]
        struct Validation<'a> {
            pass: bool,
            fd_iterations: usize,
            fd_policy_change: f64,
            checks: &'a [Check],
        }
        write_json(
            self.dir.join("validate.json"),
            &Validation { pass, fd_iterations: fd.iterations, fd_policy_change: fd.policy_change, checks: &checks },
        )?;
        if pass {
            Ok(())
        } else {
            let failed: Vec<&str> = checks.iter().filter(|c| !c.pass).map(|c| c.name.as_str()).collect();
            Err(CliError::Solver(format!("failed checks: {}", failed.join(", "))))
        }
    }

    pub fn simulate(&self) -> Result<()> {
        let p = Self::solve_config(&self.cfg)?;
        let set = simulate(&p, &self.cfg.simulation)?;
        let summary = set.summary();
        let keep = self.cfg.output.paths_csv.min(set.paths.len());
        let rows = set.paths[..keep].iter().enumerate().flat_map(|(i, path)| {
            let t = &set.t;
            (0..t.len()).map(move |j| {
                vec![
                    i.to_string(),
                    num(t[j]),
                    num(path.x[j]),
                    num(path.h[j]),
                    num(path.w[j]),
                    num(path.c[j]),
                    num(path.pi[j]),
                ]
            })
        });
        write_csv(self.dir.join("paths.csv"), &["path", "t", "X", "H", "W", "C", "Pi"], rows)?;
        let trend = set.discounted_value(&p)?;
        #[derive(Serialize)]
        struct Trend {
            t: f64,
            mean: f64,
            se: f64,
        }
        #[derive(Serialize)]
        struct SimReport<'a> {
            x0: f64,
            x_init: f64,
            seed: u64,
            wealth_gap: f64,
            min_x: f64,
            transversality: Vec<Trend>,
            summary: &'a habitfbp_core::simulate::Summary,
        }
        let min_x = set.completed().flat_map(|q| q.x.iter().copied()).fold(f64::INFINITY, f64::min);
        let report = SimReport {
            x0: p.x0,
            x_init: self.cfg.simulation.x_init.unwrap_or(2.0 * p.x0),
            seed: self.cfg.simulation.seed,
            wealth_gap: set.wealth_gap(),
            min_x,
            transversality: trend.iter().map(|&(t, mean, se)| Trend { t, mean, se }).collect(),
            summary: &summary,
        };
        write_json(self.dir.join("summary.json"), &report)?;
        let m = &summary;
        Chart::new("wealth-to-habit ratio", "time t", "X", false)
            .line("mean", &m.t, &m.mean.X)
            .line("5%", &m.t, &m.q05.X)
            .line("median", &m.t, &m.q50.X)
            .line("95%", &m.t, &m.q95.X)
            .write(self.dir.join("ratio.svg"))?;
        let ts: Vec<f64> = trend.iter().map(|r| r.0).collect();
        let ms: Vec<f64> = trend.iter().map(|r| r.1).collect();
        Chart::new("discounted value", "time t", "E[exp(-delta t) v(X_t)]", false)
            .line("mean", &ts, &ms)
            .write(self.dir.join("transversality.svg"))?;
        if summary.aborted > 0 {
            warn!("{} paths aborted", summary.aborted);
        }
        if summary.clamp_events > 0 {
            warn!("{} policy queries beyond x_max used the clamped tail", summary.clamp_events);
        }
        println!("paths = {}  aborted = {}  min X = {min_x}", summary.n_paths, summary.aborted);
        Ok(())
    }

    pub fn limits(&self, case: Case) -> Result<()> {
        let cases = match case {
            Case::All => vec![Case::Merton, Case::FixedReference, Case::Rogers, Case::Aby22],
            c => vec![c],
        };
        let l = &self.cfg.limits;
        let ctl = &self.cfg.solver;
        for c in cases {
            match c {
                Case::Merton => {
                    let dir = self.subdir("limits-merton")?;
                    let r = limits::merton_limit(&self.cfg.market, l.merton.p, &l.merton.pairs, ctl)?;
                    write_json(dir.join("report.json"), &r)?;
                    write_curves(&dir, &r.curves)?;
                    let mut w = curve_chart("Merton limit: portfolio weight", "pi/x", &r.curves, |c| &c.weight, true);
                    let mut k = curve_chart("Merton limit: consumption rate", "c/x", &r.curves, |c| &c.cw, true);
                    w = w.line("Merton", &[0.5, 5.0], &[r.benchmark.weight; 2]);
                    k = k.line("Merton", &[0.5, 5.0], &[r.benchmark.gamma_m; 2]);
                    w.write(dir.join("weight.svg"))?;
                    k.write(dir.join("consumption.svg"))?;
                    for row in &r.rows {
                        println!(
                            "merton alpha = {} rho = {}: weight gap {:.3}%  consumption gap {:.3}%",
                            row.alpha,
                            row.rho,
                            100.0 * row.weight_gap_rel,
                            100.0 * row.consumption_gap_rel
                        );
                    }
                }
                Case::FixedReference => {
                    let dir = self.subdir("limits-fixed-reference")?;
                    let r = limits::fixed_reference_limit(&limits::fixed_reference_market(), &l.fixed_reference.rhos, ctl)?;
                    write_json(dir.join("report.json"), &r)?;
                    write_curves(&dir, &r.curves)?;
                    sequence_charts(&dir, "fixed reference", &r, None)?;
                    println!("fixed reference gaps {:?} monotone {}", r.weight_gaps, r.monotone);
                }
                Case::Rogers => {
                    let dir = self.subdir("limits-rogers")?;
                    let r = limits::rogers_limit(&limits::rogers_market(), &l.rogers.alphas, ctl)?;
                    write_json(dir.join("report.json"), &r)?;
                    write_curves(&dir, &r.sequence.curves)?;
                    let bench = Some((r.benchmark.weight, r.benchmark.gamma_m));
                    sequence_charts(&dir, "multiplicative habit", &r.sequence, bench)?;
                    println!("rogers x0 {:?} gaps {:?}", r.sequence.x0, r.sequence.weight_gaps);
                }
                _ => {
                    let dir = self.subdir("limits-aby22")?;
                    let a = &l.aby22;
                    let r = limits::aby22_limit(&self.cfg.market, a.alpha, &a.pairs, &a.power_kappas, ctl)?;
                    write_json(dir.join("report.json"), &r)?;
                    write_curves(&dir, &r.sequence.curves)?;
                    sequence_charts(&dir, "habit constraint", &r.sequence, None)?;
                    for row in &r.rows {
                        println!(
                            "aby22 kappa = {} epsilon = {}: weight at level {:.4}, min near level {:.4}",
                            row.kappa, row.epsilon, row.weight_at_level, row.min_weight_near_level
                        );
                    }
                    for row in &r.power_rows {
                        println!("power kappa = {}: min weight near level {:.4}", row.kappa, row.min_weight_near_level);
                    }
                }
            }
        }
        Ok(())
    }
}
