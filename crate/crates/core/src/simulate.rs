//! Monte Carlo simulation of the optimally controlled state.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::primal::PrimalSolution;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    #[default]
    LogEuler,
}

/// Simulation settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    /// Initial wealth-to-habit ratio; twice the austerity threshold when absent.
    pub x_init: Option<f64>,
    pub h_init: f64,
    pub horizon: f64,
    pub dt: f64,
    pub n_paths: usize,
    pub seed: u64,
    pub scheme: Scheme,
    /// Steps between stored observations.
    pub record_every: usize,
    /// Drops the Brownian term from every equation.
    #[serde(skip)]
    pub zero_volatility: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            x_init: None,
            h_init: 1.0,
            horizon: 40.0,
            dt: 0.01,
            n_paths: 10_000,
            seed: 42,
            scheme: Scheme::LogEuler,
            record_every: 100,
            zero_volatility: false,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if let Some(x) = self.x_init {
            if !(x > 0.0) || !x.is_finite() {
                return bad(format!("simulation.x_init must be positive, got {x}"));
            }
        }
        if !(self.h_init > 0.0) || !self.h_init.is_finite() {
            return bad(format!("simulation.h_init must be positive, got {}", self.h_init));
        }
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return bad(format!("simulation.dt must be positive, got {}", self.dt));
        }
        if !(self.horizon >= self.dt) || !self.horizon.is_finite() {
            return bad(format!("simulation.horizon must be at least dt, got {}", self.horizon));
        }
        if self.n_paths == 0 {
            return bad("simulation.n_paths must be at least 1".into());
        }
        if self.record_every == 0 {
            return bad("simulation.record_every must be at least 1".into());
        }
        Ok(())
    }

    /// Number of steps; the step is adjusted so they tile the horizon exactly.
    pub fn steps(&self) -> usize {
        ((self.horizon / self.dt).round() as usize).max(1)
    }
}

/// One simulated path observed on the record grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Path {
    pub x: Vec<f64>,
    pub h: Vec<f64>,
    pub w: Vec<f64>,
    pub c: Vec<f64>,
    pub pi: Vec<f64>,
    /// Terminal wealth from an Euler discretisation of the wealth equation
    /// driven by the same increments.
    pub w_sde: f64,
    /// Steps on which the ratio crossed the austerity threshold.
    pub crossings: usize,
    pub aborted: Option<String>,
}

/// Per-time cross-sectional statistics for each recorded quantity.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[allow(non_snake_case)]
pub struct Series {
    pub X: Vec<f64>,
    pub H: Vec<f64>,
    pub W: Vec<f64>,
    pub C: Vec<f64>,
    pub Pi: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub t: Vec<f64>,
    pub n_paths: usize,
    pub aborted: usize,
    pub clamp_events: usize,
    pub crossings: usize,
    pub mean: Series,
    pub q05: Series,
    pub q50: Series,
    pub q95: Series,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PathSet {
    pub t: Vec<f64>,
    pub paths: Vec<Path>,
    pub clamp_events: usize,
}

struct Stepper<'a> {
    primal: &'a PrimalSolution,
    dt: f64,
    decay: f64,
    sigma: f64,
}

struct State {
    z: f64,
    h: f64,
    w_sde: f64,
}

impl Stepper<'_> {
    fn new(primal: &PrimalSolution, dt: f64, zero_volatility: bool) -> Stepper<'_> {
        let m = &primal.dual.market;
        Stepper { primal, dt, decay: (-m.rho * dt).exp(), sigma: if zero_volatility { 0.0 } else { m.sigma } }
    }

    /// Advances one step with Brownian increment `db`; returns the policy used.
    fn step(&self, s: &mut State, db: f64) -> Result<(f64, f64)> {
        let m = &self.primal.dual.market;
        let x = s.z.exp();
        let (c, pi) = self.primal.policy(x)?;
        let theta = pi / x;
        let vol = self.sigma * theta;
        let drift = m.r + m.rho + m.mu * theta - (1.0 / x + m.rho) * c - 0.5 * vol * vol;
        let cons = c * s.h;
        let risky = pi * s.h;
        s.w_sde += (m.r * s.w_sde + m.mu * risky - cons) * self.dt + self.sigma * risky * db;
        s.h = s.h * self.decay + cons * (1.0 - self.decay);
        s.z += drift * self.dt + vol * db;
        if !s.z.is_finite() || !s.h.is_finite() || !(s.h > 0.0) {
            return Err(Error::Simulation(format!("non-finite state after step from x = {x}")));
        }
        Ok((c, pi))
    }
}

fn normal() -> Normal {
    Normal::standard()
}

/// Standard normal draw by inversion of a 53-bit uniform on (0, 1).
fn draw(rng: &mut ChaCha20Rng, n: &Normal) -> f64 {
    let u = ((rng.next_u64() >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64);
    n.inverse_cdf(u)
}

fn path_rng(seed: u64, index: usize) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

fn x_start(primal: &PrimalSolution, cfg: &SimConfig) -> f64 {
    cfg.x_init.unwrap_or(2.0 * primal.x0)
}

/// Simulates `cfg.n_paths` independent paths in parallel.
pub fn simulate(primal: &PrimalSolution, cfg: &SimConfig) -> Result<PathSet> {
    cfg.validate()?;
    let n_steps = cfg.steps();
    let dt = cfg.horizon / n_steps as f64;
    let rec: Vec<usize> = (0..=n_steps).filter(|k| k % cfg.record_every == 0 || *k == n_steps).collect();
    let t: Vec<f64> = rec.iter().map(|&k| k as f64 * dt).collect();
    let before = primal.clamp_count();
    let stepper = Stepper::new(primal, dt, cfg.zero_volatility);
    let x0 = x_start(primal, cfg);
    let paths: Vec<Path> =
        (0..cfg.n_paths).into_par_iter().map(|i| run_path(&stepper, cfg, x0, i, n_steps, rec.len())).collect();
    let aborted = paths.iter().filter(|p| p.aborted.is_some()).count();
    if aborted > 0 {
        log::warn!("{aborted} simulated paths aborted");
    }
    Ok(PathSet { t, paths, clamp_events: primal.clamp_count() - before })
}

fn run_path(st: &Stepper, cfg: &SimConfig, x_init: f64, index: usize, n_steps: usize, n_rec: usize) -> Path {
    let mut rng = path_rng(cfg.seed, index);
    let nd = normal();
    let sq = st.dt.sqrt();
    let x0 = st.primal.x0;
    let mut s = State { z: x_init.ln(), h: cfg.h_init, w_sde: x_init * cfg.h_init };
    let mut p = Path {
        x: Vec::with_capacity(n_rec),
        h: Vec::with_capacity(n_rec),
        w: Vec::with_capacity(n_rec),
        c: Vec::with_capacity(n_rec),
        pi: Vec::with_capacity(n_rec),
        w_sde: f64::NAN,
        crossings: 0,
        aborted: None,
    };
    let record = |p: &mut Path, s: &State, c: f64, pi: f64| {
        let x = s.z.exp();
        p.x.push(x);
        p.h.push(s.h);
        p.w.push(x * s.h);
        p.c.push(c * s.h);
        p.pi.push(pi * s.h);
    };
    for k in 0..n_steps {
        let below = s.z.exp() < x0;
        let db = sq * draw(&mut rng, &nd);
        let snapshot = (k % cfg.record_every == 0).then(|| State { ..s });
        match st.step(&mut s, db) {
            Ok((c, pi)) => {
                if let Some(old) = snapshot {
                    record(&mut p, &old, c, pi);
                }
            }
            Err(e) => {
                p.aborted = Some(format!("path {index}, step {k}: {e}"));
                return p;
            }
        }
        if (s.z.exp() < x0) != below {
            p.crossings += 1;
        }
    }
    match st.primal.policy(s.z.exp()) {
        Ok((c, pi)) => record(&mut p, &s, c, pi),
        Err(e) => p.aborted = Some(format!("path {index}, terminal policy: {e}")),
    }
    p.w_sde = s.w_sde;
    p
}

impl PathSet {
    /// Paths that ran to the horizon.
    pub fn completed(&self) -> impl Iterator<Item = &Path> {
        self.paths.iter().filter(|p| p.aborted.is_none())
    }

    pub fn summary(&self) -> Summary {
        let nt = self.t.len();
        let stat = |get: &dyn Fn(&Path) -> &Vec<f64>, f: &dyn Fn(&mut Vec<f64>) -> f64| -> Vec<f64> {
            (0..nt)
                .map(|j| {
                    let mut col: Vec<f64> = self.completed().map(|p| get(p)[j]).collect();
                    f(&mut col)
                })
                .collect()
        };
        let series = |f: &dyn Fn(&mut Vec<f64>) -> f64| Series {
            X: stat(&|p| &p.x, f),
            H: stat(&|p| &p.h, f),
            W: stat(&|p| &p.w, f),
            C: stat(&|p| &p.c, f),
            Pi: stat(&|p| &p.pi, f),
        };
        let mean = |v: &mut Vec<f64>| if v.is_empty() { f64::NAN } else { v.iter().sum::<f64>() / v.len() as f64 };
        Summary {
            t: self.t.clone(),
            n_paths: self.paths.len(),
            aborted: self.paths.len() - self.completed().count(),
            clamp_events: self.clamp_events,
            crossings: self.paths.iter().map(|p| p.crossings).sum(),
            mean: series(&mean),
            q05: series(&|v| quantile(v, 0.05)),
            q50: series(&|v| quantile(v, 0.5)),
            q95: series(&|v| quantile(v, 0.95)),
        }
    }

    /// Sample mean and standard error of `e^{-delta t} v(X_t)` at each record time.
    pub fn discounted_value(&self, primal: &PrimalSolution) -> Result<Vec<(f64, f64, f64)>> {
        let delta = primal.dual.market.delta;
        let mut out = Vec::with_capacity(self.t.len());
        for (j, &t) in self.t.iter().enumerate() {
            let d = (-delta * t).exp();
            let vals = self.completed().map(|p| Ok(d * primal.value(p.x[j])?)).collect::<Result<Vec<f64>>>()?;
            let (mean, se) = mean_se(&vals);
            out.push((t, mean, se));
        }
        Ok(out)
    }

    /// Mean relative gap between terminal wealth from the wealth equation and
    /// from the ratio times habit.
    pub fn wealth_gap(&self) -> f64 {
        let gaps: Vec<f64> = self
            .completed()
            .map(|p| {
                let w = *p.w.last().unwrap();
                (p.w_sde - w).abs() / w
            })
            .collect();
        mean_se(&gaps).0
    }
}

/// Linear-interpolation quantile; sorts `v` in place.
pub fn quantile(v: &mut [f64], q: f64) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(f64::total_cmp);
    let pos = q * (v.len() - 1) as f64;
    let k = pos.floor() as usize;
    let frac = pos - k as f64;
    if k + 1 < v.len() {
        v[k] + frac * (v[k + 1] - v[k])
    } else {
        v[k]
    }
}

pub fn mean_se(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, f64::NAN);
    }
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Terminal statistics of coupled runs at `dt, dt/2, ..., dt/2^(levels-1)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LevelStudy {
    pub dt: Vec<f64>,
    /// `E[X_T]` per level.
    pub mean_x: Vec<f64>,
    /// `|E[X_T^l] - E[X_T^{l+1}]|`.
    pub weak_diff: Vec<f64>,
    /// Standard error of each entry of `weak_diff`.
    pub weak_se: Vec<f64>,
    /// `E|X_T^l - X_T^{l+1}|`.
    pub strong_diff: Vec<f64>,
    /// Mean relative terminal wealth gap per level.
    pub wealth_gap: Vec<f64>,
}

/// Runs every level on the same Brownian paths, coarse increments being sums
/// of fine ones.
pub fn level_study(primal: &PrimalSolution, cfg: &SimConfig, levels: usize) -> Result<LevelStudy> {
    cfg.validate()?;
    if levels < 2 {
        return Err(Error::InvalidParameter("level study needs at least two levels".into()));
    }
    let n0 = cfg.steps();
    let dt0 = cfg.horizon / n0 as f64;
    let fine = n0 << (levels - 1);
    let x_init = x_start(primal, cfg);
    let steppers: Vec<Stepper> =
        (0..levels).map(|l| Stepper::new(primal, dt0 / (1u64 << l) as f64, cfg.zero_volatility)).collect();
    let per_path: Vec<Result<Vec<(f64, f64)>>> = (0..cfg.n_paths)
        .into_par_iter()
        .map(|i| {
            let mut rng = path_rng(cfg.seed, i);
            let nd = normal();
            let sq = (dt0 / (1u64 << (levels - 1)) as f64).sqrt();
            let db: Vec<f64> = (0..fine).map(|_| sq * draw(&mut rng, &nd)).collect();
            steppers
                .iter()
                .enumerate()
                .map(|(l, st)| {
                    let group = 1usize << (levels - 1 - l);
                    let mut s = State { z: x_init.ln(), h: cfg.h_init, w_sde: x_init * cfg.h_init };
                    for chunk in db.chunks(group) {
                        st.step(&mut s, chunk.iter().sum())?;
                    }
                    let x = s.z.exp();
                    Ok((x, (s.w_sde - x * s.h).abs() / (x * s.h)))
                })
                .collect()
        })
        .collect();
    let per_path = per_path.into_iter().collect::<Result<Vec<_>>>()?;
    let n = per_path.len() as f64;
    let mean_x: Vec<f64> = (0..levels).map(|l| per_path.iter().map(|p| p[l].0).sum::<f64>() / n).collect();
    let wealth_gap: Vec<f64> = (0..levels).map(|l| per_path.iter().map(|p| p[l].1).sum::<f64>() / n).collect();
    let weak_diff = mean_x.windows(2).map(|w| (w[0] - w[1]).abs()).collect();
    let weak_se = (0..levels - 1)
        .map(|l| mean_se(&per_path.iter().map(|p| p[l].0 - p[l + 1].0).collect::<Vec<_>>()).1)
        .collect();
    let strong_diff =
        (0..levels - 1).map(|l| per_path.iter().map(|p| (p[l].0 - p[l + 1].0).abs()).sum::<f64>() / n).collect();
    Ok(LevelStudy {
        dt: (0..levels).map(|l| dt0 / (1u64 << l) as f64).collect(),
        mean_x,
        weak_diff,
        weak_se,
        strong_diff,
        wealth_gap,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dual::{shoot_y0, SolverControls};
    use crate::market::MarketParams;
    use crate::utility::{concavify, make_power};

    fn solve() -> PrimalSolution {
        let m = MarketParams::default();
        let s = make_power(0.75, 0.2, 0.5, 2.0).unwrap();
        let e = concavify(&s).unwrap();
        PrimalSolution::new(shoot_y0(&m, &s, &e, &SolverControls::default()).unwrap())
    }

    #[test]
    fn quantiles() {
        let mut v = vec![3.0, 1.0, 2.0, 4.0, 5.0];
        assert_eq!(quantile(&mut v, 0.5), 3.0);
        assert_eq!(quantile(&mut v, 0.0), 1.0);
        assert_eq!(quantile(&mut v, 1.0), 5.0);
        assert_eq!(quantile(&mut v, 0.25), 2.0);
    }

    #[test]
    fn streams_do_not_depend_on_path_count() {
        let nd = normal();
        let a: Vec<f64> = {
            let mut r = path_rng(7, 3);
            (0..5).map(|_| draw(&mut r, &nd)).collect()
        };
        let b: Vec<f64> = {
            let mut r = path_rng(7, 3);
            (0..5).map(|_| draw(&mut r, &nd)).collect()
        };
        let c: Vec<f64> = {
            let mut r = path_rng(7, 4);
            (0..5).map(|_| draw(&mut r, &nd)).collect()
        };
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn austerity_habit_decays_exactly() {
        let p = solve();
        let cfg = SimConfig {
            x_init: Some(p.x0 / 20.0),
            h_init: 2.0,
            horizon: 0.5,
            dt: 0.01,
            n_paths: 16,
            record_every: 1,
            ..Default::default()
        };
        let set = simulate(&p, &cfg).unwrap();
        let rho = p.dual.market.rho;
        for path in &set.paths {
            assert!(path.c.iter().all(|&c| c == 0.0));
            for (t, h) in set.t.iter().zip(&path.h) {
                assert!((h - 2.0 * (-rho * t).exp()).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn reproducible_and_prefix_stable() {
        let p = solve();
        let cfg = SimConfig { horizon: 2.0, n_paths: 8, record_every: 10, ..Default::default() };
        let a = simulate(&p, &cfg).unwrap();
        let b = simulate(&p, &cfg).unwrap();
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
        let c = simulate(&p, &SimConfig { n_paths: 3, ..cfg }).unwrap();
        assert_eq!(c.paths[..], a.paths[..3]);
    }

    #[test]
    fn invalid_configs() {
        assert!(SimConfig { dt: 0.0, ..Default::default() }.validate().is_err());
        assert!(SimConfig { horizon: 0.001, ..Default::default() }.validate().is_err());
        assert!(SimConfig { n_paths: 0, ..Default::default() }.validate().is_err());
        assert!(SimConfig { x_init: Some(-1.0), ..Default::default() }.validate().is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;
        use std::sync::OnceLock;

        fn shared() -> &'static PrimalSolution {
            static P: OnceLock<PrimalSolution> = OnceLock::new();
            P.get_or_init(solve)
        }

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(24))]

            #[test]
            fn paths_stay_positive_and_repeat(seed in any::<u64>(), start in 0.05..5.0f64) {
                let p = shared();
                let cfg = SimConfig {
                    x_init: Some(start * p.x0),
                    horizon: 2.0,
                    n_paths: 16,
                    seed,
                    record_every: 5,
                    ..Default::default()
                };
                let a = simulate(p, &cfg).unwrap();
                for path in &a.paths {
                    prop_assert!(path.aborted.is_none());
                    prop_assert!(path.x.iter().all(|&x| x > 0.0 && x.is_finite()));
                    prop_assert!(path.h.iter().all(|&h| h > 0.0));
                    prop_assert!(path.w.iter().all(|&w| w > 0.0));
                    prop_assert!(path.c.iter().all(|&c| c >= 0.0));
                }
                let b = simulate(p, &cfg).unwrap();
                prop_assert_eq!(a.paths, b.paths);
            }
        }
    }
}
