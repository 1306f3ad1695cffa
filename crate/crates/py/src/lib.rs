//! Python bindings for the habit-formation consumption/investment solver.

use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use habitfbp_core::checks;
use habitfbp_core::fd::{fd_gap, solve_fd, FdConfig};
use habitfbp_core::simulate::{simulate as run_simulation, SimConfig};
use habitfbp_core::{concavify, merton, shoot_y0, solve_roots, Config, Error, Family, MarketParams, PrimalSolution, SolverControls};

fn to_py(e: Error) -> PyErr {
    match e {
        Error::InvalidParameter(_)
        | Error::AssumptionViolated(_)
        | Error::IllPosedMerton(_)
        | Error::Schema { .. } => PyValueError::new_err(e.to_string()),
        Error::Io(_) => PyIOError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

/// Market coefficients: interest rate, drift excess, volatility, habit persistence, discount rate.
#[pyclass(frozen, from_py_object)]
#[derive(Clone)]
pub struct Market {
    inner: MarketParams,
}

#[pymethods]
impl Market {
    #[new]
    #[pyo3(signature = (r = 0.02, mu = 0.1, sigma = 0.2, rho = 1.0, delta = 0.3))]
    fn new(r: f64, mu: f64, sigma: f64, rho: f64, delta: f64) -> PyResult<Self> {
        Ok(Market { inner: MarketParams::new(r, mu, sigma, rho, delta).map_err(to_py)? })
    }

    #[getter]
    fn r(&self) -> f64 {
        self.inner.r
    }
    #[getter]
    fn mu(&self) -> f64 {
        self.inner.mu
    }
    #[getter]
    fn sigma(&self) -> f64 {
        self.inner.sigma
    }
    #[getter]
    fn rho(&self) -> f64 {
        self.inner.rho
    }
    #[getter]
    fn delta(&self) -> f64 {
        self.inner.delta
    }

    /// `(lambda, lambda_prime, gamma)` of the characteristic quadratic.
    fn roots(&self) -> (f64, f64, f64) {
        let r = solve_roots(&self.inner);
        (r.lam, r.lamp, r.gamma)
    }

    /// `(consumption rate, risky weight)` of the benchmark without habit or loss aversion.
    fn merton(&self, p: f64) -> PyResult<(f64, f64)> {
        let b = merton(&self.inner, p).map_err(to_py)?;
        Ok((b.gamma_m, b.weight))
    }

    fn __repr__(&self) -> String {
        let m = &self.inner;
        format!("Market(r={}, mu={}, sigma={}, rho={}, delta={})", m.r, m.mu, m.sigma, m.rho, m.delta)
    }
}

/// S-shaped utility around a reference level `alpha`.
#[pyclass(frozen, from_py_object)]
#[derive(Clone)]
pub struct Utility {
    family: Family,
}

impl Utility {
    fn checked(family: Family) -> PyResult<Self> {
        family.build().map_err(to_py)?;
        Ok(Utility { family })
    }
}

#[pymethods]
impl Utility {
    #[staticmethod]
    fn power(alpha: f64, p: f64, q: f64, kappa: f64) -> PyResult<Self> {
        Self::checked(Family::Power { alpha, p, q, kappa })
    }

    #[staticmethod]
    fn shifted_power(alpha: f64, p: f64, q: f64, kappa: f64) -> PyResult<Self> {
        Self::checked(Family::ShiftedPower { alpha, p, q, kappa })
    }

    #[staticmethod]
    fn exponential(alpha: f64, p: f64, q: f64, kappa: f64) -> PyResult<Self> {
        Self::checked(Family::Exponential { alpha, p, q, kappa })
    }

    #[staticmethod]
    fn sahara(alpha: f64, gamma1: f64, beta1: f64, gamma2: f64, beta2: f64) -> PyResult<Self> {
        Self::checked(Family::Sahara { alpha, gamma1, beta1, gamma2, beta2 })
    }

    #[staticmethod]
    fn aby22(alpha: f64, kappa: f64, epsilon: f64) -> PyResult<Self> {
        Self::checked(Family::Aby22 { alpha, kappa, epsilon })
    }

    #[getter]
    fn family(&self) -> &'static str {
        self.family.name()
    }

    #[getter]
    fn alpha(&self) -> f64 {
        self.family.alpha()
    }

    /// Utility of consumption `c >= 0`.
    fn __call__(&self, c: f64) -> PyResult<f64> {
        Ok(self.family.build().map_err(to_py)?.u(c))
    }

    /// `(c0, phi0, U(0))` of the concave envelope.
    fn envelope(&self) -> PyResult<(f64, f64, f64)> {
        let spec = self.family.build().map_err(to_py)?;
        let e = concavify(&spec).map_err(to_py)?;
        Ok((e.c0, e.phi0, e.u_at_zero))
    }

    /// Value of the concave envelope at `c >= 0`.
    fn concave_value(&self, c: f64) -> PyResult<f64> {
        let spec = self.family.build().map_err(to_py)?;
        Ok(concavify(&spec).map_err(to_py)?.value(&spec, c))
    }

    fn to_json(&self) -> String {
        serde_json::to_string(&self.family).expect("family serialises")
    }

    fn __repr__(&self) -> String {
        format!("Utility({})", self.to_json())
    }
}

/// Value function and optimal policies of one solved problem.
#[pyclass(frozen)]
pub struct Solution {
    inner: PrimalSolution,
}

#[pymethods]
impl Solution {
    /// Free boundary of the dual problem.
    #[getter]
    fn y0(&self) -> f64 {
        self.inner.dual.y0
    }

    /// Austerity threshold.
    #[getter]
    fn x0(&self) -> f64 {
        self.inner.x0
    }

    #[getter]
    fn x_max(&self) -> f64 {
        self.inner.x_max
    }

    #[getter]
    fn c0(&self) -> f64 {
        self.inner.dual.envelope.c0
    }

    #[getter]
    fn phi0(&self) -> f64 {
        self.inner.dual.envelope.phi0
    }

    fn value(&self, x: f64) -> PyResult<f64> {
        self.inner.value(x).map_err(to_py)
    }

    fn marginal(&self, x: f64) -> PyResult<f64> {
        self.inner.marginal(x).map_err(to_py)
    }

    /// `(consumption, risky amount)` per unit of habit at ratio `x`.
    fn policy(&self, x: f64) -> PyResult<(f64, f64)> {
        self.inner.policy(x).map_err(to_py)
    }

    fn values(&self, xs: Vec<f64>) -> PyResult<Vec<f64>> {
        xs.into_iter().map(|x| self.inner.value(x).map_err(to_py)).collect()
    }

    fn policies(&self, xs: Vec<f64>) -> PyResult<Vec<(f64, f64)>> {
        xs.into_iter().map(|x| self.inner.policy(x).map_err(to_py)).collect()
    }

    /// Residual and structure checks as `(name, value, threshold, passed)`.
    fn checks(&self) -> PyResult<Vec<(String, f64, f64, bool)>> {
        let list = checks::full_report(&self.inner).map_err(to_py)?;
        Ok(list.into_iter().map(|c| (c.name, c.value, c.threshold, c.pass)).collect())
    }

    /// Sup-relative gap to a finite-difference solution on `[x0/2, 10 x0]`.
    #[pyo3(signature = (n = 4000))]
    fn fd_gap(&self, py: Python<'_>, n: usize) -> PyResult<f64> {
        let d = &self.inner.dual;
        let cfg = FdConfig { n, ..Default::default() };
        py.detach(|| {
            let fd = solve_fd(&d.market, &d.spec, &d.envelope, &cfg)?;
            fd_gap(&fd, &self.inner, self.inner.x0 / 2.0, 10.0 * self.inner.x0)
        })
        .map_err(to_py)
    }

    /// Simulates the controlled ratio; returns record times and per-path ratio series.
    #[pyo3(signature = (n_paths = 1000, horizon = 10.0, dt = 0.01, seed = 42, x_init = None, record_every = 100))]
    fn simulate(
        &self,
        py: Python<'_>,
        n_paths: usize,
        horizon: f64,
        dt: f64,
        seed: u64,
        x_init: Option<f64>,
        record_every: usize,
    ) -> PyResult<(Vec<f64>, Vec<Vec<f64>>)> {
        let cfg = SimConfig { x_init, horizon, dt, n_paths, seed, record_every, ..Default::default() };
        let set = py.detach(|| run_simulation(&self.inner, &cfg)).map_err(to_py)?;
        Ok((set.t, set.paths.into_iter().map(|p| p.x).collect()))
    }

    fn __repr__(&self) -> String {
        format!("Solution(y0={}, x0={})", self.inner.dual.y0, self.inner.x0)
    }
}

/// Solves the problem for a market and utility.
#[pyfunction]
#[pyo3(signature = (market = None, utility = None, y_min_factor = None))]
fn solve(
    py: Python<'_>,
    market: Option<Market>,
    utility: Option<Utility>,
    y_min_factor: Option<f64>,
) -> PyResult<Solution> {
    let m = market.map_or_else(MarketParams::default, |m| m.inner);
    let family = utility.map_or_else(Family::default, |u| u.family);
    let mut controls = SolverControls::default();
    if let Some(f) = y_min_factor {
        controls.y_min_factor = f;
    }
    controls.validate().map_err(to_py)?;
    let inner = py
        .detach(|| {
            let spec = family.build()?;
            let env = concavify(&spec)?;
            Ok(PrimalSolution::new(shoot_y0(&m, &spec, &env, &controls)?))
        })
        .map_err(to_py)?;
    Ok(Solution { inner })
}

/// Solves the problem described by a JSON configuration.
#[pyfunction]
fn solve_config(py: Python<'_>, text: &str) -> PyResult<Solution> {
    let cfg = Config::from_json(text).map_err(to_py)?;
    cfg.validate().map_err(to_py)?;
    let inner = py
        .detach(|| {
            let spec = cfg.utility.build()?;
            let env = concavify(&spec)?;
            Ok(PrimalSolution::new(shoot_y0(&cfg.market, &spec, &env, &cfg.solver)?))
        })
        .map_err(to_py)?;
    Ok(Solution { inner })
}

#[pymodule]
fn habitfbp(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Market>()?;
    m.add_class::<Utility>()?;
    m.add_class::<Solution>()?;
    m.add_function(wrap_pyfunction!(solve, m)?)?;
    m.add_function(wrap_pyfunction!(solve_config, m)?)?;
    Ok(())
}
