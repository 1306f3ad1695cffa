//! Run configuration shared by the command line and the bindings.
//!
//! The `market`, `utility` and `solver` sections are required. An empty
//! `market` or `utility` object selects the base case; a non-empty one must
//! be complete. Solver controls default field by field.

use serde::de::{DeserializeOwned, Deserializer, Error as _};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::dual::SolverControls;
use crate::error::{Error, Result};
use crate::fd::FdConfig;
use crate::market::MarketParams;
use crate::simulate::SimConfig;
use crate::utility::Family;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    #[serde(deserialize_with = "complete_or_empty")]
    pub market: MarketParams,
    #[serde(deserialize_with = "complete_or_empty")]
    pub utility: Family,
    pub solver: SolverControls,
    #[serde(default)]
    pub fd: FdConfig,
    #[serde(default)]
    pub simulation: SimConfig,
    #[serde(default)]
    pub limits: LimitsConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            market: MarketParams::default(),
            utility: Family::default(),
            solver: SolverControls::default(),
            fd: FdConfig::default(),
            simulation: SimConfig::default(),
            limits: LimitsConfig::default(),
            output: OutputConfig::default(),
        }
    }
}

fn complete_or_empty<'de, D, T>(d: D) -> std::result::Result<T, D::Error>
where
    D: Deserializer<'de>,
    T: DeserializeOwned + Default,
{
    let map = Map::<String, Value>::deserialize(d)?;
    if map.is_empty() {
        return Ok(T::default());
    }
    serde_json::from_value(Value::Object(map)).map_err(D::Error::custom)
}

/// Sampling of the emitted policy tables.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub policy_points: usize,
    /// Upper end of the policy table as a multiple of `x0`.
    pub x_hi_factor: f64,
    /// Lower end of the policy table as a multiple of `x0`.
    pub x_lo_factor: f64,
    pub log_x: bool,
    /// Number of simulated paths written in full.
    pub paths_csv: usize,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig { policy_points: 400, x_hi_factor: 10.0, x_lo_factor: 0.01, log_x: true, paths_csv: 100 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MertonCase {
    pub p: f64,
    /// `(alpha, rho)` pairs.
    pub pairs: Vec<(f64, f64)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FixedReferenceCase {
    pub rhos: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RogersCase {
    pub alphas: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Aby22Case {
    pub alpha: f64,
    /// `(kappa, epsilon)` pairs.
    pub pairs: Vec<(f64, f64)>,
    /// Loss weights of plain power utilities compared at the same level.
    pub power_kappas: Vec<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LimitsConfig {
    pub merton: MertonCase,
    pub fixed_reference: FixedReferenceCase,
    pub rogers: RogersCase,
    pub aby22: Aby22Case,
}

impl Default for MertonCase {
    fn default() -> Self {
        MertonCase { p: 0.2, pairs: vec![(0.1, 0.1), (0.01, 0.01), (1e-3, 1e-3)] }
    }
}

impl Default for FixedReferenceCase {
    fn default() -> Self {
        FixedReferenceCase { rhos: vec![1e-2, 1e-4, 1e-5] }
    }
}

impl Default for RogersCase {
    fn default() -> Self {
        RogersCase { alphas: vec![0.1, 0.01, 1e-4] }
    }
}

impl Default for Aby22Case {
    fn default() -> Self {
        Aby22Case { alpha: 0.75, pairs: vec![(2.0, 1.0), (15.0, 0.35), (50.0, 0.1)], power_kappas: vec![100.0] }
    }
}

impl Config {
    /// Parses JSON text; errors carry the path of the offending field.
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: Config = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            Error::Schema { path, message: e.into_inner().to_string() }
        })?;
        Ok(cfg)
    }

    /// Checks every section for admissible values.
    pub fn validate(&self) -> Result<()> {
        self.market.validate()?;
        self.utility.build()?;
        self.solver.validate()?;
        self.fd.validate()?;
        self.simulation.validate()?;
        let o = &self.output;
        if o.policy_points < 2 || !(o.x_lo_factor > 0.0) || !(o.x_hi_factor > o.x_lo_factor) {
            return Err(Error::InvalidParameter(
                "output needs policy_points >= 2 and 0 < x_lo_factor < x_hi_factor".into(),
            ));
        }
        Ok(())
    }

    /// Canonical JSON of the resolved configuration.
    pub fn canonical_json(&self) -> String {
        serde_json::to_string(self).expect("configuration serialises")
    }
}

/// Parameters a sweep can vary.
pub const SWEEP_PARAMS: [&str; 7] = ["p", "q", "kappa", "alpha", "mu", "rho", "delta"];

impl Config {
    /// Copy with one named parameter replaced.
    pub fn with_param(&self, name: &str, value: f64) -> Result<Config> {
        let mut c = self.clone();
        let missing = |fam: &str| Error::InvalidParameter(format!("utility family {fam} has no parameter {name}"));
        match name {
            "mu" => c.market.mu = value,
            "rho" => c.market.rho = value,
            "delta" => c.market.delta = value,
            "alpha" | "p" | "q" | "kappa" => {
                let fam = c.utility.name();
                let slot = match (&mut c.utility, name) {
                    (
                        Family::Power { alpha, .. }
                        | Family::ShiftedPower { alpha, .. }
                        | Family::Exponential { alpha, .. }
                        | Family::Sahara { alpha, .. }
                        | Family::Aby22 { alpha, .. },
                        "alpha",
                    ) => alpha,
                    (
                        Family::Power { p, .. } | Family::ShiftedPower { p, .. } | Family::Exponential { p, .. },
                        "p",
                    ) => p,
                    (
                        Family::Power { q, .. } | Family::ShiftedPower { q, .. } | Family::Exponential { q, .. },
                        "q",
                    ) => q,
                    (
                        Family::Power { kappa, .. }
                        | Family::ShiftedPower { kappa, .. }
                        | Family::Exponential { kappa, .. }
                        | Family::Aby22 { kappa, .. },
                        "kappa",
                    ) => kappa,
                    _ => return Err(missing(fam)),
                };
                *slot = value;
            }
            _ => {
                return Err(Error::InvalidParameter(format!(
                    "unknown sweep parameter {name}; expected one of {}",
                    SWEEP_PARAMS.join(", ")
                )))
            }
        }
        Ok(c)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MIN: &str = r#"{"market": {}, "utility": {}, "solver": {}}"#;

    #[test]
    fn empty_sections_give_base_case() {
        let c = Config::from_json(MIN).unwrap();
        assert_eq!(c, Config::default());
        c.validate().unwrap();
    }

    #[test]
    fn partial_market_reports_missing_field() {
        let e = Config::from_json(r#"{"market": {"r": 0.02, "mu": 0.1, "rho": 1, "delta": 0.3}, "utility": {}, "solver": {}}"#)
            .unwrap_err();
        match e {
            Error::Schema { path, message } => {
                assert_eq!(path, "market");
                assert!(message.contains("sigma"), "{message}");
            }
            other => panic!("{other}"),
        }
    }

    #[test]
    fn missing_section_and_unknown_field() {
        let e = Config::from_json(r#"{"market": {}, "utility": {}}"#).unwrap_err();
        assert!(matches!(e, Error::Schema { .. }), "{e}");
        let e = Config::from_json(r#"{"market": {}, "utility": {}, "solver": {"rtol": 1}}"#).unwrap_err();
        match e {
            Error::Schema { path, .. } => assert_eq!(path, "solver.rtol"),
            other => panic!("{other}"),
        }
        let e = Config::from_json(r#"{"market": {}, "utility": {}, "solver": {}, "fd": {"n": "many"}}"#)
            .unwrap_err();
        match e {
            Error::Schema { path, .. } => assert_eq!(path, "fd.n"),
            other => panic!("{other}"),
        }
    }

    #[test]
    fn utility_family_parses() {
        let c = Config::from_json(
            r#"{"market": {}, "solver": {}, "utility": {"family": "exponential", "alpha": 0.75, "p": 1, "q": 1.5, "kappa": 1.2}}"#,
        )
        .unwrap();
        assert_eq!(c.utility, Family::Exponential { alpha: 0.75, p: 1.0, q: 1.5, kappa: 1.2 });
    }

    #[test]
    fn canonical_roundtrip() {
        let c = Config::default();
        let back = Config::from_json(&c.canonical_json()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn sweep_params() {
        let c = Config::default();
        assert_eq!(c.with_param("kappa", 100.0).unwrap().utility, Family::Power { alpha: 0.75, p: 0.2, q: 0.5, kappa: 100.0 });
        assert_eq!(c.with_param("rho", 4.0).unwrap().market.rho, 4.0);
        assert!(c.with_param("gamma", 1.0).is_err());
        let s = Config { utility: Family::Sahara { alpha: 0.75, gamma1: 0.8, beta1: 0.1, gamma2: 0.5, beta2: 0.1 }, ..c };
        assert!(s.with_param("p", 0.3).is_err());
        for p in SWEEP_PARAMS {
            assert!(Config::default().with_param(p, 0.5).is_ok());
        }
    }
}
