//! Line-based `key = value` experiment configuration.
//!
//! ```text
//! # lines starting with '#' are comments
//! system = lotka-volterra
//! v = 5
//! environments = 4
//! sigma = 0.5
//! seed = 7
//! estimator = aim
//! ```

use std::fmt::Write as _;
use std::str::FromStr;

use super::systems::System;
use crate::error::{Error, Result};
use crate::field::text::fmt_f64;
use crate::field::SearchSpace;
use crate::ode::SolveConfig;
use crate::optim::PenaltyKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Estimator {
    Aim,
    Im,
    LsScad,
    Egm,
}

impl Estimator {
    pub const ALL: [Estimator; 4] = [
        Estimator::Aim,
        Estimator::Im,
        Estimator::LsScad,
        Estimator::Egm,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Estimator::Aim => "aim",
            Estimator::Im => "im",
            Estimator::LsScad => "ls-scad",
            Estimator::Egm => "egm",
        }
    }
}

impl FromStr for Estimator {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Estimator::ALL
            .into_iter()
            .find(|e| e.name() == s)
            .ok_or_else(|| Error::Parse(format!("unknown estimator '{s}'")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SystemKind {
    LotkaVolterra,
    EnzymeNetwork,
    MichaelisMenten,
    EnvZ,
}

impl SystemKind {
    const ALL: [SystemKind; 4] = [
        SystemKind::LotkaVolterra,
        SystemKind::EnzymeNetwork,
        SystemKind::MichaelisMenten,
        SystemKind::EnvZ,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SystemKind::LotkaVolterra => "lotka-volterra",
            SystemKind::EnzymeNetwork => "enzyme-network",
            SystemKind::MichaelisMenten => "michaelis-menten",
            SystemKind::EnvZ => "envz-ompr",
        }
    }
}

impl FromStr for SystemKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SystemKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Parse(format!("unknown system '{s}'")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolverChoice {
    Rkf45,
    Rk4,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub system: SystemKind,
    pub v: f64,
    pub environments: usize,
    pub sigma: f64,
    pub d: usize,
    pub alpha: usize,
    /// Observations per environment; the system default when absent.
    pub n: Option<usize>,
    /// Kernel bandwidths in units of the median observation gap.
    pub bandwidths: Vec<f64>,
    pub rate_sd: f64,
    /// Michaelis-Menten `(k_f, k_r, k_cat)`.
    pub mm_rates: [f64; 3],
    /// Search space family for the enzyme network.
    pub space: SearchSpace,
    pub replicates: usize,
    pub seed: u64,
    pub solver: SolverChoice,
    pub atol: f64,
    pub rtol: f64,
    pub step: f64,
    pub max_steps: usize,
    pub estimators: Vec<Estimator>,
    /// Penalty of the integral matching paths; l1 for Lotka-Volterra and
    /// elastic net (alpha 0.25) otherwise when absent.
    pub penalty: Option<PenaltyKind>,
    pub lambdas: usize,
    pub min_ratio: f64,
    /// Largest support reported (and refitted); `5 d` when absent.
    pub max_support: Option<usize>,
    /// Per-species subset size of the exhaustive search.
    pub egm_k: usize,
    /// Iteration cap of each support refit.
    pub refit_iters: usize,
    pub output: String,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            system: SystemKind::LotkaVolterra,
            v: 5.0,
            environments: 4,
            sigma: 0.5,
            d: 7,
            alpha: 1,
            n: None,
            bandwidths: vec![0.0, 1.0, 2.0, 4.0],
            rate_sd: 1.0,
            mm_rates: super::systems::MM_RATES,
            space: SearchSpace::Enzyme,
            replicates: 1,
            seed: 1,
            solver: SolverChoice::Rkf45,
            atol: 1e-8,
            rtol: 1e-6,
            step: 0.01,
            max_steps: 2_000,
            estimators: vec![Estimator::Aim],
            penalty: None,
            lambdas: 50,
            min_ratio: 1e-4,
            max_support: None,
            egm_k: 5,
            refit_iters: 50,
            output: "out".into(),
        }
    }
}

fn parse_num<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Parse(format!("invalid value '{value}' for '{key}'")))
}

fn parse_list<T: FromStr<Err = Error>>(value: &str) -> Result<Vec<T>> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(str::parse)
        .collect()
}

impl ExperimentConfig {
    pub fn parse(input: &str) -> Result<Self> {
        let mut cfg = ExperimentConfig::default();
        for (k, raw) in input.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Parse(format!("line {}: expected key = value", k + 1)))?;
            cfg.set(key.trim(), value.trim())
                .map_err(|e| Error::Parse(format!("line {}: {e}", k + 1)))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Sets one key; used for both file lines and command line overrides.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "system" => self.system = value.parse()?,
            "v" => self.v = parse_num(key, value)?,
            "environments" | "E" => self.environments = parse_num(key, value)?,
            "sigma" => self.sigma = parse_num(key, value)?,
            "d" => self.d = parse_num(key, value)?,
            "alpha" => self.alpha = parse_num(key, value)?,
            "n" => self.n = Some(parse_num(key, value)?),
            "bandwidths" => {
                self.bandwidths = value
                    .split(',')
                    .map(|s| parse_num(key, s.trim()))
                    .collect::<Result<_>>()?
            }
            "rate_sd" => self.rate_sd = parse_num(key, value)?,
            "mm_rates" => {
                let v: Vec<f64> = value
                    .split(',')
                    .map(|s| parse_num(key, s.trim()))
                    .collect::<Result<_>>()?;
                self.mm_rates = v
                    .try_into()
                    .map_err(|_| Error::Parse("mm_rates needs three values".into()))?;
            }
            "space" => {
                self.space = match value {
                    "enzyme" | "two-index" => SearchSpace::Enzyme,
                    "enzyme-three-index" | "three-index" => SearchSpace::EnzymeThreeIndex,
                    _ => return Err(Error::Parse(format!("unknown search space '{value}'"))),
                }
            }
            "replicates" => self.replicates = parse_num(key, value)?,
            "seed" => self.seed = parse_num(key, value)?,
            "solver" => {
                self.solver = match value {
                    "rkf45" => SolverChoice::Rkf45,
                    "rk4" => SolverChoice::Rk4,
                    _ => return Err(Error::Parse(format!("unknown solver '{value}'"))),
                }
            }
            "atol" => self.atol = parse_num(key, value)?,
            "rtol" => self.rtol = parse_num(key, value)?,
            "step" => self.step = parse_num(key, value)?,
            "max_steps" => self.max_steps = parse_num(key, value)?,
            "estimator" | "estimators" => self.estimators = parse_list(value)?,
            "lambdas" => self.lambdas = parse_num(key, value)?,
            "min_ratio" => self.min_ratio = parse_num(key, value)?,
            "max_support" => self.max_support = Some(parse_num(key, value)?),
            "penalty" => self.penalty = Some(value.parse()?),
            "egm_k" => self.egm_k = parse_num(key, value)?,
            "refit_iters" => self.refit_iters = parse_num(key, value)?,
            "output" => self.output = value.to_string(),
            _ => return Err(Error::Parse(format!("unknown key '{key}'"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma >= 0.0) || !self.sigma.is_finite() {
            return Err(Error::InvalidInput(format!(
                "sigma must be >= 0, got {}",
                self.sigma
            )));
        }
        if self.replicates == 0 {
            return Err(Error::InvalidInput("replicates must be >= 1".into()));
        }
        if self.estimators.is_empty() {
            return Err(Error::InvalidInput("no estimator selected".into()));
        }
        if self.lambdas == 0 || !(self.min_ratio > 0.0 && self.min_ratio <= 1.0) {
            return Err(Error::InvalidInput("invalid lambda path settings".into()));
        }
        if self.refit_iters == 0 || self.egm_k == 0 {
            return Err(Error::InvalidInput(
                "refit_iters and egm_k must be >= 1".into(),
            ));
        }
        if self
            .bandwidths
            .iter()
            .any(|b| !(*b >= 0.0) || !b.is_finite())
        {
            return Err(Error::InvalidInput("bandwidths must be >= 0".into()));
        }
        self.solve_config().validate()?;
        self.system_at()?.validate()
    }

    pub fn penalty_kind(&self) -> PenaltyKind {
        self.penalty.unwrap_or(match self.system {
            SystemKind::LotkaVolterra => PenaltyKind::L1,
            _ => PenaltyKind::DEFAULT_ELASTIC_NET,
        })
    }

    /// Solver used for fitting.
    pub fn solve_config(&self) -> SolveConfig {
        match self.solver {
            SolverChoice::Rkf45 => SolveConfig::rkf45(self.atol, self.rtol),
            SolverChoice::Rk4 => SolveConfig::rk4(self.step),
        }
        .with_max_steps(self.max_steps)
    }

    fn system_at(&self) -> Result<System> {
        Ok(match self.system {
            SystemKind::LotkaVolterra => System::LotkaVolterra {
                v: self.v,
                environments: self.environments,
                sigma: self.sigma,
            },
            SystemKind::EnzymeNetwork => System::EnzymeNetwork {
                d: self.d,
                alpha: self.alpha,
                environments: self.environments,
                n: self.n.unwrap_or(10),
                sigma: self.sigma,
                space: self.space,
            },
            SystemKind::MichaelisMenten => System::MichaelisMenten {
                n: self.n.unwrap_or(25),
                sigma: self.sigma,
                rates: self.mm_rates,
            },
            SystemKind::EnvZ => System::EnvZ {
                sigma: self.sigma,
                rate_sd: self.rate_sd,
            },
        })
    }

    pub fn system(&self) -> System {
        self.system_at().expect("infallible construction")
    }

    /// Seed of replicate `r`.
    pub fn replicate_seed(&self, r: usize) -> u64 {
        self.seed.wrapping_add(r as u64)
    }

    /// Canonical text form; parsing it gives back the same configuration.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(out, "{k} = {v}");
        };
        kv("system", self.system.name().into());
        kv("v", fmt_f64(self.v));
        kv("environments", self.environments.to_string());
        kv("sigma", fmt_f64(self.sigma));
        kv("d", self.d.to_string());
        kv("alpha", self.alpha.to_string());
        if let Some(n) = self.n {
            kv("n", n.to_string());
        }
        kv(
            "bandwidths",
            self.bandwidths
                .iter()
                .map(|b| fmt_f64(*b))
                .collect::<Vec<_>>()
                .join(","),
        );
        kv("rate_sd", fmt_f64(self.rate_sd));
        kv(
            "mm_rates",
            self.mm_rates
                .iter()
                .map(|b| fmt_f64(*b))
                .collect::<Vec<_>>()
                .join(","),
        );
        kv(
            "space",
            match self.space {
                SearchSpace::EnzymeThreeIndex => "enzyme-three-index",
                _ => "enzyme",
            }
            .into(),
        );
        kv("replicates", self.replicates.to_string());
        kv("seed", self.seed.to_string());
        kv(
            "solver",
            match self.solver {
                SolverChoice::Rkf45 => "rkf45",
                SolverChoice::Rk4 => "rk4",
            }
            .into(),
        );
        kv("atol", fmt_f64(self.atol));
        kv("rtol", fmt_f64(self.rtol));
        kv("step", fmt_f64(self.step));
        kv("max_steps", self.max_steps.to_string());
        kv(
            "estimator",
            self.estimators
                .iter()
                .map(|e| e.name())
                .collect::<Vec<_>>()
                .join(","),
        );
        kv("lambdas", self.lambdas.to_string());
        kv("min_ratio", fmt_f64(self.min_ratio));
        if let Some(m) = self.max_support {
            kv("max_support", m.to_string());
        }
        if let Some(p) = self.penalty {
            kv("penalty", p.to_string());
        }
        kv("egm_k", self.egm_k.to_string());
        kv("refit_iters", self.refit_iters.to_string());
        kv("output", self.output.clone());
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_keys_and_comments() {
        let cfg = ExperimentConfig::parse(
            "# study\nsystem = enzyme-network\nd = 9\nE = 2\nsigma=0.1\nestimator = aim, egm\n",
        )
        .unwrap();
        assert_eq!(cfg.system, SystemKind::EnzymeNetwork);
        assert_eq!(cfg.d, 9);
        assert_eq!(cfg.environments, 2);
        assert_eq!(cfg.sigma, 0.1);
        assert_eq!(cfg.estimators, vec![Estimator::Aim, Estimator::Egm]);
        assert!(matches!(cfg.system(), System::EnzymeNetwork { n: 10, .. }));
    }

    #[test]
    fn text_round_trip() {
        let mut cfg = ExperimentConfig::default();
        cfg.set("system", "michaelis-menten").unwrap();
        cfg.set("bandwidths", "0,0.5,2").unwrap();
        cfg.set("max_support", "12").unwrap();
        assert_eq!(ExperimentConfig::parse(&cfg.to_text()).unwrap(), cfg);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(ExperimentConfig::parse("bogus = 1").is_err());
        assert!(ExperimentConfig::parse("sigma = -1").is_err());
        assert!(ExperimentConfig::parse("replicates = 0").is_err());
        assert!(ExperimentConfig::parse("system = nope").is_err());
        assert!(ExperimentConfig::parse("sigma").is_err());
    }
}
