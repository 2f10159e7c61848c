//! Multi-environment time-course data.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scales::InterventionScales;

/// Observations from one environment. `values[i]` and `weights[i]` are the
/// d-vectors at `times[i]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Environment {
    pub times: Vec<f64>,
    pub values: Vec<Vec<f64>>,
    pub weights: Vec<Vec<f64>>,
}

impl Environment {
    /// Unit observation weights.
    pub fn new(times: Vec<f64>, values: Vec<Vec<f64>>) -> Self {
        let d = values.first().map_or(0, Vec::len);
        let weights = vec![vec![1.0; d]; values.len()];
        Environment {
            times,
            values,
            weights,
        }
    }

    pub fn with_weights(times: Vec<f64>, values: Vec<Vec<f64>>, weights: Vec<Vec<f64>>) -> Self {
        Environment {
            times,
            values,
            weights,
        }
    }

    pub fn n_times(&self) -> usize {
        self.times.len()
    }

    fn validate(&self, d: usize) -> Result<()> {
        let n = self.times.len();
        if n < 2 {
            return Err(Error::InvalidInput(format!(
                "an environment needs at least 2 observation times, got {n}"
            )));
        }
        check_increasing(&self.times)?;
        if self.values.len() != n {
            return Err(Error::dim("observation rows", n, self.values.len()));
        }
        if self.weights.len() != n {
            return Err(Error::dim("weight rows", n, self.weights.len()));
        }
        for (v, w) in self.values.iter().zip(&self.weights) {
            if v.len() != d {
                return Err(Error::dim("observation vector", d, v.len()));
            }
            if w.len() != d {
                return Err(Error::dim("weight vector", d, w.len()));
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::InvalidInput("non-finite observation".into()));
            }
            if w.iter().any(|x| !(*x >= 0.0) || !x.is_finite()) {
                return Err(Error::InvalidInput(
                    "observation weights must be >= 0".into(),
                ));
            }
        }
        Ok(())
    }
}

pub(crate) fn check_increasing(times: &[f64]) -> Result<()> {
    if times.iter().any(|t| !t.is_finite()) {
        return Err(Error::InvalidInput("non-finite time".into()));
    }
    if let Some(w) = times.windows(2).find(|w| w[1] <= w[0]) {
        return Err(Error::InvalidInput(format!(
            "times must be strictly increasing ({} followed by {})",
            w[0], w[1]
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub species: Vec<String>,
    pub environments: Vec<Environment>,
    pub scales: InterventionScales,
}

impl Dataset {
    pub fn new(
        species: Vec<String>,
        environments: Vec<Environment>,
        scales: InterventionScales,
    ) -> Result<Self> {
        let ds = Dataset {
            species,
            environments,
            scales,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        if self.environments.is_empty() {
            return Err(Error::InvalidInput("dataset has no environments".into()));
        }
        if self.scales.n_environments() != self.environments.len() {
            return Err(Error::dim(
                "intervention scales",
                self.environments.len(),
                self.scales.n_environments(),
            ));
        }
        let d = self.species.len();
        for env in &self.environments {
            env.validate(d)?;
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.species.len()
    }

    pub fn n_environments(&self) -> usize {
        self.environments.len()
    }

    pub(crate) fn check_params(&self, p: usize) -> Result<()> {
        if self.scales.n_params() != p {
            return Err(Error::dim(
                "intervention scale length",
                p,
                self.scales.n_params(),
            ));
        }
        Ok(())
    }

    /// Observation weights of all environments, in dataset order.
    pub fn weights(&self) -> Vec<Vec<Vec<f64>>> {
        self.environments
            .iter()
            .map(|e| e.weights.clone())
            .collect()
    }

    pub fn with_weights(&self, weights: &[Vec<Vec<f64>>]) -> Self {
        let mut out = self.clone();
        for (env, w) in out.environments.iter_mut().zip(weights) {
            env.weights = w.clone();
        }
        out
    }

    /// Reorders environments (and their scales).
    pub fn permuted(&self, order: &[usize]) -> Self {
        Dataset {
            species: self.species.clone(),
            environments: order
                .iter()
                .map(|&e| self.environments[e].clone())
                .collect(),
            scales: self.scales.permuted(order),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn env(times: Vec<f64>) -> Environment {
        let n = times.len();
        Environment::new(times, vec![vec![1.0, 2.0]; n])
    }

    #[test]
    fn validates_shapes_and_times() {
        let ok = Dataset::new(
            vec!["A".into(), "B".into()],
            vec![env(vec![0.0, 1.0])],
            InterventionScales::ones(1, 3),
        );
        assert!(ok.is_ok());
        let dup = Dataset::new(
            vec!["A".into(), "B".into()],
            vec![env(vec![0.0, 0.0])],
            InterventionScales::ones(1, 3),
        );
        assert!(dup.is_err());
        let short = Dataset::new(
            vec!["A".into(), "B".into()],
            vec![env(vec![0.0])],
            InterventionScales::ones(1, 3),
        );
        assert!(short.is_err());
        let mut neg = env(vec![0.0, 1.0]);
        neg.weights[0][0] = -1.0;
        assert!(Dataset::new(
            vec!["A".into(), "B".into()],
            vec![neg],
            InterventionScales::ones(1, 3)
        )
        .is_err());
    }
}
