//! Environment-specific parameter scaling.
//!
//! An intervention acts on the baseline parameter through a coordinatewise
//! product: in environment `e` the field is evaluated at `theta * c_e`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterventionScales {
    scales: Vec<Vec<f64>>,
}

impl InterventionScales {
    pub fn new(scales: Vec<Vec<f64>>) -> Result<Self> {
        if let Some(first) = scales.first() {
            let p = first.len();
            for s in &scales {
                if s.len() != p {
                    return Err(Error::dim("intervention scale vector", p, s.len()));
                }
                if s.iter().any(|v| !v.is_finite()) {
                    return Err(Error::InvalidInput("non-finite scale factor".into()));
                }
            }
        }
        Ok(InterventionScales { scales })
    }

    /// All-ones scales: every environment sees the baseline parameter.
    pub fn ones(environments: usize, p: usize) -> Self {
        InterventionScales {
            scales: vec![vec![1.0; p]; environments],
        }
    }

    pub fn n_environments(&self) -> usize {
        self.scales.len()
    }

    pub fn n_params(&self) -> usize {
        self.scales.first().map_or(0, Vec::len)
    }

    pub fn get(&self, e: usize) -> &[f64] {
        &self.scales[e]
    }

    pub fn get_mut(&mut self, e: usize) -> &mut [f64] {
        &mut self.scales[e]
    }

    pub fn iter(&self) -> impl Iterator<Item = &[f64]> {
        self.scales.iter().map(Vec::as_slice)
    }

    /// Sets coordinate `j` to zero in environment `e` (inhibition).
    pub fn inhibit(&mut self, e: usize, j: usize) {
        self.scales[e][j] = 0.0;
    }

    /// Multiplies coordinate `j` by `factor` in environment `e` (stimulation).
    pub fn stimulate(&mut self, e: usize, j: usize, factor: f64) {
        self.scales[e][j] = factor;
    }

    /// Coordinate `j` is active only in environment `e` (activation).
    pub fn activate_only(&mut self, e: usize, j: usize) {
        for (k, s) in self.scales.iter_mut().enumerate() {
            s[j] = if k == e { 1.0 } else { 0.0 };
        }
    }

    pub fn permuted(&self, order: &[usize]) -> Self {
        InterventionScales {
            scales: order.iter().map(|&e| self.scales[e].clone()).collect(),
        }
    }
}

/// The effective parameter `theta * c_e` of environment `e`.
pub fn apply_environment(theta: &[f64], scales: &InterventionScales, e: usize) -> Result<Vec<f64>> {
    if e >= scales.n_environments() {
        return Err(Error::InvalidInput(format!(
            "environment {e} out of range ({} environments)",
            scales.n_environments()
        )));
    }
    let c = scales.get(e);
    if c.len() != theta.len() {
        return Err(Error::dim(
            "intervention scale vector",
            theta.len(),
            c.len(),
        ));
    }
    Ok(hadamard(theta, c))
}

pub(crate) fn hadamard(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x * y).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn binary_scales_zero_out_coordinates() {
        let s = InterventionScales::new(vec![vec![1.0, 0.0, 1.0]]).unwrap();
        let eff = apply_environment(&[1.0, 2.0, 3.0], &s, 0).unwrap();
        assert_eq!(eff, vec![1.0, 0.0, 3.0]);
        // Applying a binary scale twice changes nothing further.
        assert_eq!(hadamard(&eff, s.get(0)), eff);
    }

    #[test]
    fn identity_scales() {
        let s = InterventionScales::ones(2, 3);
        assert_eq!(
            apply_environment(&[1.0, 2.0, 3.0], &s, 1).unwrap(),
            vec![1.0, 2.0, 3.0]
        );
    }

    #[test]
    fn stimulation_multiplies_rate() {
        let mut s = InterventionScales::ones(1, 2);
        s.stimulate(0, 1, 2.0);
        assert_eq!(
            apply_environment(&[1.0, 3.0], &s, 0).unwrap(),
            vec![1.0, 6.0]
        );
    }

    #[test]
    fn activation_is_exclusive() {
        let mut s = InterventionScales::ones(3, 2);
        s.activate_only(1, 0);
        assert_eq!(s.get(0), &[0.0, 1.0]);
        assert_eq!(s.get(1), &[1.0, 1.0]);
        assert_eq!(s.get(2), &[0.0, 1.0]);
    }

    #[test]
    fn length_mismatch_is_an_error() {
        let s = InterventionScales::ones(1, 2);
        assert!(apply_environment(&[1.0, 2.0, 3.0], &s, 0).is_err());
        assert!(InterventionScales::new(vec![vec![1.0], vec![1.0, 2.0]]).is_err());
    }
}
