//! Integral matching, penalized least squares, support refits and exhaustive
//! gradient matching.

mod egm;
mod im;
mod ls;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::FieldSpec;
use crate::optim::{lambda_max, proximal_gradient, Objective, Penalty, ProxControls};
use crate::smooth::SmootherSpec;

pub use egm::{egm_search, EgmResult, MAX_EGM_COLUMNS};
pub use im::{im_problem, integral_matching, ImOptions, ImProblem, ImVariant};
pub use ls::{penalized_least_squares, refit_on_support, LsObjective, LsOptions, RefitOptions};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    Im,
    Ls,
    Refit,
    Egm,
}

impl LossKind {
    pub fn tag(self) -> &'static str {
        match self {
            LossKind::Im => "im",
            LossKind::Ls => "ls",
            LossKind::Refit => "refit",
            LossKind::Egm => "egm",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub kind: LossKind,
    pub lambda: f64,
    pub theta: Vec<f64>,
    pub support: Vec<usize>,
    /// Loss plus penalty (equal to `loss` for unpenalized fits).
    pub objective: f64,
    pub loss: f64,
    pub smoother: Option<SmootherSpec>,
    pub iterations: usize,
    pub converged: bool,
    pub diverged: Vec<usize>,
}

impl FitResult {
    pub(crate) fn new(kind: LossKind, lambda: f64, theta: Vec<f64>, loss: f64) -> Self {
        let support = crate::optim::support_of(&theta);
        FitResult {
            kind,
            lambda,
            theta,
            support,
            objective: loss,
            loss,
            smoother: None,
            iterations: 0,
            converged: true,
            diverged: Vec::new(),
        }
    }

    pub fn record(&self, spec: &FieldSpec) -> FitRecord {
        FitRecord {
            kind: self.kind,
            lambda: self.lambda,
            smoother: self.smoother.map(|s| s.to_string()),
            objective: self.objective,
            loss: self.loss,
            iterations: self.iterations,
            converged: self.converged,
            diverged: self.diverged.clone(),
            n_params: self.theta.len(),
            theta: self
                .support
                .iter()
                .map(|&j| (j, spec.param_label(j), self.theta[j]))
                .collect(),
        }
    }
}

/// One line of a fit-result file: parameters as sparse
/// `(index, label, value)` triplets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitRecord {
    pub kind: LossKind,
    pub lambda: f64,
    pub smoother: Option<String>,
    pub objective: f64,
    pub loss: f64,
    pub iterations: usize,
    pub converged: bool,
    pub diverged: Vec<usize>,
    pub n_params: usize,
    pub theta: Vec<(usize, String, f64)>,
}

impl FitRecord {
    pub fn into_result(self) -> Result<FitResult> {
        let mut theta = vec![0.0; self.n_params];
        for (j, _, v) in &self.theta {
            if *j >= self.n_params {
                return Err(Error::Parse(format!("parameter index {j} out of range")));
            }
            theta[*j] = *v;
        }
        let smoother = self.smoother.as_deref().map(str::parse).transpose()?;
        let support = crate::optim::support_of(&theta);
        Ok(FitResult {
            kind: self.kind,
            lambda: self.lambda,
            theta,
            support,
            objective: self.objective,
            loss: self.loss,
            smoother,
            iterations: self.iterations,
            converged: self.converged,
            diverged: self.diverged,
        })
    }
}

/// Line-delimited JSON, one record per fit.
pub fn write_fit_results(spec: &FieldSpec, fits: &[FitResult]) -> String {
    let mut out = String::new();
    for f in fits {
        out.push_str(&serde_json::to_string(&f.record(spec)).expect("serializable record"));
        out.push('\n');
    }
    out
}

pub fn read_fit_results(input: &str) -> Result<Vec<FitResult>> {
    input
        .lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(n, l)| {
            let rec: FitRecord = serde_json::from_str(l)
                .map_err(|e| Error::Parse(format!("fit record {}: {e}", n + 1)))?;
            rec.into_result()
        })
        .collect()
}

/// The largest useful lambda and the matching null solution. Coordinates
/// with zero penalty weight are fitted first.
pub(crate) fn path_anchor<O: Objective + ?Sized>(
    obj: &O,
    pen: &Penalty,
    controls: &ProxControls,
) -> Result<(f64, Vec<f64>)> {
    let p = obj.dim();
    let null = if pen.weights.contains(&0.0) {
        proximal_gradient(obj, pen, 1e30, &vec![0.0; p], controls)?.theta
    } else {
        vec![0.0; p]
    };
    let all: Vec<usize> = (0..p).collect();
    let ev = obj.value_grad(&null, &all)?;
    Ok((lambda_max(&ev.grad, pen), null))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{enumerate_search_space, SearchSpace};

    #[test]
    fn fit_records_round_trip() {
        let spec = enumerate_search_space(SearchSpace::Enzyme, 3).unwrap();
        let mut f = FitResult::new(
            LossKind::Refit,
            0.125,
            vec![0.0, 1.5, 0.0, 0.1, 0.0, 1e-17],
            2.5,
        );
        f.smoother = Some(SmootherSpec::kernel(0.3).standardized());
        f.diverged = vec![1];
        let text = write_fit_results(&spec, &[f.clone(), f.clone()]);
        let back = read_fit_results(&text).unwrap();
        assert_eq!(back, vec![f.clone(), f]);
        assert!(text.contains("X1+X3->2X1"));
    }
}
