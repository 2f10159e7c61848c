//! The weighted least-squares data term over all environments.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use super::{integrate, AuxRequest, SolveConfig};
use crate::data::Dataset;
use crate::error::{Error, Result, SolveError};
use crate::field::FieldSpec;
use crate::scales::hadamard;

#[derive(Debug, Clone, PartialEq)]
pub struct LossEval {
    pub loss: f64,
    pub gradient: Option<Vec<f64>>,
    /// Environments whose solve diverged; each adds the overflow guard to
    /// the loss and nothing to the gradient.
    pub diverged: Vec<usize>,
}

/// Weighted residuals `sqrt(w) (y - x)` stacked environment by environment,
/// time by time, species by species, and their Jacobian with respect to the
/// requested parameter columns.
#[derive(Debug, Clone)]
pub struct ResidualEval {
    pub loss: f64,
    pub residuals: Vec<f64>,
    pub jacobian: DMatrix<f64>,
    pub diverged: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ApproxStep {
    pub theta: Vec<f64>,
    pub rank: usize,
    pub rank_deficient: bool,
}

struct EnvOut {
    loss: f64,
    residuals: Vec<f64>,
    /// Row-major `(n d) x |cols|`, only when requested.
    jacobian: Vec<f64>,
    gradient: Vec<f64>,
    diverged: bool,
}

pub struct LeastSquaresProblem<'a> {
    spec: &'a FieldSpec,
    dataset: &'a Dataset,
    x0: Vec<Vec<f64>>,
    config: SolveConfig,
    tolerate_failures: bool,
}

impl<'a> LeastSquaresProblem<'a> {
    /// Initial states default to the first observation of each environment,
    /// clamped at zero.
    pub fn new(spec: &'a FieldSpec, dataset: &'a Dataset, config: SolveConfig) -> Result<Self> {
        dataset.validate()?;
        config.validate()?;
        if dataset.dim() != spec.dim() {
            return Err(Error::dim("dataset species", spec.dim(), dataset.dim()));
        }
        dataset.check_params(spec.n_params())?;
        let x0 = dataset
            .environments
            .iter()
            .map(|e| e.values[0].iter().map(|v| v.max(0.0)).collect())
            .collect();
        Ok(LeastSquaresProblem {
            spec,
            dataset,
            x0,
            config,
            tolerate_failures: false,
        })
    }

    /// Replaces the initial states (e.g. by smoothed values); negative
    /// entries are clamped at zero.
    pub fn with_initial_states(mut self, x0: Vec<Vec<f64>>) -> Result<Self> {
        if x0.len() != self.dataset.n_environments() {
            return Err(Error::dim(
                "initial states",
                self.dataset.n_environments(),
                x0.len(),
            ));
        }
        for v in &x0 {
            if v.len() != self.spec.dim() {
                return Err(Error::dim("initial state", self.spec.dim(), v.len()));
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::InvalidInput("non-finite initial state".into()));
            }
        }
        self.x0 = x0
            .into_iter()
            .map(|v| v.into_iter().map(|x| x.max(0.0)).collect())
            .collect();
        Ok(self)
    }

    /// In-place variant of [`Self::with_initial_states`].
    pub fn set_initial_states(&mut self, x0: Vec<Vec<f64>>) -> Result<()> {
        let mut tmp = LeastSquaresProblem {
            spec: self.spec,
            dataset: self.dataset,
            x0: Vec::new(),
            config: self.config,
            tolerate_failures: self.tolerate_failures,
        }
        .with_initial_states(x0)?;
        self.x0 = std::mem::take(&mut tmp.x0);
        Ok(())
    }

    /// Treat every solver failure (including step limits) as divergence
    /// instead of returning an error. Used inside optimizers.
    pub fn tolerate_failures(mut self, yes: bool) -> Self {
        self.tolerate_failures = yes;
        self
    }

    pub fn spec(&self) -> &FieldSpec {
        self.spec
    }

    pub fn dataset(&self) -> &Dataset {
        self.dataset
    }

    pub fn config(&self) -> &SolveConfig {
        &self.config
    }

    pub fn initial_states(&self) -> &[Vec<f64>] {
        &self.x0
    }

    pub fn n_residuals(&self) -> usize {
        self.dataset
            .environments
            .iter()
            .map(|e| e.n_times() * self.spec.dim())
            .sum()
    }

    fn env_eval(
        &self,
        e: usize,
        theta: &[f64],
        cols: Option<&[usize]>,
        want_jac: bool,
        want_x0: bool,
    ) -> Result<EnvOut> {
        let env = &self.dataset.environments[e];
        let c = self.dataset.scales.get(e);
        let phi = hadamard(theta, c);
        let d = self.spec.dim();
        let n = env.n_times();
        let all_cols = cols.unwrap_or(&[]);
        let active: Vec<usize> = (0..all_cols.len())
            .filter(|&q| c[all_cols[q]] != 0.0)
            .collect();
        let req = AuxRequest {
            theta_cols: active.iter().map(|&q| all_cols[q]).collect(),
            x0: want_x0,
            frozen: false,
        };
        // Jacobian rows hold the parameter columns, then `d` initial-state
        // columns when requested.
        let m_all = all_cols.len();
        let width = m_all + if want_x0 { d } else { 0 };
        let diverged_out = || EnvOut {
            loss: self.config.overflow,
            residuals: vec![0.0; n * d],
            jacobian: if want_jac {
                vec![0.0; n * d * width]
            } else {
                Vec::new()
            },
            gradient: vec![0.0; m_all],
            diverged: true,
        };
        let traj = match integrate(self.spec, &phi, &self.x0[e], &env.times, &self.config, &req) {
            Ok(t) => t,
            Err(err) => {
                let is_div = matches!(
                    err,
                    SolveError::Diverged { .. } | SolveError::StepUnderflow { .. }
                );
                if is_div || self.tolerate_failures {
                    return Ok(diverged_out());
                }
                return Err(Error::Solver {
                    environment: e,
                    source: err,
                });
            }
        };
        let ma = active.len();
        let mut out = EnvOut {
            loss: 0.0,
            residuals: Vec::with_capacity(n * d),
            jacobian: if want_jac {
                vec![0.0; n * d * width]
            } else {
                Vec::new()
            },
            gradient: vec![0.0; m_all],
            diverged: false,
        };
        for k in 0..n {
            let x = &traj.states[k];
            for l in 0..d {
                let sw = env.weights[k][l].sqrt();
                let r = sw * (env.values[k][l] - x[l]);
                out.loss += 0.5 * r * r;
                out.residuals.push(r);
                let row = k * d + l;
                if want_x0 && want_jac {
                    let sx = &traj.sens_x0.as_ref().expect("sensitivities requested")[k];
                    for j in 0..d {
                        out.jacobian[row * width + m_all + j] = -sw * sx[l * d + j];
                    }
                }
                if ma == 0 {
                    continue;
                }
                let s = &traj.sens_theta.as_ref().expect("sensitivities requested")[k];
                for (qa, &q) in active.iter().enumerate() {
                    let ds = -sw * s[l * ma + qa] * c[all_cols[q]];
                    out.gradient[q] += r * ds;
                    if want_jac {
                        out.jacobian[row * width + q] = ds;
                    }
                }
            }
        }
        Ok(out)
    }

    fn eval_all(
        &self,
        theta: &[f64],
        cols: Option<&[usize]>,
        want_jac: bool,
        want_x0: bool,
    ) -> Result<Vec<EnvOut>> {
        self.spec.check_theta(theta)?;
        (0..self.dataset.n_environments())
            .into_par_iter()
            .map(|e| self.env_eval(e, theta, cols, want_jac, want_x0))
            .collect()
    }

    pub fn loss(&self, theta: &[f64]) -> Result<LossEval> {
        let outs = self.eval_all(theta, None, false, false)?;
        Ok(LossEval {
            loss: outs.iter().map(|o| o.loss).sum(),
            gradient: None,
            diverged: diverged_indices(&outs),
        })
    }

    pub fn loss_and_gradient(&self, theta: &[f64]) -> Result<LossEval> {
        let cols: Vec<usize> = (0..self.spec.n_params()).collect();
        self.loss_and_partial_gradient(theta, &cols)
    }

    /// Gradient restricted to `cols` (in that order).
    pub fn loss_and_partial_gradient(&self, theta: &[f64], cols: &[usize]) -> Result<LossEval> {
        let outs = self.eval_all(theta, Some(cols), false, false)?;
        let mut grad = vec![0.0; cols.len()];
        for o in &outs {
            for (g, v) in grad.iter_mut().zip(&o.gradient) {
                *g += v;
            }
        }
        Ok(LossEval {
            loss: outs.iter().map(|o| o.loss).sum(),
            gradient: Some(grad),
            diverged: diverged_indices(&outs),
        })
    }

    pub fn residuals_and_jacobian(&self, theta: &[f64], cols: &[usize]) -> Result<ResidualEval> {
        let outs = self.eval_all(theta, Some(cols), true, false)?;
        let rows = self.n_residuals();
        let mut residuals = Vec::with_capacity(rows);
        let mut jac = Vec::with_capacity(rows * cols.len());
        for o in &outs {
            residuals.extend_from_slice(&o.residuals);
            jac.extend_from_slice(&o.jacobian);
        }
        Ok(ResidualEval {
            loss: outs.iter().map(|o| o.loss).sum(),
            residuals,
            jacobian: DMatrix::from_row_slice(rows, cols.len(), &jac),
            diverged: diverged_indices(&outs),
        })
    }

    /// Like [`Self::residuals_and_jacobian`] with `E d` extra columns for
    /// the initial states, environment by environment.
    pub fn residuals_and_jacobian_x0(&self, theta: &[f64], cols: &[usize]) -> Result<ResidualEval> {
        let outs = self.eval_all(theta, Some(cols), true, true)?;
        let d = self.spec.dim();
        let m = cols.len();
        let n_env = outs.len();
        let width = m + n_env * d;
        let rows = self.n_residuals();
        let mut jac = DMatrix::zeros(rows, width);
        let mut residuals = Vec::with_capacity(rows);
        let mut row0 = 0;
        for (e, o) in outs.iter().enumerate() {
            let n = o.residuals.len();
            for i in 0..n {
                for q in 0..m {
                    jac[(row0 + i, q)] = o.jacobian[i * (m + d) + q];
                }
                for j in 0..d {
                    jac[(row0 + i, m + e * d + j)] = o.jacobian[i * (m + d) + m + j];
                }
            }
            residuals.extend_from_slice(&o.residuals);
            row0 += n;
        }
        Ok(ResidualEval {
            loss: outs.iter().map(|o| o.loss).sum(),
            residuals,
            jacobian: jac,
            diverged: diverged_indices(&outs),
        })
    }

    /// Minimizes the data term over the coordinates in `cols` with the
    /// trajectory frozen at `theta0`; other coordinates keep their `theta0`
    /// values. Requires a field that is linear in its parameters.
    pub fn approximate_step(&self, theta0: &[f64], cols: &[usize]) -> Result<ApproxStep> {
        if !self.spec.is_theta_linear() {
            return Err(Error::InvalidInput(
                "the frozen-trajectory step needs a field linear in its parameters".into(),
            ));
        }
        self.spec.check_theta(theta0)?;
        let d = self.spec.dim();
        let m = cols.len();
        let blocks: Vec<Result<(Vec<f64>, Vec<f64>)>> = (0..self.dataset.n_environments())
            .into_par_iter()
            .map(|e| {
                let env = &self.dataset.environments[e];
                let c = self.dataset.scales.get(e);
                let phi = hadamard(theta0, c);
                let req = AuxRequest {
                    theta_cols: cols.to_vec(),
                    x0: false,
                    frozen: true,
                };
                let traj = integrate(self.spec, &phi, &self.x0[e], &env.times, &self.config, &req)
                    .map_err(|source| Error::Solver {
                        environment: e,
                        source,
                    })?;
                let integrals = traj.sens_theta.as_ref();
                let mut a = Vec::with_capacity(env.n_times() * d * m);
                let mut b = Vec::with_capacity(env.n_times() * d);
                for k in 0..env.n_times() {
                    for l in 0..d {
                        let sw = env.weights[k][l].sqrt();
                        let mut resp = env.values[k][l] - traj.states[k][l];
                        for (q, &j) in cols.iter().enumerate() {
                            let g = integrals.map_or(0.0, |s| s[k][l * m + q]) * c[j];
                            resp += g * theta0[j];
                            a.push(sw * g);
                        }
                        b.push(sw * resp);
                    }
                }
                Ok((a, b))
            })
            .collect();
        let mut a_all = Vec::new();
        let mut b_all = Vec::new();
        for blk in blocks {
            let (a, b) = blk?;
            a_all.extend(a);
            b_all.extend(b);
        }
        let rows = b_all.len();
        let a = DMatrix::from_row_slice(rows, m, &a_all);
        let b = DVector::from_vec(b_all);
        let (sol, rank) = min_norm_solve(a, &b);
        let mut theta = theta0.to_vec();
        for (q, &j) in cols.iter().enumerate() {
            theta[j] = sol[q];
        }
        Ok(ApproxStep {
            theta,
            rank,
            rank_deficient: rank < m,
        })
    }
}

fn diverged_indices(outs: &[EnvOut]) -> Vec<usize> {
    outs.iter()
        .enumerate()
        .filter(|(_, o)| o.diverged)
        .map(|(e, _)| e)
        .collect()
}

/// Minimum-norm least-squares solution and numerical rank.
pub(crate) fn min_norm_solve(a: DMatrix<f64>, b: &DVector<f64>) -> (DVector<f64>, usize) {
    let m = a.ncols();
    if m == 0 {
        return (DVector::zeros(0), 0);
    }
    if a.nrows() == 0 {
        return (DVector::zeros(m), 0);
    }
    let svd = a.svd(true, true);
    let smax = svd.singular_values.max();
    let tol = 1e-10 * smax.max(f64::MIN_POSITIVE);
    let rank = svd.singular_values.iter().filter(|&&s| s > tol).count();
    let x = svd.solve(b, tol).unwrap_or_else(|_| DVector::zeros(m));
    (x, rank)
}

/// Weighted least-squares loss and its full gradient, with initial states
/// taken from the first observation of each environment.
pub fn ls_loss_and_gradient(
    spec: &FieldSpec,
    theta: &[f64],
    dataset: &Dataset,
    config: &SolveConfig,
) -> Result<LossEval> {
    LeastSquaresProblem::new(spec, dataset, *config)?.loss_and_gradient(theta)
}

/// The frozen-trajectory minimizer over all coordinates.
pub fn approximate_gradient_step(
    spec: &FieldSpec,
    theta0: &[f64],
    dataset: &Dataset,
    config: &SolveConfig,
) -> Result<ApproxStep> {
    let cols: Vec<usize> = (0..spec.n_params()).collect();
    LeastSquaresProblem::new(spec, dataset, *config)?.approximate_step(theta0, &cols)
}
