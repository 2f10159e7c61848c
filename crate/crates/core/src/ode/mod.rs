//! Initial-value solves, sensitivity propagation and least-squares gradients.

mod loss;
mod solver;

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::data::check_increasing;
use crate::error::{Error, Result};
use crate::field::FieldSpec;

pub(crate) use loss::min_norm_solve;
pub use loss::{
    approximate_gradient_step, ls_loss_and_gradient, ApproxStep, LeastSquaresProblem, LossEval,
    ResidualEval,
};
pub(crate) use solver::{integrate, AuxRequest};

/// Default overflow guard: a state component beyond this magnitude marks the
/// solve as diverged.
pub const OVERFLOW_GUARD: f64 = 1e12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "kebab-case")]
pub enum Method {
    /// Classical RK4 with at most `step` between consecutive substeps; each
    /// output interval is split into equal substeps.
    Rk4Fixed { step: f64 },
    /// Embedded Fehlberg 4(5). `initial_step <= 0` picks one automatically.
    Rkf45Adaptive {
        initial_step: f64,
        abs_tol: f64,
        rel_tol: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SensitivityMethod {
    /// Explicit Euler on the state solver's accepted steps.
    SimultaneousEuler,
    /// Same Runge-Kutta stages as the state.
    SimultaneousRk4,
}

impl SensitivityMethod {
    pub fn name(self) -> &'static str {
        match self {
            SensitivityMethod::SimultaneousEuler => "simultaneous-euler",
            SensitivityMethod::SimultaneousRk4 => "simultaneous-rk4",
        }
    }
}

impl fmt::Display for SensitivityMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SensitivityMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "simultaneous-euler" | "euler" => Ok(SensitivityMethod::SimultaneousEuler),
            "simultaneous-rk4" | "rk4" => Ok(SensitivityMethod::SimultaneousRk4),
            other => Err(Error::InvalidInput(format!(
                "unknown sensitivity method {other:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolveConfig {
    pub method: Method,
    pub max_steps: usize,
    pub sensitivity: SensitivityMethod,
    pub overflow: f64,
}

impl Default for SolveConfig {
    fn default() -> Self {
        SolveConfig::rkf45(1e-8, 1e-6)
    }
}

impl SolveConfig {
    pub fn rk4(step: f64) -> Self {
        SolveConfig {
            method: Method::Rk4Fixed { step },
            max_steps: 1_000_000,
            sensitivity: SensitivityMethod::SimultaneousRk4,
            overflow: OVERFLOW_GUARD,
        }
    }

    pub fn rkf45(abs_tol: f64, rel_tol: f64) -> Self {
        SolveConfig {
            method: Method::Rkf45Adaptive {
                initial_step: 0.0,
                abs_tol,
                rel_tol,
            },
            max_steps: 100_000,
            sensitivity: SensitivityMethod::SimultaneousRk4,
            overflow: OVERFLOW_GUARD,
        }
    }

    pub fn with_sensitivity(mut self, method: SensitivityMethod) -> Self {
        self.sensitivity = method;
        self
    }

    pub fn with_max_steps(mut self, max_steps: usize) -> Self {
        self.max_steps = max_steps;
        self
    }

    pub fn method_name(&self) -> &'static str {
        match self.method {
            Method::Rk4Fixed { .. } => "rk4-fixed",
            Method::Rkf45Adaptive { .. } => "rkf45-adaptive",
        }
    }

    pub fn validate(&self) -> Result<()> {
        let pos = |v: f64, what: &str| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::InvalidInput(format!(
                    "{what} must be positive, got {v}"
                )))
            }
        };
        match self.method {
            Method::Rk4Fixed { step } => pos(step, "step")?,
            Method::Rkf45Adaptive {
                initial_step,
                abs_tol,
                rel_tol,
            } => {
                if !(initial_step >= 0.0) {
                    return Err(Error::InvalidInput("initial step must be >= 0".into()));
                }
                pos(abs_tol, "abs_tol")?;
                pos(rel_tol, "rel_tol")?;
            }
        }
        if self.max_steps == 0 {
            return Err(Error::InvalidInput("max_steps must be positive".into()));
        }
        pos(self.overflow, "overflow guard")
    }
}

/// Solution at the requested output times. Sensitivity matrices are stored
/// row-major, `d x m` where `m` is the number of requested columns.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    pub sens_columns: Vec<usize>,
    pub sens_theta: Option<Vec<Vec<f64>>>,
    pub sens_x0: Option<Vec<Vec<f64>>>,
}

impl Trajectory {
    pub(crate) fn start(t0: f64, x0: &[f64], theta: bool, x0_sens: bool) -> Self {
        Trajectory {
            times: vec![t0],
            states: vec![x0.to_vec()],
            sens_columns: Vec::new(),
            sens_theta: theta.then(Vec::new),
            sens_x0: x0_sens.then(Vec::new),
        }
    }

    pub(crate) fn push_state(&mut self, t: f64, x: &[f64]) {
        self.times.push(t);
        self.states.push(x.to_vec());
    }

    /// Splits an augmented block (d x m, first `mt` columns for parameters,
    /// the rest for the initial state) into the stored matrices.
    pub(crate) fn record_aux(&mut self, a: &[f64], d: usize, m: usize, mt: usize) {
        if let Some(st) = self.sens_theta.as_mut() {
            let mut block = Vec::with_capacity(d * mt);
            for i in 0..d {
                block.extend_from_slice(&a[i * m..i * m + mt]);
            }
            st.push(block);
        }
        if let Some(sx) = self.sens_x0.as_mut() {
            let mut block = Vec::with_capacity(d * d);
            for i in 0..d {
                block.extend_from_slice(&a[i * m + mt..(i + 1) * m]);
            }
            sx.push(block);
        }
    }

    pub fn dim(&self) -> usize {
        self.states.first().map_or(0, Vec::len)
    }

    /// `dx(t_k)/dtheta` restricted to `sens_columns`.
    pub fn sens_theta_matrix(&self, k: usize) -> Option<DMatrix<f64>> {
        let d = self.dim();
        let m = self.sens_columns.len();
        self.sens_theta
            .as_ref()
            .map(|s| DMatrix::from_row_slice(d, m, &s[k]))
    }

    pub fn sens_x0_matrix(&self, k: usize) -> Option<DMatrix<f64>> {
        let d = self.dim();
        self.sens_x0
            .as_ref()
            .map(|s| DMatrix::from_row_slice(d, d, &s[k]))
    }
}

/// Which sensitivities to propagate.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SensitivityOptions {
    /// Parameter columns; `None` means all.
    pub columns: Option<Vec<usize>>,
    /// Also propagate `dx/dx0`.
    pub x0: bool,
}

fn check_inputs(
    spec: &FieldSpec,
    theta: &[f64],
    x0: &[f64],
    times: &[f64],
    config: &SolveConfig,
) -> Result<()> {
    config.validate()?;
    spec.check_theta(theta)?;
    if x0.len() != spec.dim() {
        return Err(Error::dim("initial state", spec.dim(), x0.len()));
    }
    if x0.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::Domain(
            "initial state must be finite and non-negative".into(),
        ));
    }
    if times.is_empty() {
        return Err(Error::InvalidInput("no output times".into()));
    }
    check_increasing(times)
}

/// Solves `dx/dt = f(x, theta)` from `x(times[0]) = x0`, reporting the state
/// at every entry of `times`.
pub fn solve_ivp(
    spec: &FieldSpec,
    theta: &[f64],
    x0: &[f64],
    times: &[f64],
    config: &SolveConfig,
) -> Result<Trajectory> {
    check_inputs(spec, theta, x0, times, config)?;
    Ok(integrate(
        spec,
        theta,
        x0,
        times,
        config,
        &AuxRequest::none(),
    )?)
}

/// Like [`solve_ivp`] but also propagates `dx/dtheta` (and optionally
/// `dx/dx0`) through the sensitivity equations.
pub fn solve_sensitivities(
    spec: &FieldSpec,
    theta: &[f64],
    x0: &[f64],
    times: &[f64],
    config: &SolveConfig,
    options: &SensitivityOptions,
) -> Result<Trajectory> {
    check_inputs(spec, theta, x0, times, config)?;
    let p = spec.n_params();
    let cols = match &options.columns {
        Some(c) => {
            if let Some(&bad) = c.iter().find(|&&j| j >= p) {
                return Err(Error::InvalidInput(format!(
                    "sensitivity column {bad} out of range (p = {p})"
                )));
            }
            c.clone()
        }
        None => (0..p).collect(),
    };
    let req = AuxRequest {
        theta_cols: cols.clone(),
        x0: options.x0,
        frozen: false,
    };
    let mut traj = integrate(spec, theta, x0, times, config, &req)?;
    traj.sens_columns = cols;
    if traj.sens_theta.is_none() {
        traj.sens_theta = Some(vec![Vec::new(); traj.times.len()]);
    }
    Ok(traj)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::SolveError;
    use crate::field::{enumerate_search_space, IntMatrix, SearchSpace, Stoichiometry};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn decay() -> FieldSpec {
        let st = Stoichiometry::with_default_names(
            IntMatrix::from_rows(&[vec![1]]).unwrap(),
            IntMatrix::from_rows(&[vec![0]]).unwrap(),
        )
        .unwrap();
        FieldSpec::mass_action(st)
    }

    /// E + S <-> ES -> E + P with species order (S, E, ES, P).
    pub(crate) fn michaelis_menten() -> FieldSpec {
        let st = Stoichiometry::new(
            IntMatrix::from_rows(&[vec![1, 1, 0, 0], vec![0, 0, 1, 0], vec![0, 0, 1, 0]]).unwrap(),
            IntMatrix::from_rows(&[vec![0, 0, 1, 0], vec![1, 1, 0, 0], vec![0, 1, 0, 1]]).unwrap(),
            vec!["S".into(), "E".into(), "ES".into(), "P".into()],
            vec!["bind".into(), "unbind".into(), "cat".into()],
        )
        .unwrap();
        FieldSpec::mass_action(st)
    }

    #[test]
    fn exponential_decay_adaptive() {
        let traj = solve_ivp(
            &decay(),
            &[1.0],
            &[1.0],
            &[0.0, 1.0],
            &SolveConfig::rkf45(1e-8, 1e-8),
        )
        .unwrap();
        assert!((traj.states[1][0] - (-1.0f64).exp()).abs() < 1e-6);
        assert_eq!(traj.times, vec![0.0, 1.0]);
    }

    #[test]
    fn rk4_is_fourth_order() {
        let exact = (-1.0f64).exp();
        let err = |h: f64| {
            let t = solve_ivp(&decay(), &[1.0], &[1.0], &[0.0, 1.0], &SolveConfig::rk4(h)).unwrap();
            (t.states[1][0] - exact).abs()
        };
        let ratio = err(0.1) / err(0.05);
        assert!((12.0..=20.0).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn michaelis_menten_conserves_enzyme() {
        let times: Vec<f64> = (0..=20).map(|k| k as f64 / 20.0).collect();
        let traj = solve_ivp(
            &michaelis_menten(),
            &[1.0, 1.0, 1.0],
            &[10.0, 2.0, 2.0, 10.0],
            &times,
            &SolveConfig::rkf45(1e-12, 1e-12),
        )
        .unwrap();
        for x in &traj.states {
            assert!((x[1] + x[2] - 4.0).abs() < 1e-8);
        }
    }

    #[test]
    fn zero_field_is_constant() {
        let spec = enumerate_search_space(SearchSpace::Enzyme, 3).unwrap();
        let traj = solve_ivp(
            &spec,
            &[0.0; 6],
            &[1.0, 2.0, 3.0],
            &[0.0, 0.5, 2.0],
            &SolveConfig::default(),
        )
        .unwrap();
        for x in &traj.states {
            assert_eq!(x, &vec![1.0, 2.0, 3.0]);
        }
    }

    #[test]
    fn linear_growth_sensitivity() {
        let spec =
            FieldSpec::power_law(IntMatrix::from_rows(&[vec![1]]).unwrap(), vec!["X".into()])
                .unwrap();
        for sens in [
            SensitivityMethod::SimultaneousRk4,
            SensitivityMethod::SimultaneousEuler,
        ] {
            // Euler accuracy follows the state solver's step size, so it gets
            // a fine fixed grid here.
            let cfg = match sens {
                SensitivityMethod::SimultaneousRk4 => SolveConfig::rkf45(1e-10, 1e-10),
                SensitivityMethod::SimultaneousEuler => SolveConfig::rk4(1e-3),
            }
            .with_sensitivity(sens);
            let traj = solve_sensitivities(
                &spec,
                &[0.5],
                &[1.0],
                &[0.0, 1.0],
                &cfg,
                &SensitivityOptions {
                    columns: None,
                    x0: true,
                },
            )
            .unwrap();
            let s = traj.sens_theta.as_ref().unwrap();
            assert_eq!(s[0], vec![0.0]);
            assert_eq!(traj.sens_x0.as_ref().unwrap()[0], vec![1.0]);
            let tol = if sens == SensitivityMethod::SimultaneousRk4 {
                1e-6
            } else {
                5e-3
            };
            assert!((s[1][0] - 0.5f64.exp()).abs() < tol, "{sens}: {}", s[1][0]);
            assert!((traj.sens_x0.as_ref().unwrap()[1][0] - 0.5f64.exp()).abs() < tol);
        }
    }

    #[test]
    fn lotka_volterra_sensitivities_match_finite_differences() {
        let spec = enumerate_search_space(SearchSpace::LotkaVolterra, 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let theta: Vec<f64> = (0..spec.n_params())
            .map(|_| rng.random_range(0.1..0.6))
            .collect();
        let x0 = [1.0, 0.5, 0.8];
        let times = [0.0, 0.5, 1.0];
        let cfg = SolveConfig::rkf45(1e-12, 1e-12);
        let traj =
            solve_sensitivities(&spec, &theta, &x0, &times, &cfg, &Default::default()).unwrap();
        let p = spec.n_params();
        for j in 0..p {
            let h = 1e-6 * theta[j].abs().max(1.0);
            let mut tp = theta.clone();
            tp[j] += h;
            let mut tm = theta.clone();
            tm[j] -= h;
            let up = solve_ivp(&spec, &tp, &x0, &times, &cfg).unwrap();
            let dn = solve_ivp(&spec, &tm, &x0, &times, &cfg).unwrap();
            for k in 1..times.len() {
                for i in 0..3 {
                    let fd = (up.states[k][i] - dn.states[k][i]) / (2.0 * h);
                    let an = traj.sens_theta.as_ref().unwrap()[k][i * p + j];
                    let rel = (fd - an).abs() / fd.abs().max(1e-3);
                    assert!(rel < 1e-4, "j={j} k={k} i={i}: {fd} vs {an}");
                }
            }
        }
    }

    #[test]
    fn blow_up_is_reported_as_divergence() {
        // dx/dt = x^2 explodes at t = 1 from x0 = 1.
        let spec =
            FieldSpec::power_law(IntMatrix::from_rows(&[vec![2]]).unwrap(), vec!["X".into()])
                .unwrap();
        let res = solve_ivp(&spec, &[1.0], &[1.0], &[0.0, 2.0], &SolveConfig::default());
        match res {
            Err(Error::Solve(SolveError::Diverged { partial, .. }))
            | Err(Error::Solve(SolveError::StepUnderflow { partial, .. })) => {
                assert_eq!(partial.times, vec![0.0]);
            }
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn step_limit_carries_partial_trajectory() {
        let cfg = SolveConfig::rk4(1e-3).with_max_steps(10);
        let err = solve_ivp(&decay(), &[1.0], &[1.0], &[0.0, 0.005, 1.0], &cfg).unwrap_err();
        match err {
            Error::Solve(e @ SolveError::StepLimit { .. }) => {
                assert_eq!(e.partial().times, vec![0.0, 0.005]);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        let cfg = SolveConfig::default();
        assert!(solve_ivp(&decay(), &[1.0], &[-1.0], &[0.0, 1.0], &cfg).is_err());
        assert!(solve_ivp(&decay(), &[1.0], &[1.0], &[1.0, 0.0], &cfg).is_err());
        assert!(solve_ivp(&decay(), &[-1.0], &[1.0], &[0.0, 1.0], &cfg).is_err());
        assert!(solve_ivp(
            &decay(),
            &[1.0],
            &[1.0],
            &[0.0, 1.0],
            &SolveConfig::rk4(0.0)
        )
        .is_err());
    }
}
