//! Penalized least squares on the ODE solution and the unpenalized refit on a
//! fixed support.

use nalgebra::DVector;

use super::im::resolve_penalty;
use super::{path_anchor, FitResult, LossKind};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::field::FieldSpec;
use crate::ode::{LeastSquaresProblem, SolveConfig};
use crate::optim::{proximal_gradient, Eval, Objective, PenaltyConfig, ProxControls};

/// [`LeastSquaresProblem`] as an optimizer objective. Solver failures count
/// as divergence.
pub struct LsObjective<'a> {
    problem: LeastSquaresProblem<'a>,
}

impl<'a> LsObjective<'a> {
    pub fn new(problem: LeastSquaresProblem<'a>) -> Self {
        LsObjective {
            problem: problem.tolerate_failures(true),
        }
    }

    pub fn problem(&self) -> &LeastSquaresProblem<'a> {
        &self.problem
    }
}

impl Objective for LsObjective<'_> {
    fn dim(&self) -> usize {
        self.problem.spec().n_params()
    }

    fn value(&self, theta: &[f64]) -> Result<Eval> {
        let ev = self.problem.loss(theta)?;
        Ok(Eval {
            value: ev.loss,
            grad: Vec::new(),
            diverged: !ev.diverged.is_empty(),
        })
    }

    fn value_grad(&self, theta: &[f64], cols: &[usize]) -> Result<Eval> {
        let ev = self.problem.loss_and_partial_gradient(theta, cols)?;
        Ok(Eval {
            value: ev.loss,
            grad: ev.gradient.unwrap_or_default(),
            diverged: !ev.diverged.is_empty(),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LsOptions {
    pub solve: SolveConfig,
    pub controls: ProxControls,
    /// Initial states per environment; first observations when absent.
    pub initial_states: Option<Vec<Vec<f64>>>,
    /// Start of the path instead of the null solution.
    pub warm_start: Option<Vec<f64>>,
}

impl Default for LsOptions {
    fn default() -> Self {
        LsOptions {
            solve: SolveConfig::default(),
            controls: ProxControls {
                max_iter: 300,
                ..ProxControls::default()
            },
            initial_states: None,
            warm_start: None,
        }
    }
}

fn build_problem<'a>(
    spec: &'a FieldSpec,
    dataset: &'a Dataset,
    solve: &SolveConfig,
    x0: &Option<Vec<Vec<f64>>>,
) -> Result<LeastSquaresProblem<'a>> {
    let mut prob = LeastSquaresProblem::new(spec, dataset, *solve)?;
    if let Some(x0) = x0 {
        prob = prob.with_initial_states(x0.clone())?;
    }
    Ok(prob.tolerate_failures(true))
}

/// Proximal gradient on the least-squares loss along a lambda path. A path
/// point where every trial step diverged is reported unconverged at the
/// previous solution and the path continues.
pub fn penalized_least_squares(
    spec: &FieldSpec,
    dataset: &Dataset,
    penalty: &PenaltyConfig,
    options: &LsOptions,
) -> Result<Vec<FitResult>> {
    let obj = LsObjective::new(build_problem(
        spec,
        dataset,
        &options.solve,
        &options.initial_states,
    )?);
    let pen = resolve_penalty(spec, penalty, 0)?;
    let (lmax, null) = path_anchor(&obj, &pen, &options.controls)?;
    let lambdas = penalty.lambdas(lmax)?;
    let mut warm = match &options.warm_start {
        Some(w) => {
            spec.check_theta(w)?;
            w.clone()
        }
        None => null,
    };
    let mut out = Vec::with_capacity(lambdas.len());
    for lam in lambdas {
        match proximal_gradient(&obj, &pen, lam, &warm, &options.controls) {
            Ok(st) => {
                let diverged = obj.problem.loss(&st.theta)?.diverged;
                let mut f = FitResult::new(LossKind::Ls, lam, st.theta.clone(), st.loss);
                f.objective = st.objective;
                f.iterations = st.iterations;
                f.converged = st.converged();
                f.diverged = diverged;
                warm = st.theta;
                out.push(f);
            }
            Err(Error::Stalled {
                iterations,
                best_objective,
                best_theta,
            }) => {
                let ev = obj.problem.loss(&best_theta)?;
                let mut f = FitResult::new(LossKind::Ls, lam, best_theta, ev.loss);
                f.objective = best_objective;
                f.iterations = iterations;
                f.converged = false;
                f.diverged = ev.diverged;
                out.push(f);
            }
            Err(e) => return Err(e),
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RefitOptions {
    pub solve: SolveConfig,
    pub max_iter: usize,
    /// Relative decrease of the loss below which the fit stops.
    pub tol: f64,
    pub initial_states: Option<Vec<Vec<f64>>>,
    /// Per-coordinate variable scaling; coordinates with zero scale are
    /// held at zero.
    pub scales: Option<Vec<f64>>,
    /// Box per coordinate; the family's natural box when absent.
    pub bounds: Option<Vec<(f64, f64)>>,
    /// Try one frozen-trajectory step before damped Gauss-Newton.
    pub approximate_start: bool,
    /// Fit the initial state of every environment jointly with the
    /// parameters (starting from `initial_states` or the first
    /// observations).
    pub fit_initial_state: bool,
}

impl Default for RefitOptions {
    fn default() -> Self {
        RefitOptions {
            solve: SolveConfig::rkf45(1e-10, 1e-10),
            max_iter: 200,
            tol: 1e-12,
            initial_states: None,
            scales: None,
            bounds: None,
            approximate_start: true,
            fit_initial_state: false,
        }
    }
}

/// Unpenalized least-squares fit over the coordinates in `support`, all
/// other coordinates fixed at zero, starting from `init`.
pub fn refit_on_support(
    spec: &FieldSpec,
    dataset: &Dataset,
    support: &[usize],
    init: &[f64],
    options: &RefitOptions,
) -> Result<FitResult> {
    let p = spec.n_params();
    if init.len() != p {
        return Err(Error::dim("initial parameter", p, init.len()));
    }
    if let Some(&j) = support.iter().find(|&&j| j >= p) {
        return Err(Error::InvalidInput(format!(
            "support index {j} out of range"
        )));
    }
    let scales = options.scales.clone().unwrap_or_else(|| vec![1.0; p]);
    if scales.len() != p {
        return Err(Error::dim("refit scales", p, scales.len()));
    }
    if scales.iter().any(|s| !(*s >= 0.0) || !s.is_finite()) {
        return Err(Error::InvalidInput(
            "refit scales must be finite and >= 0".into(),
        ));
    }
    let bounds = options
        .bounds
        .clone()
        .unwrap_or_else(|| spec.default_bounds());
    if bounds.len() != p {
        return Err(Error::dim("refit bounds", p, bounds.len()));
    }
    let mut supp: Vec<usize> = support
        .iter()
        .copied()
        .filter(|&j| scales[j] != 0.0)
        .collect();
    supp.sort_unstable();
    supp.dedup();

    let prob = build_problem(spec, dataset, &options.solve, &options.initial_states)?;
    let mut theta = vec![0.0; p];
    for &j in &supp {
        theta[j] = init[j].clamp(bounds[j].0, bounds[j].1);
    }
    let start = prob.loss(&theta)?;
    let loss = start.loss;
    if supp.is_empty() {
        let mut f = FitResult::new(LossKind::Refit, 0.0, theta, loss);
        f.diverged = start.diverged;
        return Ok(f);
    }
    if options.approximate_start && spec.is_theta_linear() {
        if let Ok(step) = prob.approximate_step(&theta, &supp) {
            let cand: Vec<f64> = step
                .theta
                .iter()
                .zip(&bounds)
                .map(|(t, &(lo, hi))| t.clamp(lo, hi))
                .collect();
            let ev = prob.loss(&cand)?;
            if ev.diverged.is_empty() && ev.loss < loss {
                theta = cand;
            }
        }
    }

    let mut vars = Vars {
        prob,
        theta,
        supp: supp.clone(),
        fit_x0: options.fit_initial_state,
    };
    let mut z: Vec<f64> = supp.iter().map(|&j| vars.theta[j]).collect();
    let mut s: Vec<f64> = supp.iter().map(|&j| scales[j]).collect();
    let mut box_: Vec<(f64, f64)> = supp.iter().map(|&j| bounds[j]).collect();
    if options.fit_initial_state {
        for x in vars.prob.initial_states() {
            z.extend_from_slice(x);
        }
        let k = z.len() - s.len();
        s.extend(std::iter::repeat_n(1.0, k));
        box_.extend(std::iter::repeat_n((0.0, f64::INFINITY), k));
    }
    let (z, iterations, converged) =
        levenberg_marquardt(&mut vars, z, &s, &box_, options.max_iter, options.tol)?;
    let fin = vars.loss(&z)?;
    let mut f = FitResult::new(LossKind::Refit, 0.0, vars.theta.clone(), fin.loss);
    f.iterations = iterations;
    f.converged = converged;
    f.diverged = fin.diverged;
    Ok(f)
}

/// Optimization variables of a refit: the support coordinates, then the
/// initial states when they are fitted.
struct Vars<'a> {
    prob: LeastSquaresProblem<'a>,
    theta: Vec<f64>,
    supp: Vec<usize>,
    fit_x0: bool,
}

impl Vars<'_> {
    fn load(&mut self, z: &[f64]) -> Result<()> {
        let m = self.supp.len();
        for (q, &j) in self.supp.iter().enumerate() {
            self.theta[j] = z[q];
        }
        if self.fit_x0 {
            let d = self.prob.spec().dim();
            let x0 = z[m..].chunks(d).map(<[f64]>::to_vec).collect();
            self.prob.set_initial_states(x0)?;
        }
        Ok(())
    }

    fn loss(&mut self, z: &[f64]) -> Result<crate::ode::LossEval> {
        self.load(z)?;
        self.prob.loss(&self.theta)
    }

    fn residuals(&mut self, z: &[f64]) -> Result<crate::ode::ResidualEval> {
        self.load(z)?;
        if self.fit_x0 {
            self.prob.residuals_and_jacobian_x0(&self.theta, &self.supp)
        } else {
            self.prob.residuals_and_jacobian(&self.theta, &self.supp)
        }
    }
}

/// Projected Levenberg-Marquardt with Marquardt damping on variables scaled
/// by `s`. Falls back to projected gradient steps once damping exceeds
/// 1e10.
fn levenberg_marquardt(
    vars: &mut Vars,
    mut z: Vec<f64>,
    s: &[f64],
    bounds: &[(f64, f64)],
    max_iter: usize,
    tol: f64,
) -> Result<(Vec<f64>, usize, bool)> {
    let m = z.len();
    let project = |z: &mut [f64]| {
        for (v, &(lo, hi)) in z.iter_mut().zip(bounds) {
            *v = v.clamp(lo, hi);
        }
    };
    let mut mu = 1e-3;
    let mut iterations = 0;
    'outer: while iterations < max_iter {
        iterations += 1;
        let re = vars.residuals(&z)?;
        let loss = re.loss;
        let mut js = re.jacobian;
        for q in 0..m {
            js.column_mut(q).scale_mut(s[q]);
        }
        let r = DVector::from_vec(re.residuals);
        let g = js.tr_mul(&r);
        let a = js.tr_mul(&js);
        let gnorm = g.amax();
        if gnorm == 0.0 {
            return Ok((z, iterations, true));
        }
        // Coordinates held at a bound by the gradient stay fixed this step.
        let free: Vec<usize> = (0..m)
            .filter(|&q| {
                let (lo, hi) = bounds[q];
                !((z[q] <= lo && g[q] > 0.0) || (z[q] >= hi && g[q] < 0.0))
            })
            .collect();
        if free.is_empty() {
            return Ok((z, iterations, true));
        }
        let nf = free.len();
        let af = nalgebra::DMatrix::from_fn(nf, nf, |i, j| a[(free[i], free[j])]);
        let gf = DVector::from_fn(nf, |i, _| g[free[i]]);
        let dmax = (0..nf).map(|q| af[(q, q)]).fold(0.0, f64::max).max(1e-300);
        loop {
            let mut lhs = af.clone();
            for q in 0..nf {
                lhs[(q, q)] += mu * af[(q, q)].max(1e-12 * dmax);
            }
            if let Some(delta) = lhs.cholesky().map(|c| c.solve(&(-&gf))) {
                let mut cand = z.clone();
                for (i, &q) in free.iter().enumerate() {
                    cand[q] += s[q] * delta[i];
                }
                project(&mut cand);
                let ev = vars.loss(&cand)?;
                if ev.diverged.is_empty() && ev.loss < loss {
                    let decrease = loss - ev.loss;
                    let moved = cand
                        .iter()
                        .zip(&z)
                        .map(|(a, b)| (a - b).abs())
                        .fold(0.0, f64::max);
                    let size = z.iter().map(|v| v.abs()).fold(0.0, f64::max);
                    z = cand;
                    mu = (mu / 3.0).max(1e-12);
                    if decrease <= tol * (1.0 + ev.loss) || moved <= 1e-12 * (1.0 + size) {
                        return Ok((z, iterations, true));
                    }
                    continue 'outer;
                }
            }
            mu *= 4.0;
            if mu > 1e10 {
                // Damping has collapsed the step; try plain projected gradient.
                let mut t = 1.0 / gnorm;
                for _ in 0..60 {
                    let mut cand = z.clone();
                    for q in 0..m {
                        cand[q] -= t * s[q] * g[q];
                    }
                    project(&mut cand);
                    let ev = vars.loss(&cand)?;
                    if ev.diverged.is_empty() && ev.loss < loss {
                        z = cand;
                        mu = 1e-3;
                        continue 'outer;
                    }
                    t *= 0.5;
                }
                return Ok((z, iterations, true));
            }
        }
    }
    Ok((z, iterations, false))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Environment;
    use crate::field::{IntMatrix, Stoichiometry};
    use crate::ode::solve_ivp;
    use crate::optim::{LambdaPath, PenaltyKind};
    use crate::scales::InterventionScales;

    fn classic_lv() -> FieldSpec {
        FieldSpec::mass_action(
            Stoichiometry::with_default_names(
                IntMatrix::from_rows(&[vec![1, 0], vec![1, 1], vec![0, 1], vec![1, 1]]).unwrap(),
                IntMatrix::from_rows(&[vec![2, 0], vec![0, 2], vec![0, 0], vec![0, 0]]).unwrap(),
            )
            .unwrap(),
        )
    }

    fn data(spec: &FieldSpec, theta: &[f64]) -> Dataset {
        let times: Vec<f64> = (0..21).map(|k| k as f64 * 0.5).collect();
        let envs = [[1.0, 0.5], [0.6, 1.2]]
            .iter()
            .map(|x0| {
                let tr =
                    solve_ivp(spec, theta, x0, &times, &SolveConfig::rkf45(1e-12, 1e-12)).unwrap();
                Environment::new(times.clone(), tr.states)
            })
            .collect();
        Dataset::new(
            spec.species().to_vec(),
            envs,
            InterventionScales::ones(2, spec.n_params()),
        )
        .unwrap()
    }

    #[test]
    fn refit_recovers_truth_from_perturbed_start() {
        let spec = classic_lv();
        let truth = [1.0, 0.8, 0.6, 0.0];
        let ds = data(&spec, &truth);
        let f = refit_on_support(
            &spec,
            &ds,
            &[0, 1, 2],
            &[1.15, 0.7, 0.7, 0.4],
            &RefitOptions::default(),
        )
        .unwrap();
        assert_eq!(f.theta[3], 0.0);
        for j in 0..3 {
            assert!((f.theta[j] - truth[j]).abs() < 1e-5, "{:?}", f.theta);
        }
        assert!(f.loss < 1e-12);
    }

    #[test]
    fn refit_without_approximate_start_also_converges() {
        let spec = classic_lv();
        let truth = [1.0, 0.8, 0.6, 0.0];
        let ds = data(&spec, &truth);
        let opts = RefitOptions {
            approximate_start: false,
            ..Default::default()
        };
        let f = refit_on_support(&spec, &ds, &[0, 1, 2], &[1.1, 0.7, 0.7, 0.0], &opts).unwrap();
        for j in 0..3 {
            assert!((f.theta[j] - truth[j]).abs() < 1e-5, "{:?}", f.theta);
        }
    }

    #[test]
    fn initial_states_fitted_jointly() {
        let spec = classic_lv();
        let truth = [1.0, 0.8, 0.6, 0.0];
        let ds = data(&spec, &truth);
        let opts = RefitOptions {
            initial_states: Some(vec![vec![1.2, 0.4], vec![0.5, 1.3]]),
            fit_initial_state: true,
            ..Default::default()
        };
        let f = refit_on_support(&spec, &ds, &[0, 1, 2], &[1.05, 0.75, 0.65, 0.0], &opts).unwrap();
        for j in 0..3 {
            assert!((f.theta[j] - truth[j]).abs() < 1e-5, "{:?}", f.theta);
        }
        assert!(f.loss < 1e-10);
    }

    #[test]
    fn empty_support_gives_null_loss() {
        let spec = classic_lv();
        let ds = data(&spec, &[1.0, 0.8, 0.6, 0.0]);
        let f = refit_on_support(&spec, &ds, &[], &[1.0; 4], &RefitOptions::default()).unwrap();
        assert_eq!(f.theta, vec![0.0; 4]);
        let null = LeastSquaresProblem::new(&spec, &ds, SolveConfig::default())
            .unwrap()
            .loss(&[0.0; 4])
            .unwrap()
            .loss;
        assert!((f.loss - null).abs() < 1e-9 * null.max(1.0));
    }

    #[test]
    fn zero_scale_coordinates_are_held_at_zero() {
        let spec = classic_lv();
        let ds = data(&spec, &[1.0, 0.8, 0.6, 0.0]);
        let opts = RefitOptions {
            scales: Some(vec![1.0, 1.0, 1.0, 0.0]),
            ..Default::default()
        };
        let f = refit_on_support(&spec, &ds, &[0, 1, 2, 3], &[1.0, 0.8, 0.6, 0.3], &opts).unwrap();
        assert_eq!(f.theta[3], 0.0);
    }

    #[test]
    fn penalized_path_starts_empty_and_grows() {
        let spec = classic_lv();
        let ds = data(&spec, &[1.0, 0.8, 0.6, 0.0]);
        let pen = PenaltyConfig::new(PenaltyKind::L1).with_path(LambdaPath::Auto {
            n: 4,
            min_ratio: 1e-3,
        });
        let fits = penalized_least_squares(&spec, &ds, &pen, &LsOptions::default()).unwrap();
        assert_eq!(fits.len(), 4);
        assert!(fits[0].support.is_empty());
        assert!(!fits[3].support.is_empty());
        assert!(fits.iter().all(|f| f.diverged.is_empty()));
    }
}
