//! Integral matching: the field integrated along smoothed curves is matched
//! to the curves' increments.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use super::{path_anchor, FitResult, LossKind};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::field::FieldSpec;
use crate::optim::{
    screened_path, Eval, Objective, Penalty, PenaltyConfig, ProxControls, QuadraticLoss,
};
use crate::smooth::{integrate_field_segments, SegmentRequest, SmoothedTrajectory};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ImVariant {
    /// Increments over consecutive observation intervals.
    Consecutive,
    /// Observations matched to `x0 + int_{t_1}^{t_i} f ds`. With
    /// `fit_initial_state` the initial state of each environment becomes a
    /// free, unpenalized variable; otherwise the smoothed value at `t_1` is
    /// used.
    Cumulative { fit_initial_state: bool },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImOptions {
    pub variant: ImVariant,
    pub controls: ProxControls,
}

impl Default for ImOptions {
    fn default() -> Self {
        ImOptions {
            variant: ImVariant::Consecutive,
            controls: ProxControls::default(),
        }
    }
}

enum Inner<'a> {
    Linear(QuadraticLoss),
    Nonlinear(NonlinearIm<'a>),
}

/// The assembled integral-matching loss. Its first `p` coordinates are the
/// field parameters; any further ones are free initial states.
pub struct ImProblem<'a> {
    inner: Inner<'a>,
    p: usize,
    extra: usize,
}

impl ImProblem<'_> {
    pub fn n_field_params(&self) -> usize {
        self.p
    }

    pub fn n_extra(&self) -> usize {
        self.extra
    }

    pub fn quadratic(&self) -> Option<&QuadraticLoss> {
        match &self.inner {
            Inner::Linear(q) => Some(q),
            Inner::Nonlinear(_) => None,
        }
    }
}

impl Objective for ImProblem<'_> {
    fn dim(&self) -> usize {
        self.p + self.extra
    }

    fn value(&self, theta: &[f64]) -> Result<Eval> {
        match &self.inner {
            Inner::Linear(q) => q.value(theta),
            Inner::Nonlinear(n) => n.eval(theta, &[]),
        }
    }

    fn value_grad(&self, theta: &[f64], cols: &[usize]) -> Result<Eval> {
        match &self.inner {
            Inner::Linear(q) => q.value_grad(theta, cols),
            Inner::Nonlinear(n) => n.eval(theta, cols),
        }
    }
}

/// Square-root row weights per environment, interval (left endpoint) and
/// species, including the standardization factor of the smoother.
pub(crate) fn row_weights(
    dataset: &Dataset,
    smoothed: &[SmoothedTrajectory],
    e: usize,
    n_rows: usize,
) -> Vec<Vec<f64>> {
    let env = &dataset.environments[e];
    let s = &smoothed[e];
    let d = dataset.dim();
    let factor: Vec<f64> = if s.smoother.standardize {
        s.species_variance()
            .into_iter()
            .map(|v| if v > 0.0 { 1.0 / v } else { 1.0 })
            .collect()
    } else {
        vec![1.0; d]
    };
    (0..n_rows)
        .map(|i| {
            (0..d)
                .map(|l| (env.weights[i][l] * factor[l]).sqrt())
                .collect()
        })
        .collect()
}

pub(crate) fn check_smoothed(
    spec: &FieldSpec,
    dataset: &Dataset,
    smoothed: &[SmoothedTrajectory],
) -> Result<()> {
    dataset.validate()?;
    if dataset.dim() != spec.dim() {
        return Err(Error::dim("dataset species", spec.dim(), dataset.dim()));
    }
    dataset.check_params(spec.n_params())?;
    if smoothed.len() != dataset.n_environments() {
        return Err(Error::dim(
            "smoothed trajectories",
            dataset.n_environments(),
            smoothed.len(),
        ));
    }
    for (s, env) in smoothed.iter().zip(&dataset.environments) {
        s.check_aligned(&env.times)?;
        if s.dim() != spec.dim() {
            return Err(Error::dim("smoothed trajectory", spec.dim(), s.dim()));
        }
    }
    Ok(())
}

/// Assembles the integral-matching loss for the given smoothed curves.
pub fn im_problem<'a>(
    spec: &'a FieldSpec,
    dataset: &'a Dataset,
    smoothed: &'a [SmoothedTrajectory],
    variant: ImVariant,
) -> Result<ImProblem<'a>> {
    check_smoothed(spec, dataset, smoothed)?;
    let p = spec.n_params();
    let d = spec.dim();
    let n_env = dataset.n_environments();
    if !spec.is_theta_linear() {
        if variant != ImVariant::Consecutive {
            return Err(Error::InvalidInput(
                "the cumulative variant needs a field linear in its parameters".into(),
            ));
        }
        return Ok(ImProblem {
            inner: Inner::Nonlinear(NonlinearIm::new(spec, dataset, smoothed)),
            p,
            extra: 0,
        });
    }
    let extra = match variant {
        ImVariant::Cumulative {
            fit_initial_state: true,
        } => n_env * d,
        _ => 0,
    };
    let m = p + extra;
    let blocks: Vec<Result<(Vec<f64>, Vec<f64>)>> = (0..n_env)
        .into_par_iter()
        .map(|e| {
            let seg = integrate_field_segments(
                spec,
                &smoothed[e],
                SegmentRequest::Design { columns: None },
                dataset.scales.get(e),
            )?;
            let n = dataset.environments[e].n_times();
            let mut rows = Vec::new();
            let mut resp = Vec::new();
            match variant {
                ImVariant::Consecutive => {
                    let sw = row_weights(dataset, smoothed, e, n - 1);
                    for i in 0..n - 1 {
                        for l in 0..d {
                            rows.extend(seg.blocks[i].row(l).iter().map(|v| sw[i][l] * v));
                            resp.push(sw[i][l] * seg.increments[i][l]);
                        }
                    }
                }
                ImVariant::Cumulative { fit_initial_state } => {
                    let sw = row_weights(dataset, smoothed, e, n);
                    let y = &dataset.environments[e].values;
                    let x0 = smoothed[e].initial_state();
                    let mut acc = DMatrix::zeros(d, p);
                    for i in 0..n {
                        if i > 0 {
                            acc += &seg.blocks[i - 1];
                        }
                        for l in 0..d {
                            let mut row: Vec<f64> =
                                acc.row(l).iter().map(|v| sw[i][l] * v).collect();
                            let mut r = y[i][l];
                            if fit_initial_state {
                                let mut ext = vec![0.0; extra];
                                ext[e * d + l] = sw[i][l];
                                row.extend(ext);
                            } else {
                                r -= x0[l];
                            }
                            rows.extend(row);
                            resp.push(sw[i][l] * r);
                        }
                    }
                }
            }
            Ok((rows, resp))
        })
        .collect();
    let mut all_rows = Vec::new();
    let mut all_resp = Vec::new();
    for b in blocks {
        let (r, y) = b?;
        all_rows.extend(r);
        all_resp.extend(y);
    }
    let n_rows = all_resp.len();
    let design = DMatrix::from_row_slice(n_rows, m, &all_rows);
    Ok(ImProblem {
        inner: Inner::Linear(QuadraticLoss::from_design(
            design,
            DVector::from_vec(all_resp),
        )),
        p,
        extra,
    })
}

struct NonlinearIm<'a> {
    spec: &'a FieldSpec,
    dataset: &'a Dataset,
    smoothed: &'a [SmoothedTrajectory],
    sqrt_w: Vec<Vec<Vec<f64>>>,
}

impl<'a> NonlinearIm<'a> {
    fn new(spec: &'a FieldSpec, dataset: &'a Dataset, smoothed: &'a [SmoothedTrajectory]) -> Self {
        let sqrt_w = (0..dataset.n_environments())
            .map(|e| row_weights(dataset, smoothed, e, dataset.environments[e].n_times() - 1))
            .collect();
        NonlinearIm {
            spec,
            dataset,
            smoothed,
            sqrt_w,
        }
    }

    fn eval(&self, theta: &[f64], cols: &[usize]) -> Result<Eval> {
        let d = self.spec.dim();
        let mut value = 0.0;
        let mut grad = vec![0.0; cols.len()];
        for e in 0..self.dataset.n_environments() {
            let seg = integrate_field_segments(
                self.spec,
                &self.smoothed[e],
                SegmentRequest::AtTheta {
                    theta,
                    columns: Some(cols),
                },
                self.dataset.scales.get(e),
            )?;
            let vals = seg.values.as_ref().expect("values requested");
            for (i, inc) in seg.increments.iter().enumerate() {
                for l in 0..d {
                    let sw = self.sqrt_w[e][i][l];
                    let r = sw * (inc[l] - vals[i][l]);
                    value += 0.5 * r * r;
                    for (q, g) in grad.iter_mut().enumerate() {
                        *g -= r * sw * seg.blocks[i][(l, q)];
                    }
                }
            }
        }
        Ok(Eval {
            value,
            grad,
            diverged: false,
        })
    }
}

pub(crate) fn resolve_penalty(
    spec: &FieldSpec,
    penalty: &PenaltyConfig,
    extra: usize,
) -> Result<Penalty> {
    let p = spec.n_params();
    let base = penalty.resolve(p, &spec.default_bounds())?;
    if base.dim() != p {
        return Err(Error::dim("penalty weights", p, base.dim()));
    }
    let mut weights = base.weights;
    let mut bounds = base.bounds;
    weights.extend(std::iter::repeat_n(0.0, extra));
    bounds.extend(std::iter::repeat_n(
        (f64::NEG_INFINITY, f64::INFINITY),
        extra,
    ));
    Penalty::new(base.kind, weights, bounds)
}

/// Penalized integral matching along a lambda path.
pub fn integral_matching(
    spec: &FieldSpec,
    dataset: &Dataset,
    smoothed: &[SmoothedTrajectory],
    penalty: &PenaltyConfig,
    options: &ImOptions,
) -> Result<Vec<FitResult>> {
    let prob = im_problem(spec, dataset, smoothed, options.variant)?;
    let pen = resolve_penalty(spec, penalty, prob.n_extra())?;
    let (lmax, null) = path_anchor(&prob, &pen, &options.controls)?;
    let lambdas = penalty.lambdas(lmax)?;
    let path = screened_path(&prob, &pen, &lambdas, &null, &options.controls)?;
    let p = spec.n_params();
    Ok(path
        .into_iter()
        .map(|st| {
            let mut f = FitResult::new(LossKind::Im, st.lambda, st.theta[..p].to_vec(), st.loss);
            f.objective = st.objective;
            f.iterations = st.iterations;
            f.converged = st.converged();
            f.smoother = smoothed.first().map(|s| s.smoother);
            f
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Environment;
    use crate::field::{IntMatrix, SearchSpace, Stoichiometry};
    use crate::ode::{solve_ivp, SolveConfig};
    use crate::optim::PenaltyKind;
    use crate::scales::InterventionScales;
    use crate::smooth::{smooth_dataset, SmootherSpec, DEFAULT_GRID_DENSITY};

    fn lotka_volterra() -> FieldSpec {
        FieldSpec::mass_action(
            Stoichiometry::with_default_names(
                IntMatrix::from_rows(&[vec![1, 0], vec![1, 1], vec![0, 1]]).unwrap(),
                IntMatrix::from_rows(&[vec![2, 0], vec![0, 2], vec![0, 0]]).unwrap(),
            )
            .unwrap(),
        )
    }

    fn dense_lv() -> (FieldSpec, Dataset) {
        let spec = lotka_volterra();
        let times: Vec<f64> = (0..201).map(|k| k as f64 * 0.05).collect();
        let traj = solve_ivp(
            &spec,
            &[1.0, 0.5, 1.0],
            &[1.0, 0.5],
            &times,
            &SolveConfig::rkf45(1e-12, 1e-10),
        )
        .unwrap();
        let ds = Dataset::new(
            spec.species().to_vec(),
            vec![Environment::new(times, traj.states)],
            InterventionScales::ones(1, 3),
        )
        .unwrap();
        (spec, ds)
    }

    #[test]
    fn dense_noise_free_rates_are_recovered() {
        let (spec, ds) = dense_lv();
        let sm = smooth_dataset(&ds, &SmootherSpec::LINEAR, DEFAULT_GRID_DENSITY).unwrap();
        let fits = integral_matching(
            &spec,
            &ds,
            &sm,
            &PenaltyConfig::new(PenaltyKind::None),
            &ImOptions::default(),
        )
        .unwrap();
        assert_eq!(fits.len(), 1);
        for (a, b) in fits[0].theta.iter().zip([1.0, 0.5, 1.0]) {
            assert!((a - b).abs() < 0.01 * b, "{a} vs {b}");
        }
    }

    #[test]
    fn unpenalized_matches_dense_weighted_least_squares() {
        let (spec, ds) = dense_lv();
        let sm = smooth_dataset(&ds, &SmootherSpec::kernel(0.2), 5).unwrap();
        let prob = im_problem(&spec, &ds, &sm, ImVariant::Consecutive).unwrap();
        let q = prob.quadratic().unwrap();
        let exact = q
            .gram()
            .unwrap()
            .clone()
            .lu()
            .solve(q.linear_term())
            .unwrap();
        let fits = integral_matching(
            &spec,
            &ds,
            &sm,
            &PenaltyConfig::new(PenaltyKind::None).with_bounds(vec![
                (
                    f64::NEG_INFINITY,
                    f64::INFINITY
                );
                3
            ]),
            &ImOptions::default(),
        )
        .unwrap();
        for j in 0..3 {
            assert!((fits[0].theta[j] - exact[j]).abs() < 1e-6);
        }
    }

    #[test]
    fn zero_increments_give_zero_estimates() {
        let spec = crate::field::enumerate_search_space(SearchSpace::Enzyme, 3).unwrap();
        let env = Environment::new(vec![0.0, 1.0, 2.0], vec![vec![1.0, 2.0, 3.0]; 3]);
        let ds = Dataset::new(
            spec.species().to_vec(),
            vec![env],
            InterventionScales::ones(1, 6),
        )
        .unwrap();
        let sm = smooth_dataset(&ds, &SmootherSpec::LINEAR, 4).unwrap();
        let fits = integral_matching(
            &spec,
            &ds,
            &sm,
            &PenaltyConfig::default(),
            &ImOptions::default(),
        )
        .unwrap();
        assert_eq!(fits.len(), 50);
        assert!(fits.iter().all(|f| f.theta.iter().all(|t| *t == 0.0)));
    }

    #[test]
    fn doubling_weights_and_lambda_gives_same_solution() {
        let (spec, ds) = dense_lv();
        let sm = smooth_dataset(&ds, &SmootherSpec::LINEAR, 4).unwrap();
        let doubled = ds.with_weights(
            &ds.weights()
                .iter()
                .map(|w| {
                    w.iter()
                        .map(|r| r.iter().map(|v| 2.0 * v).collect())
                        .collect()
                })
                .collect::<Vec<_>>(),
        );
        let pen = PenaltyConfig::new(PenaltyKind::L1).with_lambdas(vec![0.4, 0.1, 0.01]);
        let pen2 = PenaltyConfig::new(PenaltyKind::L1).with_lambdas(vec![0.8, 0.2, 0.02]);
        let a = integral_matching(&spec, &ds, &sm, &pen, &ImOptions::default()).unwrap();
        let b = integral_matching(&spec, &doubled, &sm, &pen2, &ImOptions::default()).unwrap();
        for (x, y) in a.iter().zip(&b) {
            for (u, v) in x.theta.iter().zip(&y.theta) {
                assert!((u - v).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn cumulative_variant_with_free_initial_state() {
        let (spec, ds) = dense_lv();
        let sm = smooth_dataset(&ds, &SmootherSpec::LINEAR, 4).unwrap();
        let opts = ImOptions {
            variant: ImVariant::Cumulative {
                fit_initial_state: true,
            },
            ..Default::default()
        };
        let fits = integral_matching(
            &spec,
            &ds,
            &sm,
            &PenaltyConfig::new(PenaltyKind::None),
            &opts,
        )
        .unwrap();
        for (a, b) in fits[0].theta.iter().zip([1.0, 0.5, 1.0]) {
            assert!((a - b).abs() < 0.02 * b, "{a} vs {b}");
        }
    }

    #[test]
    fn nonlinear_family_runs_by_proximal_gradient() {
        let spec = FieldSpec::rational_mass_action(
            IntMatrix::from_rows(&[vec![1, 0]]).unwrap(),
            IntMatrix::from_rows(&[vec![1, 1]]).unwrap(),
            vec!["A".into(), "B".into()],
        )
        .unwrap();
        let truth: Vec<f64> = (0..spec.n_params())
            .map(|j| if j < spec.n_params() / 2 { 0.0 } else { 0.5 })
            .collect();
        let env = Environment::new(
            vec![0.0, 0.5, 1.0, 1.5],
            vec![
                vec![2.0, 0.0],
                vec![1.5, 0.4],
                vec![1.2, 0.7],
                vec![1.0, 0.9],
            ],
        );
        let ds = Dataset::new(
            spec.species().to_vec(),
            vec![env],
            InterventionScales::ones(1, spec.n_params()),
        )
        .unwrap();
        let sm = smooth_dataset(&ds, &SmootherSpec::LINEAR, 5).unwrap();
        let prob = im_problem(&spec, &ds, &sm, ImVariant::Consecutive).unwrap();
        let all: Vec<usize> = (0..spec.n_params()).collect();
        let ev = prob.value_grad(&truth, &all).unwrap();
        for j in 0..spec.n_params() {
            let h = 1e-6;
            let mut tp = truth.clone();
            tp[j] += h;
            let mut tm = truth.clone();
            tm[j] -= h;
            let fd = (prob.value(&tp).unwrap().value - prob.value(&tm).unwrap().value) / (2.0 * h);
            assert!((fd - ev.grad[j]).abs() < 1e-5 * fd.abs().max(1.0));
        }
        let fits = integral_matching(
            &spec,
            &ds,
            &sm,
            &PenaltyConfig::default().with_path(crate::optim::LambdaPath::Auto {
                n: 5,
                min_ratio: 1e-2,
            }),
            &ImOptions::default(),
        )
        .unwrap();
        assert_eq!(fits.len(), 5);
        assert!(fits[0].theta.iter().all(|t| *t == 0.0));
    }
}
