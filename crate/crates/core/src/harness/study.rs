//! Estimator sequences, replicate studies and the Michaelis-Menten bias
//! study.

use rayon::prelude::*;

use super::config::{Estimator, ExperimentConfig};
use super::metrics::{
    edge_scores, precision_recall, roc_auroc, roc_on_grid, select_by_test_mse, trajectory_mse, Mse,
    RocCurve,
};
use super::systems::{simulate_dataset, simulate_test_set, Simulation, System};
use crate::aim::{run_aim_multi, AimOptions};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::estimate::{
    egm_search, integral_matching, penalized_least_squares, refit_on_support, FitResult, ImOptions,
    ImVariant, LossKind, LsOptions, RefitOptions,
};
use crate::field::FieldSpec;
use crate::ode::SolveConfig;
use crate::optim::{support_of, LambdaPath, PenaltyConfig, PenaltyKind};
use crate::smooth::{median_gap, smooth_dataset, SmootherSpec, DEFAULT_GRID_DENSITY};

/// Fitting settings shared by all estimators of a study.
#[derive(Debug, Clone, PartialEq)]
pub struct Settings {
    pub lambdas: usize,
    pub min_ratio: f64,
    pub max_support: usize,
    pub egm_k: usize,
    pub solve: SolveConfig,
    pub refit_iters: usize,
    pub penalty: PenaltyKind,
}

impl Settings {
    pub fn from_config(cfg: &ExperimentConfig, space: &FieldSpec) -> Self {
        Settings {
            lambdas: cfg.lambdas,
            min_ratio: cfg.min_ratio,
            max_support: cfg.max_support.unwrap_or(5 * space.dim()),
            egm_k: cfg.egm_k,
            solve: cfg.solve_config(),
            refit_iters: cfg.refit_iters,
            penalty: cfg.penalty_kind(),
        }
    }

    fn penalty(&self, kind: PenaltyKind) -> PenaltyConfig {
        PenaltyConfig::new(kind).with_path(LambdaPath::Auto {
            n: self.lambdas,
            min_ratio: self.min_ratio,
        })
    }
}

/// Smoothers pooled by AIM: linear interpolation alone for long, dense
/// series; otherwise linear interpolation and the gradient matching kernel
/// (one median gap), each with and without standardization.
pub fn aim_smoothers(dataset: &Dataset) -> Vec<SmootherSpec> {
    let dense = dataset.environments.iter().all(|e| e.n_times() > 40);
    if dense {
        return vec![SmootherSpec::LINEAR];
    }
    let h = median_gap(dataset);
    let base = [SmootherSpec::LINEAR, SmootherSpec::kernel(h)];
    base.iter()
        .copied()
        .chain(base.iter().map(|s| s.standardized()))
        .collect()
}

fn truncate(fits: Vec<FitResult>, max_support: usize) -> Vec<FitResult> {
    let mut out: Vec<FitResult> = Vec::new();
    for f in fits {
        if f.support.len() > max_support {
            break;
        }
        if out.last().is_none_or(|l| l.support != f.support) {
            out.push(f);
        }
    }
    out
}

/// The ordered model sequence an estimator reports, from the null model
/// up to `max_support` coordinates.
pub fn fit_sequence(
    estimator: Estimator,
    space: &FieldSpec,
    dataset: &Dataset,
    settings: &Settings,
) -> Result<Vec<FitResult>> {
    match estimator {
        Estimator::Aim => {
            let options = AimOptions {
                max_support: Some(settings.max_support),
                refit: RefitOptions {
                    solve: settings.solve,
                    max_iter: settings.refit_iters,
                    tol: 1e-8,
                    ..RefitOptions::default()
                },
                ..AimOptions::default()
            };
            let run = run_aim_multi(
                space,
                dataset,
                &aim_smoothers(dataset),
                &settings.penalty(settings.penalty),
                &options,
            )?;
            Ok(run
                .ranked
                .strata
                .into_values()
                .map(|c| c.fit)
                .filter(|f| f.support.len() <= settings.max_support)
                .collect())
        }
        Estimator::Im => {
            let sm = smooth_dataset(dataset, &SmootherSpec::LINEAR, DEFAULT_GRID_DENSITY)?;
            let path = integral_matching(
                space,
                dataset,
                &sm,
                &settings.penalty(settings.penalty),
                &ImOptions::default(),
            )?;
            Ok(truncate(path, settings.max_support))
        }
        Estimator::LsScad => {
            let opts = LsOptions {
                solve: settings.solve,
                ..LsOptions::default()
            };
            let path = penalized_least_squares(
                space,
                dataset,
                &settings.penalty(PenaltyKind::DEFAULT_SCAD),
                &opts,
            )?;
            Ok(truncate(path, settings.max_support))
        }
        Estimator::Egm => {
            let smoother = SmootherSpec::kernel(median_gap(dataset));
            let sm = smooth_dataset(dataset, &smoother, DEFAULT_GRID_DENSITY)?;
            let res = egm_search(space, dataset, &sm, settings.egm_k)?;
            let fits = res
                .thetas
                .into_iter()
                .zip(res.losses)
                .map(|(theta, loss)| {
                    let mut f = FitResult::new(LossKind::Egm, 0.0, theta, loss);
                    f.smoother = Some(smoother);
                    f
                })
                .collect();
            Ok(truncate(fits, settings.max_support))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorOutcome {
    pub estimator: Estimator,
    pub sequence: Vec<FitResult>,
    pub roc: RocCurve,
    pub pr: Vec<(f64, f64)>,
    /// Index into `sequence` chosen on an independent test set and the
    /// trajectory MSE of that model against the truth.
    pub tuned: Option<(usize, Mse)>,
}

impl EstimatorOutcome {
    pub fn auroc(&self) -> f64 {
        self.roc.auroc
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplicateOutcome {
    pub replicate: usize,
    pub seed: u64,
    pub outcomes: Vec<EstimatorOutcome>,
}

impl ReplicateOutcome {
    pub fn get(&self, e: Estimator) -> Option<&EstimatorOutcome> {
        self.outcomes.iter().find(|o| o.estimator == e)
    }
}

/// Network metrics of a model sequence against the truth.
pub fn score_sequence(
    sim_space: &FieldSpec,
    truth: &[f64],
    sequence: &[FitResult],
) -> Result<(RocCurve, Vec<(f64, f64)>)> {
    let thetas: Vec<Vec<f64>> = sequence.iter().map(|f| f.theta.clone()).collect();
    let score = edge_scores(sim_space, truth, &thetas)?;
    Ok((roc_auroc(&score)?, precision_recall(&score)?))
}

/// Picks the sequence member with the smallest prediction error on an
/// independent test set, then reports its trajectory MSE against the truth
/// on the training design.
pub fn tune_on_test_set(
    sim: &Simulation,
    test: &Simulation,
    sequence: &[FitResult],
    solve: &SolveConfig,
) -> Result<Option<(usize, Mse)>> {
    let thetas: Vec<Vec<f64>> = sequence.iter().map(|f| f.theta.clone()).collect();
    let Some((k, _)) = select_by_test_mse(
        &sim.truth.space,
        &thetas,
        &test.dataset,
        &test.design.initial_states,
        solve,
    )?
    else {
        return Ok(None);
    };
    let mse = trajectory_mse(
        (&sim.truth.space, &thetas[k]),
        (&sim.truth.space, &sim.truth.theta),
        &sim.design.scales,
        &sim.design.initial_states,
        &sim.design.times,
        solve,
    )?;
    Ok(Some((k, mse)))
}

/// Simulates replicate `r`, fits every configured estimator and scores it.
pub fn run_replicate(cfg: &ExperimentConfig, r: usize, tune: bool) -> Result<ReplicateOutcome> {
    let seed = cfg.replicate_seed(r);
    let sim = simulate_dataset(&cfg.system(), seed)?;
    let settings = Settings::from_config(cfg, &sim.truth.space);
    let test = if tune {
        Some(simulate_test_set(&sim)?)
    } else {
        None
    };
    let mut outcomes = Vec::with_capacity(cfg.estimators.len());
    for &est in &cfg.estimators {
        let sequence = fit_sequence(est, &sim.truth.space, &sim.dataset, &settings)
            .map_err(|e| e.in_stage(est.name()))?;
        let (roc, pr) = score_sequence(&sim.truth.space, &sim.truth.theta, &sequence)?;
        let tuned = match &test {
            Some(t) => tune_on_test_set(&sim, t, &sequence, &settings.solve)?,
            None => None,
        };
        outcomes.push(EstimatorOutcome {
            estimator: est,
            sequence,
            roc,
            pr,
            tuned,
        });
    }
    Ok(ReplicateOutcome {
        replicate: r,
        seed,
        outcomes,
    })
}

/// All replicates of a configuration, run in parallel and returned in
/// replicate order.
pub fn run_replicates(cfg: &ExperimentConfig, tune: bool) -> Result<Vec<ReplicateOutcome>> {
    (0..cfg.replicates)
        .into_par_iter()
        .map(|r| run_replicate(cfg, r, tune))
        .collect()
}

/// Linear-interpolation quantile of sorted data.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

#[derive(Debug, Clone, PartialEq)]
pub struct Summary {
    pub mean: f64,
    pub median: f64,
    pub p05: f64,
    pub p95: f64,
}

pub fn summarize(values: &[f64]) -> Summary {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    Summary {
        mean: v.iter().sum::<f64>() / v.len().max(1) as f64,
        median: quantile(&v, 0.5),
        p05: quantile(&v, 0.05),
        p95: quantile(&v, 0.95),
    }
}

/// Pointwise summaries of ROC curves on a false positive rate grid.
pub fn summarize_roc(curves: &[&RocCurve], grid: &[f64]) -> Vec<Summary> {
    let tprs: Vec<Vec<f64>> = curves.iter().map(|c| roc_on_grid(c, grid)).collect();
    (0..grid.len())
        .map(|g| summarize(&tprs.iter().map(|t| t[g]).collect::<Vec<_>>()))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct MmRow {
    /// Bandwidth in units of the median gap; `None` for least squares.
    pub bandwidth: Option<f64>,
    /// Per parameter `(k_f, k_r, k_cat)`.
    pub summaries: Vec<Summary>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MmStudy {
    pub rows: Vec<MmRow>,
    /// Raw estimates, `[replicate][row][parameter]`.
    pub estimates: Vec<Vec<Vec<f64>>>,
}

/// Cumulative integral matching (free initial state) at each bandwidth,
/// plus least squares started from the bandwidth-0 estimate.
pub fn mm_bias_study(
    system: &System,
    replicates: usize,
    bandwidths: &[f64],
    seed: u64,
) -> Result<MmStudy> {
    if replicates == 0 || bandwidths.is_empty() {
        return Err(Error::InvalidInput("need replicates and bandwidths".into()));
    }
    if !matches!(system, System::MichaelisMenten { .. }) {
        return Err(Error::InvalidInput(
            "the bias study needs the michaelis-menten system".into(),
        ));
    }
    let im_opts = ImOptions {
        variant: ImVariant::Cumulative {
            fit_initial_state: true,
        },
        ..ImOptions::default()
    };
    let estimates: Vec<Vec<Vec<f64>>> = (0..replicates)
        .into_par_iter()
        .map(|r| -> Result<Vec<Vec<f64>>> {
            let sim = simulate_dataset(system, seed.wrapping_add(r as u64))?;
            let ds = &sim.dataset;
            let spec = &sim.truth.space;
            let h = median_gap(ds);
            let mut rows = Vec::with_capacity(bandwidths.len() + 1);
            for &b in bandwidths {
                let sm_spec = if b == 0.0 {
                    SmootherSpec::LINEAR
                } else {
                    SmootherSpec::kernel(b * h)
                };
                let sm = smooth_dataset(ds, &sm_spec, DEFAULT_GRID_DENSITY)?;
                let fit = integral_matching(
                    spec,
                    ds,
                    &sm,
                    &PenaltyConfig::new(PenaltyKind::None),
                    &im_opts,
                )?;
                rows.push(fit[0].theta.clone());
            }
            let init = match bandwidths.iter().position(|&b| b == 0.0) {
                Some(k) if support_of(&rows[k]).len() == 3 => rows[k].clone(),
                _ => vec![1.0; 3],
            };
            let opts = RefitOptions {
                fit_initial_state: true,
                ..RefitOptions::default()
            };
            let ls = refit_on_support(spec, ds, &[0, 1, 2], &init, &opts)?;
            rows.push(ls.theta);
            Ok(rows)
        })
        .collect::<Result<_>>()?;
    let n_rows = bandwidths.len() + 1;
    let rows = (0..n_rows)
        .map(|k| MmRow {
            bandwidth: bandwidths.get(k).copied(),
            summaries: (0..3)
                .map(|j| summarize(&estimates.iter().map(|e| e[k][j]).collect::<Vec<_>>()))
                .collect(),
        })
        .collect();
    Ok(MmStudy { rows, estimates })
}
