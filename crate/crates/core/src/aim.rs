//! Adaptive integral matching: IM path, adaptive rescaling, least-squares
//! refits on the IM supports and stratified ranking over smoothers.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rayon::prelude::*;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::estimate::{integral_matching, refit_on_support, FitResult, ImOptions, RefitOptions};
use crate::field::text::fmt_f64;
use crate::field::FieldSpec;
use crate::optim::PenaltyConfig;
use crate::scales::InterventionScales;
use crate::smooth::{
    integrate_field_segments, smooth_dataset, SegmentRequest, SmoothedTrajectory, SmootherSpec,
};

/// Observation weights per environment, time and species.
pub type Weights = Vec<Vec<Vec<f64>>>;

/// Cap for species whose IM residual vanishes, relative to the median
/// adapted weight.
pub const ZERO_RESIDUAL_CAP: f64 = 1e6;

#[derive(Debug, Clone, PartialEq)]
pub struct AdaptedScales {
    /// Per-coordinate factor, geometric mean 1 over the active coordinates.
    pub factors: Vec<f64>,
    /// `c_e * factors` for every environment.
    pub scales: InterventionScales,
    /// Coordinates with a zero integrated column (factor 0).
    pub inactive: Vec<usize>,
}

fn segments(
    spec: &FieldSpec,
    dataset: &Dataset,
    smoothed: &[SmoothedTrajectory],
    theta: Option<&[f64]>,
    columns: Option<&[usize]>,
) -> Result<Vec<crate::smooth::SegmentIntegrals>> {
    (0..dataset.n_environments())
        .into_par_iter()
        .map(|e| {
            let req = match theta {
                Some(theta) => SegmentRequest::AtTheta { theta, columns },
                None => SegmentRequest::Design { columns },
            };
            integrate_field_segments(spec, &smoothed[e], req, dataset.scales.get(e))
        })
        .collect()
}

/// Reciprocal 2-norms of the stacked integrated parameter partials. The
/// pilot estimate is only used by families that are nonlinear in their
/// parameters.
pub fn adapt_scales(
    spec: &FieldSpec,
    dataset: &Dataset,
    smoothed: &[SmoothedTrajectory],
    pilot: Option<&[f64]>,
) -> Result<AdaptedScales> {
    let p = spec.n_params();
    let theta = if spec.is_theta_linear() {
        None
    } else {
        Some(pilot.ok_or_else(|| {
            Error::InvalidInput("a pilot estimate is needed for this family".into())
        })?)
    };
    let segs = segments(spec, dataset, smoothed, theta, None)?;
    let mut sq = vec![0.0; p];
    for seg in &segs {
        for b in &seg.blocks {
            for (j, s) in sq.iter_mut().enumerate() {
                *s += b.column(j).norm_squared();
            }
        }
    }
    let mut factors: Vec<f64> = sq
        .iter()
        .map(|&s| {
            if s > 0.0 && s.is_finite() {
                1.0 / s.sqrt()
            } else {
                0.0
            }
        })
        .collect();
    let inactive: Vec<usize> = (0..p).filter(|&j| factors[j] == 0.0).collect();
    for &j in &inactive {
        log::warn!(
            "coordinate {} has a zero integrated column; excluded",
            spec.param_label(j)
        );
    }
    let active: Vec<f64> = factors.iter().copied().filter(|f| *f > 0.0).collect();
    if !active.is_empty() {
        let log_mean = active.iter().map(|f| f.ln()).sum::<f64>() / active.len() as f64;
        let g = log_mean.exp();
        factors.iter_mut().for_each(|f| *f /= g);
    }
    let scales = InterventionScales::new(
        dataset
            .scales
            .iter()
            .map(|c| c.iter().zip(&factors).map(|(a, b)| a * b).collect())
            .collect(),
    )?;
    Ok(AdaptedScales {
        factors,
        scales,
        inactive,
    })
}

/// Per-species IM residual sums of squares at `theta`, weighted by the
/// observation weights at the left end of each interval.
pub fn im_residual_sums(
    spec: &FieldSpec,
    dataset: &Dataset,
    smoothed: &[SmoothedTrajectory],
    theta: &[f64],
) -> Result<Vec<f64>> {
    let d = spec.dim();
    let segs = segments(spec, dataset, smoothed, Some(theta), Some(&[]))?;
    let mut rss = vec![0.0; d];
    for (seg, env) in segs.iter().zip(&dataset.environments) {
        let vals = seg.values.as_ref().expect("values requested");
        for (i, inc) in seg.increments.iter().enumerate() {
            for l in 0..d {
                let r = inc[l] - vals[i][l];
                rss[l] += env.weights[i][l] * r * r;
            }
        }
    }
    Ok(rss)
}

/// Observation weights divided by each species' IM residual sum of squares
/// and normalized to mean 1.
pub fn adapt_weights(
    spec: &FieldSpec,
    dataset: &Dataset,
    smoothed: &[SmoothedTrajectory],
    theta: &[f64],
) -> Result<Weights> {
    let weights = dataset.weights();
    let total: f64 = weights.iter().flatten().flatten().sum();
    if !(total > 0.0) {
        return Err(Error::InvalidInput(
            "all observation weights are zero".into(),
        ));
    }
    let rss = im_residual_sums(spec, dataset, smoothed, theta)?;
    let mut factor: Vec<f64> = rss
        .iter()
        .map(|&r| if r > 0.0 { 1.0 / r } else { 0.0 })
        .collect();
    if factor.contains(&0.0) {
        let mut pos: Vec<f64> = factor.iter().copied().filter(|f| *f > 0.0).collect();
        let cap = if pos.is_empty() {
            1.0
        } else {
            pos.sort_by(f64::total_cmp);
            let m = pos.len();
            let median = if m % 2 == 1 {
                pos[m / 2]
            } else {
                0.5 * (pos[m / 2 - 1] + pos[m / 2])
            };
            ZERO_RESIDUAL_CAP * median
        };
        factor
            .iter_mut()
            .filter(|f| **f == 0.0)
            .for_each(|f| *f = cap);
    }
    let mut out: Weights = weights
        .iter()
        .map(|env| {
            env.iter()
                .map(|row| row.iter().zip(&factor).map(|(w, f)| w * f).collect())
                .collect()
        })
        .collect();
    let count: usize = out.iter().flatten().map(Vec::len).sum();
    let mean = out.iter().flatten().flatten().sum::<f64>() / count as f64;
    out.iter_mut().flatten().flatten().for_each(|w| *w /= mean);
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AimOptions {
    pub im: ImOptions,
    pub refit: RefitOptions,
    pub adapt_scales: bool,
    pub adapt_weights: bool,
    pub grid_density: usize,
    /// Path points with larger supports are not refitted.
    pub max_support: Option<usize>,
}

impl Default for AimOptions {
    fn default() -> Self {
        AimOptions {
            im: ImOptions::default(),
            refit: RefitOptions::default(),
            adapt_scales: true,
            adapt_weights: true,
            grid_density: crate::smooth::DEFAULT_GRID_DENSITY,
            max_support: None,
        }
    }
}

/// Adapted quantities shared by the refits.
#[derive(Debug, Clone, PartialEq)]
pub struct Adaptation {
    pub factors: Vec<f64>,
    pub weights: Weights,
    pub initial_states: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AimRun {
    pub im: Vec<FitResult>,
    /// One refit per lambda, in path order, up to the support cap.
    pub refits: Vec<FitResult>,
    pub adaptation: Adaptation,
}

/// Scales, weights and initial states from one smoother and its IM path.
pub fn adaptation(
    spec: &FieldSpec,
    dataset: &Dataset,
    smoothed: &[SmoothedTrajectory],
    im_path: &[FitResult],
    options: &AimOptions,
) -> Result<Adaptation> {
    let pilot = &im_path
        .last()
        .ok_or_else(|| Error::InvalidInput("empty IM path".into()))?
        .theta;
    let p = spec.n_params();
    let factors = if options.adapt_scales {
        adapt_scales(spec, dataset, smoothed, Some(pilot))?.factors
    } else {
        vec![1.0; p]
    };
    let weights = if options.adapt_weights {
        adapt_weights(spec, dataset, smoothed, pilot)?
    } else {
        dataset.weights()
    };
    let initial_states = smoothed
        .iter()
        .map(|s| s.initial_state().to_vec())
        .collect();
    Ok(Adaptation {
        factors,
        weights,
        initial_states,
    })
}

/// Refits every distinct support of a path under the given adaptation.
pub fn refit_path(
    spec: &FieldSpec,
    dataset: &Dataset,
    path: &[FitResult],
    adaptation: &Adaptation,
    options: &RefitOptions,
) -> Result<Vec<FitResult>> {
    let weighted = dataset.with_weights(&adaptation.weights);
    let mut opts = options.clone();
    opts.scales = Some(adaptation.factors.clone());
    if opts.initial_states.is_none() {
        opts.initial_states = Some(adaptation.initial_states.clone());
    }
    let mut first: Vec<usize> = Vec::new();
    let mut owner = Vec::with_capacity(path.len());
    for (k, f) in path.iter().enumerate() {
        match first.iter().position(|&q| path[q].support == f.support) {
            Some(u) => owner.push(u),
            None => {
                owner.push(first.len());
                first.push(k);
            }
        }
    }
    let unique: Vec<FitResult> = first
        .par_iter()
        .map(|&k| refit_on_support(spec, &weighted, &path[k].support, &path[k].theta, &opts))
        .collect::<Result<_>>()?;
    Ok(path
        .iter()
        .zip(&owner)
        .map(|(f, &u)| {
            let mut r = unique[u].clone();
            r.lambda = f.lambda;
            r.smoother = f.smoother;
            r
        })
        .collect())
}

fn capped<'a>(path: &'a [FitResult], options: &AimOptions) -> &'a [FitResult] {
    match options.max_support {
        Some(m) => {
            let end = path
                .iter()
                .position(|f| f.support.len() > m)
                .unwrap_or(path.len());
            &path[..end]
        }
        None => path,
    }
}

/// IM path on the adapted problem: observation weights replaced and the
/// environment scales multiplied by the adapted factors. The returned
/// estimates are mapped back to the original parameterization.
pub fn adapted_path(
    spec: &FieldSpec,
    dataset: &Dataset,
    smoothed: &[SmoothedTrajectory],
    penalty: &PenaltyConfig,
    adaptation: &Adaptation,
    options: &AimOptions,
) -> Result<Vec<FitResult>> {
    let mut ds = dataset.with_weights(&adaptation.weights);
    ds.scales = InterventionScales::new(
        dataset
            .scales
            .iter()
            .map(|c| {
                c.iter()
                    .zip(&adaptation.factors)
                    .map(|(a, b)| a * b)
                    .collect()
            })
            .collect(),
    )?;
    let path = integral_matching(spec, &ds, smoothed, penalty, &options.im)?;
    Ok(path
        .into_iter()
        .map(|mut f| {
            for (t, g) in f.theta.iter_mut().zip(&adaptation.factors) {
                *t *= g;
            }
            f.support = crate::optim::support_of(&f.theta);
            f
        })
        .collect())
}

/// IM path, adaptation and refits for one smoother.
pub fn run_aim(
    spec: &FieldSpec,
    dataset: &Dataset,
    smoothed: &[SmoothedTrajectory],
    penalty: &PenaltyConfig,
    options: &AimOptions,
) -> Result<AimRun> {
    let pilot = integral_matching(spec, dataset, smoothed, penalty, &options.im)
        .map_err(|e| e.in_stage("integral matching"))?;
    let adaptation = adaptation(spec, dataset, smoothed, &pilot, options)
        .map_err(|e| e.in_stage("adaptation"))?;
    let im = if options.adapt_scales || options.adapt_weights {
        adapted_path(spec, dataset, smoothed, penalty, &adaptation, options)
            .map_err(|e| e.in_stage("adaptive integral matching"))?
    } else {
        pilot
    };
    let refits = refit_path(
        spec,
        dataset,
        capped(&im, options),
        &adaptation,
        &options.refit,
    )
    .map_err(|e| e.in_stage("refit"))?;
    Ok(AimRun {
        im,
        refits,
        adaptation,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub fit: FitResult,
    pub smoother_index: usize,
}

impl Candidate {
    pub fn size(&self) -> usize {
        self.fit.support.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankedModels {
    /// Best candidate per support size.
    pub strata: BTreeMap<usize, Candidate>,
    /// All candidates after deduplication by support.
    pub pool: Vec<Candidate>,
}

impl RankedModels {
    pub fn best_of_size(&self, size: usize) -> Option<&Candidate> {
        self.strata.get(&size)
    }

    /// The winner with the largest size not exceeding `size`.
    pub fn best_up_to(&self, size: usize) -> Option<&Candidate> {
        self.strata.range(..=size).next_back().map(|(_, c)| c)
    }
}

fn precedes(a: &Candidate, b: &Candidate) -> bool {
    (a.smoother_index, std::cmp::Reverse(OrdF64(a.fit.lambda)))
        < (b.smoother_index, std::cmp::Reverse(OrdF64(b.fit.lambda)))
}

struct OrdF64(f64);

impl PartialEq for OrdF64 {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other).is_eq()
    }
}

impl Eq for OrdF64 {}

impl PartialOrd for OrdF64 {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for OrdF64 {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.0.total_cmp(&other.0)
    }
}

/// Deduplicates by support (keeping the earliest smoother, then the larger
/// lambda) and keeps the minimal-loss candidate of each size.
pub fn stratified_rank(candidates: Vec<Candidate>) -> RankedModels {
    let mut ordered = candidates;
    ordered.sort_by(|a, b| {
        if precedes(a, b) {
            std::cmp::Ordering::Less
        } else if precedes(b, a) {
            std::cmp::Ordering::Greater
        } else {
            std::cmp::Ordering::Equal
        }
    });
    let mut pool: Vec<Candidate> = Vec::new();
    for c in ordered {
        if !pool.iter().any(|q| q.fit.support == c.fit.support) {
            pool.push(c);
        }
    }
    let mut strata: BTreeMap<usize, Candidate> = BTreeMap::new();
    for c in &pool {
        let better = match strata.get(&c.size()) {
            None => true,
            Some(w) => c.fit.loss < w.fit.loss,
        };
        if better {
            strata.insert(c.size(), c.clone());
        }
    }
    RankedModels { strata, pool }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MultiRun {
    pub ranked: RankedModels,
    pub runs: Vec<AimRun>,
}

/// [`run_aim`] for every smoother, pooled and ranked. Weights and initial
/// states are adapted once from the first smoother so that refit losses are
/// comparable across smoothers.
pub fn run_aim_multi(
    spec: &FieldSpec,
    dataset: &Dataset,
    smoothers: &[SmootherSpec],
    penalty: &PenaltyConfig,
    options: &AimOptions,
) -> Result<MultiRun> {
    if smoothers.is_empty() {
        return Err(Error::InvalidInput("no smoothers given".into()));
    }
    let smoothed: Vec<Vec<SmoothedTrajectory>> = smoothers
        .iter()
        .map(|s| smooth_dataset(dataset, s, options.grid_density))
        .collect::<Result<_>>()
        .map_err(|e| e.in_stage("smoothing"))?;
    let paths: Vec<Vec<FitResult>> = smoothed
        .par_iter()
        .map(|sm| integral_matching(spec, dataset, sm, penalty, &options.im))
        .collect::<Result<_>>()
        .map_err(|e| e.in_stage("integral matching"))?;
    let shared = adaptation(spec, dataset, &smoothed[0], &paths[0], options)
        .map_err(|e| e.in_stage("adaptation"))?;
    let adapt: Vec<Adaptation> = paths
        .iter()
        .enumerate()
        .map(|(k, path)| -> Result<Adaptation> {
            let mut a = shared.clone();
            if options.adapt_scales && k > 0 {
                let pilot = &path.last().expect("nonempty path").theta;
                a.factors = adapt_scales(spec, dataset, &smoothed[k], Some(pilot))?.factors;
            }
            Ok(a)
        })
        .collect::<Result<_>>()
        .map_err(|e| e.in_stage("adaptation"))?;
    let runs: Vec<AimRun> = paths
        .into_par_iter()
        .zip(adapt)
        .enumerate()
        .map(|(k, (pilot, adapt))| -> Result<AimRun> {
            let im = if options.adapt_scales || options.adapt_weights {
                adapted_path(spec, dataset, &smoothed[k], penalty, &adapt, options)
                    .map_err(|e| e.in_stage("adaptive integral matching"))?
            } else {
                pilot
            };
            let refits = refit_path(spec, dataset, capped(&im, options), &adapt, &options.refit)
                .map_err(|e| e.in_stage("refit"))?;
            Ok(AimRun {
                im,
                refits,
                adaptation: adapt,
            })
        })
        .collect::<Result<_>>()?;
    let candidates = runs
        .iter()
        .enumerate()
        .flat_map(|(k, r)| {
            r.refits.iter().map(move |f| Candidate {
                fit: f.clone(),
                smoother_index: k,
            })
        })
        .collect();
    Ok(MultiRun {
        ranked: stratified_rank(candidates),
        runs,
    })
}

/// Edge list `from -> to` of the network induced by `theta`.
pub fn edge_list(spec: &FieldSpec, theta: &[f64]) -> Vec<(usize, usize)> {
    let adj = spec.network(theta);
    let mut out = Vec::new();
    for (i, row) in adj.iter().enumerate() {
        for (l, &on) in row.iter().enumerate() {
            if on {
                out.push((l, i));
            }
        }
    }
    out.sort_unstable();
    out
}

/// Text report: one block per stratum with loss, provenance, sparse
/// parameters and induced edges.
pub fn write_report(spec: &FieldSpec, ranked: &RankedModels) -> String {
    let mut out = String::from("# ranked models v1\n");
    let names = spec.species();
    for (size, c) in &ranked.strata {
        let _ = writeln!(out, "[size {size}]");
        let _ = writeln!(out, "loss = {}", fmt_f64(c.fit.loss));
        let _ = writeln!(
            out,
            "smoother = {}",
            c.fit.smoother.map_or("-".into(), |s| s.to_string())
        );
        let _ = writeln!(out, "smoother_index = {}", c.smoother_index);
        let _ = writeln!(out, "lambda = {}", fmt_f64(c.fit.lambda));
        let _ = writeln!(out, "converged = {}", c.fit.converged);
        for &j in &c.fit.support {
            let _ = writeln!(
                out,
                "theta {j} {} = {}",
                spec.param_label(j),
                fmt_f64(c.fit.theta[j])
            );
        }
        for (l, i) in edge_list(spec, &c.fit.theta) {
            let _ = writeln!(out, "edge {} -> {}", names[l], names[i]);
        }
        out.push('\n');
    }
    out
}
