//! Exhaustive gradient matching: per-species best-subset search on
//! derivative estimates, combined greedily across species.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use super::im::check_smoothed;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::field::FieldSpec;
use crate::ode::min_norm_solve;
use crate::smooth::SmoothedTrajectory;

/// Largest number of candidate columns per species for exhaustive search.
pub const MAX_EGM_COLUMNS: usize = 25;

#[derive(Debug, Clone, PartialEq)]
pub struct EgmResult {
    /// Joint support after `k` greedy steps, `k = 0..=d K` (shorter when
    /// every species runs out of columns).
    pub supports: Vec<Vec<usize>>,
    /// Joint gradient-matching loss of each support.
    pub losses: Vec<f64>,
    /// Unconstrained least-squares parameters on each support.
    pub thetas: Vec<Vec<f64>>,
    /// Per species, the best subset of each size and its loss.
    pub per_species: Vec<Vec<(Vec<usize>, f64)>>,
}

struct Normal {
    gram: DMatrix<f64>,
    b: DVector<f64>,
    c: f64,
}

impl Normal {
    fn zeros(p: usize) -> Self {
        Normal {
            gram: DMatrix::zeros(p, p),
            b: DVector::zeros(p),
            c: 0.0,
        }
    }

    fn add_row(&mut self, cols: &[usize], row: &[f64], y: f64) {
        for (a, &i) in cols.iter().enumerate() {
            self.b[i] += row[a] * y;
            for (bb, &j) in cols.iter().enumerate() {
                self.gram[(i, j)] += row[a] * row[bb];
            }
        }
        self.c += 0.5 * y * y;
    }

    /// Minimum of `c - b_S' t + t' G_SS t / 2` and its minimizer.
    fn solve(&self, s: &[usize]) -> (f64, DVector<f64>) {
        if s.is_empty() {
            return (self.c, DVector::zeros(0));
        }
        let g = self.gram.select_rows(s).select_columns(s);
        let b = DVector::from_iterator(s.len(), s.iter().map(|&j| self.b[j]));
        let t = match g.clone().cholesky() {
            Some(ch) => ch.solve(&b),
            None => min_norm_solve(g, &b).0,
        };
        ((self.c - 0.5 * b.dot(&t)).max(0.0), t)
    }
}

fn combinations(n: usize, k: usize, mut f: impl FnMut(&[usize])) {
    let mut idx: Vec<usize> = (0..k).collect();
    if k > n {
        return;
    }
    loop {
        f(&idx);
        let Some(i) = (0..k).rev().find(|&i| idx[i] != i + n - k) else {
            return;
        };
        idx[i] += 1;
        for j in i + 1..k {
            idx[j] = idx[j - 1] + 1;
        }
    }
}

/// Best subsets of each size up to `max_k` among `cols` for one species.
fn best_subsets(normal: &Normal, cols: &[usize], max_k: usize) -> Vec<(Vec<usize>, f64)> {
    let mut out = vec![(Vec::new(), normal.c)];
    for k in 1..=max_k.min(cols.len()) {
        let mut best: Option<(Vec<usize>, f64)> = None;
        combinations(cols.len(), k, |idx| {
            let s: Vec<usize> = idx.iter().map(|&i| cols[i]).collect();
            let (loss, _) = normal.solve(&s);
            if best.as_ref().is_none_or(|(_, b)| loss < *b) {
                best = Some((s, loss));
            }
        });
        out.extend(best);
    }
    out
}

/// Per-species best subsets of size up to `max_k`, merged by `d * max_k`
/// greedy steps. Requires a field linear in its parameters.
pub fn egm_search(
    spec: &FieldSpec,
    dataset: &Dataset,
    smoothed: &[SmoothedTrajectory],
    max_k: usize,
) -> Result<EgmResult> {
    check_smoothed(spec, dataset, smoothed)?;
    if !spec.is_theta_linear() {
        return Err(Error::InvalidInput(
            "gradient matching needs a field linear in its parameters".into(),
        ));
    }
    let d = spec.dim();
    let p = spec.n_params();
    let mut rel: Vec<Vec<usize>> = vec![Vec::new(); d];
    for j in 0..p {
        for l in spec.param_species(j) {
            if !rel[l].contains(&j) {
                rel[l].push(j);
            }
        }
    }
    if let Some(l) = (0..d).find(|&l| rel[l].len() > MAX_EGM_COLUMNS) {
        return Err(Error::Infeasible(format!(
            "species {} has {} candidate terms; exhaustive search allows at most {MAX_EGM_COLUMNS}",
            spec.species()[l],
            rel[l].len()
        )));
    }

    let mut global = Normal::zeros(p);
    let mut species: Vec<Normal> = (0..d).map(|_| Normal::zeros(p)).collect();
    let ones = vec![1.0; p];
    let all: Vec<usize> = (0..p).collect();
    let mut jac = vec![0.0; d * p];
    for (e, (env, sm)) in dataset.environments.iter().zip(smoothed).enumerate() {
        let c = dataset.scales.get(e);
        let xs = sm.at_observations();
        let dx = sm.derivatives_at_observations();
        for i in 0..env.n_times() {
            spec.jacobian_theta_cols_into(&ones, &xs[i], &all, &mut jac);
            for l in 0..d {
                let sw = env.weights[i][l].sqrt();
                let row: Vec<f64> = rel[l].iter().map(|&j| sw * jac[l * p + j] * c[j]).collect();
                let y = sw * dx[i][l];
                species[l].add_row(&rel[l], &row, y);
                global.add_row(&rel[l], &row, y);
            }
        }
    }

    let per_species: Vec<Vec<(Vec<usize>, f64)>> = (0..d)
        .into_par_iter()
        .map(|l| best_subsets(&species[l], &rel[l], max_k))
        .collect();

    let union = |k: &[usize]| -> Vec<usize> {
        let mut s: Vec<usize> = (0..d)
            .flat_map(|l| per_species[l][k[l]].0.iter().copied())
            .collect();
        s.sort_unstable();
        s.dedup();
        s
    };
    let fill = |s: &[usize]| -> (f64, Vec<f64>) {
        let (loss, t) = global.solve(s);
        let mut theta = vec![0.0; p];
        for (q, &j) in s.iter().enumerate() {
            theta[j] = t[q];
        }
        (loss, theta)
    };

    let mut k = vec![0usize; d];
    let s0 = union(&k);
    let (l0, t0) = fill(&s0);
    let mut result = EgmResult {
        supports: vec![s0],
        losses: vec![l0],
        thetas: vec![t0],
        per_species: per_species.clone(),
    };
    for _ in 0..d * max_k {
        let mut best: Option<(Vec<usize>, f64, Vec<usize>, Vec<f64>)> = None;
        for l in 0..d {
            if k[l] + 1 >= per_species[l].len() {
                continue;
            }
            let mut trial = k.clone();
            trial[l] += 1;
            let s = union(&trial);
            let (loss, theta) = fill(&s);
            if best.as_ref().is_none_or(|b| loss < b.1) {
                best = Some((trial, loss, s, theta));
            }
        }
        let Some((trial, loss, s, theta)) = best else {
            break;
        };
        k = trial;
        result.supports.push(s);
        result.losses.push(loss);
        result.thetas.push(theta);
    }
    Ok(result)
}
