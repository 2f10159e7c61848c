//! Smoothed trajectories on a fine grid and integrals of the field along
//! them.

use std::fmt;
use std::fmt::Write as _;
use std::str::FromStr;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{check_increasing, Dataset, Environment};
use crate::error::{Error, Result};
use crate::field::text::fmt_f64;
use crate::field::FieldSpec;
use crate::scales::hadamard;

pub const DEFAULT_GRID_DENSITY: usize = 20;

/// Quartiles of the standard normal.
const NORMAL_QUARTILE: f64 = 0.674_489_750_196_081_7;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum SmootherKind {
    Linear,
    /// Gaussian Nadaraya-Watson smoother whose kernel quartiles sit at
    /// `+-0.25 * bandwidth`.
    Kernel {
        bandwidth: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SmootherSpec {
    pub kind: SmootherKind,
    /// Weight integral-matching rows by the inverse per-species variance of
    /// the smoothed curve.
    pub standardize: bool,
}

impl SmootherSpec {
    pub const LINEAR: SmootherSpec = SmootherSpec {
        kind: SmootherKind::Linear,
        standardize: false,
    };

    pub fn kernel(bandwidth: f64) -> Self {
        SmootherSpec {
            kind: SmootherKind::Kernel { bandwidth },
            standardize: false,
        }
    }

    pub fn standardized(mut self) -> Self {
        self.standardize = true;
        self
    }
}

impl fmt::Display for SmootherSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            SmootherKind::Linear => write!(f, "linear")?,
            SmootherKind::Kernel { bandwidth } => write!(f, "kernel:{}", fmt_f64(bandwidth))?,
        }
        if self.standardize {
            write!(f, "+std")?;
        }
        Ok(())
    }
}

impl FromStr for SmootherSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (body, standardize) = match s.strip_suffix("+std") {
            Some(b) => (b, true),
            None => (s, false),
        };
        let kind = if body == "linear" {
            SmootherKind::Linear
        } else if let Some(bw) = body.strip_prefix("kernel:") {
            let bandwidth: f64 = bw
                .parse()
                .map_err(|_| Error::InvalidInput(format!("bad bandwidth {bw:?}")))?;
            if !(bandwidth >= 0.0) || !bandwidth.is_finite() {
                return Err(Error::InvalidInput("bandwidth must be >= 0".into()));
            }
            SmootherKind::Kernel { bandwidth }
        } else {
            return Err(Error::InvalidInput(format!("unknown smoother {s:?}")));
        };
        Ok(SmootherSpec { kind, standardize })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SmoothedTrajectory {
    pub environment: usize,
    pub times: Vec<f64>,
    pub values: Vec<Vec<f64>>,
    /// Grid index of each observation time.
    pub obs_index: Vec<usize>,
    pub smoother: SmootherSpec,
}

impl SmoothedTrajectory {
    pub fn dim(&self) -> usize {
        self.values.first().map_or(0, Vec::len)
    }

    pub fn n_intervals(&self) -> usize {
        self.obs_index.len().saturating_sub(1)
    }

    pub fn at_observations(&self) -> Vec<Vec<f64>> {
        self.obs_index
            .iter()
            .map(|&k| self.values[k].clone())
            .collect()
    }

    pub fn initial_state(&self) -> &[f64] {
        &self.values[self.obs_index[0]]
    }

    /// Central differences on the grid (one-sided at the ends).
    pub fn derivative_at_grid(&self, k: usize) -> Vec<f64> {
        let n = self.times.len();
        let (a, b) = if k == 0 {
            (0, 1)
        } else if k + 1 == n {
            (n - 2, n - 1)
        } else {
            (k - 1, k + 1)
        };
        let dt = self.times[b] - self.times[a];
        self.values[b]
            .iter()
            .zip(&self.values[a])
            .map(|(u, v)| (u - v) / dt)
            .collect()
    }

    pub fn derivatives_at_observations(&self) -> Vec<Vec<f64>> {
        self.obs_index
            .iter()
            .map(|&k| self.derivative_at_grid(k))
            .collect()
    }

    /// Sample variance of each coordinate over the grid.
    pub fn species_variance(&self) -> Vec<f64> {
        let d = self.dim();
        let n = self.values.len() as f64;
        (0..d)
            .map(|l| {
                let mean = self.values.iter().map(|v| v[l]).sum::<f64>() / n;
                self.values
                    .iter()
                    .map(|v| (v[l] - mean).powi(2))
                    .sum::<f64>()
                    / n
            })
            .collect()
    }

    /// Tab-separated `time` plus one column per species.
    pub fn to_tsv(&self, species: &[String]) -> String {
        let mut out = String::from("time");
        for s in species {
            out.push('\t');
            out.push_str(s);
        }
        out.push('\n');
        for (t, v) in self.times.iter().zip(&self.values) {
            out.push_str(&fmt_f64(*t));
            for x in v {
                let _ = write!(out, "\t{}", fmt_f64(*x));
            }
            out.push('\n');
        }
        out
    }

    pub(crate) fn check_aligned(&self, obs_times: &[f64]) -> Result<()> {
        if self.obs_index.len() != obs_times.len()
            || self
                .obs_index
                .iter()
                .zip(obs_times)
                .any(|(&k, &t)| k >= self.times.len() || self.times[k] != t)
        {
            return Err(Error::InvalidInput(
                "smoothed grid is not aligned with the observation times".into(),
            ));
        }
        Ok(())
    }

    fn check_grid(&self) -> Result<()> {
        let ok = self.obs_index.len() >= 2
            && self.obs_index[0] == 0
            && *self.obs_index.last().unwrap() + 1 == self.times.len()
            && self.obs_index.windows(2).all(|w| w[1] > w[0]);
        if !ok {
            return Err(Error::InvalidInput(
                "smoothed grid is not aligned with the observation times".into(),
            ));
        }
        Ok(())
    }
}

fn fine_grid(times: &[f64], density: usize) -> (Vec<f64>, Vec<usize>) {
    let mut grid = Vec::with_capacity((times.len() - 1) * density + 1);
    let mut idx = Vec::with_capacity(times.len());
    for w in times.windows(2) {
        idx.push(grid.len());
        for s in 0..density {
            grid.push(w[0] + (w[1] - w[0]) * s as f64 / density as f64);
        }
    }
    idx.push(grid.len());
    grid.push(times[times.len() - 1]);
    (grid, idx)
}

fn check_env(env: &Environment, density: usize) -> Result<()> {
    if env.times.len() < 2 {
        return Err(Error::InvalidInput(
            "smoothing needs at least 2 observation times".into(),
        ));
    }
    check_increasing(&env.times)?;
    if env.values.len() != env.times.len() {
        return Err(Error::dim(
            "observation rows",
            env.times.len(),
            env.values.len(),
        ));
    }
    if density == 0 {
        return Err(Error::InvalidInput("grid density must be >= 1".into()));
    }
    Ok(())
}

/// Piecewise-linear interpolation of the observations.
pub fn linear_interpolate(env: &Environment, grid_density: usize) -> Result<SmoothedTrajectory> {
    check_env(env, grid_density)?;
    let (grid, obs_index) = fine_grid(&env.times, grid_density);
    let mut values = Vec::with_capacity(grid.len());
    for i in 0..env.times.len() - 1 {
        let (a, b) = (&env.values[i], &env.values[i + 1]);
        for s in 0..grid_density {
            let u = s as f64 / grid_density as f64;
            values.push(a.iter().zip(b).map(|(x, y)| x + u * (y - x)).collect());
        }
    }
    values.push(env.values[env.values.len() - 1].clone());
    Ok(SmoothedTrajectory {
        environment: 0,
        times: grid,
        values,
        obs_index,
        smoother: SmootherSpec::LINEAR,
    })
}

/// Gaussian kernel (Nadaraya-Watson) smoothing evaluated on the fine grid
/// inside the observed range. Bandwidth 0 gives linear interpolation.
pub fn kernel_smooth(
    env: &Environment,
    bandwidth: f64,
    grid_density: usize,
) -> Result<SmoothedTrajectory> {
    if !(bandwidth >= 0.0) || !bandwidth.is_finite() {
        return Err(Error::InvalidInput(format!(
            "bandwidth must be finite and >= 0, got {bandwidth}"
        )));
    }
    let mut out = linear_interpolate(env, grid_density)?;
    out.smoother = SmootherSpec::kernel(bandwidth);
    if bandwidth == 0.0 {
        return Ok(out);
    }
    let sigma = 0.25 * bandwidth / NORMAL_QUARTILE;
    let d = env.values[0].len();
    out.values = out
        .times
        .iter()
        .map(|&t| {
            let z: Vec<f64> = env
                .times
                .iter()
                .map(|&ti| -0.5 * ((t - ti) / sigma).powi(2))
                .collect();
            let zmax = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let w: Vec<f64> = z.iter().map(|v| (v - zmax).exp()).collect();
            let total: f64 = w.iter().sum();
            (0..d)
                .map(|l| {
                    w.iter()
                        .zip(&env.values)
                        .map(|(wi, y)| wi * y[l])
                        .sum::<f64>()
                        / total
                })
                .collect()
        })
        .collect();
    Ok(out)
}

/// Applies one smoother to every environment.
pub fn smooth_dataset(
    dataset: &Dataset,
    smoother: &SmootherSpec,
    grid_density: usize,
) -> Result<Vec<SmoothedTrajectory>> {
    dataset
        .environments
        .iter()
        .enumerate()
        .map(|(e, env)| {
            let mut s = match smoother.kind {
                SmootherKind::Linear => linear_interpolate(env, grid_density)?,
                SmootherKind::Kernel { bandwidth } => kernel_smooth(env, bandwidth, grid_density)?,
            };
            s.environment = e;
            s.smoother = *smoother;
            Ok(s)
        })
        .collect()
}

/// Median gap between consecutive observation times over all environments.
pub fn median_gap(dataset: &Dataset) -> f64 {
    let mut gaps: Vec<f64> = dataset
        .environments
        .iter()
        .flat_map(|e| e.times.windows(2).map(|w| w[1] - w[0]))
        .collect();
    if gaps.is_empty() {
        return 0.0;
    }
    gaps.sort_by(f64::total_cmp);
    let n = gaps.len();
    if n % 2 == 1 {
        gaps[n / 2]
    } else {
        0.5 * (gaps[n / 2 - 1] + gaps[n / 2])
    }
}

/// Linear interpolation and Gaussian kernels at 0.5, 1 and 2 times the median
/// observation gap, each with and without standardization.
pub fn default_smoothers(dataset: &Dataset) -> Vec<SmootherSpec> {
    let h = median_gap(dataset);
    let mut base = vec![SmootherSpec::LINEAR];
    base.extend([0.5, 1.0, 2.0].map(|f| SmootherSpec::kernel(f * h)));
    base.iter()
        .copied()
        .chain(base.iter().map(|s| s.standardized()))
        .collect()
}

/// Integrals of the field over each observation interval.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentIntegrals {
    /// `x(t_{i+1}) - x(t_i)` of the smoothed curve.
    pub increments: Vec<Vec<f64>>,
    /// Per interval, `d x |columns|`: the integrated parameter Jacobian
    /// `int d f / d theta_j ds`, including the intervention scale.
    pub blocks: Vec<DMatrix<f64>>,
    /// Per interval, `int f(x(s), theta * c) ds` (only for requests at a
    /// parameter value).
    pub values: Option<Vec<Vec<f64>>>,
    pub columns: Vec<usize>,
}

#[derive(Debug, Clone, Copy)]
pub enum SegmentRequest<'a> {
    /// Design blocks of a field linear in its parameters, so that the
    /// interval integral equals `block * theta`. `None` means all columns.
    Design { columns: Option<&'a [usize]> },
    /// Integral of the field at a parameter value and its Jacobian.
    AtTheta {
        theta: &'a [f64],
        columns: Option<&'a [usize]>,
    },
}

/// Composite trapezoid integration of the field (or its parameter Jacobian)
/// along the smoothed curve over each observation interval.
pub fn integrate_field_segments(
    spec: &FieldSpec,
    smoothed: &SmoothedTrajectory,
    request: SegmentRequest<'_>,
    scales: &[f64],
) -> Result<SegmentIntegrals> {
    smoothed.check_grid()?;
    let d = spec.dim();
    let p = spec.n_params();
    if smoothed.dim() != d {
        return Err(Error::dim("smoothed trajectory", d, smoothed.dim()));
    }
    if scales.len() != p {
        return Err(Error::dim("intervention scale vector", p, scales.len()));
    }
    let (theta, columns) = match request {
        SegmentRequest::Design { columns } => {
            if !spec.is_theta_linear() {
                return Err(Error::InvalidInput(
                    "design blocks need a field linear in its parameters; request the integral at a parameter value instead".into(),
                ));
            }
            (None, columns)
        }
        SegmentRequest::AtTheta { theta, columns } => {
            spec.check_theta(theta)?;
            (Some(theta), columns)
        }
    };
    let cols: Vec<usize> = match columns {
        Some(c) => {
            if let Some(&bad) = c.iter().find(|&&j| j >= p) {
                return Err(Error::InvalidInput(format!("column {bad} out of range")));
            }
            c.to_vec()
        }
        None => (0..p).collect(),
    };
    let phi = match theta {
        Some(t) => hadamard(t, scales),
        None => vec![0.0; p],
    };
    let m = cols.len();
    let with_values = theta.is_some();

    let per_interval: Vec<(Vec<f64>, DMatrix<f64>, Vec<f64>)> = (0..smoothed.n_intervals())
        .into_par_iter()
        .map(|i| {
            let (k0, k1) = (smoothed.obs_index[i], smoothed.obs_index[i + 1]);
            let mut jac = vec![0.0; d * m];
            let mut fval = vec![0.0; d];
            let mut block = vec![0.0; d * m];
            let mut integral = vec![0.0; d];
            for k in k0..=k1 {
                let w = trapezoid_weight(&smoothed.times, k, k0, k1);
                let x = &smoothed.values[k];
                spec.jacobian_theta_cols_into(&phi, x, &cols, &mut jac);
                for (b, g) in block.iter_mut().zip(&jac) {
                    *b += w * g;
                }
                if with_values {
                    spec.eval_into(&phi, x, &mut fval);
                    for (s, f) in integral.iter_mut().zip(&fval) {
                        *s += w * f;
                    }
                }
            }
            let mut bm = DMatrix::from_row_slice(d, m, &block);
            for (q, &j) in cols.iter().enumerate() {
                bm.column_mut(q).scale_mut(scales[j]);
            }
            let inc = smoothed.values[k1]
                .iter()
                .zip(&smoothed.values[k0])
                .map(|(a, b)| a - b)
                .collect();
            (inc, bm, integral)
        })
        .collect();

    let mut increments = Vec::with_capacity(per_interval.len());
    let mut blocks = Vec::with_capacity(per_interval.len());
    let mut values = Vec::with_capacity(per_interval.len());
    for (inc, b, v) in per_interval {
        increments.push(inc);
        blocks.push(b);
        values.push(v);
    }
    Ok(SegmentIntegrals {
        increments,
        blocks,
        values: with_values.then_some(values),
        columns: cols,
    })
}

#[inline]
fn trapezoid_weight(t: &[f64], k: usize, k0: usize, k1: usize) -> f64 {
    let left = if k > k0 { t[k] - t[k - 1] } else { 0.0 };
    let right = if k < k1 { t[k + 1] - t[k] } else { 0.0 };
    0.5 * (left + right)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{IntMatrix, Stoichiometry};

    fn env2() -> Environment {
        Environment::new(vec![0.0, 1.0], vec![vec![1.0, 1.0], vec![3.0, 3.0]])
    }

    fn decay() -> FieldSpec {
        FieldSpec::mass_action(
            Stoichiometry::with_default_names(
                IntMatrix::from_rows(&[vec![1]]).unwrap(),
                IntMatrix::from_rows(&[vec![0]]).unwrap(),
            )
            .unwrap(),
        )
    }

    #[test]
    fn linear_interpolation_examples() {
        let s = linear_interpolate(&env2(), 2).unwrap();
        assert_eq!(s.times, vec![0.0, 0.5, 1.0]);
        assert_eq!(s.values[1], vec![2.0, 2.0]);
        let s = linear_interpolate(&env2(), 1).unwrap();
        assert_eq!(s.times, vec![0.0, 1.0]);
        assert_eq!(s.obs_index, vec![0, 1]);
        let c = Environment::new(vec![0.0, 1.0, 2.0], vec![vec![4.0]; 3]);
        let s = linear_interpolate(&c, 7).unwrap();
        assert!(s.values.iter().all(|v| v == &vec![4.0]));
        let dup = Environment::new(vec![0.0, 0.0], vec![vec![1.0]; 2]);
        assert!(linear_interpolate(&dup, 3).is_err());
    }

    #[test]
    fn kernel_limits() {
        let env = Environment::new(
            vec![0.0, 0.5, 1.0, 2.0],
            vec![vec![1.0], vec![4.0], vec![2.0], vec![5.0]],
        );
        let wide = kernel_smooth(&env, 1e6 * 2.0, 5).unwrap();
        for v in &wide.values {
            assert!((v[0] - 3.0).abs() < 1e-6);
        }
        let zero = kernel_smooth(&env, 0.0, 5).unwrap();
        assert_eq!(zero.values, linear_interpolate(&env, 5).unwrap().values);
        let c = Environment::new(vec![0.0, 1.0, 3.0], vec![vec![2.5]; 3]);
        for bw in [0.01, 0.3, 10.0] {
            let s = kernel_smooth(&c, bw, 4).unwrap();
            assert!(s.values.iter().all(|v| (v[0] - 2.5).abs() < 1e-12));
        }
        // Tiny bandwidths stay finite.
        let s = kernel_smooth(&env, 1e-9, 3).unwrap();
        assert!(s.values.iter().all(|v| v[0].is_finite()));
    }

    #[test]
    fn design_entry_for_linear_curve() {
        let env = Environment::new(vec![0.0, 1.0], vec![vec![2.0], vec![4.0]]);
        let s = linear_interpolate(&env, 1000).unwrap();
        let seg = integrate_field_segments(
            &decay(),
            &s,
            SegmentRequest::Design { columns: None },
            &[1.0],
        )
        .unwrap();
        assert!((seg.blocks[0][(0, 0)] + 3.0).abs() < 1e-6);
        assert_eq!(seg.increments[0], vec![2.0]);
    }

    #[test]
    fn trapezoid_is_second_order_on_quadratic_integrand() {
        // dx/dt = x^2 as a power law: the design entry integrates x^2.
        let spec =
            FieldSpec::power_law(IntMatrix::from_rows(&[vec![2]]).unwrap(), vec!["X".into()])
                .unwrap();
        let env = Environment::new(vec![0.0, 1.0], vec![vec![0.0], vec![1.0]]);
        let err = |density: usize| {
            let s = linear_interpolate(&env, density).unwrap();
            let seg = integrate_field_segments(
                &spec,
                &s,
                SegmentRequest::Design { columns: None },
                &[1.0],
            )
            .unwrap();
            (seg.blocks[0][(0, 0)] - 1.0 / 3.0).abs()
        };
        let ratio = err(5) / err(20);
        assert!((12.0..=20.0).contains(&ratio), "{ratio}");
    }

    #[test]
    fn intervals_are_additive_and_scales_pass_through() {
        let spec =
            crate::field::enumerate_search_space(crate::field::SearchSpace::Enzyme, 3).unwrap();
        let env = Environment::new(
            vec![0.0, 0.3, 1.0, 1.7],
            vec![
                vec![1.0, 2.0, 0.5],
                vec![1.5, 1.0, 0.7],
                vec![0.9, 1.3, 1.1],
                vec![0.4, 2.2, 0.8],
            ],
        );
        let s = linear_interpolate(&env, 9).unwrap();
        let ones = vec![1.0; 6];
        let seg =
            integrate_field_segments(&spec, &s, SegmentRequest::Design { columns: None }, &ones)
                .unwrap();
        let mut whole = s.clone();
        whole.obs_index = vec![0, s.times.len() - 1];
        let one = integrate_field_segments(
            &spec,
            &whole,
            SegmentRequest::Design { columns: None },
            &ones,
        )
        .unwrap();
        let sum = &seg.blocks[0] + &seg.blocks[1] + &seg.blocks[2];
        assert!((sum - &one.blocks[0]).abs().max() < 1e-10);

        let theta = [0.3, 0.1, 0.7, 0.2, 0.5, 0.9];
        let c = [1.0, 0.0, 2.0, 1.0, 1.0, 0.5];
        let scaled =
            integrate_field_segments(&spec, &s, SegmentRequest::Design { columns: None }, &c)
                .unwrap();
        let at = integrate_field_segments(
            &spec,
            &s,
            SegmentRequest::AtTheta {
                theta: &theta,
                columns: None,
            },
            &c,
        )
        .unwrap();
        let th = nalgebra::DVector::from_row_slice(&theta);
        for i in 0..3 {
            let lin = &scaled.blocks[i] * &th;
            let direct = &at.values.as_ref().unwrap()[i];
            for l in 0..3 {
                assert!((lin[l] - direct[l]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn smoother_names_round_trip() {
        for s in ["linear", "kernel:0.25", "kernel:0.1+std", "linear+std"] {
            assert_eq!(s.parse::<SmootherSpec>().unwrap().to_string(), s);
        }
        assert!("spline".parse::<SmootherSpec>().is_err());
    }
}
