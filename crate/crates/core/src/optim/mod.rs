//! Proximal gradient with backtracking, active-set screening and warm-started
//! regularization paths.

mod penalty;
mod quadratic;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use penalty::{majorize_weights, prox_operator, PenaltyKind};
pub(crate) use penalty::{prox_scalar, threshold_weight};
pub use quadratic::QuadraticLoss;

/// A smooth loss evaluation. `grad` lists the partial derivatives for the
/// requested columns, in the requested order.
#[derive(Debug, Clone, PartialEq)]
pub struct Eval {
    pub value: f64,
    pub grad: Vec<f64>,
    pub diverged: bool,
}

pub trait Objective: Sync {
    fn dim(&self) -> usize;
    fn value(&self, theta: &[f64]) -> Result<Eval>;
    fn value_grad(&self, theta: &[f64], cols: &[usize]) -> Result<Eval>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum LambdaPath {
    /// `n` log-spaced values from the computed `lambda_max` down to
    /// `min_ratio * lambda_max`.
    Auto {
        n: usize,
        min_ratio: f64,
    },
    Explicit(Vec<f64>),
}

impl Default for LambdaPath {
    fn default() -> Self {
        LambdaPath::Auto {
            n: 50,
            min_ratio: 1e-4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PenaltyConfig {
    pub kind: PenaltyKind,
    pub path: LambdaPath,
    /// Per-coordinate penalty weights `v`; all ones when absent.
    pub weights: Option<Vec<f64>>,
    /// Per-coordinate box; the model family's natural box when absent.
    pub bounds: Option<Vec<(f64, f64)>>,
}

impl Default for PenaltyConfig {
    fn default() -> Self {
        PenaltyConfig {
            kind: PenaltyKind::DEFAULT_ELASTIC_NET,
            path: LambdaPath::default(),
            weights: None,
            bounds: None,
        }
    }
}

impl PenaltyConfig {
    pub fn new(kind: PenaltyKind) -> Self {
        PenaltyConfig {
            kind,
            ..Default::default()
        }
    }

    pub fn with_path(mut self, path: LambdaPath) -> Self {
        self.path = path;
        self
    }

    pub fn with_lambdas(self, lambdas: Vec<f64>) -> Self {
        self.with_path(LambdaPath::Explicit(lambdas))
    }

    pub fn with_bounds(mut self, bounds: Vec<(f64, f64)>) -> Self {
        self.bounds = Some(bounds);
        self
    }

    pub fn with_weights(mut self, weights: Vec<f64>) -> Self {
        self.weights = Some(weights);
        self
    }

    /// Fills in defaults for a problem with `p` coordinates.
    pub fn resolve(&self, p: usize, default_bounds: &[(f64, f64)]) -> Result<Penalty> {
        let weights = self.weights.clone().unwrap_or_else(|| vec![1.0; p]);
        let bounds = self
            .bounds
            .clone()
            .unwrap_or_else(|| default_bounds.to_vec());
        Penalty::new(self.kind, weights, bounds)
    }

    /// The decreasing sequence of lambdas, anchored at `lambda_max` for
    /// automatic paths.
    pub fn lambdas(&self, lambda_max: f64) -> Result<Vec<f64>> {
        if self.kind == PenaltyKind::None {
            return Ok(vec![0.0]);
        }
        match &self.path {
            LambdaPath::Auto { n, min_ratio } => {
                if *n == 0 || !(*min_ratio > 0.0 && *min_ratio <= 1.0) {
                    return Err(Error::InvalidInput("invalid automatic lambda path".into()));
                }
                let top = if lambda_max > 0.0 && lambda_max.is_finite() {
                    lambda_max
                } else {
                    1.0
                };
                Ok(log_path(top, *n, *min_ratio))
            }
            LambdaPath::Explicit(l) => {
                if l.is_empty() {
                    return Err(Error::InvalidInput("empty lambda path".into()));
                }
                if l.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
                    return Err(Error::InvalidInput(
                        "lambdas must be finite and >= 0".into(),
                    ));
                }
                if l.windows(2).any(|w| w[1] >= w[0]) {
                    return Err(Error::InvalidInput(
                        "lambda path must be strictly decreasing".into(),
                    ));
                }
                Ok(l.clone())
            }
        }
    }
}

/// `n` log-spaced values from `top` down to `min_ratio * top`.
pub fn log_path(top: f64, n: usize, min_ratio: f64) -> Vec<f64> {
    if n == 1 {
        return vec![top];
    }
    let step = min_ratio.ln() / (n - 1) as f64;
    (0..n).map(|k| top * (step * k as f64).exp()).collect()
}

/// A penalty with resolved weights and box.
#[derive(Debug, Clone, PartialEq)]
pub struct Penalty {
    pub kind: PenaltyKind,
    pub weights: Vec<f64>,
    pub bounds: Vec<(f64, f64)>,
}

impl Penalty {
    pub fn new(kind: PenaltyKind, weights: Vec<f64>, bounds: Vec<(f64, f64)>) -> Result<Self> {
        kind.validate()?;
        if weights.len() != bounds.len() {
            return Err(Error::dim("penalty weights", bounds.len(), weights.len()));
        }
        if weights.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(Error::InvalidInput(
                "penalty weights must be finite and >= 0".into(),
            ));
        }
        if bounds.iter().any(|&(lo, hi)| !(lo <= 0.0 && 0.0 <= hi)) {
            return Err(Error::InvalidInput("each box must contain 0".into()));
        }
        Ok(Penalty {
            kind,
            weights,
            bounds,
        })
    }

    pub fn unbounded(kind: PenaltyKind, p: usize) -> Self {
        Penalty {
            kind,
            weights: vec![1.0; p],
            bounds: vec![(f64::NEG_INFINITY, f64::INFINITY); p],
        }
    }

    pub fn dim(&self) -> usize {
        self.weights.len()
    }

    /// `sum_j v_j pen_lambda(theta_j)`.
    pub fn value(&self, theta: &[f64], lambda: f64) -> f64 {
        theta
            .iter()
            .zip(&self.weights)
            .filter(|(t, v)| **t != 0.0 && **v != 0.0)
            .map(|(&t, &v)| v * self.kind.value(t, lambda))
            .sum()
    }

    fn quad(&self, j: usize, lambda: f64) -> f64 {
        lambda * self.kind.quadratic_part() * self.weights[j]
    }

    fn thresh(&self, j: usize, theta_j: f64, lambda: f64) -> f64 {
        lambda * threshold_weight(&self.kind, theta_j, self.weights[j], lambda)
    }

    fn clip(&self, theta: &[f64]) -> Vec<f64> {
        theta
            .iter()
            .zip(&self.bounds)
            .map(|(&t, &(lo, hi))| t.clamp(lo, hi))
            .collect()
    }
}

/// Smallest lambda for which `theta = 0` is a fixed point, from the gradient
/// of the loss at zero. Coordinates with a zero lower (upper) bound only count
/// gradients pushing them up (down); unpenalized coordinates are ignored.
pub fn lambda_max(grad_at_zero: &[f64], penalty: &Penalty) -> f64 {
    let l1 = match penalty.kind {
        PenaltyKind::L1 | PenaltyKind::Scad { .. } | PenaltyKind::Mcp { .. } => 1.0,
        PenaltyKind::ElasticNet { alpha } if alpha > 0.0 => alpha,
        _ => 1.0,
    };
    grad_at_zero
        .iter()
        .enumerate()
        .filter(|&(j, _)| penalty.weights[j] > 0.0)
        .map(|(j, &g)| {
            let (lo, hi) = penalty.bounds[j];
            let push = match (lo == 0.0, hi == 0.0) {
                (true, true) => 0.0,
                (true, false) => (-g).max(0.0),
                (false, true) => g.max(0.0),
                (false, false) => g.abs(),
            };
            push / (l1 * penalty.weights[j])
        })
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProxControls {
    pub max_iter: usize,
    /// Fixed-point tolerance, relative to `1 + ||theta||_inf`.
    pub tol: f64,
    /// Full-gradient refresh interval; `None` disables screening.
    pub screening: Option<usize>,
    pub initial_step: f64,
    pub min_step: f64,
}

impl Default for ProxControls {
    fn default() -> Self {
        ProxControls {
            max_iter: 10_000,
            tol: 1e-8,
            screening: Some(10),
            initial_step: 1.0,
            min_step: 1e-12,
        }
    }
}

impl ProxControls {
    pub fn unscreened(mut self) -> Self {
        self.screening = None;
        self
    }

    pub fn with_screening(mut self, interval: usize) -> Self {
        self.screening = Some(interval.max(1));
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StopReason {
    Converged,
    IterationLimit,
    /// Backtracking reached the minimum step without sufficient decrease.
    LineSearch,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimState {
    pub lambda: f64,
    pub theta: Vec<f64>,
    pub active: Vec<usize>,
    pub step: f64,
    pub iterations: usize,
    pub stop: StopReason,
    /// Smooth data term at `theta`.
    pub loss: f64,
    /// Loss plus penalty.
    pub objective: f64,
    pub diverged: bool,
}

impl OptimState {
    pub fn converged(&self) -> bool {
        self.stop == StopReason::Converged
    }

    pub fn support(&self) -> Vec<usize> {
        support_of(&self.theta)
    }

    pub fn record(&self) -> PathRecord {
        PathRecord {
            lambda: self.lambda,
            support: self.support(),
            theta: self
                .support()
                .into_iter()
                .map(|j| (j, self.theta[j]))
                .collect(),
            objective: self.objective,
            iterations: self.iterations,
        }
    }
}

/// Serializable summary of one path point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathRecord {
    pub lambda: f64,
    pub support: Vec<usize>,
    pub theta: Vec<(usize, f64)>,
    pub objective: f64,
    pub iterations: usize,
}

pub fn support_of(theta: &[f64]) -> Vec<usize> {
    (0..theta.len()).filter(|&j| theta[j] != 0.0).collect()
}

struct Solver<'a, O: Objective + ?Sized> {
    obj: &'a O,
    pen: &'a Penalty,
    lambda: f64,
    ctl: ProxControls,
    /// Smooth gradient (loss plus folded quadratic penalty); entries outside
    /// the last evaluated columns may be stale.
    g: Vec<f64>,
}

impl<O: Objective + ?Sized> Solver<'_, O> {
    fn smooth_value(&self, loss: f64, theta: &[f64]) -> f64 {
        let q: f64 = theta
            .iter()
            .enumerate()
            .filter(|(_, t)| **t != 0.0)
            .map(|(j, &t)| 0.5 * self.pen.quad(j, self.lambda) * t * t)
            .sum();
        loss + q
    }

    fn objective(&self, loss: f64, theta: &[f64]) -> f64 {
        loss + self.pen.value(theta, self.lambda)
    }

    fn store_grad(&mut self, theta: &[f64], cols: &[usize], grad: &[f64]) {
        for (&j, &gj) in cols.iter().zip(grad) {
            self.g[j] = gj + self.pen.quad(j, self.lambda) * theta[j];
        }
    }

    fn prox_j(&self, theta: &[f64], j: usize, tau: f64) -> f64 {
        let th = self.pen.thresh(j, theta[j], self.lambda);
        prox_scalar(theta[j], self.g[j], tau, tau * th, self.pen.bounds[j])
    }

    fn residual(&self, theta: &[f64], cols: &[usize]) -> f64 {
        cols.iter()
            .map(|&j| (theta[j] - self.prox_j(theta, j, 1.0)).abs())
            .fold(0.0, f64::max)
    }

    /// `A = {j : theta_j != 0 or theta_j != prox_j(theta, g, 1)}`.
    fn screen(&self, theta: &[f64]) -> Vec<usize> {
        (0..theta.len())
            .filter(|&j| theta[j] != 0.0 || self.prox_j(theta, j, 1.0) != theta[j])
            .collect()
    }

    fn full_grad(&mut self, theta: &[f64]) -> Result<f64> {
        let all: Vec<usize> = (0..theta.len()).collect();
        let ev = self.obj.value_grad(theta, &all)?;
        self.store_grad(theta, &all, &ev.grad);
        Ok(ev.value)
    }

    fn run(&mut self, theta0: &[f64]) -> Result<OptimState> {
        let p = self.obj.dim();
        let all: Vec<usize> = (0..p).collect();
        let mut theta = self.pen.clip(theta0);
        let first = self.obj.value_grad(&theta, &all)?;
        if first.diverged || !first.value.is_finite() {
            return Err(Error::Stalled {
                iterations: 0,
                best_objective: f64::INFINITY,
                best_theta: theta,
            });
        }
        self.store_grad(&theta, &all, &first.grad);
        let mut loss = first.value;
        let mut active = match self.ctl.screening {
            Some(_) => self.screen(&theta),
            None => all.clone(),
        };
        let mut tau = self.ctl.initial_step;
        let mut prev: Option<(Vec<f64>, Vec<f64>)> = None;
        let mut since_screen = 0usize;
        let mut stop = StopReason::IterationLimit;
        let mut iterations = 0;

        for it in 0..self.ctl.max_iter {
            iterations = it;
            let scale = self.ctl.tol * (1.0 + theta.iter().fold(0.0f64, |m, t| m.max(t.abs())));
            if self.residual(&theta, &active) < scale {
                if active.len() == p {
                    stop = StopReason::Converged;
                    break;
                }
                self.full_grad(&theta)?;
                if self.residual(&theta, &all) < scale {
                    stop = StopReason::Converged;
                    break;
                }
                active = self.screen(&theta);
                since_screen = 0;
            } else if let Some(interval) = self.ctl.screening {
                if since_screen >= interval {
                    self.full_grad(&theta)?;
                    active = self.screen(&theta);
                    since_screen = 0;
                }
            }

            if let Some((tp, gp)) = &prev {
                let (mut sts, mut sty) = (0.0, 0.0);
                for j in 0..p {
                    let s = theta[j] - tp[j];
                    if s != 0.0 {
                        sts += s * s;
                        sty += s * (self.g[j] - gp[j]);
                    }
                }
                if sts > 0.0 && sty > 0.0 {
                    tau = (sts / sty).clamp(self.ctl.min_step, 1e12);
                }
            }

            let h = self.smooth_value(loss, &theta);
            let f = self.objective(loss, &theta);
            let slack = 1e-12 * f.abs().max(1.0);
            let mut all_diverged = true;
            let accepted = loop {
                let mut cand = theta.clone();
                for &j in &active {
                    cand[j] = self.prox_j(&theta, j, tau);
                }
                if cand == theta {
                    break None;
                }
                let ev = self.obj.value(&cand)?;
                if !ev.diverged && ev.value.is_finite() {
                    all_diverged = false;
                    let mut lin = 0.0;
                    let mut sq = 0.0;
                    for &j in &active {
                        let dlt = cand[j] - theta[j];
                        lin += self.g[j] * dlt;
                        sq += dlt * dlt;
                    }
                    let hc = self.smooth_value(ev.value, &cand);
                    let fc = self.objective(ev.value, &cand);
                    if hc <= h + lin + sq / (2.0 * tau) + slack && fc <= f + slack {
                        break Some((cand, ev.value));
                    }
                }
                tau *= 0.5;
                if tau < self.ctl.min_step {
                    if all_diverged {
                        return Err(Error::Stalled {
                            iterations: it,
                            best_objective: f,
                            best_theta: theta,
                        });
                    }
                    stop = StopReason::LineSearch;
                    break None;
                }
            };
            let Some((cand, _)) = accepted else {
                if stop != StopReason::LineSearch {
                    stop = StopReason::Converged;
                }
                break;
            };
            prev = Some((theta, self.g.clone()));
            theta = cand;
            let ev = self.obj.value_grad(&theta, &active)?;
            loss = ev.value;
            self.store_grad(&theta, &active, &ev.grad);
            since_screen += 1;
            iterations = it + 1;
        }

        Ok(OptimState {
            lambda: self.lambda,
            objective: self.objective(loss, &theta),
            loss,
            theta,
            active,
            step: tau,
            iterations,
            stop,
            diverged: false,
        })
    }
}

/// Minimizes `loss(theta) + sum_j v_j pen_lambda(theta_j)` over the box,
/// starting from `theta0`.
pub fn proximal_gradient<O: Objective + ?Sized>(
    obj: &O,
    penalty: &Penalty,
    lambda: f64,
    theta0: &[f64],
    controls: &ProxControls,
) -> Result<OptimState> {
    if theta0.len() != obj.dim() {
        return Err(Error::dim("initial parameter", obj.dim(), theta0.len()));
    }
    if penalty.dim() != obj.dim() {
        return Err(Error::dim("penalty", obj.dim(), penalty.dim()));
    }
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(Error::InvalidInput(format!(
            "lambda must be >= 0, got {lambda}"
        )));
    }
    let mut solver = Solver {
        obj,
        pen: penalty,
        lambda,
        ctl: *controls,
        g: vec![0.0; obj.dim()],
    };
    solver.run(theta0)
}

/// Solves along a decreasing lambda sequence, warm-starting each point from
/// the previous solution.
pub fn screened_path<O: Objective + ?Sized>(
    obj: &O,
    penalty: &Penalty,
    lambdas: &[f64],
    theta0: &[f64],
    controls: &ProxControls,
) -> Result<Vec<OptimState>> {
    if lambdas.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::InvalidInput(
            "lambda path must be strictly decreasing".into(),
        ));
    }
    let mut out = Vec::with_capacity(lambdas.len());
    let mut warm = theta0.to_vec();
    for &lam in lambdas {
        let st = proximal_gradient(obj, penalty, lam, &warm, controls)?;
        warm = st.theta.clone();
        out.push(st);
    }
    Ok(out)
}
