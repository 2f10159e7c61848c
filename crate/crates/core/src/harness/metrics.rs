//! Network scoring (ROC, precision-recall) and trajectory errors.

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::field::FieldSpec;
use crate::ode::{solve_ivp, SolveConfig};
use crate::scales::{apply_environment, InterventionScales};

/// Reported in place of the MSE of a fitted model whose solve failed.
pub const MSE_CAP: f64 = 1e12;

/// Real-valued scores of candidate edges with their ground-truth labels.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkScore {
    pub scores: Vec<f64>,
    pub labels: Vec<bool>,
}

impl NetworkScore {
    pub fn new(scores: Vec<f64>, labels: Vec<bool>) -> Result<Self> {
        if scores.len() != labels.len() {
            return Err(Error::dim("network labels", scores.len(), labels.len()));
        }
        if scores.iter().any(|s| s.is_nan()) {
            return Err(Error::InvalidInput("NaN network score".into()));
        }
        Ok(NetworkScore { scores, labels })
    }

    fn counts(&self) -> Result<(usize, usize)> {
        let pos = self.labels.iter().filter(|&&l| l).count();
        let neg = self.labels.len() - pos;
        if pos == 0 || neg == 0 {
            return Err(Error::InvalidInput(
                "scoring needs at least one positive and one negative label".into(),
            ));
        }
        Ok((pos, neg))
    }

    /// Cumulative (true, false) positive counts after each group of tied
    /// scores, from the highest score down.
    fn sweep(&self) -> Vec<(usize, usize)> {
        let mut order: Vec<usize> = (0..self.scores.len()).collect();
        order.sort_by(|&a, &b| self.scores[b].total_cmp(&self.scores[a]).then(a.cmp(&b)));
        let mut out = Vec::new();
        let (mut tp, mut fp) = (0, 0);
        for (k, &i) in order.iter().enumerate() {
            if self.labels[i] {
                tp += 1;
            } else {
                fp += 1;
            }
            let last = k + 1 == order.len() || self.scores[order[k + 1]] != self.scores[i];
            if last {
                out.push((tp, fp));
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RocCurve {
    /// `(false positive rate, true positive rate)` from (0, 0) to (1, 1).
    pub points: Vec<(f64, f64)>,
    pub auroc: f64,
}

/// ROC sweep over score thresholds. Tied scores produce one diagonal
/// segment, so the trapezoid area counts tied pairs as one half.
pub fn roc_auroc(score: &NetworkScore) -> Result<RocCurve> {
    let (pos, neg) = score.counts()?;
    let mut points = vec![(0.0, 0.0)];
    points.extend(
        score
            .sweep()
            .into_iter()
            .map(|(tp, fp)| (fp as f64 / neg as f64, tp as f64 / pos as f64)),
    );
    let auroc = points
        .windows(2)
        .map(|w| (w[1].0 - w[0].0) * 0.5 * (w[1].1 + w[0].1))
        .sum();
    Ok(RocCurve { points, auroc })
}

/// `(recall, precision)` after each group of tied scores. The curve starts
/// at recall 0 with the precision of the top-ranked group.
pub fn precision_recall(score: &NetworkScore) -> Result<Vec<(f64, f64)>> {
    let (pos, _) = score.counts()?;
    let sweep = score.sweep();
    let prec = |(tp, fp): (usize, usize)| tp as f64 / (tp + fp) as f64;
    let mut out = vec![(0.0, prec(sweep[0]))];
    out.extend(
        sweep
            .into_iter()
            .map(|c| (c.0 as f64 / pos as f64, prec(c))),
    );
    Ok(out)
}

/// True positive rate at each false positive rate of `grid`, reading the
/// step-interpolated ROC curve (highest TPR at that FPR).
pub fn roc_on_grid(curve: &RocCurve, grid: &[f64]) -> Vec<f64> {
    grid.iter()
        .map(|&f| {
            let mut best = 0.0f64;
            for w in curve.points.windows(2) {
                let ((x0, y0), (x1, y1)) = (w[0], w[1]);
                if f >= x0 && f <= x1 {
                    let y = if x1 > x0 {
                        y0 + (y1 - y0) * (f - x0) / (x1 - x0)
                    } else {
                        y1
                    };
                    best = best.max(y);
                }
            }
            best
        })
        .collect()
}

/// Directed edges `from -> to` between distinct species, row-major over
/// `(to, from)` pairs.
pub fn candidate_edges(d: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::with_capacity(d * (d - 1));
    for to in 0..d {
        for from in (0..d).filter(|&f| f != to) {
            out.push((from, to));
        }
    }
    out
}

/// Scores the edges of a model sequence by first appearance: the edge
/// switched on by the `k`-th model gets `-k`; edges never switched on get
/// `-(len + 1)`. Self-edges are excluded.
pub fn edge_scores(
    space: &FieldSpec,
    truth: &[f64],
    sequence: &[Vec<f64>],
) -> Result<NetworkScore> {
    edge_scores_between(space, truth, space, sequence)
}

/// [`edge_scores`] for a sequence fitted in a different search space over
/// the same species.
pub fn edge_scores_between(
    truth_space: &FieldSpec,
    truth: &[f64],
    space: &FieldSpec,
    sequence: &[Vec<f64>],
) -> Result<NetworkScore> {
    let d = truth_space.dim();
    if space.dim() != d {
        return Err(Error::dim("fitted species", d, space.dim()));
    }
    let edges = candidate_edges(d);
    let true_adj = truth_space.network(truth);
    let never = -(sequence.len() as f64 + 1.0);
    let mut scores = vec![never; edges.len()];
    for (k, theta) in sequence.iter().enumerate().rev() {
        let adj = space.network(theta);
        for (q, &(from, to)) in edges.iter().enumerate() {
            if adj[to][from] {
                scores[q] = -(k as f64);
            }
        }
    }
    let labels = edges.iter().map(|&(from, to)| true_adj[to][from]).collect();
    NetworkScore::new(scores, labels)
}

/// Arithmetic mean of per-environment adjacency indicators.
pub fn average_networks(networks: &[Vec<Vec<bool>>]) -> Vec<Vec<f64>> {
    let Some(first) = networks.first() else {
        return Vec::new();
    };
    let n = networks.len() as f64;
    let mut out = vec![vec![0.0; first.len()]; first.len()];
    for net in networks {
        for (row, r) in out.iter_mut().zip(net) {
            for (v, &b) in row.iter_mut().zip(r) {
                if b {
                    *v += 1.0 / n;
                }
            }
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mse {
    pub value: f64,
    /// The fitted solve failed; `value` is [`MSE_CAP`].
    pub diverged: bool,
}

/// Mean squared deviation between the solution of `(spec, theta)` from the
/// given initial states and the observations of `target`, averaged over
/// times and coordinates per environment, then over environments.
pub fn prediction_mse(
    spec: &FieldSpec,
    theta: &[f64],
    target: &Dataset,
    initial_states: &[Vec<f64>],
    config: &SolveConfig,
) -> Result<Mse> {
    if initial_states.len() != target.n_environments() {
        return Err(Error::dim(
            "initial states",
            target.n_environments(),
            initial_states.len(),
        ));
    }
    let mut total = 0.0;
    for (e, env) in target.environments.iter().enumerate() {
        let th = apply_environment(theta, &target.scales, e)?;
        let x0: Vec<f64> = initial_states[e].iter().map(|v| v.max(0.0)).collect();
        let Ok(tr) = solve_ivp(spec, &th, &x0, &env.times, config) else {
            return Ok(Mse {
                value: MSE_CAP,
                diverged: true,
            });
        };
        let mut s = 0.0;
        for (x, y) in tr.states.iter().zip(&env.values) {
            s += x.iter().zip(y).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
        }
        total += s / (env.n_times() * target.dim()) as f64;
    }
    let value = total / target.n_environments() as f64;
    if !value.is_finite() || value > MSE_CAP {
        return Ok(Mse {
            value: MSE_CAP,
            diverged: true,
        });
    }
    Ok(Mse {
        value,
        diverged: false,
    })
}

/// MSE between the fitted and the true trajectories at `times`.
#[allow(clippy::too_many_arguments)]
pub fn trajectory_mse(
    fitted: (&FieldSpec, &[f64]),
    truth: (&FieldSpec, &[f64]),
    scales: &InterventionScales,
    initial_states: &[Vec<f64>],
    times: &[Vec<f64>],
    config: &SolveConfig,
) -> Result<Mse> {
    let mut envs = Vec::with_capacity(times.len());
    for (e, t) in times.iter().enumerate() {
        let th = apply_environment(truth.1, scales, e)?;
        let tr = solve_ivp(truth.0, &th, &initial_states[e], t, config)?;
        envs.push(crate::data::Environment::new(t.clone(), tr.states));
    }
    let target = Dataset::new(truth.0.species().to_vec(), envs, scales.clone())?;
    prediction_mse(fitted.0, fitted.1, &target, initial_states, config)
}

/// Index of the candidate with the smallest MSE on a test set; ties keep
/// the earliest candidate.
pub fn select_by_test_mse(
    spec: &FieldSpec,
    candidates: &[Vec<f64>],
    test: &Dataset,
    initial_states: &[Vec<f64>],
    config: &SolveConfig,
) -> Result<Option<(usize, Mse)>> {
    let mut best: Option<(usize, Mse)> = None;
    for (k, theta) in candidates.iter().enumerate() {
        let m = prediction_mse(spec, theta, test, initial_states, config)?;
        if best.is_none_or(|(_, b)| m.value < b.value) {
            best = Some((k, m));
        }
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Environment;
    use crate::field::{IntMatrix, Stoichiometry};

    fn ns(scores: &[f64], labels: &[bool]) -> NetworkScore {
        NetworkScore::new(scores.to_vec(), labels.to_vec()).unwrap()
    }

    #[test]
    fn perfect_and_reversed_rankings() {
        let s = ns(&[4.0, 3.0, 2.0, 1.0], &[true, true, false, false]);
        assert_eq!(roc_auroc(&s).unwrap().auroc, 1.0);
        let r = ns(&[1.0, 2.0, 3.0, 4.0], &[true, true, false, false]);
        assert_eq!(roc_auroc(&r).unwrap().auroc, 0.0);
    }

    #[test]
    fn one_of_two_pairs_ordered() {
        let s = ns(&[3.0, 1.0, 2.0], &[true, true, false]);
        assert!((roc_auroc(&s).unwrap().auroc - 0.5).abs() < 1e-15);
    }

    #[test]
    fn ties_count_half() {
        let s = ns(&[1.0, 1.0], &[true, false]);
        assert!((roc_auroc(&s).unwrap().auroc - 0.5).abs() < 1e-15);
    }

    #[test]
    fn degenerate_labels_are_rejected() {
        assert!(roc_auroc(&ns(&[1.0, 2.0], &[true, true])).is_err());
        assert!(precision_recall(&ns(&[1.0], &[false])).is_err());
    }

    #[test]
    fn precision_recall_of_perfect_ranking() {
        let s = ns(
            &[5.0, 4.0, 3.0, 2.0, 1.0],
            &[true, true, false, false, false],
        );
        let pr = precision_recall(&s).unwrap();
        assert_eq!(pr[0], (0.0, 1.0));
        assert_eq!(pr[1], (0.5, 1.0));
        assert_eq!(pr[2], (1.0, 1.0));
        assert_eq!(pr.last().unwrap(), &(1.0, 0.4));
    }

    #[test]
    fn negatives_on_top_give_zero_precision() {
        let s = ns(&[5.0, 4.0, 3.0], &[false, false, true]);
        let pr = precision_recall(&s).unwrap();
        assert_eq!(pr[0], (0.0, 0.0));
        assert_eq!(pr[2], (0.0, 0.0));
    }

    #[test]
    fn roc_grid_reads_the_curve() {
        let s = ns(&[3.0, 2.0, 1.0, 0.0], &[true, false, true, false]);
        let c = roc_auroc(&s).unwrap();
        let g = roc_on_grid(&c, &[0.0, 0.5, 1.0]);
        assert_eq!(g, vec![0.5, 1.0, 1.0]);
    }

    fn decay() -> FieldSpec {
        FieldSpec::mass_action(
            Stoichiometry::with_default_names(
                IntMatrix::from_rows(&[vec![1, 0], vec![1, 0]]).unwrap(),
                IntMatrix::from_rows(&[vec![0, 0], vec![0, 1]]).unwrap(),
            )
            .unwrap(),
        )
    }

    #[test]
    fn edges_scored_by_first_appearance() {
        let spec = decay();
        let s = edge_scores(
            &spec,
            &[0.0, 1.0],
            &[vec![0.0, 0.0], vec![1.0, 0.0], vec![1.0, 1.0]],
        )
        .unwrap();
        // Candidates: X2 -> X1, X1 -> X2.
        assert_eq!(s.labels, vec![false, true]);
        assert_eq!(s.scores, vec![-4.0, -2.0]);
    }

    #[test]
    fn averaged_networks() {
        let a = vec![vec![false, true], vec![false, false]];
        let b = vec![vec![false, true], vec![true, false]];
        assert_eq!(
            average_networks(&[a, b]),
            vec![vec![0.0, 1.0], vec![0.5, 0.0]]
        );
    }

    #[test]
    fn exact_model_has_zero_mse() {
        let spec = decay();
        let cfg = SolveConfig::rkf45(1e-10, 1e-10);
        let scales = InterventionScales::ones(1, 2);
        let times = vec![(0..11).map(|k| k as f64 * 0.1).collect::<Vec<_>>()];
        let x0 = vec![vec![2.0, 0.5]];
        let m = trajectory_mse(
            (&spec, &[0.7, 0.3]),
            (&spec, &[0.7, 0.3]),
            &scales,
            &x0,
            &times,
            &cfg,
        )
        .unwrap();
        assert_eq!(m.value, 0.0);
        assert!(!m.diverged);
    }

    #[test]
    fn zero_model_against_decay() {
        // x1 = 2 exp(-t), x2 constant: MSE = mean (2 - 2 exp(-t))^2 / 2.
        let spec = decay();
        let cfg = SolveConfig::rkf45(1e-12, 1e-12);
        let scales = InterventionScales::ones(1, 2);
        let t: Vec<f64> = (0..21).map(|k| k as f64 * 0.1).collect();
        let x0 = vec![vec![2.0, 0.5]];
        let m = trajectory_mse(
            (&spec, &[0.0, 0.0]),
            (&spec, &[1.0, 0.0]),
            &scales,
            &x0,
            std::slice::from_ref(&t),
            &cfg,
        )
        .unwrap();
        let want = t
            .iter()
            .map(|s| (2.0 - 2.0 * (-s).exp()).powi(2))
            .sum::<f64>()
            / (2.0 * 21.0);
        assert!((m.value - want).abs() < 1e-9);
    }

    #[test]
    fn blow_up_is_capped() {
        let spec = FieldSpec::mass_action(
            Stoichiometry::with_default_names(
                IntMatrix::from_rows(&[vec![2]]).unwrap(),
                IntMatrix::from_rows(&[vec![3]]).unwrap(),
            )
            .unwrap(),
        );
        let ds = Dataset::new(
            vec!["X1".into()],
            vec![Environment::new(vec![0.0, 5.0], vec![vec![1.0], vec![1.0]])],
            InterventionScales::ones(1, 1),
        )
        .unwrap();
        let m = prediction_mse(
            &spec,
            &[1.0],
            &ds,
            &[vec![1.0]],
            &SolveConfig::rkf45(1e-8, 1e-8),
        )
        .unwrap();
        assert!(m.diverged);
        assert_eq!(m.value, MSE_CAP);
    }

    #[test]
    fn selection_picks_the_minimum() {
        let spec = decay();
        let cfg = SolveConfig::rkf45(1e-10, 1e-10);
        let t: Vec<f64> = (0..11).map(|k| k as f64 * 0.2).collect();
        let truth = solve_ivp(&spec, &[0.8, 0.2], &[2.0, 0.5], &t, &cfg).unwrap();
        let ds = Dataset::new(
            vec!["X1".into(), "X2".into()],
            vec![Environment::new(t, truth.states)],
            InterventionScales::ones(1, 2),
        )
        .unwrap();
        let cands = vec![
            vec![0.0, 0.0],
            vec![0.8, 0.0],
            vec![0.8, 0.2],
            vec![1.0, 0.2],
        ];
        let (k, m) = select_by_test_mse(&spec, &cands, &ds, &[vec![2.0, 0.5]], &cfg)
            .unwrap()
            .unwrap();
        assert_eq!(k, 2);
        for c in &cands {
            let other = prediction_mse(&spec, c, &ds, &[vec![2.0, 0.5]], &cfg).unwrap();
            assert!(m.value <= other.value);
        }
    }
}
