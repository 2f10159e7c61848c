//! File-based pipeline: simulate replicate directories, fit them and score
//! the persisted fits.
//!
//! ```text
//! out/config.txt
//! out/rep000/manifest.txt, env0.tsv, ..., truth.field, truth_initial.tsv
//! out/rep000/space.field
//! out/rep000/fits-aim.jsonl, report-aim.txt
//! out/auroc.tsv, roc.tsv, pr.tsv, mse.tsv
//! ```

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::config::{Estimator, ExperimentConfig, SystemKind};
use super::files::{f, read_dataset_dir, tsv, write_simulation, StoredDataset};
use super::metrics::{edge_scores_between, precision_recall, roc_auroc, Mse, RocCurve};
use super::study::{fit_sequence, tune_on_test_set, Settings};
use super::systems::{simulate_dataset, simulate_test_set};
use crate::aim::edge_list;
use crate::error::{Error, Result};
use crate::estimate::{read_fit_results, write_fit_results, FitResult};
use crate::field::text::{fmt_f64, read_field, write_field};
use crate::field::{enumerate_search_space, FieldSpec};
use crate::scales::InterventionScales;

pub const CONFIG_FILE: &str = "config.txt";

pub fn rep_dir(out: &Path, r: usize) -> PathBuf {
    out.join(format!("rep{r:03}"))
}

/// Replicate directories under `out`, in replicate order.
pub fn rep_dirs(out: &Path) -> Result<Vec<(usize, PathBuf)>> {
    let mut dirs = Vec::new();
    for entry in fs::read_dir(out)? {
        let path = entry?.path();
        let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("");
        if let Some(r) = name
            .strip_prefix("rep")
            .and_then(|s| s.parse::<usize>().ok())
        {
            if path.join("manifest.txt").exists() {
                dirs.push((r, path));
            }
        }
    }
    dirs.sort();
    if dirs.is_empty() {
        return Err(Error::InvalidInput(format!(
            "no replicate directories in {}",
            out.display()
        )));
    }
    Ok(dirs)
}

/// Writes the configuration and one directory per replicate.
pub fn simulate_to_dir(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    fs::create_dir_all(out)?;
    fs::write(out.join(CONFIG_FILE), cfg.to_text())?;
    let system = cfg.system();
    for r in 0..cfg.replicates {
        let sim = simulate_dataset(&system, cfg.replicate_seed(r))?;
        write_simulation(&rep_dir(out, r), &sim)?;
    }
    Ok(())
}

/// Search space for fitting: the configured enzyme family, otherwise the
/// space stored with the truth.
pub fn fit_space(cfg: &ExperimentConfig, stored: &StoredDataset) -> Result<FieldSpec> {
    if cfg.system == SystemKind::EnzymeNetwork {
        let d = stored.dataset.species.len();
        let space = enumerate_search_space(cfg.space, d)?;
        return Ok(space);
    }
    stored
        .truth
        .as_ref()
        .map(|t| t.space.clone())
        .ok_or_else(|| {
            Error::InvalidInput("no search space: the data set has no truth.field".into())
        })
}

fn fits_file(e: Estimator) -> String {
    format!("fits-{}.jsonl", e.name())
}

/// One line per model of the sequence: size, loss, parameters and edges.
pub fn sequence_report(space: &FieldSpec, estimator: Estimator, fits: &[FitResult]) -> String {
    let names = space.species();
    let mut out = format!("# {} model sequence\n", estimator.name());
    for (k, fit) in fits.iter().enumerate() {
        let _ = writeln!(out, "[model {k}]");
        let _ = writeln!(out, "size = {}", fit.support.len());
        let _ = writeln!(out, "loss = {}", fmt_f64(fit.loss));
        let _ = writeln!(out, "lambda = {}", fmt_f64(fit.lambda));
        for &j in &fit.support {
            let _ = writeln!(
                out,
                "theta {j} {} = {}",
                space.param_label(j),
                fmt_f64(fit.theta[j])
            );
        }
        for (l, i) in edge_list(space, &fit.theta) {
            let _ = writeln!(out, "edge {} -> {}", names[l], names[i]);
        }
        out.push('\n');
    }
    out
}

/// Fits every configured estimator to one replicate directory and writes
/// `space.field`, `fits-<estimator>.jsonl` and `report-<estimator>.txt`.
pub fn fit_dir(cfg: &ExperimentConfig, dir: &Path) -> Result<()> {
    let mut stored = read_dataset_dir(dir)?;
    let space = fit_space(cfg, &stored)?;
    let p = space.n_params();
    if stored.dataset.scales.n_params() != p {
        if stored
            .dataset
            .scales
            .iter()
            .any(|c| c.iter().any(|&v| v != 1.0))
        {
            return Err(Error::InvalidInput(
                "interventions are defined on a different parameter space".into(),
            ));
        }
        stored.dataset.scales = InterventionScales::ones(stored.dataset.environments.len(), p);
    }
    let settings = Settings::from_config(cfg, &space);
    fs::write(dir.join("space.field"), write_field(&space, None))?;
    for &est in &cfg.estimators {
        let seq = fit_sequence(est, &space, &stored.dataset, &settings)
            .map_err(|e| e.in_stage(est.name()))?;
        fs::write(dir.join(fits_file(est)), write_fit_results(&space, &seq))?;
        fs::write(
            dir.join(format!("report-{}.txt", est.name())),
            sequence_report(&space, est, &seq),
        )?;
    }
    Ok(())
}

/// Metrics of one estimator on one replicate.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub estimator: Estimator,
    pub roc: RocCurve,
    pub pr: Vec<(f64, f64)>,
    pub tuned: Option<(usize, Mse)>,
}

/// Scores persisted fits against the stored truth. Test-set tuning
/// regenerates the simulation from the configuration and the stored seed.
pub fn evaluate_dir(cfg: &ExperimentConfig, dir: &Path, tune: bool) -> Result<Vec<Evaluation>> {
    let stored = read_dataset_dir(dir)?;
    let truth = stored
        .truth
        .as_ref()
        .ok_or_else(|| Error::InvalidInput(format!("{}: no truth.field", dir.display())))?;
    let (space, _) = read_field(&fs::read_to_string(dir.join("space.field"))?)?;
    let sims = match (tune && space == truth.space, stored.seed) {
        (true, Some(seed)) => {
            let sim = simulate_dataset(&cfg.system(), seed)?;
            if sim.dataset != stored.dataset {
                return Err(Error::InvalidInput(format!(
                    "{}: data do not match the configuration and seed",
                    dir.display()
                )));
            }
            let test = simulate_test_set(&sim)?;
            Some((sim, test))
        }
        _ => None,
    };
    let mut out = Vec::new();
    for &est in &cfg.estimators {
        let path = dir.join(fits_file(est));
        if !path.exists() {
            continue;
        }
        let seq = read_fit_results(&fs::read_to_string(&path)?)?;
        let thetas: Vec<Vec<f64>> = seq.iter().map(|s| s.theta.clone()).collect();
        let score = edge_scores_between(&truth.space, &truth.theta, &space, &thetas)?;
        let roc = roc_auroc(&score)?;
        let pr = precision_recall(&score)?;
        let tuned = match &sims {
            Some((sim, test)) => tune_on_test_set(sim, test, &seq, &cfg.solve_config())?,
            None => None,
        };
        out.push(Evaluation {
            estimator: est,
            roc,
            pr,
            tuned,
        });
    }
    Ok(out)
}

/// Plot-ready tables `auroc.tsv`, `roc.tsv`, `pr.tsv` and `mse.tsv`.
pub fn metric_tables(results: &[(usize, Vec<Evaluation>)]) -> Vec<(&'static str, String)> {
    let mut auroc = Vec::new();
    let mut roc = Vec::new();
    let mut pr = Vec::new();
    let mut mse = Vec::new();
    for (r, evals) in results {
        for ev in evals {
            let name = ev.estimator.name().to_string();
            auroc.push(vec![r.to_string(), name.clone(), f(ev.roc.auroc)]);
            for (x, y) in &ev.roc.points {
                roc.push(vec![r.to_string(), name.clone(), f(*x), f(*y)]);
            }
            for (x, y) in &ev.pr {
                pr.push(vec![r.to_string(), name.clone(), f(*x), f(*y)]);
            }
            if let Some((k, m)) = ev.tuned {
                mse.push(vec![
                    r.to_string(),
                    name.clone(),
                    k.to_string(),
                    f(m.value),
                    m.diverged.to_string(),
                ]);
            }
        }
    }
    vec![
        (
            "auroc.tsv",
            tsv(&["replicate", "estimator", "auroc"], &auroc),
        ),
        (
            "roc.tsv",
            tsv(&["replicate", "estimator", "fpr", "tpr"], &roc),
        ),
        (
            "pr.tsv",
            tsv(&["replicate", "estimator", "recall", "precision"], &pr),
        ),
        (
            "mse.tsv",
            tsv(
                &["replicate", "estimator", "model", "mse", "diverged"],
                &mse,
            ),
        ),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::study::run_replicate;

    #[test]
    fn persisted_metrics_match_in_memory_run() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = ExperimentConfig {
            system: SystemKind::EnzymeNetwork,
            d: 4,
            environments: 2,
            lambdas: 12,
            replicates: 1,
            seed: 3,
            ..ExperimentConfig::default()
        };
        cfg.estimators = vec![Estimator::Im, Estimator::Egm];
        simulate_to_dir(&cfg, dir.path()).unwrap();
        let rep = rep_dir(dir.path(), 0);
        fit_dir(&cfg, &rep).unwrap();
        let evals = evaluate_dir(&cfg, &rep, true).unwrap();
        let mem = run_replicate(&cfg, 0, true).unwrap();
        assert_eq!(evals.len(), 2);
        for ev in &evals {
            let m = mem.get(ev.estimator).unwrap();
            assert_eq!(ev.roc, m.roc);
            assert_eq!(ev.pr, m.pr);
            assert_eq!(ev.tuned, m.tuned);
        }
    }

    #[test]
    fn missing_replicates_are_reported() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(rep_dirs(dir.path()), Err(Error::InvalidInput(_))));
    }
}
