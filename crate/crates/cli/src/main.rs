use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use aim_core::error::{Error, Result};
use aim_core::harness::files::{f, tsv};
use aim_core::harness::pipeline::{self, metric_tables, rep_dirs, CONFIG_FILE};
use aim_core::harness::study::{mm_bias_study, run_replicates, summarize, summarize_roc};
use aim_core::harness::{ExperimentConfig, SystemKind};
use clap::{Args, Parser, Subcommand};

/// Sparse ODE network learning: simulate benchmark data, fit, evaluate.
#[derive(Parser)]
#[command(name = "aim", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate replicate data sets into the output directory.
    Simulate(Common),
    /// Fit every replicate directory of the output directory.
    Fit(Common),
    /// Score persisted fits against the stored truth.
    Evaluate(EvalArgs),
    /// Simulate, fit and score in memory; write aggregate summaries.
    ReplicateStudy(Common),
}

#[derive(Args)]
struct Common {
    /// Configuration file (key = value lines).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(short, long)]
    output: Option<String>,
    #[arg(long)]
    system: Option<String>,
    #[arg(long)]
    v: Option<String>,
    /// Number of environments.
    #[arg(long = "E")]
    environments: Option<String>,
    #[arg(long)]
    sigma: Option<String>,
    #[arg(long)]
    d: Option<String>,
    #[arg(long)]
    alpha: Option<String>,
    /// Observations per environment.
    #[arg(long)]
    n: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    #[arg(long)]
    replicates: Option<String>,
    /// Comma separated list of aim, im, ls-scad, egm.
    #[arg(long)]
    estimator: Option<String>,
    /// Enzyme search space: enzyme or enzyme-three-index.
    #[arg(long)]
    space: Option<String>,
    /// Any other configuration key.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    common: Common,
    /// Skip the test-set tuning and mse.tsv.
    #[arg(long)]
    no_tune: bool,
}

impl Common {
    /// File configuration (explicit, or the one stored by `simulate`), then
    /// flags on top.
    fn config(&self, stored: bool) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::parse(&read(p)?)?,
            None => {
                let out = self
                    .output
                    .clone()
                    .unwrap_or_else(|| ExperimentConfig::default().output);
                let path = Path::new(&out).join(CONFIG_FILE);
                if stored && path.exists() {
                    ExperimentConfig::parse(&read(&path)?)?
                } else {
                    ExperimentConfig::default()
                }
            }
        };
        let flags = [
            ("output", &self.output),
            ("system", &self.system),
            ("v", &self.v),
            ("environments", &self.environments),
            ("sigma", &self.sigma),
            ("d", &self.d),
            ("alpha", &self.alpha),
            ("n", &self.n),
            ("seed", &self.seed),
            ("replicates", &self.replicates),
            ("estimator", &self.estimator),
            ("space", &self.space),
        ];
        for (k, v) in flags {
            if let Some(v) = v {
                cfg.set(k, v)?;
            }
        }
        for kv in &self.set {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| Error::Parse(format!("--set expects KEY=VALUE, got '{kv}'")))?;
            cfg.set(k.trim(), v.trim())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| {
        Error::Io(std::io::Error::new(
            e.kind(),
            format!("{}: {e}", path.display()),
        ))
    })
}

fn write_tables(out: &Path, tables: &[(&str, String)]) -> Result<()> {
    fs::create_dir_all(out)?;
    for (name, text) in tables {
        fs::write(out.join(name), text)?;
    }
    Ok(())
}

fn simulate(args: &Common) -> Result<()> {
    let cfg = args.config(false)?;
    let out = PathBuf::from(&cfg.output);
    pipeline::simulate_to_dir(&cfg, &out)?;
    eprintln!(
        "simulated {} replicate(s) into {}",
        cfg.replicates,
        out.display()
    );
    Ok(())
}

fn fit(args: &Common) -> Result<()> {
    let cfg = args.config(true)?;
    let out = PathBuf::from(&cfg.output);
    for (r, dir) in rep_dirs(&out)? {
        pipeline::fit_dir(&cfg, &dir)?;
        eprintln!("fitted replicate {r}");
    }
    Ok(())
}

fn evaluate(args: &EvalArgs) -> Result<()> {
    let cfg = args.common.config(true)?;
    let out = PathBuf::from(&cfg.output);
    let mut results = Vec::new();
    for (r, dir) in rep_dirs(&out)? {
        results.push((r, pipeline::evaluate_dir(&cfg, &dir, !args.no_tune)?));
    }
    write_tables(&out, &metric_tables(&results))
}

/// Pointwise ROC summaries on an even false positive rate grid, plus AUROC
/// and MSE summaries.
fn replicate_study(args: &Common) -> Result<()> {
    let cfg = args.config(false)?;
    let out = PathBuf::from(&cfg.output);
    fs::create_dir_all(&out)?;
    fs::write(out.join(CONFIG_FILE), cfg.to_text())?;
    if cfg.system == SystemKind::MichaelisMenten {
        return mm_study(&cfg, &out);
    }
    let reps = run_replicates(&cfg, true)?;
    let results: Vec<_> = reps
        .iter()
        .map(|rep| {
            let evals = rep
                .outcomes
                .iter()
                .map(|o| pipeline::Evaluation {
                    estimator: o.estimator,
                    roc: o.roc.clone(),
                    pr: o.pr.clone(),
                    tuned: o.tuned,
                })
                .collect();
            (rep.replicate, evals)
        })
        .collect();
    let mut tables = metric_tables(&results);

    let grid: Vec<f64> = (0..=100).map(|k| k as f64 / 100.0).collect();
    let mut roc_rows = Vec::new();
    let mut auroc_rows = Vec::new();
    let mut mse_rows = Vec::new();
    for est in &cfg.estimators {
        let outs: Vec<_> = reps.iter().filter_map(|r| r.get(*est)).collect();
        let curves: Vec<_> = outs.iter().map(|o| &o.roc).collect();
        for (x, s) in grid.iter().zip(summarize_roc(&curves, &grid)) {
            roc_rows.push(vec![
                est.name().into(),
                f(*x),
                f(s.mean),
                f(s.median),
                f(s.p05),
                f(s.p95),
            ]);
        }
        let s = summarize(&outs.iter().map(|o| o.auroc()).collect::<Vec<_>>());
        auroc_rows.push(vec![
            est.name().into(),
            f(s.mean),
            f(s.median),
            f(s.p05),
            f(s.p95),
        ]);
        let mses: Vec<f64> = outs
            .iter()
            .filter_map(|o| o.tuned.map(|t| t.1.value))
            .collect();
        if !mses.is_empty() {
            let s = summarize(&mses);
            mse_rows.push(vec![
                est.name().into(),
                f(s.mean),
                f(s.median),
                f(s.p05),
                f(s.p95),
            ]);
        }
    }
    let stat = ["estimator", "mean", "median", "p05", "p95"];
    tables.push((
        "roc_summary.tsv",
        tsv(
            &["estimator", "fpr", "mean", "median", "p05", "p95"],
            &roc_rows,
        ),
    ));
    tables.push(("auroc_summary.tsv", tsv(&stat, &auroc_rows)));
    tables.push(("mse_summary.tsv", tsv(&stat, &mse_rows)));
    write_tables(&out, &tables)?;
    for row in &auroc_rows {
        eprintln!("{}: mean AUROC {}", row[0], row[1]);
    }
    Ok(())
}

fn mm_study(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    let study = mm_bias_study(&cfg.system(), cfg.replicates, &cfg.bandwidths, cfg.seed)?;
    let params = ["k_f", "k_r", "k_cat"];
    let mut rows = Vec::new();
    for row in &study.rows {
        let method = match row.bandwidth {
            Some(b) => format!("im-bandwidth-{}", f(b)),
            None => "least-squares".to_string(),
        };
        for (name, s) in params.iter().zip(&row.summaries) {
            rows.push(vec![
                method.clone(),
                name.to_string(),
                f(s.mean),
                f(s.median),
                f(s.p05),
                f(s.p95),
            ]);
        }
    }
    let mut raw = Vec::new();
    for (r, rep) in study.estimates.iter().enumerate() {
        for (k, est) in rep.iter().enumerate() {
            let mut row = vec![r.to_string(), k.to_string()];
            row.extend(est.iter().map(|v| f(*v)));
            raw.push(row);
        }
    }
    write_tables(
        out,
        &[
            (
                "mm_bias.tsv",
                tsv(
                    &["method", "parameter", "mean", "median", "p05", "p95"],
                    &rows,
                ),
            ),
            (
                "mm_estimates.tsv",
                tsv(&["replicate", "row", "k_f", "k_r", "k_cat"], &raw),
            ),
        ],
    )
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Stage { source, .. } => exit_code(source),
        Error::Parse(_)
        | Error::Schema { .. }
        | Error::InvalidInput(_)
        | Error::InvalidSpec(_)
        | Error::Dimension { .. }
        | Error::Domain(_) => 2,
        Error::Infeasible(_) => 3,
        Error::Solver { .. } | Error::Solve(_) | Error::Stalled { .. } => 4,
        Error::Io(_) => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let res = match &cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Fit(a) => fit(a),
        Command::Evaluate(a) => evaluate(a),
        Command::ReplicateStudy(a) => replicate_study(a),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
