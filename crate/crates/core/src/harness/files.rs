//! On-disk layout of simulated data sets and delimited metric tables.
//!
//! A data set directory holds `manifest.txt`, one `env<k>.tsv` per
//! environment and, for simulated data, `truth.field` and
//! `truth_initial.tsv`.
//!
//! ```text
//! # dataset manifest
//! schema = 1
//! system = lotka-volterra
//! seed = 7
//! species = X1 X2
//! params = 3
//! environments = 2
//! env 0 = env0.tsv
//! scales 0 =
//! env 1 = env1.tsv
//! scales 1 = 2:0
//! ```
//!
//! Scales list only the coordinates that differ from 1, as `index:value`.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::systems::Simulation;
use crate::data::{Dataset, Environment};
use crate::error::{Error, Result};
use crate::field::text::{fmt_f64, read_field, write_field};
use crate::field::FieldSpec;
use crate::scales::InterventionScales;

pub const DATASET_SCHEMA_VERSION: u32 = 1;

/// A data set read back from disk.
#[derive(Debug, Clone, PartialEq)]
pub struct StoredDataset {
    pub dataset: Dataset,
    pub system: Option<String>,
    pub seed: Option<u64>,
    pub truth: Option<StoredTruth>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StoredTruth {
    pub space: FieldSpec,
    pub theta: Vec<f64>,
    pub initial_states: Vec<Vec<f64>>,
}

/// Tab-separated table with a header row.
pub fn tsv(header: &[&str], rows: &[Vec<String>]) -> String {
    let mut out = header.join("\t");
    out.push('\n');
    for r in rows {
        out.push_str(&r.join("\t"));
        out.push('\n');
    }
    out
}

pub fn f(v: f64) -> String {
    fmt_f64(v)
}

fn env_tsv(species: &[String], env: &Environment) -> String {
    let weighted = env.weights.iter().flatten().any(|&w| w != 1.0);
    let mut header = vec!["time".to_string()];
    header.extend(species.iter().cloned());
    if weighted {
        header.extend(species.iter().map(|s| format!("w:{s}")));
    }
    let mut out = header.join("\t");
    out.push('\n');
    for (i, t) in env.times.iter().enumerate() {
        let mut row = vec![f(*t)];
        row.extend(env.values[i].iter().map(|v| f(*v)));
        if weighted {
            row.extend(env.weights[i].iter().map(|v| f(*v)));
        }
        out.push_str(&row.join("\t"));
        out.push('\n');
    }
    out
}

fn parse_f64(tok: &str, what: &str) -> Result<f64> {
    tok.parse()
        .map_err(|_| Error::Parse(format!("{what}: bad number {tok:?}")))
}

fn read_env_tsv(text: &str, species: &[String], name: &str) -> Result<Environment> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header: Vec<&str> = lines
        .next()
        .ok_or_else(|| Error::Parse(format!("{name}: empty file")))?
        .split('\t')
        .collect();
    let d = species.len();
    let weighted = header.len() == 1 + 2 * d;
    if header.first() != Some(&"time") || !(header.len() == 1 + d || weighted) {
        return Err(Error::Parse(format!("{name}: unexpected header")));
    }
    if header[1..=d].iter().zip(species).any(|(h, s)| h != s) {
        return Err(Error::Parse(format!(
            "{name}: species columns do not match the manifest"
        )));
    }
    let (mut times, mut values, mut weights) = (Vec::new(), Vec::new(), Vec::new());
    for line in lines {
        let toks: Vec<&str> = line.split('\t').collect();
        if toks.len() != header.len() {
            return Err(Error::Parse(format!("{name}: ragged row")));
        }
        times.push(parse_f64(toks[0], name)?);
        values.push(
            toks[1..=d]
                .iter()
                .map(|t| parse_f64(t, name))
                .collect::<Result<_>>()?,
        );
        weights.push(if weighted {
            toks[1 + d..]
                .iter()
                .map(|t| parse_f64(t, name))
                .collect::<Result<_>>()?
        } else {
            vec![1.0; d]
        });
    }
    Ok(Environment::with_weights(times, values, weights))
}

fn sparse_scales(c: &[f64]) -> String {
    c.iter()
        .enumerate()
        .filter(|(_, &v)| v != 1.0)
        .map(|(j, v)| format!("{j}:{}", f(*v)))
        .collect::<Vec<_>>()
        .join(",")
}

fn parse_sparse(s: &str, p: usize) -> Result<Vec<f64>> {
    let mut c = vec![1.0; p];
    for item in s.split(',').map(str::trim).filter(|t| !t.is_empty()) {
        let (j, v) = item
            .split_once(':')
            .ok_or_else(|| Error::Parse(format!("bad scale entry {item:?}")))?;
        let j: usize = j
            .parse()
            .map_err(|_| Error::Parse(format!("bad scale index {j:?}")))?;
        if j >= p {
            return Err(Error::Parse(format!("scale index {j} out of range")));
        }
        c[j] = parse_f64(v, "scales")?;
    }
    Ok(c)
}

/// Manifest and environment files of a data set, keyed by file name.
pub fn dataset_files(
    dataset: &Dataset,
    system: Option<&str>,
    seed: Option<u64>,
) -> Vec<(String, String)> {
    let mut m = String::from("# dataset manifest\n");
    let _ = writeln!(m, "schema = {DATASET_SCHEMA_VERSION}");
    if let Some(s) = system {
        let _ = writeln!(m, "system = {s}");
    }
    if let Some(s) = seed {
        let _ = writeln!(m, "seed = {s}");
    }
    let _ = writeln!(m, "species = {}", dataset.species.join(" "));
    let _ = writeln!(m, "params = {}", dataset.scales.n_params());
    let _ = writeln!(m, "environments = {}", dataset.n_environments());
    let mut files = Vec::new();
    for (e, env) in dataset.environments.iter().enumerate() {
        let name = format!("env{e}.tsv");
        let _ = writeln!(m, "env {e} = {name}");
        let _ = writeln!(m, "scales {e} = {}", sparse_scales(dataset.scales.get(e)));
        files.push((name, env_tsv(&dataset.species, env)));
    }
    files.insert(0, ("manifest.txt".into(), m));
    files
}

/// Writes a simulated data set with its ground truth into `dir`.
pub fn write_simulation(dir: &Path, sim: &Simulation) -> Result<()> {
    fs::create_dir_all(dir)?;
    for (name, text) in dataset_files(&sim.dataset, Some(sim.system.name()), Some(sim.seed)) {
        fs::write(dir.join(name), text)?;
    }
    fs::write(
        dir.join("truth.field"),
        write_field(&sim.truth.space, Some(&sim.truth.theta)),
    )?;
    let rows: Vec<Vec<String>> = sim
        .design
        .initial_states
        .iter()
        .enumerate()
        .map(|(e, x)| {
            std::iter::once(e.to_string())
                .chain(x.iter().map(|v| f(*v)))
                .collect()
        })
        .collect();
    let mut header = vec!["environment"];
    header.extend(sim.dataset.species.iter().map(String::as_str));
    fs::write(dir.join("truth_initial.tsv"), tsv(&header, &rows))?;
    Ok(())
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| {
        Error::Io(std::io::Error::new(
            e.kind(),
            format!("{}: {e}", path.display()),
        ))
    })
}

/// Reads a data set directory; the truth is included when present.
pub fn read_dataset_dir(dir: &Path) -> Result<StoredDataset> {
    let manifest = read_text(&dir.join("manifest.txt"))?;
    let mut kv: Vec<(String, String)> = Vec::new();
    for line in manifest.lines().map(str::trim) {
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Parse(format!("manifest: bad line {line:?}")))?;
        kv.push((k.trim().to_string(), v.trim().to_string()));
    }
    let get = |k: &str| kv.iter().find(|(a, _)| a == k).map(|(_, v)| v.as_str());
    let schema = get("schema").unwrap_or("");
    if schema != DATASET_SCHEMA_VERSION.to_string() {
        return Err(Error::Schema {
            expected: DATASET_SCHEMA_VERSION,
            found: schema.to_string(),
        });
    }
    let species: Vec<String> = get("species")
        .ok_or_else(|| Error::Parse("manifest: missing species".into()))?
        .split_whitespace()
        .map(String::from)
        .collect();
    let p: usize = get("params")
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| Error::Parse("manifest: missing params".into()))?;
    let n_env: usize = get("environments")
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| Error::Parse("manifest: missing environments".into()))?;
    let mut envs = Vec::with_capacity(n_env);
    let mut scales = Vec::with_capacity(n_env);
    for e in 0..n_env {
        let name = get(&format!("env {e}"))
            .ok_or_else(|| Error::Parse(format!("manifest: missing env {e}")))?;
        envs.push(read_env_tsv(&read_text(&dir.join(name))?, &species, name)?);
        scales.push(parse_sparse(get(&format!("scales {e}")).unwrap_or(""), p)?);
    }
    let dataset = Dataset::new(species, envs, InterventionScales::new(scales)?)?;
    let truth_path = dir.join("truth.field");
    let truth = if truth_path.exists() {
        let (space, theta) = read_field(&read_text(&truth_path)?)?;
        let theta = theta.ok_or_else(|| Error::Parse("truth.field has no theta".into()))?;
        let init = read_text(&dir.join("truth_initial.tsv"))?;
        let initial_states = init
            .lines()
            .skip(1)
            .filter(|l| !l.trim().is_empty())
            .map(|l| {
                l.split('\t')
                    .skip(1)
                    .map(|t| parse_f64(t, "truth_initial.tsv"))
                    .collect()
            })
            .collect::<Result<_>>()?;
        Some(StoredTruth {
            space,
            theta,
            initial_states,
        })
    } else {
        None
    };
    Ok(StoredDataset {
        dataset,
        system: get("system").map(String::from),
        seed: get("seed").and_then(|s| s.parse().ok()),
        truth,
    })
}

#[cfg(test)]
mod tests {
    use super::super::systems::{simulate_dataset, System};
    use super::*;
    use crate::field::SearchSpace;

    #[test]
    fn simulation_round_trip() {
        let sim = simulate_dataset(
            &System::EnzymeNetwork {
                d: 4,
                alpha: 1,
                environments: 2,
                n: 10,
                sigma: 0.5,
                space: SearchSpace::Enzyme,
            },
            3,
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_simulation(dir.path(), &sim).unwrap();
        let back = read_dataset_dir(dir.path()).unwrap();
        assert_eq!(back.dataset, sim.dataset);
        assert_eq!(back.seed, Some(3));
        let truth = back.truth.unwrap();
        assert_eq!(truth.theta, sim.truth.theta);
        assert_eq!(truth.space, sim.truth.space);
        assert_eq!(truth.initial_states, sim.design.initial_states);
    }

    #[test]
    fn scales_and_weights_survive() {
        let env = Environment::with_weights(
            vec![0.0, 1.0],
            vec![vec![1.0, 2.0], vec![0.5, 0.25]],
            vec![vec![1.0, 2.0], vec![1.0, 0.5]],
        );
        let mut scales = InterventionScales::ones(2, 3);
        scales.inhibit(1, 2);
        scales.stimulate(0, 0, 2.5);
        let ds =
            Dataset::new(vec!["A".into(), "B".into()], vec![env.clone(), env], scales).unwrap();
        let dir = tempfile::tempdir().unwrap();
        for (name, text) in dataset_files(&ds, None, None) {
            fs::write(dir.path().join(name), text).unwrap();
        }
        let back = read_dataset_dir(dir.path()).unwrap();
        assert_eq!(back.dataset, ds);
        assert!(back.truth.is_none());
    }

    #[test]
    fn schema_mismatch_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("manifest.txt"), "schema = 9\n").unwrap();
        assert!(matches!(
            read_dataset_dir(dir.path()),
            Err(Error::Schema { .. })
        ));
    }
}
