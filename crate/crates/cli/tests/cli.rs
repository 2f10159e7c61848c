use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn aim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_aim"))
        .args(args)
        .output()
        .unwrap()
}

fn ok(args: &[&str]) {
    let out = aim(args);
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.is_file())
        .map(|p| {
            (
                p.file_name().unwrap().to_string_lossy().into_owned(),
                fs::read(&p).unwrap(),
            )
        })
        .collect();
    files.sort();
    files
}

const SMALL: [&str; 10] = [
    "--system",
    "enzyme-network",
    "--d",
    "4",
    "--E",
    "2",
    "--seed",
    "11",
    "--replicates",
    "2",
];

#[test]
fn same_seed_gives_identical_files() {
    let tmp = tempfile::tempdir().unwrap();
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    for out in [&a, &b] {
        let o = out.to_str().unwrap();
        let mut args = vec!["simulate", "-o", o];
        args.extend(SMALL);
        ok(&args);
        ok(&["fit", "-o", o, "--estimator", "im,egm"]);
    }
    for r in ["rep000", "rep001"] {
        let x = dir_bytes(&a.join(r));
        assert!(x.iter().any(|(n, _)| n == "fits-im.jsonl"));
        assert_eq!(x, dir_bytes(&b.join(r)));
    }
    let other = tmp.path().join("c");
    let mut args = vec!["simulate", "-o", other.to_str().unwrap(), "--seed", "12"];
    args.extend(&SMALL[..6]);
    ok(&args);
    assert_ne!(
        fs::read(a.join("rep000/env0.tsv")).unwrap(),
        fs::read(other.join("rep000/env0.tsv")).unwrap()
    );
}

#[test]
fn simulate_fit_evaluate_writes_tables() {
    let tmp = tempfile::tempdir().unwrap();
    let o = tmp.path().to_str().unwrap();
    let mut args = vec!["simulate", "-o", o];
    args.extend(SMALL);
    ok(&args);
    ok(&[
        "fit",
        "-o",
        o,
        "--estimator",
        "aim,im",
        "--set",
        "lambdas=10",
    ]);
    ok(&["evaluate", "-o", o, "--estimator", "aim,im"]);
    let auroc = fs::read_to_string(tmp.path().join("auroc.tsv")).unwrap();
    let lines: Vec<_> = auroc.lines().collect();
    assert_eq!(lines[0], "replicate\testimator\tauroc");
    assert_eq!(lines.len(), 1 + 2 * 2);
    for line in &lines[1..] {
        let v: f64 = line.split('\t').nth(2).unwrap().parse().unwrap();
        assert!((0.0..=1.0).contains(&v));
    }
    let mse = fs::read_to_string(tmp.path().join("mse.tsv")).unwrap();
    assert_eq!(mse.lines().count(), 1 + 2 * 2);
    assert!(tmp.path().join("rep001/report-aim.txt").exists());
}

#[test]
fn exhaustive_search_refuses_large_spaces() {
    let tmp = tempfile::tempdir().unwrap();
    let o = tmp.path().to_str().unwrap();
    ok(&[
        "simulate",
        "-o",
        o,
        "--system",
        "enzyme-network",
        "--d",
        "11",
        "--seed",
        "4",
    ]);
    let out = aim(&[
        "fit",
        "-o",
        o,
        "--estimator",
        "egm",
        "--space",
        "three-index",
    ]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("infeasible"));
    ok(&["fit", "-o", o, "--estimator", "egm", "--space", "two-index"]);
}

#[test]
fn config_errors_exit_with_two() {
    let tmp = tempfile::tempdir().unwrap();
    let o = tmp.path().to_str().unwrap();
    let out = aim(&["simulate", "-o", o, "--sigma", "-1"]);
    assert_eq!(out.status.code(), Some(2));
    let out = aim(&["simulate", "-o", o, "--set", "no_such_key=1"]);
    assert_eq!(out.status.code(), Some(2));
    let cfg = tmp.path().join("bad.txt");
    fs::write(&cfg, "system = lotka-volterra\nreplicates\n").unwrap();
    let out = aim(&["simulate", "--config", cfg.to_str().unwrap(), "-o", o]);
    assert_eq!(out.status.code(), Some(2));
    let out = aim(&["fit", "-o", tmp.path().join("empty").to_str().unwrap()]);
    assert_ne!(out.status.code(), Some(0));
}

#[test]
fn config_file_is_read() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("run.txt");
    let out = tmp.path().join("out");
    fs::write(
        &cfg,
        format!(
            "# small run\nsystem = enzyme-network\nd = 3\nE = 2\nreplicates = 1\noutput = {}\n",
            out.display()
        ),
    )
    .unwrap();
    ok(&["simulate", "--config", cfg.to_str().unwrap()]);
    let stored = fs::read_to_string(out.join("config.txt")).unwrap();
    assert!(stored.contains("d = 3"));
    assert!(out.join("rep000/env1.tsv").exists());
    assert!(!out.join("rep001").exists());
}
