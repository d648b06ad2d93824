//! Drives the `covkit` binary: exit codes, artifacts and manifests.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/configs")
}

fn covkit(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_covkit"))
        .args(args)
        .output()
        .unwrap()
}

fn run_ok(command: &str, config: &Path, out: &Path, extra: &[&str]) -> Output {
    let mut args = vec![
        command,
        "--config",
        config.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ];
    args.extend_from_slice(extra);
    let o = covkit(&args);
    assert!(
        o.status.success(),
        "{command}: {}",
        String::from_utf8_lossy(&o.stderr)
    );
    o
}

fn manifest(dir: &Path) -> Vec<String> {
    fs::read_to_string(dir.join("manifest.txt"))
        .unwrap()
        .lines()
        .map(String::from)
        .collect()
}

#[test]
fn experiment_writes_tables_traces_and_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("run1");
    run_ok(
        "experiment",
        &configs().join("paper5.toml"),
        &out,
        &["--set", "experiment.seeds=3"],
    );
    let listed = manifest(&out);
    for name in [
        "experiment.csv",
        "summary.csv",
        "trace_1.csv",
        "trace_3.csv",
        "manifest.txt",
    ] {
        assert!(
            listed.contains(&name.to_string()),
            "{name} missing from {listed:?}"
        );
    }
    for name in &listed {
        assert!(out.join(name).is_file(), "{name} listed but not written");
    }
    let table = fs::read_to_string(out.join("experiment.csv")).unwrap();
    assert!(table.starts_with("seed,model,mae,rmse\n1,with_delta,"));
    assert_eq!(table.lines().count(), 7);
}

#[test]
fn every_command_is_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = configs().join("multivariate-matern.toml");
    let tweaks = [
        "--set",
        "simulate.replicates=50",
        "--set",
        "predict.sites=[1, 10]",
    ];
    for command in [
        "build-cov",
        "simulate",
        "empirical-corr",
        "diagnose",
        "predict",
    ] {
        let (a, b) = (
            tmp.path().join(format!("{command}-a")),
            tmp.path().join(format!("{command}-b")),
        );
        run_ok(command, &cfg, &a, &tweaks);
        run_ok(command, &cfg, &b, &tweaks);
        let listed = manifest(&a);
        assert_eq!(listed, manifest(&b));
        for name in &listed {
            let bytes = fs::read(a.join(name)).unwrap();
            assert_eq!(
                bytes,
                fs::read(b.join(name)).unwrap(),
                "{command}: {name} differs"
            );
            assert!(!bytes.contains(&b'\r'));
        }
    }
}

#[test]
fn seed_flag_changes_draws() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = configs().join("intrinsic.toml");
    let one = ["--set", "simulate.replicates=1"];
    run_ok(
        "simulate",
        &cfg,
        &tmp.path().join("a"),
        &[&one[..], &["--seed", "100"]].concat(),
    );
    let listed = manifest(&tmp.path().join("a"));
    assert_eq!(listed, vec!["sample_100.csv", "manifest.txt"]);
    let csv = fs::read_to_string(tmp.path().join("a/sample_100.csv")).unwrap();
    assert!(csv.starts_with("component,site,coordinate,value\n1,1,0,"));
}

#[test]
fn usage_errors_exit_one() {
    let o = covkit(&["bogus", "--config", "x.toml", "--out", "y"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("build-cov"));
    assert_eq!(covkit(&["simulate"]).status.code(), Some(1));
    let tmp = tempfile::tempdir().unwrap();
    let missing = covkit(&[
        "simulate",
        "--config",
        "nope.toml",
        "--out",
        tmp.path().to_str().unwrap(),
    ]);
    assert_eq!(missing.status.code(), Some(1));
}

fn expect_invalid(config: &str, extra: &[&str]) -> String {
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("c.toml");
    fs::write(&path, config).unwrap();
    let mut args = vec![
        "build-cov",
        "--config",
        path.to_str().unwrap(),
        "--out",
        tmp.path().to_str().unwrap(),
    ];
    args.extend_from_slice(extra);
    let o = covkit(&args);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8(o.stderr).unwrap();
    assert_eq!(err.lines().count(), 1, "{err}");
    err
}

#[test]
fn mardia_symmetry_violation_exits_two() {
    let text = fs::read_to_string(configs().join("mardia.toml")).unwrap();
    let broken = text.replace(
        "backward = [[0.3, 0.1], [0.05, 0.2]]",
        "backward = [[0.3, 0.1], [0.05, 0.21]]",
    );
    let err = expect_invalid(&broken, &[]);
    assert!(
        err.starts_with("symmetry-condition-violated pair=("),
        "{err}"
    );
}

#[test]
fn invalid_fields_are_all_named() {
    let text = fs::read_to_string(configs().join("multivariate-matern.toml")).unwrap();
    let err = expect_invalid(
        &text,
        &[
            "--set",
            "multivariate-matern.kappa=-1",
            "--set",
            "multivariate-matern.shifts[1][1]=0.5",
        ],
    );
    assert!(err.starts_with("invalid-spec"), "{err}");
    assert!(err.contains("multivariate-matern.kappa"), "{err}");
    assert!(err.contains("multivariate-matern.shifts[1][1]"), "{err}");
    let err = expect_invalid(
        "[grid]\nn = 3\nstep = 1.0\nstart = 0.0\n[model]\nfamily = \n",
        &[],
    );
    assert!(err.starts_with("parse-error line=6"), "{err}");
}
