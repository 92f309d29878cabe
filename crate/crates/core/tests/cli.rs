use std::fs;
use std::path::Path;
use std::process::Command;

use coagdiff::cli::{RunConfig, EXIT_CONFIG, EXIT_PASS};

fn coagdiff(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_coagdiff"))
        .args(args)
        .output()
        .expect("spawn coagdiff")
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_owned()
}

#[test]
fn minimal_config_runs_with_documented_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.json", r#"{"command": "collide"}"#);
    let out = dir.path().join("out");
    let o = coagdiff(&[
        "collide",
        "--config",
        &cfg,
        "--paths",
        "20000",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(
        o.status.code(),
        Some(EXIT_PASS),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    let resolved =
        RunConfig::from_json(&fs::read_to_string(out.join("resolved-config.json")).unwrap())
            .unwrap();
    assert_eq!(resolved.seed, 0);
    let exp = resolved.collide.unwrap().experiment.unwrap();
    assert_eq!(exp.system.d(), 3);
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 0);
    assert_eq!(manifest["status"], "PASS");
    assert_eq!(manifest["config_sha256"].as_str().unwrap().len(), 64);
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(
        stdout
            .lines()
            .any(|l| l.starts_with("PASS estimate vs reference")),
        "{stdout}"
    );
}

#[test]
fn negative_radius_is_a_config_error_naming_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "c.json",
        r#"{"command": "collide", "collide": {"experiment": {
            "regime": "ever-collide", "g": {"kind": "one"},
            "system": {"model": "brownian", "n": 1.0, "pair": {
                "d": 3, "x1": [0, 0, 0], "x2": [1, 0, 0], "r_n": -0.01,
                "a1": {"kind": "constant", "value": 0.5},
                "a2": {"kind": "constant", "value": 0.5},
                "horizon": {"kind": "infinite"}}}}}}"#,
    );
    let o = coagdiff(&[
        "collide",
        "--config",
        &cfg,
        "--out",
        dir.path().join("o").to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(EXIT_CONFIG));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("r_n"), "{err}");
}

#[test]
fn unknown_key_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.json", r#"{"command": "oracle", "seeed": 1}"#);
    let o = coagdiff(&[
        "oracle",
        "--config",
        &cfg,
        "--out",
        dir.path().join("o").to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(EXIT_CONFIG));
    assert!(String::from_utf8_lossy(&o.stderr).contains("seeed"));
}

#[test]
fn bad_flag_exits_with_config_code() {
    assert_eq!(
        coagdiff(&["collide", "--regime", "sideways"]).status.code(),
        Some(EXIT_CONFIG)
    );
    assert_eq!(coagdiff(&["--help"]).status.code(), Some(EXIT_PASS));
}

#[test]
fn subcommand_must_match_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.json", r#"{"command": "oracle"}"#);
    let o = coagdiff(&[
        "smolu",
        "--config",
        &cfg,
        "--out",
        dir.path().join("o").to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(EXIT_CONFIG));
}

#[test]
fn resolved_config_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    for cmd in ["collide", "smolu", "oracle", "density-check"] {
        let cfg = RunConfig::from_json(&format!(r#"{{"command": "{cmd}", "seed": 9}}"#))
            .unwrap()
            .resolve()
            .unwrap();
        let text = serde_json::to_string_pretty(&cfg).unwrap();
        let p = write(dir.path(), "r.json", &text);
        let again = RunConfig::load(Path::new(&p)).unwrap();
        assert_eq!(again, cfg, "{cmd}");
        assert_eq!(
            again.resolve().unwrap(),
            cfg,
            "{cmd}: resolve is not idempotent"
        );
    }
}

#[test]
fn same_seed_gives_identical_csv() {
    let dir = tempfile::tempdir().unwrap();
    let run = |name: &str, threads: &str| {
        let out = dir.path().join(name);
        let o = coagdiff(&[
            "collide",
            "--seed",
            "5",
            "--paths",
            "9000",
            "--threads",
            threads,
            "--out",
            out.to_str().unwrap(),
        ]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        fs::read(out.join("estimates.csv")).unwrap()
    };
    let a = run("a", "1");
    let b = run("b", "2");
    assert_eq!(a, b);
    let o = coagdiff(&[
        "collide",
        "--seed",
        "6",
        "--paths",
        "9000",
        "--out",
        dir.path().join("c").to_str().unwrap(),
    ]);
    assert!(o.status.success());
    assert_ne!(fs::read(dir.path().join("c/estimates.csv")).unwrap(), a);
}

#[test]
fn oracle_command_checks_closed_form() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o");
    let o = coagdiff(&["oracle", "--json-summary", "--out", out.to_str().unwrap()]);
    assert_eq!(
        o.status.code(),
        Some(EXIT_PASS),
        "{}",
        String::from_utf8_lossy(&o.stdout)
    );
    let summary: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    let names: Vec<&str> = summary["checks"]
        .as_array()
        .unwrap()
        .iter()
        .map(|c| c["name"].as_str().unwrap())
        .collect();
    assert!(names.contains(&"closed-form number"), "{names:?}");
    let csv = fs::read_to_string(out.join("oracle.csv")).unwrap();
    assert!(csv.starts_with("t,number,mass,overflow_number,overflow_mass"));
}

#[test]
fn homogeneous_smolu_matches_oracle() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("s");
    let o = coagdiff(&["smolu", "--homogeneous", "--out", out.to_str().unwrap()]);
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert_eq!(
        o.status.code(),
        Some(EXIT_PASS),
        "{stdout}{}",
        String::from_utf8_lossy(&o.stderr)
    );
    assert!(stdout.contains("PASS oracle agreement"), "{stdout}");
    for f in [
        "trajectory.csv",
        "moments.csv",
        "field-final.json",
        "manifest.json",
    ] {
        assert!(out.join(f).exists(), "{f}");
    }
}

#[test]
fn smolu_with_picard_writes_contraction_factors() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "c.json",
        r#"{"command": "smolu", "smolu": {
            "solver": {"length": 20, "cells": 16, "rho": 2, "bins": 10,
                "kernel": {"kind": "constant", "value": 1.0},
                "diffusivity": {"coef": 1.0, "exponent": -0.3333333333333333},
                "weights": {"power-law": {"c1": 1.0, "u": 0.0}},
                "dt": 0.05, "t_end": 0.5},
            "initial": {"kind": "gaussian", "width": 1.0, "bins": [0.2]},
            "picard": {"steps": 5, "max_sweeps": 20, "tol": 1e-10}}}"#,
    );
    let out = dir.path().join("s");
    let o = coagdiff(&["smolu", "--config", &cfg, "--out", out.to_str().unwrap()]);
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert_eq!(
        o.status.code(),
        Some(EXIT_PASS),
        "{stdout}{}",
        String::from_utf8_lossy(&o.stderr)
    );
    let picard = fs::read_to_string(out.join("picard.csv")).unwrap();
    assert!(picard.lines().count() > 2, "{picard}");
    let moments = fs::read_to_string(out.join("moments.csv")).unwrap();
    assert!(moments.starts_with("t,mass_l1,w2_sup,riccati_bound,contraction_factor"));
}

#[test]
fn density_check_writes_both_tables() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "c.json",
        r#"{"command": "density-check", "seed": 4, "density_check": {
            "sandwich": {"a": 1.0, "drift_bound": 0.5,
                "drift": {"kind": "sine", "wavenumber": 2.0, "phase": 0.3},
                "t": 1.0, "start": 0.0, "dt": 0.005, "n_paths": 20000, "n_bins": 10, "z": 2.576, "seed": 0},
            "saturation": {"a": 1.0, "drift_bound": 0.5, "t": 1.0, "deltas": [0.0, 1.0],
                "n_samples": 200000, "half_width": 0.02, "k": 3.0}}}"#,
    );
    let out = dir.path().join("d");
    let o = coagdiff(&[
        "density-check",
        "--config",
        &cfg,
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(
        o.status.code(),
        Some(EXIT_PASS),
        "{}",
        String::from_utf8_lossy(&o.stdout)
    );
    assert!(out.join("sandwich.csv").exists() && out.join("saturation.csv").exists());
}
