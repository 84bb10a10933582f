use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use fldeco_core::report::{parse_csv, MatrixReport, RunReport, CSV_HEADER};
use fldeco_core::wire::Digest;
use serde_json::Value;
use tempfile::TempDir;

fn fldeco(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fldeco"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn schema_path() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../docs/report.schema.json")
}

fn schema(def: Option<&str>) -> Value {
    let mut s: Value = serde_json::from_str(&fs::read_to_string(schema_path()).unwrap()).unwrap();
    if let Some(def) = def {
        let defs = s["$defs"].clone();
        s = serde_json::json!({
            "$schema": s["$schema"],
            "$defs": defs,
            "$ref": format!("#/$defs/{def}"),
        });
    }
    s
}

fn assert_valid(schema: &Value, instance: &Value) {
    let validator = jsonschema::validator_for(schema).expect("schema compiles");
    let errors: Vec<String> = validator
        .iter_errors(instance)
        .map(|e| format!("{} at {}", e, e.instance_path()))
        .collect();
    assert!(errors.is_empty(), "schema violations: {errors:#?}");
}

fn write_config(dir: &TempDir, body: &str) -> PathBuf {
    let path = dir.path().join("exp.toml");
    fs::write(&path, body).unwrap();
    path
}

const MINIMAL: &str = "[simulation]\nseed = 11\nrounds = 4\n";

#[test]
fn run_writes_schema_valid_reports() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(&dir, MINIMAL);
    let out_dir = dir.path().join("out");
    let out = fldeco(&[
        "run",
        "--config",
        cfg.to_str().unwrap(),
        "--out-dir",
        out_dir.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));

    let text = fs::read_to_string(out_dir.join("report.json")).unwrap();
    let value: Value = serde_json::from_str(&text).unwrap();
    assert_valid(&schema(None), &value);

    let report: RunReport = serde_json::from_str(&text).unwrap();
    assert_eq!(report.to_json(), text);
    assert_eq!(report.meta.seed, 11);
    assert_eq!(report.meta.config_file_digest, Some(Digest::of(MINIMAL.as_bytes())));
    assert_eq!(report.rounds.len(), 4);
    assert!(report.rounds.iter().all(|r| r.committed));
    assert!(report.ban.goals_proved);
    assert!(out_dir.join("trace.json").exists());
    assert!(out_dir.join("chain.txt").exists());
}

#[test]
fn flags_override_the_file_and_change_the_digest() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(&dir, MINIMAL);
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for (d, seed) in [(&a, "11"), (&b, "12")] {
        let out = fldeco(&[
            "run",
            "--config",
            cfg.to_str().unwrap(),
            "--seed",
            seed,
            "--rounds",
            "2",
            "--out-dir",
            d.to_str().unwrap(),
        ]);
        assert!(out.status.success(), "{}", stderr(&out));
    }
    let ra: RunReport = serde_json::from_str(&fs::read_to_string(a.join("report.json")).unwrap()).unwrap();
    let rb: RunReport = serde_json::from_str(&fs::read_to_string(b.join("report.json")).unwrap()).unwrap();
    assert_eq!(ra.rounds.len(), 2);
    assert_eq!(rb.meta.seed, 12);
    assert_ne!(ra.meta.config_digest, rb.meta.config_digest);
    assert_eq!(ra.meta.config_file_digest, rb.meta.config_file_digest);
}

#[test]
fn rerun_is_byte_identical() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(&dir, MINIMAL);
    let runs: Vec<PathBuf> = ["one", "two"].iter().map(|n| dir.path().join(n)).collect();
    for d in &runs {
        let out = fldeco(&[
            "run",
            "--config",
            cfg.to_str().unwrap(),
            "--attack",
            "replay",
            "--out-dir",
            d.to_str().unwrap(),
        ]);
        assert!(out.status.success(), "{}", stderr(&out));
    }
    for name in ["report.json", "trace.json", "chain.txt"] {
        assert_eq!(
            fs::read(runs[0].join(name)).unwrap(),
            fs::read(runs[1].join(name)).unwrap(),
            "{name}"
        );
    }
}

#[test]
fn oracle_count_mismatch_is_a_config_error() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(&dir, "[simulation]\nf = 1\nn_oracles = 5\n");
    let out = fldeco(&[
        "run",
        "--config",
        cfg.to_str().unwrap(),
        "--out-dir",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
    let err = stderr(&out);
    assert!(err.contains("n_oracles") && err.contains("5 != 3f+1"), "{err}");
    assert!(err.contains("line 3"), "{err}");
    assert!(!dir.path().join("report.json").exists());
}

#[test]
fn unknown_keys_are_rejected() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(
        &dir,
        "[simulation]\nrounds = 2\n\n[simulation.defenses]\nnorm_fliter = false\n",
    );
    let out = fldeco(&["run", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("norm_fliter"), "{}", stderr(&out));
}

#[test]
fn unknown_attack_is_a_usage_error() {
    let out = fldeco(&["run", "--attack", "front_running"]);
    assert!(!out.status.success());
    assert!(stderr(&out).contains("front_running"));
}

#[test]
fn over_threshold_byzantine_run_exits_nonzero() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(
        &dir,
        "[simulation]\nrounds = 3\n\n[simulation.defenses]\nquorum = false\n\n[simulation.attack]\nkind = \"byzantine_oracle\"\ncorrupted = [0, 1]\n",
    );
    let out_dir = dir.path().join("out");
    let out = fldeco(&[
        "run",
        "--config",
        cfg.to_str().unwrap(),
        "--out-dir",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(3), "{}", stderr(&out));
    assert!(stderr(&out).contains("abort"));
    let report: RunReport = serde_json::from_str(&fs::read_to_string(out_dir.join("report.json")).unwrap()).unwrap();
    assert!(report.abort.is_some());
    assert!(report.rounds.iter().all(|r| !r.committed));
    let attack = report.attack.unwrap();
    assert!(attack.over_threshold && attack.detected && !attack.blocked);
}

#[test]
fn matrix_outputs_parse_and_no_defense_flips_poisoning() {
    let dir = TempDir::new().unwrap();
    let mut reports = Vec::new();
    for (name, extra) in [("defended", None), ("control", Some("--no-defense"))] {
        let d = dir.path().join(name);
        let mut args = vec!["matrix", "--rounds", "3", "--out-dir", d.to_str().unwrap()];
        args.extend(extra);
        let out = fldeco(&args);
        assert!(out.status.success(), "{}", stderr(&out));

        let csv = fs::read_to_string(d.join("matrix.csv")).unwrap();
        assert_eq!(csv.lines().next(), Some(CSV_HEADER));
        let rows = parse_csv(&csv).unwrap();
        assert!(rows.len() >= 10);

        let json = fs::read_to_string(d.join("matrix.json")).unwrap();
        assert_valid(&schema(Some("matrix_report")), &serde_json::from_str(&json).unwrap());
        let report: MatrixReport = serde_json::from_str(&json).unwrap();
        assert_eq!(report.to_json(), json);
        assert_eq!(report.to_csv(), csv);
        reports.push(report);
    }
    let poisoning = |r: &MatrixReport| r.rows.iter().find(|x| x.row == "Data Poisoning").unwrap().clone();
    assert!(reports[0].claims_hold());
    assert!(poisoning(&reports[0]).blocked);
    assert!(!poisoning(&reports[1]).blocked);
}

#[test]
fn matrix_rejects_a_single_attack() {
    let out = fldeco(&["matrix", "--attack", "replay"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn ban_proves_both_goals() {
    let dir = TempDir::new().unwrap();
    let out = fldeco(&["ban", "--out-dir", dir.path().to_str().unwrap()]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = stdout(&out);
    assert!(text.contains("O receives M from S in fresh state"));
    assert!(text.contains("| Proved"));
    assert!(text.contains("| NotProved"));
    assert_eq!(fs::read_to_string(dir.path().join("ban.txt")).unwrap(), text);
}

fn lineage_lines(out: &Output) -> Vec<String> {
    stdout(out)
        .lines()
        .filter(|l| l.starts_with("round"))
        .map(str::to_string)
        .collect()
}

#[test]
fn audit_healthy_tampered_and_unknown() {
    let dir = TempDir::new().unwrap();
    let out = fldeco(&["run", "--rounds", "10", "--out-dir", dir.path().to_str().unwrap()]);
    assert!(out.status.success(), "{}", stderr(&out));
    let hash = stdout(&out)
        .lines()
        .find_map(|l| l.strip_prefix("final model ").map(str::to_string))
        .expect("final model hash printed");
    let chain = dir.path().join("chain.txt");

    let out = fldeco(&["audit", chain.to_str().unwrap(), &hash]);
    assert!(out.status.success(), "{}", stderr(&out));
    let lines = lineage_lines(&out);
    assert_eq!(lines.len(), 10);
    assert!(lines[0].contains(&hash));
    assert!(lines[9].contains(&"0".repeat(64)));

    let absent = "ab".repeat(32);
    let out = fldeco(&["audit", chain.to_str().unwrap(), &absent]);
    assert_eq!(out.status.code(), Some(4));
    assert!(stderr(&out).contains("unknown model"));

    // Flip one hex digit inside block 3.
    let text = fs::read_to_string(&chain).unwrap();
    let mut lines: Vec<String> = text.lines().map(str::to_string).collect();
    let mut bytes = lines[3].clone().into_bytes();
    bytes[90] = if bytes[90] == b'0' { b'1' } else { b'0' };
    lines[3] = String::from_utf8(bytes).unwrap();
    let tampered = dir.path().join("tampered.txt");
    fs::write(&tampered, lines.join("\n") + "\n").unwrap();
    let out = fldeco(&["audit", tampered.to_str().unwrap(), &hash]);
    assert_eq!(out.status.code(), Some(4));
    assert!(stderr(&out).contains("broken at block 3"), "{}", stderr(&out));
}
