use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("fixtures")
        .join(name)
}

fn audit(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_audit"))
        .args(args)
        .arg("--out-dir")
        .arg(out)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn json(path: &Path) -> Value {
    serde_json::from_slice(&fs::read(path).unwrap()).unwrap()
}

fn write_config(dir: &Path, name: &str, edit: impl FnOnce(&mut Value)) -> PathBuf {
    let mut cfg = json(&fixture("calibration.json"));
    edit(&mut cfg);
    let p = dir.join(name);
    fs::write(&p, serde_json::to_vec_pretty(&cfg).unwrap()).unwrap();
    p
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn bounds_reports_calibration_values() {
    let dir = tempfile::tempdir().unwrap();
    let o = audit(&["bounds", s(&fixture("calibration.json"))], dir.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let r = json(&dir.path().join("bounds.json"));
    assert_eq!(r["mu_min"].as_f64(), Some(3.0));
    assert!((r["dials"]["alpha"].as_f64().unwrap() - 0.4).abs() < 1e-12);
    assert!((r["dials"]["e2_threshold"].as_f64().unwrap() - 1.0 / 3.0).abs() < 1e-12);
    assert!((r["variance"]["sup"].as_f64().unwrap() - 25.8).abs() < 1e-9);
    assert!((r["committee"][0]["bound"].as_f64().unwrap() - (-0.56f64).exp()).abs() < 1e-9);
    let m = json(&dir.path().join("manifest.json"));
    assert_eq!(m["command"], "bounds");
    assert_eq!(m["outputs"][0]["path"], "bounds.json");
}

#[test]
fn bounds_assertions_gate_the_exit_code() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "low_floor.json", |c| {
        c["econ"]["p_min"] = 0.2.into()
    });
    let out = dir.path().join("out");
    assert_eq!(code(&audit(&["bounds", s(&cfg)], &out)), 0);
    assert_eq!(
        code(&audit(&["bounds", s(&cfg), "--assert-bounds"], &out)),
        5
    );
}

#[test]
fn config_errors_exit_2_with_location() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");

    let empty = write_config(dir.path(), "empty.json", |c| {
        c["vote"]["segments"] = Value::Array(vec![])
    });
    let o = audit(&["bounds", s(&empty)], &out);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("`vote`"));

    let broken = dir.path().join("broken.json");
    fs::write(&broken, "{\n  \"vote\": {\n    \"tau\": 0.66,,\n").unwrap();
    let o = audit(&["bounds", s(&broken)], &out);
    assert_eq!(code(&o), 2);
    assert!(
        String::from_utf8_lossy(&o.stderr).contains("broken.json:3:"),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );

    let wide = write_config(dir.path(), "wide.json", |c| {
        c["econ"]["epsilon_h"] = 0.5.into()
    });
    let o = audit(&["bounds", s(&wide)], &out);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("epsilon < 0.5"));

    let missing = dir.path().join("missing.json");
    assert_eq!(code(&audit(&["bounds", s(&missing)], &out)), 2);
    assert_eq!(
        code(&audit(
            &["audit", s(&fixture("pipeline.json")), "--tau-node", "1.5"],
            &out
        )),
        2
    );
    assert_eq!(
        code(&audit(
            &["audit", s(&fixture("pipeline.json")), "--format", "csv"],
            &out
        )),
        2
    );
}

#[test]
fn audit_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(
        code(&audit(
            &["audit", s(&fixture("all_valid.json"))],
            dir.path()
        )),
        0
    );

    let o = audit(&["audit", s(&fixture("pipeline.json"))], dir.path());
    assert_eq!(code(&o), 3);
    let r = json(&dir.path().join("report.json"));
    assert_eq!(r["root_causes"], serde_json::json!(["coder#0"]));
    assert_eq!(r["negligent"], serde_json::json!(["reviewer#0"]));

    let o = audit(&["audit", s(&fixture("cyclic_log.json"))], dir.path());
    assert_eq!(code(&o), 4);
    assert!(String::from_utf8_lossy(&o.stderr).contains("cycle"));
}

#[test]
fn validate_flags_structural_violations() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(
        code(&audit(
            &["validate", s(&fixture("integration_trace.json"))],
            dir.path()
        )),
        0
    );

    let mut g = json(&fixture("small_trace.json"));
    g["edges"]
        .as_array_mut()
        .unwrap()
        .push(serde_json::json!({"from": "o", "to": "g", "kind": "depends_on"}));
    let p = dir.path().join("cyclic_trace.json");
    fs::write(&p, serde_json::to_vec(&g).unwrap()).unwrap();
    assert_eq!(code(&audit(&["validate", s(&p)], dir.path())), 4);
    let r = json(&dir.path().join("validation.json"));
    let rules: Vec<&str> = r["violations"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v["rule"].as_str().unwrap())
        .collect();
    assert!(rules.contains(&"cycle"), "{rules:?}");
}

#[test]
fn refine_regenerators() {
    let dir = tempfile::tempdir().unwrap();
    let g = fixture("pipeline.json");
    assert_eq!(code(&audit(&["refine", s(&g)], dir.path())), 0);
    let log = fs::read_to_string(dir.path().join("rounds.jsonl")).unwrap();
    let last: Value = serde_json::from_str(log.lines().last().unwrap()).unwrap();
    assert_eq!(last["termination"], "all_valid");

    assert_eq!(
        code(&audit(
            &["refine", s(&g), "--regenerator", "root-only"],
            dir.path()
        )),
        0
    );
    assert_eq!(
        code(&audit(
            &["refine", s(&g), "--regenerator", "stuck"],
            dir.path()
        )),
        3
    );
    let log = fs::read_to_string(dir.path().join("rounds.jsonl")).unwrap();
    let last: Value = serde_json::from_str(log.lines().last().unwrap()).unwrap();
    assert_eq!(last["termination"], "stationary");

    let script = fixture("refine_script.json");
    assert_eq!(
        code(&audit(
            &[
                "refine",
                s(&g),
                "--regenerator",
                "scripted",
                "--script",
                s(&script)
            ],
            dir.path()
        )),
        0
    );
    assert_eq!(
        code(&audit(
            &["refine", s(&g), "--regenerator", "scripted"],
            dir.path()
        )),
        2
    );
}

#[test]
fn session_replays_deterministically() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let o = audit(&["session", s(&fixture("session.jsonl"))], out);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    }
    let (sa, sb) = (json(&a.join("state.json")), json(&b.join("state.json")));
    assert_eq!(sa, sb);
    let session = &sa["sessions"][0];
    assert_eq!(session["state_digest"], session["replay_digest"]);
    assert_eq!(session["trace_valid"], true);
    assert_eq!(
        json(&a.join("manifest.json"))["outputs"],
        json(&b.join("manifest.json"))["outputs"]
    );

    let events = fs::read_to_string(a.join("events.jsonl")).unwrap();
    let slashed: Vec<Value> = events
        .lines()
        .map(|l| serde_json::from_str::<Value>(l).unwrap())
        .filter(|e| e["kind"] == "auditor_slashed" && e["reason"] == "non_reveal")
        .collect();
    assert_eq!(slashed.len(), 1);
    assert_eq!(slashed[0]["seat"], 3);
}

#[test]
fn session_protocol_violations_are_structural() {
    let dir = tempfile::tempdir().unwrap();
    let text = fs::read_to_string(fixture("session.jsonl")).unwrap();
    // Reveal a vote that differs from the commitment.
    let tampered = text.replacen(
        r#""action": "reveal", "session": 0, "segment": 0, "seat": 10, "args": {"vote": true"#,
        r#""action": "reveal", "session": 0, "segment": 0, "seat": 10, "args": {"vote": false"#,
        1,
    );
    assert_ne!(tampered, text);
    fs::write(
        dir.path().join("small_trace.json"),
        fs::read(fixture("small_trace.json")).unwrap(),
    )
    .unwrap();
    let p = dir.path().join("tampered.jsonl");
    fs::write(&p, tampered).unwrap();
    let o = audit(&["session", s(&p)], &dir.path().join("out"));
    assert_eq!(code(&o), 4);
    assert!(String::from_utf8_lossy(&o.stderr).contains("does not match its commitment"));

    let bad = dir.path().join("bad.jsonl");
    fs::write(&bad, "{\"action\": \"teleport\"}\n").unwrap();
    assert_eq!(
        code(&audit(&["session", s(&bad)], &dir.path().join("out"))),
        2
    );
}

#[test]
fn simulate_passes_its_assertions_and_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let o = audit(
            &[
                "simulate",
                s(&fixture("calibration.json")),
                "--assert-bounds",
            ],
            out,
        );
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stdout));
    }
    assert_eq!(
        fs::read(a.join("simulate.json")).unwrap(),
        fs::read(b.join("simulate.json")).unwrap()
    );
    assert_eq!(
        json(&a.join("manifest.json")),
        json(&b.join("manifest.json"))
    );

    let c = dir.path().join("c");
    audit(
        &[
            "simulate",
            s(&fixture("calibration.json")),
            "--seed",
            "1",
            "--trials",
            "500",
        ],
        &c,
    );
    let m = json(&c.join("manifest.json"));
    assert_eq!(
        (m["seed"].as_u64(), m["trials"].as_u64()),
        (Some(1), Some(500))
    );
    assert_ne!(
        fs::read(a.join("simulate.json")).unwrap(),
        fs::read(c.join("simulate.json")).unwrap()
    );
}

#[test]
fn simulate_csv_and_zero_trials() {
    let dir = tempfile::tempdir().unwrap();
    let o = audit(
        &[
            "simulate",
            s(&fixture("calibration.json")),
            "--trials",
            "200",
            "--format",
            "csv",
        ],
        dir.path(),
    );
    assert_eq!(code(&o), 0);
    let csv = fs::read_to_string(dir.path().join("segments.csv")).unwrap();
    assert_eq!(csv.lines().count(), 16);
    assert!(csv.starts_with("index,tier,k,epsilon,rho,quorum,pass_freq,pass_se,analytic_pass"));
    assert_eq!(
        code(&audit(
            &["simulate", s(&fixture("calibration.json")), "--trials", "0"],
            dir.path()
        )),
        2
    );
}

#[test]
fn sweep_writes_a_row_per_cell() {
    let dir = tempfile::tempdir().unwrap();
    let o = audit(
        &[
            "sweep",
            s(&fixture("sweep.json")),
            "--trials",
            "300",
            "--assert-bounds",
        ],
        dir.path(),
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stdout));
    let csv = fs::read_to_string(dir.path().join("sweep.csv")).unwrap();
    assert_eq!(csv.lines().count(), 13);
    assert!(dir.path().join("sweep.json").exists());

    let no_grid = write_config(dir.path(), "no_grid.json", |_| {});
    assert_eq!(
        code(&audit(&["sweep", s(&no_grid)], &dir.path().join("x"))),
        2
    );
}
