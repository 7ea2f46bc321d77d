use std::path::Path;
use std::process::{Command, Output};

fn isde(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_isde")).args(args).output().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn synth_fit_eval() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("x.csv");
    let model = dir.path().join("m.json");
    let trace = dir.path().join("t.json");
    let out = isde(&["synth", "--d", "4", "--kstar", "2", "--sigma", "0.7", "--n", "1500", "--seed", "1", "--output", s(&data)]);
    assert!(out.status.success());
    let out = isde(&["fit", "--input", s(&data), "--k", "2", "--output", s(&model), "--dp-trace", s(&trace)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let json: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&model).unwrap()).unwrap();
    assert_eq!(json["partition"], serde_json::json!([[1, 2], [3, 4]]));
    assert!(trace.exists());

    let pts = dir.path().join("p.csv");
    std::fs::write(&pts, "0.5,0.5,0.5,0.5\n0.2,0.2,0.9,0.9\n1.5,0.5,0.5,0.5\n").unwrap();
    let out = isde(&["eval", "--model", s(&model), "--points", s(&pts)]);
    assert!(out.status.success());
    let vals: Vec<f64> = String::from_utf8(out.stdout)
        .unwrap()
        .lines()
        .map(|l| l.parse().unwrap())
        .collect();
    assert_eq!(vals.len(), 3);
    assert!(vals[0] > 0.0 && vals[1] > 0.0);
    assert_eq!(vals[2], 0.0);
}

#[test]
fn rescale_is_recorded() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("x.csv");
    let model = dir.path().join("m.json");
    let rows: String = (0..50).map(|i| format!("{},{}\n", i as f64 * 3.0 - 10.0, (i * 7 % 13) as f64)).collect();
    std::fs::write(&data, rows).unwrap();
    let out = isde(&["fit", "--input", s(&data), "--k", "2", "--output", s(&model)]);
    assert_eq!(out.status.code(), Some(3));
    let out = isde(&["fit", "--input", s(&data), "--k", "2", "--rescale", "--output", s(&model)]);
    assert!(out.status.success());
    let json: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&model).unwrap()).unwrap();
    assert!(json.get("rescale").is_some());
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("x.csv");
    std::fs::write(&data, "0.1,0.2\n0.3,0.4\n0.5,0.6\n0.7,0.8\n0.2,0.9\n").unwrap();
    let out_path = dir.path().join("m.json");
    let out = isde(&["fit", "--input", s(&data), "--k", "3", "--output", s(&out_path)]);
    assert_eq!(out.status.code(), Some(2));
    let out = isde(&["fit", "--input", s(&dir.path().join("missing.csv")), "--k", "1", "--output", s(&out_path)]);
    assert_eq!(out.status.code(), Some(3));
    std::fs::write(&data, "0.1,0.2\n0.3\n").unwrap();
    let out = isde(&["fit", "--input", s(&data), "--k", "1", "--output", s(&out_path)]);
    assert_eq!(out.status.code(), Some(3));
    let out = isde(&["synth", "--d", "4", "--kstar", "3", "--sigma", "0.5", "--n", "10"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn oracle_tables() {
    let out = isde(&["oracle", "--table", "structures", "--d-max", "4", "--format", "csv"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.lines().count() > 5);
    let out = isde(&["oracle", "--table", "determinants", "--d-max", "4"]);
    assert!(out.status.success());
    let _: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
}
