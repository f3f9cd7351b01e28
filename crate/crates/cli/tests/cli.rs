use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn dgsp(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dgsp")).current_dir(dir).args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn workspace() -> TempDir {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    fs::write(p.join("a.json"), r#"{"kind":"delta","x":[0,0]}"#).unwrap();
    fs::write(p.join("b.json"), r#"{"kind":"delta","x":[3,4]}"#).unwrap();
    fs::write(p.join("x.json"), r#"{"kind":"delta","x":[1,2,3]}"#).unwrap();
    fs::write(p.join("g.json"), r#"{"n":3,"edges":[[0,1,1.0],[1,2,1.0]]}"#).unwrap();
    fs::write(p.join("h.json"), r#"{"n":3,"edges":[[0,1,1.0],[1,2,1.0],[0,2,0.5]]}"#).unwrap();
    fs::write(
        p.join("op.json"),
        r#"{"sags":{"kind":"constant","graphs":["g.json"],"probs":[1.0]},"filter":{"kind":"polynomial","coeffs":[1,2],"gso":"laplacian"}}"#,
    )
    .unwrap();
    fs::write(
        p.join("mix.json"),
        r#"{"sags":{"kind":"constant","graphs":["g.json","h.json"],"probs":[0.5,0.5]},"filter":{"kind":"polynomial","coeffs":[0.5,1],"gso":"adjacency"}}"#,
    )
    .unwrap();
    fs::write(p.join("gauss.json"), r#"{"kind":"gaussian","mean":[0,0,0],"cov":[[1,0,0],[0,1,0],[0,0,1]]}"#).unwrap();
    dir
}

#[test]
fn w2_between_point_masses() {
    let dir = workspace();
    let o = dgsp(dir.path(), &["w2", "--a", "a.json", "--b", "b.json"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(stdout(&o).trim().parse::<f64>().unwrap(), 5.0);
}

#[test]
fn classical_push_is_matrix_product() {
    let dir = workspace();
    let o = dgsp(dir.path(), &["push", "--op", "op.json", "--input", "x.json"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["kind"], "delta");
    // (I + 2L) x for the path 0-1-2 with x = (1, 2, 3)
    let expected = [-1.0, 2.0, 5.0];
    for (got, want) in v["x"].as_array().unwrap().iter().zip(expected) {
        assert!((got.as_f64().unwrap() - want).abs() < 1e-12);
    }
}

#[test]
fn selftest_passes() {
    let dir = workspace();
    let o = dgsp(dir.path(), &["selftest"]);
    assert!(o.status.success(), "{}{}", stdout(&o), stderr(&o));
    let out = stdout(&o);
    assert!(out.lines().count() >= 8);
    assert!(!out.contains("FAIL"));
}

#[test]
fn sampled_push_without_seed_is_rejected() {
    let dir = workspace();
    let o = dgsp(dir.path(), &["push", "--op", "mix.json", "--input", "gauss.json", "--mode", "sample"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("seed"), "{}", stderr(&o));
}

#[test]
fn unknown_command_exits_one() {
    let dir = workspace();
    assert_eq!(dgsp(dir.path(), &["frobnicate"]).status.code(), Some(1));
    assert_eq!(dgsp(dir.path(), &["--help"]).status.code(), Some(0));
}

#[test]
fn malformed_csv_reports_location() {
    let dir = workspace();
    fs::write(dir.path().join("bad.csv"), "1,2\n3,x\n").unwrap();
    let o = dgsp(dir.path(), &["graph", "--kind", "knn", "--points", "bad.csv", "--k", "1"]);
    assert_eq!(o.status.code(), Some(1));
    let err = stderr(&o);
    assert!(err.contains("line 2") && err.contains("field 2"), "{err}");
}

#[test]
fn manifest_reruns_identically() {
    let dir = workspace();
    let o = dgsp(dir.path(), &["push", "--op", "mix.json", "--input", "gauss.json", "--mode", "sample", "--seed", "9", "--budget", "64", "--out", "first.json"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("first.json.manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "push");
    assert_eq!(manifest["options"]["seed"], 9);
    assert_eq!(manifest["outputs"][0], "first.json");

    let o = dgsp(dir.path(), &["push", "--op", "mix.json", "--input", "gauss.json", "--config", "first.json.manifest.json", "--out", "second.json"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let a = fs::read(dir.path().join("first.json")).unwrap();
    let b = fs::read(dir.path().join("second.json")).unwrap();
    assert_eq!(a, b);
}

#[test]
fn command_line_overrides_config() {
    let dir = workspace();
    fs::write(dir.path().join("cfg.json"), r#"{"seed": 4, "scales": [1, 0.5, 0]}"#).unwrap();
    let o = dgsp(dir.path(), &["probe", "--op", "op.json", "--input", "x.json", "--config", "cfg.json", "--scales", "1,0"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(stdout(&o).lines().count(), 3);
    assert!(stderr(&o).contains(r#""seed":4"#));

    fs::write(dir.path().join("typo.json"), r#"{"sed": 4}"#).unwrap();
    let o = dgsp(dir.path(), &["probe", "--op", "op.json", "--input", "x.json", "--config", "typo.json"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn worker_count_does_not_change_output() {
    let dir = workspace();
    let run = |workers: &str, out: &str| {
        let o = dgsp(
            dir.path(),
            &["push", "--op", "mix.json", "--input", "gauss.json", "--mode", "sample", "--seed", "3", "--budget", "128", "--workers", workers, "--out", out],
        );
        assert!(o.status.success(), "{}", stderr(&o));
        fs::read(dir.path().join(out)).unwrap()
    };
    assert_eq!(run("1", "one.json"), run("3", "three.json"));
}

#[test]
fn mnist_pipeline_writes_outputs() {
    let dir = workspace();
    let o = dgsp(dir.path(), &["pipeline-mnist", "--seed", "2", "--out", "m"]);
    assert!(o.status.success(), "{}", stderr(&o));
    for f in ["m.model.json", "m.samples.csv", "m.noisy.csv", "m.manifest.json"] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
}
