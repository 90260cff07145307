use std::path::{Path, PathBuf};
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_prbt"))
}

fn model(name: &str) -> PathBuf {
    [env!("CARGO_MANIFEST_DIR"), "..", "..", "models", name].iter().collect()
}

fn run(args: &[&str]) -> (i32, String, String) {
    let out = bin().args(args).output().unwrap();
    (
        out.status.code().unwrap_or(-1),
        String::from_utf8_lossy(&out.stdout).into_owned(),
        String::from_utf8_lossy(&out.stderr).into_owned(),
    )
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

const TRANSLATION: &str = r#"{
  "name": "translation",
  "state_vars": ["x1", "x2"],
  "modes": [{"id": "m", "dynamics": ["1", "0"], "invariant": [[-10, 10], [-10, 10]]}],
  "init": {"mode": "m", "box": [[0, 0.1], [0, 0.1]]},
  "unsafe": [UNSAFE]
}"#;

fn translation(dir: &Path, unsafe_box: &str) -> PathBuf {
    let path = dir.join("translation.json");
    std::fs::write(&path, TRANSLATION.replace("UNSAFE", unsafe_box)).unwrap();
    path
}

#[test]
fn missing_model_is_a_usage_error() {
    let (code, _, err) = run(&["reach", "--model", "/nonexistent/model.json"]);
    assert_eq!(code, 2);
    assert!(err.contains("cannot read"));
}

#[test]
fn bad_flags_are_usage_errors() {
    let m = model("lotka_volterra.json");
    assert_eq!(run(&["reach", "--model", p(&m), "--degrees", "3,2"]).0, 2);
    assert_eq!(run(&["reach", "--model", p(&m), "--epsilon", "1,1"]).0, 2);
    assert_eq!(run(&["reach", "--model", p(&m), "--dims", "1,3"]).0, 2);
    assert_eq!(run(&["frobnicate"]).0, 2);
}

#[test]
fn certify_example_one() {
    let dir = tempfile::tempdir().unwrap();
    let mps = dir.path().join("ex1.mps");
    let (code, out, _) = run(&["certify", "--model", p(&model("example1.json")), "--degrees", "1", "--lp-dump", p(&mps)]);
    assert_eq!(code, 0, "{out}");
    assert!(out.contains("PASS"));
    assert!(out.contains("B = "));
    let text = std::fs::read_to_string(&mps).unwrap();
    assert!(text.starts_with("NAME") && text.trim_end().ends_with("ENDATA"));
}

#[test]
fn certify_without_unsafe_box_fails_cleanly() {
    let (code, _, err) = run(&["certify", "--model", p(&model("lotka_volterra.json"))]);
    assert_eq!(code, 2);
    assert!(err.contains("unsafe"));
}

#[test]
fn simulate_writes_csv() {
    let (code, out, _) = run(&["simulate", "--model", p(&model("van_der_pol.json")), "--steps", "10", "--h", "0.01"]);
    assert_eq!(code, 0);
    let lines: Vec<&str> = out.lines().collect();
    assert_eq!(lines[0], "t,x,y");
    assert_eq!(lines.len(), 12);
    let (code, out, _) = run(&["simulate", "--model", p(&model("tdo.json")), "--steps", "3", "--h", "1e-12"]);
    assert_eq!(code, 0);
    assert!(out.lines().next().unwrap().ends_with(",mode"));
    assert!(out.lines().nth(1).unwrap().ends_with(",l3"));
}

#[test]
fn reach_dump_check_plot_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let m = translation(dir.path(), "");
    let (a, b) = (dir.path().join("a.json"), dir.path().join("b.json"));
    let svg = dir.path().join("t.svg");
    for out in [&a, &b] {
        let (code, stdout, err) =
            run(&["reach", "--model", p(&m), "--tubes", "3", "--dist0", "1", "--out", p(out), "--mc", "20"]);
        assert_eq!(code, 0, "{stdout}{err}");
        assert!(stdout.contains("COUNT-REACHED"));
    }
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    let (code, out, _) = run(&["check", "--model", p(&m), p(&a), "--mc", "20"]);
    assert_eq!(code, 0, "{out}");
    assert!(out.contains("0 failed"));
    assert_eq!(run(&["plot", "--model", p(&m), p(&a), "--svg", p(&svg)]).0, 0);
    let text = std::fs::read_to_string(&svg).unwrap();
    assert!(text.contains(r#"id="tube2""#));
    let other = model("lotka_volterra.json");
    assert_eq!(run(&["check", "--model", p(&other), p(&a)]).0, 2);
}

#[test]
fn unsafe_box_on_the_flow_is_unknown() {
    let dir = tempfile::tempdir().unwrap();
    let m = translation(dir.path(), r#"{"mode": "m", "box": [[0.5, 0.6], [0.04, 0.06]]}"#);
    let (code, out, _) = run(&["reach", "--model", p(&m), "--tubes", "2", "--dist0", "1"]);
    assert_eq!(code, 4, "{out}");
    assert!(out.contains("UNKNOWN"));
    let m = translation(dir.path(), r#"{"mode": "m", "box": [[0.2, 0.3], [5, 6]]}"#);
    let (code, out, _) = run(&["reach", "--model", p(&m), "--tubes", "2", "--dist0", "1"]);
    assert_eq!(code, 0, "{out}");
    assert!(out.contains("SAFE"));
}

#[test]
fn pipeline_failure_exits_three() {
    let (code, out, err) = run(&["reach", "--model", p(&model("tdo.json")), "--tubes", "2"]);
    assert_eq!(code, 3, "{out}");
    assert!(out.contains("termination: THETA-FLOOR"));
    assert!(err.contains("stopped after 0 tubes"));
}

#[test]
fn guard_crossings_are_chained() {
    let dir = tempfile::tempdir().unwrap();
    let m = dir.path().join("turn.json");
    std::fs::write(
        &m,
        r#"{"name": "turn", "state_vars": ["x1", "x2"],
            "modes": [
              {"id": "a", "dynamics": ["1", "0"], "invariant": [[-1, 1.2], [-2, 2]]},
              {"id": "b", "dynamics": ["0", "1"], "invariant": [[0, 2], [-2, 2]]},
              {"id": "c", "dynamics": ["-1", "0"], "invariant": [[-2, 2], [0.8, 4]]}
            ],
            "transitions": [
              {"from": "a", "to": "b", "guard": {"var": "x1", "op": ">=", "bound": 1}, "reset": [[1, 0], [0, 1]]},
              {"from": "b", "to": "c", "guard": {"var": "x2", "op": ">=", "bound": 1}, "reset": [[1, 0], [0, 1]]}
            ],
            "init": {"mode": "a", "box": [[0, 0.1], [0, 0.1]]}}"#,
    )
    .unwrap();
    let dump = dir.path().join("turn_dump.json");
    let (code, out, _) = run(&["reach", "--model", p(&m), "--tubes", "6", "--out", p(&dump), "--mc", "100"]);
    assert_eq!(code, 0, "{out}");
    assert!(out.contains("event a -> b"));
    assert!(out.contains("event b -> c"));
    assert!(out.contains("mode c exit x1 low"));
    assert!(out.contains("0 violations"));
    let (code, out, _) = run(&["check", "--model", p(&m), p(&dump), "--seed", "3"]);
    assert_eq!(code, 0, "{out}");
}
