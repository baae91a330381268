use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

const BIN: &str = env!("CARGO_BIN_EXE_intops");

fn scenarios() -> &'static Path {
    Path::new(concat!(env!("CARGO_MANIFEST_DIR"), "/scenarios"))
}

fn intops(args: &[&str], scenario: &Path, out: &Path) -> Output {
    Command::new(BIN)
        .args(&args[..1])
        .arg("--scenario")
        .arg(scenario)
        .arg("--out")
        .arg(out)
        .args(&args[1..])
        .output()
        .unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn parse_errors_exit_one_with_the_line() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    fs::write(
        &bad,
        "name = \"x\"\noperator = \"fredholm\"\n\n[domain]\nkind = \"real_line\"\n\n[kernel]\nname = \"no_such_kernel\"\n",
    )
    .unwrap();
    let o = intops(&["apply"], &bad, &dir.path().join("out"));
    assert_eq!(o.status.code(), Some(1));
    assert!(
        stderr(&o).contains("bad.toml:8: parse error"),
        "{}",
        stderr(&o)
    );

    let empty = dir.path().join("empty.toml");
    fs::write(&empty, "").unwrap();
    let o = intops(&["apply"], &empty, &dir.path().join("out"));
    assert_eq!(o.status.code(), Some(1));
    assert!(
        stderr(&o).contains("empty.toml:1: parse error"),
        "{}",
        stderr(&o)
    );
}

#[test]
fn random_families_need_a_seed() {
    let dir = tempfile::tempdir().unwrap();
    let text = fs::read_to_string(scenarios().join("certify.toml")).unwrap();
    let unseeded = dir.path().join("unseeded.toml");
    fs::write(&unseeded, text.replace("seed = 2024\n", "")).unwrap();
    let o = intops(&["certify"], &unseeded, &dir.path().join("a"));
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("needs a seed"), "{}", stderr(&o));
    // a seed on the command line is enough
    let o = intops(
        &["certify", "--seed", "9"],
        &unseeded,
        &dir.path().join("b"),
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let m: Value =
        serde_json::from_slice(&fs::read(dir.path().join("b/manifest.json")).unwrap()).unwrap();
    assert_eq!(m["seed"], 9);
    assert_eq!(m["generator"], "ChaCha8Rng::seed_from_u64");
}

#[test]
fn seeds_change_results_and_manifests_record_them() {
    let dir = tempfile::tempdir().unwrap();
    let s = scenarios().join("volterra_approx.toml");
    let a = intops(&["volterra-approx"], &s, &dir.path().join("a"));
    let b = intops(
        &["volterra-approx", "--seed", "8"],
        &s,
        &dir.path().join("b"),
    );
    assert_eq!(a.status.code(), Some(0));
    assert_eq!(b.status.code(), Some(0));
    let csv = |d: &str| fs::read(dir.path().join(d).join("volterra_approx.csv")).unwrap();
    assert_ne!(csv("a"), csv("b"));
    let m: Value =
        serde_json::from_slice(&fs::read(dir.path().join("a/manifest.json")).unwrap()).unwrap();
    assert_eq!(m["seed"], 7);
    assert_eq!(m["subcommand"], "volterra-approx");
    let outputs: Vec<&str> = m["outputs"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_str().unwrap())
        .collect();
    assert_eq!(
        outputs,
        [
            "scenario.toml",
            "volterra_approx.csv",
            "volterra_approx.json"
        ]
    );
    // the copied scenario reruns to the same bytes
    let again = intops(
        &["volterra-approx"],
        &dir.path().join("a/scenario.toml"),
        &dir.path().join("c"),
    );
    assert_eq!(again.status.code(), Some(0));
    assert_eq!(csv("a"), csv("c"));
}

#[test]
fn tabulated_kernels_are_copied_into_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let mut table = String::from("x,y,k\n");
    for i in 0..=20 {
        for j in 0..=20 {
            let (x, y) = (i as f64 * 0.5, j as f64 * 0.5);
            table.push_str(&format!("{x},{y},{}\n", (-x - y).exp()));
        }
    }
    fs::write(dir.path().join("k.csv"), table).unwrap();
    let s = dir.path().join("tab.toml");
    fs::write(
        &s,
        "name = \"tab\"\noperator = \"fredholm\"\n\n[domain]\nkind = \"half_line\"\n\n\
         [kernel]\nname = \"user_tabulated\"\nfile = \"k.csv\"\n\n\
         [grid]\nlower = 0.0\nupper = 10.0\npoints = 11\n\n\
         [quadrature]\ntruncation = 10.0\npanels = 20\n",
    )
    .unwrap();
    let o = intops(&["apply"], &s, &dir.path().join("run"));
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert_eq!(
        fs::read(dir.path().join("run/k.csv")).unwrap(),
        fs::read(dir.path().join("k.csv")).unwrap()
    );
    let m: Value =
        serde_json::from_slice(&fs::read(dir.path().join("run/manifest.json")).unwrap()).unwrap();
    assert_eq!(m["referenced_files"]["k.csv"].as_str().unwrap().len(), 64);
}

#[test]
fn uncertifiable_runs_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let o = intops(
        &["check-kernel"],
        &scenarios().join("k2_sin_decay.toml"),
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(2));
    let m: Value =
        serde_json::from_slice(&fs::read(dir.path().join("manifest.json")).unwrap()).unwrap();
    assert!(m["outcome"]["not_certified"].is_string());
}
