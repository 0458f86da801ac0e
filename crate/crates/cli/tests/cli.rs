use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn dcsim(args: &[&str], out_dir: Option<&Path>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_dcsim"));
    cmd.args(args).env_remove("DCSIM_OUT_DIR");
    if let Some(d) = out_dir {
        cmd.env("DCSIM_OUT_DIR", d);
    }
    cmd.output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn lists_builtins_and_suites() {
    let o = dcsim(&["list-scenarios"], None);
    assert!(o.status.success());
    let text = stdout(&o);
    for name in ["fourflow", "scale-32", "delay-sweep-50ms", "incast-mice", "delay-sweep", "scale"] {
        assert!(text.lines().any(|l| l.starts_with(name)), "{name} missing:\n{text}");
    }
}

#[test]
fn validates_builtin_and_rejects_bad_file() {
    let o = dcsim(&["validate", "--scenario", "fourflow"], None);
    assert!(o.status.success(), "{}", stderr(&o));

    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    fs::write(
        &bad,
        "[scenario]\nname = \"bad\"\nduration_s = 0.0\n\n[[node]]\nname = \"h0\"\nkind = \"host\"\n",
    )
    .unwrap();
    let o = dcsim(&["validate", "--scenario", bad.to_str().unwrap()], None);
    assert!(!o.status.success());
    let err = stderr(&o);
    assert!(err.contains("scenario.duration_s"), "{err}");
    assert!(err.contains("node 'h0'"), "{err}");
}

#[test]
fn unknown_scenario_fails() {
    let o = dcsim(&["run", "--scenario", "no-such-scenario"], None);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("no-such-scenario"));
}

#[test]
fn run_writes_results_to_env_dir() {
    let dir = tempfile::tempdir().unwrap();
    let o = dcsim(
        &["run", "--scenario", "fourflow", "--variant", "hygenicc", "--duration-s", "0.5", "--seed", "9"],
        Some(dir.path()),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    for f in ["goodput.csv", "periods.csv", "fct.csv", "queues.csv", "summary.json"] {
        assert!(dir.path().join(f).is_file(), "{f}");
    }
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["seed"], 9);
    assert_eq!(summary["variant"], "hygenicc");
    assert_eq!(summary["duration_s"], 0.5);
}

#[test]
fn all_variants_nest_by_scenario_and_variant() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let o = dcsim(
        &[
            "run",
            "--scenario",
            "fourflow",
            "--variant",
            "all",
            "--duration-s",
            "0.2",
            "--out-dir",
            out.to_str().unwrap(),
        ],
        None,
    );
    assert!(o.status.success(), "{}", stderr(&o));
    for v in ["baseline-noecn", "baseline-ecn", "static-limit", "hygenicc", "sdngcc"] {
        assert!(out.join("fourflow").join(v).join("periods.csv").is_file(), "{v}");
    }
}

#[test]
fn bad_duration_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let o = dcsim(&["run", "--scenario", "fourflow", "--duration-s=0"], Some(dir.path()));
    assert!(!o.status.success());
    assert!(stderr(&o).contains("--duration-s"), "{}", stderr(&o));
}
