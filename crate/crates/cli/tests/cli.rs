use std::path::Path;
use std::process::{Command, Output};

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_shadowcast"))
        .args(args)
        .current_dir(dir)
        .env_remove("SHADOWCAST_SEED")
        .output()
        .expect("run binary")
}

#[test]
fn exit_codes_follow_the_contract() {
    let dir = tempfile::tempdir().unwrap();
    let code = |args: &[&str]| run(dir.path(), args).status.code();
    assert_eq!(code(&["--help"]), Some(0));
    assert_eq!(code(&["constants"]), Some(0));
    assert_eq!(code(&["frobnicate"]), Some(1));
    assert_eq!(code(&["scan", "sideways"]), Some(1));
    assert_eq!(code(&["--set", "no_such_key=1", "constants"]), Some(1));
    assert_eq!(code(&["fit", "missing.csv"]), Some(3));
    assert_eq!(code(&["analyze", "a.pgm", "b.pgm"]), Some(3));
}

#[test]
fn seed_falls_back_to_the_environment() {
    let dir = tempfile::tempdir().unwrap();
    let sim = |out: &str, seed: Option<&str>| {
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_shadowcast"));
        cmd.args(["simulate", "--out", out])
            .current_dir(dir.path())
            .env_remove("SHADOWCAST_SEED");
        if let Some(s) = seed {
            cmd.env("SHADOWCAST_SEED", s);
        }
        assert!(cmd.output().unwrap().status.success());
        std::fs::read(dir.path().join(out).join("signal.pgm")).unwrap()
    };
    let flag = run(dir.path(), &["simulate", "--seed", "9", "--out", "flag"]);
    assert!(flag.status.success());
    let by_flag = std::fs::read(dir.path().join("flag/signal.pgm")).unwrap();
    assert_eq!(sim("env", Some("9")), by_flag);
    assert_ne!(sim("default", None), by_flag);
}

#[test]
fn constants_json_is_machine_readable() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(dir.path(), &["constants", "--json"]);
    assert!(out.status.success());
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let p_max = v["constants"]["p_max_pw"].as_f64().unwrap();
    assert!((p_max - 33.18542).abs() < 1e-4);
}
