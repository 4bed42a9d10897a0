use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_probshield"))
}

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/fixtures").join(name)
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn certify_f1() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("cert.json");
    let r = run(&["certify", "--model", s(&fixture("f1.json")), "--epsilon", "1e-9", "--out", s(&out)]);
    assert_eq!(code(&r), 0, "{}", String::from_utf8_lossy(&r.stderr));
    let cert = probshield::SafetyCertificate::from_json(&fs::read_to_string(&out).unwrap()).unwrap();
    assert!(cert.beta[0] >= 2.0 / 7.0 && cert.beta[0] <= 2.0 / 7.0 + 1e-9);
    assert_eq!((cert.beta[1], cert.beta[2]), (0.0, 1.0));
}

#[test]
fn certification_failure_exits_4() {
    let r = run(&["certify", "--env", "bridge-v1", "--max-iterations", "3"]);
    assert_eq!(code(&r), 4);
}

#[test]
fn validation_errors_exit_3() {
    assert_eq!(code(&run(&["train", "--bogus"])), 3);
    assert_eq!(code(&run(&["train", "--env", "no-such-env"])), 3);
    assert_eq!(code(&run(&["certify"])), 3);
    assert_eq!(code(&run(&["train", "--env", "bridge-v1", "--p", "1.5"])), 3);
    assert_eq!(code(&run(&["certify", "--model", "/nonexistent/m.json"])), 3);
    assert_eq!(code(&run(&["--help"])), 0);
}

#[test]
fn infeasible_bound_exits_2() {
    let r = run(&["train", "--model", s(&fixture("f1.json")), "--shielded", "--p", "0.2"]);
    assert_eq!(code(&r), 2);
    let r = run(&["train", "--env", "colour-bomb-v1", "--shielded", "--p", "0.0001"]);
    assert_eq!(code(&r), 2);
}

#[test]
fn shielded_training_artifacts_are_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for out in [&a, &b] {
        let r = run(&[
            "train", "--env", "colour-bomb-v1", "--shielded", "--p", "0.05", "--seed", "0", "--total-timesteps", "5000",
            "--out-dir", s(out),
        ]);
        assert_eq!(code(&r), 0, "{}", String::from_utf8_lossy(&r.stderr));
    }
    let csv = fs::read(a.join("curves.csv")).unwrap();
    assert_eq!(csv, fs::read(b.join("curves.csv")).unwrap());
    assert!(csv.starts_with(b"episode,steps,return,discounted_return,violated,violation_rate\n"));
    assert_eq!(fs::read(a.join("policy.json")).unwrap(), fs::read(b.join("policy.json")).unwrap());
    let snaps: Vec<_> = fs::read_dir(a.join("snapshots")).unwrap().collect();
    assert_eq!(snaps.len(), 10);
    for e in snaps {
        let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(e.unwrap().path()).unwrap()).unwrap();
        assert_eq!(v["report"]["pass"], true);
    }
    assert!(a.join("certificate.json").exists());

    let r = run(&[
        "verify", "--env", "colour-bomb-v1", "--policy", s(&a.join("policy.json")), "--monte-carlo", "500", "--gamma", "0.99",
    ]);
    assert_eq!(code(&r), 0);
    let v: serde_json::Value = serde_json::from_slice(&r.stdout).unwrap();
    assert_eq!(v["report"]["pass"], true);
    assert!(v["lifted_value"].as_f64().unwrap() > 0.0);

    // the policy's action space must match the shield
    let r = run(&["verify", "--env", "colour-bomb-v1", "--policy", s(&a.join("policy.json")), "--slack-steps", "2"]);
    assert_eq!(code(&r), 3);
}

#[test]
fn config_file_and_seed_range() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    fs::write(
        &cfg,
        "env = \"colour-bomb-v1\"\nshielded = true\ntotal_timesteps = 2000\nseeds = \"0..2\"\ngamma = 0.95\n",
    )
    .unwrap();
    let out = dir.path().join("runs");
    let r = run(&["train", "--config", s(&cfg), "--total-timesteps", "1000", "--out-dir", s(&out)]);
    assert_eq!(code(&r), 0, "{}", String::from_utf8_lossy(&r.stderr));
    for seed in 0..2 {
        let summary: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(out.join(format!("seed-{seed}/summary.json"))).unwrap()).unwrap();
        assert_eq!(summary["steps"], 1000);
        assert_eq!(summary["seed"], seed);
    }
    fs::write(&cfg, "env = \"colour-bomb-v1\"\nbogus = 1\n").unwrap();
    assert_eq!(code(&run(&["train", "--config", s(&cfg)])), 3);
}

#[test]
fn unshielded_training_and_rcop() {
    let r = run(&["train", "--model", s(&fixture("f2.json")), "--p", "0.2", "--gamma", "0.5", "--total-timesteps", "2000"]);
    assert_eq!(code(&r), 0);
    let v: serde_json::Value = serde_json::from_slice(&r.stdout).unwrap();
    assert_eq!(v["shielded"], false);
    assert!(v["violations"].as_u64().unwrap() > 0);

    let r = run(&["rcop-bruteforce", "--model", s(&fixture("f2.json")), "--p", "0.2", "--gamma", "0.5", "--grid", "1000"]);
    assert_eq!(code(&r), 0);
    let v: serde_json::Value = serde_json::from_slice(&r.stdout).unwrap();
    assert!((v["value"].as_f64().unwrap() - 0.38).abs() < 1e-9);
}

#[test]
fn env_export_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("m.json");
    assert_eq!(code(&run(&["env", "export", "--name", "bridge-v1", "--out", s(&out)])), 0);
    let m = probshield::Mdp::from_json(&fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(m, probshield::envs::BuiltinEnv::BridgeV1.build().unwrap());
}
