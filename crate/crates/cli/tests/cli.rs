use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const MODEL: &str = r#"{"layers":[{"in":8,"out":8},{"in":8,"out":1}]}"#;

fn acan(dir: &Path, args: &[&str]) -> Output {
    let model = dir.join("model.json");
    if !model.exists() {
        fs::write(&model, MODEL).unwrap();
    }
    Command::new(env!("CARGO_BIN_EXE_acan"))
        .current_dir(dir)
        .env_remove("ACAN_SEED")
        .args(args)
        .output()
        .unwrap()
}

const TINY: [&str; 8] = [
    "--model",
    "model.json",
    "--max-task-size",
    "4",
    "--samples",
    "3",
    "--epochs",
    "1",
];

fn tiny(cmd: &[&str]) -> Vec<String> {
    cmd.iter()
        .chain(TINY.iter())
        .map(|s| s.to_string())
        .collect()
}

fn run_ok(dir: &Path, args: &[String]) -> String {
    let refs: Vec<&str> = args.iter().map(String::as_str).collect();
    let out = acan(dir, &refs);
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

#[test]
fn run_writes_outputs_and_verifies_against_oracle() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let stdout = run_ok(d, &tiny(&["run", "exp2", "--out", "run"]));
    assert!(stdout.contains("samples committed: 3"), "{stdout}");
    for f in [
        "config.json",
        "loss.csv",
        "perf.csv",
        "params.json",
        "summary.json",
    ] {
        assert!(d.join("run").join(f).exists(), "{f} missing");
    }
    let loss = fs::read_to_string(d.join("run/loss.csv")).unwrap();
    assert_eq!(loss.lines().next(), Some("epoch,sample,sim_time,loss"));
    assert_eq!(loss.lines().count(), 4);
    let perf = fs::read_to_string(d.join("run/perf.csv")).unwrap();
    assert_eq!(
        perf.lines().next(),
        Some("sim_time,timeout,total_power,pouches,reissues,crashes")
    );

    run_ok(
        d,
        &tiny(&["oracle", "--experiment", "exp2", "--out", "ref"]),
    );
    let out = acan(d, &["verify", "run", "ref"]);
    assert_eq!(code(&out), 0);
    assert!(String::from_utf8_lossy(&out.stdout).starts_with("exact"));

    let mut other = tiny(&["oracle", "--experiment", "exp2", "--out", "other"]);
    other.extend(["--seed".into(), "99".into()]);
    run_ok(d, &other);
    assert_eq!(
        code(&acan(
            d,
            &["verify", "run/params.json", "other/params.json"]
        )),
        1
    );
}

#[test]
fn same_seed_gives_identical_csvs() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    run_ok(d, &tiny(&["run", "exp3", "--out", "a"]));
    run_ok(d, &tiny(&["run", "exp3", "--out", "b"]));
    for f in ["loss.csv", "perf.csv"] {
        assert_eq!(
            fs::read(d.join("a").join(f)).unwrap(),
            fs::read(d.join("b").join(f)).unwrap()
        );
    }
}

#[test]
fn seed_from_environment_and_flag_precedence() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("model.json"), MODEL).unwrap();
    let seed_of = |out: &str| -> u64 {
        let cfg: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(d.join(out).join("config.json")).unwrap())
                .unwrap();
        cfg["scenario"]["seed"].as_u64().unwrap()
    };
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_acan"));
    cmd.current_dir(d)
        .env("ACAN_SEED", "17")
        .args(tiny(&["run", "exp1", "--out", "env"]));
    assert!(cmd.status().unwrap().success());
    assert_eq!(seed_of("env"), 17);

    let mut cmd = Command::new(env!("CARGO_BIN_EXE_acan"));
    cmd.current_dir(d)
        .env("ACAN_SEED", "17")
        .args(tiny(&["run", "exp1", "--out", "flag", "--seed", "3"]));
    assert!(cmd.status().unwrap().success());
    assert_eq!(seed_of("flag"), 3);

    let mut cmd = Command::new(env!("CARGO_BIN_EXE_acan"));
    cmd.current_dir(d)
        .env("ACAN_SEED", "x")
        .args(tiny(&["run", "exp1"]));
    assert_eq!(cmd.output().unwrap().status.code(), Some(2));
}

#[test]
fn config_file_overlays_preset() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(
        d.join("cfg.json"),
        r#"{"eta": 0.01, "scenario": {"handler_count": 2}}"#,
    )
    .unwrap();
    let mut args = tiny(&["run", "exp1", "--out", "o"]);
    args.extend(["--config".into(), "cfg.json".into()]);
    run_ok(d, &args);
    let cfg: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(d.join("o/config.json")).unwrap()).unwrap();
    assert_eq!(cfg["scenario"]["handler_count"], 2);
    assert_eq!(cfg["eta"].as_f64().unwrap() as f32, 0.01);
    assert_eq!(cfg["samples"], 3);
}

#[test]
fn config_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let mut args = tiny(&["run", "exp1"]);
    args.extend(["--pouch-size".into(), "0".into()]);
    let refs: Vec<&str> = args.iter().map(String::as_str).collect();
    assert_eq!(code(&acan(d, &refs)), 2);

    fs::write(
        d.join("bad.json"),
        r#"{"layers":[{"in":8,"out":4},{"in":8,"out":1}]}"#,
    )
    .unwrap();
    let out = acan(d, &["run", "exp1", "--model", "bad.json"]);
    assert_eq!(code(&out), 2, "{}", String::from_utf8_lossy(&out.stderr));

    fs::write(
        d.join("small.json"),
        r#"{"layers":[{"in":8,"out":4},{"in":4,"out":1}]}"#,
    )
    .unwrap();
    run_ok(d, &tiny(&["oracle", "--out", "a"]));
    let mut small = tiny(&["oracle", "--out", "b"]);
    small[4] = "small.json".into();
    run_ok(d, &small);
    assert_eq!(code(&acan(d, &["verify", "a", "b"])), 2);
}

#[test]
fn time_limit_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let mut args = tiny(&["run", "exp1"]);
    args.extend(["--max-sim-time".into(), "0.001".into()]);
    let refs: Vec<&str> = args.iter().map(String::as_str).collect();
    let out = acan(dir.path(), &refs);
    assert_eq!(code(&out), 3, "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn realtime_run_over_tcp() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    run_ok(
        d,
        &tiny(&[
            "run",
            "exp1",
            "--realtime",
            "--transport",
            "tcp",
            "--time-scale",
            "0.05",
            "--out",
            "rt",
        ]),
    );
    run_ok(d, &tiny(&["oracle", "--out", "ref"]));
    assert_eq!(code(&acan(d, &["verify", "rt", "ref"])), 0);
}

#[test]
fn full_exp3_survives_crashes() {
    let dir = tempfile::tempdir().unwrap();
    let out = acan(dir.path(), &["run", "exp3", "--seed", "42"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("out/summary.json")).unwrap())
            .unwrap();
    assert!(summary["manager_crashes"].as_u64().unwrap() > 0);
    assert!(summary["handler_crashes"].as_u64().unwrap() > 0);
}
