use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn ncfilter(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ncfilter"))
        .args(args)
        .current_dir(cwd)
        .env("NCFILTER_THREADS", "1")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn last_value(csv: &str, column: &str) -> f64 {
    let mut lines = csv.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let idx = header.iter().position(|h| *h == column).unwrap();
    lines.last().unwrap().split(',').nth(idx).unwrap().parse().unwrap()
}

#[test]
fn run_preset_writes_csv_and_sidecar_to_default_dir() {
    let dir = tempfile::tempdir().unwrap();
    let o = ncfilter(&["run", "fig1-ground"], dir.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(dir.path().join("out/fig1-ground.csv")).unwrap();
    assert!(csv.starts_with("t,flux,P_exc,P_atleast_one_count\n"));
    assert!((last_value(&csv, "P_atleast_one_count") - 0.8).abs() < 1e-3);
    let meta: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("out/fig1-ground.meta.json")).unwrap()).unwrap();
    for key in ["config", "hash", "seed", "tool_version"] {
        assert!(meta.get(key).is_some(), "sidecar lacks {key}");
    }
    assert_eq!(meta["hash"].as_str().unwrap().len(), 64);
    assert!(meta["seed"].is_null());
}

#[test]
fn flags_override_grid_and_format() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("custom");
    let o = ncfilter(
        &["run", "fig2-ground", "--dt", "0.01", "--T", "4", "--format", "json", "--out", out.to_str().unwrap()],
        dir.path(),
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("fig2-ground.json")).unwrap()).unwrap();
    assert_eq!(v["columns"][0], "t");
    assert_eq!(v["rows"].as_array().unwrap().len(), 401);
    let meta: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("fig2-ground.meta.json")).unwrap()).unwrap();
    assert_eq!(meta["config"]["grid"]["dt"], 0.01);
    assert_eq!(meta["config"]["grid"]["T"], 4.0);
}

#[test]
fn config_file_with_comments_runs() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("decay.json");
    fs::write(
        &path,
        r#"{
          // excited atom, vacuum input
          "name": "decay",
          "system": { "preset": "two-level-decay", "kappa": 2.0 },
          "initial_state": "excited",
          "field": { "kind": "photon-combo", "gamma": { "g00": 1, "g11": 0 },
                     "envelope": { "shape": "gaussian", "omega": 1.46, "t_c": 3 } },
          "grid": { "dt": 0.01, "T": 3 }
        }"#,
    )
    .unwrap();
    let o = ncfilter(&["run", path.to_str().unwrap()], dir.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(dir.path().join("out/decay.csv")).unwrap();
    assert!(csv.starts_with("t,flux,P_exc\n"));
    // P_exc(3) = e^{-2·3}
    assert!((last_value(&csv, "P_exc") - (-6.0f64).exp()).abs() < 1e-9);
}

#[test]
fn trajectories_add_ensemble_columns() {
    let dir = tempfile::tempdir().unwrap();
    let o = ncfilter(&["trajectories", "fig1-ground", "--M", "40", "--seed", "5", "--dt", "0.01", "--T", "8"], dir.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(dir.path().join("out/fig1-ground-trajectories.csv")).unwrap();
    let header = csv.lines().next().unwrap();
    assert_eq!(
        header,
        "t,flux,P_exc,P_atleast_one_count,P_exc_mean,P_exc_stderr,P_atleast_one_count_mean,\
         P_atleast_one_count_stderr,count_rate_mean,count_rate_stderr"
    );
    let meta: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("out/fig1-ground-trajectories.meta.json")).unwrap())
            .unwrap();
    assert_eq!(meta["seed"], 5);
    assert_eq!(meta["config"]["ensemble"]["M"], 40);
    assert!(stdout(&o).contains("40 trajectories"));
}

#[test]
fn same_seed_gives_identical_files() {
    let dir = tempfile::tempdir().unwrap();
    let args = ["trajectories", "fig2-ground", "--M", "8", "--seed", "11", "--dt", "0.01", "--T", "6", "--out"];
    let run = |sub: &str| {
        let mut a = args.to_vec();
        a.push(sub);
        assert!(ncfilter(&a, dir.path()).status.success());
        fs::read(dir.path().join(sub).join("fig2-ground-trajectories.csv")).unwrap()
    };
    assert_eq!(run("a"), run("b"));
}

#[test]
fn verify_passes_presets_and_fails_a_corrupted_run() {
    let dir = tempfile::tempdir().unwrap();
    let ok = ncfilter(&["verify", "fig1-ground", "--T", "8"], dir.path());
    assert!(ok.status.success(), "{}", stdout(&ok));
    assert!(stdout(&ok).contains("verify: ok"));
    let bad = ncfilter(&["verify", "fig1-ground", "--T", "8", "--corrupt", "1.01"], dir.path());
    assert_eq!(bad.status.code(), Some(1));
    assert!(stdout(&bad).contains("FAIL"));
}

#[test]
fn bad_input_exits_nonzero_with_a_message() {
    let dir = tempfile::tempdir().unwrap();
    let o = ncfilter(&["run", "no-such-preset"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("fig1-ground"));

    let path = dir.path().join("typo.json");
    fs::write(
        &path,
        r#"{ "system": { "preset": "two-level-decay", "kappa": 1, "kapa": 1 },
             "field": { "kind": "photon-combo", "gamma": { "g00": 0.5, "g11": 0.5, "g01": [0.9, 0] },
                        "envelope": { "shape": "gaussian", "omega": 1, "t_c": 3 } } }"#,
    )
    .unwrap();
    let o = ncfilter(&["run", path.to_str().unwrap()], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("system.kapa"));

    let o = ncfilter(&["run", "fig1-ground", "--dt=-1"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("grid.dt"));
}

#[test]
fn unwritable_output_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let blocker = dir.path().join("file");
    fs::write(&blocker, "x").unwrap();
    let o = ncfilter(&["run", "fig1-ground", "--T", "2", "--out", blocker.to_str().unwrap()], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("cannot write"));
}

#[test]
fn show_prints_a_config_that_reparses() {
    let dir = tempfile::tempdir().unwrap();
    let o = ncfilter(&["show", "fig2-excited"], dir.path());
    assert!(o.status.success());
    let path = dir.path().join("shown.json");
    fs::write(&path, stdout(&o)).unwrap();
    let again = ncfilter(&["show", path.to_str().unwrap()], dir.path());
    assert_eq!(stdout(&again), stdout(&o));
    let list = ncfilter(&["presets"], dir.path());
    assert_eq!(stdout(&list).lines().count(), 5);
}
