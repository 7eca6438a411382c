use std::path::Path;
use std::process::Command;

use proxpair::chanmodel::{distance_at, EnvironmentPreset, Trajectory};
use proxpair::cli::{run, EXIT_ERROR, EXIT_OK, EXIT_REJECTED};

fn invoke(args: &[&str]) -> (i32, String, String) {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let argv = std::iter::once("proxpair").chain(args.iter().copied());
    let code = run(argv, &mut out, &mut err);
    (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
}

fn json(text: &str) -> serde_json::Value {
    serde_json::from_str(text).unwrap()
}

fn write_trace(path: &Path, rows: impl Iterator<Item = (f64, f64)>) {
    let mut s = String::from("time_s,pathloss_db\n");
    for (t, y) in rows {
        s.push_str(&format!("{t},{y}\n"));
    }
    std::fs::write(path, s).unwrap();
}

#[test]
fn legit_pair_exits_zero_and_prints_a_transcript() {
    let (code, out, _) = invoke(&["pair", "--seed", "42"]);
    assert_eq!(code, EXIT_OK);
    let v = json(&out);
    assert_eq!(v["accepted"], true);
    assert_eq!(v["transcript"]["probes"].as_array().unwrap().len(), 500);
}

#[test]
fn negative_lag_exits_two_naming_the_key() {
    let (code, _, err) = invoke(&["pair", "--set", "detector.lag=-5"]);
    assert_eq!(code, EXIT_ERROR);
    assert!(err.contains("detector.lag"), "{err}");
}

#[test]
fn malformed_config_file_names_the_key() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "[gates]\nmin_depth = 3.0\n").unwrap();
    let (code, _, err) = invoke(&["pair", "--config", cfg.to_str().unwrap()]);
    assert_eq!(code, EXIT_ERROR);
    assert!(err.contains("gates.min_depth"), "{err}");
}

#[test]
fn supreme_attacker_is_usually_rejected() {
    let rejected = (0..10)
        .filter(|s| {
            let seed = s.to_string();
            invoke(&["pair", "--seed", &seed, "--set", "attacker.kind=supreme"]).0 == EXIT_REJECTED
        })
        .count();
    assert!(rejected >= 8, "{rejected}/10");
}

#[test]
fn config_file_then_overrides_last_one_wins() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("s.toml");
    std::fs::write(&cfg, "environment = \"lobby\"\nseed = 3\n[trajectory]\nkind = \"slow-swipe\"\n").unwrap();
    let out = dir.path().join("out");
    let (code, _, err) = invoke(&[
        "montecarlo",
        "--config",
        cfg.to_str().unwrap(),
        "--runs",
        "5",
        "--set",
        "environment=dining",
        "--set",
        "environment=office",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code, EXIT_OK, "{err}");
    let csv = std::fs::read_to_string(out.join("runs.csv")).unwrap();
    assert_eq!(csv.lines().count(), 6);
    assert_eq!(json(&std::fs::read_to_string(out.join("summary.json")).unwrap())["runs"], 5);
}

#[test]
fn montecarlo_outputs_are_byte_identical_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for d in [&a, &b] {
        let code = invoke(&["montecarlo", "--runs", "20", "--seed", "11", "--out", d.to_str().unwrap()]).0;
        assert_eq!(code, EXIT_OK);
    }
    for f in ["runs.csv", "summary.json"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap());
    }
}

#[test]
fn analyze_finds_a_synthetic_valley() {
    let dir = tempfile::tempdir().unwrap();
    let trace = dir.path().join("valley.csv");
    let p = EnvironmentPreset::Office.channel_params();
    let traj = Trajectory::symmetric();
    write_trace(
        &trace,
        (0..500).map(|i| {
            let t = i as f64 / 500.0;
            (t, p.mean_pathloss(distance_at(&traj, t).unwrap()).unwrap())
        }),
    );
    let (code, out, err) = invoke(&["analyze", trace.to_str().unwrap()]);
    assert_eq!(code, EXIT_OK, "{err}");
    let v = json(&out);
    assert_eq!(v["valley"]["found"], true);
    assert_eq!(v["geometry_pass"], true);
    let depth = v["valley"]["depth_db"].as_f64().unwrap();
    assert!((12.0..16.0).contains(&depth), "{depth}");
}

#[test]
fn analyze_constant_trace_finds_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let trace = dir.path().join("flat.csv");
    write_trace(&trace, (0..300).map(|i| (i as f64 * 0.002, 55.0)));
    let (code, out, _) = invoke(&["analyze", trace.to_str().unwrap()]);
    assert_eq!(code, EXIT_OK);
    assert_eq!(json(&out)["valley"]["found"], false);
}

#[test]
fn analyze_rejects_empty_and_malformed_files() {
    let dir = tempfile::tempdir().unwrap();
    let empty = dir.path().join("empty.csv");
    std::fs::write(&empty, "").unwrap();
    assert_eq!(invoke(&["analyze", empty.to_str().unwrap()]).0, EXIT_ERROR);

    let bad = dir.path().join("bad.csv");
    std::fs::write(&bad, "time_s,pathloss_db\n0.0,50\n0.002,fifty\n").unwrap();
    let (code, _, err) = invoke(&["analyze", bad.to_str().unwrap()]);
    assert_eq!(code, EXIT_ERROR);
    assert!(err.contains("row 2"), "{err}");
}

#[test]
fn calibrate_office_lands_near_the_default_threshold() {
    let (code, out, err) = invoke(&["calibrate", "--runs", "400", "--seed", "1"]);
    assert_eq!(code, EXIT_OK, "{err}");
    let t = json(&out)["threshold_db"].as_f64().unwrap();
    assert!((1.0..=1.6).contains(&t), "{t}");
}

#[test]
fn calibrate_reports_infeasible_targets() {
    let (code, out, _) = invoke(&[
        "calibrate",
        "--runs",
        "200",
        "--target-fpr",
        "0.0",
        "--target-tpr",
        "1.0",
        "--set",
        "environment=lobby",
        "--set",
        "attacker.kind=supreme",
    ]);
    assert_eq!(code, EXIT_REJECTED);
    let v = json(&out);
    assert_eq!(v["feasible"], false);
    assert!(v["threshold_db"].is_number());
}

#[test]
fn roc_and_presets_emit_json() {
    let (code, out, _) = invoke(&["roc", "--runs", "50"]);
    assert_eq!(code, EXIT_OK);
    let v = json(&out);
    assert_eq!(v["points"].as_array().unwrap().len(), 200);
    let (code, out, _) = invoke(&["presets"]);
    assert_eq!(code, EXIT_OK);
    assert_eq!(json(&out)["environments"].as_array().unwrap().len(), 3);
}

#[test]
fn unknown_subcommand_exits_two() {
    assert_eq!(invoke(&["frobnicate"]).0, EXIT_ERROR);
}

#[test]
fn binary_follows_the_exit_code_contract() {
    let bin = env!("CARGO_BIN_EXE_proxpair");
    let ok = Command::new(bin).args(["pair", "--seed", "42"]).output().unwrap();
    assert_eq!(ok.status.code(), Some(0));
    let bad = Command::new(bin).args(["pair", "--set", "detector.lag=-1"]).output().unwrap();
    assert_eq!(bad.status.code(), Some(2));
    assert!(bad.stdout.is_empty());
}
