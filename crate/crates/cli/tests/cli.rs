use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn traceprint(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_traceprint")).args(args).current_dir(dir).output().unwrap()
}

fn synth(dir: &Path) {
    let out = traceprint(dir, &["synth", "--out", "s", "--synth-traces", "8", "--synth-points", "80", "--seed", "1"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

fn read(dir: &Path, rel: &str) -> String {
    fs::read_to_string(dir.join(rel)).unwrap()
}

fn column(csv: &str, name: &str) -> Vec<String> {
    let mut lines = csv.lines();
    let idx = lines.next().unwrap().split(',').position(|h| h == name).unwrap();
    lines.map(|l| l.split(',').nth(idx).unwrap().to_string()).collect()
}

#[test]
fn uniqueness_example_has_one_monotone_row_per_n() {
    let tmp = tempfile::tempdir().unwrap();
    synth(tmp.path());
    let out = traceprint(
        tmp.path(),
        &["uniqueness", "--dataset", "s/traces.csv", "--n-max", "5", "--mode", "spatiotemporal", "--seed", "7", "--reps", "100", "--out", "u"],
    );
    assert!(out.status.success());
    let csv = read(tmp.path(), "u/uniqueness.csv");
    assert!(csv.starts_with("dataset,mode,kind,n,resolution_digits,users,samples,mean,ci_low,ci_high,seed\n"));
    let means: Vec<f64> = column(&csv, "mean").iter().map(|m| m.parse().unwrap()).collect();
    assert_eq!(means.len(), 5);
    assert!(means.windows(2).all(|w| w[0] <= w[1]));
    assert!(column(&csv, "seed").iter().all(|s| s == "7"));

    let again = traceprint(
        tmp.path(),
        &["uniqueness", "--dataset", "s/traces.csv", "--n-max", "5", "--mode", "spatiotemporal", "--seed", "7", "--reps", "100", "--out", "u2"],
    );
    assert!(again.status.success());
    assert_eq!(csv, read(tmp.path(), "u2/uniqueness.csv"));
    assert_eq!(read(tmp.path(), "u/kanonymity.csv"), read(tmp.path(), "u2/kanonymity.csv"));
    let manifest: serde_json::Value = serde_json::from_str(&read(tmp.path(), "u/manifest.json")).unwrap();
    assert_eq!(manifest["status"], "complete");
    assert_eq!(manifest["seed"], 7);
    assert_eq!(manifest["config_hash"].as_str().unwrap().len(), 64);
}

#[test]
fn missing_input_exits_3_without_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let out = traceprint(tmp.path(), &["uniqueness", "--dataset", "absent.csv", "--out", "o"]);
    assert_eq!(out.status.code(), Some(3));
    let err: serde_json::Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["error"], "input");
    assert!(!tmp.path().join("o").exists());
}

#[test]
fn malformed_input_exits_3() {
    let tmp = tempfile::tempdir().unwrap();
    fs::write(tmp.path().join("bad.csv"), "pseudo_id,t_unix_s,lat_e6,lon_e6\nu,1,not-a-number,5\n").unwrap();
    let out = traceprint(tmp.path(), &["ingest", "--dataset", "bad.csv", "--out", "o"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(!tmp.path().join("o").exists());
}

#[test]
fn config_errors_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    synth(tmp.path());
    for args in [
        vec!["uniqueness", "--dataset", "s/traces.csv", "--reps", "0"],
        vec!["uniqueness", "--dataset", "s/traces.csv", "--tau-unit", "fortnight"],
        vec!["separability", "--dataset", "s/traces.csv", "--mode", "st"],
        vec!["coarsen", "--dataset", "s/traces.csv"],
        vec!["uniqueness"],
    ] {
        let out = traceprint(tmp.path(), &args);
        assert_eq!(out.status.code(), Some(2), "{args:?}");
        let err: serde_json::Value = serde_json::from_slice(&out.stderr).unwrap();
        assert_eq!(err["exit_code"], 2);
    }
}

#[test]
fn flags_override_config_file_which_overrides_defaults() {
    let tmp = tempfile::tempdir().unwrap();
    synth(tmp.path());
    fs::write(tmp.path().join("run.cfg"), "# experiment\ndataset = s/traces.csv\nseed = 5\nreps = 30\nn-max = 2\n").unwrap();
    let out = traceprint(tmp.path(), &["uniqueness", "--config", "run.cfg", "--seed", "9", "--out", "o"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let resolved = read(tmp.path(), "o/config.resolved");
    assert!(resolved.contains("\nseed = 9\n"));
    assert!(resolved.contains("\nreps = 30\n"));
    assert!(resolved.contains("\nmode = spatial\n"));
    assert!(resolved.contains("\nmin_points = 4\n"));
    let csv = read(tmp.path(), "o/uniqueness.csv");
    assert_eq!(column(&csv, "samples"), vec!["30", "30"]);
    assert_eq!(column(&csv, "seed"), vec!["9", "9"]);

    fs::write(tmp.path().join("bad.cfg"), "sead = 5\n").unwrap();
    let out = traceprint(tmp.path(), &["uniqueness", "--config", "bad.cfg"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn runtime_failure_marks_manifest_incomplete() {
    let tmp = tempfile::tempdir().unwrap();
    synth(tmp.path());
    // every trajectory is shorter than the minimum, so nobody is eligible
    let out = traceprint(tmp.path(), &["uniqueness", "--dataset", "s/traces.csv", "--min-points", "1000", "--out", "o"]);
    assert_eq!(out.status.code(), Some(4));
    let manifest: serde_json::Value = serde_json::from_str(&read(tmp.path(), "o/manifest.json")).unwrap();
    assert_eq!(manifest["status"], "incomplete");
    assert_eq!(manifest["error"]["kind"], "runtime");
    assert!(!tmp.path().join("o/uniqueness.csv").exists());
}

#[test]
fn feature_and_movement_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    synth(tmp.path());
    let out = traceprint(tmp.path(), &["features", "--dataset", "s/traces.csv", "--kind", "speed_kmh", "--out", "f"]);
    assert!(out.status.success());
    let csv = read(tmp.path(), "f/features.csv");
    assert!(csv.starts_with("pseudo_id,window_start,kind,value,quantized\n"));
    assert!(column(&csv, "kind").iter().all(|k| k == "speed_kmh"));
    for (v, q) in column(&csv, "value").iter().zip(column(&csv, "quantized")) {
        assert_eq!(v.parse::<f64>().unwrap().floor() as i64, q.parse::<i64>().unwrap());
    }

    let out = traceprint(
        tmp.path(),
        &["uniqueness", "--dataset", "s/traces.csv", "--kind", "direction_deg", "--n-max", "3", "--reps", "50", "--out", "m"],
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = read(tmp.path(), "m/uniqueness.csv");
    assert_eq!(column(&csv, "mode"), vec!["movement"; 3]);
    assert_eq!(column(&csv, "kind"), vec!["direction_deg"; 3]);
}

#[test]
fn classify_and_tune_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    synth(tmp.path());
    let out = traceprint(
        tmp.path(),
        &["classify", "--dataset", "s/traces.csv", "--n", "1,2", "--reps", "4", "--tau", "0.01", "--fractions", "0.5,1", "--out", "c"],
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = read(tmp.path(), "c/accuracy.csv");
    assert!(csv.starts_with("dataset,n,tau,tau_unit,top_k,fraction,users,reps,mean_acc,ci_low,ci_high,seed\n"));
    // 2 fractions x 2 n x top-1/top-2
    assert_eq!(csv.lines().count(), 1 + 8);

    let out = traceprint(tmp.path(), &["tune-tau", "--dataset", "s/traces.csv", "--reps", "3", "--tau", "0.001,1", "--out", "t"]);
    assert!(out.status.success());
    let star = read(tmp.path(), "t/tau_star.csv");
    assert!(["0.001", "1"].contains(&column(&star, "tau_star")[0].as_str()));
}

#[test]
fn separability_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    synth(tmp.path());
    let out = traceprint(tmp.path(), &["separability", "--dataset", "s/traces.csv", "--out", "p"]);
    assert!(out.status.success());
    let classes = read(tmp.path(), "p/separability_classes.csv");
    assert!(classes.starts_with("pseudo_id,fraction,n_points,mode\n"));
    assert_eq!(classes.lines().count(), 9);
    let cdf = read(tmp.path(), "p/separability_cdf.csv");
    assert!(cdf.starts_with("x,cum_prob\n"));
    assert_eq!(column(&cdf, "cum_prob").last().unwrap(), "1");
}
