use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use cphase_mps::checkpoint::read_checkpoint;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_cphase-mps"));
    c.env("RUST_LOG", "warn");
    c
}

fn run_ok(args: &[&str]) -> Output {
    let out = bin().args(args).output().unwrap();
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn dir_contents(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().into_string().unwrap(), fs::read(e.path()).unwrap())
        })
        .collect()
}

fn json(bytes: &[u8]) -> serde_json::Value {
    serde_json::from_slice(bytes).unwrap()
}

#[test]
fn repeated_runs_are_byte_identical_across_thread_counts() {
    let tmp = tempfile::tempdir().unwrap();
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    let common = ["run", "--preset", "toy", "--g0", "0.05,0.1", "--n-rep", "1,2", "--seed", "3", "--checkpoint"];
    run_ok(&[&common[..], &["-o", a.to_str().unwrap(), "--threads", "1"]].concat());
    let mut cmd = bin();
    cmd.args(common).args(["-o", b.to_str().unwrap()]).env("CPHASE_THREADS", "4");
    assert!(cmd.status().unwrap().success());
    let (da, db) = (dir_contents(&a), dir_contents(&b));
    assert_eq!(da.keys().collect::<Vec<_>>(), db.keys().collect::<Vec<_>>());
    for (name, bytes) in &da {
        assert!(bytes == &db[name], "{name} differs");
    }
    assert!(da.contains_key("point_003_records.csv"));
}

#[test]
fn run_outputs_have_documented_columns() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("toy");
    run_ok(&["run", "--preset", "toy", "-o", out.to_str().unwrap(), "--checkpoint"]);
    let records = fs::read_to_string(out.join("point_000_records.csv")).unwrap();
    let mut lines = records.lines();
    assert_eq!(
        lines.next().unwrap(),
        "rep,half_rep,s_oo,s_om,phase,F00,F01,F10,F11,discarded_weight,max_bond,mech_tail"
    );
    // toy preset has two repetitions: records at half-reps 0..=4
    assert_eq!(lines.count(), 5);
    let entropy = fs::read_to_string(out.join("point_000_entropy_h004.csv")).unwrap();
    assert_eq!(entropy.lines().next().unwrap(), "bond_index,S");
    // one value per bond of the 9-site chain
    assert_eq!(entropy.lines().count(), 1 + 8);
    let mode = fs::read_to_string(out.join("mode_1.csv")).unwrap();
    assert_eq!(mode.lines().next().unwrap(), "bin_index,re,im");

    let state = read_checkpoint(fs::File::open(out.join("point_000_final.mpsckpt")).unwrap()).unwrap();
    assert_eq!(state.len(), 9);
    assert!((state.norm_squared() - 1.0).abs() < 1e-10);

    let manifest = json(&fs::read(out.join("manifest.json")).unwrap());
    assert_eq!(manifest["schema_version"], 1);
    assert_eq!(manifest["config"]["params"]["d_mech"], 4);
    let files: Vec<&str> = manifest["artifacts"].as_array().unwrap().iter().map(|a| a["file"].as_str().unwrap()).collect();
    for name in dir_contents(&out).keys().filter(|n| *n != "manifest.json") {
        assert!(files.contains(&name.as_str()), "{name} missing from manifest");
    }
}

#[test]
fn empty_sweep_writes_manifest_only() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("empty.toml");
    fs::write(&cfg, "preset = \"toy\"\n[sweep]\ng0 = []\n").unwrap();
    let out = tmp.path().join("out");
    run_ok(&["run", "-c", cfg.to_str().unwrap(), "-o", out.to_str().unwrap()]);
    let files = dir_contents(&out);
    assert_eq!(files.keys().collect::<Vec<_>>(), ["manifest.json"]);
    assert!(json(&files["manifest.json"])["artifacts"].as_array().unwrap().is_empty());
}

#[test]
fn validate_full_scale_preset() {
    let out = run_ok(&["validate", "--preset", "paper"]);
    let report = json(&out.stdout);
    assert_eq!(report["n_bins"], 41_888);
    assert_eq!(report["requires_long_run"], true);
    assert!(report["warnings"].as_array().unwrap().is_empty());
}

#[test]
fn validate_warns_on_slow_photon() {
    // omega_m tau = 0.5
    let out = run_ok(&["validate", "--preset", "scaled", "--set", "tau=500", "--set", "omega_m=1e-3"]);
    let report = json(&out.stdout);
    let warnings: Vec<&str> = report["warnings"].as_array().unwrap().iter().map(|w| w.as_str().unwrap()).collect();
    assert!(warnings.iter().any(|w| w.contains("omega_m*tau = 0.5")), "{warnings:?}");
}

#[test]
fn malformed_config_fails() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("bad.toml");
    fs::write(&cfg, "[params]\ng0 = \"strong\"\n").unwrap();
    assert!(!bin().args(["validate", "-c", cfg.to_str().unwrap()]).status().unwrap().success());
    fs::write(&cfg, "[params]\nkappa = 2.0\n").unwrap();
    assert!(!bin().args(["validate", "-c", cfg.to_str().unwrap()]).status().unwrap().success());
    assert!(!bin().args(["validate", "--preset", "missing"]).status().unwrap().success());
}

#[test]
fn full_scale_run_requires_long_run_flag() {
    let tmp = tempfile::tempdir().unwrap();
    let out = bin().args(["run", "--preset", "paper", "-o", tmp.path().to_str().unwrap()]).output().unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("--long-run"));
}

#[test]
fn budget_violation_is_nonzero_exit() {
    let tmp = tempfile::tempdir().unwrap();
    let out = bin()
        .args(["run", "--preset", "scaled", "--set", "svd_threshold=0.05", "--set", "discard_budget=1e-12"])
        .args(["-o", tmp.path().to_str().unwrap()])
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("budget"));
}

#[test]
fn verify_oracle_passes() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run_ok(&["verify-oracle", "--seed", "11", "-o", tmp.path().to_str().unwrap()]);
    assert!(String::from_utf8_lossy(&out.stdout).contains("max deviation"));
    let rows = fs::read_to_string(tmp.path().join("oracle.csv")).unwrap();
    assert_eq!(rows.lines().count(), 21);
}

#[test]
fn semiclassical_pi_search_table() {
    let tmp = tempfile::tempdir().unwrap();
    run_ok(&["pi-search", "--n-rep", "1,2,3,4,5,6,7,8,9,10", "--eta", "1,0.96", "-o", tmp.path().to_str().unwrap()]);
    let report = json(&fs::read(tmp.path().join("pi_search.json")).unwrap());
    let points = report["points"].as_array().unwrap();
    assert_eq!(points.len(), 10);
    // saturation keeps the first runs below pi
    for p in &points[..3] {
        assert!(p["error"].is_string(), "{p}");
    }
    for p in &points[3..] {
        let phase = p["phase"].as_f64().unwrap();
        assert!((phase - std::f64::consts::PI).abs() < 1e-6);
    }
    let best = report["best"].as_array().unwrap();
    assert_eq!(best[0]["n_rep"], 10);
    assert_eq!(best[1]["eta"], 0.96);
    assert_eq!(best[1]["n_rep"], 7);
}

#[test]
fn semiclassical_tables_and_dephasing() {
    let tmp = tempfile::tempdir().unwrap();
    run_ok(&["semiclassical", "--g0", "0.01,0.05", "--n-rep", "1,2", "-o", tmp.path().to_str().unwrap()]);
    let table = fs::read_to_string(tmp.path().join("semiclassical.csv")).unwrap();
    assert_eq!(table.lines().next().unwrap(), "g0,n_rep,phi1_times_n,phase,beta_r_sq,fidelity");
    assert_eq!(table.lines().count(), 5);
    let mut rdr = csv::Reader::from_path(tmp.path().join("dephasing.csv")).unwrap();
    let rows: Vec<csv::StringRecord> = rdr.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 3);
    for r in rows {
        let mc: f64 = r[2].parse().unwrap();
        let se: f64 = r[3].parse().unwrap();
        let cf: f64 = r[4].parse().unwrap();
        assert!((mc - cf).abs() < 5.0 * se + 1e-12);
    }
}

#[test]
fn fig2c_preset_has_overlay_column() {
    let tmp = tempfile::tempdir().unwrap();
    run_ok(&["run", "--preset", "fig2c-scaled", "-o", tmp.path().to_str().unwrap()]);
    let mut rdr = csv::Reader::from_path(tmp.path().join("summary.csv")).unwrap();
    let headers = rdr.headers().unwrap().clone();
    let col = |name: &str| headers.iter().position(|h| h == name).unwrap();
    let (g, phase, overlay) = (col("g0"), col("phase"), col("semiclassical_phase"));
    let rows: Vec<csv::StringRecord> = rdr.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 6);
    for r in rows {
        let g0: f64 = r[g].parse().unwrap();
        let q: f64 = r[phase].parse().unwrap();
        let s: f64 = r[overlay].parse().unwrap();
        assert!((q - s).abs() / s < 0.15, "g0 = {g0}: quantum {q}, semiclassical {s}");
    }
}
