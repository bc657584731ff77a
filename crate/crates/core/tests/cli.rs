use std::path::Path;
use std::process::Command;

use serde_json::Value;
use sha2::{Digest, Sha256};

const BIN: &str = env!("CARGO_BIN_EXE_pilotwave");

fn write_config(dir: &Path, body: &str) -> std::path::PathBuf {
    let p = dir.join("scenario.toml");
    std::fs::write(&p, body).unwrap();
    p
}

fn small(name: &str) -> String {
    format!("[scenario]\nname = \"{name}\"\nexport_trajectories = 5\n[sampling]\nn_pairs = 200\nseed = 3\n")
}

fn schema() -> jsonschema::JSONSchema {
    let text = std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("../../schema/report.schema.json")).unwrap();
    let value: Value = serde_json::from_str(&text).unwrap();
    jsonschema::JSONSchema::compile(&value).unwrap()
}

fn read_json(p: &Path) -> Value {
    serde_json::from_slice(&std::fs::read(p).unwrap()).unwrap()
}

#[test]
fn list_and_check() {
    let out = Command::new(BIN).arg("list-scenarios").output().unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    for name in ["entangled_two_slit", "unentangled_two_slit", "entangled_four_slit"] {
        assert!(text.contains(name));
    }

    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &small("unentangled_two_slit"));
    let out = Command::new(BIN).arg("check").arg(&cfg).output().unwrap();
    assert_eq!(out.status.code(), Some(0));
    let table = String::from_utf8(out.stdout).unwrap();
    assert!(table.contains("slit_offset_below_two_pi_sigma"));
    assert!(table.contains("violated"));
}

#[test]
fn run_writes_valid_outputs_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &small("entangled_two_slit"));
    let out_dir = dir.path().join("out");
    let status = Command::new(BIN)
        .args(["run".as_ref(), cfg.as_os_str(), "--out".as_ref(), out_dir.as_os_str(), "--tau".as_ref(), "2".as_ref()])
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(0));

    let manifest = read_json(&out_dir.join("manifest.json"));
    assert_eq!(manifest["spec"]["target_tau"], 2.0);
    assert_eq!(manifest["overrides"][0]["flag"], "tau");
    assert_eq!(manifest["seed"], 3);
    let files = manifest["files"].as_array().unwrap();
    assert_eq!(files.len(), 4);
    for f in files {
        let bytes = std::fs::read(out_dir.join(f["name"].as_str().unwrap())).unwrap();
        assert_eq!(f["sha256"].as_str().unwrap(), hex::encode(Sha256::digest(&bytes)));
    }

    let report = read_json(&out_dir.join("report.json"));
    let compiled = schema();
    assert!(compiled.is_valid(&report));
    assert_eq!(report["bqm"]["symmetric_fraction"], 1.0);

    let mut broken = report.clone();
    broken["bqm"]["accepted_count"] = Value::from(-1);
    assert!(!compiled.is_valid(&broken));

    let traj = std::fs::read_to_string(out_dir.join("trajectories.csv")).unwrap();
    assert!(traj.starts_with("pair_index,t,y1,y2\n"));
    assert_eq!(traj.lines().count(), 1 + 5 * 65);
    let screen = std::fs::read_to_string(out_dir.join("screen.csv")).unwrap();
    assert!(screen.starts_with("pair_index,Y1,Y2,accepted\n"));
    assert_eq!(screen.lines().count(), 201);
    let hist = std::fs::read_to_string(out_dir.join("histogram.csv")).unwrap();
    assert!(hist.starts_with("bin_lo,bin_hi,count\n"));
    let total: u64 = hist.lines().skip(1).map(|l| l.rsplit(',').next().unwrap().parse::<u64>().unwrap()).sum();
    assert_eq!(total, 400);
}

#[test]
fn every_scenario_report_matches_schema() {
    let compiled = schema();
    for name in ["entangled_two_slit", "unentangled_two_slit", "entangled_four_slit"] {
        let dir = tempfile::tempdir().unwrap();
        let cfg = write_config(dir.path(), &small(name).replace("[sampling]", "selective_detection = true\n[detection]\nepsilon = 0.05\n[sampling]"));
        let out_dir = dir.path().join("o");
        let status = Command::new(BIN).args(["run".as_ref(), cfg.as_os_str(), "--out".as_ref(), out_dir.as_os_str()]).status().unwrap();
        assert_eq!(status.code(), Some(0), "{name}");
        let report = read_json(&out_dir.join("report.json"));
        let msgs: Vec<String> = match compiled.validate(&report) {
            Ok(()) => Vec::new(),
            Err(errors) => errors.map(|e| format!("{} at {}", e, e.instance_path)).collect(),
        };
        assert!(msgs.is_empty(), "{name}: {msgs:?}");
    }
}

#[test]
fn screen_values_round_trip_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &small("unentangled_two_slit"));
    let out_dir = dir.path().join("o");
    Command::new(BIN).args(["run".as_ref(), cfg.as_os_str(), "--out".as_ref(), out_dir.as_os_str()]).status().unwrap();
    let spec = pilotwave::cli::parse_config(&small("unentangled_two_slit")).unwrap();
    let outcome = pilotwave::scenarios::run_scenario(&spec).unwrap();
    let screen = std::fs::read_to_string(out_dir.join("screen.csv")).unwrap();
    for (line, rec) in screen.lines().skip(1).zip(&outcome.records) {
        let cols: Vec<&str> = line.split(',').collect();
        assert_eq!(cols[1].parse::<f64>().unwrap().to_bits(), rec.arrival.0.to_bits());
        assert_eq!(cols[2].parse::<f64>().unwrap().to_bits(), rec.arrival.1.to_bits());
    }
}

#[test]
fn env_var_sets_default_output_dir() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &small("entangled_four_slit"));
    let target = dir.path().join("from-env");
    let status = Command::new(BIN)
        .arg("run")
        .arg(&cfg)
        .env(pilotwave::cli::OUT_DIR_ENV, &target)
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(0));
    assert!(target.join("manifest.json").exists());
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("never");

    let bad = write_config(dir.path(), "[scenario]\nname = \"entangled_two_slit\"\n[sampling]\ndelta_y0 = -1.0\nmean_y0 = 0.0\n");
    let out = Command::new(BIN).args(["run".as_ref(), bad.as_os_str(), "--out".as_ref(), out_dir.as_os_str()]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("delta_y0"));

    let missing = dir.path().join("nope.toml");
    let status = Command::new(BIN).arg("check").arg(&missing).status().unwrap();
    assert_eq!(status.code(), Some(1));

    // antisymmetric pair from merged slits has no normalizable state
    let degenerate = write_config(
        dir.path(),
        "[scenario]\nname = \"entangled_two_slit\"\nexchange_sign = \"antisymmetric\"\n[physics]\nslit_offset = 0.0\n",
    );
    let out = Command::new(BIN).args(["run".as_ref(), degenerate.as_os_str(), "--out".as_ref(), out_dir.as_os_str()]).output().unwrap();
    assert_eq!(out.status.code(), Some(3));
    assert!(!out_dir.exists() || std::fs::read_dir(&out_dir).unwrap().next().is_none());

    let status = Command::new(BIN).args(["run", "--pairs", "ten"]).status().unwrap();
    assert_eq!(status.code(), Some(2));
}

#[test]
fn repeated_runs_have_identical_checksums() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &small("unentangled_two_slit"));
    let mut sums = Vec::new();
    for sub in ["a", "b"] {
        let o = dir.path().join(sub);
        let status = Command::new(BIN).args(["run".as_ref(), cfg.as_os_str(), "--out".as_ref(), o.as_os_str(), "--seed".as_ref(), "9".as_ref()]).status().unwrap();
        assert_eq!(status.code(), Some(0));
        sums.push(read_json(&o.join("manifest.json"))["files"].clone());
    }
    assert_eq!(sums[0], sums[1]);
}
