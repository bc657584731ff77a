//! Command-line front end: TOML scenario configs in, CSV exports and a JSON
//! report out.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::ensemble::InitialConstraint;
use crate::error::{Error, Result};
use crate::packets::{ExchangeSign, PhysicalConfig};
use crate::scenarios::{run_scenario, validate_regime, ScenarioName, ScenarioOutcome, ScenarioSpec, SCHEMA_VERSION, TOOL_VERSION};

/// Environment variable naming the output directory when `--out` is absent.
pub const OUT_DIR_ENV: &str = "PILOTWAVE_OUT";
pub const DEFAULT_OUT_DIR: &str = "pilotwave-out";

pub const EXIT_OK: i32 = 0;
pub const EXIT_IO: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    scenario: ScenarioSection,
    #[serde(default)]
    physics: PhysicsSection,
    #[serde(default)]
    sampling: SamplingSection,
    #[serde(default)]
    detection: DetectionSection,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioSection {
    name: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    exchange_sign: Option<ExchangeSign>,
    #[serde(skip_serializing_if = "Option::is_none")]
    selective_detection: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    export_trajectories: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    much_less: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    comparable_low: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    comparable_high: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    much_greater: Option<f64>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PhysicsSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    sigma0: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    slit_offset: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    ky: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    mass: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    hbar: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    detector_width: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    tau: Option<f64>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SamplingSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    n_pairs: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    constraint: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    y0: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    mean_y0: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    delta_y0: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    nonnegative: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    integrator_tol: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    record_intervals: Option<usize>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DetectionSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    epsilon: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    bin_width: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    empty_threshold: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    fringe_tolerance: Option<f64>,
}

fn resolve_constraint(s: &SamplingSection, name: ScenarioName) -> Result<InitialConstraint> {
    let spread_keys = s.mean_y0.is_some() || s.delta_y0.is_some() || s.nonnegative.is_some();
    let mode = match s.constraint.as_deref() {
        Some(m) => m.to_string(),
        None if spread_keys => "spread_com".into(),
        None if s.y0.is_some() => "fixed_com".into(),
        None => match name {
            ScenarioName::UnentangledTwoSlit => "unconstrained".into(),
            _ => "fixed_com".into(),
        },
    };
    let stray = |keys: &[(&str, bool)]| -> Result<()> {
        for (k, present) in keys {
            if *present {
                return Err(Error::Config(format!("[sampling].{k} is not used by constraint \"{mode}\"")));
            }
        }
        Ok(())
    };
    let c = match mode.as_str() {
        "unconstrained" => {
            stray(&[
                ("y0", s.y0.is_some()),
                ("mean_y0", s.mean_y0.is_some()),
                ("delta_y0", s.delta_y0.is_some()),
                ("nonnegative", s.nonnegative.is_some()),
            ])?;
            InitialConstraint::Unconstrained
        }
        "fixed_com" => {
            stray(&[
                ("mean_y0", s.mean_y0.is_some()),
                ("delta_y0", s.delta_y0.is_some()),
                ("nonnegative", s.nonnegative.is_some()),
            ])?;
            InitialConstraint::FixedCom { y0: s.y0.unwrap_or(0.0) }
        }
        "spread_com" => {
            stray(&[("y0", s.y0.is_some())])?;
            let mean_y0 = s
                .mean_y0
                .ok_or_else(|| Error::Config("missing required key [sampling].mean_y0 for constraint \"spread_com\"".into()))?;
            let delta_y0 = s
                .delta_y0
                .ok_or_else(|| Error::Config("missing required key [sampling].delta_y0 for constraint \"spread_com\"".into()))?;
            InitialConstraint::SpreadCom {
                mean_y0,
                delta_y0,
                nonnegative: s.nonnegative.unwrap_or(false),
            }
        }
        other => {
            return Err(Error::Config(format!(
                "[sampling].constraint: unknown value \"{other}\" (expected unconstrained, fixed_com or spread_com)"
            )))
        }
    };
    c.validate().map_err(|e| match e {
        Error::InvalidConfig(m) => Error::Config(format!("[sampling]: {m}")),
        e => e,
    })?;
    Ok(c)
}

/// Parses a TOML scenario config and applies the documented defaults.
pub fn parse_config(text: &str) -> Result<ScenarioSpec> {
    let file: ConfigFile = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
    let name = ScenarioName::parse(&file.scenario.name).ok_or_else(|| {
        let known: Vec<_> = ScenarioName::ALL.iter().map(|n| n.as_str()).collect();
        Error::Config(format!(
            "[scenario].name: unknown scenario \"{}\" (expected one of {})",
            file.scenario.name,
            known.join(", ")
        ))
    })?;
    let mut spec = ScenarioSpec::preset(name);
    let sc = &file.scenario;
    if let Some(v) = sc.exchange_sign {
        spec.exchange_sign = v;
    }
    if let Some(v) = sc.selective_detection {
        spec.selective_detection = v;
    }
    if let Some(v) = sc.export_trajectories {
        spec.export_trajectories = v;
    }
    let th = &mut spec.thresholds;
    th.much_less = sc.much_less.unwrap_or(th.much_less);
    th.comparable_low = sc.comparable_low.unwrap_or(th.comparable_low);
    th.comparable_high = sc.comparable_high.unwrap_or(th.comparable_high);
    th.much_greater = sc.much_greater.unwrap_or(th.much_greater);

    let ph = &file.physics;
    let d = PhysicalConfig::default();
    let sigma0 = ph.sigma0.unwrap_or(d.sigma0);
    spec.config = PhysicalConfig {
        sigma0,
        slit_offset: ph.slit_offset.unwrap_or(sigma0),
        ky: ph.ky.unwrap_or(d.ky),
        mass: ph.mass.unwrap_or(d.mass),
        hbar: ph.hbar.unwrap_or(d.hbar),
        detector_width: ph.detector_width.unwrap_or(0.5 * sigma0),
        flight_time: d.flight_time,
    };
    spec.target_tau = ph.tau.unwrap_or(spec.target_tau);

    let sa = &file.sampling;
    spec.n_pairs = sa.n_pairs.unwrap_or(spec.n_pairs);
    spec.seed = sa.seed.unwrap_or(spec.seed);
    spec.constraint = resolve_constraint(sa, name)?;
    spec.integrator_tol = sa.integrator_tol.unwrap_or(spec.integrator_tol);
    spec.record_intervals = sa.record_intervals.unwrap_or(spec.record_intervals);

    let de = &file.detection;
    let dd = crate::scenarios::DetectionSettings::for_sigma(sigma0);
    spec.detection.epsilon = de.epsilon.unwrap_or(dd.epsilon);
    spec.detection.bin_width = de.bin_width.unwrap_or(dd.bin_width);
    spec.detection.empty_threshold = de.empty_threshold.unwrap_or(dd.empty_threshold);
    spec.detection.fringe_tolerance = de.fringe_tolerance.unwrap_or(dd.fringe_tolerance);

    spec.sync_flight_time();
    spec.validate().map_err(|e| match e {
        Error::InvalidConfig(m) => Error::Config(m),
        e => e,
    })?;
    Ok(spec)
}

/// Writes a fully resolved config; `parse_config(emit_config(s)) == s`.
pub fn emit_config(spec: &ScenarioSpec) -> Result<String> {
    let (constraint, y0, mean_y0, delta_y0, nonnegative) = match spec.constraint {
        InitialConstraint::Unconstrained => ("unconstrained", None, None, None, None),
        InitialConstraint::FixedCom { y0 } => ("fixed_com", Some(y0), None, None, None),
        InitialConstraint::SpreadCom {
            mean_y0,
            delta_y0,
            nonnegative,
        } => ("spread_com", None, Some(mean_y0), Some(delta_y0), Some(nonnegative)),
    };
    let c = &spec.config;
    let th = &spec.thresholds;
    let file = ConfigFile {
        scenario: ScenarioSection {
            name: spec.name.as_str().to_string(),
            exchange_sign: Some(spec.exchange_sign),
            selective_detection: Some(spec.selective_detection),
            export_trajectories: Some(spec.export_trajectories),
            much_less: Some(th.much_less),
            comparable_low: Some(th.comparable_low),
            comparable_high: Some(th.comparable_high),
            much_greater: Some(th.much_greater),
        },
        physics: PhysicsSection {
            sigma0: Some(c.sigma0),
            slit_offset: Some(c.slit_offset),
            ky: Some(c.ky),
            mass: Some(c.mass),
            hbar: Some(c.hbar),
            detector_width: Some(c.detector_width),
            tau: Some(spec.target_tau),
        },
        sampling: SamplingSection {
            n_pairs: Some(spec.n_pairs),
            seed: Some(spec.seed),
            constraint: Some(constraint.to_string()),
            y0,
            mean_y0,
            delta_y0,
            nonnegative,
            integrator_tol: Some(spec.integrator_tol),
            record_intervals: Some(spec.record_intervals),
        },
        detection: DetectionSection {
            epsilon: Some(spec.detection.epsilon),
            bin_width: Some(spec.detection.bin_width),
            empty_threshold: Some(spec.detection.empty_threshold),
            fringe_tolerance: Some(spec.detection.fringe_tolerance),
        },
    };
    toml::to_string(&file).map_err(|e| Error::Config(e.to_string()))
}

#[derive(Debug, Parser)]
#[command(name = "pilotwave", version, about = "Two-particle double-slit trajectories and detection statistics")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run a scenario and write CSV exports, a JSON report and a manifest.
    Run {
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        pairs: Option<usize>,
        #[arg(long)]
        tau: Option<f64>,
    },
    /// List the built-in scenarios.
    ListScenarios,
    /// Print the regime checks of a config without running it.
    Check { config: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileEntry {
    pub name: String,
    pub sha256: String,
    pub bytes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Override {
    pub flag: String,
    pub value: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config_path: String,
    pub output_dir: String,
    pub spec: ScenarioSpec,
    pub tool_version: String,
    pub schema_version: String,
    pub seed: u64,
    pub overrides: Vec<Override>,
    pub started_unix_ms: u128,
    pub finished_unix_ms: u128,
    pub files: Vec<FileEntry>,
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::InvalidConfig(_) | Error::Config(_) | Error::InvalidArgument(_) => EXIT_CONFIG,
        Error::Io(_) => EXIT_IO,
        _ => EXIT_NUMERICAL,
    }
}

/// Entry point shared by the binary and the tests; returns the exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let result = match cli.command {
        Command::ListScenarios => {
            for n in ScenarioName::ALL {
                println!("{:<22} {}", n.as_str(), n.description());
            }
            Ok(())
        }
        Command::Check { config } => check(&config),
        Command::Run {
            config,
            out,
            seed,
            pairs,
            tau,
        } => {
            let out = out
                .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
                .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_DIR));
            run_command(&config, &out, seed, pairs, tau)
        }
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn load(path: &Path) -> Result<ScenarioSpec> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    parse_config(&text).map_err(|e| match e {
        Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
        e => e,
    })
}

fn check(path: &Path) -> Result<()> {
    let spec = load(path)?;
    let checks = validate_regime(&spec)?;
    println!("{:<38} {:<14} {:>14}  status", "condition", "relation", "ratio");
    for c in &checks {
        let ratio = c.margin.map_or("inf".to_string(), |m| format!("{m:.6}"));
        let relation = serde_json::to_value(c.relation)
            .ok()
            .and_then(|v| v.as_str().map(str::to_string))
            .unwrap_or_default();
        println!(
            "{:<38} {:<14} {:>14}  {}",
            c.id,
            relation,
            ratio,
            if c.satisfied { "ok" } else { "violated" }
        );
    }
    Ok(())
}

fn unix_ms() -> u128 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis())
        .unwrap_or(0)
}

fn run_command(path: &Path, out: &Path, seed: Option<u64>, pairs: Option<usize>, tau: Option<f64>) -> Result<()> {
    let started = unix_ms();
    let mut spec = load(path)?;
    let mut overrides = Vec::new();
    if let Some(s) = seed {
        spec.seed = s;
        overrides.push(Override {
            flag: "seed".into(),
            value: s.to_string(),
        });
    }
    if let Some(n) = pairs {
        spec.n_pairs = n;
        overrides.push(Override {
            flag: "pairs".into(),
            value: n.to_string(),
        });
    }
    if let Some(t) = tau {
        spec.target_tau = t;
        overrides.push(Override {
            flag: "tau".into(),
            value: t.to_string(),
        });
    }
    spec.sync_flight_time();
    spec.validate()?;

    let outcome = run_scenario(&spec)?;
    let files = render_outputs(&outcome)?;

    std::fs::create_dir_all(out).map_err(|e| Error::Io(format!("{}: {e}", out.display())))?;
    let mut entries = Vec::new();
    for (name, bytes) in &files {
        write_atomic(&out.join(name), bytes)?;
        entries.push(FileEntry {
            name: name.to_string(),
            sha256: hex::encode(Sha256::digest(bytes)),
            bytes: bytes.len(),
        });
    }
    let manifest = RunManifest {
        config_path: path.display().to_string(),
        output_dir: out.display().to_string(),
        seed: spec.seed,
        spec,
        tool_version: TOOL_VERSION.to_string(),
        schema_version: SCHEMA_VERSION.to_string(),
        overrides,
        started_unix_ms: started,
        finished_unix_ms: unix_ms(),
        files: entries,
    };
    let mut text = serde_json::to_vec_pretty(&manifest).map_err(|e| Error::Io(e.to_string()))?;
    text.push(b'\n');
    write_atomic(&out.join("manifest.json"), &text)?;
    println!("wrote {} files to {}", files.len() + 1, out.display());
    Ok(())
}

fn csv_bytes<F>(header: &[&str], fill: F) -> Result<Vec<u8>>
where
    F: FnOnce(&mut csv::Writer<Vec<u8>>) -> std::result::Result<(), csv::Error>,
{
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).map_err(|e| Error::Io(e.to_string()))?;
    fill(&mut w).map_err(|e| Error::Io(e.to_string()))?;
    w.into_inner().map_err(|e| Error::Io(e.to_string()))
}

/// Every output file as `(name, contents)`, fully rendered before anything
/// touches the disk. Floats use the shortest round-trip representation.
pub fn render_outputs(outcome: &ScenarioOutcome) -> Result<Vec<(&'static str, Vec<u8>)>> {
    let trajectories = csv_bytes(&["pair_index", "t", "y1", "y2"], |w| {
        for (i, tr) in &outcome.trajectories {
            for p in &tr.path {
                w.write_record([i.to_string(), p.t.to_string(), p.y1.to_string(), p.y2.to_string()])?;
            }
        }
        Ok(())
    })?;
    let screen = csv_bytes(&["pair_index", "Y1", "Y2", "accepted"], |w| {
        for r in &outcome.records {
            w.write_record([
                r.pair_index.to_string(),
                r.arrival.0.to_string(),
                r.arrival.1.to_string(),
                r.accepted_by_selective_detection.to_string(),
            ])?;
        }
        Ok(())
    })?;
    let h = &outcome.histogram;
    let histogram = csv_bytes(&["bin_lo", "bin_hi", "count"], |w| {
        for (i, c) in h.counts.iter().enumerate() {
            w.write_record([h.bin_lo(i).to_string(), h.bin_hi(i).to_string(), c.to_string()])?;
        }
        Ok(())
    })?;
    let mut report = serde_json::to_vec_pretty(&outcome.report).map_err(|e| Error::Io(e.to_string()))?;
    report.push(b'\n');
    Ok(vec![
        ("trajectories.csv", trajectories),
        ("screen.csv", screen),
        ("histogram.csv", histogram),
        ("report.json", report),
    ])
}

/// Writes through a temporary file in the same directory and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| Error::Io(format!("{}: {}", path.display(), e.error)))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_gets_defaults() {
        let spec = parse_config("[scenario]\nname = \"entangled_two_slit\"\n").unwrap();
        assert_eq!(spec, ScenarioSpec::preset(ScenarioName::EntangledTwoSlit));
        assert_eq!(spec.config.slit_offset, 1.0);
        assert_eq!(spec.target_tau, 1.0);
        assert_eq!(spec.n_pairs, 10_000);
        assert_eq!(spec.seed, 0);
        assert_eq!(spec.config.detector_width, 0.5);
        assert_eq!(spec.detection.epsilon, 0.1);
    }

    #[test]
    fn negative_spread_is_rejected() {
        let err = parse_config("[scenario]\nname = \"unentangled_two_slit\"\n[sampling]\nmean_y0 = 1.0\ndelta_y0 = -1.0\n").unwrap_err();
        assert!(matches!(err, Error::Config(_)), "{err:?}");
        assert_eq!(exit_code(&err), EXIT_CONFIG);
    }

    #[test]
    fn unknown_key_and_name_are_rejected() {
        let err = parse_config("[scenario]\nname = \"entangled_two_slit\"\n[physics]\nslit_ofset = 1.0\n").unwrap_err();
        assert!(err.to_string().contains("slit_ofset"), "{err}");
        let err = parse_config("[scenario]\nname = \"three_slit\"\n").unwrap_err();
        assert!(err.to_string().contains("three_slit"), "{err}");
    }

    #[test]
    fn type_mismatch_names_the_line() {
        let err = parse_config("[scenario]\nname = \"entangled_two_slit\"\n[sampling]\nn_pairs = \"many\"\n").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("line 4") || msg.contains("n_pairs"), "{msg}");
    }

    #[test]
    fn missing_name_is_reported() {
        let err = parse_config("[scenario]\n").unwrap_err();
        assert!(err.to_string().contains("name"), "{err}");
    }

    #[test]
    fn stray_constraint_key_is_rejected() {
        let err = parse_config("[scenario]\nname = \"entangled_two_slit\"\n[sampling]\nconstraint = \"unconstrained\"\ny0 = 0.2\n").unwrap_err();
        assert!(err.to_string().contains("y0"), "{err}");
    }

    #[test]
    fn emitted_config_round_trips() {
        let mut spec = ScenarioSpec::preset(ScenarioName::UnentangledTwoSlit);
        spec.constraint = InitialConstraint::SpreadCom {
            mean_y0: 10.0,
            delta_y0: 1.0,
            nonnegative: true,
        };
        spec.target_tau = 10.0;
        spec.config.slit_offset = 0.05;
        spec.selective_detection = true;
        spec.sync_flight_time();
        let text = emit_config(&spec).unwrap();
        assert_eq!(parse_config(&text).unwrap(), spec);
    }

    #[test]
    fn bad_flags_exit_with_config_code() {
        assert_eq!(run(["pilotwave", "frobnicate"]), EXIT_CONFIG);
    }
}
