//! Command-line front end.
//!
//! Exit codes: 0 success or accepted pairing, 1 rejected pairing or
//! infeasible calibration, 2 configuration or input error.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::adversary::AttackerProfile;
use crate::chanmodel::{EnvironmentPreset, Trajectory, TrajectoryKind};
use crate::detect::{analyze_valley, geometry_violations, ValleyReport, VariationReport};
use crate::error::{Error, Result};
use crate::harness::{
    attacker_or_default, calibrate_environment, environment_preset, imperfect_swipe_suite, monte_carlo, roc_report, run_scenario,
    ScenarioConfig, DEFAULT_RUNS,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_REJECTED: i32 = 1;
pub const EXIT_ERROR: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "proxpair", version, about = "Swipe-based proximity pairing simulator")]
pub struct Cli {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    /// Scenario file (TOML).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Base seed; overrides the file's `seed`.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Monte-Carlo run count.
    #[arg(long, global = true)]
    pub runs: Option<usize>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Dotted `key=value` override, applied after the file; repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// One pairing; writes the transcript.
    Pair,
    /// Repeated pairings; writes per-run CSV and a JSON summary.
    Montecarlo,
    /// Legitimate versus attacker populations and their ROC curve.
    Roc {
        #[arg(long, default_value_t = 0.10)]
        max_fpr: f64,
        #[arg(long, default_value_t = 0.90)]
        min_tpr: f64,
    },
    /// Valley and variation checks on a `time_s,pathloss_db` trace.
    Analyze { trace: PathBuf },
    /// Recommends a variation threshold for the configured environment.
    Calibrate {
        #[arg(long, default_value_t = 0.10)]
        target_fpr: f64,
        #[arg(long, default_value_t = 0.90)]
        target_tpr: f64,
    },
    /// Lists environment, trajectory and attacker presets.
    Presets,
    /// Valley detectability of the imperfect swipe presets.
    Swipes,
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_ERROR } else { EXIT_OK };
            let text = e.render().to_string();
            let _ = if code == EXIT_OK { stdout.write_all(text.as_bytes()) } else { stderr.write_all(text.as_bytes()) };
            return code;
        }
    };
    match execute(&cli, stdout) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            EXIT_ERROR
        }
    }
}

fn load_scenario(common: &CommonArgs) -> Result<ScenarioConfig> {
    let text = match &common.config {
        Some(p) => std::fs::read_to_string(p)
            .map_err(|e| Error::config("config", format!("cannot read {}: {e}", p.display())))?,
        None => String::new(),
    };
    let mut overrides = common.overrides.clone();
    if let Some(seed) = common.seed {
        overrides.push(format!("seed={seed}"));
    }
    ScenarioConfig::from_toml_str(&text, &overrides)
}

fn emit(common: &CommonArgs, file: &str, body: &str, stdout: &mut dyn Write) -> Result<()> {
    match &common.out {
        Some(dir) => write_file(dir, file, body.as_bytes()),
        None => stdout
            .write_all(body.as_bytes())
            .and_then(|_| stdout.write_all(b"\n"))
            .map_err(|e| Error::Input(e.to_string())),
    }
}

fn write_file(dir: &Path, file: &str, bytes: &[u8]) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::Input(format!("cannot create {}: {e}", dir.display())))?;
    let path = dir.join(file);
    std::fs::write(&path, bytes).map_err(|e| Error::Input(format!("cannot write {}: {e}", path.display())))
}

fn to_json<T: Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("value serializes")
}

fn execute(cli: &Cli, stdout: &mut dyn Write) -> Result<i32> {
    let common = &cli.common;
    match &cli.command {
        Command::Pair => {
            let cfg = load_scenario(common)?;
            let run = run_scenario(&cfg)?;
            emit(common, "transcript.json", &run.outcome.to_json(), stdout)?;
            Ok(if run.outcome.accepted { EXIT_OK } else { EXIT_REJECTED })
        }
        Command::Montecarlo => {
            let cfg = load_scenario(common)?;
            let mc = monte_carlo(&cfg, common.runs.unwrap_or(DEFAULT_RUNS))?;
            if let Some(dir) = &common.out {
                let mut csv = Vec::new();
                mc.write_csv(&mut csv)?;
                write_file(dir, "runs.csv", &csv)?;
            }
            emit(common, "summary.json", &mc.summary_json(), stdout)?;
            Ok(EXIT_OK)
        }
        Command::Roc { max_fpr, min_tpr } => {
            let cfg = load_scenario(common)?;
            let runs = common.runs.unwrap_or(DEFAULT_RUNS);
            let attacker = attacker_or_default(&cfg)?;
            let legit = monte_carlo(&ScenarioConfig { attacker: None, ..cfg.clone() }, runs)?;
            let attack = monte_carlo(&ScenarioConfig { attacker: Some(attacker), ..cfg }, runs)?;
            let report = roc_report(&legit, &attack, *max_fpr, *min_tpr)?;
            emit(common, "roc.json", &to_json(&report), stdout)?;
            Ok(EXIT_OK)
        }
        Command::Analyze { trace } => {
            let cfg = load_scenario(common)?;
            let report = analyze_trace(trace, &cfg)?;
            emit(common, "analysis.json", &to_json(&report), stdout)?;
            Ok(EXIT_OK)
        }
        Command::Calibrate { target_fpr, target_tpr } => {
            let cfg = load_scenario(common)?;
            let c = calibrate_environment(&cfg, common.runs.unwrap_or(DEFAULT_RUNS), *target_fpr, *target_tpr)?;
            emit(common, "calibration.json", &to_json(&c), stdout)?;
            Ok(if c.feasible { EXIT_OK } else { EXIT_REJECTED })
        }
        Command::Presets => {
            emit(common, "presets.json", &to_json(&presets()?), stdout)?;
            Ok(EXIT_OK)
        }
        Command::Swipes => {
            let cfg = load_scenario(common)?;
            let rows = imperfect_swipe_suite(&cfg, common.runs.unwrap_or(200))?;
            emit(common, "swipes.json", &to_json(&rows), stdout)?;
            Ok(EXIT_OK)
        }
    }
}

#[derive(Debug, Serialize)]
struct PresetListing {
    environments: Vec<crate::harness::EnvironmentInfo>,
    trajectories: Vec<Trajectory>,
    attackers: Vec<AttackerProfile>,
}

fn presets() -> Result<PresetListing> {
    Ok(PresetListing {
        environments: EnvironmentPreset::ALL
            .iter()
            .map(|e| environment_preset(e.as_str()))
            .collect::<Result<_>>()?,
        trajectories: TrajectoryKind::ALL.iter().map(|&k| Trajectory::preset(k)).collect(),
        attackers: crate::adversary::AttackerKind::ALL
            .iter()
            .map(|&k| crate::harness::attacker_preset(k, crate::harness::REFERENCE_ATTACKER_DISTANCE_M))
            .collect(),
    })
}

/// Output of `analyze`.
#[derive(Debug, Serialize)]
pub struct TraceAnalysis {
    pub samples: usize,
    pub period_s: f64,
    pub valley: ValleyReport,
    pub geometry_pass: bool,
    pub geometry_violations: Vec<&'static str>,
    pub variation: VariationReport,
    pub accepted: bool,
}

/// Reads a `time_s,pathloss_db` CSV. Rows are numbered from 1 after the header.
pub fn read_trace(path: &Path) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::Input(format!("cannot read {}: {e}", path.display())))?;
    let headers = rdr.headers().map_err(|e| Error::Input(format!("bad header: {e}")))?.clone();
    if headers.iter().collect::<Vec<_>>() != ["time_s", "pathloss_db"] {
        return Err(Error::Input("expected header `time_s,pathloss_db`".into()));
    }
    let (mut t, mut y) = (Vec::new(), Vec::new());
    for (i, rec) in rdr.records().enumerate() {
        let row = i + 1;
        let rec = rec.map_err(|e| Error::Input(format!("row {row}: {e}")))?;
        let field = |k: usize| -> Result<f64> {
            rec.get(k)
                .and_then(|s| s.parse::<f64>().ok())
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::Input(format!("row {row}: column {} is not a finite number", k + 1)))
        };
        let (ti, yi) = (field(0)?, field(1)?);
        if let Some(&prev) = t.last() {
            if ti <= prev {
                return Err(Error::Input(format!("row {row}: time_s is not increasing")));
            }
        }
        t.push(ti);
        y.push(yi);
    }
    if t.len() < 2 {
        return Err(Error::Input("trace needs at least two rows".into()));
    }
    Ok((t, y))
}

pub fn analyze_trace(path: &Path, cfg: &ScenarioConfig) -> Result<TraceAnalysis> {
    let (t, y) = read_trace(path)?;
    let params = cfg.analysis();
    params.validate()?;
    let period_s = (t[t.len() - 1] - t[0]) / (t.len() - 1) as f64;
    let analysis = analyze_valley(&y, period_s, &params)?;
    let variation = analysis.variation_of(&y, params.variation_threshold_db);
    let accepted = analysis.geometry_pass && variation.pass;
    Ok(TraceAnalysis {
        samples: y.len(),
        period_s,
        geometry_violations: geometry_violations(&analysis.report, &params.gates),
        geometry_pass: analysis.geometry_pass,
        valley: analysis.report,
        variation,
        accepted,
    })
}
