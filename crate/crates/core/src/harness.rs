//! Scenario configuration, Monte-Carlo execution and ROC evaluation.
//!
//! A [`ScenarioConfig`] is read from TOML. Sub-tables for the trajectory and
//! the attacker start from the preset named by their `kind` key, so a file
//! containing only `[trajectory] kind = "slow-swipe"` gets the full slow
//! preset. Dotted `key=value` overrides are applied to the parsed document
//! before presets are expanded.
//!
//! ROC polarity: a positive is a rejected attacker run. `fpr` is the share of
//! legitimate runs whose statistic exceeds the threshold and `tpr` the share
//! of attacker runs that do.

use std::collections::BTreeMap;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::adversary::{AttackerKind, AttackerProfile};
use crate::chanmodel::{ChannelParams, EnvironmentPreset, Trajectory, TrajectoryKind};
use crate::detect::{AnalysisParams, ValleyDetectionParams, ValleyGates, VariationMode};
use crate::error::{Error, Result};
use crate::protocol::{pair, DeviceConfig, DeviceVerdict, FailedCheck, PairingConfig, PairingOutcome, ProbeSchedule};
use crate::rng::run_seed;

pub const DEFAULT_RUNS: usize = 1000;
pub const ROC_POINTS: usize = 200;
/// Attacker distance used for the randomization check when no attacker is configured.
pub const REFERENCE_ATTACKER_DISTANCE_M: f64 = 2.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub environment: EnvironmentPreset,
    pub trajectory: Trajectory,
    pub attacker: Option<AttackerProfile>,
    pub n_probes: usize,
    pub rate_hz: f64,
    pub tx_range_dbm: (f64, f64),
    pub detector: ValleyDetectionParams,
    pub gates: ValleyGates,
    pub variation_threshold_db: f64,
    pub variation_mode: VariationMode,
    pub smoothing_window: usize,
    /// Enforce that the Tx-power spread exceeds the attacker link's fading.
    pub require_randomization: bool,
    pub seed: u64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        let schedule = ProbeSchedule::default();
        let analysis = AnalysisParams::default();
        Self {
            environment: EnvironmentPreset::Office,
            trajectory: Trajectory::symmetric(),
            attacker: None,
            n_probes: schedule.n_probes,
            rate_hz: schedule.rate_hz,
            tx_range_dbm: schedule.tx_range_dbm,
            detector: analysis.detector,
            gates: analysis.gates,
            variation_threshold_db: analysis.variation_threshold_db,
            variation_mode: analysis.variation_mode,
            smoothing_window: analysis.smoothing_window,
            require_randomization: true,
            seed: 0,
        }
    }
}

impl ScenarioConfig {
    /// Parses TOML, applies `key=value` overrides in order, expands presets
    /// and validates.
    pub fn from_toml_str<S: AsRef<str>>(text: &str, overrides: &[S]) -> Result<Self> {
        let mut doc: toml::Table =
            toml::from_str(text).map_err(|e| Error::config("config", e.message().to_string()))?;
        for o in overrides {
            apply_override(&mut doc, o.as_ref())?;
        }
        Self::from_table(doc)
    }

    pub fn from_table(mut doc: toml::Table) -> Result<Self> {
        expand_presets(&mut doc)?;
        let cfg: ScenarioConfig = toml::Value::Table(doc).try_into().map_err(|e: toml::de::Error| {
            let (key, message) = split_serde_error(&e.to_string());
            Error::Config { key, message }
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("scenario serializes")
    }

    pub fn channel(&self) -> ChannelParams {
        self.environment.channel_params()
    }

    pub fn analysis(&self) -> AnalysisParams {
        AnalysisParams {
            detector: self.detector,
            smoothing_window: self.smoothing_window,
            gates: self.gates,
            variation_threshold_db: self.variation_threshold_db,
            variation_mode: self.variation_mode,
            ..AnalysisParams::default()
        }
    }

    pub fn pairing_config(&self) -> PairingConfig {
        let device = DeviceConfig {
            analysis: self.analysis(),
            ..DeviceConfig::default()
        };
        PairingConfig {
            trajectory: self.trajectory.clone(),
            channel: self.channel(),
            schedule: ProbeSchedule {
                n_probes: self.n_probes,
                rate_hz: self.rate_hz,
                tx_range_dbm: self.tx_range_dbm,
            },
            device_a: device.clone(),
            device_b: device,
        }
    }

    /// Fading std of the attacker link at its nominal distance.
    pub fn sigma_am_db(&self) -> f64 {
        let d = self
            .attacker
            .as_ref()
            .map_or(REFERENCE_ATTACKER_DISTANCE_M, AttackerProfile::distance_to_b);
        self.channel().fading_sigma_at(d)
    }

    pub fn tx_std_db(&self) -> f64 {
        (self.tx_range_dbm.1 - self.tx_range_dbm.0) / 12f64.sqrt()
    }

    pub fn validate(&self) -> Result<()> {
        self.pairing_config().validate()?;
        if let Some(m) = &self.attacker {
            m.validate(0.0)?;
        }
        if self.require_randomization {
            let (st, sam) = (self.tx_std_db(), self.sigma_am_db());
            if !(st > sam) {
                return Err(Error::config(
                    "tx_range_dbm",
                    format!("Tx std {st:.3} dB does not exceed the attacker-link fading std {sam:.3} dB"),
                ));
            }
        }
        Ok(())
    }
}

fn split_serde_error(msg: &str) -> (String, String) {
    let (body, path) = match msg.rsplit_once("\nin `") {
        Some((body, rest)) => (body.trim(), rest.trim().trim_end_matches('`').to_string()),
        None => (msg.trim(), String::new()),
    };
    let field = body
        .strip_prefix("unknown field `")
        .and_then(|r| r.split('`').next())
        .map(str::to_string);
    let key = match (path.is_empty(), field) {
        (true, Some(f)) => f,
        (false, Some(f)) => format!("{path}.{f}"),
        (false, None) => path,
        (true, None) => "config".to_string(),
    };
    (key, body.to_string())
}

/// Sets `a.b.c=value` in `doc`. The value is parsed as a TOML value and
/// taken as a bare string if that fails.
pub fn apply_override(doc: &mut toml::Table, assignment: &str) -> Result<()> {
    let (path, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::config(assignment, "override must have the form key=value"))?;
    let path = path.trim();
    let raw = raw.trim();
    if path.is_empty() || path.split('.').any(str::is_empty) {
        return Err(Error::config(assignment, "empty key segment"));
    }
    let value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    let segments: Vec<&str> = path.split('.').collect();
    let (last, parents) = segments.split_last().expect("nonempty path");
    let mut table = doc;
    for (i, seg) in parents.iter().enumerate() {
        let entry = table
            .entry(seg.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = entry
            .as_table_mut()
            .ok_or_else(|| Error::config(segments[..=i].join("."), "is not a table"))?;
    }
    table.insert(last.to_string(), value);
    Ok(())
}

fn merge_over(base: toml::Table, user: &toml::Table) -> toml::Table {
    let mut out = base;
    for (k, v) in user {
        out.insert(k.clone(), v.clone());
    }
    out
}

fn preset_kind<T: for<'de> Deserialize<'de>>(table: &toml::Table, section: &str) -> Result<Option<T>> {
    match table.get("kind") {
        None => Ok(None),
        Some(v) => v
            .clone()
            .try_into()
            .map(Some)
            .map_err(|e: toml::de::Error| Error::config(format!("{section}.kind"), e.message().trim().to_string())),
    }
}

fn to_table<T: Serialize>(v: &T) -> toml::Table {
    toml::Table::try_from(v).expect("preset serializes to a table")
}

fn expand_presets(doc: &mut toml::Table) -> Result<()> {
    if let Some(toml::Value::Table(user)) = doc.get("trajectory") {
        if let Some(kind) = preset_kind::<TrajectoryKind>(user, "trajectory")? {
            let merged = merge_over(to_table(&Trajectory::preset(kind)), user);
            doc.insert("trajectory".into(), toml::Value::Table(merged));
        }
    }
    if let Some(toml::Value::Table(user)) = doc.get("attacker") {
        let kind = preset_kind::<AttackerKind>(user, "attacker")?.unwrap_or(AttackerKind::General);
        let merged = merge_over(to_table(&attacker_preset(kind, REFERENCE_ATTACKER_DISTANCE_M)), user);
        doc.insert("attacker".into(), toml::Value::Table(merged));
    }
    Ok(())
}

/// Default profile of each attacker kind at `distance_m`.
pub fn attacker_preset(kind: AttackerKind, distance_m: f64) -> AttackerProfile {
    match kind {
        AttackerKind::General => AttackerProfile::general(distance_m),
        AttackerKind::Advanced => AttackerProfile::advanced(distance_m, 0.05),
        AttackerKind::Supreme => AttackerProfile::supreme(distance_m),
        AttackerKind::FixedPowerExploit => AttackerProfile::fixed_power_exploit(distance_m),
        AttackerKind::Averaging => AttackerProfile::averaging(distance_m),
    }
}

/// Per-run metrics; one CSV row.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunMetrics {
    pub seed: u64,
    pub accepted: bool,
    pub failed_check: Option<FailedCheck>,
    /// Largest forward residual std across both devices; infinite when a
    /// device found no valley.
    pub residual_std_fwd: f64,
    pub residual_std_rev: f64,
    /// Valley depth as measured by A; 0 when none was found.
    pub depth_db: f64,
    pub width_s: f64,
}

fn worst(devices: &[DeviceVerdict], pick: impl Fn(&DeviceVerdict) -> Option<f64>) -> f64 {
    if devices.is_empty() {
        return f64::INFINITY;
    }
    devices
        .iter()
        .map(|d| pick(d).unwrap_or(f64::INFINITY))
        .fold(f64::NEG_INFINITY, f64::max)
}

impl RunMetrics {
    pub fn from_outcome(seed: u64, outcome: &PairingOutcome) -> Self {
        let a = outcome.devices.first();
        let found = a.is_some_and(|d| d.valley.found);
        Self {
            seed,
            accepted: outcome.accepted,
            failed_check: outcome.failed_check,
            residual_std_fwd: worst(&outcome.devices, |d| d.variation_fwd.residual_std_db),
            residual_std_rev: worst(&outcome.devices, |d| d.variation_rev.residual_std_db),
            depth_db: if found { a.map_or(0.0, |d| d.valley.depth_db) } else { 0.0 },
            width_s: if found { a.map_or(0.0, |d| d.valley.width_s) } else { 0.0 },
        }
    }

    /// Variation statistic compared against the threshold.
    pub fn statistic(&self) -> f64 {
        self.residual_std_fwd.max(self.residual_std_rev)
    }
}

/// One run of a scenario at `seed`.
#[derive(Debug, Clone)]
pub struct ScenarioRun {
    pub outcome: PairingOutcome,
    pub metrics: RunMetrics,
}

pub fn run_scenario_with_seed(cfg: &ScenarioConfig, seed: u64) -> Result<ScenarioRun> {
    cfg.validate()?;
    run_unchecked(&cfg.pairing_config(), cfg.attacker.as_ref(), seed)
}

/// Runs the scenario once at its configured seed.
pub fn run_scenario(cfg: &ScenarioConfig) -> Result<ScenarioRun> {
    run_scenario_with_seed(cfg, cfg.seed)
}

fn run_unchecked(pc: &PairingConfig, m: Option<&AttackerProfile>, seed: u64) -> Result<ScenarioRun> {
    let outcome = pair(pc, m, seed)?;
    let metrics = RunMetrics::from_outcome(seed, &outcome);
    Ok(ScenarioRun { outcome, metrics })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    pub runs: usize,
    pub accepted: usize,
    pub accept_rate: f64,
    /// Runs in which both devices found a valley passing the geometry gates.
    pub valley_pass_rate: f64,
    /// Mean statistic over runs where it is finite.
    pub mean_residual_std_db: Option<f64>,
    pub mean_depth_db: Option<f64>,
    pub mean_width_s: Option<f64>,
    pub failed_checks: BTreeMap<String, usize>,
}

#[derive(Debug, Clone)]
pub struct MonteCarloResult {
    pub runs: Vec<RunMetrics>,
    /// Per-run `true` when the valley check passed on both devices.
    pub valley_pass: Vec<bool>,
    pub summary: Summary,
}

impl MonteCarloResult {
    pub fn statistics(&self) -> Vec<f64> {
        self.runs.iter().map(RunMetrics::statistic).collect()
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        write_runs_csv(&self.runs, w)
    }

    pub fn summary_json(&self) -> String {
        serde_json::to_string_pretty(&self.summary).expect("summary serializes")
    }
}

fn mean_of(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (mut s, mut n) = (0.0, 0usize);
    for v in values.filter(|v| v.is_finite()) {
        s += v;
        n += 1;
    }
    (n > 0).then(|| s / n as f64)
}

pub fn summarize(runs: &[RunMetrics], valley_pass: &[bool]) -> Summary {
    let n = runs.len();
    let accepted = runs.iter().filter(|r| r.accepted).count();
    let mut failed_checks = BTreeMap::new();
    for f in runs.iter().filter_map(|r| r.failed_check) {
        *failed_checks.entry(f.as_str().to_string()).or_insert(0) += 1;
    }
    let found: Vec<&RunMetrics> = runs.iter().filter(|r| r.depth_db > 0.0).collect();
    Summary {
        runs: n,
        accepted,
        accept_rate: accepted as f64 / n as f64,
        valley_pass_rate: valley_pass.iter().filter(|&&v| v).count() as f64 / n as f64,
        mean_residual_std_db: mean_of(runs.iter().map(RunMetrics::statistic)),
        mean_depth_db: mean_of(found.iter().map(|r| r.depth_db)),
        mean_width_s: mean_of(found.iter().map(|r| r.width_s)),
        failed_checks,
    }
}

fn valley_passed(outcome: &PairingOutcome) -> bool {
    !outcome.devices.is_empty()
        && outcome
            .devices
            .iter()
            .all(|d| d.valley.found && d.geometry_violations.is_empty())
}

/// Runs `n_runs` independent pairings in parallel; run `k` uses
/// `run_seed(cfg.seed, k)`. Results are in run order.
pub fn monte_carlo(cfg: &ScenarioConfig, n_runs: usize) -> Result<MonteCarloResult> {
    if n_runs == 0 {
        return Err(Error::config("runs", "must be >= 1"));
    }
    cfg.validate()?;
    let pc = cfg.pairing_config();
    let m = cfg.attacker.as_ref();
    let results: Vec<(RunMetrics, bool)> = (0..n_runs as u64)
        .into_par_iter()
        .map(|k| {
            let run = run_unchecked(&pc, m, run_seed(cfg.seed, k))?;
            let pass = valley_passed(&run.outcome);
            Ok((run.metrics, pass))
        })
        .collect::<Result<_>>()?;
    let (runs, valley_pass): (Vec<_>, Vec<_>) = results.into_iter().unzip();
    let summary = summarize(&runs, &valley_pass);
    Ok(MonteCarloResult { runs, valley_pass, summary })
}

fn fmt_f64(v: f64) -> String {
    if v.is_finite() {
        v.to_string()
    } else if v > 0.0 {
        "inf".into()
    } else {
        "-inf".into()
    }
}

pub fn write_runs_csv<W: Write>(runs: &[RunMetrics], w: W) -> Result<()> {
    let io = |e: csv::Error| Error::Input(e.to_string());
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record([
        "seed",
        "accepted",
        "failed_check",
        "residual_std_fwd",
        "residual_std_rev",
        "depth_db",
        "width_s",
    ])
    .map_err(io)?;
    for r in runs {
        wr.write_record([
            r.seed.to_string(),
            r.accepted.to_string(),
            r.failed_check.map_or(String::new(), |f| f.as_str().to_string()),
            fmt_f64(r.residual_std_fwd),
            fmt_f64(r.residual_std_rev),
            fmt_f64(r.depth_db),
            fmt_f64(r.width_s),
        ])
        .map_err(io)?;
    }
    wr.flush().map_err(|e| Error::Input(e.to_string()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RocPoint {
    pub threshold_db: f64,
    pub fpr: f64,
    pub tpr: f64,
}

fn exceed_rate(values: &[f64], tau: f64) -> f64 {
    values.iter().filter(|&&v| v > tau).count() as f64 / values.len() as f64
}

fn check_populations(legit: &[f64], attack: &[f64]) -> Result<()> {
    if legit.is_empty() || attack.is_empty() {
        return Err(Error::Input("ROC needs nonempty legitimate and attacker populations".into()));
    }
    if legit.iter().chain(attack).any(|v| v.is_nan()) {
        return Err(Error::Input("ROC statistics contain NaN".into()));
    }
    Ok(())
}

/// `count` evenly spaced thresholds spanning the finite values of both populations.
pub fn pooled_thresholds(legit: &[f64], attack: &[f64], count: usize) -> Vec<f64> {
    let finite = || legit.iter().chain(attack).copied().filter(|v| v.is_finite());
    let lo = finite().fold(f64::INFINITY, f64::min);
    let hi = finite().fold(f64::NEG_INFINITY, f64::max);
    if !lo.is_finite() {
        return vec![0.0];
    }
    if count < 2 || hi == lo {
        return vec![lo];
    }
    (0..count)
        .map(|i| lo + (hi - lo) * i as f64 / (count - 1) as f64)
        .collect()
}

/// Evaluates `thresholds`; infinite statistics always count as rejected.
pub fn roc_curve(legit: &[f64], attack: &[f64], thresholds: &[f64]) -> Result<Vec<RocPoint>> {
    check_populations(legit, attack)?;
    Ok(thresholds
        .iter()
        .map(|&t| RocPoint {
            threshold_db: t,
            fpr: exceed_rate(legit, t),
            tpr: exceed_rate(attack, t),
        })
        .collect())
}

/// Probability that a random attacker statistic exceeds a random legitimate
/// one, ties counting one half.
pub fn auc(legit: &[f64], attack: &[f64]) -> Result<f64> {
    check_populations(legit, attack)?;
    let mut l = legit.to_vec();
    l.sort_by(f64::total_cmp);
    let mut score = 0.0;
    for &a in attack {
        let below = l.partition_point(|&x| x < a);
        let not_above = l.partition_point(|&x| x <= a);
        score += below as f64 + 0.5 * (not_above - below) as f64;
    }
    Ok(score / (l.len() as f64 * attack.len() as f64))
}

/// First point meeting `fpr < max_fpr` and `tpr > min_tpr`.
pub fn meets_target(points: &[RocPoint], max_fpr: f64, min_tpr: f64) -> Option<RocPoint> {
    points.iter().copied().find(|p| p.fpr < max_fpr && p.tpr > min_tpr)
}

#[derive(Debug, Clone, Serialize)]
pub struct RocReport {
    pub legit_runs: usize,
    pub attack_runs: usize,
    pub auc: f64,
    /// End-to-end accept rates, independent of the threshold sweep.
    pub legit_accept_rate: f64,
    pub attack_accept_rate: f64,
    pub target_point: Option<RocPoint>,
    pub points: Vec<RocPoint>,
}

pub fn roc_report(legit: &MonteCarloResult, attack: &MonteCarloResult, max_fpr: f64, min_tpr: f64) -> Result<RocReport> {
    let (ls, as_) = (legit.statistics(), attack.statistics());
    let points = roc_curve(&ls, &as_, &pooled_thresholds(&ls, &as_, ROC_POINTS))?;
    Ok(RocReport {
        legit_runs: ls.len(),
        attack_runs: as_.len(),
        auc: auc(&ls, &as_)?,
        legit_accept_rate: legit.summary.accept_rate,
        attack_accept_rate: attack.summary.accept_rate,
        target_point: meets_target(&points, max_fpr, min_tpr),
        points,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Calibration {
    pub feasible: bool,
    /// Recommended threshold, or the best achievable one when infeasible.
    pub threshold_db: f64,
    pub fpr: f64,
    pub tpr: f64,
    /// Thresholds in `[lo, hi)` meet both targets.
    pub interval_db: Option<(f64, f64)>,
}

/// Picks the midpoint of the threshold interval meeting `fpr <= target_fpr`
/// and `tpr >= target_tpr`. When no threshold does, reports the one with the
/// highest tpr among those satisfying the fpr target.
pub fn calibrate_threshold(legit: &[f64], attack: &[f64], target_fpr: f64, target_tpr: f64) -> Result<Calibration> {
    check_populations(legit, attack)?;
    if !((0.0..=1.0).contains(&target_fpr) && (0.0..=1.0).contains(&target_tpr)) {
        return Err(Error::config("targets", "rates must lie in [0, 1]"));
    }
    let mut l = legit.to_vec();
    let mut a = attack.to_vec();
    l.sort_by(f64::total_cmp);
    a.sort_by(f64::total_cmp);
    let eps = 1e-9;
    let allowed = ((target_fpr * l.len() as f64) + eps).floor() as usize;
    let lo = if allowed >= l.len() { f64::NEG_INFINITY } else { l[l.len() - 1 - allowed] };
    let needed = ((target_tpr * a.len() as f64) - eps).ceil().max(0.0) as usize;
    let hi = if needed == 0 { f64::INFINITY } else { a[a.len() - needed] };
    let finite = || l.iter().chain(&a).copied().filter(|v| v.is_finite());
    let point = |t: f64| (exceed_rate(&l, t), exceed_rate(&a, t));

    if lo < hi {
        let lo_eff = if lo.is_finite() { lo } else { finite().fold(f64::INFINITY, f64::min).min(hi) };
        let hi_eff = if hi.is_finite() { hi } else { finite().fold(f64::NEG_INFINITY, f64::max).max(lo) };
        let mut t = if lo_eff.is_finite() && hi_eff.is_finite() { 0.5 * (lo_eff + hi_eff) } else { 0.0 };
        if !(t >= lo && t < hi) {
            t = if lo.is_finite() { lo } else { hi - 1.0 };
        }
        let (fpr, tpr) = point(t);
        return Ok(Calibration {
            feasible: true,
            threshold_db: t,
            fpr,
            tpr,
            interval_db: Some((lo, hi)),
        });
    }
    let t = if lo.is_finite() { lo } else { 0.0 };
    let (fpr, tpr) = point(t);
    Ok(Calibration {
        feasible: false,
        threshold_db: t,
        fpr,
        tpr,
        interval_db: None,
    })
}

/// A named environment with its recommended settings.
#[derive(Debug, Clone, Serialize)]
pub struct EnvironmentInfo {
    pub name: &'static str,
    pub channel: ChannelParams,
    pub fading_table: Vec<(f64, f64)>,
    pub gates: ValleyGates,
    /// Smallest attacker distance at which the ROC target is met.
    pub min_attacker_distance_m: f64,
}

pub fn environment_preset(name: &str) -> Result<EnvironmentInfo> {
    let env: EnvironmentPreset = name.parse()?;
    Ok(EnvironmentInfo {
        name: env.as_str(),
        channel: env.channel_params(),
        fading_table: env.fading_knots().to_vec(),
        gates: ValleyGates::default(),
        min_attacker_distance_m: match env {
            EnvironmentPreset::Office => 2.0,
            EnvironmentPreset::Lobby | EnvironmentPreset::Dining => 3.0,
        },
    })
}

/// The configured attacker, or a supreme attacker at the environment's
/// recommended distance.
pub fn attacker_or_default(base: &ScenarioConfig) -> Result<AttackerProfile> {
    match &base.attacker {
        Some(m) => Ok(m.clone()),
        None => Ok(AttackerProfile::supreme(
            environment_preset(base.environment.as_str())?.min_attacker_distance_m,
        )),
    }
}

/// Legitimate and attacker populations (see [`attacker_or_default`]),
/// followed by threshold calibration.
pub fn calibrate_environment(
    base: &ScenarioConfig,
    runs: usize,
    target_fpr: f64,
    target_tpr: f64,
) -> Result<Calibration> {
    let legit_cfg = ScenarioConfig { attacker: None, ..base.clone() };
    let attack_cfg = ScenarioConfig {
        attacker: Some(attacker_or_default(base)?),
        ..base.clone()
    };
    let legit = monte_carlo(&legit_cfg, runs)?;
    let attack = monte_carlo(&attack_cfg, runs)?;
    calibrate_threshold(&legit.statistics(), &attack.statistics(), target_fpr, target_tpr)
}

#[derive(Debug, Clone, Serialize)]
pub struct SwipeRow {
    pub trajectory: TrajectoryKind,
    pub runs: usize,
    /// Runs where both devices found a valley that passed the geometry gates.
    pub valley_detected: usize,
    pub detection_rate: f64,
    pub accepted: usize,
    pub mean_width_s: Option<f64>,
    pub mean_depth_db: Option<f64>,
}

pub const IMPERFECT_SWIPES: [TrajectoryKind; 4] = [
    TrajectoryKind::AsymmetricSwipe,
    TrajectoryKind::DiagonalSwipe,
    TrajectoryKind::SlowSwipe,
    TrajectoryKind::FarSwipe,
];

/// Valley detectability of each imperfect swipe, legitimate devices only.
pub fn imperfect_swipe_suite(base: &ScenarioConfig, runs: usize) -> Result<Vec<SwipeRow>> {
    IMPERFECT_SWIPES
        .iter()
        .map(|&kind| {
            let cfg = ScenarioConfig {
                trajectory: Trajectory::preset(kind),
                attacker: None,
                ..base.clone()
            };
            let mc = monte_carlo(&cfg, runs)?;
            let detected = mc.valley_pass.iter().filter(|&&v| v).count();
            Ok(SwipeRow {
                trajectory: kind,
                runs,
                valley_detected: detected,
                detection_rate: detected as f64 / runs as f64,
                accepted: mc.summary.accepted,
                mean_width_s: mc.summary.mean_width_s,
                mean_depth_db: mc.summary.mean_depth_db,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_is_the_default_scenario() {
        let cfg = ScenarioConfig::from_toml_str::<&str>("", &[]).unwrap();
        assert_eq!(cfg, ScenarioConfig::default());
    }

    #[test]
    fn trajectory_kind_pulls_in_the_whole_preset() {
        let cfg = ScenarioConfig::from_toml_str::<&str>("[trajectory]\nkind = \"slow-swipe\"\n", &[]).unwrap();
        assert_eq!(cfg.trajectory, Trajectory::slow());
        let cfg = ScenarioConfig::from_toml_str(
            "[trajectory]\nkind = \"far-swipe\"\n",
            &["trajectory.perp_offset_m=0.7"],
        )
        .unwrap();
        assert_eq!(cfg.trajectory.perp_offset_m, 0.7);
        assert_eq!(cfg.trajectory.kind, TrajectoryKind::FarSwipe);
    }

    #[test]
    fn attacker_kind_sets_its_noise_defaults() {
        let cfg =
            ScenarioConfig::from_toml_str::<&str>("[attacker]\nkind = \"supreme\"\ndistance_m = 3.0\n", &[]).unwrap();
        assert_eq!(cfg.attacker, Some(AttackerProfile::supreme(3.0)));
    }

    #[test]
    fn overrides_apply_last_one_wins() {
        let cfg = ScenarioConfig::from_toml_str(
            "[detector]\nlag = 80\n",
            &["detector.lag=90", "detector.lag=70", "environment=lobby"],
        )
        .unwrap();
        assert_eq!(cfg.detector.lag, 70);
        assert_eq!(cfg.environment, EnvironmentPreset::Lobby);
    }

    #[test]
    fn bad_values_name_their_key() {
        let key_of = |text: &str, ov: &[&str]| match ScenarioConfig::from_toml_str(text, ov) {
            Err(Error::Config { key, .. }) => key,
            other => panic!("expected config error, got {other:?}"),
        };
        assert_eq!(key_of("[detector]\nlag = -5\n", &[]), "detector.lag");
        assert_eq!(key_of("[detector]\nlgg = 5\n", &[]), "detector.lgg");
        assert_eq!(key_of("", &["detector.lag=1"]), "device_a.analysis.detector.lag");
        assert_eq!(key_of("bogus = 1\n", &[]), "bogus");
        assert_eq!(key_of("", &["nokey"]), "nokey");
    }

    #[test]
    fn fixed_tx_with_randomization_required_is_rejected() {
        let err = ScenarioConfig::from_toml_str::<&str>("tx_range_dbm = [10.0, 10.0]\n", &[]).unwrap_err();
        assert!(matches!(err, Error::Config { ref key, .. } if key == "tx_range_dbm"), "{err}");
        let ok = ScenarioConfig::from_toml_str::<&str>(
            "tx_range_dbm = [10.0, 10.0]\nrequire_randomization = false\n",
            &[],
        );
        assert!(ok.is_ok());
    }

    #[test]
    fn roc_of_separated_populations() {
        let pts = roc_curve(&[0.5; 10], &[2.0; 10], &[1.27]).unwrap();
        assert_eq!(pts[0], RocPoint { threshold_db: 1.27, fpr: 0.0, tpr: 1.0 });
        assert_eq!(auc(&[0.5; 10], &[2.0; 10]).unwrap(), 1.0);
    }

    #[test]
    fn roc_counts_infinite_statistics_as_rejected() {
        let pts = roc_curve(&[0.5], &[f64::INFINITY], &[1e9]).unwrap();
        assert_eq!(pts[0].tpr, 1.0);
    }

    #[test]
    fn roc_rejects_empty_populations() {
        assert!(roc_curve(&[], &[1.0], &[1.0]).is_err());
        assert!(roc_curve(&[1.0], &[], &[1.0]).is_err());
        assert!(auc(&[], &[1.0]).is_err());
    }

    #[test]
    fn identical_populations_sit_on_the_diagonal() {
        let v: Vec<f64> = (0..500).map(|i| i as f64 / 10.0).collect();
        let pts = roc_curve(&v, &v, &pooled_thresholds(&v, &v, ROC_POINTS)).unwrap();
        assert_eq!(pts.len(), ROC_POINTS);
        assert!(pts.iter().all(|p| p.fpr == p.tpr));
        assert_eq!(auc(&v, &v).unwrap(), 0.5);
    }

    #[test]
    fn roc_is_invariant_under_monotone_transforms() {
        let l = [0.3, 0.7, 0.9, 1.1, 1.4];
        let a = [0.8, 1.2, 1.5, 2.0, f64::INFINITY];
        let f = |v: f64| v.exp() * 3.0 + 1.0;
        let (lt, at): (Vec<f64>, Vec<f64>) = (l.iter().map(|&v| f(v)).collect(), a.iter().map(|&v| f(v)).collect());
        let taus = [0.5, 0.85, 1.3, 1.7];
        let p1 = roc_curve(&l, &a, &taus).unwrap();
        let p2 = roc_curve(&lt, &at, &taus.map(f)).unwrap();
        for (x, y) in p1.iter().zip(&p2) {
            assert_eq!((x.fpr, x.tpr), (y.fpr, y.tpr));
        }
        assert_eq!(auc(&l, &a).unwrap(), auc(&lt, &at).unwrap());
    }

    #[test]
    fn calibration_lands_in_the_gap() {
        let c = calibrate_threshold(&[0.5; 20], &[2.0; 20], 0.1, 0.9).unwrap();
        assert!(c.feasible);
        assert!(c.threshold_db > 0.5 && c.threshold_db < 2.0);
        assert_eq!((c.fpr, c.tpr), (0.0, 1.0));
    }

    #[test]
    fn overlapping_populations_with_strict_targets_are_infeasible() {
        let l: Vec<f64> = (0..100).map(|i| i as f64 / 50.0).collect();
        let a: Vec<f64> = (0..100).map(|i| 1.0 + i as f64 / 50.0).collect();
        let c = calibrate_threshold(&l, &a, 0.0, 1.0).unwrap();
        assert!(!c.feasible);
        assert_eq!(c.fpr, 0.0);
        assert!(c.tpr < 1.0);
    }

    #[test]
    fn environment_presets_expose_their_distance_floor() {
        assert_eq!(environment_preset("office").unwrap().min_attacker_distance_m, 2.0);
        assert_eq!(environment_preset("lobby").unwrap().min_attacker_distance_m, 3.0);
        assert!(environment_preset("garage").is_err());
    }

    #[test]
    fn single_run_summary_matches_the_run() {
        let cfg = ScenarioConfig { seed: 5, ..ScenarioConfig::default() };
        let mc = monte_carlo(&cfg, 1).unwrap();
        let run = run_scenario_with_seed(&cfg, run_seed(5, 0)).unwrap();
        assert_eq!(mc.runs[0], run.metrics);
        assert_eq!(mc.summary.accepted, usize::from(run.metrics.accepted));
        assert_eq!(mc.summary.mean_residual_std_db, Some(run.metrics.statistic()));
    }

    #[test]
    fn monte_carlo_is_reproducible_and_csv_is_stable() {
        let cfg = ScenarioConfig { seed: 9, ..ScenarioConfig::default() };
        let (mut c1, mut c2) = (Vec::new(), Vec::new());
        monte_carlo(&cfg, 8).unwrap().write_csv(&mut c1).unwrap();
        monte_carlo(&cfg, 8).unwrap().write_csv(&mut c2).unwrap();
        assert_eq!(c1, c2);
        let text = String::from_utf8(c1).unwrap();
        assert!(text.starts_with("seed,accepted,failed_check,residual_std_fwd,residual_std_rev,depth_db,width_s\n"));
        assert_eq!(text.lines().count(), 9);
    }

    #[test]
    fn golden_office_run_is_accepted() {
        let run = run_scenario(&ScenarioConfig { seed: 42, ..ScenarioConfig::default() }).unwrap();
        assert!(run.outcome.accepted);
        assert!(run.metrics.statistic() < 1.27);
        assert!(run.metrics.depth_db > 10.0);
    }

    #[test]
    fn zero_runs_is_an_error() {
        assert!(monte_carlo(&ScenarioConfig::default(), 0).is_err());
    }
}
