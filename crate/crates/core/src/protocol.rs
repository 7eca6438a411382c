//! The pairing session between A (the swiped device) and B (stationary at
//! the origin).
//!
//! Stages:
//!
//! 1. Probe exchange. A sends a probe at a random Tx power, B records the
//!    Rx power and replies at its own random Tx power, A records that Rx.
//!    Both directions of a probe pair share one fading draw.
//! 2. Key agreement (P-256 ECDH on the exchanged public keys) and the
//!    interlock exchange of the sealed power records.
//! 3. Each device computes forward and reverse pathloss from its own record
//!    and the peer's.
//! 4. Each device runs the valley-shape and fading-variation checks. The
//!    pairing succeeds only if both devices accept.
//!
//! With an attacker present every message goes through M, which keeps a
//! separate session with each victim.

use rand::Rng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::adversary::{falsify_side, AttackerKind, AttackerProfile, SideObservation};
use crate::chanmodel::{distance_at, distance_to_point, sample_reciprocal, ChannelParams, Trajectory};
use crate::crypto::interlock::FrameRecord;
use crate::crypto::{
    derive_session_key, derive_shared_secret, generate_keypair, interlock_exchange, seal_power_record,
    Ciphertext, InterlockBehavior, InterlockEndpoint, InterlockLog, KeyPair, PublicPoint, SessionKey,
};
use crate::detect::{
    analyze_valley, geometry_violations, variation_check, AnalysisParams, FittedValley, ValleyReport,
    VariationMode, VariationReport,
};
use crate::error::{Error, Result};
use crate::record::PowerRecord;
use crate::rng::{stream_rng, Stream};

pub const TRANSCRIPT_VERSION: u32 = 1;

/// Probe count, rate and Tx-power distribution of stage 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProbeSchedule {
    pub n_probes: usize,
    pub rate_hz: f64,
    /// Tx powers are uniform on `[lo, hi]`; `lo == hi` means a fixed power.
    pub tx_range_dbm: (f64, f64),
}

impl Default for ProbeSchedule {
    fn default() -> Self {
        Self {
            n_probes: 500,
            rate_hz: 500.0,
            tx_range_dbm: (0.0, 30.0),
        }
    }
}

impl ProbeSchedule {
    pub fn validate(&self) -> Result<()> {
        if self.n_probes < 2 {
            return Err(Error::config("n_probes", "must be >= 2"));
        }
        if self.n_probes > u16::MAX as usize {
            return Err(Error::config("n_probes", "exceeds the record's u16 count field"));
        }
        if !(self.rate_hz > 0.0 && self.rate_hz.is_finite()) {
            return Err(Error::config("rate_hz", "must be > 0"));
        }
        let (lo, hi) = self.tx_range_dbm;
        if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
            return Err(Error::config("tx_range_dbm", "must be a finite [lo, hi] with lo <= hi"));
        }
        Ok(())
    }

    pub fn period_s(&self) -> f64 {
        1.0 / self.rate_hz
    }

    pub fn times_s(&self) -> Vec<f64> {
        (0..self.n_probes).map(|i| i as f64 / self.rate_hz).collect()
    }

    pub fn is_randomized(&self) -> bool {
        self.tx_range_dbm.0 != self.tx_range_dbm.1
    }

    /// Std of the uniform Tx distribution, `(hi - lo)/√12`.
    pub fn tx_std_db(&self) -> f64 {
        (self.tx_range_dbm.1 - self.tx_range_dbm.0) / 12f64.sqrt()
    }
}

pub fn draw_tx<R: Rng + ?Sized>(range: (f64, f64), rng: &mut R) -> f64 {
    if range.0 == range.1 {
        range.0
    } else {
        rng.random_range(range.0..=range.1)
    }
}

/// One random stream per role of a session.
#[derive(Debug, Clone)]
pub struct SessionRngs {
    pub channel: ChaCha20Rng,
    pub tx_a: ChaCha20Rng,
    pub tx_b: ChaCha20Rng,
    pub attacker: ChaCha20Rng,
    pub attacker_channel: ChaCha20Rng,
    pub attacker_estimate: ChaCha20Rng,
    pub keys: ChaCha20Rng,
}

impl SessionRngs {
    pub fn from_seed(seed: u64) -> Self {
        Self {
            channel: stream_rng(seed, Stream::Channel),
            tx_a: stream_rng(seed, Stream::TxA),
            tx_b: stream_rng(seed, Stream::TxB),
            attacker: stream_rng(seed, Stream::Attacker),
            attacker_channel: stream_rng(seed, Stream::AttackerChannel),
            attacker_estimate: stream_rng(seed, Stream::AttackerEstimate),
            keys: stream_rng(seed, Stream::Keys),
        }
    }
}

/// Ground truth and records of an honest probe stage.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeStage {
    pub times_s: Vec<f64>,
    pub distance_ab_m: Vec<f64>,
    pub a: PowerRecord,
    pub b: PowerRecord,
}

fn check_window(traj: &Trajectory, schedule: &ProbeSchedule) -> Result<()> {
    let last = (schedule.n_probes - 1) as f64 / schedule.rate_hz;
    if last > traj.window_s {
        return Err(Error::config(
            "n_probes",
            format!("last probe at {last} s falls outside the {} s trajectory window", traj.window_s),
        ));
    }
    Ok(())
}

pub fn run_probe_stage(
    traj: &Trajectory,
    params: &ChannelParams,
    schedule: &ProbeSchedule,
    rngs: &mut SessionRngs,
) -> Result<ProbeStage> {
    schedule.validate()?;
    check_window(traj, schedule)?;
    let n = schedule.n_probes;
    let times_s = schedule.times_s();
    let mut distance_ab_m = Vec::with_capacity(n);
    let (mut a_tx, mut a_rx, mut b_tx, mut b_rx) =
        (Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n));
    for &t in &times_s {
        let d = distance_at(traj, t)?;
        let tx_a = draw_tx(schedule.tx_range_dbm, &mut rngs.tx_a);
        let draw = sample_reciprocal(d, params, params.sigma_meas_db, params.sigma_meas_db, &mut rngs.channel)?;
        let tx_b = draw_tx(schedule.tx_range_dbm, &mut rngs.tx_b);
        distance_ab_m.push(d);
        a_tx.push(tx_a);
        b_rx.push(tx_a - draw.forward_db());
        b_tx.push(tx_b);
        a_rx.push(tx_b - draw.reverse_db());
    }
    Ok(ProbeStage {
        times_s,
        distance_ab_m,
        a: PowerRecord::new(a_tx, a_rx)?,
        b: PowerRecord::new(b_tx, b_rx)?,
    })
}

/// Ground truth and records of a probe stage relayed through M.
#[derive(Debug, Clone, PartialEq)]
pub struct InterceptedStage {
    pub times_s: Vec<f64>,
    pub distance_ab_m: Vec<f64>,
    pub distance_am_m: Vec<f64>,
    pub distance_bm_m: Vec<f64>,
    /// A's Tx toward M and A's Rx of M's replies.
    pub a: PowerRecord,
    /// B's Tx toward M and B's Rx of M's probes.
    pub b: PowerRecord,
    /// M's Tx toward A and M's Rx of A's probes.
    pub m_side_a: PowerRecord,
    /// M's Tx toward B and M's Rx of B's replies.
    pub m_side_b: PowerRecord,
}

pub fn run_intercepted_probe_stage(
    traj: &Trajectory,
    params: &ChannelParams,
    schedule: &ProbeSchedule,
    attacker: &AttackerProfile,
    rngs: &mut SessionRngs,
) -> Result<InterceptedStage> {
    schedule.validate()?;
    check_window(traj, schedule)?;
    let n = schedule.n_probes;
    let times_s = schedule.times_s();
    let m_pos = attacker.position();
    let d_bm = attacker.distance_to_b();
    let sm = attacker.measurement_noise_db;
    let se = params.sigma_meas_db;
    let mut st = InterceptedStage {
        times_s: times_s.clone(),
        distance_ab_m: Vec::with_capacity(n),
        distance_am_m: Vec::with_capacity(n),
        distance_bm_m: vec![d_bm; n],
        a: PowerRecord::new(vec![], vec![])?,
        b: PowerRecord::new(vec![], vec![])?,
        m_side_a: PowerRecord::new(vec![], vec![])?,
        m_side_b: PowerRecord::new(vec![], vec![])?,
    };
    for &t in &times_s {
        st.distance_ab_m.push(distance_at(traj, t)?);
        let d_am = distance_to_point(traj, t, m_pos)?;
        st.distance_am_m.push(d_am);

        // A <-> M: A probes, M replies.
        let tx_a = draw_tx(schedule.tx_range_dbm, &mut rngs.tx_a);
        let am = sample_reciprocal(d_am, params, sm, se, &mut rngs.attacker_channel)?;
        let tx_ma = draw_tx(schedule.tx_range_dbm, &mut rngs.attacker);
        st.a.tx_dbm.push(tx_a);
        st.m_side_a.rx_dbm.push(tx_a - am.forward_db());
        st.m_side_a.tx_dbm.push(tx_ma);
        st.a.rx_dbm.push(tx_ma - am.reverse_db());

        // M <-> B: M probes, B replies.
        let tx_mb = draw_tx(schedule.tx_range_dbm, &mut rngs.attacker);
        let bm = sample_reciprocal(d_bm, params, se, sm, &mut rngs.attacker_channel)?;
        let tx_b = draw_tx(schedule.tx_range_dbm, &mut rngs.tx_b);
        st.m_side_b.tx_dbm.push(tx_mb);
        st.b.rx_dbm.push(tx_mb - bm.forward_db());
        st.b.tx_dbm.push(tx_b);
        st.m_side_b.rx_dbm.push(tx_b - bm.reverse_db());
    }
    Ok(st)
}

/// Pathloss as reconstructed by one device.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathlossSeries {
    /// Own Tx minus the peer's claimed Rx.
    pub pl_fwd_db: Vec<f64>,
    /// The peer's claimed Tx minus own Rx.
    pub pl_rev_db: Vec<f64>,
    pub times_s: Vec<f64>,
}

impl PathlossSeries {
    pub fn len(&self) -> usize {
        self.times_s.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times_s.is_empty()
    }

    pub fn mean_db(&self) -> Vec<f64> {
        self.pl_fwd_db.iter().zip(&self.pl_rev_db).map(|(f, r)| 0.5 * (f + r)).collect()
    }

    /// Mean sample spacing.
    pub fn period_s(&self) -> f64 {
        let n = self.times_s.len();
        if n < 2 {
            return f64::NAN;
        }
        (self.times_s[n - 1] - self.times_s[0]) / (n - 1) as f64
    }
}

pub fn compute_pathloss(
    own_tx: &[f64],
    peer_rx_claimed: &[f64],
    peer_tx_claimed: &[f64],
    own_rx: &[f64],
    times_s: &[f64],
) -> Result<PathlossSeries> {
    let n = own_tx.len();
    for (name, len) in [
        ("peer rx", peer_rx_claimed.len()),
        ("peer tx", peer_tx_claimed.len()),
        ("own rx", own_rx.len()),
        ("times", times_s.len()),
    ] {
        if len != n {
            return Err(Error::Framing(format!("{name} series has {len} entries, expected {n}")));
        }
    }
    Ok(PathlossSeries {
        pl_fwd_db: own_tx.iter().zip(peer_rx_claimed).map(|(t, r)| t - r).collect(),
        pl_rev_db: peer_tx_claimed.iter().zip(own_rx).map(|(t, r)| t - r).collect(),
        times_s: times_s.to_vec(),
    })
}

/// Why a pairing was rejected.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FailedCheck {
    ValleyShape,
    FadingVariation,
    KeyAgreement,
    InterlockOrdering,
    Framing,
}

impl FailedCheck {
    pub fn as_str(self) -> &'static str {
        match self {
            FailedCheck::ValleyShape => "valley-shape",
            FailedCheck::FadingVariation => "fading-variation",
            FailedCheck::KeyAgreement => "key-agreement",
            FailedCheck::InterlockOrdering => "interlock-ordering",
            FailedCheck::Framing => "framing",
        }
    }

    /// The check an error raised during stage 2 maps to, if any.
    pub fn from_error(e: &Error) -> Option<Self> {
        match e {
            Error::KeyAgreement(_) => Some(FailedCheck::KeyAgreement),
            Error::InterlockOrdering(_) => Some(FailedCheck::InterlockOrdering),
            Error::Framing(_) | Error::RecordFormat(_) => Some(FailedCheck::Framing),
            _ => None,
        }
    }
}

/// One device's authentication result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceVerdict {
    pub accepted: bool,
    pub failed_check: Option<FailedCheck>,
    pub valley: ValleyReport,
    pub fit: Option<FittedValley>,
    pub geometry_violations: Vec<String>,
    pub variation_fwd: VariationReport,
    pub variation_rev: VariationReport,
    /// Present in pooled mode, where it alone decides the variation check.
    pub variation_pooled: Option<VariationReport>,
}

impl DeviceVerdict {
    /// Larger of the forward and reverse residual stds; `None` without a valley.
    pub fn max_residual_std_db(&self) -> Option<f64> {
        match (self.variation_fwd.residual_std_db, self.variation_rev.residual_std_db) {
            (Some(f), Some(r)) => Some(f.max(r)),
            _ => None,
        }
    }
}

/// Runs both checks on one device's reconstructed pathloss. Detection and
/// fitting use the mean of the two directions; the variation check uses
/// each direction's residuals against the fitted valley.
pub fn authenticate(series: &PathlossSeries, params: &AnalysisParams) -> Result<DeviceVerdict> {
    params.validate()?;
    if series.pl_fwd_db.len() != series.len() || series.pl_rev_db.len() != series.len() {
        return Err(Error::Framing("pathloss series lengths differ".into()));
    }
    if series.len() <= params.detector.lag {
        return Err(Error::config(
            "detector.lag",
            format!("series of {} samples is not longer than lag {}", series.len(), params.detector.lag),
        ));
    }
    let analysis = analyze_valley(&series.mean_db(), series.period_s(), params)?;
    let thr = params.variation_threshold_db;
    let variation_fwd = analysis.variation_of(&series.pl_fwd_db, thr);
    let variation_rev = analysis.variation_of(&series.pl_rev_db, thr);
    let variation_pooled = match (params.variation_mode, analysis.model_over_extent()) {
        (VariationMode::Both, _) => None,
        (VariationMode::Pooled, None) => Some(analysis.variation_of(&series.pl_fwd_db, thr)),
        (VariationMode::Pooled, Some(model)) => {
            let r = &analysis.report;
            let ys: Vec<f64> = series.pl_fwd_db[r.start_idx..=r.end_idx]
                .iter()
                .chain(&series.pl_rev_db[r.start_idx..=r.end_idx])
                .copied()
                .collect();
            let ms: Vec<f64> = model.iter().chain(&model).copied().collect();
            Some(variation_check(&ys, &ms, thr))
        }
    };
    let variation_pass = match &variation_pooled {
        Some(p) => p.pass,
        None => variation_fwd.pass && variation_rev.pass,
    };
    let failed_check = if !analysis.geometry_pass {
        Some(FailedCheck::ValleyShape)
    } else if !variation_pass {
        Some(FailedCheck::FadingVariation)
    } else {
        None
    };
    Ok(DeviceVerdict {
        accepted: failed_check.is_none(),
        failed_check,
        geometry_violations: geometry_violations(&analysis.report, &params.gates)
            .into_iter()
            .map(String::from)
            .collect(),
        valley: analysis.report,
        fit: analysis.fit,
        variation_fwd,
        variation_rev,
        variation_pooled,
    })
}

/// Per-device settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DeviceConfig {
    pub analysis: AnalysisParams,
    /// Plausible range for a peer's claimed Tx values.
    pub tx_claim_bounds_dbm: (f64, f64),
    /// Plausible range for a peer's claimed Rx values.
    pub rx_claim_bounds_dbm: (f64, f64),
}

impl Default for DeviceConfig {
    fn default() -> Self {
        Self {
            analysis: AnalysisParams::default(),
            tx_claim_bounds_dbm: (-100.0, 100.0),
            rx_claim_bounds_dbm: (-250.0, 100.0),
        }
    }
}

/// Everything both honest devices and the environment agree on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PairingConfig {
    pub trajectory: Trajectory,
    pub channel: ChannelParams,
    pub schedule: ProbeSchedule,
    pub device_a: DeviceConfig,
    pub device_b: DeviceConfig,
}

impl Default for PairingConfig {
    fn default() -> Self {
        Self {
            trajectory: Trajectory::symmetric(),
            channel: crate::chanmodel::EnvironmentPreset::Office.channel_params(),
            schedule: ProbeSchedule::default(),
            device_a: DeviceConfig::default(),
            device_b: DeviceConfig::default(),
        }
    }
}

impl PairingConfig {
    pub fn validate(&self) -> Result<()> {
        self.trajectory.validate()?;
        self.channel.validate()?;
        self.schedule.validate()?;
        check_window(&self.trajectory, &self.schedule)?;
        for (name, dev) in [("device_a", &self.device_a), ("device_b", &self.device_b)] {
            dev.analysis.validate().map_err(|e| match e {
                Error::Config { key, message } => Error::config(format!("{name}.analysis.{key}"), message),
                other => other,
            })?;
            let min_n = 2 * dev.analysis.detector.lag
                + (dev.analysis.gates.min_width_s * self.schedule.rate_hz).ceil() as usize;
            if self.schedule.n_probes < min_n {
                return Err(Error::config(
                    "n_probes",
                    format!("{} probes is fewer than 2·lag + minimum valley width = {min_n}", self.schedule.n_probes),
                ));
            }
        }
        Ok(())
    }
}

/// Per-probe ground truth as seen by each honest device.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProbeEntry {
    pub index: usize,
    pub time_s: f64,
    pub distance_ab_m: f64,
    pub a_tx_dbm: f64,
    pub a_rx_dbm: f64,
    pub b_tx_dbm: f64,
    pub b_rx_dbm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KeyEntry {
    pub holder: &'static str,
    pub public_point: PublicPoint,
}

#[derive(Debug, Clone, Serialize)]
pub struct SessionLog {
    /// `"a-b"`, `"a-m"` or `"m-b"`, initiator first.
    pub session: &'static str,
    pub frames: Vec<FrameRecord>,
}

/// Audit log of one pairing.
#[derive(Debug, Clone, Serialize)]
pub struct Transcript {
    pub schema_version: u32,
    pub seed: u64,
    pub n_probes: usize,
    pub rate_hz: f64,
    pub tx_range_dbm: (f64, f64),
    pub attacker: Option<AttackerKind>,
    pub probes: Vec<ProbeEntry>,
    pub public_keys: Vec<KeyEntry>,
    pub interlock: Vec<SessionLog>,
}

#[derive(Debug, Clone, Serialize)]
pub struct PairingOutcome {
    pub accepted: bool,
    pub failed_check: Option<FailedCheck>,
    /// Diagnostic for a stage-2 abort.
    pub error: Option<String>,
    /// Verdicts of A and B, in that order; empty if stage 2 aborted.
    pub devices: Vec<DeviceVerdict>,
    pub transcript: Transcript,
}

impl PairingOutcome {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("outcome serializes")
    }
}

fn block_count_for(n_probes: usize) -> usize {
    (7 + 4 * n_probes) / crate::crypto::BLOCK_LEN + 1
}

fn session_key(own: &KeyPair, peer: &PublicPoint) -> Result<SessionKey> {
    derive_session_key(&derive_shared_secret(&own.private_scalar, peer)?)
}

/// One interlock session. Returns the records each side recovered from its
/// peer as `(initiator_received, responder_received)`.
#[allow(clippy::too_many_arguments)]
fn record_session(
    name: &'static str,
    init_keys: &KeyPair,
    init_record: &PowerRecord,
    init_behavior: InterlockBehavior,
    resp_keys: &KeyPair,
    resp_record: &PowerRecord,
    resp_behavior: InterlockBehavior,
    n_probes: usize,
    logs: &mut Vec<SessionLog>,
) -> Result<(PowerRecord, PowerRecord)> {
    let k_init = session_key(init_keys, &resp_keys.public_point)?;
    let k_resp = session_key(resp_keys, &init_keys.public_point)?;
    let blocks = block_count_for(n_probes);
    let sealed_init: Ciphertext = seal_power_record(&k_init, init_record)?;
    let sealed_resp: Ciphertext = seal_power_record(&k_resp, resp_record)?;
    let mut init = InterlockEndpoint::new(k_init, &sealed_init, blocks).with_behavior(init_behavior);
    let mut resp = InterlockEndpoint::new(k_resp, &sealed_resp, blocks).with_behavior(resp_behavior);
    let mut log = InterlockLog::default();
    let result = interlock_exchange(&mut init, &mut resp, &mut log);
    logs.push(SessionLog {
        session: name,
        frames: log.frames,
    });
    let (init_got, resp_got) = result?;
    Ok((PowerRecord::decode(&init_got)?, PowerRecord::decode(&resp_got)?))
}

fn check_peer_record(rec: &PowerRecord, n: usize, dev: &DeviceConfig) -> Result<()> {
    if rec.n() != n {
        return Err(Error::Framing(format!("peer record has {} probes, expected {n}", rec.n())));
    }
    rec.validate_claims(dev.tx_claim_bounds_dbm, dev.rx_claim_bounds_dbm, 0.0)
}

/// Runs a full pairing. Configuration and precondition problems are
/// returned as errors; failures of the protocol itself yield a rejected
/// outcome.
pub fn pair(cfg: &PairingConfig, adversary: Option<&AttackerProfile>, seed: u64) -> Result<PairingOutcome> {
    cfg.validate()?;
    if let Some(m) = adversary {
        m.validate(0.0)?;
        if m.kind == AttackerKind::FixedPowerExploit && cfg.schedule.is_randomized() {
            return Err(Error::Precondition(
                "the fixed-power exploit requires a fixed Tx power (tx_range_dbm lo == hi)".into(),
            ));
        }
    }
    let mut rngs = SessionRngs::from_seed(seed);
    let n = cfg.schedule.n_probes;

    // Stage 1.
    let (a_rec, b_rec, times, d_ab, intercepted) = match adversary {
        None => {
            let st = run_probe_stage(&cfg.trajectory, &cfg.channel, &cfg.schedule, &mut rngs)?;
            (st.a, st.b, st.times_s, st.distance_ab_m, None)
        }
        Some(m) => {
            let st = run_intercepted_probe_stage(&cfg.trajectory, &cfg.channel, &cfg.schedule, m, &mut rngs)?;
            (st.a.clone(), st.b.clone(), st.times_s.clone(), st.distance_ab_m.clone(), Some((m, st)))
        }
    };

    let probes = (0..n)
        .map(|i| ProbeEntry {
            index: i,
            time_s: times[i],
            distance_ab_m: d_ab[i],
            a_tx_dbm: a_rec.tx_dbm[i],
            a_rx_dbm: a_rec.rx_dbm[i],
            b_tx_dbm: b_rec.tx_dbm[i],
            b_rx_dbm: b_rec.rx_dbm[i],
        })
        .collect();

    // Stage 2.
    let a_keys = generate_keypair(&mut rngs.keys);
    let b_keys = generate_keypair(&mut rngs.keys);
    let mut public_keys = vec![
        KeyEntry { holder: "a", public_point: a_keys.public_point.clone() },
        KeyEntry { holder: "b", public_point: b_keys.public_point.clone() },
    ];
    let mut logs = Vec::new();
    let honest = InterlockBehavior::Honest;

    let exchanged: Result<(PowerRecord, PowerRecord)> = match &intercepted {
        None => record_session("a-b", &a_keys, &a_rec, honest, &b_keys, &b_rec, honest, n, &mut logs),
        Some((m, st)) => {
            let ma_keys = generate_keypair(&mut rngs.keys);
            let mb_keys = generate_keypair(&mut rngs.keys);
            public_keys.push(KeyEntry { holder: "m-a", public_point: ma_keys.public_point.clone() });
            public_keys.push(KeyEntry { holder: "m-b", public_point: mb_keys.public_point.clone() });
            let to_a = falsify_side(
                m,
                SideObservation {
                    own_tx: &st.m_side_a.tx_dbm,
                    observed_rx: &st.m_side_a.rx_dbm,
                    d_victim_m: &st.distance_am_m,
                    d_ab_m: &st.distance_ab_m,
                },
                &cfg.channel,
                cfg.schedule.tx_range_dbm,
                &mut rngs.attacker_estimate,
                &mut rngs.attacker,
            )?
            .into_record()?;
            let to_b = falsify_side(
                m,
                SideObservation {
                    own_tx: &st.m_side_b.tx_dbm,
                    observed_rx: &st.m_side_b.rx_dbm,
                    d_victim_m: &st.distance_bm_m,
                    d_ab_m: &st.distance_ab_m,
                },
                &cfg.channel,
                cfg.schedule.tx_range_dbm,
                &mut rngs.attacker_estimate,
                &mut rngs.attacker,
            )?
            .into_record()?;
            record_session("a-m", &a_keys, &a_rec, honest, &ma_keys, &to_a, m.interlock, n, &mut logs)
                .and_then(|(a_got, _)| {
                    let (_, b_got) =
                        record_session("m-b", &mb_keys, &to_b, m.interlock, &b_keys, &b_rec, honest, n, &mut logs)?;
                    Ok((a_got, b_got))
                })
        }
    };

    let transcript = Transcript {
        schema_version: TRANSCRIPT_VERSION,
        seed,
        n_probes: n,
        rate_hz: cfg.schedule.rate_hz,
        tx_range_dbm: cfg.schedule.tx_range_dbm,
        attacker: adversary.map(|m| m.kind),
        probes,
        public_keys,
        interlock: logs,
    };
    let abort = |e: Error, transcript: Transcript| -> Result<PairingOutcome> {
        match FailedCheck::from_error(&e) {
            Some(check) => Ok(PairingOutcome {
                accepted: false,
                failed_check: Some(check),
                error: Some(e.to_string()),
                devices: Vec::new(),
                transcript,
            }),
            None => Err(e),
        }
    };

    let (a_peer, b_peer) = match exchanged {
        Ok(v) => v,
        Err(e) => return abort(e, transcript),
    };
    if let Err(e) = check_peer_record(&a_peer, n, &cfg.device_a)
        .and_then(|_| check_peer_record(&b_peer, n, &cfg.device_b))
    {
        return abort(e, transcript);
    }

    // Stage 3.
    let a_series = compute_pathloss(&a_rec.tx_dbm, &a_peer.rx_dbm, &a_peer.tx_dbm, &a_rec.rx_dbm, &times)?;
    let b_series = compute_pathloss(&b_rec.tx_dbm, &b_peer.rx_dbm, &b_peer.tx_dbm, &b_rec.rx_dbm, &times)?;

    // Stage 4.
    let va = authenticate(&a_series, &cfg.device_a.analysis)?;
    let vb = authenticate(&b_series, &cfg.device_b.analysis)?;
    let failed_check = va.failed_check.or(vb.failed_check);
    Ok(PairingOutcome {
        accepted: va.accepted && vb.accepted,
        failed_check,
        error: None,
        devices: vec![va, vb],
        transcript,
    })
}
