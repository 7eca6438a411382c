//! Swipe geometry and the lognormal-shadowing radio channel.
//!
//! Observed pathloss on a link of length `d` is
//!
//! ```text
//! PL = 10·α·log10(4πd/λ) + L_excess + χ + e
//! ```
//!
//! with fading `χ ~ N(0, σ_f(d)²)` shared by both directions of a probe pair
//! and a per-receiver measurement error `e ~ N(0, σ_e²)`. `L_excess` is a
//! fixed hardware/antenna loss that lifts the free-space term to the absolute
//! levels seen on real radios; it is zero unless a preset sets it.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// 3e8 / 2.4e9.
pub const DEFAULT_WAVELENGTH_M: f64 = 0.125;

/// Fading standard deviation as a function of link distance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum FadingProfile {
    Constant { sigma_db: f64 },
    /// Piecewise-linear in distance; held constant outside the first and last knot.
    Table { knots: Vec<(f64, f64)> },
}

impl FadingProfile {
    pub fn sigma_at(&self, d_m: f64) -> f64 {
        match self {
            FadingProfile::Constant { sigma_db } => *sigma_db,
            FadingProfile::Table { knots } => interpolate(knots, d_m),
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            FadingProfile::Constant { sigma_db } => {
                if !(sigma_db.is_finite() && *sigma_db >= 0.0) {
                    return Err(Error::config("channel.fading.sigma_db", "must be >= 0"));
                }
            }
            FadingProfile::Table { knots } => {
                if knots.is_empty() {
                    return Err(Error::config("channel.fading.knots", "table is empty"));
                }
                for w in knots.windows(2) {
                    if w[1].0 <= w[0].0 {
                        return Err(Error::config(
                            "channel.fading.knots",
                            "distances must be strictly increasing",
                        ));
                    }
                    if w[1].1 < w[0].1 {
                        return Err(Error::config(
                            "channel.fading.knots",
                            "sigma must be nondecreasing in distance",
                        ));
                    }
                }
                if knots.iter().any(|&(d, s)| !(d > 0.0 && s >= 0.0)) {
                    return Err(Error::config(
                        "channel.fading.knots",
                        "distances must be > 0 and sigmas >= 0",
                    ));
                }
            }
        }
        Ok(())
    }
}

fn interpolate(knots: &[(f64, f64)], x: f64) -> f64 {
    let first = knots[0];
    let last = knots[knots.len() - 1];
    if x <= first.0 {
        return first.1;
    }
    if x >= last.0 {
        return last.1;
    }
    let i = knots.partition_point(|&(d, _)| d <= x);
    let (x0, y0) = knots[i - 1];
    let (x1, y1) = knots[i];
    y0 + (y1 - y0) * (x - x0) / (x1 - x0)
}

/// Radio channel parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ChannelParams {
    pub alpha: f64,
    pub lambda_m: f64,
    pub excess_loss_db: f64,
    pub fading: FadingProfile,
    /// Measurement-error std of the legitimate receivers.
    pub sigma_meas_db: f64,
}

impl Default for ChannelParams {
    fn default() -> Self {
        Self {
            alpha: 2.0,
            lambda_m: DEFAULT_WAVELENGTH_M,
            excess_loss_db: 0.0,
            fading: FadingProfile::Constant { sigma_db: 0.0 },
            sigma_meas_db: 0.0,
        }
    }
}

impl ChannelParams {
    /// A noiseless free-space channel with the given exponent.
    pub fn noiseless(alpha: f64) -> Self {
        Self {
            alpha,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha.is_finite() && self.alpha > 0.0) {
            return Err(Error::config("channel.alpha", "must be > 0"));
        }
        if !(self.lambda_m.is_finite() && self.lambda_m > 0.0) {
            return Err(Error::config("channel.lambda_m", "must be > 0"));
        }
        if !self.excess_loss_db.is_finite() {
            return Err(Error::config("channel.excess_loss_db", "must be finite"));
        }
        if !(self.sigma_meas_db.is_finite() && self.sigma_meas_db >= 0.0) {
            return Err(Error::config("channel.sigma_meas_db", "must be >= 0"));
        }
        self.fading.validate()
    }

    pub fn fading_sigma_at(&self, d_m: f64) -> f64 {
        self.fading.sigma_at(d_m)
    }

    /// Deterministic pathloss including the fixed excess loss.
    pub fn mean_pathloss(&self, d_m: f64) -> Result<f64> {
        Ok(deterministic_pathloss(d_m, self)? + self.excess_loss_db)
    }
}

/// `10·α·log10(4π·d/λ)`.
pub fn deterministic_pathloss(d_m: f64, params: &ChannelParams) -> Result<f64> {
    if !(d_m > 0.0) || !d_m.is_finite() {
        return Err(Error::Domain(format!("distance must be positive, got {d_m}")));
    }
    Ok(10.0 * params.alpha * (4.0 * std::f64::consts::PI * d_m / params.lambda_m).log10())
}

/// One observation on one link direction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkSample {
    pub index: usize,
    pub time_s: f64,
    pub distance_m: f64,
    pub fading_db: f64,
    pub meas_err_db: f64,
    pub pathloss_db: f64,
}

/// Draws one link observation at distance `d_m`.
///
/// Fading is drawn first, then the measurement error; both consume one
/// standard normal each, even when their sigma is zero.
pub fn sample_link<R: Rng + ?Sized>(
    d_m: f64,
    params: &ChannelParams,
    rng: &mut R,
) -> Result<LinkSample> {
    let mean = params.mean_pathloss(d_m)?;
    let fading_db = params.fading_sigma_at(d_m) * rng.sample::<f64, _>(StandardNormal);
    let meas_err_db = params.sigma_meas_db * rng.sample::<f64, _>(StandardNormal);
    Ok(LinkSample {
        index: 0,
        time_s: 0.0,
        distance_m: d_m,
        fading_db,
        meas_err_db,
        pathloss_db: mean + fading_db + meas_err_db,
    })
}

/// Both directions of one probe pair: a single fading draw, and an
/// independent measurement error per receiver.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReciprocalDraw {
    pub mean_db: f64,
    pub fading_db: f64,
    /// Error at the receiver of the forward packet.
    pub meas_fwd_db: f64,
    /// Error at the receiver of the reply.
    pub meas_rev_db: f64,
}

impl ReciprocalDraw {
    pub fn forward_db(&self) -> f64 {
        self.mean_db + self.fading_db + self.meas_fwd_db
    }

    pub fn reverse_db(&self) -> f64 {
        self.mean_db + self.fading_db + self.meas_rev_db
    }
}

pub fn sample_reciprocal<R: Rng + ?Sized>(
    d_m: f64,
    params: &ChannelParams,
    meas_fwd_sigma: f64,
    meas_rev_sigma: f64,
    rng: &mut R,
) -> Result<ReciprocalDraw> {
    let mean_db = params.mean_pathloss(d_m)?;
    let fading_db = params.fading_sigma_at(d_m) * rng.sample::<f64, _>(StandardNormal);
    let meas_fwd_db = meas_fwd_sigma * rng.sample::<f64, _>(StandardNormal);
    let meas_rev_db = meas_rev_sigma * rng.sample::<f64, _>(StandardNormal);
    Ok(ReciprocalDraw {
        mean_db,
        fading_db,
        meas_fwd_db,
        meas_rev_db,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TrajectoryKind {
    SymmetricSwipe,
    AsymmetricSwipe,
    DiagonalSwipe,
    SlowSwipe,
    FarSwipe,
    Stationary,
}

impl TrajectoryKind {
    pub const ALL: [TrajectoryKind; 6] = [
        TrajectoryKind::SymmetricSwipe,
        TrajectoryKind::AsymmetricSwipe,
        TrajectoryKind::DiagonalSwipe,
        TrajectoryKind::SlowSwipe,
        TrajectoryKind::FarSwipe,
        TrajectoryKind::Stationary,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TrajectoryKind::SymmetricSwipe => "symmetric-swipe",
            TrajectoryKind::AsymmetricSwipe => "asymmetric-swipe",
            TrajectoryKind::DiagonalSwipe => "diagonal-swipe",
            TrajectoryKind::SlowSwipe => "slow-swipe",
            TrajectoryKind::FarSwipe => "far-swipe",
            TrajectoryKind::Stationary => "stationary",
        }
    }
}

impl fmt::Display for TrajectoryKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Motion of device A relative to the stationary device B.
///
/// B sits at the origin. A moves on a straight segment in the plane at
/// `perp_offset_m` in front of B. The segment has length `2·half_span_m`, is
/// tilted by `tilt_deg` from horizontal, and is shifted laterally by
/// `start_offset_m` and vertically by `vertical_offset_m`. The swipe is
/// centered in the observation window; A rests at the segment ends before
/// and after it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Trajectory {
    pub kind: TrajectoryKind,
    pub perp_offset_m: f64,
    pub half_span_m: f64,
    pub speed_mps: f64,
    pub start_offset_m: f64,
    pub vertical_offset_m: f64,
    pub tilt_deg: f64,
    pub window_s: f64,
}

impl Default for Trajectory {
    fn default() -> Self {
        Self::symmetric()
    }
}

impl Trajectory {
    /// 0.1 m closest approach, ±0.55 m of travel (a 5.6× distance ratio),
    /// crossed in about 0.23 s.
    pub fn symmetric() -> Self {
        Self {
            kind: TrajectoryKind::SymmetricSwipe,
            perp_offset_m: 0.1,
            half_span_m: 0.55,
            speed_mps: 4.8,
            start_offset_m: 0.0,
            vertical_offset_m: 0.0,
            tilt_deg: 0.0,
            window_s: 1.0,
        }
    }

    /// B sits off the swipe center.
    pub fn asymmetric() -> Self {
        Self {
            kind: TrajectoryKind::AsymmetricSwipe,
            start_offset_m: 0.1,
            ..Self::symmetric()
        }
    }

    /// Bottom-right to top-left, missing B's center by a few centimetres.
    pub fn diagonal() -> Self {
        Self {
            kind: TrajectoryKind::DiagonalSwipe,
            tilt_deg: -35.0,
            vertical_offset_m: 0.05,
            ..Self::symmetric()
        }
    }

    /// Half the nominal speed.
    pub fn slow() -> Self {
        Self {
            kind: TrajectoryKind::SlowSwipe,
            speed_mps: 2.4,
            ..Self::symmetric()
        }
    }

    /// Swipe more than half a metre away from B.
    pub fn far() -> Self {
        Self {
            kind: TrajectoryKind::FarSwipe,
            perp_offset_m: 0.6,
            ..Self::symmetric()
        }
    }

    pub fn stationary(distance_m: f64) -> Self {
        Self {
            kind: TrajectoryKind::Stationary,
            perp_offset_m: distance_m,
            half_span_m: 0.0,
            ..Self::symmetric()
        }
    }

    pub fn preset(kind: TrajectoryKind) -> Self {
        match kind {
            TrajectoryKind::SymmetricSwipe => Self::symmetric(),
            TrajectoryKind::AsymmetricSwipe => Self::asymmetric(),
            TrajectoryKind::DiagonalSwipe => Self::diagonal(),
            TrajectoryKind::SlowSwipe => Self::slow(),
            TrajectoryKind::FarSwipe => Self::far(),
            TrajectoryKind::Stationary => Self::stationary(0.1),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.perp_offset_m > 0.0) {
            return Err(Error::config("trajectory.perp_offset_m", "must be > 0"));
        }
        if !(self.half_span_m >= 0.0) {
            return Err(Error::config("trajectory.half_span_m", "must be >= 0"));
        }
        if !(self.speed_mps > 0.0) {
            return Err(Error::config("trajectory.speed_mps", "must be > 0"));
        }
        if !(self.window_s > 0.0) {
            return Err(Error::config("trajectory.window_s", "must be > 0"));
        }
        if !(self.start_offset_m.is_finite()
            && self.vertical_offset_m.is_finite()
            && self.tilt_deg.is_finite())
        {
            return Err(Error::config("trajectory", "offsets and tilt must be finite"));
        }
        Ok(())
    }

    /// Time the moving device needs to cover the segment.
    pub fn travel_time_s(&self) -> f64 {
        2.0 * self.half_span_m / self.speed_mps
    }

    /// Time at which the device passes the segment midpoint.
    pub fn center_time_s(&self) -> f64 {
        self.window_s / 2.0
    }

    /// In-plane position `(x, z)` at time `t_s`.
    pub fn position_at(&self, t_s: f64) -> Result<(f64, f64)> {
        if !(0.0..=self.window_s).contains(&t_s) {
            return Err(Error::Range(format!(
                "t = {t_s} s outside trajectory window [0, {}]",
                self.window_s
            )));
        }
        if self.kind == TrajectoryKind::Stationary {
            return Ok((0.0, 0.0));
        }
        let t_start = (self.window_s - self.travel_time_s()) / 2.0;
        let s = (-self.half_span_m + self.speed_mps * (t_s - t_start))
            .clamp(-self.half_span_m, self.half_span_m);
        let (sin, cos) = self.tilt_deg.to_radians().sin_cos();
        Ok((
            self.start_offset_m + s * cos,
            self.vertical_offset_m + s * sin,
        ))
    }
}

/// Distance between the moving and the stationary device at `t_s`.
pub fn distance_at(traj: &Trajectory, t_s: f64) -> Result<f64> {
    let (x, z) = traj.position_at(t_s)?;
    Ok((traj.perp_offset_m * traj.perp_offset_m + x * x + z * z).sqrt())
}

/// Distance between the moving device and a fixed point `(x, y, z)`; the
/// stationary device is at the origin and the moving device's plane is at
/// `y = perp_offset_m`.
pub fn distance_to_point(traj: &Trajectory, t_s: f64, point: [f64; 3]) -> Result<f64> {
    let (x, z) = traj.position_at(t_s)?;
    let dx = x - point[0];
    let dy = traj.perp_offset_m - point[1];
    let dz = z - point[2];
    Ok((dx * dx + dy * dy + dz * dz).sqrt())
}

/// Indoor environments with calibrated fading-versus-distance tables.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EnvironmentPreset {
    Office,
    Lobby,
    Dining,
}

impl EnvironmentPreset {
    pub const ALL: [EnvironmentPreset; 3] = [
        EnvironmentPreset::Office,
        EnvironmentPreset::Lobby,
        EnvironmentPreset::Dining,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            EnvironmentPreset::Office => "office",
            EnvironmentPreset::Lobby => "lobby",
            EnvironmentPreset::Dining => "dining",
        }
    }

    /// `(distance m, fading sigma dB)` knots.
    ///
    /// The legitimate 0.1-0.6 m link sits near 0.8 dB everywhere. The office
    /// rises to 1.8 dB by 2 m. The lobby and the dining hall stay close to
    /// the legitimate level out to 2 m and jump past 3 m.
    pub fn fading_knots(self) -> &'static [(f64, f64)] {
        match self {
            EnvironmentPreset::Office => &[
                (0.1, 0.4),
                (1.0, 0.5),
                (2.0, 1.15),
                (3.0, 2.2),
                (6.0, 2.8),
            ],
            EnvironmentPreset::Lobby => &[
                (0.1, 0.4),
                (1.0, 0.4),
                (2.5, 0.45),
                (3.0, 2.0),
                (6.0, 4.0),
            ],
            EnvironmentPreset::Dining => &[
                (0.1, 0.4),
                (1.0, 0.4),
                (2.5, 0.45),
                (3.0, 1.9),
                (6.0, 4.5),
            ],
        }
    }

    pub fn fading_profile(self) -> FadingProfile {
        FadingProfile::Table {
            knots: self.fading_knots().to_vec(),
        }
    }

    pub fn channel_params(self) -> ChannelParams {
        ChannelParams {
            alpha: 2.0,
            lambda_m: DEFAULT_WAVELENGTH_M,
            excess_loss_db: 20.0,
            fading: self.fading_profile(),
            sigma_meas_db: 0.3,
        }
    }
}

impl fmt::Display for EnvironmentPreset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EnvironmentPreset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "office" => Ok(EnvironmentPreset::Office),
            "lobby" => Ok(EnvironmentPreset::Lobby),
            "dining" => Ok(EnvironmentPreset::Dining),
            other => Err(Error::config(
                "environment",
                format!("unknown preset `{other}` (expected office, lobby or dining)"),
            )),
        }
    }
}

/// Fading sigma of `environment` at link distance `d_m`.
pub fn fading_sigma_for(environment: &str, d_m: f64) -> Result<f64> {
    let env: EnvironmentPreset = environment.parse()?;
    if !(d_m > 0.0) {
        return Err(Error::Domain(format!("distance must be positive, got {d_m}")));
    }
    Ok(interpolate(env.fading_knots(), d_m))
}
