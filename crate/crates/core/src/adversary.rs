//! Man-in-the-middle attackers.
//!
//! The attacker M relays the probe stage between A and B and substitutes the
//! power record it sends to each victim. It never touches the channel draws;
//! it only chooses what Tx/Rx values to claim. Each victim side is handled
//! the same way: `own_tx` is what M transmitted to the victim, `observed_rx`
//! what M measured from the victim's probes, `d_victim` the true victim-M
//! distance and `d_ab` the distance the victim expects to see.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::chanmodel::ChannelParams;
use crate::crypto::InterlockBehavior;
use crate::error::{Error, Result};
use crate::record::PowerRecord;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AttackerKind {
    /// Relays honestly and reports its true values.
    General,
    /// Rescales its claims with noisy distance estimates.
    Advanced,
    /// Advanced with exact distances and a noiseless receiver.
    Supreme,
    /// Inverts the fading when victims transmit at a fixed known power.
    FixedPowerExploit,
    /// Claims Rx from the estimated mean Tx power.
    Averaging,
}

impl AttackerKind {
    pub const ALL: [AttackerKind; 5] = [
        AttackerKind::General,
        AttackerKind::Advanced,
        AttackerKind::Supreme,
        AttackerKind::FixedPowerExploit,
        AttackerKind::Averaging,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            AttackerKind::General => "general",
            AttackerKind::Advanced => "advanced",
            AttackerKind::Supreme => "supreme",
            AttackerKind::FixedPowerExploit => "fixed-power-exploit",
            AttackerKind::Averaging => "averaging",
        }
    }
}

/// Receiver noise of a non-ideal attacker, dB.
pub const DEFAULT_ATTACKER_NOISE_DB: f64 = 0.3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AttackerProfile {
    pub kind: AttackerKind,
    /// Distance from B; M sits at `(0, -distance_m, 0)` unless `position_m` is set.
    pub distance_m: f64,
    pub position_m: Option<[f64; 3]>,
    /// Std of the log relative distance-estimation error.
    pub sigma_d: f64,
    pub measurement_noise_db: f64,
    pub interlock: InterlockBehavior,
    /// Std of Gaussian dither added to every claimed value; 0 disables it.
    pub dither_db: f64,
}

impl Default for AttackerProfile {
    fn default() -> Self {
        Self::general(2.0)
    }
}

impl AttackerProfile {
    fn base(kind: AttackerKind, distance_m: f64, noise: f64) -> Self {
        Self {
            kind,
            distance_m,
            position_m: None,
            sigma_d: 0.0,
            measurement_noise_db: noise,
            interlock: InterlockBehavior::Honest,
            dither_db: 0.0,
        }
    }

    pub fn general(distance_m: f64) -> Self {
        Self::base(AttackerKind::General, distance_m, DEFAULT_ATTACKER_NOISE_DB)
    }

    pub fn advanced(distance_m: f64, sigma_d: f64) -> Self {
        Self {
            sigma_d,
            ..Self::base(AttackerKind::Advanced, distance_m, DEFAULT_ATTACKER_NOISE_DB)
        }
    }

    pub fn supreme(distance_m: f64) -> Self {
        Self::base(AttackerKind::Supreme, distance_m, 0.0)
    }

    pub fn fixed_power_exploit(distance_m: f64) -> Self {
        Self::base(AttackerKind::FixedPowerExploit, distance_m, 0.0)
    }

    pub fn averaging(distance_m: f64) -> Self {
        Self::base(AttackerKind::Averaging, distance_m, 0.0)
    }

    pub fn position(&self) -> [f64; 3] {
        self.position_m.unwrap_or([0.0, -self.distance_m, 0.0])
    }

    /// Distance from B (at the origin).
    pub fn distance_to_b(&self) -> f64 {
        let p = self.position();
        (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt()
    }

    pub fn validate(&self, min_distance_m: f64) -> Result<()> {
        if !(self.sigma_d >= 0.0 && self.sigma_d.is_finite()) {
            return Err(Error::config("attacker.sigma_d", "must be >= 0"));
        }
        if !(self.measurement_noise_db >= 0.0 && self.measurement_noise_db.is_finite()) {
            return Err(Error::config("attacker.measurement_noise_db", "must be >= 0"));
        }
        if !(self.dither_db >= 0.0 && self.dither_db.is_finite()) {
            return Err(Error::config("attacker.dither_db", "must be >= 0"));
        }
        if self.kind == AttackerKind::Supreme && (self.sigma_d != 0.0 || self.measurement_noise_db != 0.0) {
            return Err(Error::config(
                "attacker.kind",
                "a supreme attacker has sigma_d = 0 and measurement_noise_db = 0",
            ));
        }
        let d = self.distance_to_b();
        if !(d >= min_distance_m) {
            return Err(Error::config(
                if self.position_m.is_some() { "attacker.position_m" } else { "attacker.distance_m" },
                format!("attacker is {d} m from B, below the {min_distance_m} m floor"),
            ));
        }
        Ok(())
    }
}

/// Claimed Tx/Rx series sent to one victim.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FalsifiedReport {
    pub tx_claimed_dbm: Vec<f64>,
    pub rx_claimed_dbm: Vec<f64>,
}

impl FalsifiedReport {
    pub fn into_record(self) -> Result<PowerRecord> {
        PowerRecord::new(self.tx_claimed_dbm, self.rx_claimed_dbm)
    }
}

fn check_lengths(n: usize, series: &[(&str, usize)]) -> Result<()> {
    for (name, len) in series {
        if *len != n {
            return Err(Error::Framing(format!("{name} has {len} entries, expected {n}")));
        }
    }
    Ok(())
}

pub fn general_report(true_tx: &[f64], true_rx: &[f64]) -> Result<FalsifiedReport> {
    check_lengths(true_tx.len(), &[("rx", true_rx.len())])?;
    Ok(FalsifiedReport {
        tx_claimed_dbm: true_tx.to_vec(),
        rx_claimed_dbm: true_rx.to_vec(),
    })
}

/// `d̃[i] = d[i]·exp(r[i])`, `r[i] ~ N(0, sigma_d²)`. One normal is drawn per
/// entry regardless of `sigma_d`.
pub fn estimate_distances<R: Rng + ?Sized>(true_d: &[f64], sigma_d: f64, rng: &mut R) -> Result<Vec<f64>> {
    if !(sigma_d >= 0.0) {
        return Err(Error::Domain(format!("sigma_d must be >= 0, got {sigma_d}")));
    }
    Ok(true_d
        .iter()
        .map(|&d| {
            let r: f64 = rng.sample(StandardNormal);
            d * (sigma_d * r).exp()
        })
        .collect())
}

/// `10·α·log10(d_am / d_ab)`.
pub fn distance_correction_db(d_am: f64, d_ab: f64, alpha: f64) -> f64 {
    10.0 * alpha * (d_am / d_ab).log10()
}

/// Rx claims raised and Tx claims lowered by the distance correction.
pub fn advanced_report(
    true_tx: &[f64],
    true_rx: &[f64],
    d_am_est: &[f64],
    d_ab_est: &[f64],
    alpha: f64,
) -> Result<FalsifiedReport> {
    let n = true_tx.len();
    check_lengths(n, &[("rx", true_rx.len()), ("d_am", d_am_est.len()), ("d_ab", d_ab_est.len())])?;
    if let Some(d) = d_am_est.iter().chain(d_ab_est).find(|d| !(**d > 0.0)) {
        return Err(Error::Domain(format!("distance estimates must be positive, got {d}")));
    }
    let corr: Vec<f64> = d_am_est
        .iter()
        .zip(d_ab_est)
        .map(|(&am, &ab)| distance_correction_db(am, ab, alpha))
        .collect();
    Ok(FalsifiedReport {
        tx_claimed_dbm: true_tx.iter().zip(&corr).map(|(t, c)| t - c).collect(),
        rx_claimed_dbm: true_rx.iter().zip(&corr).map(|(r, c)| r + c).collect(),
    })
}

/// The advanced report with exact distances.
pub fn supreme_report(
    true_tx: &[f64],
    true_rx: &[f64],
    d_am_true: &[f64],
    d_ab_true: &[f64],
    alpha: f64,
) -> Result<FalsifiedReport> {
    advanced_report(true_tx, true_rx, d_am_true, d_ab_true, alpha)
}

/// Fading on the victim link from a known fixed transmit power:
/// `χ[i] = P_Tx − P_Rx[i] − PL(d_am[i])` with the deterministic pathloss.
pub fn recover_fading(
    known_fixed_tx: f64,
    observed_rx: &[f64],
    d_am: &[f64],
    params: &ChannelParams,
) -> Result<Vec<f64>> {
    check_lengths(observed_rx.len(), &[("d_am", d_am.len())])?;
    observed_rx
        .iter()
        .zip(d_am)
        .map(|(&rx, &d)| Ok(known_fixed_tx - rx - params.mean_pathloss(d)?))
        .collect()
}

fn fixed_tx(tx_range: (f64, f64)) -> Result<f64> {
    if tx_range.0 != tx_range.1 {
        return Err(Error::Precondition(format!(
            "fixed-power exploit needs a fixed Tx power, but Tx is randomized over [{}, {}] dBm",
            tx_range.0, tx_range.1
        )));
    }
    Ok(tx_range.0)
}

/// Supreme-style claims that additionally cancel the recovered fading, so
/// the victim's forward pathloss is the bare deterministic curve.
pub fn fixed_power_exploit(
    tx_range: (f64, f64),
    own_tx: &[f64],
    observed_rx: &[f64],
    d_am: &[f64],
    d_ab: &[f64],
    params: &ChannelParams,
) -> Result<FalsifiedReport> {
    let known = fixed_tx(tx_range)?;
    let chi = recover_fading(known, observed_rx, d_am, params)?;
    let mut report = supreme_report(own_tx, observed_rx, d_am, d_ab, params.alpha)?;
    for ((tx, rx), c) in report
        .tx_claimed_dbm
        .iter_mut()
        .zip(report.rx_claimed_dbm.iter_mut())
        .zip(&chi)
    {
        *tx -= c;
        *rx += c;
    }
    Ok(report)
}

/// `P̄ = mean(P_Rx[i] + PL(d_am[i]))`.
pub fn estimate_mean_tx(observed_rx: &[f64], d_am: &[f64], params: &ChannelParams) -> Result<f64> {
    check_lengths(observed_rx.len(), &[("d_am", d_am.len())])?;
    if observed_rx.is_empty() {
        return Err(Error::Domain("no observations to average".into()));
    }
    let mut sum = 0.0;
    for (&rx, &d) in observed_rx.iter().zip(d_am) {
        sum += rx + params.mean_pathloss(d)?;
    }
    Ok(sum / observed_rx.len() as f64)
}

/// Rx claims `P̄ − PL(d_ab[i])`; Tx claims carry the exact distance
/// correction. Returns the report and `P̄`.
pub fn averaging_attack(
    own_tx: &[f64],
    observed_rx: &[f64],
    d_am: &[f64],
    d_ab: &[f64],
    params: &ChannelParams,
) -> Result<(FalsifiedReport, f64)> {
    let p_bar = estimate_mean_tx(observed_rx, d_am, params)?;
    let mut report = supreme_report(own_tx, observed_rx, d_am, d_ab, params.alpha)?;
    for (rx, &d) in report.rx_claimed_dbm.iter_mut().zip(d_ab) {
        *rx = p_bar - params.mean_pathloss(d)?;
    }
    Ok((report, p_bar))
}

/// What M saw and did on its link with one victim.
#[derive(Debug, Clone, Copy)]
pub struct SideObservation<'a> {
    pub own_tx: &'a [f64],
    pub observed_rx: &'a [f64],
    pub d_victim_m: &'a [f64],
    pub d_ab_m: &'a [f64],
}

/// Builds the record M sends to one victim. `estimate_rng` feeds the
/// distance errors and `dither_rng` the optional dither.
pub fn falsify_side<R1: Rng + ?Sized, R2: Rng + ?Sized>(
    profile: &AttackerProfile,
    obs: SideObservation<'_>,
    params: &ChannelParams,
    tx_range: (f64, f64),
    estimate_rng: &mut R1,
    dither_rng: &mut R2,
) -> Result<FalsifiedReport> {
    let mut report = match profile.kind {
        AttackerKind::General => general_report(obs.own_tx, obs.observed_rx)?,
        AttackerKind::Advanced | AttackerKind::Supreme => {
            let am = estimate_distances(obs.d_victim_m, profile.sigma_d, estimate_rng)?;
            let ab = estimate_distances(obs.d_ab_m, profile.sigma_d, estimate_rng)?;
            advanced_report(obs.own_tx, obs.observed_rx, &am, &ab, params.alpha)?
        }
        AttackerKind::FixedPowerExploit => {
            fixed_power_exploit(tx_range, obs.own_tx, obs.observed_rx, obs.d_victim_m, obs.d_ab_m, params)?
        }
        AttackerKind::Averaging => {
            averaging_attack(obs.own_tx, obs.observed_rx, obs.d_victim_m, obs.d_ab_m, params)?.0
        }
    };
    if profile.dither_db > 0.0 {
        for v in report.tx_claimed_dbm.iter_mut().chain(report.rx_claimed_dbm.iter_mut()) {
            *v += profile.dither_db * dither_rng.sample::<f64, _>(StandardNormal);
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream_rng, Stream};

    fn noiseless() -> ChannelParams {
        ChannelParams::noiseless(2.0)
    }

    #[test]
    fn general_is_identity() {
        let r = general_report(&[1.0, 2.0], &[-3.0, -4.0]).unwrap();
        assert_eq!(r.tx_claimed_dbm, vec![1.0, 2.0]);
        assert_eq!(r.rx_claimed_dbm, vec![-3.0, -4.0]);
        assert!(general_report(&[1.0], &[]).is_err());
    }

    #[test]
    fn zero_sigma_estimates_are_exact() {
        let d = [0.1, 1.0, 2.5];
        let mut rng = stream_rng(1, Stream::AttackerEstimate);
        assert_eq!(estimate_distances(&d, 0.0, &mut rng).unwrap(), d.to_vec());
        assert!(estimate_distances(&d, -0.1, &mut rng).is_err());
    }

    #[test]
    fn log_estimate_error_statistics() {
        let n = 100_000;
        let d = vec![2.0; n];
        let mut rng = stream_rng(2, Stream::AttackerEstimate);
        let est = estimate_distances(&d, 0.1, &mut rng).unwrap();
        let logs: Vec<f64> = est.iter().map(|e| (e / 2.0).ln()).collect();
        let mean = logs.iter().sum::<f64>() / n as f64;
        let std = crate::detect::sample_std(&logs);
        assert!(mean.abs() < 3.0 * 0.1 / (n as f64).sqrt(), "{mean}");
        assert!((std - 0.1).abs() < 0.002, "{std}");
    }

    #[test]
    fn advanced_correction_value() {
        assert!((distance_correction_db(2.0, 0.1, 2.0) - 26.021).abs() < 1e-3);
        let r = advanced_report(&[10.0], &[-50.0], &[2.0], &[0.1], 2.0).unwrap();
        assert!((r.rx_claimed_dbm[0] - (-50.0 + 26.0206)).abs() < 1e-3);
        assert!((r.tx_claimed_dbm[0] - (10.0 - 26.0206)).abs() < 1e-3);
        let same = advanced_report(&[10.0], &[-50.0], &[1.5], &[1.5], 2.0).unwrap();
        assert_eq!(same.tx_claimed_dbm, vec![10.0]);
        assert_eq!(same.rx_claimed_dbm, vec![-50.0]);
        assert!(advanced_report(&[10.0], &[-50.0], &[0.0], &[1.0], 2.0).is_err());
    }

    #[test]
    fn supreme_noiseless_restores_legitimate_curve() {
        let p = noiseless();
        let d_ab = [0.1, 0.3, 0.6];
        let d_am = [2.0, 2.1, 2.2];
        let a_tx = [5.0, 17.0, 29.0];
        let m_tx = [12.0, 3.0, 21.0];
        let m_rx: Vec<f64> = a_tx.iter().zip(&d_am).map(|(t, &d)| t - p.mean_pathloss(d).unwrap()).collect();
        let r = supreme_report(&m_tx, &m_rx, &d_am, &d_ab, p.alpha).unwrap();
        for i in 0..3 {
            let a_rx = m_tx[i] - p.mean_pathloss(d_am[i]).unwrap();
            let want = p.mean_pathloss(d_ab[i]).unwrap();
            assert!((a_tx[i] - r.rx_claimed_dbm[i] - want).abs() < 1e-9);
            assert!((r.tx_claimed_dbm[i] - a_rx - want).abs() < 1e-9);
        }
    }

    #[test]
    fn fixed_power_recovers_fading_exactly() {
        let p = ChannelParams::default();
        let chi = [0.7, -2.1, 1.3];
        let d_am = [2.0, 2.05, 2.1];
        let rx: Vec<f64> = chi.iter().zip(&d_am).map(|(c, &d)| 20.0 - p.mean_pathloss(d).unwrap() - c).collect();
        let got = recover_fading(20.0, &rx, &d_am, &p).unwrap();
        for (g, c) in got.iter().zip(&chi) {
            assert!((g - c).abs() < 1e-12);
        }
        let d_ab = [0.1, 0.2, 0.3];
        let r = fixed_power_exploit((20.0, 20.0), &[10.0; 3], &rx, &d_am, &d_ab, &p).unwrap();
        for (rx, &d) in r.rx_claimed_dbm.iter().zip(&d_ab) {
            assert!((20.0 - rx - p.mean_pathloss(d).unwrap()).abs() < 1e-9);
        }
    }

    #[test]
    fn fixed_power_refuses_randomized_tx() {
        let p = ChannelParams::default();
        let e = fixed_power_exploit((0.0, 30.0), &[1.0], &[1.0], &[2.0], &[0.1], &p).unwrap_err();
        assert!(matches!(e, Error::Precondition(_)));
    }

    #[test]
    fn averaging_residual_matches_uniform_std() {
        let p = ChannelParams::default();
        let n = 10_000;
        let mut rng = stream_rng(9, Stream::TxA);
        let mut ch = stream_rng(9, Stream::AttackerChannel);
        let d_am = vec![2.1; n];
        let d_ab = vec![0.1; n];
        let a_tx: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..=30.0)).collect();
        let sigma = p.fading_sigma_at(2.1);
        let m_rx: Vec<f64> = a_tx
            .iter()
            .map(|t| t - p.mean_pathloss(2.1).unwrap() - sigma * ch.sample::<f64, _>(StandardNormal))
            .collect();
        let (r, p_bar) = averaging_attack(&vec![15.0; n], &m_rx, &d_am, &d_ab, &p).unwrap();
        assert!((p_bar - 15.0).abs() < 0.3, "{p_bar}");
        let ups: Vec<f64> = a_tx
            .iter()
            .zip(&r.rx_claimed_dbm)
            .map(|(t, rx)| t - rx - p.mean_pathloss(0.1).unwrap())
            .collect();
        let std = crate::detect::sample_std(&ups);
        assert!((std - 30.0 / 12f64.sqrt()).abs() < 0.3, "{std}");
    }

    #[test]
    fn advanced_with_zero_sigma_equals_supreme_bitwise() {
        let p = ChannelParams::default();
        let own_tx = [3.0, 14.5, 27.25];
        let rx = [-61.2, -48.9, -55.5];
        let d_v = [2.0, 2.02, 2.07];
        let d_ab = [0.11, 0.1, 0.4];
        let obs = SideObservation { own_tx: &own_tx, observed_rx: &rx, d_victim_m: &d_v, d_ab_m: &d_ab };
        let adv = AttackerProfile { measurement_noise_db: 0.0, ..AttackerProfile::advanced(2.0, 0.0) };
        let sup = AttackerProfile::supreme(2.0);
        let run = |prof: &AttackerProfile| {
            let mut e = stream_rng(5, Stream::AttackerEstimate);
            let mut d = stream_rng(5, Stream::Attacker);
            falsify_side(prof, obs, &p, (0.0, 30.0), &mut e, &mut d).unwrap()
        };
        let (a, s) = (run(&adv), run(&sup));
        let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a.tx_claimed_dbm), bits(&s.tx_claimed_dbm));
        assert_eq!(bits(&a.rx_claimed_dbm), bits(&s.rx_claimed_dbm));
    }

    #[test]
    fn profile_validation() {
        assert!(AttackerProfile::supreme(2.0).validate(2.0).is_ok());
        let bad = AttackerProfile { sigma_d: 0.1, ..AttackerProfile::supreme(2.0) };
        assert!(bad.validate(2.0).is_err());
        assert!(AttackerProfile::general(1.0).validate(2.0).is_err());
        let placed = AttackerProfile { position_m: Some([3.0, 0.0, 0.0]), ..AttackerProfile::general(0.0) };
        assert!(placed.validate(2.0).is_ok());
        assert_eq!(placed.distance_to_b(), 3.0);
    }
}
