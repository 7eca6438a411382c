//! Valley detection and the two authentication checks.
//!
//! Pipeline on a pathloss series:
//!
//! 1. [`detect_signals`]: moving mean/std peak-valley detector with lag,
//!    threshold and influence. Emits -1 where a sample falls more than
//!    `threshold` moving standard deviations below the moving mean. The
//!    pipeline feeds it a centered moving average of the series.
//! 2. [`fit_valley`]: least-squares fit of `b - a·exp(-(x-c)²/(2s²))` seeded
//!    from the strongest -1 band (Levenberg-Marquardt).
//! 3. [`valley_report`]: start/end where the fitted valley is back within
//!    `cutoff_fraction` of its depth from the baseline, plus depth, levels
//!    and width. The fit uses the raw series.
//! 4. [`check_valley_geometry`] and [`variation_check`] on the extent.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Parameters of the moving-statistics detector.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ValleyDetectionParams {
    pub lag: usize,
    pub threshold: f64,
    pub influence: f64,
}

impl Default for ValleyDetectionParams {
    fn default() -> Self {
        Self {
            lag: 100,
            threshold: 4.0,
            influence: 0.5,
        }
    }
}

impl ValleyDetectionParams {
    pub fn validate(&self) -> Result<()> {
        if self.lag < 2 {
            return Err(Error::config("detector.lag", "must be >= 2"));
        }
        if !(self.threshold > 0.0 && self.threshold.is_finite()) {
            return Err(Error::config("detector.threshold", "must be > 0"));
        }
        if !(0.0..=1.0).contains(&self.influence) {
            return Err(Error::config("detector.influence", "must be within [0, 1]"));
        }
        Ok(())
    }
}

/// Detector output with its internal moving statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct SignalTrace {
    pub signals: Vec<i8>,
    pub filtered: Vec<f64>,
    /// Moving mean; `NaN` before index `lag - 1`.
    pub avg_filter: Vec<f64>,
    /// Moving sample std (n-1 denominator); `NaN` before index `lag - 1`.
    pub std_filter: Vec<f64>,
}

fn mean_std(window: &[f64]) -> (f64, f64) {
    let n = window.len() as f64;
    let mean = window.iter().sum::<f64>() / n;
    let ss = window.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>();
    (mean, (ss / (n - 1.0)).sqrt())
}

pub fn detect_signals_traced(y: &[f64], p: &ValleyDetectionParams) -> Result<SignalTrace> {
    p.validate()?;
    let lag = p.lag;
    let n = y.len();
    if n <= lag {
        return Err(Error::config(
            "detector.lag",
            format!("series of {n} samples is not longer than lag {lag}"),
        ));
    }
    let mut signals = vec![0i8; n];
    let mut filtered = y.to_vec();
    let mut avg_filter = vec![f64::NAN; n];
    let mut std_filter = vec![f64::NAN; n];
    (avg_filter[lag - 1], std_filter[lag - 1]) = mean_std(&filtered[..lag]);

    for i in lag..n {
        let deviation = y[i] - avg_filter[i - 1];
        if deviation.abs() > p.threshold * std_filter[i - 1] {
            signals[i] = if y[i] > avg_filter[i - 1] { 1 } else { -1 };
            filtered[i] = p.influence * y[i] + (1.0 - p.influence) * filtered[i - 1];
        } else {
            filtered[i] = y[i];
        }
        (avg_filter[i], std_filter[i]) = mean_std(&filtered[i + 1 - lag..=i]);
    }

    Ok(SignalTrace {
        signals,
        filtered,
        avg_filter,
        std_filter,
    })
}

/// Per-sample signal in {-1, 0, +1}; the first `lag` entries are 0.
pub fn detect_signals(y: &[f64], p: &ValleyDetectionParams) -> Result<Vec<i8>> {
    Ok(detect_signals_traced(y, p)?.signals)
}

/// A run of negative signals, as inclusive sample indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SignalBand {
    pub start: usize,
    pub end: usize,
    pub count: usize,
}

/// Runs of -1 signals; runs separated by at most `merge_gap` other samples
/// are joined.
pub fn negative_bands(signals: &[i8], merge_gap: usize) -> Vec<SignalBand> {
    let mut bands: Vec<SignalBand> = Vec::new();
    for (i, &s) in signals.iter().enumerate() {
        if s != -1 {
            continue;
        }
        match bands.last_mut() {
            Some(b) if i - b.end <= merge_gap + 1 => {
                b.end = i;
                b.count += 1;
            }
            _ => bands.push(SignalBand {
                start: i,
                end: i,
                count: 1,
            }),
        }
    }
    bands
}

/// Inverted Gaussian on a constant baseline, in sample-index units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FittedValley {
    pub baseline_db: f64,
    pub depth_db: f64,
    pub center_idx: f64,
    pub sigma_idx: f64,
    pub iterations: usize,
}

impl FittedValley {
    pub fn eval(&self, x: f64) -> f64 {
        let z = (x - self.center_idx) / self.sigma_idx;
        self.baseline_db - self.depth_db * (-0.5 * z * z).exp()
    }

    /// Distance from the center at which the valley is back within
    /// `cutoff_fraction · depth` of the baseline.
    pub fn half_extent_idx(&self, cutoff_fraction: f64) -> f64 {
        self.sigma_idx * (2.0 * (1.0 / cutoff_fraction).ln()).sqrt()
    }

    pub fn fwhm_idx(&self) -> f64 {
        2.0 * (2.0 * std::f64::consts::LN_2).sqrt() * self.sigma_idx
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitOptions {
    pub merge_gap: usize,
    pub max_iterations: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            merge_gap: 10,
            max_iterations: 200,
        }
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len().is_multiple_of(2) {
        (v[m - 1] + v[m]) / 2.0
    } else {
        v[m]
    }
}

/// Solves the 4×4 system `a·x = b` by Gaussian elimination with partial pivoting.
#[allow(clippy::needless_range_loop)]
fn solve4(mut a: [[f64; 4]; 4], mut b: [f64; 4]) -> Option<[f64; 4]> {
    for col in 0..4 {
        let pivot = (col..4).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[pivot][col].abs() < 1e-300 {
            return None;
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..4 {
            let f = a[row][col] / a[col][col];
            for k in col..4 {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = [0.0; 4];
    for row in (0..4).rev() {
        let s: f64 = (row + 1..4).map(|k| a[row][k] * x[k]).sum();
        x[row] = (b[row] - s) / a[row][row];
    }
    x.iter().all(|v| v.is_finite()).then_some(x)
}

fn sse(y: &[f64], v: &FittedValley) -> f64 {
    y.iter()
        .enumerate()
        .map(|(i, &yi)| {
            let r = yi - v.eval(i as f64);
            r * r
        })
        .sum()
}

/// Levenberg-Marquardt fit of the valley model starting from `init`.
/// Returns `None` if it fails to converge or leaves the valid region.
pub fn fit_valley_from(y: &[f64], init: FittedValley, max_iterations: usize) -> Option<FittedValley> {
    let n = y.len();
    let mut cur = init;
    let mut cur_sse = sse(y, &cur);
    let mut mu = 1e-3;
    let mut converged = false;

    for iter in 1..=max_iterations {
        let mut jtj = [[0.0; 4]; 4];
        let mut jtr = [0.0; 4];
        for (i, &yi) in y.iter().enumerate() {
            let dx = i as f64 - cur.center_idx;
            let s2 = cur.sigma_idx * cur.sigma_idx;
            let g = (-0.5 * dx * dx / s2).exp();
            let model = cur.baseline_db - cur.depth_db * g;
            let r = yi - model;
            let j = [
                1.0,
                -g,
                -cur.depth_db * g * dx / s2,
                -cur.depth_db * g * dx * dx / (s2 * cur.sigma_idx),
            ];
            for a in 0..4 {
                jtr[a] += j[a] * r;
                for b in 0..4 {
                    jtj[a][b] += j[a] * j[b];
                }
            }
        }

        let mut improved = false;
        for _ in 0..30 {
            let mut lhs = jtj;
            for (d, row) in lhs.iter_mut().enumerate() {
                row[d] += mu * jtj[d][d].max(1e-12);
            }
            let Some(step) = solve4(lhs, jtr) else {
                mu *= 10.0;
                continue;
            };
            let cand = FittedValley {
                baseline_db: cur.baseline_db + step[0],
                depth_db: cur.depth_db + step[1],
                center_idx: cur.center_idx + step[2],
                sigma_idx: (cur.sigma_idx + step[3]).abs().max(1e-3),
                iterations: iter,
            };
            let cand_sse = sse(y, &cand);
            if cand_sse.is_finite() && cand_sse <= cur_sse {
                let rel = (cur_sse - cand_sse) / cur_sse.max(1e-300);
                cur = cand;
                cur_sse = cand_sse;
                mu = (mu / 10.0).max(1e-12);
                improved = true;
                let step_small = step[2].abs() < 1e-6 && step[3].abs() < 1e-6;
                if rel < 1e-12 || step_small {
                    converged = true;
                }
                break;
            }
            mu *= 10.0;
        }
        if !improved {
            // No downhill step at any damping: a local minimum.
            converged = true;
        }
        if converged {
            cur.iterations = iter;
            break;
        }
    }

    let valid = converged
        && cur.depth_db > 0.0
        && cur.sigma_idx > 0.0
        && cur.center_idx >= 0.0
        && cur.center_idx <= (n - 1) as f64
        && [cur.baseline_db, cur.depth_db, cur.center_idx, cur.sigma_idx]
            .iter()
            .all(|v| v.is_finite());
    valid.then_some(cur)
}

/// Fits the valley model seeded from the negative band with the most
/// signals. `None` when there is no band or the fit fails.
///
/// The band marks where the series first drops below its moving mean; the
/// bottom can lie later, so the seed center is the minimum of the lightly
/// smoothed series between the band start and the next positive signal.
/// The seed width comes from the half-depth crossings around that minimum.
pub fn fit_valley(y: &[f64], signals: &[i8], opts: &FitOptions) -> Option<FittedValley> {
    let n = y.len();
    let band = negative_bands(signals, opts.merge_gap)
        .into_iter()
        .max_by_key(|b| (b.count, std::cmp::Reverse(b.start)))?;

    let smooth: Vec<f64> = (0..n)
        .map(|i| {
            let lo = i.saturating_sub(2);
            let hi = (i + 2).min(n - 1);
            y[lo..=hi].iter().sum::<f64>() / (hi - lo + 1) as f64
        })
        .collect();
    let search_end = (band.end + 1..n).find(|&i| signals[i] == 1).unwrap_or(n - 1);
    let center = (band.start..=search_end).min_by(|&a, &b| smooth[a].total_cmp(&smooth[b]))?;

    let baseline = median(y[..band.start.max(1)].to_vec());
    let depth = baseline - smooth[center];
    if !(depth > 0.0) {
        return None;
    }
    let half = baseline - depth / 2.0;
    let left = (0..center).rev().find(|&i| smooth[i] >= half).unwrap_or(0);
    let right = (center..n).find(|&i| smooth[i] >= half).unwrap_or(n - 1);
    let init = FittedValley {
        baseline_db: baseline,
        depth_db: depth,
        center_idx: center as f64,
        sigma_idx: ((right - left) as f64 / 2.355).max(2.0),
        iterations: 0,
    };
    fit_valley_from(y, init, opts.max_iterations)
}

/// Interpolated `(start, end)` sample positions of the valley, clipped to
/// the series. `None` without a negative band or a converged fit.
pub fn locate_extent(y: &[f64], signals: &[i8], cutoff_fraction: f64) -> Option<(f64, f64)> {
    let fit = fit_valley(y, signals, &FitOptions::default())?;
    Some(extent_of(&fit, y.len(), cutoff_fraction))
}

fn extent_of(fit: &FittedValley, n: usize, cutoff_fraction: f64) -> (f64, f64) {
    let h = fit.half_extent_idx(cutoff_fraction);
    (
        (fit.center_idx - h).max(0.0),
        (fit.center_idx + h).min((n - 1) as f64),
    )
}

/// Geometry of a located valley. Levels are in dB of pathloss; times in
/// seconds from the first sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValleyReport {
    pub found: bool,
    pub start_idx: usize,
    pub end_idx: usize,
    pub valley_idx: usize,
    pub depth_db: f64,
    pub peak_level_db: f64,
    pub valley_level_db: f64,
    /// Duration between the start and end points.
    pub width_s: f64,
    /// Full width of the fitted valley at half its depth.
    pub fwhm_s: f64,
}

impl ValleyReport {
    pub fn not_found() -> Self {
        Self {
            found: false,
            start_idx: 0,
            end_idx: 0,
            valley_idx: 0,
            depth_db: 0.0,
            peak_level_db: 0.0,
            valley_level_db: 0.0,
            width_s: 0.0,
            fwhm_s: 0.0,
        }
    }
}

pub fn valley_report(fit: &FittedValley, n: usize, period_s: f64, cutoff_fraction: f64) -> ValleyReport {
    let (start_f, end_f) = extent_of(fit, n, cutoff_fraction);
    let start_idx = start_f.ceil() as usize;
    let end_idx = (end_f.floor() as usize).min(n - 1);
    let valley_idx = fit.center_idx.round() as usize;
    let found = start_idx < valley_idx && valley_idx < end_idx && fit.depth_db > 0.0;
    ValleyReport {
        found,
        start_idx,
        end_idx,
        valley_idx,
        depth_db: fit.depth_db,
        peak_level_db: fit.baseline_db,
        valley_level_db: fit.baseline_db - fit.depth_db,
        width_s: (end_f - start_f) * period_s,
        fwhm_s: fit.fwhm_idx() * period_s,
    }
}

/// Acceptance window for a legitimate swipe valley.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ValleyGates {
    pub min_depth_db: f64,
    pub max_valley_level_db: f64,
    pub min_peak_db: f64,
    pub max_peak_db: f64,
    pub min_width_s: f64,
    pub max_width_s: f64,
}

impl Default for ValleyGates {
    fn default() -> Self {
        Self {
            min_depth_db: 10.0,
            max_valley_level_db: 45.0,
            min_peak_db: 50.0,
            max_peak_db: 60.0,
            min_width_s: 0.1,
            max_width_s: 0.6,
        }
    }
}

impl ValleyGates {
    pub fn validate(&self) -> Result<()> {
        if self.min_peak_db > self.max_peak_db {
            return Err(Error::config("gates.min_peak_db", "exceeds gates.max_peak_db"));
        }
        if self.min_width_s > self.max_width_s {
            return Err(Error::config("gates.min_width_s", "exceeds gates.max_width_s"));
        }
        if self.min_depth_db < 0.0 {
            return Err(Error::config("gates.min_depth_db", "must be >= 0"));
        }
        Ok(())
    }
}

/// Names of the gates `report` violates; empty means it passes.
pub fn geometry_violations(report: &ValleyReport, gates: &ValleyGates) -> Vec<&'static str> {
    let mut v = Vec::new();
    if !report.found {
        v.push("not-found");
        return v;
    }
    if report.depth_db < gates.min_depth_db {
        v.push("depth");
    }
    if report.valley_level_db > gates.max_valley_level_db {
        v.push("valley-level");
    }
    if report.peak_level_db < gates.min_peak_db || report.peak_level_db > gates.max_peak_db {
        v.push("peak-level");
    }
    if report.width_s < gates.min_width_s || report.width_s > gates.max_width_s {
        v.push("width");
    }
    v
}

pub fn check_valley_geometry(report: &ValleyReport, gates: &ValleyGates) -> bool {
    geometry_violations(report, gates).is_empty()
}

/// Outcome of the fading-variation check on one residual series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariationReport {
    /// Sample std (n-1) of the residuals; `None` when the extent is too short.
    pub residual_std_db: Option<f64>,
    pub threshold_db: f64,
    pub samples: usize,
    pub pass: bool,
    pub reason: Option<String>,
}

pub const MIN_EXTENT_SAMPLES: usize = 30;

pub fn sample_std(v: &[f64]) -> f64 {
    mean_std(v).1
}

/// Residuals of `y` against `model` (same length), thresholded.
pub fn variation_check(y: &[f64], model: &[f64], threshold_db: f64) -> VariationReport {
    let samples = y.len().min(model.len());
    if samples < MIN_EXTENT_SAMPLES {
        return VariationReport {
            residual_std_db: None,
            threshold_db,
            samples,
            pass: false,
            reason: Some(format!("extent of {samples} samples is shorter than {MIN_EXTENT_SAMPLES}")),
        };
    }
    let residuals: Vec<f64> = y.iter().zip(model).map(|(a, m)| a - m).collect();
    let std = sample_std(&residuals);
    VariationReport {
        residual_std_db: Some(std),
        threshold_db,
        samples,
        pass: std <= threshold_db,
        reason: None,
    }
}

/// Centered moving average over `2·(window/2) + 1` samples, shrinking at
/// the edges. Windows of equal values reproduce that value exactly.
pub fn moving_average(y: &[f64], window: usize) -> Vec<f64> {
    let h = window / 2;
    let n = y.len();
    (0..n)
        .map(|i| {
            let w = &y[i.saturating_sub(h)..(i + h + 1).min(n)];
            if w.iter().all(|v| *v == w[0]) {
                w[0]
            } else {
                w.iter().sum::<f64>() / w.len() as f64
            }
        })
        .collect()
}

/// Everything a device needs to judge a reconstructed pathloss series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AnalysisParams {
    pub detector: ValleyDetectionParams,
    /// Centered moving-average length applied before detection; 1 disables it.
    pub smoothing_window: usize,
    pub cutoff_fraction: f64,
    pub fit: FitOptions,
    pub gates: ValleyGates,
    pub variation_threshold_db: f64,
    pub variation_mode: VariationMode,
}

impl Default for AnalysisParams {
    fn default() -> Self {
        Self {
            detector: ValleyDetectionParams::default(),
            smoothing_window: 25,
            cutoff_fraction: 0.01,
            fit: FitOptions::default(),
            gates: ValleyGates::default(),
            variation_threshold_db: 1.27,
            variation_mode: VariationMode::Both,
        }
    }
}

impl AnalysisParams {
    pub fn validate(&self) -> Result<()> {
        self.detector.validate()?;
        self.gates.validate()?;
        if self.smoothing_window == 0 {
            return Err(Error::config("smoothing_window", "must be >= 1"));
        }
        if !(self.cutoff_fraction > 0.0 && self.cutoff_fraction < 1.0) {
            return Err(Error::config("cutoff_fraction", "must be within (0, 1)"));
        }
        if !(self.variation_threshold_db > 0.0) {
            return Err(Error::config("variation_threshold_db", "must be > 0"));
        }
        if self.fit.max_iterations == 0 {
            return Err(Error::config("fit.max_iterations", "must be >= 1"));
        }
        Ok(())
    }
}

/// Whether forward and reverse residuals are checked separately (both must
/// pass) or pooled into one population.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum VariationMode {
    #[default]
    Both,
    Pooled,
}

/// Result of running detection and fitting on one series.
#[derive(Debug, Clone, PartialEq)]
pub struct ValleyAnalysis {
    pub signals: Vec<i8>,
    pub fit: Option<FittedValley>,
    pub report: ValleyReport,
    pub geometry_pass: bool,
}

impl ValleyAnalysis {
    /// Fitted model values over the extent `start_idx..=end_idx`.
    pub fn model_over_extent(&self) -> Option<Vec<f64>> {
        let fit = self.fit.as_ref()?;
        if !self.report.found {
            return None;
        }
        Some(
            (self.report.start_idx..=self.report.end_idx)
                .map(|i| fit.eval(i as f64))
                .collect(),
        )
    }

    /// Variation check of `series` against the fitted valley over the extent.
    pub fn variation_of(&self, series: &[f64], threshold_db: f64) -> VariationReport {
        match self.model_over_extent() {
            Some(model) => variation_check(
                &series[self.report.start_idx..=self.report.end_idx],
                &model,
                threshold_db,
            ),
            None => VariationReport {
                residual_std_db: None,
                threshold_db,
                samples: 0,
                pass: false,
                reason: Some("no valley extent".into()),
            },
        }
    }
}

/// Detects, fits and gates the valley in `y` sampled every `period_s`.
pub fn analyze_valley(y: &[f64], period_s: f64, params: &AnalysisParams) -> Result<ValleyAnalysis> {
    let signals = detect_signals(&moving_average(y, params.smoothing_window), &params.detector)?;
    let fit = fit_valley(y, &signals, &params.fit);
    let report = match &fit {
        Some(f) => valley_report(f, y.len(), period_s, params.cutoff_fraction),
        None => ValleyReport::not_found(),
    };
    let geometry_pass = check_valley_geometry(&report, &params.gates);
    Ok(ValleyAnalysis {
        signals,
        fit,
        report,
        geometry_pass,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn params(lag: usize, threshold: f64, influence: f64) -> ValleyDetectionParams {
        ValleyDetectionParams { lag, threshold, influence }
    }

    #[test]
    fn constant_series_has_no_signals() {
        let y = vec![55.3; 300];
        assert!(detect_signals(&y, &ValleyDetectionParams::default())
            .unwrap()
            .iter()
            .all(|&s| s == 0));
    }

    #[test]
    fn hand_trace() {
        // lag 2: window {10, 10}, mean 10, std 0. i=3: |10-10| = 0 is not > 0.
        // i=4: |20-10| = 10 > 1·0, positive, filtered = 0·20 + 1·10 = 10.
        let y = [10.0, 10.0, 10.0, 20.0];
        let t = detect_signals_traced(&y, &params(2, 1.0, 0.0)).unwrap();
        assert_eq!(t.signals, vec![0, 0, 0, 1]);
        assert_eq!(t.filtered[3], 10.0);
    }

    #[test]
    fn too_short_series_is_config_error() {
        let y = vec![1.0; 100];
        assert!(matches!(
            detect_signals(&y, &ValleyDetectionParams::default()),
            Err(Error::Config { .. })
        ));
    }

    #[test]
    fn invalid_params_rejected() {
        let y = vec![1.0; 10];
        assert!(detect_signals(&y, &params(1, 1.0, 0.5)).is_err());
        assert!(detect_signals(&y, &params(3, 0.0, 0.5)).is_err());
        assert!(detect_signals(&y, &params(3, 1.0, 1.5)).is_err());
    }

    #[test]
    fn bands_merge_small_gaps() {
        let s = [0, -1, -1, 0, 0, -1, 0, 0, 0, 0, 0, -1, 1];
        let b = negative_bands(&s, 2);
        assert_eq!(b.len(), 2);
        assert_eq!((b[0].start, b[0].end, b[0].count), (1, 5, 3));
        assert_eq!((b[1].start, b[1].end, b[1].count), (11, 11, 1));
    }

    fn synthetic(n: usize, base: f64, depth: f64, center: f64, width: f64) -> Vec<f64> {
        let v = FittedValley {
            baseline_db: base,
            depth_db: depth,
            center_idx: center,
            sigma_idx: width,
            iterations: 0,
        };
        (0..n).map(|i| v.eval(i as f64)).collect()
    }

    #[test]
    fn noiseless_gaussian_valley_recovered() {
        let y = synthetic(500, 55.0, 15.0, 250.0, 40.0);
        let sig = detect_signals(&y, &ValleyDetectionParams::default()).unwrap();
        assert!(sig.contains(&-1));
        let fit = fit_valley(&y, &sig, &FitOptions::default()).unwrap();
        assert!((fit.center_idx - 250.0).abs() <= 1.0, "{fit:?}");
        assert!((fit.depth_db - 15.0).abs() <= 0.1, "{fit:?}");
        assert!((fit.depth_db / 15.0 - 1.0).abs() < 0.01);
        assert!((fit.baseline_db - 55.0).abs() < 1e-3);

        let (start, end) = locate_extent(&y, &sig, 0.01).unwrap();
        for x in [start, end] {
            assert!((fit.baseline_db - fit.eval(x) - 0.01 * fit.depth_db).abs() < 1e-9);
            // The data itself at the interpolated points is within cutoff·depth.
            assert!(fit.baseline_db - fit.eval(x) <= 0.01 * fit.depth_db + 1e-9);
        }
        let h = 40.0 * (2.0 * 100f64.ln()).sqrt();
        assert!((start - (250.0 - h)).abs() < 0.1);
        assert!((end - (250.0 + h)).abs() < 0.1);
    }

    #[test]
    fn no_band_means_not_found() {
        let y = vec![50.0; 300];
        let sig = vec![0i8; 300];
        assert!(locate_extent(&y, &sig, 0.01).is_none());
        let a = analyze_valley(&y, 0.002, &AnalysisParams::default()).unwrap();
        assert!(!a.report.found);
        assert!(!a.geometry_pass);
    }

    fn report(depth: f64, valley: f64, peak: f64, width: f64) -> ValleyReport {
        ValleyReport {
            found: true,
            start_idx: 10,
            end_idx: 100,
            valley_idx: 50,
            depth_db: depth,
            peak_level_db: peak,
            valley_level_db: valley,
            width_s: width,
            fwhm_s: width / 2.5,
        }
    }

    #[test]
    fn geometry_gates() {
        let g = ValleyGates::default();
        assert!(check_valley_geometry(&report(15.0, 40.0, 55.0, 0.2), &g));
        assert_eq!(geometry_violations(&report(15.0, 65.0, 80.0, 0.2), &g), vec!["valley-level", "peak-level"]);
        assert!(!check_valley_geometry(&report(15.0, 65.0, 80.0, 0.2), &g));
        assert_eq!(geometry_violations(&report(15.0, 40.0, 55.0, 1.0), &g), vec!["width"]);
        assert!(!check_valley_geometry(&ValleyReport::not_found(), &g));
    }

    #[test]
    fn variation_examples() {
        let model = vec![40.0; 100];
        let alt: Vec<f64> = (0..100).map(|i| 40.0 + if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
        let r = variation_check(&alt, &model, 1.27);
        assert!(r.pass);
        assert!((r.residual_std_db.unwrap() - 1.005).abs() < 0.001);

        let r = variation_check(&model, &model, 1.27);
        assert_eq!(r.residual_std_db, Some(0.0));
        assert!(r.pass);

        let r = variation_check(&model[..29], &model[..29], 1.27);
        assert!(!r.pass);
        assert!(r.reason.is_some());
    }

    proptest! {
        #[test]
        fn detector_is_shift_invariant(
            ys in prop::collection::vec(-5.0f64..5.0, 40..200),
            shift in prop::sample::select(vec![-32.0f64, -1.0, 0.5, 8.0, 64.0]),
            lag in 3usize..30,
        ) {
            prop_assume!(ys.len() > lag);
            let p = params(lag, 2.0, 0.3);
            let shifted: Vec<f64> = ys.iter().map(|v| v + shift).collect();
            prop_assert_eq!(detect_signals(&ys, &p).unwrap(), detect_signals(&shifted, &p).unwrap());
        }
    }
}
