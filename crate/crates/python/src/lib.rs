//! Python bindings for `proxpair`.
//!
//! Structured results cross the boundary as JSON strings; callers decode
//! them with `json.loads`.

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use proxpair::chanmodel::{deterministic_pathloss, ChannelParams};
use proxpair::detect::{analyze_valley, ValleyDetectionParams};
use proxpair::harness::{self, ScenarioConfig};
use proxpair::Error;

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Config { .. } | Error::Domain(_) | Error::Range(_) | Error::Input(_) | Error::Precondition(_) => {
            PyValueError::new_err(e.to_string())
        }
        other => PyRuntimeError::new_err(other.to_string()),
    }
}

fn scenario(config_toml: &str, overrides: &[String], seed: Option<u64>) -> Result<ScenarioConfig, Error> {
    let mut ov = overrides.to_vec();
    if let Some(s) = seed {
        ov.push(format!("seed={s}"));
    }
    ScenarioConfig::from_toml_str(config_toml, &ov)
}

/// Free-space pathloss in dB at `distance_m` with exponent `alpha`.
#[pyfunction]
#[pyo3(signature = (distance_m, alpha = 2.0))]
fn pathloss_db(distance_m: f64, alpha: f64) -> PyResult<f64> {
    deterministic_pathloss(distance_m, &ChannelParams::noiseless(alpha)).map_err(to_py)
}

/// Per-sample signals in {-1, 0, 1} from the moving z-score detector.
#[pyfunction]
#[pyo3(signature = (y, lag = 100, threshold = 4.0, influence = 0.5))]
fn detect_signals(y: Vec<f64>, lag: usize, threshold: f64, influence: f64) -> PyResult<Vec<i8>> {
    proxpair::detect::detect_signals(&y, &ValleyDetectionParams { lag, threshold, influence }).map_err(to_py)
}

/// Runs one pairing and returns the outcome with its transcript as JSON.
#[pyfunction]
#[pyo3(signature = (config_toml = "", overrides = Vec::new(), seed = None))]
fn pair(py: Python<'_>, config_toml: &str, overrides: Vec<String>, seed: Option<u64>) -> PyResult<String> {
    let cfg = scenario(config_toml, &overrides, seed).map_err(to_py)?;
    let run = py.detach(|| harness::run_scenario(&cfg)).map_err(to_py)?;
    Ok(run.outcome.to_json())
}

/// Returns `(runs_csv, summary_json)`.
#[pyfunction]
#[pyo3(signature = (config_toml = "", overrides = Vec::new(), runs = 100, seed = None))]
fn monte_carlo(
    py: Python<'_>,
    config_toml: &str,
    overrides: Vec<String>,
    runs: usize,
    seed: Option<u64>,
) -> PyResult<(String, String)> {
    let cfg = scenario(config_toml, &overrides, seed).map_err(to_py)?;
    let result = py.detach(|| harness::monte_carlo(&cfg, runs)).map_err(to_py)?;
    let mut csv = Vec::new();
    result.write_csv(&mut csv).map_err(to_py)?;
    Ok((String::from_utf8(csv).expect("csv is utf-8"), result.summary_json()))
}

/// `(threshold, fpr, tpr)` triples; thresholds default to 200 points over
/// the pooled range.
#[pyfunction]
#[pyo3(signature = (legit, attack, thresholds = None))]
fn roc_curve(legit: Vec<f64>, attack: Vec<f64>, thresholds: Option<Vec<f64>>) -> PyResult<Vec<(f64, f64, f64)>> {
    let taus = thresholds.unwrap_or_else(|| harness::pooled_thresholds(&legit, &attack, harness::ROC_POINTS));
    Ok(harness::roc_curve(&legit, &attack, &taus)
        .map_err(to_py)?
        .into_iter()
        .map(|p| (p.threshold_db, p.fpr, p.tpr))
        .collect())
}

#[pyfunction]
fn auc(legit: Vec<f64>, attack: Vec<f64>) -> PyResult<f64> {
    harness::auc(&legit, &attack).map_err(to_py)
}

/// Calibration result as JSON.
#[pyfunction]
#[pyo3(signature = (legit, attack, target_fpr = 0.1, target_tpr = 0.9))]
fn calibrate_threshold(legit: Vec<f64>, attack: Vec<f64>, target_fpr: f64, target_tpr: f64) -> PyResult<String> {
    let c = harness::calibrate_threshold(&legit, &attack, target_fpr, target_tpr).map_err(to_py)?;
    Ok(serde_json::to_string(&c).expect("calibration serializes"))
}

/// Valley report of a uniformly sampled pathloss trace, as JSON.
#[pyfunction]
#[pyo3(signature = (pathloss_db, period_s, config_toml = ""))]
fn analyze(pathloss_db: Vec<f64>, period_s: f64, config_toml: &str) -> PyResult<String> {
    let cfg = scenario(config_toml, &[], None).map_err(to_py)?;
    let params = cfg.analysis();
    let a = analyze_valley(&pathloss_db, period_s, &params).map_err(to_py)?;
    let variation = a.variation_of(&pathloss_db, params.variation_threshold_db);
    let body = serde_json::json!({
        "valley": a.report,
        "geometry_pass": a.geometry_pass,
        "variation": variation,
    });
    Ok(body.to_string())
}

#[pymodule]
fn pyproxpair(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(pathloss_db, m)?)?;
    m.add_function(wrap_pyfunction!(detect_signals, m)?)?;
    m.add_function(wrap_pyfunction!(pair, m)?)?;
    m.add_function(wrap_pyfunction!(monte_carlo, m)?)?;
    m.add_function(wrap_pyfunction!(roc_curve, m)?)?;
    m.add_function(wrap_pyfunction!(auc, m)?)?;
    m.add_function(wrap_pyfunction!(calibrate_threshold, m)?)?;
    m.add_function(wrap_pyfunction!(analyze, m)?)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seed_argument_becomes_an_override() {
        let cfg = scenario("", &[], Some(17)).unwrap();
        assert_eq!(cfg.seed, 17);
        assert!(scenario("", &["detector.lag=1".into()], None).is_err());
    }
}
