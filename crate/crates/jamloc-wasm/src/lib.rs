//! Browser bindings for the jammer localization toolkit.
//!
//! Three operations back the interactive demo page: simulate a scenario,
//! estimate the jammer position with the selectable methods, and run a
//! small Monte Carlo sweep. All inputs and outputs are JSON strings so the
//! page needs nothing beyond `JSON.parse`; every call is a pure function of
//! the configuration, so the page stays stateless and reproducible.

use serde::{Deserialize, Serialize};
use wasm_bindgen::prelude::*;

use jamloc::baselines::{ls_report, mean_position_report, LsCalibration, MeanPositionMode};
use jamloc::detect::{build_observations, DetectionConfig};
use jamloc::eval::{run_sweep, Method, SweepSpec};
use jamloc::mle::{estimate as mle_estimate, MleConfig};
use jamloc::sim::{self, AlphaPolicy, BoundingBox, EtaPolicy, ScenarioSpec, MIXED_ALPHA_CHOICES};
use jamloc::types::{CnirValue, Position};

/// Demo-facing scenario knobs; everything else takes library defaults.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct DemoConfig {
    pub seed: u64,
    pub receiver_count: usize,
    /// Half-width of the square play area, meters.
    pub box_half_m: f64,
    /// `"fixed:<value>"` or `"mixed"` (per-receiver draw from 2 / 2.5 / 2.9338).
    pub alpha: String,
    pub sigma_db: f64,
    /// Jamming-to-noise excess at each receiver's closest approach, dB.
    pub excess_db: f64,
    pub gamma_db: f64,
    pub jam_duration_s: f64,
    pub jammer_x: f64,
    pub jammer_y: f64,
}

impl Default for DemoConfig {
    fn default() -> Self {
        DemoConfig {
            seed: 7,
            receiver_count: 8,
            box_half_m: 2000.0,
            alpha: "fixed:2".to_string(),
            sigma_db: 1.0,
            excess_db: 15.0,
            gamma_db: -3.0,
            jam_duration_s: 150.0,
            jammer_x: 1000.0,
            jammer_y: 800.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct EstimateOptions {
    pub run_mle: bool,
    pub run_mean: bool,
    pub run_ls: bool,
    /// Give the MLE the true exponent instead of the grid search.
    pub known_alpha: Option<f64>,
}

impl Default for EstimateOptions {
    fn default() -> Self {
        EstimateOptions {
            run_mle: true,
            run_mean: true,
            run_ls: true,
            known_alpha: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepOptions {
    pub subset_min: usize,
    pub trials: usize,
}

impl Default for SweepOptions {
    fn default() -> Self {
        SweepOptions {
            subset_min: 4,
            trials: 8,
        }
    }
}

fn scenario_spec(cfg: &DemoConfig) -> Result<ScenarioSpec, jamloc::Error> {
    let alpha = if cfg.alpha == "mixed" {
        AlphaPolicy::RandomChoice {
            values: MIXED_ALPHA_CHOICES.to_vec(),
        }
    } else if let Some(v) = cfg.alpha.strip_prefix("fixed:") {
        AlphaPolicy::Fixed {
            value: v
                .parse()
                .map_err(|_| jamloc::Error::invalid(format!("bad alpha `{}`", cfg.alpha)))?,
        }
    } else {
        return Err(jamloc::Error::invalid(format!(
            "bad alpha `{}`; expected `fixed:<value>` or `mixed`",
            cfg.alpha
        )));
    };
    let spec = ScenarioSpec {
        seed: cfg.seed,
        receiver_count: cfg.receiver_count,
        area: BoundingBox {
            min: Position::new(-cfg.box_half_m, -cfg.box_half_m, 0.0),
            max: Position::new(cfg.box_half_m, cfg.box_half_m, 30.0),
        },
        jam_duration_s: cfg.jam_duration_s,
        jammer_position: Position::new(cfg.jammer_x, cfg.jammer_y, 10.0),
        alpha,
        eta: EtaPolicy::CalibratedExcess {
            excess_db: cfg.excess_db,
        },
        sigma_s_db: cfg.sigma_db,
        ..ScenarioSpec::default()
    };
    spec.validate()?;
    Ok(spec)
}

fn detection(cfg: &DemoConfig) -> Result<DetectionConfig, jamloc::Error> {
    let config = DetectionConfig {
        gamma_db: cfg.gamma_db,
        ..DetectionConfig::default()
    };
    config.validate()?;
    Ok(config)
}

#[derive(Serialize)]
struct ReceiverView {
    id: u32,
    alpha: f64,
    eta: f64,
    baseline_dbhz: f64,
    track: Vec<[f64; 4]>,
    cnir_dbhz: Vec<Option<f64>>,
    detected: Vec<bool>,
}

#[derive(Serialize)]
struct ScenarioView {
    jammer: Position,
    jam_start_s: f64,
    bounds: BoundingBox,
    receivers: Vec<ReceiverView>,
}

fn simulate_impl(config_json: &str) -> Result<String, jamloc::Error> {
    let cfg: DemoConfig = if config_json.trim().is_empty() {
        DemoConfig::default()
    } else {
        serde_json::from_str(config_json)?
    };
    let spec = scenario_spec(&cfg)?;
    let simulated = sim::generate(&spec)?;
    let obs = build_observations(
        simulated.tracks.clone(),
        simulated.series.clone(),
        &detection(&cfg)?,
    )?;

    let receivers = obs
        .receivers
        .iter()
        .zip(&simulated.scenario.receivers)
        .map(|(r, params)| ReceiverView {
            id: r.receiver_id().0,
            alpha: params.alpha,
            eta: params.eta,
            baseline_dbhz: r.baseline.s_bar_dbhz,
            track: r
                .track
                .samples()
                .iter()
                .map(|s| [s.time_s, s.position.x, s.position.y, s.position.z])
                .collect(),
            cnir_dbhz: r
                .series
                .samples()
                .iter()
                .map(|s| match s.value {
                    CnirValue::Db(v) => Some(v),
                    CnirValue::Saturated => None,
                })
                .collect(),
            detected: r.mask.detected().to_vec(),
        })
        .collect();

    let view = ScenarioView {
        jammer: simulated.scenario.jammer_position,
        jam_start_s: simulated.scenario.jam_start_time_s,
        bounds: spec.area,
        receivers,
    };
    Ok(serde_json::to_string(&view)?)
}

#[derive(Serialize)]
struct EstimateView {
    truth: Position,
    reports: Vec<jamloc::mle::EstimateReport>,
    failures: Vec<MethodFailure>,
}

#[derive(Serialize)]
struct MethodFailure {
    method: String,
    message: String,
}

fn estimate_impl(config_json: &str, options_json: &str) -> Result<String, jamloc::Error> {
    let cfg: DemoConfig = if config_json.trim().is_empty() {
        DemoConfig::default()
    } else {
        serde_json::from_str(config_json)?
    };
    let opts: EstimateOptions = if options_json.trim().is_empty() {
        EstimateOptions::default()
    } else {
        serde_json::from_str(options_json)?
    };
    let spec = scenario_spec(&cfg)?;
    let simulated = sim::generate(&spec)?;
    let truth = simulated.scenario.jammer_position;
    let obs = build_observations(simulated.tracks, simulated.series, &detection(&cfg)?)?;

    let mut reports = Vec::new();
    let mut failures = Vec::new();
    if opts.run_mle {
        let mle_cfg = MleConfig {
            seed: cfg.seed,
            known_alpha: opts.known_alpha,
            ..MleConfig::default()
        };
        match mle_estimate(&obs, &mle_cfg) {
            Ok(r) => reports.push(r.with_truth(&truth)),
            Err(e) => failures.push(MethodFailure {
                method: "mle".into(),
                message: e.to_string(),
            }),
        }
    }
    if opts.run_mean {
        match mean_position_report(&obs, MeanPositionMode::PerSample) {
            Ok(r) => reports.push(r.with_truth(&truth)),
            Err(e) => failures.push(MethodFailure {
                method: "mean".into(),
                message: e.to_string(),
            }),
        }
    }
    if opts.run_ls {
        match LsCalibration::from_scenario(&simulated.scenario, 100.0)
            .and_then(|cal| ls_report(&obs, &cal))
        {
            Ok(r) => reports.push(r.with_truth(&truth)),
            Err(e) => failures.push(MethodFailure {
                method: "ls".into(),
                message: e.to_string(),
            }),
        }
    }

    Ok(serde_json::to_string(&EstimateView {
        truth,
        reports,
        failures,
    })?)
}

fn sweep_impl(config_json: &str, options_json: &str) -> Result<String, jamloc::Error> {
    let cfg: DemoConfig = if config_json.trim().is_empty() {
        DemoConfig::default()
    } else {
        serde_json::from_str(config_json)?
    };
    let opts: SweepOptions = if options_json.trim().is_empty() {
        SweepOptions::default()
    } else {
        serde_json::from_str(options_json)?
    };
    let spec = SweepSpec {
        scenario: scenario_spec(&cfg)?,
        subset_min: opts.subset_min,
        trials: opts.trials,
        methods: vec![Method::Mle, Method::MeanPosition, Method::LeastSquares],
        detection: detection(&cfg)?,
        seed: cfg.seed,
        ..SweepSpec::default()
    };
    spec.validate()?;
    let result = run_sweep(&spec)?;
    result.to_json()
}

/// Default [`DemoConfig`] as JSON, for populating the controls.
#[wasm_bindgen]
pub fn default_config() -> String {
    serde_json::to_string_pretty(&DemoConfig::default()).expect("serializable defaults")
}

/// Simulate the scenario described by `config_json` and return tracks,
/// CNIR series, detection masks and the true jammer position.
#[wasm_bindgen]
pub fn simulate(config_json: &str) -> Result<String, JsError> {
    simulate_impl(config_json).map_err(|e| JsError::new(&e.to_string()))
}

/// Run the selected estimators on the configured scenario.
#[wasm_bindgen]
pub fn estimate(config_json: &str, options_json: &str) -> Result<String, JsError> {
    estimate_impl(config_json, options_json).map_err(|e| JsError::new(&e.to_string()))
}

/// Small Monte Carlo sweep over receiver subset sizes.
#[wasm_bindgen]
pub fn sweep(config_json: &str, options_json: &str) -> Result<String, JsError> {
    sweep_impl(config_json, options_json).map_err(|e| JsError::new(&e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn simulate_produces_a_drawable_scene() {
        let view: serde_json::Value = serde_json::from_str(&simulate_impl("").unwrap()).unwrap();
        assert_eq!(view["receivers"].as_array().unwrap().len(), 8);
        assert!(view["receivers"][0]["track"].as_array().unwrap().len() > 100);
        assert!(view["jammer"]["x"].is_f64());
    }

    #[test]
    fn estimate_reports_errors_against_truth() {
        let cfg = r#"{ "seed": 3 }"#;
        let view: serde_json::Value =
            serde_json::from_str(&estimate_impl(cfg, "").unwrap()).unwrap();
        let reports = view["reports"].as_array().unwrap();
        assert!(!reports.is_empty());
        for r in reports {
            assert!(r["error_3d_m"].as_f64().unwrap() >= 0.0);
        }
    }

    #[test]
    fn sweep_returns_cells_for_every_size() {
        let opts = r#"{ "subset_min": 7, "trials": 2 }"#;
        let view: serde_json::Value = serde_json::from_str(&sweep_impl("", opts).unwrap()).unwrap();
        let cells = view["cells"].as_array().unwrap();
        assert_eq!(cells.len(), 3 * 2); // three methods x sizes {7, 8}
    }

    #[test]
    fn bad_config_is_rejected() {
        assert!(simulate_impl(r#"{ "alpha": "nonsense" }"#).is_err());
    }
}
