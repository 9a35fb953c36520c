//! Scenario harness: configuration, built-in presets, lock-step execution,
//! parameter sweeps and report files.

mod config;
mod report;
mod run;

pub use config::{
    parse_value, set_parameter, EkfConfig, Estimators, GainMatrix, InnovationKind, InputSegment, IntegratorKind,
    MeasurementNoise, MetricsConfig, ObserverConfig, PointConfig, PoseConfig, RobotConfig, ScenarioConfig,
    TransportConfig, TransportKind, VisibilityConfig,
};
pub use report::{convergence_time, emit, summarize, DepthSummary, EmittedFiles, PoseSummary, Summary};
pub use run::{run, sweep, AgentRunStats, DepthRecord, PoseRecord, RunReport, StepRecord};

use crate::error::{Error, Result};

const PRESETS: &[(&str, &str)] = &[
    ("depth-four-points", include_str!("../../presets/depth-four-points.toml")),
    ("relpose-gazebo", include_str!("../../presets/relpose-gazebo.toml")),
    ("relpose-gazebo-lossy", include_str!("../../presets/relpose-gazebo-lossy.toml")),
    ("experiment-params", include_str!("../../presets/experiment-params.toml")),
];

pub fn preset_names() -> Vec<&'static str> {
    PRESETS.iter().map(|(n, _)| *n).collect()
}

/// TOML source of a built-in preset.
pub fn preset_source(name: &str) -> Option<&'static str> {
    PRESETS.iter().find(|(n, _)| *n == name).map(|(_, s)| *s)
}

pub fn preset(name: &str) -> Result<ScenarioConfig> {
    let src = preset_source(name).ok_or_else(|| Error::config("preset", format!("unknown preset `{name}`")))?;
    ScenarioConfig::from_toml_str(src)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_parse_and_validate() {
        for name in preset_names() {
            let cfg = preset(name).unwrap();
            assert_eq!(cfg.name, name);
        }
        assert!(preset("nope").is_err());
    }

    #[test]
    fn config_toml_round_trip() {
        for name in preset_names() {
            let cfg = preset(name).unwrap();
            let text = cfg.to_toml_string().unwrap();
            assert_eq!(ScenarioConfig::from_toml_str(&text).unwrap(), cfg);
        }
    }

    #[test]
    fn unknown_keys_are_errors_with_paths() {
        let src = preset_source("relpose-gazebo").unwrap().replace("lambda = 120.0", "lambda = 120.0\nlamda = 1.0");
        match ScenarioConfig::from_toml_str(&src) {
            Err(Error::Config { path, message }) => {
                assert_eq!(path, "observer.lamda");
                assert!(message.contains("lamda"), "{message}");
            }
            other => panic!("expected config error, got {other:?}"),
        }
        let src = preset_source("relpose-gazebo").unwrap().replace("duration_s = 30.0", "duration_s = -1.0");
        match ScenarioConfig::from_toml_str(&src) {
            Err(Error::Config { path, .. }) => assert_eq!(path, "duration_s"),
            other => panic!("expected config error, got {other:?}"),
        }
    }

    #[test]
    fn set_parameter_paths() {
        let cfg = preset("depth-four-points").unwrap();
        let c = set_parameter(&cfg, "observer.lambda", parse_value("60")).unwrap();
        assert_eq!(c.observer.lambda, 60.0);
        let c = set_parameter(&cfg, "robot_a.inputs.0.v_mps", parse_value("0.2")).unwrap();
        assert_eq!(c.robot_a.inputs[0].v_mps, 0.2);
        let c = set_parameter(&cfg, "observer.h", parse_value("[[1.0, 0.0], [0.0, 2.0]]")).unwrap();
        assert_eq!(c.observer.h, GainMatrix::Matrix([[1.0, 0.0], [0.0, 2.0]]));
        assert!(set_parameter(&cfg, "observer.nope", parse_value("1")).is_err());
        assert!(set_parameter(&cfg, "nothing.lambda", parse_value("1")).is_err());
        assert!(set_parameter(&cfg, "observer.alpha", parse_value("-1")).is_err());
    }

    #[test]
    fn input_schedule_is_piecewise_constant() {
        let r = RobotConfig {
            initial_pose: PoseConfig::default(),
            inputs: vec![
                InputSegment { start_s: 0.0, v_mps: 0.1, w_radps: 0.0 },
                InputSegment { start_s: 2.0, v_mps: 0.2, w_radps: 0.1 },
            ],
        };
        assert_eq!(r.input_at(1.999).v_d, 0.1);
        assert_eq!(r.input_at(2.0).v_d, 0.2);
        assert_eq!(r.input_at(100.0).w_theta, 0.1);
    }
}
