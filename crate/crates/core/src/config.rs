//! One JSON document configures one experiment: plant parameters, weights,
//! horizon, bounds, controller mode, scenario and output location.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::controller::ControllerMode;
use crate::cost::{TimeOptConfig, WeightSet};
use crate::dynamics::QuadParams;
use crate::error::{Error, Result};
use crate::mpc_linear::{HorizonConfig, InputBounds};
use crate::sim::{RunConfig, Scenario, FLIGHT_TIME_THRESHOLD};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControllerConfig {
    pub mode: ControllerMode,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        ControllerConfig {
            mode: ControllerMode::MonolithicNMPC,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    /// Output directory for run artifacts.
    pub dir: String,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig {
            dir: "out".to_string(),
        }
    }
}

/// The full experiment configuration.
#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct Config {
    pub quad: QuadParams,
    pub weights: WeightSet,
    pub time_opt: TimeOptConfig,
    pub horizon: HorizonConfig,
    pub bounds: InputBounds,
    pub controller: ControllerConfig,
    pub scenario: Scenario,
    pub output: OutputConfig,
}

impl Config {
    pub fn load(path: &Path) -> Result<Config> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            Error::InvalidConfig(format!("cannot read config {}: {e}", path.display()))
        })?;
        let value: serde_json::Value = serde_json::from_str(&text).map_err(|e| {
            Error::InvalidConfig(format!("cannot parse config {}: {e}", path.display()))
        })?;
        Self::from_value(value)
    }

    pub fn from_value(value: serde_json::Value) -> Result<Config> {
        serde_json::from_value(value)
            .map_err(|e| Error::InvalidConfig(format!("config does not match schema: {e}")))
    }

    pub fn to_value(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config serializes")
    }

    pub fn to_pretty_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Check every invariant of the loaded sections. Violations name the
    /// offending config key.
    pub fn validate(&self) -> Result<()> {
        self.quad.validate()?;
        self.weights.validate()?;
        self.time_opt.validate()?;
        self.horizon.validate()?;
        self.bounds.validate()?;
        self.scenario.validate(self.horizon.dt)?;
        Ok(())
    }

    /// The controller-side bundle used by the simulation harness.
    pub fn run_config(&self) -> RunConfig {
        RunConfig {
            mode: self.controller.mode,
            weights: self.weights.clone(),
            horizon: self.horizon,
            bounds: self.bounds,
            time_opt: TimeOptConfig {
                t_o: self.time_opt.t_o,
                enabled: self.controller.mode.uses_time_optimal_term(),
            },
            params: self.quad.clone(),
            threshold: FLIGHT_TIME_THRESHOLD,
        }
    }
}

/// Apply one `key=value` override onto a JSON config value. The key is a
/// dot-separated path; the value is parsed as JSON when possible and falls
/// back to a plain string.
pub fn apply_override(value: &mut serde_json::Value, spec: &str) -> Result<()> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| Error::InvalidConfig(format!("override '{spec}' is not KEY=VALUE")))?;
    let parsed: serde_json::Value =
        serde_json::from_str(raw).unwrap_or_else(|_| serde_json::Value::String(raw.to_string()));

    let mut cursor = value;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let last = i + 1 == parts.len();
        // Numeric segments index arrays.
        if let Ok(idx) = part.parse::<usize>() {
            let arr = cursor.as_array_mut().ok_or_else(|| {
                Error::InvalidConfig(format!("override '{key}': segment '{part}' expects array"))
            })?;
            if idx >= arr.len() {
                return Err(Error::InvalidConfig(format!(
                    "override '{key}': index {idx} out of bounds"
                )));
            }
            if last {
                arr[idx] = parsed;
                return Ok(());
            }
            cursor = &mut arr[idx];
        } else {
            let obj = cursor.as_object_mut().ok_or_else(|| {
                Error::InvalidConfig(format!("override '{key}': segment '{part}' expects object"))
            })?;
            if last {
                obj.insert(part.to_string(), parsed);
                return Ok(());
            }
            cursor = obj
                .entry(part.to_string())
                .or_insert(serde_json::Value::Object(Default::default()));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_is_valid() {
        let cfg = Config::default();
        cfg.validate().unwrap();
        assert_eq!(cfg.horizon.n, 18);
        assert_eq!(cfg.horizon.n_u, 1);
        assert_eq!(cfg.weights.alpha, 0.5);
        assert_eq!(cfg.bounds.u_max, [5.0; 4]);
        assert_eq!(cfg.bounds.du_max, [1.0; 4]);
        assert_eq!(cfg.scenario.radius, 5.0);
        assert_eq!(cfg.scenario.period, 5.0);
        assert_eq!(cfg.scenario.altitude, 0.5);
    }

    #[test]
    fn round_trip_is_fixed_point() {
        let cfg = Config::default();
        let text = cfg.to_pretty_json();
        let value: serde_json::Value = serde_json::from_str(&text).unwrap();
        let reloaded = Config::from_value(value).unwrap();
        assert_eq!(cfg.to_pretty_json(), reloaded.to_pretty_json());
    }

    #[test]
    fn override_mode_and_scalars() {
        let mut v = Config::default().to_value();
        apply_override(&mut v, "controller.mode=LQR").unwrap();
        apply_override(&mut v, "scenario.duration=3.5").unwrap();
        apply_override(&mut v, "bounds.u_max.2=4").unwrap();
        let cfg = Config::from_value(v).unwrap();
        assert_eq!(cfg.controller.mode, ControllerMode::Lqr);
        assert_eq!(cfg.scenario.duration, 3.5);
        assert_eq!(cfg.bounds.u_max[2], 4.0);
    }

    #[test]
    fn bad_overrides_are_rejected() {
        let mut v = Config::default().to_value();
        assert!(apply_override(&mut v, "no_equals_sign").is_err());
        assert!(apply_override(&mut v, "bounds.u_max.9=1").is_err());
    }

    #[test]
    fn invalid_bounds_name_the_key() {
        let mut cfg = Config::default();
        cfg.bounds.u_min = [6.0; 4];
        let err = cfg.validate().unwrap_err().to_string();
        assert!(err.contains("bounds.u_min"), "message: {err}");
    }

    #[test]
    fn dt_divisibility_checked() {
        let mut cfg = Config::default();
        cfg.horizon.dt = 0.033;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn impc_mode_enables_time_opt() {
        let mut cfg = Config::default();
        cfg.controller.mode = ControllerMode::MonolithicIMPC;
        assert!(cfg.run_config().time_opt.enabled);
        cfg.controller.mode = ControllerMode::MonolithicNMPC;
        assert!(!cfg.run_config().time_opt.enabled);
    }
}
