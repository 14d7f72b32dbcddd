use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Power {
    On,
    Off,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AirconState {
    pub power: Power,
    #[serde(default)]
    pub setpoint: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LightState {
    pub power: Power,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ElevatorState {
    pub current_floor: i64,
    #[serde(default)]
    pub last_operation: Option<String>,
}

/// A room or hall and the devices serving it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Space {
    pub ac_ids: Vec<String>,
    pub light_ids: Vec<String>,
    pub floor: i64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BuildingState {
    pub aircons: BTreeMap<String, AirconState>,
    pub lights: BTreeMap<String, LightState>,
    pub elevator: ElevatorState,
    pub spaces: BTreeMap<String, Space>,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum FixtureError {
    #[error("fixture is not valid building JSON: {0}")]
    Parse(String),
    #[error("space {space:?} references unknown {kind} {id:?}")]
    DanglingDevice {
        space: String,
        kind: &'static str,
        id: String,
    },
}

impl BuildingState {
    pub fn from_json(text: &str) -> Result<Self, FixtureError> {
        let state: BuildingState =
            serde_json::from_str(text).map_err(|e| FixtureError::Parse(e.to_string()))?;
        state.validate()?;
        Ok(state)
    }

    /// Every device id a space refers to must exist.
    pub fn validate(&self) -> Result<(), FixtureError> {
        for (name, space) in &self.spaces {
            for id in &space.ac_ids {
                if !self.aircons.contains_key(id) {
                    return Err(FixtureError::DanglingDevice {
                        space: name.clone(),
                        kind: "air conditioner",
                        id: id.clone(),
                    });
                }
            }
            for id in &space.light_ids {
                if !self.lights.contains_key(id) {
                    return Err(FixtureError::DanglingDevice {
                        space: name.clone(),
                        kind: "light",
                        id: id.clone(),
                    });
                }
            }
        }
        Ok(())
    }
}

/// Parses `<floor>f<up|down>`, e.g. `3fdown`.
pub fn parse_elevator_operation(op: &str) -> Option<i64> {
    let floor = op.strip_suffix("fup").or_else(|| op.strip_suffix("fdown"))?;
    if floor.is_empty() || !floor.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    floor.parse().ok()
}
