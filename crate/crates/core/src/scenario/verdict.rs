//! Verdict file written next to a trace.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Outcome {
    LongTermStable,
    Oscillatory,
    Unstable,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Termination {
    Completed,
    ShortTermUnstable,
    NewtonFailure,
    Singularity,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SwitchReason {
    OxlDeviation,
    Undamped,
    QssFailure,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SwitchBackRecord {
    /// Jump index used in the rollback rule.
    pub k: u32,
    pub reason: SwitchReason,
    /// Time at which the trigger fired.
    pub t_trigger: f64,
    /// Time of the checkpoint the full model restarted from.
    pub t_resume: f64,
    /// OXL distance for deviation triggers.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub distance: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerdictReport {
    pub case: String,
    pub mode: String,
    pub outcome: Outcome,
    pub termination: Termination,
    /// Time of the last sample.
    pub t_final: f64,
    /// Number of discrete jumps seen on the reported trajectory.
    pub jumps: u32,
    pub switch_backs: Vec<SwitchBackRecord>,
    pub final_model: String,
    /// Wall-clock seconds per phase.
    pub wall_clock: BTreeMap<String, f64>,
}

impl VerdictReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("verdict serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, crate::error::InputError> {
        serde_json::from_str(text).map_err(|e| crate::error::InputError::Syntax(e.to_string()))
    }
}
