//! Timed exogenous events: branch trips and load steps.

use serde::{Deserialize, Serialize};

use super::case::Case;
use crate::error::{InputError, Issue};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EventAction {
    BranchTrip {
        branch: String,
    },
    /// Adds `dp + j dq` (pu at nominal voltage) to a bus's static load.
    LoadStep {
        bus: u32,
        #[serde(default)]
        dp: f64,
        #[serde(default)]
        dq: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduledEvent {
    pub time: f64,
    #[serde(flatten)]
    pub action: EventAction,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EventSchedule {
    #[serde(default)]
    pub events: Vec<ScheduledEvent>,
}

impl EventSchedule {
    pub fn new(events: Vec<ScheduledEvent>) -> Self {
        Self { events }
    }

    pub fn branch_trips(time: f64, branches: &[&str]) -> Self {
        Self::new(
            branches
                .iter()
                .map(|b| ScheduledEvent {
                    time,
                    action: EventAction::BranchTrip { branch: b.to_string() },
                })
                .collect(),
        )
    }

    /// Ordering and time checks that need no case.
    pub fn validate(&self) -> Vec<Issue> {
        let mut out = Vec::new();
        let mut last = f64::NEG_INFINITY;
        for (i, ev) in self.events.iter().enumerate() {
            if !(ev.time.is_finite() && ev.time >= 0.0) {
                out.push(Issue::new(format!("events[{i}].time"), "must be finite and non-negative"));
            } else if ev.time < last {
                out.push(Issue::new(format!("events[{i}].time"), "events must be sorted by time"));
            } else {
                last = ev.time;
            }
            if let EventAction::LoadStep { dp, dq, .. } = ev.action {
                if !(dp.is_finite() && dq.is_finite()) {
                    out.push(Issue::new(format!("events[{i}]"), "load step must be finite"));
                }
            }
        }
        out
    }

    /// Reference checks against a case.
    pub fn validate_against(&self, case: &Case) -> Vec<Issue> {
        let mut out = self.validate();
        for (i, ev) in self.events.iter().enumerate() {
            match &ev.action {
                EventAction::BranchTrip { branch } => {
                    if case.branch_index(branch).is_none() {
                        out.push(Issue::new(format!("events[{i}].branch"), format!("unknown branch {branch}")));
                    }
                }
                EventAction::LoadStep { bus, .. } => {
                    if case.bus(*bus).is_none() {
                        out.push(Issue::new(format!("events[{i}].bus"), format!("unknown bus {bus}")));
                    }
                }
            }
        }
        out
    }
}

pub fn parse_schedule(text: &str) -> Result<EventSchedule, InputError> {
    let s: EventSchedule = serde_json::from_str(text).map_err(|e| InputError::Syntax(e.to_string()))?;
    let issues = s.validate();
    if issues.is_empty() {
        Ok(s)
    } else {
        Err(InputError::Invalid(issues))
    }
}

pub fn serialize_schedule(s: &EventSchedule) -> String {
    serde_json::to_string_pretty(s).expect("schedule serializes")
}
