//! Deadband load tap changer with an initial delay and a fixed tapping
//! delay. Lowering the ratio (tap on the primary side) raises the
//! controlled secondary voltage.

use serde::{Deserialize, Serialize};

use super::oxl::TIME_EPS;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LtcParams {
    pub id: String,
    /// Branch whose tap ratio this changer drives.
    pub branch: String,
    pub controlled_bus: u32,
    pub n_min: f64,
    pub n_max: f64,
    pub step: f64,
    /// Deadband half-width (pu).
    pub deadband: f64,
    pub v_ref: f64,
    /// Delay before the first action after leaving the deadband (s).
    pub t_initial: f64,
    /// Delay between subsequent actions (s).
    pub t_step: f64,
}

impl LtcParams {
    pub fn validate(&self) -> Vec<String> {
        let mut out = Vec::new();
        if !(self.step > 0.0) {
            out.push("step must be positive".into());
        }
        if !(self.n_max > self.n_min) {
            out.push("n_max must exceed n_min".into());
        }
        if !(self.deadband >= 0.0) {
            out.push("deadband must be non-negative".into());
        }
        if !(self.t_initial >= 0.0 && self.t_step > 0.0) {
            out.push("t_initial must be non-negative and t_step positive".into());
        }
        let positions = (self.n_max - self.n_min) / self.step;
        if (positions - positions.round()).abs() > 1e-6 {
            out.push("n_max - n_min must be a whole number of steps".into());
        }
        out
    }

    pub fn positions(&self) -> i64 {
        ((self.n_max - self.n_min) / self.step).round() as i64
    }

    pub fn index_of(&self, n: f64) -> i64 {
        ((n - self.n_min) / self.step).round() as i64
    }

    pub fn ratio_at(&self, index: i64) -> f64 {
        self.n_min + index as f64 * self.step
    }

    /// Snaps a ratio onto the tap grid.
    pub fn snap(&self, n: f64) -> f64 {
        self.ratio_at(self.index_of(n).clamp(0, self.positions()))
    }

    pub fn on_grid(&self, n: f64) -> bool {
        let k = (n - self.n_min) / self.step;
        (k - k.round()).abs() < 1e-9 && (-1e-9..=self.positions() as f64 + 1e-9).contains(&k)
    }
}

/// Timer bookkeeping. `since` marks when the controlled voltage left the
/// deadband in the current excursion; `last_action` the most recent
/// (attempted) tap move.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LtcClock {
    pub direction: i8,
    pub since: Option<f64>,
    pub last_action: Option<f64>,
    pub at_limit: bool,
}

impl LtcClock {
    /// True while an excursion is being timed toward a tap move that can
    /// still change the ratio.
    pub fn is_pending(&self) -> bool {
        self.since.is_some() && !self.at_limit
    }
}

/// Tap ratio plus timer.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LtcState {
    pub n: f64,
    pub clock: LtcClock,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LtcDecision {
    pub n: f64,
    pub changed: bool,
    /// Next instant at which this changer may act, if an excursion is live.
    pub next_check: Option<f64>,
}

/// Evaluates one changer at sample time `t` with controlled voltage `v`.
pub fn ltc_transition(p: &LtcParams, st: &mut LtcState, v: f64, t: f64) -> LtcDecision {
    let dir: i8 = if v < p.v_ref - p.deadband {
        -1
    } else if v > p.v_ref + p.deadband {
        1
    } else {
        0
    };
    let clock = &mut st.clock;
    if dir == 0 {
        *clock = LtcClock::default();
        return LtcDecision {
            n: st.n,
            changed: false,
            next_check: None,
        };
    }
    if dir != clock.direction {
        *clock = LtcClock {
            direction: dir,
            since: Some(t),
            last_action: None,
            at_limit: false,
        };
    }
    let due = match clock.last_action {
        None => clock.since.unwrap_or(t) + p.t_initial,
        Some(a) => a + p.t_step,
    };
    if t < due - TIME_EPS {
        return LtcDecision {
            n: st.n,
            changed: false,
            next_check: Some(due),
        };
    }
    clock.last_action = Some(t);
    let idx = p.index_of(st.n) + i64::from(dir);
    if idx < 0 || idx > p.positions() {
        clock.at_limit = true;
        return LtcDecision {
            n: st.n,
            changed: false,
            next_check: Some(t + p.t_step),
        };
    }
    clock.at_limit = false;
    st.n = p.ratio_at(idx);
    LtcDecision {
        n: st.n,
        changed: true,
        next_check: Some(t + p.t_step),
    }
}
