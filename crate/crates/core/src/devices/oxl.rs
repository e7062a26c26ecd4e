//! Integrator-type over-excitation limiter with a pickup delay and a
//! hysteresis reset band.
//!
//! The pickup timer starts the first time the field current exceeds the
//! limit. Once the timer reaches `t_delay` the limiter latches active and
//! its output integrates `k_oxl·(i_f − i_lim)`, never going below zero.
//! Once the field current is below `(1 − hysteresis)·i_lim` and the output
//! has wound back down to zero, the timer resets and the limiter unlatches.

use serde::{Deserialize, Serialize};

fn default_hysteresis() -> f64 {
    0.02
}

/// Slack used when comparing event times on a fixed-step grid.
pub const TIME_EPS: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OxlParams {
    pub generator: String,
    /// Field current limit (pu, e_fd scale).
    pub i_lim: f64,
    /// Pickup delay (s).
    pub t_delay: f64,
    /// Integration gain (1/s).
    pub k_oxl: f64,
    /// Reset band as a fraction of `i_lim`.
    #[serde(default = "default_hysteresis")]
    pub hysteresis: f64,
}

impl OxlParams {
    pub fn validate(&self) -> Vec<String> {
        let mut out = Vec::new();
        if !(self.i_lim > 0.0) {
            out.push("i_lim must be positive".into());
        }
        if !(self.t_delay >= 0.0) {
            out.push("t_delay must be non-negative".into());
        }
        if !(self.k_oxl > 0.0) {
            out.push("k_oxl must be positive".into());
        }
        if !(0.0..1.0).contains(&self.hysteresis) {
            out.push("hysteresis must lie in [0, 1)".into());
        }
        out
    }

    pub fn reset_level(&self) -> f64 {
        self.i_lim * (1.0 - self.hysteresis)
    }
}

/// Limiter output together with its pickup bookkeeping.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct OxlState {
    pub v_oxl: f64,
    pub clock: OxlClock,
}

/// Pickup timer. `over_since` is the instant the field current first
/// exceeded the limit in the current episode.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct OxlClock {
    pub over_since: Option<f64>,
    pub active: bool,
}

impl OxlClock {
    /// Elapsed over-limit time at `t`, bounded by the pickup delay.
    pub fn timer(&self, t: f64, p: &OxlParams) -> f64 {
        self.over_since.map_or(0.0, |s| (t - s).clamp(0.0, p.t_delay))
    }

    /// Updates the timer with the field current and limiter output observed
    /// at sample time `t`. Returns true when the limiter latches active at
    /// this sample.
    pub fn observe(&mut self, p: &OxlParams, t: f64, i_f: f64, v_oxl: f64) -> bool {
        if i_f > p.i_lim {
            let since = *self.over_since.get_or_insert(t);
            if !self.active && t - since >= p.t_delay - TIME_EPS {
                self.active = true;
                return true;
            }
        } else if i_f <= p.reset_level() && v_oxl <= super::CLAMP_BAND {
            self.over_since = None;
            self.active = false;
        }
        false
    }

    /// True while the pickup timer is counting toward activation.
    pub fn is_pending(&self) -> bool {
        self.over_since.is_some() && !self.active
    }
}

/// Integration status of the limiter output for one step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Hash)]
pub struct OxlMode {
    pub integrating: bool,
    pub at_zero: bool,
}

impl OxlMode {
    pub fn at_start(p: &OxlParams, clock: &OxlClock, v_oxl: f64, i_f: f64) -> Self {
        let integrating = clock.active || v_oxl > super::CLAMP_BAND;
        // an idle limiter holds its output at zero, which also drains
        // round-off left in it by the network solve
        let at_zero = !integrating || (v_oxl <= super::CLAMP_BAND && i_f <= p.i_lim);
        Self { integrating, at_zero }
    }

    /// The mode the step should have used given end-of-step values.
    pub fn after(self, p: &OxlParams, v_oxl: f64, i_f: f64) -> Self {
        if !self.integrating {
            return self;
        }
        let at_zero = if self.at_zero {
            i_f <= p.i_lim + super::CLAMP_BAND
        } else {
            v_oxl < -super::CLAMP_BAND
        };
        Self { at_zero, ..self }
    }
}

/// Limiter output rate and its partials `(rate, ∂/∂v_oxl, ∂/∂i_f)`.
pub fn oxl_rate(p: &OxlParams, mode: OxlMode, v_oxl: f64, i_f: f64) -> (f64, f64, f64) {
    if mode.at_zero {
        (-p.k_oxl * v_oxl, -p.k_oxl, 0.0)
    } else {
        (p.k_oxl * (i_f - p.i_lim), 0.0, p.k_oxl)
    }
}

/// Advances the limiter over a step of length `dt` at constant field
/// current: timer bookkeeping at the end of the step plus a trapezoidal
/// update of the output. Used for the standalone limiter; inside the
/// system model the output is integrated together with everything else.
pub fn oxl_dynamics(p: &OxlParams, st: &OxlState, i_f: f64, t: f64, dt: f64) -> (OxlState, f64) {
    let mode = OxlMode::at_start(p, &st.clock, st.v_oxl, i_f);
    let (rate, dv, _) = oxl_rate(p, mode, st.v_oxl, i_f);
    // linear in v_oxl, so the trapezoidal step has a closed form
    let v_new = if dv != 0.0 {
        st.v_oxl * (1.0 + 0.5 * dt * dv) / (1.0 - 0.5 * dt * dv)
    } else {
        st.v_oxl + dt * rate
    };
    let mut clock = st.clock;
    clock.observe(p, t + dt, i_f, v_new.max(0.0));
    (
        OxlState {
            v_oxl: v_new.max(0.0),
            clock,
        },
        rate,
    )
}
