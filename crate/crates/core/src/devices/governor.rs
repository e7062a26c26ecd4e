//! Droop governor with servo and turbine lags. Both states are limited to
//! `[0, p_max]` without windup.

use serde::{Deserialize, Serialize};

use super::{clamp_at_start, limited_lag, Clamp};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GovernorParams {
    pub generator: String,
    /// Permanent droop R (pu speed / pu power).
    pub droop: f64,
    pub t_servo: f64,
    pub t_turbine: f64,
    pub p_max: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct GovernorState {
    /// Servo (valve) output.
    pub p_g: f64,
    /// Mechanical power.
    pub p_m: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Hash)]
pub struct GovernorModes {
    pub servo: Clamp,
    pub turbine: Clamp,
}

/// Local variable order: `p_g, p_m, ω`.
pub const N_LOCAL: usize = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct GovernorEval {
    pub val: [f64; 2],
    pub jac: [[f64; N_LOCAL]; 2],
}

impl GovernorParams {
    pub fn validate(&self) -> Vec<String> {
        let mut out = Vec::new();
        for (name, v) in [
            ("droop", self.droop),
            ("t_servo", self.t_servo),
            ("t_turbine", self.t_turbine),
            ("p_max", self.p_max),
        ] {
            if !(v > 0.0) {
                out.push(format!("{name} must be positive"));
            }
        }
        out
    }

    pub fn servo_target(&self, p_ref: f64, omega: f64) -> f64 {
        p_ref - omega / self.droop
    }
}

impl GovernorModes {
    pub fn at_start(p: &GovernorParams, st: &GovernorState, p_ref: f64, omega: f64) -> Self {
        Self {
            servo: clamp_at_start(st.p_g, p.servo_target(p_ref, omega), 0.0, p.p_max),
            turbine: clamp_at_start(st.p_m, st.p_g, 0.0, p.p_max),
        }
    }

    pub fn after(self, p: &GovernorParams, st: &GovernorState, p_ref: f64, omega: f64) -> Self {
        Self {
            servo: super::clamp_after(st.p_g, p.servo_target(p_ref, omega), 0.0, p.p_max, self.servo),
            turbine: super::clamp_after(st.p_m, st.p_g, 0.0, p.p_max, self.turbine),
        }
    }
}

pub fn governor_dynamics(p: &GovernorParams, st: &GovernorState, p_ref: f64, omega: f64, modes: GovernorModes) -> GovernorEval {
    let mut val = [0.0; 2];
    let mut jac = [[0.0; N_LOCAL]; 2];
    let (r, ds, du) = limited_lag(st.p_g, p.servo_target(p_ref, omega), p.t_servo, 0.0, p.p_max, modes.servo);
    val[0] = r;
    jac[0][0] = ds;
    jac[0][2] = -du / p.droop;
    let (r, ds, du) = limited_lag(st.p_m, st.p_g, p.t_turbine, 0.0, p.p_max, modes.turbine);
    val[1] = r;
    jac[1][1] = ds;
    jac[1][0] = du;
    GovernorEval { val, jac }
}

/// Mechanical power the governor settles to at constant speed deviation.
pub fn steady_mechanical_power(p: &GovernorParams, p_ref: f64, omega: f64) -> f64 {
    super::apply_limits(p.servo_target(p_ref, omega), 0.0, p.p_max)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params() -> GovernorParams {
        GovernorParams {
            generator: "G".into(),
            droop: 0.05,
            t_servo: 0.5,
            t_turbine: 5.0,
            p_max: 2.0,
        }
    }

    #[test]
    fn nominal_speed_is_at_rest() {
        let p = params();
        let st = GovernorState { p_g: 0.8, p_m: 0.8 };
        let ev = governor_dynamics(&p, &st, 0.8, 0.0, GovernorModes::default());
        assert_eq!(ev.val, [0.0, 0.0]);
    }

    #[test]
    fn droop_steady_state() {
        let p = params();
        let pm = steady_mechanical_power(&p, 1.0, 0.01);
        assert!((pm - 0.8).abs() < 1e-12);
        let st = GovernorState { p_g: pm, p_m: pm };
        let ev = governor_dynamics(&p, &st, 1.0, 0.01, GovernorModes::default());
        assert!(ev.val.iter().all(|d| d.abs() < 1e-12));
    }

    #[test]
    fn upper_limit_holds_mechanical_power() {
        let p = params();
        let st = GovernorState { p_g: 2.0, p_m: 2.0 };
        let modes = GovernorModes::at_start(&p, &st, 2.5, -0.01);
        assert_eq!(modes.servo, Clamp::Upper);
        assert_eq!(modes.turbine, Clamp::Upper);
        let ev = governor_dynamics(&p, &st, 2.5, -0.01, modes);
        assert_eq!(ev.val, [0.0, 0.0]);
    }
}
