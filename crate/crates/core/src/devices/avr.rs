//! Three-state voltage regulator: transducer lag, amplifier, exciter with
//! non-windup field-voltage limits. The OXL output is subtracted at the
//! summing junction.

use serde::{Deserialize, Serialize};

use super::{limited_lag, Clamp};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AvrParams {
    pub generator: String,
    pub ka: f64,
    pub ta: f64,
    pub tr: f64,
    pub te: f64,
    pub efd_min: f64,
    pub efd_max: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct AvrState {
    pub v_m: f64,
    pub v_r: f64,
    pub e_fd: f64,
}

/// Local variable order for the partials: `v_m, v_r, e_fd, V, v_oxl`.
pub const N_LOCAL: usize = 5;

#[derive(Debug, Clone, PartialEq)]
pub struct AvrEval {
    pub val: [f64; 3],
    pub jac: [[f64; N_LOCAL]; 3],
}

impl AvrParams {
    pub fn validate(&self) -> Vec<String> {
        let mut out = Vec::new();
        for (name, v) in [("ka", self.ka), ("ta", self.ta), ("tr", self.tr), ("te", self.te)] {
            if !(v > 0.0) {
                out.push(format!("{name} must be positive"));
            }
        }
        if !(self.efd_max > self.efd_min) {
            out.push("efd_max must exceed efd_min".into());
        }
        out
    }

    /// Amplifier output demanded by the current error signal.
    pub fn amplifier_target(&self, v_ref: f64, v_m: f64, v_oxl: f64) -> f64 {
        self.ka * (v_ref - v_m - v_oxl)
    }

    /// Reference that holds `e_fd` at rest for terminal voltage `v`.
    pub fn reference_for(&self, v: f64, e_fd: f64) -> f64 {
        v + e_fd / self.ka
    }
}

/// Regulator derivatives `(v̇_m, v̇_r, ė_fd)` and their partials.
pub fn avr_derivatives(p: &AvrParams, st: &AvrState, v_ref: f64, v_measured: f64, v_oxl: f64, efd_clamp: Clamp) -> AvrEval {
    let mut val = [0.0; 3];
    let mut jac = [[0.0; N_LOCAL]; 3];

    val[0] = (v_measured - st.v_m) / p.tr;
    jac[0][0] = -1.0 / p.tr;
    jac[0][3] = 1.0 / p.tr;

    val[1] = (p.amplifier_target(v_ref, st.v_m, v_oxl) - st.v_r) / p.ta;
    jac[1][0] = -p.ka / p.ta;
    jac[1][1] = -1.0 / p.ta;
    jac[1][4] = -p.ka / p.ta;

    let (r, ds, du) = limited_lag(st.e_fd, st.v_r, p.te, p.efd_min, p.efd_max, efd_clamp);
    val[2] = r;
    jac[2][2] = ds;
    jac[2][1] = du;

    AvrEval { val, jac }
}

/// Regulator equilibrium for a constant terminal voltage and OXL signal.
pub fn avr_equilibrium(p: &AvrParams, v_ref: f64, v: f64, v_oxl: f64) -> AvrState {
    let v_r = p.amplifier_target(v_ref, v, v_oxl);
    AvrState {
        v_m: v,
        v_r,
        e_fd: super::apply_limits(v_r, p.efd_min, p.efd_max),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params() -> AvrParams {
        AvrParams {
            generator: "G".into(),
            ka: 50.0,
            ta: 0.05,
            tr: 0.02,
            te: 0.3,
            efd_min: -5.0,
            efd_max: 5.0,
        }
    }

    #[test]
    fn nominal_regulator_is_at_rest() {
        let p = params();
        let st = AvrState::default();
        let ev = avr_derivatives(&p, &AvrState { v_m: 1.0, ..st }, 1.0, 1.0, 0.0, Clamp::Free);
        assert_eq!(ev.val, [0.0, 0.0, 0.0]);
    }

    #[test]
    fn oxl_signal_lowers_steady_field_voltage() {
        let p = params();
        let a = avr_equilibrium(&p, 1.05, 1.0, 0.0);
        let b = avr_equilibrium(&p, 1.05, 1.0, 0.01);
        let c = avr_equilibrium(&p, 1.05, 1.0, 0.02);
        assert!(b.e_fd < a.e_fd && c.e_fd < b.e_fd);
        for (st, v_oxl) in [(a, 0.0), (b, 0.01), (c, 0.02)] {
            let ev = avr_derivatives(&p, &st, 1.05, 1.0, v_oxl, Clamp::Free);
            for d in ev.val {
                assert!(d.abs() < 1e-12);
            }
        }
    }

    #[test]
    fn upper_clamp_blocks_windup() {
        let p = params();
        let st = AvrState {
            v_m: 0.9,
            v_r: 9.0,
            e_fd: p.efd_max,
        };
        let ev = avr_derivatives(&p, &st, 1.1, 0.9, 0.0, Clamp::Upper);
        assert_eq!(ev.val[2], 0.0);
    }

    #[test]
    fn partials_match_central_differences() {
        let p = params();
        let base = [1.01, 2.3, 2.1, 0.97, 0.004];
        let eval = |z: [f64; 5]| {
            avr_derivatives(
                &p,
                &AvrState {
                    v_m: z[0],
                    v_r: z[1],
                    e_fd: z[2],
                },
                1.05,
                z[3],
                z[4],
                Clamp::Free,
            )
        };
        let ev = eval(base);
        for k in 0..5 {
            let mut zp = base;
            let mut zm = base;
            zp[k] += 1e-6;
            zm[k] -= 1e-6;
            let (ep, em) = (eval(zp), eval(zm));
            for r in 0..3 {
                let fd = (ep.val[r] - em.val[r]) / 2e-6;
                assert!((fd - ev.jac[r][k]).abs() <= 1e-5 * ev.jac[r][k].abs().max(1.0));
            }
        }
    }
}
