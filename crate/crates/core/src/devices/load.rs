//! Exponential recovery load (Hill–Karlsson form).
//!
//! ```text
//! ẋ_p = −x_p/T_p + P0 (V^α_s − V^α_t),   P = x_p/T_p + P0 V^α_t
//! ẋ_q = −x_q/T_q + Q0 (V^β_s − V^β_t),   Q = x_q/T_q + Q0 V^β_t
//! ```

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RecoveryLoadParams {
    pub id: String,
    pub bus: u32,
    pub p0: f64,
    pub q0: f64,
    pub tp: f64,
    pub tq: f64,
    pub alpha_s: f64,
    pub alpha_t: f64,
    pub beta_s: f64,
    pub beta_t: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RecoveryLoadState {
    pub x_p: f64,
    pub x_q: f64,
}

/// Local variable order: `x_p, x_q, V`. Rows: `ẋ_p, ẋ_q, P, Q`.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadEval {
    pub val: [f64; 4],
    pub jac: [[f64; 3]; 4],
}

impl RecoveryLoadParams {
    pub fn validate(&self) -> Vec<String> {
        let mut out = Vec::new();
        if !(self.tp > 0.0) {
            out.push("tp must be positive".into());
        }
        if !(self.tq > 0.0) {
            out.push("tq must be positive".into());
        }
        out
    }

    /// Recovery state at rest for voltage `v`.
    pub fn equilibrium(&self, v: f64) -> RecoveryLoadState {
        RecoveryLoadState {
            x_p: self.tp * self.p0 * (v.powf(self.alpha_s) - v.powf(self.alpha_t)),
            x_q: self.tq * self.q0 * (v.powf(self.beta_s) - v.powf(self.beta_t)),
        }
    }

    /// Power drawn in steady state at voltage `v`.
    pub fn steady_power(&self, v: f64) -> (f64, f64) {
        (self.p0 * v.powf(self.alpha_s), self.q0 * v.powf(self.beta_s))
    }
}

fn pow_and_slope(v: f64, e: f64) -> (f64, f64) {
    let p = v.powf(e);
    (p, if e == 0.0 { 0.0 } else { e * v.powf(e - 1.0) })
}

pub fn recovery_load_dynamics(p: &RecoveryLoadParams, st: &RecoveryLoadState, v: f64) -> LoadEval {
    let (vas, das) = pow_and_slope(v, p.alpha_s);
    let (vat, dat) = pow_and_slope(v, p.alpha_t);
    let (vbs, dbs) = pow_and_slope(v, p.beta_s);
    let (vbt, dbt) = pow_and_slope(v, p.beta_t);
    let mut val = [0.0; 4];
    let mut jac = [[0.0; 3]; 4];
    val[0] = -st.x_p / p.tp + p.p0 * (vas - vat);
    jac[0][0] = -1.0 / p.tp;
    jac[0][2] = p.p0 * (das - dat);
    val[1] = -st.x_q / p.tq + p.q0 * (vbs - vbt);
    jac[1][1] = -1.0 / p.tq;
    jac[1][2] = p.q0 * (dbs - dbt);
    val[2] = st.x_p / p.tp + p.p0 * vat;
    jac[2][0] = 1.0 / p.tp;
    jac[2][2] = p.p0 * dat;
    val[3] = st.x_q / p.tq + p.q0 * vbt;
    jac[3][1] = 1.0 / p.tq;
    jac[3][2] = p.q0 * dbt;
    LoadEval { val, jac }
}
