//! Two-axis synchronous machine with stator algebraic equations.

use serde::{Deserialize, Serialize};

fn zero() -> f64 {
    0.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorParams {
    pub id: String,
    pub bus: u32,
    /// Scheduled active power for the initializing power flow.
    pub p_set: f64,
    /// Terminal voltage setpoint for the initializing power flow.
    pub v_set: f64,
    /// Inertia constant (s).
    pub h: f64,
    /// Damping (pu torque / pu speed).
    #[serde(default = "zero")]
    pub d: f64,
    pub xd: f64,
    pub xq: f64,
    pub xd_prime: f64,
    pub xq_prime: f64,
    pub td0_prime: f64,
    pub tq0_prime: f64,
    #[serde(default = "zero")]
    pub ra: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct GeneratorState {
    pub delta: f64,
    pub omega: f64,
    pub eq_prime: f64,
    pub ed_prime: f64,
}

/// Exogenous inputs seen by a machine during one evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MachineInputs {
    pub v: f64,
    pub theta: f64,
    pub id: f64,
    pub iq: f64,
    pub p_m: f64,
    pub e_fd: f64,
}

/// Local variable order for [`GeneratorEval::jac`].
pub const L_DELTA: usize = 0;
pub const L_OMEGA: usize = 1;
pub const L_EQP: usize = 2;
pub const L_EDP: usize = 3;
pub const L_ID: usize = 4;
pub const L_IQ: usize = 5;
pub const L_V: usize = 6;
pub const L_THETA: usize = 7;
pub const L_PM: usize = 8;
pub const L_EFD: usize = 9;
pub const N_LOCAL: usize = 10;

/// Rows: 4 derivatives, 2 stator equations, P and Q injection, field current.
pub const R_STATOR_D: usize = 4;
pub const R_STATOR_Q: usize = 5;
pub const R_P: usize = 6;
pub const R_Q: usize = 7;
pub const R_IF: usize = 8;
pub const N_ROWS: usize = 9;

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorEval {
    pub val: [f64; N_ROWS],
    pub jac: [[f64; N_LOCAL]; N_ROWS],
}

impl GeneratorEval {
    pub fn derivatives(&self) -> [f64; 4] {
        [self.val[0], self.val[1], self.val[2], self.val[3]]
    }

    pub fn field_current(&self) -> f64 {
        self.val[R_IF]
    }
}

impl GeneratorParams {
    pub fn validate(&self) -> Vec<String> {
        let mut out = Vec::new();
        for (name, v) in [
            ("h", self.h),
            ("xd_prime", self.xd_prime),
            ("xq_prime", self.xq_prime),
            ("td0_prime", self.td0_prime),
            ("tq0_prime", self.tq0_prime),
        ] {
            if !(v > 0.0) {
                out.push(format!("{name} must be positive"));
            }
        }
        if !(self.xd > self.xd_prime) {
            out.push("xd must exceed xd_prime".into());
        }
        if !(self.xq >= self.xq_prime) {
            out.push("xq must not be below xq_prime".into());
        }
        if self.ra < 0.0 || self.d < 0.0 {
            out.push("ra and d must be non-negative".into());
        }
        out
    }

    /// Field current in the e_fd scale: equals e_fd in steady state.
    pub fn field_current(&self, eq_prime: f64, id: f64) -> f64 {
        eq_prime + (self.xd - self.xd_prime) * id
    }
}

/// Evaluates the machine: `δ̇, ω̇, ė'_q, ė'_d`, the stator residuals, the
/// power injected into the terminal bus, and the field current, together
/// with their partials in the local variable order.
pub fn generator_derivatives(p: &GeneratorParams, st: &GeneratorState, u: &MachineInputs, omega_base: f64) -> GeneratorEval {
    let (s, c) = (st.delta - u.theta).sin_cos();
    let vd = u.v * s;
    let vq = u.v * c;
    let (id, iq) = (u.id, u.iq);
    let m2 = 2.0 * p.h;
    let dx = p.xq_prime - p.xd_prime;
    let te = st.eq_prime * iq + st.ed_prime * id + dx * id * iq;

    let mut val = [0.0; N_ROWS];
    let mut jac = [[0.0; N_LOCAL]; N_ROWS];

    val[0] = omega_base * st.omega;
    jac[0][L_OMEGA] = omega_base;

    val[1] = (u.p_m - te - p.d * st.omega) / m2;
    jac[1][L_PM] = 1.0 / m2;
    jac[1][L_OMEGA] = -p.d / m2;
    jac[1][L_EQP] = -iq / m2;
    jac[1][L_EDP] = -id / m2;
    jac[1][L_ID] = -(st.ed_prime + dx * iq) / m2;
    jac[1][L_IQ] = -(st.eq_prime + dx * id) / m2;

    val[2] = (u.e_fd - st.eq_prime - (p.xd - p.xd_prime) * id) / p.td0_prime;
    jac[2][L_EFD] = 1.0 / p.td0_prime;
    jac[2][L_EQP] = -1.0 / p.td0_prime;
    jac[2][L_ID] = -(p.xd - p.xd_prime) / p.td0_prime;

    val[3] = (-st.ed_prime + (p.xq - p.xq_prime) * iq) / p.tq0_prime;
    jac[3][L_EDP] = -1.0 / p.tq0_prime;
    jac[3][L_IQ] = (p.xq - p.xq_prime) / p.tq0_prime;

    val[R_STATOR_D] = st.ed_prime - vd - p.ra * id + p.xq_prime * iq;
    jac[R_STATOR_D][L_EDP] = 1.0;
    jac[R_STATOR_D][L_ID] = -p.ra;
    jac[R_STATOR_D][L_IQ] = p.xq_prime;
    jac[R_STATOR_D][L_DELTA] = -vq;
    jac[R_STATOR_D][L_THETA] = vq;
    jac[R_STATOR_D][L_V] = -s;

    val[R_STATOR_Q] = st.eq_prime - vq - p.ra * iq - p.xd_prime * id;
    jac[R_STATOR_Q][L_EQP] = 1.0;
    jac[R_STATOR_Q][L_IQ] = -p.ra;
    jac[R_STATOR_Q][L_ID] = -p.xd_prime;
    jac[R_STATOR_Q][L_DELTA] = vd;
    jac[R_STATOR_Q][L_THETA] = -vd;
    jac[R_STATOR_Q][L_V] = -c;

    val[R_P] = vd * id + vq * iq;
    jac[R_P][L_ID] = vd;
    jac[R_P][L_IQ] = vq;
    jac[R_P][L_DELTA] = vq * id - vd * iq;
    jac[R_P][L_THETA] = -(vq * id - vd * iq);
    jac[R_P][L_V] = s * id + c * iq;

    val[R_Q] = vq * id - vd * iq;
    jac[R_Q][L_ID] = vq;
    jac[R_Q][L_IQ] = -vd;
    jac[R_Q][L_DELTA] = -vd * id - vq * iq;
    jac[R_Q][L_THETA] = vd * id + vq * iq;
    jac[R_Q][L_V] = c * id - s * iq;

    val[R_IF] = p.field_current(st.eq_prime, id);
    jac[R_IF][L_EQP] = 1.0;
    jac[R_IF][L_ID] = p.xd - p.xd_prime;

    GeneratorEval { val, jac }
}

/// Steady-state machine quantities reproducing a terminal operating point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MachineOperatingPoint {
    pub state: GeneratorState,
    pub id: f64,
    pub iq: f64,
    pub p_m: f64,
    pub e_fd: f64,
}

/// Initializes the machine from terminal voltage `v∠θ` and output `p + jq`.
pub fn initialize_machine(p: &GeneratorParams, v: f64, theta: f64, pg: f64, qg: f64) -> MachineOperatingPoint {
    // complex phasors in the network frame
    let vr = v * theta.cos();
    let vi = v * theta.sin();
    // I = conj(S / V)
    let denom = v * v;
    let ir = (pg * vr + qg * vi) / denom;
    let ii = (pg * vi - qg * vr) / denom;
    // E_Q = V + (ra + j xq) I fixes the rotor angle
    let er = vr + p.ra * ir - p.xq * ii;
    let ei = vi + p.ra * ii + p.xq * ir;
    let delta = ei.atan2(er);
    // rotate into the dq frame: d leads q by -90°
    let (sd, cd) = delta.sin_cos();
    let id = ir * sd - ii * cd;
    let iq = ir * cd + ii * sd;
    let vd = v * (delta - theta).sin();
    let vq = v * (delta - theta).cos();
    let ed_prime = vd + p.ra * id - p.xq_prime * iq;
    let eq_prime = vq + p.ra * iq + p.xd_prime * id;
    let e_fd = eq_prime + (p.xd - p.xd_prime) * id;
    let p_m = (vd + p.ra * id) * id + (vq + p.ra * iq) * iq;
    MachineOperatingPoint {
        state: GeneratorState {
            delta,
            omega: 0.0,
            eq_prime,
            ed_prime,
        },
        id,
        iq,
        p_m,
        e_fd,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn machine() -> GeneratorParams {
        GeneratorParams {
            id: "G".into(),
            bus: 1,
            p_set: 0.8,
            v_set: 1.02,
            h: 4.0,
            d: 1.0,
            xd: 1.8,
            xq: 1.7,
            xd_prime: 0.3,
            xq_prime: 0.55,
            td0_prime: 6.0,
            tq0_prime: 0.6,
            ra: 0.003,
        }
    }

    #[test]
    fn initialized_machine_is_at_rest() {
        let p = machine();
        let op = initialize_machine(&p, 1.02, 0.13, 0.8, 0.25);
        let u = MachineInputs {
            v: 1.02,
            theta: 0.13,
            id: op.id,
            iq: op.iq,
            p_m: op.p_m,
            e_fd: op.e_fd,
        };
        let ev = generator_derivatives(&p, &op.state, &u, 376.99);
        for d in ev.derivatives() {
            assert!(d.abs() <= 1e-12, "{d}");
        }
        assert!(ev.val[R_STATOR_D].abs() <= 1e-12);
        assert!(ev.val[R_STATOR_Q].abs() <= 1e-12);
        assert!((ev.val[R_P] - 0.8).abs() <= 1e-12);
        assert!((ev.val[R_Q] - 0.25).abs() <= 1e-12);
        assert!((ev.field_current() - op.e_fd).abs() <= 1e-12);
    }

    #[test]
    fn zero_speed_deviation_freezes_rotor_angle() {
        let p = machine();
        let st = GeneratorState {
            delta: 0.7,
            omega: 0.0,
            eq_prime: 1.1,
            ed_prime: 0.2,
        };
        let u = MachineInputs {
            v: 1.0,
            theta: 0.1,
            id: 0.4,
            iq: 0.6,
            p_m: 0.9,
            e_fd: 2.0,
        };
        let ev = generator_derivatives(&p, &st, &u, 376.99);
        assert_eq!(ev.val[0], 0.0);
    }

    #[test]
    fn local_jacobian_matches_central_differences() {
        let p = machine();
        let st = GeneratorState {
            delta: 0.7,
            omega: 0.003,
            eq_prime: 1.1,
            ed_prime: 0.2,
        };
        let u = MachineInputs {
            v: 0.98,
            theta: 0.1,
            id: 0.4,
            iq: 0.6,
            p_m: 0.9,
            e_fd: 2.0,
        };
        let pack = |st: &GeneratorState, u: &MachineInputs| {
            [st.delta, st.omega, st.eq_prime, st.ed_prime, u.id, u.iq, u.v, u.theta, u.p_m, u.e_fd]
        };
        let unpack = |z: [f64; N_LOCAL]| {
            (
                GeneratorState {
                    delta: z[0],
                    omega: z[1],
                    eq_prime: z[2],
                    ed_prime: z[3],
                },
                MachineInputs {
                    id: z[4],
                    iq: z[5],
                    v: z[6],
                    theta: z[7],
                    p_m: z[8],
                    e_fd: z[9],
                },
            )
        };
        let base = pack(&st, &u);
        let ev = generator_derivatives(&p, &st, &u, 376.99);
        let h = 1e-6;
        for k in 0..N_LOCAL {
            let mut zp = base;
            let mut zm = base;
            zp[k] += h;
            zm[k] -= h;
            let (sp, up) = unpack(zp);
            let (sm, um) = unpack(zm);
            let ep = generator_derivatives(&p, &sp, &up, 376.99);
            let em = generator_derivatives(&p, &sm, &um, 376.99);
            for r in 0..N_ROWS {
                let fd = (ep.val[r] - em.val[r]) / (2.0 * h);
                let an = ev.jac[r][k];
                let scale = an.abs().max(1.0);
                assert!((fd - an).abs() / scale <= 1e-5, "row {r} col {k}: fd {fd} an {an}");
            }
        }
    }
}
